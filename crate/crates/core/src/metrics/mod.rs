//! Agreement metrics between a reference and a test labelling.
//!
//! All metrics work on per-sample category codes (`Option<usize>` indexing a
//! [`Taxonomy`]); `None` marks samples that are not evaluated.

mod elc;
mod event;

use serde::{Deserialize, Serialize};

pub use elc::{elc_match, elc_symmetric, ElcConfig, ElcEvent, ElcReport, EventStatus, Residual, SymmetricElcReport};
pub use event::{
    event_error_rate, event_f1_earliest, event_kappa_largest, levenshtein, majority_vote_events, EventF1, EventKappa,
    LargestMatch,
};

use crate::error::{Error, Result};
use crate::model::{runs, Taxonomy};

/// Labelled events of a category sequence as `(category, start, end)`.
pub(crate) fn category_events(seq: &[Option<usize>]) -> Vec<(usize, usize, usize)> {
    runs(seq)
        .into_iter()
        .filter_map(|r| r.value.map(|c| (c, r.start, r.end)))
        .collect()
}

pub(crate) fn check_pair(reference: &[Option<usize>], test: &[Option<usize>], tax: &Taxonomy) -> Result<()> {
    if reference.len() != test.len() {
        return Err(Error::LengthMismatch {
            what: "reference vs test labels",
            left: reference.len(),
            right: test.len(),
        });
    }
    let k = tax.len();
    if let Some(c) = reference.iter().chain(test).flatten().find(|&&c| c >= k) {
        return Err(Error::invalid(format!("category {c} outside a taxonomy of {k}")));
    }
    Ok(())
}

/// Square count matrix over `k` categories plus a trailing NONE row/column
/// (index `k`) for events without a counterpart. Rows are reference, columns
/// test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Confusion {
            k,
            counts: vec![vec![0; k + 1]; k + 1],
        }
    }

    pub fn none(&self) -> usize {
        self.k
    }

    pub fn add(&mut self, reference: Option<usize>, test: Option<usize>) {
        let r = reference.unwrap_or(self.k);
        let t = test.unwrap_or(self.k);
        self.counts[r][t] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Cohen's kappa over the full matrix. `None` when the matrix is empty.
    pub fn kappa(&self) -> Option<f64> {
        cohen_kappa(&self.counts)
    }

    fn one_vs_rest(&self, c: usize) -> [[u64; 2]; 2] {
        let n = self.total();
        let tp = self.counts[c][c];
        let row: u64 = self.counts[c].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[c]).sum();
        [[tp, row - tp], [col - tp, n + tp - row - col]]
    }

    pub fn class_kappa(&self, c: usize) -> Option<f64> {
        let m = self.one_vs_rest(c);
        cohen_kappa(&[m[0].to_vec(), m[1].to_vec()])
    }

    pub fn precision(&self, c: usize) -> Option<f64> {
        let col: u64 = self.counts.iter().map(|r| r[c]).sum();
        (col > 0).then(|| self.counts[c][c] as f64 / col as f64)
    }

    pub fn recall(&self, c: usize) -> Option<f64> {
        let row: u64 = self.counts[c].iter().sum();
        (row > 0).then(|| self.counts[c][c] as f64 / row as f64)
    }

    pub fn f1(&self, c: usize) -> Option<f64> {
        let row: u64 = self.counts[c].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[c]).sum();
        (row + col > 0).then(|| 2.0 * self.counts[c][c] as f64 / (row + col) as f64)
    }

    pub fn class_scores(&self) -> Vec<ClassScores> {
        (0..self.k)
            .map(|c| ClassScores {
                kappa: self.class_kappa(c),
                precision: self.precision(c),
                recall: self.recall(c),
                f1: self.f1(c),
                support: self.counts[c].iter().sum(),
            })
            .collect()
    }
}

/// `(p_o − p_e) / (1 − p_e)` with chance agreement from the marginals.
/// Returns 1 when both agreements are perfect (a single occupied cell on the
/// diagonal) and `None` for an empty matrix.
pub fn cohen_kappa(m: &[Vec<u64>]) -> Option<f64> {
    let n: u64 = m.iter().flatten().sum();
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let diag: f64 = (0..m.len()).map(|i| m[i][i] as f64).sum();
    let pe: f64 = (0..m.len())
        .map(|i| {
            let row: u64 = m[i].iter().sum();
            let col: u64 = m.iter().map(|r| r[i]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (n * n);
    let po = diag / n;
    if (1.0 - pe).abs() < 1e-15 {
        return Some(if (po - 1.0).abs() < 1e-15 { 1.0 } else { 0.0 });
    }
    Some((po - pe) / (1.0 - pe))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub kappa: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub classes: Vec<String>,
    pub evaluated: u64,
    pub accuracy: f64,
    pub kappa: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: Confusion,
}

/// Sample-level agreement over positions labelled in both sequences.
pub fn sample_scores(reference: &[Option<usize>], test: &[Option<usize>], tax: &Taxonomy) -> Result<SampleScores> {
    check_pair(reference, test, tax)?;
    let k = tax.len();
    let mut conf = Confusion::new(k);
    for (r, t) in reference.iter().zip(test) {
        if let (Some(r), Some(t)) = (r, t) {
            conf.add(Some(*r), Some(*t));
        }
    }
    let n = conf.total();
    if n == 0 {
        return Err(Error::invalid("no sample is labelled in both sequences"));
    }
    let per_class = conf.class_scores();
    let present: Vec<f64> = per_class.iter().filter(|s| s.support > 0).filter_map(|s| s.f1).collect();
    Ok(SampleScores {
        classes: tax.names.clone(),
        evaluated: n,
        accuracy: (0..k).map(|c| conf.counts[c][c]).sum::<u64>() as f64 / n as f64,
        kappa: conf.kappa().expect("non-empty"),
        macro_f1: present.iter().sum::<f64>() / present.len().max(1) as f64,
        per_class,
        confusion: conf,
    })
}

fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    Some((m, var.sqrt()))
}

/// Mean and population standard deviation, as reported in tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(v: &[f64]) -> Option<Stat> {
        mean_std(v).map(|(mean, std)| Stat { mean, std, n: v.len() })
    }
}
