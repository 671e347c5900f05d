//! Leave-one-subject-out evaluation of both classifiers on synthetic
//! subjects.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{dedup_training_set, training_rows, Directions, FeatureConfig};
use crate::forest::{classify_rf, train_forest, ForestConfig};
use crate::metrics::{sample_scores, Confusion, SampleScores};
use crate::model::{Class3, View};
use crate::rnn::{classify_rnn, train_rnn, RnnConfig, RnnSequence};
use crate::signal::{make_velocity_trace, FilterConfig, VelocityTrace};
use crate::synth::{generate_subjects, ScenarioConfig};

/// One subject's conditioned signals and ground truth.
#[derive(Debug, Clone)]
pub struct Subject {
    pub trace: VelocityTrace,
    pub eye: Vec<Vector3<f64>>,
    pub head: Vec<Vector3<f64>>,
    pub truth: Vec<Option<Class3>>,
}

impl Subject {
    pub fn directions(&self) -> Directions<'_> {
        Directions {
            eye: &self.eye,
            head: &self.head,
        }
    }

    fn truth_codes(&self) -> Vec<Option<usize>> {
        self.truth.iter().map(|c| c.map(Class3::index)).collect()
    }
}

/// Generates `n` subjects (seeds `scenario.seed + i`) and conditions them.
pub fn prepare_subjects(scenario: &ScenarioConfig, n: usize, filter: &FilterConfig) -> Result<Vec<Subject>> {
    generate_subjects(scenario, n)?
        .into_iter()
        .map(|s| {
            Ok(Subject {
                trace: make_velocity_trace(&s.recording, filter)?,
                eye: s.recording.eye_dirs(),
                head: s.recording.head_dirs(),
                truth: s.labels.collapsed(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: usize,
    pub scores: SampleScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub folds: Vec<FoldResult>,
    /// Sample scores over all held-out predictions pooled together.
    pub pooled: SampleScores,
}

impl Evaluation {
    pub fn class_kappa(&self, c: Class3) -> Option<f64> {
        self.pooled.per_class[c.index()].kappa
    }

    /// Confusion summed over the folds that held out one of `subjects`.
    pub fn confusion_over(&self, subjects: &[usize]) -> Confusion {
        let k = self.pooled.confusion.k;
        let mut c = Confusion::new(k);
        for f in self.folds.iter().filter(|f| subjects.contains(&f.held_out)) {
            for (row, src) in c.counts.iter_mut().zip(&f.scores.confusion.counts) {
                row.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        c
    }

    /// Class with the lowest pooled kappa.
    pub fn weakest_class(&self) -> Class3 {
        Class3::ALL
            .into_iter()
            .min_by(|a, b| {
                let ka = self.class_kappa(*a).unwrap_or(f64::NEG_INFINITY);
                let kb = self.class_kappa(*b).unwrap_or(f64::NEG_INFINITY);
                ka.total_cmp(&kb)
            })
            .expect("three classes")
    }
}

fn check_folds(subjects: &[Subject], folds: &[usize]) -> Result<()> {
    if subjects.len() < 2 {
        return Err(Error::invalid("leave-one-out needs at least two subjects"));
    }
    if let Some(f) = folds.iter().find(|&&f| f >= subjects.len()) {
        return Err(Error::invalid(format!("fold {f} outside {} subjects", subjects.len())));
    }
    Ok(())
}

fn evaluate<F>(subjects: &[Subject], folds: &[usize], mut predict: F) -> Result<Evaluation>
where
    F: FnMut(usize) -> Result<Vec<Option<usize>>>,
{
    check_folds(subjects, folds)?;
    let tax = View::Collapsed.taxonomy();
    let mut all_ref = Vec::new();
    let mut all_test = Vec::new();
    let mut out = Vec::new();
    for &k in folds {
        let pred = predict(k)?;
        let truth = subjects[k].truth_codes();
        out.push(FoldResult {
            held_out: k,
            scores: sample_scores(&truth, &pred, &tax)?,
        });
        all_ref.extend(truth);
        all_test.extend(pred);
    }
    Ok(Evaluation {
        pooled: sample_scores(&all_ref, &all_test, &tax)?,
        folds: out,
    })
}

/// Random forest trained on every subject but the held-out one, per fold.
pub fn leave_one_out_forest(
    subjects: &[Subject],
    features: &FeatureConfig,
    forest: &ForestConfig,
    folds: &[usize],
) -> Result<Evaluation> {
    evaluate(subjects, folds, |k| {
        let mut rows = Vec::new();
        for (_, s) in subjects.iter().enumerate().filter(|(i, _)| *i != k) {
            rows.extend(training_rows(&s.trace, &s.directions(), &s.truth, features)?);
        }
        let model = train_forest(&dedup_training_set(rows), features, forest)?;
        let s = &subjects[k];
        Ok(classify_rf(&model, &s.trace, &s.directions())?.categories(View::Collapsed))
    })
}

/// Recurrent network trained on every subject but the held-out one, per fold.
pub fn leave_one_out_rnn(subjects: &[Subject], cfg: &RnnConfig, folds: &[usize]) -> Result<Evaluation> {
    evaluate(subjects, folds, |k| {
        let corpus = subjects
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, s)| RnnSequence::from_trace(&s.trace, &s.truth))
            .collect::<Result<Vec<_>>>()?;
        let (model, _) = train_rnn(&corpus, cfg)?;
        Ok(classify_rnn(&model, &subjects[k].trace)?.categories(View::Collapsed))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_confusions_sum_to_the_pooled_one() {
        let scenario = ScenarioConfig {
            duration_s: 8.0,
            seed: 40,
            ..ScenarioConfig::default()
        };
        let subjects = prepare_subjects(&scenario, 3, &FilterConfig::default()).unwrap();
        let forest = ForestConfig {
            n_trees: 3,
            ..ForestConfig::default()
        };
        let e = leave_one_out_forest(&subjects, &FeatureConfig::default(), &forest, &[0, 1, 2]).unwrap();
        assert_eq!(e.confusion_over(&[0, 1, 2]), e.pooled.confusion);
        let one = e.confusion_over(&[1]);
        assert_eq!(one, e.folds[1].scores.confusion);
        assert!(e.pooled.kappa > 0.5);
        assert!(leave_one_out_forest(&subjects[..1], &FeatureConfig::default(), &forest, &[0]).is_err());
        assert!(leave_one_out_forest(&subjects, &FeatureConfig::default(), &forest, &[3]).is_err());
    }
}
