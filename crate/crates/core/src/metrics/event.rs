//! Prior event-level metrics: majority vote, earliest-overlap F1,
//! largest-overlap event kappa and the event error rate.

use serde::{Deserialize, Serialize};

use super::{category_events, check_pair, Confusion, Stat};
use crate::error::{Error, Result};
use crate::model::Taxonomy;

/// Each reference event takes the test category holding most of its samples
/// (test None samples do not vote). Ties go to the lower category index.
pub fn majority_vote_events(reference: &[Option<usize>], test: &[Option<usize>], tax: &Taxonomy) -> Result<Confusion> {
    check_pair(reference, test, tax)?;
    let k = tax.len();
    let mut conf = Confusion::new(k);
    for (c, s, e) in category_events(reference) {
        let mut votes = vec![0usize; k];
        for t in test[s..e].iter().flatten() {
            votes[*t] += 1;
        }
        let best = (0..k).fold(None, |acc: Option<usize>, j| match acc {
            Some(b) if votes[b] >= votes[j] => Some(b),
            _ if votes[j] > 0 => Some(j),
            _ => acc,
        });
        conf.add(Some(c), best);
    }
    Ok(conf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventF1 {
    pub class: String,
    pub hits: usize,
    pub misses: usize,
    pub false_alarms: usize,
    pub f1: Option<f64>,
    /// Signed onset offset (test − reference) in samples over hits.
    pub onset: Option<Stat>,
    pub offset: Option<Stat>,
    /// The same statistics in milliseconds.
    pub onset_ms: Option<Stat>,
    pub offset_ms: Option<Stat>,
}

fn scale(s: Option<Stat>, f: f64) -> Option<Stat> {
    s.map(|s| Stat {
        mean: s.mean * f,
        std: s.std * f,
        n: s.n,
    })
}

/// Per category, with every other category merged into one opposite class:
/// each reference event is matched to the earliest overlapping unmatched test
/// event of the same category. Timing offsets give the relative timing offset
/// (mean) and deviation (standard deviation).
pub fn event_f1_earliest(
    reference: &[Option<usize>],
    test: &[Option<usize>],
    tax: &Taxonomy,
    rate_hz: f64,
) -> Result<Vec<EventF1>> {
    check_pair(reference, test, tax)?;
    if reference.is_empty() {
        return Err(Error::invalid("empty label sequences"));
    }
    let ms = 1000.0 / rate_hz;
    let ref_events = category_events(reference);
    let test_events = category_events(test);
    Ok((0..tax.len())
        .map(|c| {
            let refs: Vec<_> = ref_events.iter().filter(|e| e.0 == c).collect();
            let tests: Vec<_> = test_events.iter().filter(|e| e.0 == c).collect();
            let mut used = vec![false; tests.len()];
            let mut on = Vec::new();
            let mut off = Vec::new();
            for &&(_, s, e) in &refs {
                if let Some(j) = (0..tests.len()).find(|&j| !used[j] && tests[j].1 < e && s < tests[j].2) {
                    used[j] = true;
                    on.push(tests[j].1 as f64 - s as f64);
                    off.push(tests[j].2 as f64 - e as f64);
                }
            }
            let hits = on.len();
            let misses = refs.len() - hits;
            let false_alarms = tests.len() - hits;
            let denom = 2 * hits + misses + false_alarms;
            let onset = Stat::of(&on);
            let offset = Stat::of(&off);
            EventF1 {
                class: tax.names[c].clone(),
                hits,
                misses,
                false_alarms,
                f1: (denom > 0).then(|| 2.0 * hits as f64 / denom as f64),
                onset,
                offset,
                onset_ms: scale(onset, ms),
                offset_ms: scale(offset, ms),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargestMatch {
    pub reference: (usize, usize, usize),
    pub test: Option<(usize, usize, usize)>,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventKappa {
    pub confusion: Confusion,
    pub kappa: Option<f64>,
    pub class_kappa: Vec<Option<f64>>,
    pub matches: Vec<LargestMatch>,
}

fn iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = a.1.max(b.1) - a.0.min(b.0);
    inter as f64 / union as f64
}

/// Each reference event is matched to the test event of any category with the
/// highest intersection-over-union (earliest on ties). Test events that match
/// nothing are counted in the NONE row.
pub fn event_kappa_largest(reference: &[Option<usize>], test: &[Option<usize>], tax: &Taxonomy) -> Result<EventKappa> {
    check_pair(reference, test, tax)?;
    let mut conf = Confusion::new(tax.len());
    let tests = category_events(test);
    let mut used = vec![false; tests.len()];
    let mut matches = Vec::new();
    for r in category_events(reference) {
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in tests.iter().enumerate() {
            let o = iou((r.1, r.2), (t.1, t.2));
            if o > 0.0 && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        match best {
            Some((j, o)) => {
                used[j] = true;
                conf.add(Some(r.0), Some(tests[j].0));
                matches.push(LargestMatch {
                    reference: r,
                    test: Some(tests[j]),
                    overlap: o,
                });
            }
            None => {
                conf.add(Some(r.0), None);
                matches.push(LargestMatch {
                    reference: r,
                    test: None,
                    overlap: 0.0,
                });
            }
        }
    }
    for (t, u) in tests.iter().zip(&used) {
        if !u {
            conf.add(None, Some(t.0));
        }
    }
    Ok(EventKappa {
        kappa: conf.kappa(),
        class_kappa: (0..tax.len()).map(|c| conf.class_kappa(c)).collect(),
        confusion: conf,
        matches,
    })
}

/// Edit distance with unit insertion, deletion and substitution costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance between the event category strings divided by the
/// number of reference events.
pub fn event_error_rate(reference: &[Option<usize>], test: &[Option<usize>]) -> Result<f64> {
    let r: Vec<usize> = category_events(reference).into_iter().map(|e| e.0).collect();
    let t: Vec<usize> = category_events(test).into_iter().map(|e| e.0).collect();
    if r.is_empty() {
        return Err(Error::invalid("reference holds no events"));
    }
    Ok(levenshtein(&r, &t) as f64 / r.len() as f64)
}
