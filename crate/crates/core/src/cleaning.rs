//! Post-processing of label sequences: fixation merging and removal of
//! implausibly short or long events.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{runs, GazeClass, LabelSequence, NoneKind, Run};
use crate::signal::angular_between;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub merge_fix_max_gap_s: f64,
    pub merge_fix_max_sep_deg: f64,
    pub min_fix_s: f64,
    pub max_sacc_s: f64,
    pub min_event_s: f64,
    /// Give deleted events to the longer labelled neighbour instead of None.
    pub absorb_deleted: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            merge_fix_max_gap_s: 0.075,
            merge_fix_max_sep_deg: 0.5,
            min_fix_s: 0.050,
            max_sacc_s: 0.150,
            min_event_s: 0.010,
            absorb_deleted: false,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.merge_fix_max_gap_s,
            self.merge_fix_max_sep_deg,
            self.min_fix_s,
            self.max_sacc_s,
            self.min_event_s,
        ];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("cleaning thresholds must be positive"));
        }
        Ok(())
    }
}

/// Duration comparisons are done in samples with a small slack so that, for
/// example, exactly 15 samples at 300 Hz count as 50 ms.
fn samples(s: f64, rate: f64) -> f64 {
    s * rate
}

const SLACK: f64 = 1e-9;

struct Cleaner<'a> {
    labels: Vec<GazeClass>,
    kinds: Vec<NoneKind>,
    gaze: &'a [Vector3<f64>],
    rate: f64,
    cfg: &'a CleaningConfig,
}

impl Cleaner<'_> {
    fn mean_dir(&self, a: usize, b: usize) -> Vector3<f64> {
        self.gaze[a..b].iter().fold(Vector3::zeros(), |acc, v| acc + v)
    }

    fn set(&mut self, a: usize, b: usize, class: GazeClass) {
        for i in a..b {
            self.labels[i] = class;
            self.kinds[i] = NoneKind::Uncoded;
        }
    }

    /// Fixation events are maximal runs of one fixation sub-type.
    fn merge_pass(&mut self) -> bool {
        let mut changed = false;
        let max_gap = samples(self.cfg.merge_fix_max_gap_s, self.rate) + SLACK;
        let mut i = 0;
        loop {
            let events: Vec<Run<GazeClass>> = runs(&self.labels);
            let fix: Vec<&Run<GazeClass>> = events.iter().filter(|r| r.value.is_fixation()).collect();
            let Some(k) = fix.iter().position(|r| r.start >= i) else { break };
            if k + 1 >= fix.len() {
                break;
            }
            let (a, b) = (fix[k], fix[k + 1]);
            let gap = b.start - a.end;
            let mergeable = gap >= 1 && (gap as f64) <= max_gap && {
                let sep = angular_between(&self.mean_dir(a.start, a.end), &self.mean_dir(b.start, b.end));
                matches!(sep, Ok(s) if s < self.cfg.merge_fix_max_sep_deg)
            };
            if mergeable {
                let class = if b.end - b.start > a.end - a.start { b.value } else { a.value };
                let (start, end) = (a.start, b.end);
                self.set(start, end, class);
                changed = true;
                i = start;
            } else {
                i = b.start;
            }
        }
        changed
    }

    fn delete_where(&mut self, doomed: impl Fn(&Run<GazeClass>) -> bool) -> bool {
        let events = runs(&self.labels);
        let mut changed = false;
        for (k, e) in events.iter().enumerate() {
            if e.value == GazeClass::None || !doomed(e) {
                continue;
            }
            let replacement = if self.cfg.absorb_deleted {
                let prev = k.checked_sub(1).map(|j| &events[j]).filter(|r| r.value.is_labelled());
                let next = events.get(k + 1).filter(|r| r.value.is_labelled());
                match (prev, next) {
                    (Some(p), Some(n)) => {
                        if n.end - n.start > p.end - p.start {
                            n.value
                        } else {
                            p.value
                        }
                    }
                    (Some(p), None) => p.value,
                    (None, Some(n)) => n.value,
                    (None, None) => GazeClass::None,
                }
            } else {
                GazeClass::None
            };
            self.set(e.start, e.end, replacement);
            changed = true;
            // later runs were computed before this edit; re-derive them
            if self.cfg.absorb_deleted {
                return true;
            }
        }
        changed
    }

    fn pass(&mut self) -> bool {
        let rate = self.rate;
        let min_fix = samples(self.cfg.min_fix_s, rate) - SLACK;
        let max_sacc = samples(self.cfg.max_sacc_s, rate) + SLACK;
        let min_event = samples(self.cfg.min_event_s, rate) - SLACK;
        let len = |r: &Run<GazeClass>| (r.end - r.start) as f64;
        let mut changed = self.merge_pass();
        changed |= self.delete_where(|r| r.value.is_fixation() && len(r) < min_fix);
        changed |= self.delete_where(|r| r.value == GazeClass::Saccade && len(r) > max_sacc);
        changed |= self.delete_where(|r| len(r) < min_event);
        changed
    }
}

/// Apply merging then the three deletion rules, repeating until nothing
/// changes. Every change removes at least one labelled event, so the loop
/// terminates, and its result is a fixed point: cleaning twice equals
/// cleaning once.
pub fn clean_labels(
    seq: &LabelSequence,
    gaze_dirs: &[Vector3<f64>],
    rate_hz: f64,
    cfg: &CleaningConfig,
) -> Result<LabelSequence> {
    cfg.validate()?;
    if gaze_dirs.len() != seq.len() {
        return Err(Error::LengthMismatch {
            what: "labels vs gaze directions",
            left: seq.len(),
            right: gaze_dirs.len(),
        });
    }
    if !(rate_hz > 0.0) {
        return Err(Error::invalid("sampling rate must be positive"));
    }
    let kinds = (0..seq.len()).map(|i| seq.none_kind_at(i).unwrap_or_default()).collect();
    let mut c = Cleaner {
        labels: seq.labels.clone(),
        kinds,
        gaze: gaze_dirs,
        rate: rate_hz,
        cfg,
    };
    while c.pass() {}
    let keep_kinds = seq.none_kind.is_some();
    let Cleaner { labels, kinds, .. } = c;
    if keep_kinds {
        LabelSequence::with_none_kind(labels, kinds)
    } else {
        Ok(LabelSequence::new(labels))
    }
}
