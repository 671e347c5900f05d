//! Shared domain types: samples, recordings, the label taxonomy and the
//! run-length event view of a label sequence.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-9;

/// Confidence below which a sample is treated as unlabelled at ingestion.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.3;

/// One time-stamped measurement of eye and head orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub t: f64,
    /// Eye-in-head gaze direction, unit length, head frame.
    pub eye_dir: Vector3<f64>,
    /// Head orientation: maps head-frame vectors into the world frame.
    pub head_rot: UnitQuaternion<f64>,
    pub confidence: f64,
}

impl GazeSample {
    pub fn new(
        t: f64,
        eye_dir: Vector3<f64>,
        head_rot: UnitQuaternion<f64>,
        confidence: f64,
    ) -> Result<Self> {
        let s = GazeSample {
            t,
            eye_dir,
            head_rot,
            confidence,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::invalid("non-finite timestamp"));
        }
        if (self.eye_dir.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!(
                "eye direction not unit length (|v| = {})",
                self.eye_dir.norm()
            )));
        }
        if (self.head_rot.as_ref().norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid("head rotation quaternion not normalized"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    /// Forward direction of the head expressed in world coordinates.
    pub fn head_dir(&self) -> Vector3<f64> {
        self.head_rot * Vector3::z()
    }
}

/// An ordered stream of gaze samples at a nominal sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    samples: Vec<GazeSample>,
    rate_hz: f64,
}

impl Recording {
    pub fn new(samples: Vec<GazeSample>, rate_hz: f64) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::invalid(format!("sampling rate must be > 0, got {rate_hz}")));
        }
        for (i, s) in samples.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::invalid(format!("sample {i}: {e}")))?;
        }
        if let Some(i) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(Error::invalid(format!(
                "timestamps not strictly increasing at sample {}",
                i + 1
            )));
        }
        Ok(Recording { samples, rate_hz })
    }

    pub fn samples(&self) -> &[GazeSample] {
        &self.samples
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn eye_dirs(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|s| s.eye_dir).collect()
    }

    pub fn head_dirs(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(GazeSample::head_dir).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.confidence).collect()
    }

    /// Mask of samples whose confidence is at least `min_confidence`.
    pub fn confident_mask(&self, min_confidence: f64) -> Vec<bool> {
        self.samples
            .iter()
            .map(|s| s.confidence >= min_confidence)
            .collect()
    }

    /// Contiguous sub-recording `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Recording> {
        if start >= end || end > self.len() {
            return Err(Error::invalid(format!(
                "invalid slice [{start}, {end}) of {} samples",
                self.len()
            )));
        }
        Ok(Recording {
            samples: self.samples[start..end].to_vec(),
            rate_hz: self.rate_hz,
        })
    }
}

/// Label taxonomy as coded by the annotators. `None` covers blinks,
/// unlabelled stretches and low-confidence samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeClass {
    FixationStationary,
    FixationTranslation,
    Pursuit,
    Saccade,
    None,
}

impl GazeClass {
    pub const ALL: [GazeClass; 5] = [
        GazeClass::FixationStationary,
        GazeClass::FixationTranslation,
        GazeClass::Pursuit,
        GazeClass::Saccade,
        GazeClass::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GazeClass::FixationStationary => "fixation_stationary",
            GazeClass::FixationTranslation => "fixation_translation",
            GazeClass::Pursuit => "pursuit",
            GazeClass::Saccade => "saccade",
            GazeClass::None => "none",
        }
    }

    pub fn from_name(name: &str) -> Option<GazeClass> {
        GazeClass::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn is_fixation(self) -> bool {
        matches!(
            self,
            GazeClass::FixationStationary | GazeClass::FixationTranslation
        )
    }

    pub fn is_labelled(self) -> bool {
        self != GazeClass::None
    }

    /// Collapse both fixation sub-types into a single gaze fixation class.
    pub fn collapse(self) -> Option<Class3> {
        match self {
            GazeClass::FixationStationary | GazeClass::FixationTranslation => {
                Some(Class3::Fixation)
            }
            GazeClass::Pursuit => Some(Class3::Pursuit),
            GazeClass::Saccade => Some(Class3::Saccade),
            GazeClass::None => None,
        }
    }
}

/// The three classes the classifiers predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class3 {
    Fixation,
    Pursuit,
    Saccade,
}

impl Class3 {
    pub const ALL: [Class3; 3] = [Class3::Fixation, Class3::Pursuit, Class3::Saccade];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class3> {
        Class3::ALL.get(i).copied()
    }

    pub fn to_gaze(self) -> GazeClass {
        match self {
            Class3::Fixation => GazeClass::FixationStationary,
            Class3::Pursuit => GazeClass::Pursuit,
            Class3::Saccade => GazeClass::Saccade,
        }
    }
}

/// Why a sample carries no label. Kept as metadata next to `GazeClass::None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoneKind {
    #[default]
    Uncoded,
    Blink,
    LowConfidence,
}

impl NoneKind {
    pub fn name(self) -> &'static str {
        match self {
            NoneKind::Uncoded => "uncoded",
            NoneKind::Blink => "blink",
            NoneKind::LowConfidence => "low_confidence",
        }
    }

    pub fn from_name(name: &str) -> Option<NoneKind> {
        [NoneKind::Uncoded, NoneKind::Blink, NoneKind::LowConfidence]
            .into_iter()
            .find(|k| k.name() == name)
    }
}

/// Per-sample labels of one recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub labels: Vec<GazeClass>,
    /// Provenance of unlabelled samples; meaningful only where the label is `None`.
    pub none_kind: Option<Vec<NoneKind>>,
}

impl LabelSequence {
    pub fn new(labels: Vec<GazeClass>) -> Self {
        LabelSequence {
            labels,
            none_kind: None,
        }
    }

    pub fn with_none_kind(labels: Vec<GazeClass>, kinds: Vec<NoneKind>) -> Result<Self> {
        if kinds.len() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "labels vs none-kind metadata",
                left: labels.len(),
                right: kinds.len(),
            });
        }
        Ok(LabelSequence {
            labels,
            none_kind: Some(kinds),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn none_kind_at(&self, i: usize) -> Option<NoneKind> {
        if self.labels[i] != GazeClass::None {
            return None;
        }
        Some(
            self.none_kind
                .as_ref()
                .map(|k| k[i])
                .unwrap_or_default(),
        )
    }

    /// Replace classes with `None` wherever `keep` is false, tagging them.
    pub fn mask(&mut self, keep: &[bool], kind: NoneKind) -> Result<()> {
        if keep.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "labels vs mask",
                left: self.len(),
                right: keep.len(),
            });
        }
        let n = self.len();
        let kinds = self.none_kind.get_or_insert_with(|| vec![NoneKind::Uncoded; n]);
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                self.labels[i] = GazeClass::None;
                kinds[i] = kind;
            }
        }
        Ok(())
    }

    /// Mask samples whose confidence falls below `min_confidence`.
    pub fn mask_low_confidence(&mut self, confidence: &[f64], min_confidence: f64) -> Result<()> {
        let keep: Vec<bool> = confidence.iter().map(|&c| c >= min_confidence).collect();
        self.mask(&keep, NoneKind::LowConfidence)
    }

    /// Collapsed three-class view.
    pub fn collapsed(&self) -> Vec<Option<Class3>> {
        self.labels.iter().map(|c| c.collapse()).collect()
    }

    /// Category codes under a given view (see [`View`]).
    pub fn categories(&self, view: View) -> Vec<Option<usize>> {
        (0..self.len()).map(|i| view.code(self, i)).collect()
    }

    pub fn from_class3(pred: &[Option<Class3>]) -> Self {
        LabelSequence::new(
            pred.iter()
                .map(|p| p.map(Class3::to_gaze).unwrap_or(GazeClass::None))
                .collect(),
        )
    }
}

/// Which category alphabet an evaluation runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    /// Fixation / pursuit / saccade; `None` removed.
    #[default]
    Collapsed,
    /// Collapsed classes plus blinks as an evaluated category.
    CollapsedWithBlink,
    /// Both fixation sub-types kept apart.
    Full,
}

impl View {
    pub fn taxonomy(self) -> Taxonomy {
        match self {
            View::Collapsed => Taxonomy::new(&[("F", false), ("P", false), ("S", true)]),
            View::CollapsedWithBlink => {
                Taxonomy::new(&[("F", false), ("P", false), ("S", true), ("B", false)])
            }
            View::Full => Taxonomy::new(&[("FS", false), ("FT", false), ("P", false), ("S", true)]),
        }
    }

    fn code(self, seq: &LabelSequence, i: usize) -> Option<usize> {
        let c = seq.labels[i];
        match self {
            View::Collapsed => c.collapse().map(Class3::index),
            View::CollapsedWithBlink => match c.collapse() {
                Some(k) => Some(k.index()),
                None if seq.none_kind_at(i) == Some(NoneKind::Blink) => Some(3),
                None => None,
            },
            View::Full => match c {
                GazeClass::FixationStationary => Some(0),
                GazeClass::FixationTranslation => Some(1),
                GazeClass::Pursuit => Some(2),
                GazeClass::Saccade => Some(3),
                GazeClass::None => None,
            },
        }
    }
}

/// Names of evaluated categories and which of them are gaze shifts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub names: Vec<String>,
    pub gaze_shift: Vec<bool>,
}

impl Taxonomy {
    pub fn new(entries: &[(&str, bool)]) -> Self {
        Taxonomy {
            names: entries.iter().map(|(n, _)| n.to_string()).collect(),
            gaze_shift: entries.iter().map(|&(_, s)| s).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, cat: Option<usize>) -> &str {
        match cat {
            Some(c) => &self.names[c],
            None => "N",
        }
    }
}

/// A maximal run of one class, as a half-open sample interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub class: GazeClass,
    pub start_idx: usize,
    pub end_idx: usize,
    pub onset_t: f64,
    pub offset_t: f64,
}

impl Event {
    pub fn len(&self) -> usize {
        self.end_idx - self.start_idx
    }

    pub fn is_empty(&self) -> bool {
        self.end_idx == self.start_idx
    }

    pub fn duration_s(&self, rate_hz: f64) -> f64 {
        self.len() as f64 / rate_hz
    }
}

/// Generic run over any `Copy + Eq` symbol; the building block of event views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run<T> {
    pub value: T,
    pub start: usize,
    pub end: usize,
}

impl<T> Run<T> {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

pub fn runs<T: Copy + PartialEq>(values: &[T]) -> Vec<Run<T>> {
    let mut out: Vec<Run<T>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.value == v => r.end = i + 1,
            _ => out.push(Run {
                value: v,
                start: i,
                end: i + 1,
            }),
        }
    }
    out
}

/// Run-length encode a label sequence. Timing uses `rate_hz` from sample 0.
pub fn events_from_labels(seq: &LabelSequence, rate_hz: f64) -> Result<Vec<Event>> {
    if seq.is_empty() {
        return Err(Error::invalid("cannot build events from an empty label sequence"));
    }
    Ok(runs(&seq.labels)
        .into_iter()
        .map(|r| Event {
            class: r.value,
            start_idx: r.start,
            end_idx: r.end,
            onset_t: r.start as f64 / rate_hz,
            offset_t: r.end as f64 / rate_hz,
        })
        .collect())
}

/// Inverse of [`events_from_labels`]: events must tile `[0, n)` exactly.
pub fn labels_from_events(events: &[Event], n: usize) -> Result<LabelSequence> {
    let mut labels = Vec::with_capacity(n);
    let mut cursor = 0usize;
    for (i, e) in events.iter().enumerate() {
        if e.end_idx <= e.start_idx {
            return Err(Error::invalid(format!("event {i} is empty or reversed")));
        }
        if e.start_idx < cursor {
            return Err(Error::invalid(format!("event {i} overlaps its predecessor")));
        }
        if e.start_idx > cursor {
            return Err(Error::invalid(format!(
                "gap [{cursor}, {}) before event {i} is not covered by a none event",
                e.start_idx
            )));
        }
        labels.extend(std::iter::repeat_n(e.class, e.len()));
        cursor = e.end_idx;
    }
    if cursor != n {
        return Err(Error::invalid(format!(
            "events cover [0, {cursor}) but the sequence has {n} samples"
        )));
    }
    Ok(LabelSequence::new(labels))
}
