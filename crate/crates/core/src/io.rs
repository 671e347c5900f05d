//! Text file formats and the TOML configuration tree.
//!
//! Recordings and traces are comma-separated tables with a mandatory header
//! row. Label files list one run per row and must tile the recording.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::cleaning::CleaningConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::forest::ForestConfig;
use crate::metrics::ElcConfig;
use crate::model::{runs, GazeClass, GazeSample, LabelSequence, NoneKind, Recording};
use crate::rnn::RnnConfig;
use crate::signal::{FilterConfig, VelocityTrace, CHANNEL_NAMES};
use crate::synth::ScenarioConfig;

pub const RECORDING_HEADER: &str = "t_s,eye_x,eye_y,eye_z,head_qw,head_qx,head_qy,head_qz,confidence";
pub const LABEL_HEADER: &str = "start_idx,end_idx,class,note";

/// Unit-norm tolerance on read; values are renormalized afterwards.
const READ_UNIT_TOL: f64 = 1e-6;

/// Shortest decimal form of `v` rounded to 9 significant digits; very small
/// or very large magnitudes use exponent notation.
pub fn fmt9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("float formatting round-trips");
    let a = rounded.abs();
    if (1e-5..1e15).contains(&a) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// Keeps parsed values bit-exact when they already pass the unit check, so a
/// second write reproduces the file.
fn unit_vector(v: Vector3<f64>) -> Vector3<f64> {
    if (v.norm() - 1.0).abs() <= 1e-9 {
        v
    } else {
        v.normalize()
    }
}

fn unit_quaternion(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    if (q.norm() - 1.0).abs() <= 1e-9 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::from_quaternion(q)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Non-empty lines with their 1-based line numbers; the first must be `header`.
fn table<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((n, h)) => return Err(parse_err(n, format!("expected header `{header}`, found `{h}`"))),
        None => return Err(parse_err(1, "missing header row")),
    }
    let width = header.split(',').count();
    lines
        .map(|(n, l)| {
            let cells: Vec<&str> = l.split(',').map(str::trim).collect();
            if cells.len() != width {
                return Err(parse_err(n, format!("expected {width} columns, found {}", cells.len())));
            }
            Ok((n, cells))
        })
        .collect()
}

fn num(line: usize, cell: &str, what: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| parse_err(line, format!("{what}: `{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what} is not finite")));
    }
    Ok(v)
}

pub fn write_recording(rec: &Recording) -> String {
    let mut out = String::with_capacity(rec.len() * 96);
    out.push_str(RECORDING_HEADER);
    out.push('\n');
    for s in rec.samples() {
        let q = s.head_rot.quaternion();
        let cells = [s.t, s.eye_dir.x, s.eye_dir.y, s.eye_dir.z, q.w, q.i, q.j, q.k, s.confidence];
        let row: Vec<String> = cells.iter().map(|&v| fmt9(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses a recording. The sampling rate is taken from `rate_hz` or, when
/// absent, from the mean timestamp spacing rounded to 6 significant digits
/// (9-digit timestamps cannot pin it closer).
pub fn read_recording(text: &str, rate_hz: Option<f64>) -> Result<Recording> {
    let rows = table(text, RECORDING_HEADER)?;
    let mut samples = Vec::with_capacity(rows.len());
    for (line, c) in &rows {
        let line = *line;
        let v: Vec<f64> = c
            .iter()
            .zip(RECORDING_HEADER.split(','))
            .map(|(cell, name)| num(line, cell, name))
            .collect::<Result<_>>()?;
        let eye = Vector3::new(v[1], v[2], v[3]);
        let q = Quaternion::new(v[4], v[5], v[6], v[7]);
        if (eye.norm() - 1.0).abs() > READ_UNIT_TOL {
            return Err(parse_err(line, format!("eye direction norm {} is not 1", eye.norm())));
        }
        if (q.norm() - 1.0).abs() > READ_UNIT_TOL {
            return Err(parse_err(line, format!("head quaternion norm {} is not 1", q.norm())));
        }
        let s = GazeSample::new(v[0], unit_vector(eye), unit_quaternion(q), v[8])
            .map_err(|e| parse_err(line, e.to_string()))?;
        if let Some(prev) = samples.last().map(|p: &GazeSample| p.t) {
            if s.t <= prev {
                return Err(parse_err(line, "timestamps must increase strictly"));
            }
        }
        samples.push(s);
    }
    let rate = match rate_hz {
        Some(r) => r,
        None if samples.len() >= 2 => {
            let span = samples[samples.len() - 1].t - samples[0].t;
            let r = (samples.len() - 1) as f64 / span;
            format!("{r:.5e}").parse().expect("formatted float parses")
        }
        None => return Err(Error::invalid("cannot infer the sampling rate from fewer than two samples")),
    };
    Recording::new(samples, rate)
}

/// One run of a label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub start_idx: usize,
    pub end_idx: usize,
    pub class: String,
    #[serde(default)]
    pub note: String,
}

pub fn label_rows(seq: &LabelSequence) -> Vec<LabelRow> {
    let keyed: Vec<(GazeClass, Option<NoneKind>)> =
        (0..seq.len()).map(|i| (seq.labels[i], seq.none_kind_at(i))).collect();
    runs(&keyed)
        .into_iter()
        .map(|r| LabelRow {
            start_idx: r.start,
            end_idx: r.end,
            class: r.value.0.name().to_string(),
            note: match r.value {
                (GazeClass::None, Some(k)) => k.name().to_string(),
                _ => String::new(),
            },
        })
        .collect()
}

/// Validates rows that must tile `[0, n)` in order. Errors carry each row's
/// `line` number.
pub fn labels_from_rows<'a>(
    rows: impl IntoIterator<Item = (usize, &'a LabelRow)>,
    expected_len: Option<usize>,
) -> Result<LabelSequence> {
    let mut labels = Vec::new();
    let mut kinds = Vec::new();
    for (line, r) in rows {
        let class = GazeClass::from_name(&r.class).ok_or_else(|| parse_err(line, format!("unknown class `{}`", r.class)))?;
        if r.start_idx != labels.len() {
            return Err(parse_err(
                line,
                format!("row starts at {} but the previous row ended at {}", r.start_idx, labels.len()),
            ));
        }
        if r.end_idx <= r.start_idx {
            return Err(parse_err(line, "empty or reversed interval"));
        }
        let kind = match (class, r.note.as_str()) {
            (_, "") => NoneKind::Uncoded,
            (GazeClass::None, note) => {
                NoneKind::from_name(note).ok_or_else(|| parse_err(line, format!("unknown note `{note}`")))?
            }
            (_, note) => return Err(parse_err(line, format!("note `{note}` on a labelled row"))),
        };
        let n = r.end_idx - r.start_idx;
        labels.extend(std::iter::repeat_n(class, n));
        kinds.extend(std::iter::repeat_n(kind, n));
    }
    if let Some(n) = expected_len {
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                what: "label rows vs recording samples",
                left: labels.len(),
                right: n,
            });
        }
    }
    LabelSequence::with_none_kind(labels, kinds)
}

pub fn write_labels(seq: &LabelSequence) -> String {
    let mut out = String::from(LABEL_HEADER);
    out.push('\n');
    for r in label_rows(seq) {
        writeln!(out, "{},{},{},{}", r.start_idx, r.end_idx, r.class, r.note).expect("writing to a String");
    }
    out
}

/// Parses a label file; pass `expected_len` to pin the sample count.
pub fn read_labels(text: &str, expected_len: Option<usize>) -> Result<LabelSequence> {
    let mut rows = Vec::new();
    for (line, c) in table(text, LABEL_HEADER)? {
        let idx = |cell: &str, what: &str| {
            cell.parse::<usize>()
                .map_err(|_| parse_err(line, format!("{what}: `{cell}` is not a sample index")))
        };
        rows.push((
            line,
            LabelRow {
                start_idx: idx(c[0], "start_idx")?,
                end_idx: idx(c[1], "end_idx")?,
                class: c[2].to_string(),
                note: c[3].to_string(),
            },
        ));
    }
    labels_from_rows(rows.iter().map(|(l, r)| (*l, r)), expected_len)
}

pub fn trace_header() -> String {
    let mut h = vec!["t_s"];
    h.extend(CHANNEL_NAMES);
    h.extend(["confidence", "valid"]);
    h.join(",")
}

pub fn write_trace(trace: &VelocityTrace) -> String {
    let mut out = trace_header();
    out.push('\n');
    for i in 0..trace.len() {
        let mut row = vec![fmt9(trace.t[i])];
        row.extend(trace.sample(i).iter().map(|&v| fmt9(v)));
        row.push(fmt9(trace.confidence[i]));
        row.push(u8::from(trace.valid[i]).to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_trace(text: &str, rate_hz: f64) -> Result<VelocityTrace> {
    let header = trace_header();
    let rows = table(text, &header)?;
    let mut t = Vec::with_capacity(rows.len());
    let mut cols: [Vec<f64>; 6] = Default::default();
    let mut conf = Vec::with_capacity(rows.len());
    let mut valid = Vec::with_capacity(rows.len());
    for (line, c) in &rows {
        t.push(num(*line, c[0], "t_s")?);
        for k in 0..6 {
            cols[k].push(num(*line, c[k + 1], CHANNEL_NAMES[k])?);
        }
        conf.push(num(*line, c[7], "confidence")?);
        valid.push(match c[8] {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(*line, format!("valid must be 0 or 1, found `{other}`"))),
        });
    }
    VelocityTrace::from_columns(t, cols, conf, valid, rate_hz)
}

/// Every tunable section; absent keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub filter: FilterConfig,
    pub features: FeatureConfig,
    pub forest: ForestConfig,
    pub rnn: RnnConfig,
    pub cleaning: CleaningConfig,
    pub elc: ElcConfig,
    pub scenario: ScenarioConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            parse_err(line, e.message().to_string())
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::make_velocity_trace;
    use crate::synth::{generate, ScenarioConfig};

    fn synthetic() -> crate::synth::Synthetic {
        generate(&ScenarioConfig {
            duration_s: 3.0,
            seed: 9,
            ..ScenarioConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn fmt9_rounds_to_nine_digits() {
        assert_eq!(fmt9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt9(123456789.4), "123456789");
        assert_eq!(fmt9(-2.5e-7), "-2.5e-7");
        assert_eq!(fmt9(0.000123456789123), "0.000123456789");
        assert_eq!(fmt9(0.0), "0");
    }

    #[test]
    fn recording_round_trip() {
        let s = synthetic();
        let text = write_recording(&s.recording);
        let back = read_recording(&text, Some(300.0)).unwrap();
        assert_eq!(back.len(), s.recording.len());
        for (a, b) in back.samples().iter().zip(s.recording.samples()) {
            assert!((a.eye_dir - b.eye_dir).norm() < 1e-8);
            assert!(a.head_rot.angle_to(&b.head_rot) < 1e-8);
            assert!((a.t - b.t).abs() <= 5e-9 * b.t.abs());
        }
        assert_eq!(write_recording(&back), text);
        let inferred = read_recording(&text, None).unwrap();
        assert_eq!(inferred.rate_hz(), 300.0);
    }

    #[test]
    fn malformed_recording_names_the_line() {
        let bad = format!("{RECORDING_HEADER}\n0,0,0,1,1,0,0,0,1\n0.1,0,0,1,1,0,0,zero,1\n");
        match read_recording(&bad, Some(10.0)) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(read_recording("t,x\n", None).is_err());
        let not_unit = format!("{RECORDING_HEADER}\n0,0,0,2,1,0,0,0,1\n");
        assert!(matches!(read_recording(&not_unit, Some(1.0)), Err(Error::Parse { line: 2, .. })));
        let backwards = format!("{RECORDING_HEADER}\n1,0,0,1,1,0,0,0,1\n0,0,0,1,1,0,0,0,1\n");
        assert!(read_recording(&backwards, None).is_err());
    }

    #[test]
    fn labels_round_trip_with_notes() {
        let s = synthetic();
        let text = write_labels(&s.labels);
        assert!(text.starts_with(LABEL_HEADER));
        let back = read_labels(&text, Some(s.labels.len())).unwrap();
        assert_eq!(back.labels, s.labels.labels);
        for i in 0..back.len() {
            assert_eq!(back.none_kind_at(i), s.labels.none_kind_at(i));
        }
        assert_eq!(write_labels(&back), text);
    }

    #[test]
    fn label_schema_violations() {
        let h = LABEL_HEADER;
        for bad in [
            format!("{h}\n0,5,saccade,\n6,9,pursuit,\n"),
            format!("{h}\n0,5,saccade,\n4,9,pursuit,\n"),
            format!("{h}\n0,5,blink,\n"),
            format!("{h}\n0,0,saccade,\n"),
            format!("{h}\n0,5,saccade,blink\n"),
            format!("{h}\n0,5,none,sleeping\n"),
            format!("{h}\n0,five,none,\n"),
        ] {
            assert!(matches!(read_labels(&bad, None), Err(Error::Parse { line: 2 | 3, .. })), "{bad}");
        }
        let ok = format!("{h}\n0,5,saccade,\n5,9,none,blink\n");
        assert_eq!(read_labels(&ok, None).unwrap().len(), 9);
        assert!(read_labels(&ok, Some(10)).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let s = synthetic();
        let trace = make_velocity_trace(&s.recording, &FilterConfig::default()).unwrap();
        let text = write_trace(&trace);
        let back = read_trace(&text, 300.0).unwrap();
        assert_eq!(back.valid, trace.valid);
        for (a, b) in back.eye_abs.iter().zip(&trace.eye_abs) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-3));
        }
        assert_eq!(write_trace(&back), text);
    }

    #[test]
    fn config_defaults_and_overrides() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
        let c = Config::from_toml("[forest]\nn_trees = 7\n[scenario]\nduration_s = 5.0\n").unwrap();
        assert_eq!(c.forest.n_trees, 7);
        assert_eq!(c.scenario.duration_s, 5.0);
        assert_eq!(c.rnn, RnnConfig::default());
        let text = Config::default().to_toml().unwrap();
        assert_eq!(Config::from_toml(&text).unwrap(), Config::default());
        match Config::from_toml("[forest]\n\nn_trees = \"many\"\n") {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
