//! Per-sample windowed feature vectors for the window-based classifier.
//!
//! Layout of one vector (all channels enabled):
//! for each offset `k = -s..=s`, the six velocity channels at `n + k` in
//! [`CHANNEL_NAMES`](crate::signal::CHANNEL_NAMES) order, followed by
//! `Δθ_e, Δθ_h, σ_e, σ_h`. Disabled channels or scalars are left out, so the
//! dimensionality is `enabled_channels · (2s + 1) + enabled_scalars`.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Class3;
use crate::signal::{angular_between, VelocityTrace};

pub const SCALAR_NAMES: [&str; 4] = ["dtheta_eye", "dtheta_head", "sigma_eye", "sigma_head"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Half-window `s` in samples.
    pub half_window: usize,
    pub channels: [bool; 6],
    pub scalars: [bool; 4],
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            half_window: 7,
            channels: [true; 6],
            scalars: [true; 4],
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        let ch = self.channels.iter().filter(|&&c| c).count();
        let sc = self.scalars.iter().filter(|&&c| c).count();
        ch * (2 * self.half_window + 1) + sc
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::invalid("feature configuration selects nothing"));
        }
        Ok(())
    }

    /// Stable identifier of the feature layout, stored in trained models.
    pub fn schema_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"headfree-window-features-v1");
        h.update((self.half_window as u64).to_le_bytes());
        for &c in self.channels.iter().chain(self.scalars.iter()) {
            h.update([u8::from(c)]);
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

/// Direction streams the angular-distance features are computed from:
/// eye-in-head and head-in-world.
#[derive(Debug, Clone, Copy)]
pub struct Directions<'a> {
    pub eye: &'a [Vector3<f64>],
    pub head: &'a [Vector3<f64>],
}

fn mean_dir(dirs: &[Vector3<f64>]) -> Vector3<f64> {
    dirs.iter().fold(Vector3::zeros(), |acc, d| acc + d)
}

fn delta_theta(dirs: &[Vector3<f64>], lo: usize, n: usize, hi: usize) -> f64 {
    if lo == n || hi == n {
        return 0.0;
    }
    let before = mean_dir(&dirs[lo..n]);
    let after = mean_dir(&dirs[n + 1..=hi]);
    angular_between(&before, &after).unwrap_or(0.0)
}

fn population_std(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

fn check_aligned(trace: &VelocityTrace, dirs: &Directions) -> Result<()> {
    if dirs.eye.len() != trace.len() || dirs.head.len() != trace.len() {
        return Err(Error::LengthMismatch {
            what: "trace vs direction series",
            left: trace.len(),
            right: dirs.eye.len().min(dirs.head.len()),
        });
    }
    Ok(())
}

fn build(trace: &VelocityTrace, dirs: &Directions, n: usize, cfg: &FeatureConfig, out: &mut Vec<f64>) {
    let s = cfg.half_window as isize;
    let last = trace.len() as isize - 1;
    let channels = trace.channels();
    for k in -s..=s {
        // replicate the edge sample where the window runs off the series
        let j = (n as isize + k).clamp(0, last) as usize;
        for (c, on) in channels.iter().zip(cfg.channels) {
            if on {
                out.push(c[j]);
            }
        }
    }
    let lo = n.saturating_sub(cfg.half_window);
    let hi = (n + cfg.half_window).min(trace.len() - 1);
    let scalars = [
        delta_theta(dirs.eye, lo, n, hi),
        delta_theta(dirs.head, lo, n, hi),
        population_std(&trace.eye_abs[lo..=hi]),
        population_std(&trace.head_abs[lo..=hi]),
    ];
    for (v, on) in scalars.into_iter().zip(cfg.scalars) {
        if on {
            out.push(v);
        }
    }
}

/// Feature vector of sample `n`; the full window `n-s ..= n+s` must fit.
pub fn window_features(
    trace: &VelocityTrace,
    dirs: &Directions,
    n: usize,
    cfg: &FeatureConfig,
) -> Result<Vec<f64>> {
    check_aligned(trace, dirs)?;
    let s = cfg.half_window;
    if n < s || n + s >= trace.len() {
        return Err(Error::invalid(format!(
            "window of half-width {s} around sample {n} exceeds a series of length {}",
            trace.len()
        )));
    }
    let mut out = Vec::with_capacity(cfg.dim());
    build(trace, dirs, n, cfg, &mut out);
    Ok(out)
}

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    /// [`FeatureConfig::schema_hash`] of the layout that produced the rows.
    pub schema: u64,
    pub data: Vec<f64>,
    /// Sample index of every row.
    pub index: Vec<usize>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.index.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}

/// Features for every sample. Samples near the ends use a shrunken window for
/// the scalar features and replicate the edge sample in the per-sample block.
pub fn feature_matrix(trace: &VelocityTrace, dirs: &Directions, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    check_aligned(trace, dirs)?;
    cfg.validate()?;
    let dim = cfg.dim();
    let mut data = Vec::with_capacity(dim * trace.len());
    for n in 0..trace.len() {
        build(trace, dirs, n, cfg, &mut data);
    }
    Ok(FeatureMatrix {
        dim,
        schema: cfg.schema_hash(),
        data,
        index: (0..trace.len()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub features: Vec<f64>,
    pub label: Class3,
    pub weight: f64,
}

/// Training rows for one recording: samples with a full window, a labelled
/// class and a valid trace sample, weighted by confidence.
pub fn training_rows(
    trace: &VelocityTrace,
    dirs: &Directions,
    labels: &[Option<Class3>],
    cfg: &FeatureConfig,
) -> Result<Vec<TrainingRow>> {
    check_aligned(trace, dirs)?;
    cfg.validate()?;
    if labels.len() != trace.len() {
        return Err(Error::LengthMismatch {
            what: "labels vs trace",
            left: labels.len(),
            right: trace.len(),
        });
    }
    let s = cfg.half_window;
    let mut rows = Vec::new();
    for n in s..trace.len().saturating_sub(s) {
        let (Some(label), true) = (labels[n], trace.valid[n]) else {
            continue;
        };
        let weight = trace.confidence[n];
        if weight <= 0.0 {
            continue;
        }
        let mut features = Vec::with_capacity(cfg.dim());
        build(trace, dirs, n, cfg, &mut features);
        rows.push(TrainingRow { features, label, weight });
    }
    Ok(rows)
}

/// Merge rows whose features agree after quantization to 1e-6 and whose labels
/// agree. The merged weight is the mean weight times the multiplicity, i.e.
/// the sum. First occurrences keep their order.
pub fn dedup_training_set(rows: Vec<TrainingRow>) -> Vec<TrainingRow> {
    let mut seen: HashMap<(Vec<i64>, Class3), usize> = HashMap::with_capacity(rows.len());
    let mut out: Vec<TrainingRow> = Vec::with_capacity(rows.len());
    for row in rows {
        let key: Vec<i64> = row.features.iter().map(|v| (v * 1e6).round() as i64).collect();
        match seen.get(&(key.clone(), row.label)) {
            Some(&i) => out[i].weight += row.weight,
            None => {
                seen.insert((key, row.label), out.len());
                out.push(row);
            }
        }
    }
    out
}
