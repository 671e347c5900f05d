//! Signal conditioning: anti-alias low-pass with zero-phase correction,
//! angular velocity extraction and bilateral smoothing, per body.

mod bilateral;
mod kaiser;
mod velocity;

pub use bilateral::{bilateral_filter, gaussian_filter, BilateralParams};
pub use kaiser::{kaiser_beta, kaiser_order, kaiser_window, LowPassFir};
pub use velocity::{angular_between, az_el_velocity, two_point_velocity};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GazeSample, Recording, DEFAULT_MIN_CONFIDENCE};

/// Which velocity channels the bilateral smoother touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BilateralChannels {
    #[default]
    All,
    AbsoluteOnly,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub kaiser_cutoff_hz: f64,
    /// Half-width of the transition band around the cutoff.
    pub kaiser_transition_hz: f64,
    pub kaiser_attenuation_db: f64,
    pub bilateral_window_s: f64,
    pub bilateral_sigma_t_s: f64,
    pub bilateral_sigma_r_dps: f64,
    pub bilateral_channels: BilateralChannels,
    /// Samples below this confidence are interpolated over and masked.
    pub min_confidence: f64,
    /// Resample to this uniform rate before processing; `None` keeps the native rate.
    pub resample_hz: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            kaiser_cutoff_hz: 58.0,
            kaiser_transition_hz: 2.0,
            kaiser_attenuation_db: 60.0,
            bilateral_window_s: 0.050,
            bilateral_sigma_t_s: 0.018,
            bilateral_sigma_r_dps: 8.75,
            bilateral_channels: BilateralChannels::All,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            resample_hz: None,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        let positive = [
            self.kaiser_cutoff_hz,
            self.kaiser_transition_hz,
            self.kaiser_attenuation_db,
            self.bilateral_window_s,
            self.bilateral_sigma_t_s,
            self.bilateral_sigma_r_dps,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("filter parameters must all be positive"));
        }
        if self.kaiser_cutoff_hz >= rate_hz / 2.0 {
            return Err(Error::invalid(format!(
                "cutoff {} Hz is not below Nyquist ({} Hz)",
                self.kaiser_cutoff_hz,
                rate_hz / 2.0
            )));
        }
        Ok(())
    }

    pub fn bilateral(&self) -> BilateralParams {
        BilateralParams {
            window_s: self.bilateral_window_s,
            sigma_t_s: self.bilateral_sigma_t_s,
            sigma_r: self.bilateral_sigma_r_dps,
        }
    }

    pub fn lowpass(&self, rate_hz: f64) -> Result<LowPassFir> {
        self.validate(rate_hz)?;
        LowPassFir::design(
            self.kaiser_cutoff_hz,
            2.0 * self.kaiser_transition_hz,
            self.kaiser_attenuation_db,
            rate_hz,
        )
    }
}

/// Processing notes carried with a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub rate_hz: f64,
    /// First and last velocity samples are copies of their interior neighbours.
    pub endpoints_copied: bool,
    /// A velocity-domain window of k samples spans this much more time in the
    /// angular domain (the two-point difference reaches one sample each way).
    pub angular_domain_extra_s: f64,
    pub interpolated_samples: usize,
    pub interpolation: String,
    pub resampled_from_hz: Option<f64>,
    pub kaiser_taps: usize,
}

/// Six velocity channels in °/s on the sample grid of the source recording.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityTrace {
    pub t: Vec<f64>,
    pub eye_abs: Vec<f64>,
    pub head_abs: Vec<f64>,
    pub eye_az: Vec<f64>,
    pub head_az: Vec<f64>,
    pub eye_el: Vec<f64>,
    pub head_el: Vec<f64>,
    pub confidence: Vec<f64>,
    /// False where the sample was below the confidence threshold.
    pub valid: Vec<bool>,
    pub meta: TraceMeta,
}

/// Channel order used throughout: |ω_e|, |ω_h|, ω_e^Az, ω_h^Az, ω_e^El, ω_h^El.
pub const CHANNEL_NAMES: [&str; 6] = ["eye_abs", "head_abs", "eye_az", "head_az", "eye_el", "head_el"];

impl VelocityTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn channels(&self) -> [&[f64]; 6] {
        [
            &self.eye_abs,
            &self.head_abs,
            &self.eye_az,
            &self.head_az,
            &self.eye_el,
            &self.head_el,
        ]
    }

    fn channels_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.eye_abs,
            &mut self.head_abs,
            &mut self.eye_az,
            &mut self.head_az,
            &mut self.eye_el,
            &mut self.head_el,
        ]
    }

    pub fn sample(&self, i: usize) -> [f64; 6] {
        [
            self.eye_abs[i],
            self.head_abs[i],
            self.eye_az[i],
            self.head_az[i],
            self.eye_el[i],
            self.head_el[i],
        ]
    }

    /// Build a trace from raw channel columns (e.g. when read back from disk).
    pub fn from_columns(
        t: Vec<f64>,
        channels: [Vec<f64>; 6],
        confidence: Vec<f64>,
        valid: Vec<bool>,
        rate_hz: f64,
    ) -> Result<Self> {
        let n = t.len();
        if channels.iter().any(|c| c.len() != n) || confidence.len() != n || valid.len() != n {
            return Err(Error::invalid("trace columns differ in length"));
        }
        let [eye_abs, head_abs, eye_az, head_az, eye_el, head_el] = channels;
        Ok(VelocityTrace {
            t,
            eye_abs,
            head_abs,
            eye_az,
            head_az,
            eye_el,
            head_el,
            confidence,
            valid,
            meta: TraceMeta {
                rate_hz,
                endpoints_copied: true,
                angular_domain_extra_s: 2.0 / rate_hz,
                interpolated_samples: 0,
                interpolation: "linear".into(),
                resampled_from_hz: None,
                kaiser_taps: 0,
            },
        })
    }
}

/// Linearly interpolate direction vectors across samples where `valid` is
/// false, renormalizing. Leading/trailing invalid stretches copy the nearest
/// valid sample. Returns the number of samples replaced.
pub fn interpolate_invalid(dirs: &mut [Vector3<f64>], valid: &[bool]) -> Result<usize> {
    let first = valid
        .iter()
        .position(|&v| v)
        .ok_or_else(|| Error::invalid("no sample passes the confidence threshold"))?;
    let mut replaced = 0;
    for i in 0..first {
        dirs[i] = dirs[first];
        replaced += 1;
    }
    let mut last = first;
    for i in first + 1..dirs.len() {
        if !valid[i] {
            continue;
        }
        if i > last + 1 {
            let (a, b) = (dirs[last], dirs[i]);
            let span = (i - last) as f64;
            for (k, d) in dirs.iter_mut().enumerate().take(i).skip(last + 1) {
                let f = (k - last) as f64 / span;
                let v = a * (1.0 - f) + b * f;
                *d = if v.norm() > 1e-12 { v.normalize() } else { a };
                replaced += 1;
            }
        }
        last = i;
    }
    for i in last + 1..dirs.len() {
        dirs[i] = dirs[last];
        replaced += 1;
    }
    Ok(replaced)
}

fn slerp_dir(a: &Vector3<f64>, b: &Vector3<f64>, f: f64) -> Vector3<f64> {
    let ua = nalgebra::Unit::new_normalize(*a);
    let ub = nalgebra::Unit::new_normalize(*b);
    ua.try_slerp(&ub, f, 1e-12)
        .map(|u| u.into_inner())
        .unwrap_or_else(|| (a * (1.0 - f) + b * f).normalize())
}

/// Resample onto a uniform grid at `rate_hz` starting at the first timestamp,
/// using spherical interpolation for eye directions and head orientation.
pub fn resample(rec: &Recording, rate_hz: f64) -> Result<Recording> {
    if !(rate_hz > 0.0) {
        return Err(Error::invalid("resample rate must be positive"));
    }
    let s = rec.samples();
    if s.len() < 2 {
        return Err(Error::TooShort { min: 2, got: s.len() });
    }
    let t0 = s[0].t;
    let t1 = s[s.len() - 1].t;
    let n = ((t1 - t0) * rate_hz).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0usize;
    for k in 0..n {
        let t = t0 + k as f64 / rate_hz;
        while j + 2 < s.len() && s[j + 1].t <= t {
            j += 1;
        }
        let (a, b) = (&s[j], &s[j + 1]);
        let f = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let eye = slerp_dir(&a.eye_dir, &b.eye_dir, f);
        let head: UnitQuaternion<f64> = a.head_rot.slerp(&b.head_rot, f);
        let conf = a.confidence * (1.0 - f) + b.confidence * f;
        out.push(GazeSample::new(t, eye, head, conf.clamp(0.0, 1.0))?);
    }
    Recording::new(out, rate_hz)
}

fn lowpass_dirs(fir: &LowPassFir, dirs: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let comp = |k: usize| -> Result<Vec<f64>> {
        fir.zero_phase(&dirs.iter().map(|d| d[k]).collect::<Vec<_>>())
    };
    let (x, y, z) = (comp(0)?, comp(1)?, comp(2)?);
    Ok((0..dirs.len())
        .map(|i| Vector3::new(x[i], y[i], z[i]).normalize())
        .collect())
}

/// Full conditioning pipeline for one recording.
///
/// Per body (eye-in-head, head-in-world): low-confidence samples are
/// interpolated, the direction components pass the zero-phase Kaiser low-pass,
/// velocities are extracted, and the bilateral smoother runs over the velocity
/// channels with invalid samples weighted out. The validity mask is carried
/// over unchanged.
pub fn make_velocity_trace(rec: &Recording, cfg: &FilterConfig) -> Result<VelocityTrace> {
    let resampled;
    let (rec, resampled_from) = match cfg.resample_hz {
        Some(r) if (r - rec.rate_hz()).abs() > 1e-9 => {
            resampled = resample(rec, r)?;
            (&resampled, Some(rec.rate_hz()))
        }
        _ => (rec, None),
    };
    let fs = rec.rate_hz();
    let fir = cfg.lowpass(fs)?;
    let valid = rec.confident_mask(cfg.min_confidence);

    let mut eye = rec.eye_dirs();
    let mut head = rec.head_dirs();
    let interpolated = interpolate_invalid(&mut eye, &valid)?;
    interpolate_invalid(&mut head, &valid)?;

    let eye = lowpass_dirs(&fir, &eye)?;
    let head = lowpass_dirs(&fir, &head)?;

    let up = Vector3::y();
    let eye_abs = two_point_velocity(&eye, fs)?;
    let head_abs = two_point_velocity(&head, fs)?;
    let (eye_az, eye_el) = az_el_velocity(&eye, fs, &up)?;
    let (head_az, head_el) = az_el_velocity(&head, fs, &up)?;

    let mut trace = VelocityTrace {
        t: rec.times(),
        eye_abs,
        head_abs,
        eye_az,
        head_az,
        eye_el,
        head_el,
        confidence: rec.confidences(),
        valid,
        meta: TraceMeta {
            rate_hz: fs,
            endpoints_copied: true,
            angular_domain_extra_s: 2.0 / fs,
            interpolated_samples: interpolated,
            interpolation: "linear".into(),
            resampled_from_hz: resampled_from,
            kaiser_taps: fir.len(),
        },
    };

    let weights: Vec<f64> = trace.valid.iter().map(|&v| f64::from(u8::from(v))).collect();
    let params = cfg.bilateral();
    let t = trace.t.clone();
    let smooth = match cfg.bilateral_channels {
        BilateralChannels::All => 6,
        BilateralChannels::AbsoluteOnly => 2,
        BilateralChannels::None => 0,
    };
    for ch in trace.channels_mut().into_iter().take(smooth) {
        *ch = bilateral_filter(ch, &t, &params, Some(&weights))?;
    }
    Ok(trace)
}
