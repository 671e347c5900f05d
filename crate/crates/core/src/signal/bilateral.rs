//! Edge-preserving bilateral smoothing of velocity series, and the plain
//! Gaussian smoother it is compared against.

use crate::error::{Error, Result};

/// Kernel parameters for [`bilateral_filter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralParams {
    /// Full window length in seconds; samples within ±window/2 contribute.
    pub window_s: f64,
    pub sigma_t_s: f64,
    pub sigma_r: f64,
}

fn check_inputs(series: &[f64], t: &[f64], weights: Option<&[f64]>) -> Result<()> {
    if series.len() != t.len() {
        return Err(Error::LengthMismatch {
            what: "series vs timestamps",
            left: series.len(),
            right: t.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != series.len() {
            return Err(Error::LengthMismatch {
                what: "series vs weights",
                left: series.len(),
                right: w.len(),
            });
        }
    }
    Ok(())
}

/// Weighted average with a time kernel and a range kernel over ±window/2.
///
/// Optional per-sample `weights` multiply the kernel; where every weight in a
/// window is zero the input value is passed through.
pub fn bilateral_filter(
    series: &[f64],
    t: &[f64],
    params: &BilateralParams,
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    check_inputs(series, t, weights)?;
    if !(params.window_s > 0.0 && params.sigma_t_s > 0.0 && params.sigma_r > 0.0) {
        return Err(Error::invalid("bilateral parameters must be positive"));
    }
    let half = params.window_s / 2.0;
    let inv_t = 1.0 / (2.0 * params.sigma_t_s * params.sigma_t_s);
    let inv_r = 1.0 / (2.0 * params.sigma_r * params.sigma_r);
    Ok(windowed(series, t, half, weights, |dt, dx| {
        (-dt * dt * inv_t - dx * dx * inv_r).exp()
    }))
}

/// Gaussian smoothing over the same ±window/2 support (no range kernel).
pub fn gaussian_filter(series: &[f64], t: &[f64], sigma_t_s: f64, window_s: f64) -> Result<Vec<f64>> {
    check_inputs(series, t, None)?;
    if !(sigma_t_s > 0.0 && window_s > 0.0) {
        return Err(Error::invalid("gaussian parameters must be positive"));
    }
    let inv_t = 1.0 / (2.0 * sigma_t_s * sigma_t_s);
    Ok(windowed(series, t, window_s / 2.0, None, |dt, _| {
        (-dt * dt * inv_t).exp()
    }))
}

fn windowed(
    series: &[f64],
    t: &[f64],
    half: f64,
    weights: Option<&[f64]>,
    kernel: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let n = series.len();
    let eps = 1e-9 * half;
    let mut lo = 0usize;
    let mut hi = 0usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        while t[i] - t[lo] > half + eps {
            lo += 1;
        }
        if hi < i {
            hi = i;
        }
        while hi + 1 < n && t[hi + 1] - t[i] <= half + eps {
            hi += 1;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for j in lo..=hi {
            let w = kernel(t[j] - t[i], series[j] - series[i]) * weights.map_or(1.0, |w| w[j]);
            num += w * series[j];
            den += w;
        }
        out.push(if den > 0.0 { num / den } else { series[i] });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 300.0;

    fn params() -> BilateralParams {
        BilateralParams {
            window_s: 0.050,
            sigma_t_s: 0.018,
            sigma_r: 8.75,
        }
    }

    fn times(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / FS).collect()
    }

    #[test]
    fn constant_series_unchanged() {
        let x = vec![12.5; 100];
        let y = bilateral_filter(&x, &times(100), &params(), None).unwrap();
        assert!(y.iter().all(|v| (v - 12.5).abs() < 1e-12));
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(bilateral_filter(&[1.0; 5], &times(4), &params(), None).is_err());
        assert!(bilateral_filter(&[1.0; 5], &times(5), &params(), Some(&[1.0; 3])).is_err());
    }

    #[test]
    fn window_covers_plus_minus_25ms() {
        // 25 ms at 300 Hz is 7.5 samples: offsets -7..=7 contribute.
        let n = 41;
        let mut x = vec![0.0; n];
        x[20 + 7] = 1.0;
        let y = gaussian_filter(&x, &times(n), 0.018, 0.050).unwrap();
        assert!(y[20] > 0.0);
        let mut x = vec![0.0; n];
        x[20 + 8] = 1.0;
        let y = gaussian_filter(&x, &times(n), 0.018, 0.050).unwrap();
        assert_eq!(y[20], 0.0);
    }

    #[test]
    fn small_spike_is_smoothed_by_direct_kernel() {
        // Oracle: evaluate the kernel sum at the spike by hand.
        let n = 61;
        let mut x = vec![0.0; n];
        x[30] = 5.0;
        let y = bilateral_filter(&x, &times(n), &params(), None).unwrap();
        let p = params();
        let (mut num, mut den) = (0.0, 0.0);
        for k in -7i32..=7 {
            let dt = k as f64 / FS;
            let wt = (-dt * dt / (2.0 * p.sigma_t_s * p.sigma_t_s)).exp();
            let (v, dx) = if k == 0 { (5.0, 0.0) } else { (0.0, 5.0) };
            let w = wt * (-dx * dx / (2.0 * p.sigma_r * p.sigma_r)).exp();
            num += w * v;
            den += w;
        }
        assert!((y[30] - num / den).abs() < 1e-12);
        assert!(y[30] < 1.0, "spike kept at {}", y[30]);
    }

    #[test]
    fn step_edge_sharper_than_gaussian() {
        let n = 120;
        let x: Vec<f64> = (0..n).map(|i| if i < 60 { 0.0 } else { 300.0 }).collect();
        let t = times(n);
        let b = bilateral_filter(&x, &t, &params(), None).unwrap();
        let g = gaussian_filter(&x, &t, 0.018, 0.050).unwrap();
        // width of the 10%..90% transition region
        let width = |y: &[f64]| y.iter().filter(|&&v| v > 30.0 && v < 270.0).count();
        assert!(width(&b) < width(&g), "{} vs {}", width(&b), width(&g));
        assert!(b[80..].iter().all(|v| (v - 300.0).abs() <= 0.02 * 300.0));
    }

    #[test]
    fn output_bounded_by_window_extrema() {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| ((i * 37) % 23) as f64 * 3.0 - 20.0).collect();
        let t = times(n);
        let y = bilateral_filter(&x, &t, &params(), None).unwrap();
        for i in 0..n {
            let lo = i.saturating_sub(7);
            let hi = (i + 7).min(n - 1);
            let mn = x[lo..=hi].iter().cloned().fold(f64::INFINITY, f64::min);
            let mx = x[lo..=hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(y[i] >= mn - 1e-9 && y[i] <= mx + 1e-9);
        }
    }
}
