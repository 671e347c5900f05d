//! Kaiser-windowed FIR low-pass design and zero-phase application.

use crate::error::{Error, Result};

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser shape parameter for a target stopband attenuation in dB.
pub fn kaiser_beta(attenuation_db: f64) -> f64 {
    if attenuation_db > 50.0 {
        0.1102 * (attenuation_db - 8.7)
    } else if attenuation_db >= 21.0 {
        0.5842 * (attenuation_db - 21.0).powf(0.4) + 0.07886 * (attenuation_db - 21.0)
    } else {
        0.0
    }
}

/// Odd tap count meeting `attenuation_db` over a transition of `transition_hz`.
pub fn kaiser_order(attenuation_db: f64, transition_hz: f64, fs: f64) -> usize {
    let dw = 2.0 * std::f64::consts::PI * transition_hz / fs;
    let n = ((attenuation_db - 8.0) / (2.285 * dw)).ceil().max(1.0) as usize + 1;
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

pub fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let m = (len - 1) as f64;
    let denom = bessel_i0(beta);
    (0..len)
        .map(|i| {
            let r = 2.0 * i as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Linear-phase symmetric low-pass FIR with unit DC gain.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPassFir {
    taps: Vec<f64>,
}

impl LowPassFir {
    /// `transition_hz` is the full width of the transition band, centred on the cutoff.
    pub fn design(cutoff_hz: f64, transition_hz: f64, attenuation_db: f64, fs: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
            return Err(Error::invalid(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
                fs / 2.0
            )));
        }
        if !(transition_hz > 0.0 && attenuation_db > 0.0) {
            return Err(Error::invalid("transition width and attenuation must be positive"));
        }
        let len = kaiser_order(attenuation_db, transition_hz, fs);
        let window = kaiser_window(len, kaiser_beta(attenuation_db));
        let centre = (len / 2) as f64;
        let fc = cutoff_hz / fs;
        let mut taps: Vec<f64> = window
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let x = i as f64 - centre;
                let ideal = if x == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
                };
                ideal * w
            })
            .collect();
        let gain: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= gain);
        // enforce exact symmetry after normalization
        for i in 0..len / 2 {
            let j = len - 1 - i;
            let avg = 0.5 * (taps[i] + taps[j]);
            taps[i] = avg;
            taps[j] = avg;
        }
        Ok(LowPassFir { taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Shortest series [`Self::zero_phase`] accepts.
    pub fn min_input_len(&self) -> usize {
        self.taps.len()
    }

    /// Magnitude of the single-pass frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f_hz / fs;
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (n, &h)| {
                (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin())
            });
        (re * re + im * im).sqrt()
    }

    /// Forward-backward filtering: the response is the squared magnitude of a single
    /// pass with zero group delay. Edges are extended by odd reflection.
    ///
    /// Each pass is evaluated in centred, tap-paired form so that a time-reversed
    /// input produces exactly the time-reversed output.
    pub fn zero_phase(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        if n < self.min_input_len() {
            return Err(Error::TooShort {
                min: self.min_input_len(),
                got: n,
            });
        }
        let half = self.taps.len() / 2;
        let pad = 2 * half;
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for k in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[k]);
        }
        ext.extend_from_slice(x);
        for k in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - k]);
        }
        let once = self.centred_pass(&ext);
        let twice = self.centred_pass(&once);
        debug_assert_eq!(twice.len(), n);
        Ok(twice)
    }

    fn centred_pass(&self, x: &[f64]) -> Vec<f64> {
        let half = self.taps.len() / 2;
        let centre = self.taps[half];
        let upper = &self.taps[half + 1..];
        (half..x.len() - half)
            .map(|i| {
                let mut acc = centre * x[i];
                for (k, &h) in upper.iter().enumerate() {
                    acc += h * (x[i - k - 1] + x[i + k + 1]);
                }
                acc
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn design() -> LowPassFir {
        LowPassFir::design(58.0, 4.0, 60.0, 300.0).unwrap()
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_2).abs() < 1e-14);
    }

    #[test]
    fn designed_filter_meets_stopband() {
        let f = design();
        assert_eq!(f.len() % 2, 1);
        assert!((f.response(0.0, 300.0) - 1.0).abs() < 1e-12);
        // single-pass: 60 dB from the band edge 60 Hz on
        for freq in [60.0, 70.0, 100.0, 149.0] {
            let db = 20.0 * f.response(freq, 300.0).log10();
            assert!(db < -59.0, "{freq} Hz at {db} dB");
        }
        let pass = f.response(50.0, 300.0);
        assert!((pass - 1.0).abs() < 2e-3);
    }

    #[test]
    fn dc_and_short_input() {
        let f = design();
        let y = f.zero_phase(&vec![3.25; 600]).unwrap();
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-9));
        match f.zero_phase(&[1.0; 10]) {
            Err(Error::TooShort { min, got }) => {
                assert_eq!(min, f.len());
                assert_eq!(got, 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn passband_sine_keeps_amplitude_and_phase() {
        let f = design();
        let x = sine(10.0, 300.0, 3000);
        let y = f.zero_phase(&x).unwrap();
        // least-squares fit of a*sin + b*cos over the interior
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 500..2500 {
            let ph = 2.0 * std::f64::consts::PI * 10.0 * i as f64 / 300.0;
            let (s, c) = ph.sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            ys += y[i] * s;
            yc += y[i] * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        let amp = (a * a + b * b).sqrt();
        let phase_samples = b.atan2(a) / (2.0 * std::f64::consts::PI * 10.0 / 300.0);
        assert!((amp - 1.0).abs() < 0.01, "amplitude {amp}");
        assert!(phase_samples.abs() < 0.1, "phase {phase_samples} samples");
    }

    #[test]
    fn stopband_sine_attenuated() {
        let f = design();
        let x = sine(100.0, 300.0, 3000);
        let y = f.zero_phase(&x).unwrap();
        let db = 20.0 * (rms(&y[600..2400]) / rms(&x[600..2400])).log10();
        assert!(db <= -40.0, "attenuation {db} dB");
    }

    #[test]
    fn reversal_symmetry_is_exact() {
        let f = design();
        let x: Vec<f64> = (0..700).map(|i| ((i * 7919) % 101) as f64 * 0.37 - 11.0).collect();
        let y = f.zero_phase(&x).unwrap();
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        let mut yr = f.zero_phase(&rev).unwrap();
        yr.reverse();
        assert_eq!(y, yr);
    }
}
