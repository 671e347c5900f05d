//! Coordinate alignment between the eye tracker, the head IMU and auxiliary
//! cameras: gaze-in-world, stream offsets and extrinsic chaining.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::two_point_velocity;

const ORTHO_TOL: f64 = 1e-9;

/// Rotations bringing the head (IMU) frame and the eye-tracker frame into the
/// common world frame, plus stream offsets relative to the eye stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigAlignment {
    pub head_to_world: Rotation3<f64>,
    pub eye_to_world: Rotation3<f64>,
    pub dt_imu_s: f64,
    pub dt_depth_s: f64,
}

impl Default for RigAlignment {
    fn default() -> Self {
        RigAlignment {
            head_to_world: Rotation3::identity(),
            eye_to_world: Rotation3::identity(),
            dt_imu_s: 0.0,
            dt_depth_s: 0.0,
        }
    }
}

pub fn check_orthonormal(m: &Matrix3<f64>) -> Result<()> {
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    if err > ORTHO_TOL || (m.determinant() - 1.0).abs() > ORTHO_TOL {
        return Err(Error::invalid(format!(
            "matrix is not a proper rotation (|RᵀR - I| = {err:.3e}, det = {:.6})",
            m.determinant()
        )));
    }
    Ok(())
}

impl RigAlignment {
    pub fn validate(&self) -> Result<()> {
        check_orthonormal(self.head_to_world.matrix())?;
        check_orthonormal(self.eye_to_world.matrix())
    }
}

/// Rotate the eye-in-head vector by the aligned head pose.
pub fn gaze_in_world(
    eye_dir: &Vector3<f64>,
    head_rot: &UnitQuaternion<f64>,
    align: &RigAlignment,
) -> Result<Vector3<f64>> {
    if (eye_dir.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("eye direction must be unit length"));
    }
    if (head_rot.as_ref().norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("head rotation must be normalized"));
    }
    let h = align.head_to_world;
    let head_world = h * head_rot.to_rotation_matrix() * h.inverse();
    Ok(head_world * (align.eye_to_world * eye_dir))
}

/// World-frame gaze for every sample of a recording.
pub fn gaze_series(
    eye_dirs: &[Vector3<f64>],
    head_rots: &[UnitQuaternion<f64>],
    align: &RigAlignment,
) -> Result<Vec<Vector3<f64>>> {
    if eye_dirs.len() != head_rots.len() {
        return Err(Error::LengthMismatch {
            what: "eye directions vs head rotations",
            left: eye_dirs.len(),
            right: head_rots.len(),
        });
    }
    eye_dirs
        .iter()
        .zip(head_rots)
        .map(|(e, h)| gaze_in_world(e, h, align))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    /// Positive when the second series lags the first.
    pub offset_s: f64,
    pub lag_samples: f64,
    /// Normalized cross-correlation at the chosen lag (signed).
    pub correlation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetOptions {
    pub max_lag_s: f64,
    /// Refine the integer peak by a parabola through its neighbours.
    pub subsample: bool,
}

impl Default for OffsetOptions {
    fn default() -> Self {
        OffsetOptions {
            max_lag_s: 0.5,
            subsample: false,
        }
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Lag maximizing the magnitude of the normalized cross-correlation.
///
/// At lag `k` the overlap `v1[i]` and `v2[i + k]` is correlated, so a positive
/// result means `v2` is delayed relative to `v1`. Anti-correlated traces (an
/// eye counter-rotating against the head) are found through the magnitude.
pub fn estimate_temporal_offset(
    v1: &[f64],
    v2: &[f64],
    fs: f64,
    opts: &OffsetOptions,
) -> Result<OffsetEstimate> {
    if v1.len() < 3 || v2.len() < 3 {
        return Err(Error::TooShort {
            min: 3,
            got: v1.len().min(v2.len()),
        });
    }
    if variance(v1) <= 0.0 || variance(v2) <= 0.0 {
        return Err(Error::invalid("correlation undefined for a constant series"));
    }
    let n1 = v1.len() as isize;
    let n2 = v2.len() as isize;
    let max_lag = ((opts.max_lag_s * fs).round() as isize).min(n1.max(n2) - 2);
    let ncc = |k: isize| -> Option<f64> {
        let start = 0.max(-k);
        let end = n1.min(n2 - k);
        if end - start < 2 {
            return None;
        }
        let a = &v1[start as usize..end as usize];
        let b = &v2[(start + k) as usize..(end + k) as usize];
        pearson(a, b)
    };
    let mut best: Option<(isize, f64)> = None;
    for k in -max_lag..=max_lag {
        if let Some(r) = ncc(k) {
            match best {
                Some((_, br)) if r.abs() <= br.abs() => {}
                _ => best = Some((k, r)),
            }
        }
    }
    let (k, r) = best.ok_or_else(|| Error::invalid("no overlapping window with variance"))?;
    let mut lag = k as f64;
    if opts.subsample {
        if let (Some(l), Some(rr)) = (ncc(k - 1), ncc(k + 1)) {
            let (l, c, rr) = (l.abs(), r.abs(), rr.abs());
            let denom = l - 2.0 * c + rr;
            if denom < 0.0 {
                lag += (0.5 * (l - rr) / denom).clamp(-0.5, 0.5);
            }
        }
    }
    Ok(OffsetEstimate {
        offset_s: lag / fs,
        lag_samples: lag,
        correlation: r,
    })
}

/// Extrinsics of camera `Z` in the frame of camera `E`, given both cameras'
/// extrinsics relative to a shared calibration target `O`:
/// `R_EZ = R_EO · R_ZO⁻¹`, `T_EZ = T_EO − R_EZ · T_ZO`.
pub fn chain_extrinsics(
    r_e_o: &Matrix3<f64>,
    t_e_o: &Vector3<f64>,
    r_z_o: &Matrix3<f64>,
    t_z_o: &Vector3<f64>,
) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    check_orthonormal(r_e_o)?;
    check_orthonormal(r_z_o)?;
    let r_e_z = r_e_o * r_z_o.transpose();
    let t_e_z = t_e_o - r_e_z * t_z_o;
    Ok((r_e_z, t_e_z))
}

fn mean_gaze_speed(
    eye_dirs: &[Vector3<f64>],
    head_rots: &[UnitQuaternion<f64>],
    fs: f64,
    align: &RigAlignment,
) -> Result<f64> {
    let g = gaze_series(eye_dirs, head_rots, align)?;
    let w = two_point_velocity(&g, fs)?;
    Ok(w.iter().sum::<f64>() / w.len() as f64)
}

/// Result of [`refine_alignment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub alignment: RigAlignment,
    pub initial_speed: f64,
    pub final_speed: f64,
    pub iterations: usize,
}

/// Coordinate descent on the six small-rotation parameters of the two frame
/// rotations, minimizing mean gaze-in-world speed over a segment recorded
/// while the subject fixates a stationary target and moves the head.
pub fn refine_alignment(
    eye_dirs: &[Vector3<f64>],
    head_rots: &[UnitQuaternion<f64>],
    fs: f64,
    initial: &RigAlignment,
) -> Result<Refinement> {
    initial.validate()?;
    let apply = |base: &RigAlignment, p: &[f64; 6]| -> RigAlignment {
        let dh = Rotation3::new(Vector3::new(p[0], p[1], p[2]));
        let de = Rotation3::new(Vector3::new(p[3], p[4], p[5]));
        RigAlignment {
            head_to_world: dh * base.head_to_world,
            eye_to_world: de * base.eye_to_world,
            ..*base
        }
    };
    let mut params = [0.0f64; 6];
    let initial_speed = mean_gaze_speed(eye_dirs, head_rots, fs, initial)?;
    let mut best = initial_speed;
    let mut step = 2f64.to_radians();
    let mut iterations = 0;
    while step > 1e-6 && iterations < 2000 {
        let mut improved = false;
        for k in 0..6 {
            for sign in [1.0, -1.0] {
                let mut trial = params;
                trial[k] += sign * step;
                let s = mean_gaze_speed(eye_dirs, head_rots, fs, &apply(initial, &trial))?;
                iterations += 1;
                if s < best {
                    best = s;
                    params = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(Refinement {
        alignment: apply(initial, &params),
        initial_speed,
        final_speed: best,
        iterations,
    })
}
