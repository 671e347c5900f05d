//! Angular velocity from direction streams: two-point central difference for
//! the absolute speed, cross-product small-angle components for azimuth and
//! elevation.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Angle between two directions in degrees, in `[0, 180]`.
///
/// Uses `atan2(|a × b|, a · b)`, which stays accurate for nearly parallel and
/// nearly opposite vectors where `acos` of the dot product loses precision.
pub fn angular_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<f64> {
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return Err(Error::invalid("zero-length direction vector"));
    }
    Ok(a.cross(b).norm().atan2(a.dot(b)).to_degrees())
}

/// ω_n = f_s · ∠(v_{n+1}, v_{n-1}) / 2 in °/s. The first and last samples copy
/// their interior neighbour so the output has the input's length.
pub fn two_point_velocity(dirs: &[Vector3<f64>], fs: f64) -> Result<Vec<f64>> {
    check(dirs, fs)?;
    let n = dirs.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = fs * angular_between(&dirs[i + 1], &dirs[i - 1])? / 2.0;
    }
    out[0] = out[1];
    out[n - 1] = out[n - 2];
    Ok(out)
}

fn check(dirs: &[Vector3<f64>], fs: f64) -> Result<()> {
    if dirs.len() < 3 {
        return Err(Error::TooShort {
            min: 3,
            got: dirs.len(),
        });
    }
    if !(fs > 0.0) {
        return Err(Error::invalid("sampling rate must be positive"));
    }
    Ok(())
}

/// Signed azimuth and elevation velocities in °/s.
///
/// The sine of each component displacement is read off the cross product
/// `v_{n-1} × v_{n+1}` and used in place of the angle. With `up` the body's
/// vertical axis and `right = up × v_n`, azimuth is positive when turning
/// towards `right` (clockwise seen from above) and elevation is positive
/// upwards.
pub fn az_el_velocity(
    dirs: &[Vector3<f64>],
    fs: f64,
    up: &Vector3<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check(dirs, fs)?;
    let n = dirs.len();
    let up = up.normalize();
    let scale = fs * 0.5 * std::f64::consts::PI.recip() * 180.0;
    let mut az = vec![0.0; n];
    let mut el = vec![0.0; n];
    for i in 1..n - 1 {
        let c = dirs[i - 1].cross(&dirs[i + 1]);
        let right = up.cross(&dirs[i]);
        let right = if right.norm() > 1e-12 {
            right.normalize()
        } else {
            Vector3::x()
        };
        az[i] = scale * c.dot(&up);
        el[i] = -scale * c.dot(&right);
    }
    az[0] = az[1];
    el[0] = el[1];
    az[n - 1] = az[n - 2];
    el[n - 1] = el[n - 2];
    Ok((az, el))
}
