//! Dead reckoning from accelerometer traces, to show how a small orientation
//! error turns into quadratic position drift.
//!
//! Sensor readings `a_m` (g) are rotated back to the world frame with the
//! assumed orientation and gravity is removed,
//! `a_inertial = R⁻¹ · a_m · g + g · ẑ`, then integrated twice with the
//! trapezoid rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{mat_vec, rotation, transpose};
use crate::trace::{AccelSample, Trace};
use crate::STANDARD_GRAVITY;

const UNIFORM_TOL: f64 = 0.01;

/// World-frame positions (m) at every sample, starting at rest at the origin.
/// `assumed_orientation` is yaw, pitch, roll in radians.
pub fn integrate_path(trace: &Trace, assumed_orientation: [f64; 3]) -> Result<Vec<[f64; 3]>> {
    let s = trace.samples();
    let dts: Vec<f64> = s.windows(2).map(|w| w[1].t - w[0].t).collect();
    let mean_dt = dts.iter().sum::<f64>() / dts.len() as f64;
    if let Some((i, dt)) = dts.iter().enumerate().find(|(_, dt)| ((*dt - mean_dt) / mean_dt).abs() > UNIFORM_TOL) {
        return Err(Error::invalid(format!(
            "timestamps are not uniform: step {i} is {dt} s against a mean of {mean_dt} s"
        )));
    }
    let [yaw, pitch, roll] = assumed_orientation;
    let r_inv = transpose(&rotation(yaw, pitch, roll));
    let inertial: Vec<[f64; 3]> = s
        .iter()
        .map(|a| {
            let w = mat_vec(&r_inv, &a.accel());
            [w[0] * STANDARD_GRAVITY, w[1] * STANDARD_GRAVITY, (w[2] + 1.0) * STANDARD_GRAVITY]
        })
        .collect();
    let mut v = [0.0; 3];
    let mut p = [0.0; 3];
    let mut out = Vec::with_capacity(s.len());
    out.push(p);
    for i in 1..s.len() {
        let dt = dts[i - 1];
        let v_next: [f64; 3] = [0, 1, 2].map(|k| v[k] + 0.5 * (inertial[i - 1][k] + inertial[i][k]) * dt);
        p = [0, 1, 2].map(|k| p[k] + 0.5 * (v[k] + v_next[k]) * dt);
        v = v_next;
        out.push(p);
    }
    Ok(out)
}

/// A level, motionless phone sampled every `dt` seconds for `duration`.
pub fn still_trace(duration: f64, dt: f64) -> Result<Trace> {
    if !(duration > 0.0 && dt > 0.0) {
        return Err(Error::invalid("duration and dt must be positive"));
    }
    let n = (duration / dt).round() as usize + 1;
    let samples = (0..n).map(|i| AccelSample::new(i as f64 * dt, 0.0, 0.0, -1.0)).collect::<Result<Vec<_>>>()?;
    Trace::new(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub angle_error: f64,
    pub t: f64,
    pub position_error: f64,
}

/// Position error over time for a still phone whose pitch is misjudged by
/// each of `angle_errors` (radians).
pub fn drift_curve(angle_errors: &[f64], duration: f64, dt: f64) -> Result<Vec<DriftPoint>> {
    let trace = still_trace(duration, dt)?;
    let mut out = Vec::with_capacity(angle_errors.len() * trace.len());
    for &angle in angle_errors {
        let path = integrate_path(&trace, [0.0, angle, 0.0])?;
        for (s, p) in trace.samples().iter().zip(&path) {
            out.push(DriftPoint {
                angle_error: angle,
                t: s.t,
                position_error: (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt(),
            });
        }
    }
    Ok(out)
}

/// `½ · g · sin(Δθ) · t²`.
pub fn drift_closed_form(angle_error: f64, t: f64) -> f64 {
    0.5 * STANDARD_GRAVITY * angle_error.sin() * t * t
}

/// Least-squares slope of `ln(error)` against `ln(t)` over points with
/// positive time and error.
pub fn log_log_slope(points: &[DriftPoint]) -> Option<f64> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.t > 0.0 && p.position_error > 0.0)
        .map(|p| (p.t.ln(), p.position_error.ln()))
        .collect();
    if xy.len() < 2 {
        return None;
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn still_phone_stays_put() {
        let path = integrate_path(&still_trace(5.0, 0.02).unwrap(), [0.0; 3]).unwrap();
        for p in path {
            assert!(p.iter().all(|x| x.abs() < 1e-9));
        }
    }

    #[test]
    fn rotated_still_phone_with_known_orientation_stays_put() {
        let ang = [0.3, -0.4, 0.8];
        let g_sensor = mat_vec(&rotation(ang[0], ang[1], ang[2]), &[0.0, 0.0, -1.0]);
        let rows: Vec<[f64; 4]> = (0..200).map(|i| [i as f64 * 0.02, g_sensor[0], g_sensor[1], g_sensor[2]]).collect();
        let path = integrate_path(&Trace::from_rows(&rows).unwrap(), ang).unwrap();
        assert!(path.iter().flatten().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn constant_acceleration_closed_form() {
        let a = 1.0 / STANDARD_GRAVITY;
        let rows: Vec<[f64; 4]> = (0..=200).map(|i| [i as f64 * 0.01, a, 0.0, -1.0]).collect();
        let path = integrate_path(&Trace::from_rows(&rows).unwrap(), [0.0; 3]).unwrap();
        let x = path.last().unwrap()[0];
        assert!((x - 2.0).abs() <= 0.02, "{x}");
    }

    #[test]
    fn one_degree_over_ten_seconds() {
        let curve = drift_curve(&[1f64.to_radians()], 10.0, 0.01).unwrap();
        let last = curve.last().unwrap();
        let want = drift_closed_form(1f64.to_radians(), 10.0);
        assert!((want - 8.5575).abs() < 1e-3);
        assert!((last.position_error - want).abs() <= 0.01 * want);
        let slope = log_log_slope(&curve).unwrap();
        assert!((1.95..=2.05).contains(&slope), "{slope}");
    }

    #[test]
    fn zero_error_zero_drift_and_linearity() {
        let curve = drift_curve(&[0.0], 4.0, 0.02).unwrap();
        assert!(curve.iter().all(|p| p.position_error == 0.0));
        let e = |ang: f64, t: f64| {
            drift_curve(&[ang], t, 0.01).unwrap().last().unwrap().position_error
        };
        let base = e(0.002, 2.0);
        assert!((e(0.004, 2.0) / base - 2.0).abs() < 1e-3);
        assert!((e(0.002, 8.0) / base - 16.0).abs() < 1e-2);
    }

    #[test]
    fn monotone_in_time() {
        let curve = drift_curve(&[0.01, 0.05], 3.0, 0.05).unwrap();
        for w in curve.windows(2) {
            if w[0].angle_error == w[1].angle_error {
                assert!(w[1].position_error > w[0].position_error);
            }
        }
    }

    #[test]
    fn non_uniform_timestamps_rejected() {
        let rows = [[0.0, 0.0, 0.0, -1.0], [0.1, 0.0, 0.0, -1.0], [0.25, 0.0, 0.0, -1.0]];
        assert!(integrate_path(&Trace::from_rows(&rows).unwrap(), [0.0; 3]).is_err());
    }
}
