//! Parametric synthetic gestures.
//!
//! A template is a planar path (circle, polyline letters, lines) traced with
//! minimum-jerk timing. The world-frame acceleration `a_w` (m/s²) of the
//! path is turned into a sensor reading in g as
//!
//! `a_m = R(yaw, pitch, roll) · (a_w / g − ẑ)`, with `R = R_z R_y R_x`,
//!
//! so a still, level phone reads `(0, 0, −1)`. Per-axis Gaussian sensor
//! noise, orientation jitter and speed jitter are added on top.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, GestureRng};
use crate::trace::{AccelSample, Dataset, Trace};
use crate::STANDARD_GRAVITY;

pub const SAMPLE_RATE_HZ: f64 = 50.0;
pub const IDLE: &str = "idle";

/// The six documented templates; [`template_ids`] lists every shape/plane
/// combination the generator accepts.
pub const BUILTIN_TEMPLATES: [&str; 6] = ["circle-xy", "circle-xz", "line-x", "line-y", "M-shape", "N-shape"];

const PLANES: [&str; 3] = ["xy", "xz", "yz"];
const PLANAR_SHAPES: [&str; 8] = ["circle", "M", "N", "W", "V", "Z", "triangle", "square"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Xy,
    Xz,
    Yz,
}

impl Plane {
    fn parse(s: &str) -> Option<Plane> {
        match s {
            "xy" => Some(Plane::Xy),
            "xz" => Some(Plane::Xz),
            "yz" => Some(Plane::Yz),
            _ => None,
        }
    }

    fn embed(self, u: f64, v: f64) -> [f64; 3] {
        match self {
            Plane::Xy => [u, v, 0.0],
            Plane::Xz => [u, 0.0, v],
            Plane::Yz => [0.0, u, v],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Path {
    /// One loop of radius `size / 2`, starting at angle 0, counter-clockwise.
    Circle { plane: Plane },
    /// Straight strokes through planar waypoints in a unit box.
    Polyline { plane: Plane, points: Vec<[f64; 2]> },
    /// A single stroke along one world axis.
    Line { axis: usize },
    /// Low-energy random motion with no intended gesture.
    Idle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureTemplate {
    pub id: String,
    pub path: Path,
    /// Seconds at nominal speed.
    pub duration: f64,
    /// Path extent in meters.
    pub size: f64,
    /// Base yaw, pitch, roll in radians.
    pub orientation: [f64; 3],
}

fn letter(shape: &str) -> Option<Vec<[f64; 2]>> {
    Some(match shape {
        "M" => vec![[-0.5, -0.5], [-0.5, 0.5], [0.0, 0.0], [0.5, 0.5], [0.5, -0.5]],
        "N" => vec![[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]],
        "W" => vec![[-0.5, 0.5], [-0.25, -0.5], [0.0, 0.2], [0.25, -0.5], [0.5, 0.5]],
        "V" => vec![[-0.5, 0.5], [0.0, -0.5], [0.5, 0.5]],
        "Z" => vec![[-0.5, 0.5], [0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]],
        "triangle" => vec![[0.0, 0.5], [0.5, -0.5], [-0.5, -0.5], [0.0, 0.5]],
        "square" => vec![[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5]],
        _ => return None,
    })
}

/// Every accepted template id: lines on the three axes, the planar shapes in
/// each plane, then `idle`.
pub fn template_ids() -> Vec<String> {
    let mut ids: Vec<String> = ["line-x", "line-y", "line-z"].iter().map(|s| s.to_string()).collect();
    for plane in PLANES {
        for shape in PLANAR_SHAPES {
            ids.push(format!("{shape}-{plane}"));
        }
    }
    ids.push(IDLE.to_string());
    ids
}

/// Looks up a template by id. `M-shape`, `N-shape` and `O` are aliases for
/// `M-xy`, `N-xy` and `circle-xy`.
pub fn template(id: &str) -> Result<GestureTemplate> {
    let canonical = match id {
        "M-shape" => "M-xy",
        "N-shape" => "N-xy",
        "O" => "circle-xy",
        other => other,
    };
    let unknown = || Error::UnknownTemplate(id.to_string());
    let (path, duration, size) = if canonical == IDLE {
        (Path::Idle, 1.5, 0.0)
    } else if let Some(axis) = canonical.strip_prefix("line-") {
        let axis = ["x", "y", "z"].iter().position(|a| *a == axis).ok_or_else(unknown)?;
        (Path::Line { axis }, 1.0, 0.16)
    } else {
        let (shape, plane) = canonical.rsplit_once('-').ok_or_else(unknown)?;
        let plane = Plane::parse(plane).ok_or_else(unknown)?;
        if shape == "circle" {
            (Path::Circle { plane }, 1.2, 0.12)
        } else {
            let points = letter(shape).ok_or_else(unknown)?;
            let strokes = (points.len() - 1) as f64;
            (Path::Polyline { plane, points }, 0.5 + 0.35 * strokes, 0.12)
        }
    };
    Ok(GestureTemplate { id: id.to_string(), path, duration, size, orientation: [0.0; 3] })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Per-axis sensor noise standard deviation in g.
    pub axis_std: [f64; 3],
    /// Per-angle orientation jitter standard deviation in radians.
    pub orientation_std: f64,
    /// Relative standard deviation of gesture duration.
    pub speed_jitter: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { axis_std: [0.0; 3], orientation_std: 0.0, speed_jitter: 0.0, seed: 0 }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec::default()
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.axis_std[0], self.axis_std[1], self.axis_std[2], self.orientation_std, self.speed_jitter];
        if all.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("noise standard deviations must be finite and non-negative"));
        }
        Ok(())
    }
}

/// `R_z(yaw) · R_y(pitch) · R_x(roll)`.
pub fn rotation(yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = yaw.sin_cos();
    let (sb, cb) = pitch.sin_cos();
    let (sg, cg) = roll.sin_cos();
    [
        [ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg],
        [sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg],
        [-sb, cb * sg, cb * cg],
    ]
}

pub fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

pub fn transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [m[0][i], m[1][i], m[2][i]])
}

/// Minimum-jerk profile `s(τ) = 10τ³ − 15τ⁴ + 6τ⁵` and its derivatives.
fn min_jerk(tau: f64) -> (f64, f64, f64) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    (
        10.0 * t3 - 15.0 * t3 * tau + 6.0 * t3 * t2,
        30.0 * t2 - 60.0 * t3 + 30.0 * t3 * tau,
        60.0 * tau - 180.0 * t2 + 120.0 * t3,
    )
}

/// Position (m) and world acceleration (m/s²) at time `t ∈ [0, duration]`.
fn path_kinematics(path: &Path, size: f64, duration: f64, t: f64) -> ([f64; 3], [f64; 3]) {
    let tau = (t / duration).clamp(0.0, 1.0);
    match path {
        Path::Circle { plane } => {
            let r = size / 2.0;
            let (s, ds, dds) = min_jerk(tau);
            let th = 2.0 * PI * s;
            let w = 2.0 * PI * ds / duration;
            let al = 2.0 * PI * dds / (duration * duration);
            let (sin, cos) = th.sin_cos();
            let pos = plane.embed(r * cos, r * sin);
            let acc = plane.embed(r * (-sin * al - cos * w * w), r * (cos * al - sin * w * w));
            (pos, acc)
        }
        Path::Line { axis } => {
            let (s, _, dds) = min_jerk(tau);
            let mut pos = [0.0; 3];
            let mut acc = [0.0; 3];
            pos[*axis] = size * s;
            acc[*axis] = size * dds / (duration * duration);
            (pos, acc)
        }
        Path::Polyline { plane, points } => {
            let lens: Vec<f64> =
                points.windows(2).map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt()).collect();
            let total: f64 = lens.iter().sum();
            let mut start = 0.0;
            let last = lens.len() - 1;
            for (k, len) in lens.iter().enumerate() {
                let seg = duration * len / total;
                if t <= start + seg || k == last {
                    let tau = ((t - start) / seg).clamp(0.0, 1.0);
                    let (s, _, dds) = min_jerk(tau);
                    let (p0, p1) = (points[k], points[k + 1]);
                    let d = [(p1[0] - p0[0]) * size, (p1[1] - p0[1]) * size];
                    let pos = plane.embed(p0[0] * size + d[0] * s, p0[1] * size + d[1] * s);
                    let acc = plane.embed(d[0] * dds / (seg * seg), d[1] * dds / (seg * seg));
                    return (pos, acc);
                }
                start += seg;
            }
            unreachable!("polyline has at least one segment")
        }
        Path::Idle => ([0.0; 3], [0.0; 3]),
    }
}

/// Smooth low-amplitude wobble for the idle class: a few random sinusoids
/// per axis, about 0.3 m/s² peak.
fn idle_acceleration(rng: &mut GestureRng, n: usize, dt: f64) -> Vec<[f64; 3]> {
    let comps: Vec<[f64; 3]> = (0..9)
        .map(|_| [rng.random_range(0.0..3.0), rng.random_range(0.3..2.5), rng.random_range(0.0..2.0 * PI)])
        .collect();
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            [0, 1, 2].map(|axis| {
                comps[axis * 3..axis * 3 + 3]
                    .iter()
                    .map(|c| 0.1 * c[0] / 3.0 * (2.0 * PI * c[1] * t + c[2]).sin())
                    .sum::<f64>()
            })
        })
        .collect()
}

/// Samples a gesture. `n_samples` points are spread evenly over the
/// (speed-jittered) duration.
pub fn generate_gesture(template: &GestureTemplate, noise: &NoiseSpec, n_samples: usize) -> Result<Trace> {
    generate_with_offset(template, noise, n_samples, [0.0; 3], 1.0)
}

/// As [`generate_gesture`], with an extra orientation offset and duration
/// scale (used for per-subject style).
pub fn generate_with_offset(
    template: &GestureTemplate,
    noise: &NoiseSpec,
    n_samples: usize,
    orientation_offset: [f64; 3],
    duration_scale: f64,
) -> Result<Trace> {
    if n_samples < 2 {
        return Err(Error::invalid("a trace needs at least 2 samples"));
    }
    if !(template.duration > 0.0) || !(duration_scale > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    noise.validate()?;
    let mut rng = rng::seeded(noise.seed);
    let jitter = |rng: &mut GestureRng, sd: f64| if sd > 0.0 { Normal::new(0.0, sd).unwrap().sample(rng) } else { 0.0 };
    let angles: [f64; 3] = [0, 1, 2].map(|k| template.orientation[k] + orientation_offset[k] + jitter(&mut rng, noise.orientation_std));
    let speed = (1.0 + jitter(&mut rng, noise.speed_jitter)).max(0.25);
    let duration = template.duration * duration_scale * speed;
    let dt = duration / (n_samples - 1) as f64;
    let r = rotation(angles[0], angles[1], angles[2]);
    let idle = matches!(template.path, Path::Idle).then(|| idle_acceleration(&mut rng, n_samples, dt));
    let axis_noise: Vec<Option<Normal<f64>>> =
        noise.axis_std.iter().map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).unwrap())).collect();

    let samples = (0..n_samples)
        .map(|i| {
            let t = i as f64 * dt;
            let a_w = match &idle {
                Some(acc) => acc[i],
                None => path_kinematics(&template.path, template.size, duration, t).1,
            };
            let f = [a_w[0] / STANDARD_GRAVITY, a_w[1] / STANDARD_GRAVITY, a_w[2] / STANDARD_GRAVITY - 1.0];
            let mut a_m = mat_vec(&r, &f);
            for k in 0..3 {
                if let Some(d) = &axis_noise[k] {
                    a_m[k] += d.sample(&mut rng);
                }
            }
            AccelSample::new(t, a_m[0], a_m[1], a_m[2])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trace::new(samples)?.with_label(template.id.clone()))
}

/// Position of the template path over time, for plotting and tests.
pub fn template_positions(template: &GestureTemplate, n_samples: usize) -> Vec<[f64; 3]> {
    let dt = template.duration / (n_samples.max(2) - 1) as f64;
    (0..n_samples).map(|i| path_kinematics(&template.path, template.size, template.duration, i as f64 * dt).0).collect()
}

/// Per-subject style: a fixed orientation offset and speed factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub orientation_offset: [f64; 3],
    pub duration_scale: f64,
}

impl Subject {
    pub fn random(rng: &mut GestureRng, spread: f64) -> Self {
        let n = Normal::new(0.0, spread.max(1e-12)).unwrap();
        Subject {
            orientation_offset: [n.sample(rng), n.sample(rng), n.sample(rng)],
            duration_scale: (1.0 + 0.5 * n.sample(rng)).clamp(0.6, 1.6),
        }
    }
}

/// A fixed ordering of 20 distinct templates used by the benchmark
/// experiments; the first `n` are returned.
pub fn benchmark_templates(n: usize) -> Result<Vec<String>> {
    const ORDER: [&str; 20] = [
        "circle-xy", "M-xy", "N-xy", "W-xy", "V-xy", "Z-xy", "triangle-xy", "square-xy", "circle-xz", "line-x",
        "line-y", "line-z", "circle-yz", "M-xz", "N-yz", "W-xz", "V-yz", "Z-xz", "triangle-yz", "square-xz",
    ];
    if n == 0 || n > ORDER.len() {
        return Err(Error::invalid(format!("benchmark sets have 1 to {} gestures, not {n}", ORDER.len())));
    }
    Ok(ORDER[..n].iter().map(|s| s.to_string()).collect())
}

/// Recipe for a labeled synthetic data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub templates: Vec<String>,
    pub subjects: usize,
    pub repetitions: usize,
    /// Per-template sensor noise; indexed modulo its length. Empty means
    /// [`gesture_noise`] is used.
    pub axis_std: Vec<[f64; 3]>,
    /// Scales the per-gesture sensor noise.
    pub noise_scale: f64,
    /// Scales every template's spatial size.
    pub motion_scale: f64,
    pub orientation_std: f64,
    pub speed_jitter: f64,
    /// Standard deviation of per-subject orientation offsets (radians).
    pub subject_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            templates: BUILTIN_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            subjects: 4,
            repetitions: 5,
            axis_std: Vec::new(),
            noise_scale: 1.0,
            motion_scale: 1.0,
            orientation_std: 0.02,
            speed_jitter: 0.1,
            subject_spread: 0.05,
            seed: 0,
        }
    }
}

/// Deterministic anisotropic sensor noise for the `k`-th gesture of a set:
/// each axis gets between 0.015 and 0.105 g.
pub fn gesture_noise(seed: u64, k: usize) -> [f64; 3] {
    let mut r = rng::seeded(derive_seed(seed, 0x6e6f_6973_6500 + k as u64));
    [0, 1, 2].map(|_| r.random_range(0.015..0.105))
}

/// Generates `subjects × repetitions` traces per template. Trace ids are
/// `<template>/s<subject>/r<repetition>`.
pub fn synthetic_dataset(spec: &SyntheticSpec, n_samples_override: Option<usize>) -> Result<Dataset> {
    let templates = spec
        .templates
        .iter()
        .map(|t| template(t).map(|tpl| GestureTemplate { size: tpl.size * spec.motion_scale, ..tpl }))
        .collect::<Result<Vec<_>>>()?;
    let mut subj_rng = rng::seeded(derive_seed(spec.seed, 1));
    let subjects: Vec<Subject> = (0..spec.subjects).map(|_| Subject::random(&mut subj_rng, spec.subject_spread)).collect();
    let mut traces = Vec::new();
    for (k, tpl) in templates.iter().enumerate() {
        let base = if spec.axis_std.is_empty() { gesture_noise(spec.seed, k) } else { spec.axis_std[k % spec.axis_std.len()] };
        let axis_std = base.map(|s| s * spec.noise_scale);
        let n = n_samples_override.unwrap_or_else(|| (tpl.duration * SAMPLE_RATE_HZ).round() as usize + 1);
        for (s, subj) in subjects.iter().enumerate() {
            for rep in 0..spec.repetitions {
                let noise = NoiseSpec {
                    axis_std,
                    orientation_std: spec.orientation_std,
                    speed_jitter: spec.speed_jitter,
                    seed: derive_seed(spec.seed, ((k as u64) << 32) | ((s as u64) << 16) | rep as u64),
                };
                let trace = generate_with_offset(tpl, &noise, n, subj.orientation_offset, subj.duration_scale)?
                    .with_subject(format!("s{s}"))
                    .with_id(format!("{}/s{s}/r{rep}", tpl.id));
                traces.push(trace);
            }
        }
    }
    Ok(Dataset::new(traces, format!("synthetic seed={} templates={}", spec.seed, spec.templates.join(","))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn still_level_circle_plane_keeps_gravity_on_z() {
        let t = generate_gesture(&template("circle-xy").unwrap(), &NoiseSpec::none(), 61).unwrap();
        for s in t.samples() {
            assert!((s.az + 1.0).abs() < 1e-12);
        }
        assert!(t.samples().iter().any(|s| s.ax.abs() > 0.1));
    }

    #[test]
    fn same_seed_same_trace() {
        let tpl = template("M-shape").unwrap();
        let noise = NoiseSpec { axis_std: [0.1, 0.2, 0.05], orientation_std: 0.1, speed_jitter: 0.1, seed: 5 };
        assert_eq!(generate_gesture(&tpl, &noise, 80).unwrap(), generate_gesture(&tpl, &noise, 80).unwrap());
        let other = NoiseSpec { seed: 6, ..noise };
        assert_ne!(generate_gesture(&tpl, &noise, 80).unwrap(), generate_gesture(&tpl, &other, 80).unwrap());
    }

    #[test]
    fn unknown_template() {
        assert!(matches!(template("hexagon-xy"), Err(Error::UnknownTemplate(_))));
        assert!(matches!(template("circle-ab"), Err(Error::UnknownTemplate(_))));
        assert!(template("line-w").is_err());
    }

    #[test]
    fn all_listed_templates_resolve() {
        let ids = template_ids();
        assert!(ids.len() >= 21);
        for id in ids.iter().chain(BUILTIN_TEMPLATES.iter().map(|s| s.to_string()).collect::<Vec<_>>().iter()) {
            let t = template(id).unwrap();
            generate_gesture(&t, &NoiseSpec::none(), 50).unwrap();
        }
    }

    #[test]
    fn rotated_still_phone_has_unit_norm_mean() {
        let mut tpl = template("idle").unwrap();
        tpl.orientation = [0.3, -0.7, 1.1];
        let mut t = template("line-x").unwrap();
        t.size = 0.0;
        t.orientation = tpl.orientation;
        let trace = generate_gesture(&t, &NoiseSpec::none(), 100).unwrap();
        let n = trace.len() as f64;
        let mean = [0, 1, 2].map(|k| trace.points().iter().map(|p| p[k]).sum::<f64>() / n);
        let norm = (mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]).sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotation_is_orthonormal_and_ordered() {
        let r = rotation(0.4, -0.2, 0.9);
        let rt = transpose(&r);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * rt[k][j]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        // Pure yaw rotates x toward y.
        let y = mat_vec(&rotation(PI / 2.0, 0.0, 0.0), &[1.0, 0.0, 0.0]);
        assert!((y[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn path_acceleration_is_second_derivative() {
        for id in ["circle-xz", "N-xy", "line-y", "square-yz"] {
            let tpl = template(id).unwrap();
            let d = tpl.duration;
            let h = 1e-4;
            for k in 1..20 {
                let t = d * k as f64 / 20.0 + 0.013;
                let p = |t| path_kinematics(&tpl.path, tpl.size, d, t).0;
                let (p0, pm, pp) = (p(t), p(t - h), p(t + h));
                let acc = path_kinematics(&tpl.path, tpl.size, d, t).1;
                for a in 0..3 {
                    let fd = (pp[a] - 2.0 * p0[a] + pm[a]) / (h * h);
                    assert!((fd - acc[a]).abs() < 1e-3, "{id} t={t} axis {a}: {fd} vs {}", acc[a]);
                }
            }
        }
    }

    #[test]
    fn dataset_shape() {
        let spec = SyntheticSpec { subjects: 2, repetitions: 3, ..Default::default() };
        let ds = synthetic_dataset(&spec, None).unwrap();
        assert_eq!(ds.traces.len(), 6 * 6);
        assert_eq!(ds.labels().len(), 6);
        ds.validate_for_training().unwrap();
        assert_eq!(ds, synthetic_dataset(&spec, None).unwrap());
    }
}
