//! Codebooks: finite sets of 3-D codewords on a sphere or a per-gesture
//! ellipsoid.
//!
//! Every codeword is a unit template direction `u` mapped to
//! `center + u ⊙ radii`, so each satisfies
//! `Σ_axis ((c − center) / radii)² = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Dataset, Trace};

pub const DEFAULT_CODEBOOK_SIZE: usize = 18;

/// Per-axis standard deviation floor in g.
pub const SIGMA_FLOOR: f64 = 1e-3;

const CONTOUR_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookShape {
    Spherical,
    Elliptical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodebookRepr", into = "CodebookRepr")]
pub struct Codebook {
    codewords: Vec<[f64; 3]>,
    shape: CodebookShape,
    center: [f64; 3],
    radii: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct CodebookRepr {
    shape: CodebookShape,
    center: [f64; 3],
    radii: [f64; 3],
    codewords: Vec<[f64; 3]>,
}

impl TryFrom<CodebookRepr> for Codebook {
    type Error = Error;
    fn try_from(r: CodebookRepr) -> Result<Self> {
        Codebook::new(r.codewords, r.shape, r.center, r.radii)
    }
}

impl From<Codebook> for CodebookRepr {
    fn from(c: Codebook) -> Self {
        CodebookRepr { shape: c.shape, center: c.center, radii: c.radii, codewords: c.codewords }
    }
}

impl Codebook {
    /// Validates that radii are positive and every codeword lies on the
    /// contour defined by `center` and `radii`.
    pub fn new(
        codewords: Vec<[f64; 3]>,
        shape: CodebookShape,
        center: [f64; 3],
        radii: [f64; 3],
    ) -> Result<Self> {
        if codewords.is_empty() {
            return Err(Error::invalid("codebook needs at least one codeword"));
        }
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid(format!("codebook radii must be positive, got {radii:?}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("codebook center must be finite"));
        }
        for (i, c) in codewords.iter().enumerate() {
            let q = contour_value(c, &center, &radii);
            if (q - 1.0).abs() > CONTOUR_TOL {
                return Err(Error::invalid(format!(
                    "codeword {i} is off the contour (normalized radius² = {q})"
                )));
            }
        }
        Ok(Codebook { codewords, shape, center, radii })
    }

    /// Places `n` template directions on the ellipsoid `center + u ⊙ radii`.
    pub fn from_template(n: usize, shape: CodebookShape, center: [f64; 3], radii: [f64; 3]) -> Result<Self> {
        let codewords = template_directions(n)?
            .into_iter()
            .map(|u| [center[0] + u[0] * radii[0], center[1] + u[1] * radii[1], center[2] + u[2] * radii[2]])
            .collect();
        Codebook::new(codewords, shape, center, radii)
    }

    pub fn codewords(&self) -> &[[f64; 3]] {
        &self.codewords
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn shape(&self) -> CodebookShape {
        self.shape
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn radii(&self) -> [f64; 3] {
        self.radii
    }
}

/// `Σ_axis ((p − center) / radii)²`; equals 1 on the contour.
pub fn contour_value(p: &[f64; 3], center: &[f64; 3], radii: &[f64; 3]) -> f64 {
    (0..3).map(|k| ((p[k] - center[k]) / radii[k]).powi(2)).sum()
}

/// Unit-sphere template. For 18 points: the six axis directions followed by
/// the twelve normalized edge midpoints of the cube. Other sizes use a
/// Fibonacci lattice.
pub fn template_directions(n: usize) -> Result<Vec<[f64; 3]>> {
    if n == 0 {
        return Err(Error::invalid("codebook size must be positive"));
    }
    if n == DEFAULT_CODEBOOK_SIZE {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        return Ok(vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
            [h, h, 0.0],
            [h, -h, 0.0],
            [-h, h, 0.0],
            [-h, -h, 0.0],
            [h, 0.0, h],
            [h, 0.0, -h],
            [-h, 0.0, h],
            [-h, 0.0, -h],
            [0.0, h, h],
            [0.0, h, -h],
            [0.0, -h, h],
            [0.0, -h, -h],
        ]);
    }
    if n == 1 {
        return Ok(vec![[0.0, 0.0, -1.0]]);
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    Ok((0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let v = [r * phi.cos(), r * phi.sin(), z];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / norm, v[1] / norm, v[2] / norm]
        })
        .collect())
}

/// Single shared sphere at the origin whose radius is the mean sample norm.
pub fn build_spherical_codebook(dataset: &Dataset, n: usize) -> Result<Codebook> {
    let traces: Vec<&Trace> = dataset.traces.iter().collect();
    spherical_codebook_from(&traces, n)
}

pub fn spherical_codebook_from(traces: &[&Trace], n: usize) -> Result<Codebook> {
    let (sum, count) = traces
        .iter()
        .flat_map(|t| t.samples())
        .fold((0.0, 0usize), |(s, c), x| {
            let a = x.accel();
            (s + (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt(), c + 1)
        });
    if count == 0 {
        return Err(Error::invalid("cannot build a spherical codebook from an empty dataset"));
    }
    let radius = (sum / count as f64).max(SIGMA_FLOOR);
    Codebook::from_template(n, CodebookShape::Spherical, [0.0; 3], [radius; 3])
}

/// Per-gesture ellipsoid: center at the per-axis sample mean, radii at the
/// per-axis (population) standard deviation floored at [`SIGMA_FLOOR`].
pub fn build_elliptical_codebook(traces: &[&Trace], n: usize) -> Result<Codebook> {
    let points: Vec<[f64; 3]> = traces.iter().flat_map(|t| t.points()).collect();
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "elliptical codebook needs at least 2 samples, got {}",
            points.len()
        )));
    }
    let m = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in &points {
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = [0.0; 3];
    for p in &points {
        for k in 0..3 {
            var[k] += (p[k] - mean[k]).powi(2);
        }
    }
    let radii = var.map(|v| (v / m).sqrt().max(SIGMA_FLOOR));
    Codebook::from_template(n, CodebookShape::Elliptical, mean, radii)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::AccelSample;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn trace_of(points: &[[f64; 3]]) -> Trace {
        let samples = points
            .iter()
            .enumerate()
            .map(|(i, p)| AccelSample::new(i as f64 * 0.02, p[0], p[1], p[2]).unwrap())
            .collect();
        Trace::new(samples).unwrap()
    }

    #[test]
    fn template_is_unit_and_distinct() {
        let t = template_directions(18).unwrap();
        assert_eq!(t.len(), 18);
        for (i, u) in t.iter().enumerate() {
            assert!((contour_value(u, &[0.0; 3], &[1.0; 3]) - 1.0).abs() < 1e-15);
            for v in &t[i + 1..] {
                assert_ne!(u, v);
            }
        }
        let f = template_directions(25).unwrap();
        assert_eq!(f.len(), 25);
        assert!(f.iter().all(|u| (contour_value(u, &[0.0; 3], &[1.0; 3]) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn unit_sphere_samples_give_unit_radius() {
        let pts: Vec<[f64; 3]> = template_directions(18).unwrap();
        let ds = Dataset::new(vec![trace_of(&pts)], "mem");
        let cb = build_spherical_codebook(&ds, 18).unwrap();
        assert!((cb.radii()[0] - 1.0).abs() < 1e-12);
        for c in cb.codewords() {
            let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spherical_radius_is_mean_norm() {
        let mut rng = crate::rng::seeded(3);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.5..0.0)])
            .collect();
        let oracle: f64 = pts.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).sum::<f64>()
            / pts.len() as f64;
        let ds = Dataset::new(vec![trace_of(&pts[..250]), trace_of(&pts[250..])], "mem");
        let cb = build_spherical_codebook(&ds, 18).unwrap();
        for c in cb.codewords() {
            let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            assert!((n - oracle).abs() <= 1e-9 * oracle);
        }
    }

    #[test]
    fn still_phone_sphere_stays_at_origin_ellipse_moves() {
        let pts: Vec<[f64; 3]> = (0..50).map(|i| [0.001 * (i % 3) as f64, 0.0, -1.0]).collect();
        let tr = trace_of(&pts);
        let ds = Dataset::new(vec![tr.clone()], "mem");
        assert_eq!(build_spherical_codebook(&ds, 18).unwrap().center(), [0.0; 3]);
        let e = build_elliptical_codebook(&[&tr], 18).unwrap();
        assert!((e.center()[2] + 1.0).abs() < 1e-12);
        assert!(e.center()[0].abs() < 0.01);
        // zero variance on y and z is floored, not an error
        assert_eq!(e.radii()[1], SIGMA_FLOOR);
    }

    #[test]
    fn anisotropic_cloud_codewords_follow_template() {
        let mut rng = crate::rng::seeded(11);
        let sd = [2.0, 1.0, 0.5];
        let mu = [0.3, -0.2, -1.0];
        let normals: Vec<Normal<f64>> = (0..3).map(|k| Normal::new(mu[k], sd[k]).unwrap()).collect();
        let pts: Vec<[f64; 3]> =
            (0..4000).map(|_| [normals[0].sample(&mut rng), normals[1].sample(&mut rng), normals[2].sample(&mut rng)]).collect();
        let cb = build_elliptical_codebook(&[&trace_of(&pts)], 18).unwrap();
        let r = cb.radii();
        let c = cb.center();
        for k in 0..3 {
            assert!((r[k] - sd[k]).abs() < 0.1 * sd[k], "radius {k}: {}", r[k]);
        }
        let tpl = template_directions(18).unwrap();
        for (cw, u) in cb.codewords().iter().zip(&tpl) {
            for k in 0..3 {
                assert!((cw[k] - (u[k] * r[k] + c[k])).abs() < 1e-12);
            }
            assert!((contour_value(cw, &c, &r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn isotropic_unit_cloud_degenerates_to_sphere() {
        let mut rng = crate::rng::seeded(5);
        let n = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<[f64; 3]> = (0..20000).map(|_| [n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)]).collect();
        let cb = build_elliptical_codebook(&[&trace_of(&pts)], 18).unwrap();
        for k in 0..3 {
            assert!((cb.radii()[k] - 1.0).abs() < 0.03);
            assert!(cb.center()[k].abs() < 0.03);
        }
    }

    #[test]
    fn off_contour_codebook_rejected() {
        let err = Codebook::new(vec![[1.0, 0.0, 0.0], [0.5, 0.0, 0.0]], CodebookShape::Spherical, [0.0; 3], [1.0; 3]);
        assert!(err.is_err());
        assert!(Codebook::new(vec![[1.0, 0.0, 0.0]], CodebookShape::Spherical, [0.0; 3], [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn empty_inputs_error() {
        assert!(build_spherical_codebook(&Dataset::default(), 18).is_err());
        assert!(build_elliptical_codebook(&[], 18).is_err());
    }
}
