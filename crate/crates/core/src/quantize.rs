//! Mapping continuous samples to codeword symbols.
//!
//! Deterministic quantization picks the nearest codeword. Statistical
//! quantization builds a [`CodewordDistribution`] per sample, either from the
//! gesture's measured error model (Gaussian weights over per-axis distances)
//! or from inverse distances, and draws each symbol independently.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, CodebookShape, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::error_model::GmmErrorModel;
use crate::gmm::normalize_log;
use crate::trace::Trace;

/// Distances below this are treated as coincident with the codeword.
pub const DISTANCE_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerKind {
    DeterministicSpherical,
    DeterministicElliptical,
    StatisticalGmm,
    StatisticalRandom,
}

impl QuantizerKind {
    pub const ALL: [QuantizerKind; 4] = [
        QuantizerKind::DeterministicSpherical,
        QuantizerKind::DeterministicElliptical,
        QuantizerKind::StatisticalGmm,
        QuantizerKind::StatisticalRandom,
    ];

    pub fn is_statistical(self) -> bool {
        matches!(self, QuantizerKind::StatisticalGmm | QuantizerKind::StatisticalRandom)
    }

    /// Codebook family used at training time.
    pub fn codebook_shape(self) -> CodebookShape {
        match self {
            QuantizerKind::DeterministicSpherical => CodebookShape::Spherical,
            _ => CodebookShape::Elliptical,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuantizerKind::DeterministicSpherical => "deterministic_spherical",
            QuantizerKind::DeterministicElliptical => "deterministic_elliptical",
            QuantizerKind::StatisticalGmm => "statistical_gmm",
            QuantizerKind::StatisticalRandom => "statistical_random",
        }
    }
}

impl fmt::Display for QuantizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuantizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "deterministic_spherical" | "spherical" => QuantizerKind::DeterministicSpherical,
            "deterministic_elliptical" | "elliptical" => QuantizerKind::DeterministicElliptical,
            "statistical_gmm" | "gmm" => QuantizerKind::StatisticalGmm,
            "statistical_random" | "random" => QuantizerKind::StatisticalRandom,
            other => return Err(Error::invalid(format!("unknown quantizer `{other}`"))),
        })
    }
}

/// Probability of mapping one sample to each codeword.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodewordDistribution {
    probabilities: Vec<f64>,
}

impl CodewordDistribution {
    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("codeword weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("codeword weights sum to zero"));
        }
        Ok(CodewordDistribution { probabilities: weights.into_iter().map(|w| w / total).collect() })
    }

    /// Normalizes log-weights; all `-∞` gives a uniform distribution.
    pub fn from_log_weights(logw: &[f64]) -> Self {
        let n = logw.len();
        CodewordDistribution { probabilities: normalize_log(logw).unwrap_or_else(|| vec![1.0 / n as f64; n]) }
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut probabilities = vec![0.0; n];
        probabilities[at] = 1.0;
        CodewordDistribution { probabilities }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Lowest index among the most probable codewords.
    pub fn argmax(&self) -> usize {
        argmin_by(&self.probabilities, |p| -p)
    }

    fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = self
            .probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // guard against rounding so a uniform draw in [0,1) always lands
        let last_nonzero = self.probabilities.iter().rposition(|p| *p > 0.0).unwrap_or(cdf.len() - 1);
        for c in &mut cdf[last_nonzero..] {
            *c = f64::INFINITY;
        }
        cdf
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        draw_from_cdf(&self.cdf(), rng)
    }
}

fn draw_from_cdf<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

fn argmin_by(xs: &[f64], key: impl Fn(f64) -> f64) -> usize {
    let mut best = 0;
    let mut best_key = key(xs[0]);
    for (i, &x) in xs.iter().enumerate().skip(1) {
        let k = key(x);
        if k < best_key {
            best = i;
            best_key = k;
        }
    }
    best
}

#[inline]
fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Index of the nearest codeword (Euclidean); ties go to the lowest index.
pub fn nearest_codeword(p: &[f64; 3], codebook: &Codebook) -> usize {
    let cws = codebook.codewords();
    let mut best = 0;
    let mut best_d = sq_dist(p, &cws[0]);
    for (i, c) in cws.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

pub fn quantize_points(points: &[[f64; 3]], codebook: &Codebook) -> Vec<usize> {
    points.iter().map(|p| nearest_codeword(p, codebook)).collect()
}

/// Nearest-codeword symbol for every sample of the trace.
pub fn quantize_deterministic(trace: &Trace, codebook: &Codebook) -> Vec<usize> {
    quantize_points(&trace.points(), codebook)
}

/// Normalized Gaussian weights over codewords from per-axis signed distances
/// `d[i][k]` and error parameters `mu[i][k]`, `sigma[i][k]`:
///
/// `P(i) ∝ (2π σ²_{i,x} σ²_{i,y} σ²_{i,z})^{-1/2} · exp(−Σ_k (d_{i,k} − μ_{i,k})² / 2σ²_{i,k})`
///
/// Evaluated in log space; sigmas are clamped to [`SIGMA_FLOOR`].
pub fn gaussian_codeword_weights(d: &[[f64; 3]], mu: &[[f64; 3]], sigma: &[[f64; 3]]) -> CodewordDistribution {
    let logw: Vec<f64> = (0..d.len())
        .map(|i| gaussian_log_weight(&d[i], &mu[i], &sigma[i]))
        .collect();
    CodewordDistribution::from_log_weights(&logw)
}

#[inline]
fn gaussian_log_weight(d: &[f64; 3], mu: &[f64; 3], sigma: &[f64; 3]) -> f64 {
    let s = sigma.map(|s| s.max(SIGMA_FLOOR));
    let norm = -0.5 * (2.0 * std::f64::consts::PI * (s[0] * s[1] * s[2]).powi(2)).ln();
    let quad: f64 = (0..3).map(|k| (d[k] - mu[k]).powi(2) / (2.0 * s[k] * s[k])).sum();
    norm - quad
}

/// Error-model driven codeword distribution for one sample. Per-axis
/// parameters come from [`GmmErrorModel::axis_params`].
pub fn codeword_probabilities_gmm(
    sample: &[f64; 3],
    codebook: &Codebook,
    error_model: &GmmErrorModel,
) -> Result<CodewordDistribution> {
    if error_model.len() != codebook.len() {
        return Err(Error::invalid(format!(
            "error model covers {} codewords, codebook has {}",
            error_model.len(),
            codebook.len()
        )));
    }
    let logw: Vec<f64> = codebook
        .codewords()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let d = [sample[0] - c[0], sample[1] - c[1], sample[2] - c[2]];
            let (mu, sigma) = error_model.axis_params(i, &d);
            gaussian_log_weight(&d, &mu, &sigma)
        })
        .collect();
    Ok(CodewordDistribution::from_log_weights(&logw))
}

/// `P(i) = (1/d_i) / Σ_j (1/d_j)`; a point mass on the nearest codeword when
/// any distance is below [`DISTANCE_FLOOR`].
pub fn codeword_probabilities_inverse_distance(sample: &[f64; 3], codebook: &Codebook) -> CodewordDistribution {
    let d: Vec<f64> = codebook.codewords().iter().map(|c| sq_dist(sample, c).sqrt()).collect();
    let nearest = argmin_by(&d, |x| x);
    if d[nearest] < DISTANCE_FLOOR {
        return CodewordDistribution::point_mass(d.len(), nearest);
    }
    let inv: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
    let total: f64 = inv.iter().sum();
    CodewordDistribution { probabilities: inv.into_iter().map(|w| w / total).collect() }
}

/// Per-sample codeword distributions for a statistical quantizer.
pub fn codeword_distributions(
    points: &[[f64; 3]],
    codebook: &Codebook,
    kind: QuantizerKind,
    error_model: Option<&GmmErrorModel>,
) -> Result<Vec<CodewordDistribution>> {
    match kind {
        QuantizerKind::StatisticalGmm => {
            let em = error_model.ok_or(Error::MissingErrorModel("statistical_gmm"))?;
            points.iter().map(|p| codeword_probabilities_gmm(p, codebook, em)).collect()
        }
        QuantizerKind::StatisticalRandom => {
            Ok(points.iter().map(|p| codeword_probabilities_inverse_distance(p, codebook)).collect())
        }
        _ => Ok(quantize_points(points, codebook)
            .into_iter()
            .map(|s| CodewordDistribution::point_mass(codebook.len(), s))
            .collect()),
    }
}

/// Precomputed per-sample CDFs for repeated independent draws of an
/// observation sequence from one trace and one codebook.
#[derive(Clone, Debug)]
pub struct SequenceSampler {
    steps: Vec<Step>,
}

#[derive(Clone, Debug)]
enum Step {
    Fixed(usize),
    Cdf(Vec<f64>),
}

impl SequenceSampler {
    pub fn new(
        points: &[[f64; 3]],
        codebook: &Codebook,
        kind: QuantizerKind,
        error_model: Option<&GmmErrorModel>,
    ) -> Result<Self> {
        let steps = if kind.is_statistical() {
            codeword_distributions(points, codebook, kind, error_model)?
                .into_iter()
                .map(|d| {
                    let nz = d.probabilities.iter().filter(|p| **p > 0.0).count();
                    if nz == 1 {
                        Step::Fixed(d.argmax())
                    } else {
                        Step::Cdf(d.cdf())
                    }
                })
                .collect()
        } else {
            quantize_points(points, codebook).into_iter().map(Step::Fixed).collect()
        };
        Ok(SequenceSampler { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        out.extend(self.steps.iter().map(|s| match s {
            Step::Fixed(i) => *i,
            Step::Cdf(cdf) => draw_from_cdf(cdf, rng),
        }));
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.steps.len());
        self.draw_into(rng, &mut v);
        v
    }
}

/// One observation sequence for `trace` under `kind`. Deterministic kinds
/// ignore the RNG; statistical kinds draw each symbol independently.
pub fn sample_observation_sequence<R: Rng + ?Sized>(
    trace: &Trace,
    codebook: &Codebook,
    kind: QuantizerKind,
    error_model: Option<&GmmErrorModel>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    Ok(SequenceSampler::new(&trace.points(), codebook, kind, error_model)?.draw(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{template_directions, CodebookShape};

    fn unit_sphere() -> Codebook {
        Codebook::from_template(18, CodebookShape::Spherical, [0.0; 3], [1.0; 3]).unwrap()
    }

    /// Two codewords at distances 1 and 3 from the origin.
    pub(crate) fn two_word_codebook() -> Codebook {
        Codebook::new(vec![[1.0, 0.0, 0.0], [-3.0, 0.0, 0.0]], CodebookShape::Elliptical, [-1.0, 0.0, 0.0], [2.0, 1.0, 1.0])
            .unwrap()
    }

    #[test]
    fn sample_on_codeword_maps_to_it() {
        let cb = unit_sphere();
        let c7 = cb.codewords()[7];
        assert_eq!(nearest_codeword(&c7, &cb), 7);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let axes = template_directions(18).unwrap()[..6].to_vec();
        let cb = Codebook::new(axes, CodebookShape::Spherical, [0.0; 3], [1.0; 3]).unwrap();
        // equidistant from +y (2) and -z (5), farther from the rest
        let q = [0.0, 0.5, -0.5];
        assert_eq!(sq_dist(&q, &cb.codewords()[2]), sq_dist(&q, &cb.codewords()[5]));
        assert_eq!(nearest_codeword(&q, &cb), 2);
        // at the center every codeword ties
        assert_eq!(nearest_codeword(&[0.0; 3], &unit_sphere()), 0);
    }

    #[test]
    fn two_way_tie_picks_lower() {
        let cb = Codebook::new(
            vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
            CodebookShape::Spherical,
            [0.0; 3],
            [1.0; 3],
        )
        .unwrap();
        assert_eq!(nearest_codeword(&[0.0, 0.3, 0.1], &cb), 0);
    }

    #[test]
    fn deterministic_matches_brute_force_on_circle() {
        let cb = unit_sphere();
        let tpl = template_directions(18).unwrap();
        let points: Vec<[f64; 3]> = (0..200)
            .map(|i| {
                let a = i as f64 * 0.0314159;
                [0.8 * a.cos(), 0.8 * a.sin(), -0.6]
            })
            .collect();
        let got = quantize_points(&points, &cb);
        for (p, g) in points.iter().zip(got) {
            let mut best = (f64::INFINITY, 0);
            for (i, u) in tpl.iter().enumerate() {
                let d = ((p[0] - u[0]).powi(2) + (p[1] - u[1]).powi(2) + (p[2] - u[2]).powi(2)).sqrt();
                if d < best.0 {
                    best = (d, i);
                }
            }
            assert_eq!(g, best.1);
        }
    }

    #[test]
    fn inverse_distance_examples() {
        let d = codeword_probabilities_inverse_distance(&[0.0; 3], &two_word_codebook());
        assert!((d.probabilities()[0] - 0.75).abs() < 1e-15);
        assert!((d.probabilities()[1] - 0.25).abs() < 1e-15);

        let cb = unit_sphere();
        let u = codeword_probabilities_inverse_distance(&[0.0; 3], &cb);
        assert!(u.probabilities().iter().all(|p| (p - 1.0 / 18.0).abs() < 1e-15));

        let c4 = cb.codewords()[4];
        let pm = codeword_probabilities_inverse_distance(&c4, &cb);
        assert_eq!(pm.probabilities()[4], 1.0);
        assert_eq!(pm.probabilities().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn gaussian_weights_match_high_precision_oracle() {
        // frozen from a 50-digit evaluation of the normalized weights
        let d = [[0.1, -0.2, 0.05], [0.3, 0.1, -0.1], [-0.25, 0.4, 0.2]];
        let mu = [[0.0, 0.01, -0.02], [0.05, 0.0, 0.0], [-0.03, 0.02, 0.01]];
        let sg = [[0.1, 0.15, 0.2], [0.2, 0.1, 0.12], [0.3, 0.25, 0.2]];
        let want = [0.4369121197976806863111755, 0.5005229266022984161743076, 0.06256495360002089751451688];
        let got = gaussian_codeword_weights(&d, &mu, &sg);
        for (g, w) in got.probabilities().iter().zip(want) {
            assert!(((g - w) / w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn gaussian_symmetric_two_codewords_is_half_half() {
        let d = [[0.2, 0.0, 0.0], [-0.2, 0.0, 0.0]];
        let mu = [[0.0; 3]; 2];
        let sg = [[0.1; 3]; 2];
        let p = gaussian_codeword_weights(&d, &mu, &sg);
        assert_eq!(p.probabilities(), &[0.5, 0.5]);
    }

    #[test]
    fn deterministic_kind_ignores_rng() {
        let cb = unit_sphere();
        let tr = Trace::from_rows(&[[0.0, 0.9, 0.1, 0.0], [0.1, 0.0, 0.0, -1.0], [0.2, 0.0, 0.7, 0.7]]).unwrap();
        let det = quantize_deterministic(&tr, &cb);
        for seed in 0..5 {
            let mut r = crate::rng::seeded(seed);
            let s = sample_observation_sequence(&tr, &cb, QuantizerKind::DeterministicElliptical, None, &mut r).unwrap();
            assert_eq!(s, det);
        }
    }

    #[test]
    fn gmm_kind_without_error_model_errors() {
        let cb = unit_sphere();
        let tr = Trace::from_rows(&[[0.0, 0.9, 0.1, 0.0], [0.1, 0.0, 0.0, -1.0]]).unwrap();
        let mut r = crate::rng::seeded(0);
        let e = sample_observation_sequence(&tr, &cb, QuantizerKind::StatisticalGmm, None, &mut r);
        assert!(matches!(e, Err(Error::MissingErrorModel(_))));
    }

    #[test]
    fn inverse_distance_monte_carlo_frequencies() {
        let cb = two_word_codebook();
        let dist = codeword_probabilities_inverse_distance(&[0.0; 3], &cb);
        let mut r = crate::rng::seeded(42);
        let n = 100_000;
        let hits = (0..n).filter(|_| dist.sample(&mut r) == 0).count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.75).abs() < 0.01, "{f}");
    }

    #[test]
    fn parse_kind_names() {
        assert_eq!("gmm".parse::<QuantizerKind>().unwrap(), QuantizerKind::StatisticalGmm);
        assert_eq!("deterministic_spherical".parse::<QuantizerKind>().unwrap(), QuantizerKind::DeterministicSpherical);
        assert!("kmeans".parse::<QuantizerKind>().is_err());
    }
}
