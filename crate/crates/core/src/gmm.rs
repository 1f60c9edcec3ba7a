//! One-dimensional Gaussian mixtures fitted by EM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::SIGMA_FLOOR;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_COMPONENTS: usize = 3;
pub const MAX_ITERS: usize = 200;
pub const TOL: f64 = 1e-8;
/// Fewer than `MIN_POINTS_PER_COMPONENT * k` points falls back to one Gaussian.
pub const MIN_POINTS_PER_COMPONENT: usize = 3;

const WEIGHT_FLOOR: f64 = 1e-300;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl GaussianComponent {
    #[inline]
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - LN_SQRT_2PI
    }
}

/// Mixture with components sorted by ascending mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub components: Vec<GaussianComponent>,
    /// Set when too little data was available and a single Gaussian was fitted.
    #[serde(default)]
    pub fallback: bool,
}

impl Mixture {
    pub fn single(mean: f64, std: f64) -> Self {
        Mixture {
            components: vec![GaussianComponent { weight: 1.0, mean, std: std.max(SIGMA_FLOOR) }],
            fallback: true,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        log_sum_exp(self.components.iter().map(|c| c.weight.ln() + c.ln_pdf(x)))
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        data.iter().map(|&x| self.ln_pdf(x)).sum()
    }

    /// Midpoint rule: pick the component whose mean is nearest along the
    /// sorted means, splitting at `(μ_c + μ_{c+1}) / 2`.
    pub fn select(&self, d: f64) -> &GaussianComponent {
        let cs = &self.components;
        for i in 0..cs.len() - 1 {
            if d < 0.5 * (cs[i].mean + cs[i + 1].mean) {
                return &cs[i];
            }
        }
        &cs[cs.len() - 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub mixture: Mixture,
    /// Data log-likelihood of the parameters at the start of each EM step,
    /// followed by the final parameters' log-likelihood.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `exp(x_i) / Σ exp(x_j)`, shifted by the maximum so equal inputs give
/// exactly equal outputs. `None` when every entry is `-∞` or one is NaN.
pub(crate) fn normalize_log(xs: &[f64]) -> Option<Vec<f64>> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || xs.iter().any(|x| x.is_nan()) {
        return None;
    }
    let w: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = w.iter().sum();
    Some(w.into_iter().map(|x| x / total).collect())
}

fn mean_std(data: &[f64]) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, SIGMA_FLOOR);
    }
    let n = data.len() as f64;
    let m = data.iter().sum::<f64>() / n;
    let v = data.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Fits a `k`-component mixture by EM with k-means++ style seeding.
///
/// With fewer than `3k` points the result is a single Gaussian at the sample
/// mean and standard deviation, flagged as a fallback.
pub fn fit_gmm(data: &[f64], k: usize, seed: u64) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if let Some(x) = data.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("non-finite residual {x}")));
    }
    if data.len() < MIN_POINTS_PER_COMPONENT * k || k == 1 {
        let (m, s) = mean_std(data);
        let mut mixture = Mixture::single(m, s);
        mixture.fallback = k != 1 || data.is_empty();
        let ll = mixture.log_likelihood(data);
        return Ok(GmmFit { mixture, log_likelihoods: vec![ll], iterations: 0, converged: true });
    }

    let mut rng = rng::seeded(seed);
    let (_, global_std) = mean_std(data);
    let mut comps: Vec<GaussianComponent> = seed_means(data, k, &mut rng)
        .into_iter()
        .map(|mean| GaussianComponent { weight: 1.0 / k as f64, mean, std: global_std.max(SIGMA_FLOOR) })
        .collect();

    let n = data.len();
    let mut resp = vec![0.0; n * k];
    let mut lls = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut logp = vec![0.0; k];
    for _ in 0..MAX_ITERS {
        // E step
        let mut ll = 0.0;
        for (i, &x) in data.iter().enumerate() {
            for (c, comp) in comps.iter().enumerate() {
                logp[c] = comp.weight.ln() + comp.ln_pdf(x);
            }
            let lse = log_sum_exp(logp.iter().copied());
            ll += lse;
            for c in 0..k {
                resp[i * k + c] = (logp[c] - lse).exp();
            }
        }
        if let Some(&prev) = lls.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() <= TOL * ll.abs().max(1.0) {
                lls.push(ll);
                converged = true;
                break;
            }
        }
        lls.push(ll);
        iterations += 1;

        // M step
        for (c, comp) in comps.iter_mut().enumerate() {
            let nc: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            if nc <= 0.0 {
                comp.weight = WEIGHT_FLOOR;
                continue;
            }
            let mean = (0..n).map(|i| resp[i * k + c] * data[i]).sum::<f64>() / nc;
            let var = (0..n).map(|i| resp[i * k + c] * (data[i] - mean).powi(2)).sum::<f64>() / nc;
            comp.mean = mean;
            comp.std = var.sqrt().max(SIGMA_FLOOR);
            comp.weight = (nc / n as f64).max(WEIGHT_FLOOR);
        }
        let wsum: f64 = comps.iter().map(|c| c.weight).sum();
        comps.iter_mut().for_each(|c| c.weight /= wsum);
    }

    comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    let mixture = Mixture { components: comps, fallback: false };
    if !converged {
        lls.push(mixture.log_likelihood(data));
    }
    Ok(GmmFit { mixture, log_likelihoods: lls, iterations, converged })
}

/// k-means++ seeding: first mean uniform over the data, the rest drawn with
/// probability proportional to squared distance from the nearest chosen mean.
fn seed_means<R: Rng>(data: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut means = vec![data[rng.random_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|x| (x - means[0]).powi(2)).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            data[pick]
        } else {
            data[rng.random_range(0..data.len())]
        };
        means.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min((x - next).powi(2));
        }
    }
    means
}
