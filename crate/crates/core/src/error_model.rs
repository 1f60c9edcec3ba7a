//! Quantization residuals and the per-codeword error model behind
//! statistical quantization.
//!
//! Residuals are pooled per codeword: each training sample is assigned to its
//! nearest codeword and the signed per-axis difference is recorded there.
//! For every codeword we keep the per-axis mean and standard deviation of
//! those residuals, a 3-component mixture per axis and a 3-component mixture
//! over residual magnitudes. Codewords with fewer than
//! [`MIN_CODEWORD_RESIDUALS`] residuals fall back to the gesture-wide fit.
//!
//! Residual spread inside a codeword's cell is mostly the gesture's own
//! trajectory, not sensor noise. Sensor noise is measured separately with a
//! difference-based estimate: for white noise of variance σ², the deviation
//! of a sample from the mean of its two neighbours has variance 1.5σ², while
//! a smooth trajectory at 50 Hz contributes almost nothing. The scale is taken
//! from the median absolute deviation so stroke corners do not inflate it. By
//! default the codeword weights use the residual mean with this noise σ.

use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, Mixture, DEFAULT_COMPONENTS};
use crate::quantize::nearest_codeword;
use crate::rng::derive_seed;
use crate::trace::Trace;

pub const MIN_CODEWORD_RESIDUALS: usize = 9;

/// Signed per-axis residuals grouped by codeword, plus the same residuals
/// grouped by sample position for inspection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualSet {
    pub per_codeword: Vec<Vec<[f64; 3]>>,
    pub per_position: Vec<Vec<[f64; 3]>>,
    /// Scaled second-difference noise samples, grouped by the codeword of
    /// the centre sample. End samples have none.
    pub noise_per_codeword: Vec<Vec<[f64; 3]>>,
}

impl ResidualSet {
    pub fn all(&self) -> impl Iterator<Item = &[f64; 3]> {
        self.per_codeword.iter().flatten()
    }

    /// Per-axis sensor-noise estimate pooled over every codeword.
    pub fn noise_std(&self) -> [f64; 3] {
        let pooled: Vec<[f64; 3]> = self.noise_per_codeword.iter().flatten().copied().collect();
        axis_noise_scale(&pooled)
    }

    pub fn report(&self) -> ResidualReport {
        let summarize = |index: usize, rs: &[[f64; 3]]| {
            let (mean, std) = axis_stats(rs);
            ResidualSummary { index, count: rs.len(), mean, std }
        };
        ResidualReport {
            per_codeword: self.per_codeword.iter().enumerate().map(|(i, r)| summarize(i, r)).collect(),
            per_position: self.per_position.iter().enumerate().map(|(i, r)| summarize(i, r)).collect(),
        }
    }
}

/// Diagnostic summary of a [`ResidualSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub per_codeword: Vec<ResidualSummary>,
    pub per_position: Vec<ResidualSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub index: usize,
    pub count: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

pub fn compute_residuals(traces: &[&Trace], codebook: &Codebook) -> ResidualSet {
    let mut set = ResidualSet {
        per_codeword: vec![Vec::new(); codebook.len()],
        per_position: Vec::new(),
        noise_per_codeword: vec![Vec::new(); codebook.len()],
    };
    let scale = 1.5f64.sqrt().recip();
    for trace in traces {
        let points = trace.points();
        for (pos, p) in points.iter().enumerate() {
            let i = nearest_codeword(p, codebook);
            let c = codebook.codewords()[i];
            let r = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
            set.per_codeword[i].push(r);
            if set.per_position.len() <= pos {
                set.per_position.resize(pos + 1, Vec::new());
            }
            set.per_position[pos].push(r);
            if pos > 0 && pos + 1 < points.len() {
                let (a, b) = (points[pos - 1], points[pos + 1]);
                set.noise_per_codeword[i].push([0, 1, 2].map(|k| (p[k] - 0.5 * (a[k] + b[k])) * scale));
            }
        }
    }
    set
}

/// Per-axis mean and (population) standard deviation; empty input gives zeros.
pub fn axis_stats(rs: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    if rs.is_empty() {
        return ([0.0; 3], [0.0; 3]);
    }
    let n = rs.len() as f64;
    let mut mean = [0.0; 3];
    for r in rs {
        for k in 0..3 {
            mean[k] += r[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 3];
    for r in rs {
        for k in 0..3 {
            var[k] += (r[k] - mean[k]).powi(2);
        }
    }
    (mean, var.map(|v| (v / n).sqrt()))
}

/// Per-axis robust scale of zero-mean data: `1.4826 · median |x|`, which is
/// the standard deviation for Gaussian data. Empty input gives zeros.
pub fn axis_noise_scale(xs: &[[f64; 3]]) -> [f64; 3] {
    if xs.is_empty() {
        return [0.0; 3];
    }
    [0, 1, 2].map(|k| {
        let mut a: Vec<f64> = xs.iter().map(|x| x[k].abs()).collect();
        a.sort_by(f64::total_cmp);
        let n = a.len();
        let median = if n % 2 == 1 { a[n / 2] } else { 0.5 * (a[n / 2 - 1] + a[n / 2]) };
        1.482_602_218_505_602 * median
    })
}

/// Which per-axis parameters feed the Gaussian codeword weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisParams {
    /// Per-codeword residual mean with the per-codeword sensor-noise σ.
    #[default]
    SensorNoise,
    /// Per-codeword per-axis residual mean and standard deviation.
    Summary,
    /// Per-axis mixture component chosen by the midpoint rule.
    MixtureMidpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodewordError {
    pub residual_count: usize,
    /// Empirical per-axis residual mean.
    pub axis_mean: [f64; 3],
    /// Empirical per-axis residual standard deviation (unfloored).
    pub axis_std: [f64; 3],
    /// Difference-based sensor-noise estimate (unfloored).
    pub noise_std: [f64; 3],
    pub noise_count: usize,
    pub axis_mixtures: [Mixture; 3],
    /// Mixture over residual magnitudes `‖sample − codeword‖`.
    pub magnitude: Mixture,
    /// True when the codeword was too sparse and uses the gesture-wide fit.
    pub inherited: bool,
}

impl CodewordError {
    fn fit(rs: &[[f64; 3]], noise: &[[f64; 3]], seed: u64) -> Result<Self> {
        let (axis_mean, axis_std) = axis_stats(rs);
        let fit_axis = |k: usize| -> Result<Mixture> {
            let xs: Vec<f64> = rs.iter().map(|r| r[k]).collect();
            Ok(fit_gmm(&xs, DEFAULT_COMPONENTS, derive_seed(seed, k as u64))?.mixture)
        };
        let mags: Vec<f64> = rs.iter().map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()).collect();
        Ok(CodewordError {
            residual_count: rs.len(),
            axis_mean,
            axis_std,
            noise_std: axis_noise_scale(noise),
            noise_count: noise.len(),
            axis_mixtures: [fit_axis(0)?, fit_axis(1)?, fit_axis(2)?],
            magnitude: fit_gmm(&mags, DEFAULT_COMPONENTS, derive_seed(seed, 3))?.mixture,
            inherited: false,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmErrorModel {
    pub codewords: Vec<CodewordError>,
    /// Fit over all residuals of the gesture.
    pub global: CodewordError,
    #[serde(default)]
    pub params: AxisParams,
}

impl GmmErrorModel {
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    /// Per-axis `(μ, σ)` used for codeword `i` given the signed per-axis
    /// distance `d` from the sample to that codeword. σ is floored.
    pub fn axis_params(&self, i: usize, d: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
        let cw = &self.codewords[i];
        let src = if cw.inherited { &self.global } else { cw };
        match self.params {
            AxisParams::SensorNoise => {
                let noise = if src.noise_count < MIN_CODEWORD_RESIDUALS { &self.global } else { src };
                (src.axis_mean, noise.noise_std.map(|s| s.max(SIGMA_FLOOR)))
            }
            AxisParams::Summary => (src.axis_mean, src.axis_std.map(|s| s.max(SIGMA_FLOOR))),
            AxisParams::MixtureMidpoint => {
                let mut mu = [0.0; 3];
                let mut sigma = [0.0; 3];
                for k in 0..3 {
                    let c = src.axis_mixtures[k].select(d[k]);
                    mu[k] = c.mean;
                    sigma[k] = c.std.max(SIGMA_FLOOR);
                }
                (mu, sigma)
            }
        }
    }

    pub fn with_params(mut self, params: AxisParams) -> Self {
        self.params = params;
        self
    }
}

/// Measures residuals of `traces` against `codebook` and fits the error model.
pub fn build_error_model(traces: &[&Trace], codebook: &Codebook, seed: u64) -> Result<GmmErrorModel> {
    let residuals = compute_residuals(traces, codebook);
    error_model_from_residuals(&residuals, seed)
}

pub fn error_model_from_residuals(residuals: &ResidualSet, seed: u64) -> Result<GmmErrorModel> {
    if residuals.noise_per_codeword.len() != residuals.per_codeword.len() {
        return Err(Error::invalid("noise samples do not match the codebook"));
    }
    let pooled: Vec<[f64; 3]> = residuals.all().copied().collect();
    let pooled_noise: Vec<[f64; 3]> = residuals.noise_per_codeword.iter().flatten().copied().collect();
    let global = CodewordError::fit(&pooled, &pooled_noise, derive_seed(seed, u64::MAX))?;
    let codewords = residuals
        .per_codeword
        .iter()
        .zip(&residuals.noise_per_codeword)
        .enumerate()
        .map(|(i, (rs, noise))| {
            if rs.len() < MIN_CODEWORD_RESIDUALS {
                let (axis_mean, axis_std) = axis_stats(rs);
                Ok(CodewordError {
                    residual_count: rs.len(),
                    axis_mean,
                    axis_std,
                    noise_std: axis_noise_scale(noise),
                    noise_count: noise.len(),
                    inherited: true,
                    ..global.clone()
                })
            } else {
                CodewordError::fit(rs, noise, derive_seed(seed, i as u64))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GmmErrorModel { codewords, global, params: AxisParams::default() })
}
