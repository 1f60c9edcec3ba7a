//! Discrete hidden Markov models: scaled forward/backward, and multi-sequence
//! Baum-Welch for ergodic and banded left-to-right topologies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_STATES: usize = 8;
pub const DEFAULT_BAND: usize = 3;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_EMISSION_FLOOR: f64 = 1e-6;

const STOCHASTIC_TOL: f64 = 1e-9;
/// Initial parameters are scaled by `1 + PERTURBATION·u`, `u ∈ [-1, 1]`,
/// before renormalizing, which keeps every entry within 1% of uniform.
const PERTURBATION: f64 = 0.004;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Topology {
    Ergodic,
    LeftToRight { band: usize },
}

impl Topology {
    pub fn left_to_right(band: i64) -> Result<Self> {
        if band < 0 {
            return Err(Error::invalid(format!("band must be non-negative, got {band}")));
        }
        Ok(Topology::LeftToRight { band: band as usize })
    }

    #[inline]
    pub fn allows(self, i: usize, j: usize) -> bool {
        match self {
            Topology::Ergodic => true,
            Topology::LeftToRight { band } => j >= i && j - i <= band,
        }
    }

    /// Allowed-transition mask for `n` states.
    pub fn mask(self, n: usize) -> Vec<Vec<bool>> {
        (0..n).map(|i| (0..n).map(|j| self.allows(i, j)).collect()).collect()
    }
}

impl Default for Topology {
    fn default() -> Self {
        Topology::LeftToRight { band: DEFAULT_BAND }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Ergodic => f.write_str("ergodic"),
            Topology::LeftToRight { band } => write!(f, "ltr:{band}"),
        }
    }
}

/// Accepts `ergodic`, `ltr`, `ltr:<band>`, `left_to_right[:<band>]`.
impl FromStr for Topology {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (head, band) = match s.split_once(':') {
            Some((h, b)) => (h, Some(b)),
            None => (s, None),
        };
        match head {
            "ergodic" if band.is_none() => Ok(Topology::Ergodic),
            "ltr" | "left_to_right" | "left-to-right" => {
                let band = match band {
                    Some(b) => b.trim().parse::<i64>().map_err(|_| Error::invalid(format!("bad band `{b}`")))?,
                    None => DEFAULT_BAND as i64,
                };
                Topology::left_to_right(band)
            }
            _ => Err(Error::invalid(format!("unknown topology `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HmmRepr", into = "HmmRepr")]
pub struct Hmm {
    topology: Topology,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    pi: Vec<f64>,
    /// Non-zero incoming transitions per state, `(from, a_from_to)`.
    preds: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct HmmRepr {
    n_states: usize,
    n_symbols: usize,
    topology: Topology,
    pi: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl TryFrom<HmmRepr> for Hmm {
    type Error = Error;
    fn try_from(r: HmmRepr) -> Result<Self> {
        let hmm = Hmm::new(r.a, r.b, r.pi, r.topology)?;
        if hmm.n_states() != r.n_states || hmm.n_symbols() != r.n_symbols {
            return Err(Error::Format("HMM dimensions disagree with its matrices".into()));
        }
        Ok(hmm)
    }
}

impl From<Hmm> for HmmRepr {
    fn from(h: Hmm) -> Self {
        HmmRepr { n_states: h.n_states(), n_symbols: h.n_symbols(), topology: h.topology, pi: h.pi, a: h.a, b: h.b }
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl Hmm {
    /// Validates shapes, stochasticity and the topology mask.
    pub fn new(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, pi: Vec<f64>, topology: Topology) -> Result<Self> {
        let n = pi.len();
        if n == 0 {
            return Err(Error::invalid("HMM needs at least one state"));
        }
        if a.len() != n || a.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("transition matrix must be n_states × n_states"));
        }
        let m = b.first().map_or(0, Vec::len);
        if m == 0 || b.len() != n || b.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("emission matrix must be n_states × n_symbols"));
        }
        check_distribution(&pi, "initial distribution")?;
        for (i, row) in a.iter().enumerate() {
            check_distribution(row, &format!("transition row {i}"))?;
            if let Some(j) = (0..n).find(|&j| row[j] != 0.0 && !topology.allows(i, j)) {
                return Err(Error::invalid(format!("transition {i}→{j} is forbidden by {topology}")));
            }
        }
        for (i, row) in b.iter().enumerate() {
            check_distribution(row, &format!("emission row {i}"))?;
        }
        let preds = (0..n)
            .map(|j| (0..n).filter(|&i| a[i][j] > 0.0).map(|i| (i, a[i][j])).collect())
            .collect();
        Ok(Hmm { topology, a, b, pi, preds })
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.b[0].len()
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn a(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn b(&self) -> &[Vec<f64>] {
        &self.b
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    fn check_obs(&self, obs: &[usize]) -> Result<()> {
        if obs.is_empty() {
            return Err(Error::invalid("observation sequence is empty"));
        }
        let m = self.n_symbols();
        match obs.iter().find(|&&s| s >= m) {
            Some(&symbol) => Err(Error::SymbolOutOfRange { symbol, n_symbols: m }),
            None => Ok(()),
        }
    }

    /// `ln P(obs | θ)` by the scaled forward recursion; `-∞` when the
    /// sequence is impossible.
    pub fn log_likelihood(&self, obs: &[usize]) -> Result<f64> {
        self.check_obs(obs)?;
        Ok(self.log_likelihood_unchecked(obs, &mut ForwardScratch::default()))
    }

    /// Forward pass without symbol validation, reusing `scratch` buffers.
    /// Symbols must be `< n_symbols`.
    pub fn log_likelihood_unchecked(&self, obs: &[usize], scratch: &mut ForwardScratch) -> f64 {
        let n = self.n_states();
        let ForwardScratch { cur, next } = scratch;
        cur.clear();
        cur.extend((0..n).map(|j| self.pi[j] * self.b[j][obs[0]]));
        let mut ll = 0.0;
        let c: f64 = cur.iter().sum();
        if c <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ll += c.ln();
        cur.iter_mut().for_each(|x| *x /= c);
        for &o in &obs[1..] {
            next.clear();
            next.extend((0..n).map(|j| {
                let s: f64 = self.preds[j].iter().map(|&(i, a)| cur[i] * a).sum();
                s * self.b[j][o]
            }));
            let c: f64 = next.iter().sum();
            if c <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ll += c.ln();
            let inv = 1.0 / c;
            next.iter_mut().for_each(|x| *x *= inv);
            std::mem::swap(cur, next);
        }
        ll
    }

    /// State posteriors `γ_t(i)`, transition posteriors `ξ_t(i,j)` and the
    /// log-likelihood.
    pub fn forward_backward(&self, obs: &[usize]) -> Result<Posteriors> {
        self.check_obs(obs)?;
        let n = self.n_states();
        let t_len = obs.len();
        let (alpha, scale) = self.scaled_forward(obs).ok_or(Error::ImpossibleObservation)?;
        let beta = self.scaled_backward(obs, &scale);
        let gamma: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                let row: Vec<f64> = (0..n).map(|i| alpha[t][i] * beta[t][i]).collect();
                let s: f64 = row.iter().sum();
                row.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let xi = (0..t_len - 1)
            .map(|t| {
                let mut m = vec![vec![0.0; n]; n];
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let v = alpha[t][i] * self.a[i][j] * self.b[j][obs[t + 1]] * beta[t + 1][j];
                        m[i][j] = v;
                        s += v;
                    }
                }
                m.iter_mut().flatten().for_each(|x| *x /= s);
                m
            })
            .collect();
        let log_likelihood = scale.iter().map(|c| c.ln()).sum();
        Ok(Posteriors { gamma, xi, log_likelihood })
    }

    /// Normalized forward variables and per-step scale factors, or `None`
    /// when some prefix has probability zero.
    fn scaled_forward(&self, obs: &[usize]) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        let n = self.n_states();
        let mut alpha = Vec::with_capacity(obs.len());
        let mut scale = Vec::with_capacity(obs.len());
        let mut row: Vec<f64> = (0..n).map(|j| self.pi[j] * self.b[j][obs[0]]).collect();
        for t in 0..obs.len() {
            if t > 0 {
                let prev: &Vec<f64> = &alpha[t - 1];
                row = (0..n)
                    .map(|j| self.preds[j].iter().map(|&(i, a)| prev[i] * a).sum::<f64>() * self.b[j][obs[t]])
                    .collect();
            }
            let c: f64 = row.iter().sum();
            if c <= 0.0 {
                return None;
            }
            row.iter_mut().for_each(|x| *x /= c);
            alpha.push(std::mem::take(&mut row));
            scale.push(c);
        }
        Some((alpha, scale))
    }

    fn scaled_backward(&self, obs: &[usize], scale: &[f64]) -> Vec<Vec<f64>> {
        let n = self.n_states();
        let t_len = obs.len();
        let mut beta = vec![vec![0.0; n]; t_len];
        beta[t_len - 1] = vec![1.0; n];
        for t in (0..t_len - 1).rev() {
            for i in 0..n {
                let s: f64 = (0..n).map(|j| self.a[i][j] * self.b[j][obs[t + 1]] * beta[t + 1][j]).sum();
                beta[t][i] = s / scale[t + 1];
            }
        }
        beta
    }

    /// Draws a hidden path and its observations.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let pick = |p: &[f64], rng: &mut R| {
            let mut u: f64 = rng.random();
            for (i, w) in p.iter().enumerate() {
                if u < *w {
                    return i;
                }
                u -= w;
            }
            p.iter().rposition(|w| *w > 0.0).unwrap_or(0)
        };
        let mut out = Vec::with_capacity(len);
        let mut s = pick(&self.pi, rng);
        for t in 0..len {
            if t > 0 {
                s = pick(&self.a[s], rng);
            }
            out.push(pick(&self.b[s], rng));
        }
        out
    }

    /// Add-ε smoothing of the emission rows: `b ← (b + ε) / (1 + Vε)`.
    pub fn with_emission_floor(mut self, eps: f64) -> Self {
        if eps > 0.0 {
            let denom = 1.0 + eps * self.n_symbols() as f64;
            for row in &mut self.b {
                row.iter_mut().for_each(|p| *p = (*p + eps) / denom);
            }
        }
        self
    }
}

/// Reusable buffers for [`Hmm::log_likelihood_unchecked`].
#[derive(Clone, Debug, Default)]
pub struct ForwardScratch {
    cur: Vec<f64>,
    next: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Posteriors {
    /// `gamma[t][i] = P(q_t = i | obs)`.
    pub gamma: Vec<Vec<f64>>,
    /// `xi[t][i][j] = P(q_t = i, q_{t+1} = j | obs)`.
    pub xi: Vec<Vec<Vec<f64>>>,
    pub log_likelihood: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_states: usize,
    pub n_symbols: usize,
    pub topology: Topology,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Add-ε applied to B once training finishes; 0 disables it.
    pub emission_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_states: DEFAULT_STATES,
            n_symbols: crate::codebook::DEFAULT_CODEBOOK_SIZE,
            topology: Topology::default(),
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            seed: 0,
            emission_floor: DEFAULT_EMISSION_FLOOR,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_symbols == 0 {
            return Err(Error::invalid("n_states and n_symbols must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if !(self.emission_floor >= 0.0 && self.emission_floor.is_finite()) {
            return Err(Error::invalid("emission_floor must be a non-negative number"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Total training log-likelihood before each EM step, then after the last.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// States whose rows were re-seeded after losing all occupancy.
    pub reseeded_states: Vec<usize>,
}

fn perturbed_uniform<R: Rng>(allowed: impl Iterator<Item = bool>, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = allowed
        .map(|ok| if ok { 1.0 + PERTURBATION * rng.random_range(-1.0..=1.0) } else { 0.0 })
        .collect();
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= s);
    row
}

/// Initial model: uniform over allowed entries with seeded perturbation.
/// Left-to-right chains start in state 0.
pub fn make_topology(topology: Topology, n_states: usize, n_symbols: usize, seed: u64) -> Result<Hmm> {
    if n_states == 0 || n_symbols == 0 {
        return Err(Error::invalid("n_states and n_symbols must be positive"));
    }
    let mut rng = rng::seeded(seed);
    let a = (0..n_states).map(|i| perturbed_uniform((0..n_states).map(|j| topology.allows(i, j)), &mut rng)).collect();
    let b = (0..n_states).map(|_| perturbed_uniform((0..n_symbols).map(|_| true), &mut rng)).collect();
    let pi = match topology {
        Topology::Ergodic => perturbed_uniform((0..n_states).map(|_| true), &mut rng),
        Topology::LeftToRight { .. } => {
            let mut pi = vec![0.0; n_states];
            pi[0] = 1.0;
            pi
        }
    };
    Hmm::new(a, b, pi, topology)
}

fn uniform_allowed(allowed: impl Iterator<Item = bool>) -> Vec<f64> {
    let row: Vec<f64> = allowed.map(|ok| if ok { 1.0 } else { 0.0 }).collect();
    let s: f64 = row.iter().sum();
    row.into_iter().map(|x| x / s).collect()
}

/// Result of one re-estimation step.
#[derive(Clone, Debug, PartialEq)]
pub struct EmStep {
    pub hmm: Hmm,
    /// Total log-likelihood of the sequences under the *input* model.
    pub log_likelihood: f64,
    pub reseeded_states: Vec<usize>,
}

/// One multi-sequence Baum-Welch update. Expected counts are accumulated
/// over all sequences before re-estimating.
pub fn baum_welch_step(hmm: &Hmm, sequences: &[Vec<usize>]) -> Result<EmStep> {
    if sequences.is_empty() {
        return Err(Error::invalid("training needs at least one sequence"));
    }
    let n = hmm.n_states();
    let m = hmm.n_symbols();
    let mut pi_acc = vec![0.0; n];
    let mut a_acc = vec![vec![0.0; n]; n];
    let mut b_acc = vec![vec![0.0; m]; n];
    let mut total_ll = 0.0;
    for obs in sequences {
        let post = hmm.forward_backward(obs)?;
        total_ll += post.log_likelihood;
        for i in 0..n {
            pi_acc[i] += post.gamma[0][i];
        }
        for (t, g) in post.gamma.iter().enumerate() {
            for i in 0..n {
                b_acc[i][obs[t]] += g[i];
            }
        }
        for x in &post.xi {
            for i in 0..n {
                for j in 0..n {
                    a_acc[i][j] += x[i][j];
                }
            }
        }
    }

    let topology = hmm.topology;
    let mut reseeded = Vec::new();
    let pi_sum: f64 = pi_acc.iter().sum();
    let pi: Vec<f64> = pi_acc.iter().map(|x| x / pi_sum).collect();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let a_sum: f64 = a_acc[i].iter().sum();
        let b_sum: f64 = b_acc[i].iter().sum();
        // A state whose expected transitions are zero is either unreachable
        // or only ever final; its outgoing row keeps the current values in
        // the latter case, and is re-seeded when the state is fully starved.
        if b_sum <= 0.0 {
            reseeded.push(i);
            a.push(uniform_allowed((0..n).map(|j| topology.allows(i, j))));
            b.push(vec![1.0 / m as f64; m]);
            continue;
        }
        if a_sum <= 0.0 {
            a.push(hmm.a[i].clone());
        } else {
            a.push(a_acc[i].iter().map(|x| x / a_sum).collect());
        }
        b.push(b_acc[i].iter().map(|x| x / b_sum).collect());
    }
    Ok(EmStep { hmm: Hmm::new(a, b, pi, topology)?, log_likelihood: total_ll, reseeded_states: reseeded })
}

/// Trains from a seeded initial model until the total log-likelihood gain
/// drops below `cfg.tol` or `cfg.max_iters` steps have run, then applies the
/// emission floor.
pub fn baum_welch_train(sequences: &[Vec<usize>], cfg: &TrainConfig) -> Result<(Hmm, TrainReport)> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::invalid("training needs at least one sequence"));
    }
    for obs in sequences {
        if obs.is_empty() {
            return Err(Error::invalid("training sequence is empty"));
        }
        if let Some(&symbol) = obs.iter().find(|&&s| s >= cfg.n_symbols) {
            return Err(Error::SymbolOutOfRange { symbol, n_symbols: cfg.n_symbols });
        }
    }
    let init = make_topology(cfg.topology, cfg.n_states, cfg.n_symbols, cfg.seed)?;
    train_from(init, sequences, cfg)
}

/// Baum-Welch from a given starting model.
pub fn train_from(mut hmm: Hmm, sequences: &[Vec<usize>], cfg: &TrainConfig) -> Result<(Hmm, TrainReport)> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    for _ in 0..cfg.max_iters {
        let step = baum_welch_step(&hmm, sequences)?;
        if let Some(&prev) = report.log_likelihoods.last() {
            if step.log_likelihood - prev < cfg.tol {
                report.log_likelihoods.push(step.log_likelihood);
                report.converged = true;
                break;
            }
        }
        report.log_likelihoods.push(step.log_likelihood);
        for s in step.reseeded_states {
            if !report.reseeded_states.contains(&s) {
                report.reseeded_states.push(s);
            }
        }
        hmm = step.hmm;
        report.iterations += 1;
    }
    if !report.converged {
        let ll: f64 = sequences.iter().map(|o| hmm.log_likelihood(o)).sum::<Result<f64>>()?;
        report.log_likelihoods.push(ll);
    }
    Ok((hmm.with_emission_floor(cfg.emission_floor), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Random HMM with strictly positive parameters.
    fn random_hmm(n: usize, m: usize, seed: u64) -> Hmm {
        let mut r = rng::seeded(seed);
        let mut row = |k: usize| {
            let v: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let a = (0..n).map(|_| row(n)).collect();
        let b = (0..n).map(|_| row(m)).collect();
        let pi = row(n);
        Hmm::new(a, b, pi, Topology::Ergodic).unwrap()
    }

    fn paths(n: usize, t: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..t {
            out = out.into_iter().flat_map(|p| (0..n).map(move |s| [p.clone(), vec![s]].concat())).collect();
        }
        out
    }

    fn path_prob(h: &Hmm, path: &[usize], obs: &[usize]) -> f64 {
        let mut p = h.pi[path[0]] * h.b[path[0]][obs[0]];
        for t in 1..obs.len() {
            p *= h.a[path[t - 1]][path[t]] * h.b[path[t]][obs[t]];
        }
        p
    }

    #[test]
    fn degenerate_one_state() {
        let h = Hmm::new(vec![vec![1.0]], vec![vec![1.0, 0.0]], vec![1.0], Topology::Ergodic).unwrap();
        assert_eq!(h.log_likelihood(&[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(h.log_likelihood(&[0, 1, 0]).unwrap(), f64::NEG_INFINITY);
        let post = h.forward_backward(&[0, 0, 0]).unwrap();
        assert!(post.gamma.iter().flatten().all(|g| *g == 1.0));
        assert!(post.xi.iter().flatten().flatten().all(|x| *x == 1.0));
    }

    #[test]
    fn out_of_range_symbol() {
        let h = random_hmm(2, 3, 1);
        assert!(matches!(h.log_likelihood(&[0, 3]), Err(Error::SymbolOutOfRange { symbol: 3, n_symbols: 3 })));
        assert!(h.log_likelihood(&[]).is_err());
    }

    #[test]
    fn forced_alignment_posteriors_are_indicators() {
        let a = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]];
        let b = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let h = Hmm::new(a, b, vec![1.0, 0.0, 0.0], Topology::LeftToRight { band: 1 }).unwrap();
        let post = h.forward_backward(&[0, 1, 2, 2]).unwrap();
        let want = [0, 1, 2, 2];
        for (t, g) in post.gamma.iter().enumerate() {
            for (i, p) in g.iter().enumerate() {
                assert_eq!(*p, if i == want[t] { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(post.log_likelihood, 0.0);
    }

    #[test]
    fn marginals_match_enumeration() {
        for seed in 0..20 {
            let h = random_hmm(2, 3, seed);
            let obs = [0, 2, 1, 2];
            let post = h.forward_backward(&obs).unwrap();
            let all = paths(2, 4);
            let z: f64 = all.iter().map(|p| path_prob(&h, p, &obs)).sum();
            for t in 0..4 {
                for s in 0..2 {
                    let m: f64 = all.iter().filter(|p| p[t] == s).map(|p| path_prob(&h, p, &obs)).sum::<f64>() / z;
                    assert!((post.gamma[t][s] - m).abs() <= 1e-10 * m.max(1e-300), "{} vs {m}", post.gamma[t][s]);
                }
            }
            for t in 0..3 {
                for i in 0..2 {
                    for j in 0..2 {
                        let m: f64 = all
                            .iter()
                            .filter(|p| p[t] == i && p[t + 1] == j)
                            .map(|p| path_prob(&h, p, &obs))
                            .sum::<f64>()
                            / z;
                        assert!((post.xi[t][i][j] - m).abs() <= 1e-10 * m);
                    }
                }
            }
            assert!((post.log_likelihood - z.ln()).abs() <= 1e-10 * z.ln().abs());
        }
    }

    proptest! {
        #[test]
        fn forward_matches_enumeration(n in 1usize..=3, m in 1usize..=4, seed in any::<u64>(), len in 1usize..=6, oseed in any::<u64>()) {
            let h = random_hmm(n, m, seed);
            let mut r = rng::seeded(oseed);
            let obs: Vec<usize> = (0..len).map(|_| r.random_range(0..m)).collect();
            let z: f64 = paths(n, len).iter().map(|p| path_prob(&h, p, &obs)).sum();
            let ll = h.log_likelihood(&obs).unwrap();
            prop_assert!((ll - z.ln()).abs() <= 1e-10 * (1.0 + z.ln().abs()));
        }

        #[test]
        fn posteriors_normalized(seed in any::<u64>(), len in 1usize..=12) {
            let h = random_hmm(3, 4, seed);
            let mut r = rng::seeded(seed ^ 5);
            let obs: Vec<usize> = (0..len).map(|_| r.random_range(0..4)).collect();
            let post = h.forward_backward(&obs).unwrap();
            for g in &post.gamma {
                prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            for x in &post.xi {
                prop_assert!((x.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_em_step_matches_exact_update() {
        let h = Hmm::new(
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![0.6, 0.4],
            Topology::Ergodic,
        )
        .unwrap();
        let step = baum_welch_step(&h, &[vec![0, 1]]).unwrap();
        let close = |x: f64, y: f64| assert!((x - y).abs() <= 1e-12 * y.abs(), "{x} vs {y}");
        close(step.log_likelihood, 0.209f64.ln());
        close(step.hmm.pi[0], 837.0 / 1045.0);
        close(step.hmm.pi[1], 208.0 / 1045.0);
        close(step.hmm.a[0][0], 7.0 / 31.0);
        close(step.hmm.a[0][1], 24.0 / 31.0);
        close(step.hmm.a[1][0], 1.0 / 13.0);
        close(step.hmm.a[1][1], 12.0 / 13.0);
        close(step.hmm.b[0][0], 837.0 / 1042.0);
        close(step.hmm.b[0][1], 205.0 / 1042.0);
        close(step.hmm.b[1][0], 26.0 / 131.0);
        close(step.hmm.b[1][1], 105.0 / 131.0);
    }

    #[test]
    fn topology_masks() {
        let ltr = Topology::left_to_right(3).unwrap();
        let mask = ltr.mask(8);
        assert_eq!(mask[0], [true, true, true, true, false, false, false, false]);
        assert_eq!(mask[7].iter().filter(|x| **x).count(), 1);
        assert!(mask[7][7]);
        assert!(Topology::Ergodic.mask(2).iter().flatten().all(|x| *x));
        assert!(Topology::left_to_right(-1).is_err());
        assert!("ltr:-2".parse::<Topology>().is_err());
        assert_eq!("ltr:3".parse::<Topology>().unwrap(), ltr);
        assert_eq!("ergodic".parse::<Topology>().unwrap(), Topology::Ergodic);
    }

    #[test]
    fn initial_model_is_near_uniform() {
        let h = make_topology(Topology::default(), 8, 18, 42).unwrap();
        for (i, row) in h.a.iter().enumerate() {
            let allowed = (0..8).filter(|&j| h.topology.allows(i, j)).count() as f64;
            for (j, p) in row.iter().enumerate() {
                if h.topology.allows(i, j) {
                    assert!((p * allowed - 1.0).abs() <= 0.01, "{p}");
                } else {
                    assert_eq!(*p, 0.0);
                }
            }
        }
        for p in h.b.iter().flatten() {
            assert!((p * 18.0 - 1.0).abs() <= 0.01);
        }
        assert_eq!(h.pi[0], 1.0);
        assert_eq!(make_topology(Topology::default(), 8, 18, 42).unwrap(), h);
        assert_ne!(make_topology(Topology::default(), 8, 18, 43).unwrap(), h);
    }

    #[test]
    fn degenerate_training_converges() {
        let cfg = TrainConfig { n_states: 1, n_symbols: 3, emission_floor: 0.0, ..TrainConfig::default() };
        let (h, report) = baum_welch_train(&[vec![0, 0, 0], vec![0, 0, 0]], &cfg).unwrap();
        assert!((h.b[0][0] - 1.0).abs() < 1e-6);
        assert_eq!(h.a[0][0], 1.0);
        assert!(report.converged);
    }

    #[test]
    fn em_is_monotone_and_keeps_topology_zeros() {
        for seed in 0..10 {
            let mut r = rng::seeded(seed);
            let seqs: Vec<Vec<usize>> =
                (0..5).map(|_| (0..r.random_range(5..30)).map(|_| r.random_range(0..6)).collect()).collect();
            for topology in [Topology::Ergodic, Topology::default()] {
                let cfg = TrainConfig { n_states: 5, n_symbols: 6, topology, seed, max_iters: 60, ..Default::default() };
                let (h, report) = baum_welch_train(&seqs, &cfg).unwrap();
                for w in report.log_likelihoods.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "{w:?}");
                }
                for i in 0..5 {
                    for j in 0..5 {
                        if !topology.allows(i, j) {
                            assert_eq!(h.a[i][j], 0.0);
                        }
                    }
                    assert!((h.a[i].iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    assert!((h.b[i].iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn emission_floor_removes_zeros() {
        let h = Hmm::new(vec![vec![1.0]], vec![vec![1.0, 0.0]], vec![1.0], Topology::Ergodic)
            .unwrap()
            .with_emission_floor(1e-6);
        assert!(h.log_likelihood(&[1]).unwrap().is_finite());
        assert!((h.b[0].iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn starved_state_is_reseeded() {
        // State 1 only emits symbol 1, which never occurs, and pi excludes it.
        let h = Hmm::new(
            vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 0.0],
            Topology::Ergodic,
        )
        .unwrap();
        let step = baum_welch_step(&h, &[vec![0, 0, 0]]).unwrap();
        assert_eq!(step.reseeded_states, vec![1]);
        assert_eq!(step.hmm.b[1], vec![0.5, 0.5]);
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let h = make_topology(Topology::default(), 8, 18, 3).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        let back: Hmm = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
    }
}
