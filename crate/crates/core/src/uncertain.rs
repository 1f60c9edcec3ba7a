//! A small uncertain-values runtime: lazily sampled values that compose with
//! `map`/`zip`, and a sequential hypothesis test over truth-valued ones.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

type Sampler<T> = dyn Fn(&mut dyn RngCore) -> T + Send + Sync;

/// A distribution over `T`, represented by a sampling function. Sampling is a
/// pure function of the RNG stream.
pub struct Uncertain<T> {
    sampler: Arc<Sampler<T>>,
}

impl<T> Clone for Uncertain<T> {
    fn clone(&self) -> Self {
        Uncertain { sampler: Arc::clone(&self.sampler) }
    }
}

impl<T: 'static> Uncertain<T> {
    pub fn new(f: impl Fn(&mut dyn RngCore) -> T + Send + Sync + 'static) -> Self {
        Uncertain { sampler: Arc::new(f) }
    }

    pub fn constant(v: T) -> Self
    where
        T: Clone + Send + Sync,
    {
        Uncertain::new(move |_| v.clone())
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> T {
        (self.sampler)(rng)
    }

    pub fn map<U: 'static>(&self, f: impl Fn(T) -> U + Send + Sync + 'static) -> Uncertain<U> {
        let s = Arc::clone(&self.sampler);
        Uncertain::new(move |rng| f(s(rng)))
    }

    /// Joint value; `self` is sampled before `other` on each draw.
    pub fn zip<U: 'static>(&self, other: &Uncertain<U>) -> Uncertain<(T, U)> {
        let a = Arc::clone(&self.sampler);
        let b = Arc::clone(&other.sampler);
        Uncertain::new(move |rng| {
            let x = a(rng);
            (x, b(rng))
        })
    }

    pub fn samples(&self, n: usize, rng: &mut dyn RngCore) -> Vec<T> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

impl Uncertain<bool> {
    /// Evidence that `P(self) > cfg.prob`; see [`pr`].
    pub fn pr(&self, cfg: &HypothesisConfig, rng: &mut dyn RngCore) -> Result<bool> {
        pr(self, cfg, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypothesisConfig {
    pub prob: f64,
    pub alpha: f64,
    pub max_samples: usize,
    pub batch: usize,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        HypothesisConfig { prob: 0.5, alpha: 0.1, max_samples: 1000, batch: 50 }
    }
}

impl HypothesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prob > 0.0 && self.prob < 1.0) {
            return Err(Error::invalid(format!("prob must be in (0, 1), got {}", self.prob)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::invalid(format!("alpha must be in (0, 0.5), got {}", self.alpha)));
        }
        if self.batch == 0 || self.max_samples == 0 {
            return Err(Error::invalid("batch and max_samples must be positive"));
        }
        Ok(())
    }

    /// Two-sided normal quantile `Φ⁻¹(1 − α/2)`.
    pub fn z(&self) -> f64 {
        Normal::standard().inverse_cdf(1.0 - self.alpha / 2.0)
    }

    pub fn with_prob(self, prob: f64) -> Self {
        HypothesisConfig { prob, ..self }
    }
}

/// Wald interval `p̂ ± z·sqrt(p̂(1−p̂)/n)`.
pub fn wald_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    let p = successes as f64 / n as f64;
    let half = z * (p * (1.0 - p) / n as f64).sqrt();
    (p - half, p + half)
}

/// Sequential Bernoulli test. Outcomes are pushed one at a time; the
/// interval is checked at every multiple of `batch` and at `max_samples`.
#[derive(Clone, Debug)]
pub struct WaldTest {
    cfg: HypothesisConfig,
    z: f64,
    n: usize,
    successes: usize,
    decision: Option<bool>,
}

impl WaldTest {
    pub fn new(cfg: HypothesisConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(WaldTest { z: cfg.z(), cfg, n: 0, successes: 0, decision: None })
    }

    /// Records one outcome; ignored once the test has decided.
    pub fn push(&mut self, outcome: bool) -> Option<bool> {
        if self.decision.is_some() {
            return self.decision;
        }
        self.n += 1;
        self.successes += outcome as usize;
        if self.n >= self.cfg.max_samples {
            self.decision = Some(self.estimate() > self.cfg.prob);
        } else if self.n.is_multiple_of(self.cfg.batch) {
            let (lo, hi) = wald_interval(self.successes, self.n, self.z);
            if lo > self.cfg.prob {
                self.decision = Some(true);
            } else if hi < self.cfg.prob {
                self.decision = Some(false);
            }
        }
        self.decision
    }

    pub fn decision(&self) -> Option<bool> {
        self.decision
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn estimate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.successes as f64 / self.n as f64
        }
    }
}

/// Sequential test of `P(value) > cfg.prob`: batches are drawn until the
/// Wald interval excludes `prob`, or the point estimate decides at
/// `max_samples`.
pub fn pr(value: &Uncertain<bool>, cfg: &HypothesisConfig, rng: &mut dyn RngCore) -> Result<bool> {
    let mut test = WaldTest::new(*cfg)?;
    loop {
        if let Some(d) = test.push(value.sample(rng)) {
            return Ok(d);
        }
    }
}

/// Supremum of the thresholds at which a [`WaldTest`] run over `outcomes`
/// passes, treating `min(outcomes.len(), max_samples)` as the sample cap.
///
/// The set of passing thresholds is downward closed, so for any `thr`
/// the test passes exactly when `thr < pass_threshold(..)`.
pub fn pass_threshold(outcomes: &[bool], cfg: &HypothesisConfig) -> f64 {
    let z = cfg.z();
    let cap = outcomes.len().min(cfg.max_samples);
    if cap == 0 {
        return 0.0;
    }
    // Thresholds in [lo, hi] are still undecided.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = 0.0f64;
    let mut successes = 0;
    for (i, &o) in outcomes[..cap].iter().enumerate() {
        successes += o as usize;
        let n = i + 1;
        if n == cap {
            let p = successes as f64 / n as f64;
            if p > hi {
                best = best.max(hi.next_up());
            } else if p > lo {
                best = best.max(p);
            }
            break;
        }
        if n % cfg.batch == 0 {
            let (l, u) = wald_interval(successes, n, z);
            // Thresholds below the lower bound pass here.
            if l > hi {
                best = best.max(hi.next_up());
            } else if l > lo {
                best = best.max(l);
            }
            lo = lo.max(l);
            hi = hi.min(u);
            if lo > hi {
                break;
            }
        }
    }
    best
}
