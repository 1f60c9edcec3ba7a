//! Bayes classification over per-gesture HMMs.
//!
//! The deterministic classifier quantizes the trace once per gesture
//! codebook and returns the posterior argmax. The statistical classifier
//! draws joint samples: each draw maps the trace through every gesture's
//! statistical quantizer, scores the resulting sequences and records which
//! gesture attains the maximal posterior. Each gesture runs a sequential
//! test of "G_i is maximal" against `thr`; drawing stops once every test has
//! decided or the sample cap is reached.
//!
//! Among the gestures whose test passes, the decision is the one with the
//! highest pass threshold, i.e. the largest `thr` at which its test would
//! still pass on the same draws. Since passing is downward closed in `thr`,
//! the decided gesture is fixed for a given set of draws and only switches
//! to "none" as `thr` grows. Replaying recorded draws therefore yields
//! recall curves that are exactly non-increasing in `thr`.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::normalize_log;
use crate::hmm::{ForwardScratch, Hmm};
use crate::model::GestureModel;
use crate::quantize::{quantize_points, QuantizerKind, SequenceSampler};
use crate::rng;
use crate::trace::Trace;
use crate::uncertain::{pass_threshold, HypothesisConfig, Uncertain, WaldTest};

/// Normalized posterior vector. `degenerate` is set when every joint
/// likelihood was zero and a uniform vector was returned instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub probabilities: Vec<f64>,
    pub degenerate: bool,
}

/// `P(G_k | X) = P(G_k) P(X | G_k) / Σ_j P(G_j) P(X | G_j)`, in log space.
pub fn posterior(log_likelihoods: &[f64], priors: &[f64]) -> Posterior {
    let joint: Vec<f64> = log_likelihoods.iter().zip(priors).map(|(ll, p)| ll + p.ln()).collect();
    match normalize_log(&joint) {
        Some(probabilities) => Posterior { probabilities, degenerate: false },
        None => {
            let n = joint.len();
            Posterior { probabilities: vec![1.0 / n as f64; n], degenerate: true }
        }
    }
}

/// Lowest index attaining the maximum; `None` if all entries are `-∞`.
fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, x) in xs.iter().enumerate() {
        if *x > f64::NEG_INFINITY && best.is_none_or(|b| *x > xs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Installs normalized priors `weights / Σ weights`.
pub fn set_priors(models: &mut [GestureModel], weights: &[f64]) -> Result<()> {
    if weights.len() != models.len() {
        return Err(Error::invalid(format!("{} weights for {} models", weights.len(), models.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::invalid(format!("prior weight {w} is negative or not finite")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("prior weights are all zero"));
    }
    for (m, w) in models.iter_mut().zip(weights) {
        m.prior = w / total;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub quantizer: QuantizerKind,
    pub thr: f64,
    pub hypothesis: HypothesisConfig,
    /// Overrides the models' stored priors when set.
    pub priors: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            quantizer: QuantizerKind::StatisticalGmm,
            thr: 0.5,
            hypothesis: HypothesisConfig::default(),
            priors: None,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self, n_models: usize) -> Result<()> {
        if !(self.thr > 0.0 && self.thr < 1.0) {
            return Err(Error::invalid(format!("thr must be in (0, 1), got {}", self.thr)));
        }
        self.hypothesis.with_prob(self.thr).validate()?;
        if let Some(p) = &self.priors {
            if p.len() != n_models {
                return Err(Error::invalid(format!("{} priors for {n_models} models", p.len())));
            }
            if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::invalid("priors must be non-negative"));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("priors sum to {s}, expected 1")));
            }
        }
        Ok(())
    }

    fn priors(&self, models: &[GestureModel]) -> Vec<f64> {
        self.priors.clone().unwrap_or_else(|| models.iter().map(|m| m.prior).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureEstimate {
    pub label: String,
    /// Deterministic: the posterior. Statistical: fraction of draws in which
    /// this gesture had the maximal posterior.
    pub probability: f64,
    /// Mean posterior over the draws.
    pub mean_posterior: f64,
    /// Largest threshold at which this gesture's test passes on the draws.
    pub confidence: f64,
    pub samples: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    /// `None` (serialized as `null`) on abstention.
    pub decision: Option<String>,
    pub quantizer: QuantizerKind,
    pub thr: f64,
    pub estimates: Vec<GestureEstimate>,
    pub samples_used: usize,
    pub elapsed_ms: f64,
    /// Draws in which every likelihood was zero.
    pub degenerate_draws: usize,
}

impl ClassificationResult {
    pub fn decision_index(&self) -> Option<usize> {
        let d = self.decision.as_ref()?;
        self.estimates.iter().position(|e| &e.label == d)
    }
}

struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    #[cfg(not(target_arch = "wasm32"))]
    fn ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }

    #[cfg(target_arch = "wasm32")]
    fn ms(&self) -> f64 {
        0.0
    }
}

fn check_models(models: &[GestureModel]) -> Result<()> {
    if models.is_empty() {
        return Err(Error::invalid("no gesture models"));
    }
    models.iter().try_for_each(GestureModel::validate)
}

fn deterministic_log_likelihoods(points: &[[f64; 3]], models: &[GestureModel]) -> Vec<f64> {
    let mut scratch = ForwardScratch::default();
    let mut cache: Vec<(&Arc<_>, Vec<usize>)> = Vec::new();
    models
        .iter()
        .map(|m| {
            let obs = match cache.iter().find(|(cb, _)| Arc::ptr_eq(cb, &m.codebook)) {
                Some((_, obs)) => obs.clone(),
                None => {
                    let obs = quantize_points(points, &m.codebook);
                    cache.push((&m.codebook, obs.clone()));
                    obs
                }
            };
            m.hmm.log_likelihood_unchecked(&obs, &mut scratch)
        })
        .collect()
}

/// Quantizes once per gesture codebook and returns the posterior argmax.
pub fn classify_deterministic(trace: &Trace, models: &[GestureModel]) -> Result<ClassificationResult> {
    classify_deterministic_with(trace, models, None)
}

pub fn classify_deterministic_with(
    trace: &Trace,
    models: &[GestureModel],
    priors: Option<&[f64]>,
) -> Result<ClassificationResult> {
    check_models(models)?;
    let clock = Stopwatch::start();
    let stored: Vec<f64>;
    let priors = match priors {
        Some(p) => p,
        None => {
            stored = models.iter().map(|m| m.prior).collect();
            &stored
        }
    };
    let lls = deterministic_log_likelihoods(&trace.points(), models);
    let post = posterior(&lls, priors);
    let best = argmax(&post.probabilities).unwrap_or(0);
    let estimates = models
        .iter()
        .zip(&post.probabilities)
        .enumerate()
        .map(|(i, (m, p))| GestureEstimate {
            label: m.label.clone(),
            probability: *p,
            mean_posterior: *p,
            confidence: *p,
            samples: 1,
            passed: i == best,
        })
        .collect();
    Ok(ClassificationResult {
        decision: Some(models[best].label.clone()),
        quantizer: QuantizerKind::DeterministicElliptical,
        thr: 0.0,
        estimates,
        samples_used: 1,
        elapsed_ms: clock.ms(),
        degenerate_draws: post.degenerate as usize,
    })
}

/// Joint sampler over every gesture's statistical quantization of one trace.
#[derive(Clone)]
pub struct JointSampler {
    samplers: Vec<Arc<SequenceSampler>>,
    /// Index into `samplers` per model.
    sampler_of: Vec<usize>,
    hmms: Vec<Hmm>,
    ln_priors: Vec<f64>,
}

/// One joint draw: per-gesture log-likelihoods.
#[derive(Default)]
pub struct DrawBuffers {
    seqs: Vec<Vec<usize>>,
    scratch: ForwardScratch,
    pub log_likelihoods: Vec<f64>,
    joint: Vec<f64>,
}

impl JointSampler {
    pub fn new(trace: &Trace, models: &[GestureModel], kind: QuantizerKind, priors: &[f64]) -> Result<Self> {
        check_models(models)?;
        let points = trace.points();
        let mut samplers: Vec<Arc<SequenceSampler>> = Vec::new();
        let mut owners: Vec<usize> = Vec::new();
        let mut sampler_of = Vec::with_capacity(models.len());
        for (i, m) in models.iter().enumerate() {
            // The inverse-distance quantizer depends only on the codebook, so
            // models sharing a codebook share a sampler.
            let reuse = (kind != QuantizerKind::StatisticalGmm)
                .then(|| owners.iter().position(|&o| Arc::ptr_eq(&models[o].codebook, &m.codebook)))
                .flatten();
            match reuse {
                Some(k) => sampler_of.push(k),
                None => {
                    sampler_of.push(samplers.len());
                    owners.push(i);
                    samplers.push(Arc::new(SequenceSampler::new(&points, &m.codebook, kind, Some(&m.error_model))?));
                }
            }
        }
        Ok(JointSampler {
            samplers,
            sampler_of,
            hmms: models.iter().map(|m| m.hmm.clone()).collect(),
            ln_priors: priors.iter().map(|p| p.ln()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.hmms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hmms.is_empty()
    }

    /// Draws one joint sample into `buf.log_likelihoods` and returns the
    /// index of the gesture with the maximal posterior.
    pub fn draw(&self, rng: &mut dyn RngCore, buf: &mut DrawBuffers) -> Option<usize> {
        buf.log_likelihoods.clear();
        buf.seqs.resize_with(self.samplers.len(), Vec::new);
        for (sampler, seq) in self.samplers.iter().zip(&mut buf.seqs) {
            sampler.draw_into(rng, seq);
        }
        for (k, hmm) in self.hmms.iter().enumerate() {
            let seq = &buf.seqs[self.sampler_of[k]];
            buf.log_likelihoods.push(hmm.log_likelihood_unchecked(seq, &mut buf.scratch));
        }
        buf.joint.clear();
        buf.joint.extend(buf.log_likelihoods.iter().zip(&self.ln_priors).map(|(l, p)| l + p));
        argmax(&buf.joint)
    }

    /// The posterior vector as an uncertain value.
    pub fn posterior_value(&self) -> Uncertain<Vec<f64>> {
        let this = self.clone();
        let priors: Vec<f64> = self.ln_priors.iter().map(|l| l.exp()).collect();
        Uncertain::new(move |rng| {
            let mut buf = DrawBuffers::default();
            this.draw(rng, &mut buf);
            posterior(&buf.log_likelihoods, &priors).probabilities
        })
    }
}

/// Sampling classifier for the statistical quantizers.
pub fn classify_statistical(trace: &Trace, models: &[GestureModel], cfg: &ClassifierConfig) -> Result<ClassificationResult> {
    if !cfg.quantizer.is_statistical() {
        return Err(Error::invalid(format!("{} is not a statistical quantizer", cfg.quantizer)));
    }
    cfg.validate(models.len())?;
    let clock = Stopwatch::start();
    let priors = cfg.priors(models);
    let joint = JointSampler::new(trace, models, cfg.quantizer, &priors)?;
    let hyp = cfg.hypothesis.with_prob(cfg.thr);
    let mut tests: Vec<WaldTest> = (0..models.len()).map(|_| WaldTest::new(hyp)).collect::<Result<_>>()?;
    let mut rng = rng::seeded(cfg.seed);
    let mut buf = DrawBuffers::default();
    let mut maxima: Vec<Option<usize>> = Vec::new();
    let mut posterior_sums = vec![0.0; models.len()];
    let mut degenerate = 0;
    while maxima.len() < hyp.max_samples && tests.iter().any(|t| t.decision().is_none()) {
        let top = joint.draw(&mut rng, &mut buf);
        let post = posterior(&buf.log_likelihoods, &priors);
        degenerate += post.degenerate as usize;
        posterior_sums.iter_mut().zip(&post.probabilities).for_each(|(s, p)| *s += p);
        for (i, t) in tests.iter_mut().enumerate() {
            t.push(top == Some(i));
        }
        maxima.push(top);
    }
    let rec = Recording { maxima, n_gestures: models.len() };
    let confidences = rec.pass_thresholds(&hyp);
    let n = rec.maxima.len();
    let estimates: Vec<GestureEstimate> = models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let passed = tests[i].decision() == Some(true);
            debug_assert_eq!(passed, cfg.thr < confidences[i]);
            GestureEstimate {
                label: m.label.clone(),
                probability: rec.frequency(i),
                mean_posterior: posterior_sums[i] / n as f64,
                confidence: confidences[i],
                samples: tests[i].samples(),
                passed,
            }
        })
        .collect();
    let decision = Recording::decide_from(&confidences, &rec.frequencies(), cfg.thr).map(|i| models[i].label.clone());
    Ok(ClassificationResult {
        decision,
        quantizer: cfg.quantizer,
        thr: cfg.thr,
        estimates,
        samples_used: n,
        elapsed_ms: clock.ms(),
        degenerate_draws: degenerate,
    })
}

/// Dispatches on `cfg.quantizer`; deterministic kinds ignore `thr`.
pub fn classify(trace: &Trace, models: &[GestureModel], cfg: &ClassifierConfig) -> Result<ClassificationResult> {
    if cfg.quantizer.is_statistical() {
        classify_statistical(trace, models, cfg)
    } else {
        cfg.validate(models.len())?;
        let priors = cfg.priors(models);
        let mut r = classify_deterministic_with(trace, models, Some(&priors))?;
        r.quantizer = cfg.quantizer;
        Ok(r)
    }
}

/// Recorded maximal-posterior indices from a fixed number of joint draws,
/// replayable across thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub maxima: Vec<Option<usize>>,
    pub n_gestures: usize,
}

impl Recording {
    pub fn record(
        trace: &Trace,
        models: &[GestureModel],
        kind: QuantizerKind,
        priors: &[f64],
        draws: usize,
        seed: u64,
    ) -> Result<Self> {
        let joint = JointSampler::new(trace, models, kind, priors)?;
        let mut rng = rng::seeded(seed);
        let mut buf = DrawBuffers::default();
        let maxima = (0..draws).map(|_| joint.draw(&mut rng, &mut buf)).collect();
        Ok(Recording { maxima, n_gestures: models.len() })
    }

    pub fn outcomes(&self, gesture: usize) -> Vec<bool> {
        self.maxima.iter().map(|m| *m == Some(gesture)).collect()
    }

    pub fn frequency(&self, gesture: usize) -> f64 {
        if self.maxima.is_empty() {
            return 0.0;
        }
        self.maxima.iter().filter(|m| **m == Some(gesture)).count() as f64 / self.maxima.len() as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_gestures).map(|g| self.frequency(g)).collect()
    }

    pub fn pass_thresholds(&self, hyp: &HypothesisConfig) -> Vec<f64> {
        (0..self.n_gestures).map(|g| pass_threshold(&self.outcomes(g), hyp)).collect()
    }

    /// Gesture with the highest pass threshold (ties: higher frequency, then
    /// lower index), accepted when `thr` is below its pass threshold.
    pub fn decide_from(confidences: &[f64], frequencies: &[f64], thr: f64) -> Option<usize> {
        let mut best = 0;
        for i in 1..confidences.len() {
            let better = confidences[i] > confidences[best]
                || (confidences[i] == confidences[best] && frequencies[i] > frequencies[best]);
            if better {
                best = i;
            }
        }
        (thr < confidences[best]).then_some(best)
    }

    pub fn decide(&self, thr: f64, hyp: &HypothesisConfig) -> Option<usize> {
        Recording::decide_from(&self.pass_thresholds(hyp), &self.frequencies(), thr)
    }
}
