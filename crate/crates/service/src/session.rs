//! One user's gestures, samples, trained models and classifier settings.
//! Everything here is synchronous; the HTTP layer serializes access per
//! session.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use quantgest::classify::{classify, ClassificationResult, ClassifierConfig, Recording};
use quantgest::codebook::CodebookShape;
use quantgest::eval::{metrics_from_outcomes, train_all, GestureTrainReport, MetricsReport, Outcome, TrainOptions};
use quantgest::model::GestureModel;
use quantgest::quantize::QuantizerKind;
use quantgest::rng::derive_seed;
use quantgest::trace::{Dataset, Trace};
use quantgest::uncertain::HypothesisConfig;

/// Samples each gesture needs before training.
pub const DEFAULT_MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum SessionError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
}

impl std::fmt::Display for SessionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SessionError::BadRequest(m) | SessionError::NotFound(m) | SessionError::Conflict(m) => f.write_str(m),
        }
    }
}

impl From<quantgest::Error> for SessionError {
    fn from(e: quantgest::Error) -> Self {
        SessionError::BadRequest(e.to_string())
    }
}

type Result<T> = std::result::Result<T, SessionError>;

/// Accepts the short quantizer names (`gmm`, `elliptical`, ...) as well.
fn short_kind<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<QuantizerKind>, D::Error> {
    Option::<String>::deserialize(d)?.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The user signalled that a gesture was performed: always name the most
    /// likely one.
    Signaled,
    /// No signal: the threshold decides, and abstaining means "no gesture".
    #[default]
    DeadStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub thr: f64,
    pub quantizer: QuantizerKind,
    /// Relative frequency weights by label; unlisted gestures weigh 1.
    pub priors: BTreeMap<String, f64>,
    pub min_samples: usize,
    pub hypothesis: HypothesisConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            thr: 0.5,
            quantizer: QuantizerKind::StatisticalGmm,
            priors: BTreeMap::new(),
            min_samples: DEFAULT_MIN_SAMPLES,
            hypothesis: HypothesisConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.thr > 0.0 && self.thr < 1.0) {
            return Err(SessionError::BadRequest(format!("thr must be in (0, 1), got {}", self.thr)));
        }
        if let Some((l, w)) = self.priors.iter().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(SessionError::BadRequest(format!("prior weight for `{l}` must be positive, got {w}")));
        }
        if self.min_samples == 0 {
            return Err(SessionError::BadRequest("min_samples must be at least 1".into()));
        }
        self.hypothesis.validate()?;
        Ok(())
    }
}

/// Partial update for [`SessionConfig`].
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub thr: Option<f64>,
    #[serde(default, deserialize_with = "short_kind")]
    pub quantizer: Option<QuantizerKind>,
    pub priors: Option<BTreeMap<String, f64>>,
    pub min_samples: Option<usize>,
    pub alpha: Option<f64>,
    pub max_samples: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRequest {
    #[serde(deserialize_with = "short_kind")]
    pub quantizer: Option<QuantizerKind>,
    pub n_states: usize,
    pub seed: u64,
}

impl Default for TrainRequest {
    fn default() -> Self {
        TrainRequest { quantizer: None, n_states: TrainOptions::default().n_states, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub quantizer: QuantizerKind,
    pub gestures: Vec<GestureTrainReport>,
}

/// Draws recorded for every training sample, so metrics can be replayed at
/// any threshold without retraining.
#[derive(Clone, Debug)]
struct Replay {
    quantizer: QuantizerKind,
    priors: Vec<f64>,
    /// (truth, pass thresholds, frequencies) per sample.
    rows: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct LiveStats {
    pub signaled: usize,
    pub dead_start: usize,
    /// Dead-start classifications that named no gesture.
    pub abstained: usize,
    pub decisions: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GestureInfo {
    pub label: String,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionView {
    pub id: String,
    pub gestures: Vec<GestureInfo>,
    pub trained: bool,
    /// Samples changed since the last training.
    pub stale: bool,
    pub config: SessionConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsView {
    pub thr: f64,
    pub trained: bool,
    pub stale: bool,
    /// Replayed on the training samples; absent before training.
    pub training_samples: Option<MetricsReport>,
    pub live: LiveStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassifyResponse {
    pub mode: Mode,
    pub stale: bool,
    #[serde(flatten)]
    pub result: ClassificationResult,
}

#[derive(Clone, Debug)]
struct Trained {
    models: Arc<Vec<GestureModel>>,
    shape: CodebookShape,
    seed: u64,
}

#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    gestures: Vec<(String, Vec<Trace>)>,
    config: SessionConfig,
    trained: Option<Trained>,
    stale: bool,
    replay: Option<Replay>,
    live: LiveStats,
}

/// Everything [`Session::classify`] needs, detached from the session so the
/// work can run without holding its lock.
pub struct ClassifyJob {
    models: Arc<Vec<GestureModel>>,
    cfg: ClassifierConfig,
    mode: Mode,
    stale: bool,
}

impl ClassifyJob {
    pub fn run(self, trace: &Trace) -> Result<ClassifyResponse> {
        let mut result = classify(trace, &self.models, &self.cfg)?;
        if self.mode == Mode::Signaled && result.decision.is_none() {
            let best = result
                .estimates
                .iter()
                .max_by(|a, b| a.confidence.total_cmp(&b.confidence).then(a.probability.total_cmp(&b.probability)))
                .map(|e| e.label.clone());
            result.decision = best;
        }
        Ok(ClassifyResponse { mode: self.mode, stale: self.stale, result })
    }
}

pub fn trace_from_rows(rows: &[[f64; 4]]) -> Result<Trace> {
    Trace::from_rows(rows).map_err(|e| SessionError::BadRequest(e.to_string()))
}

fn valid_label(label: &str) -> Result<()> {
    let ok = !label.is_empty()
        && label.len() <= 64
        && label.chars().all(|c| c.is_alphanumeric() || "-_. ".contains(c));
    if ok {
        Ok(())
    } else {
        Err(SessionError::BadRequest(format!(
            "gesture label must be 1-64 letters, digits, spaces or `-_.`, got `{label}`"
        )))
    }
}

impl Session {
    pub fn new(id: String, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        Ok(Session { id, gestures: Vec::new(), config, trained: None, stale: false, replay: None, live: LiveStats::default() })
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            gestures: self.gestures.iter().map(|(l, s)| GestureInfo { label: l.clone(), samples: s.len() }).collect(),
            trained: self.trained.is_some(),
            stale: self.stale,
            config: self.config.clone(),
        }
    }

    pub fn add_gesture(&mut self, label: &str) -> Result<GestureInfo> {
        valid_label(label)?;
        if self.gestures.iter().any(|(l, _)| l == label) {
            return Err(SessionError::Conflict(format!("gesture `{label}` already exists")));
        }
        self.gestures.push((label.to_string(), Vec::new()));
        self.stale |= self.trained.is_some();
        Ok(GestureInfo { label: label.to_string(), samples: 0 })
    }

    pub fn add_sample(&mut self, label: &str, trace: Trace) -> Result<GestureInfo> {
        let (_, samples) = self
            .gestures
            .iter_mut()
            .find(|(l, _)| l == label)
            .ok_or_else(|| SessionError::NotFound(format!("no gesture `{label}` in session {}", self.id)))?;
        let n = samples.len();
        samples.push(trace.with_label(label).with_id(format!("{label}/{n}")));
        self.stale |= self.trained.is_some();
        Ok(GestureInfo { label: label.to_string(), samples: n + 1 })
    }

    fn dataset(&self) -> Dataset {
        Dataset::new(self.gestures.iter().flat_map(|(_, s)| s.iter().cloned()).collect(), format!("session {}", self.id))
    }

    pub fn train(&mut self, req: &TrainRequest) -> Result<TrainSummary> {
        if self.gestures.is_empty() {
            return Err(SessionError::Conflict("no gestures registered".into()));
        }
        if let Some((label, s)) = self.gestures.iter().find(|(_, s)| s.len() < self.config.min_samples) {
            return Err(SessionError::Conflict(format!(
                "gesture `{label}` has {} samples, needs at least {}",
                s.len(),
                self.config.min_samples
            )));
        }
        let quantizer = req.quantizer.unwrap_or(self.config.quantizer);
        let opts = TrainOptions { quantizer, n_states: req.n_states, seed: req.seed, ..Default::default() };
        let trained = train_all(&self.dataset(), &opts)?;
        self.config.quantizer = quantizer;
        self.trained = Some(Trained { models: Arc::new(trained.models), shape: quantizer.codebook_shape(), seed: req.seed });
        self.stale = false;
        self.replay = None;
        Ok(TrainSummary { quantizer, gestures: trained.reports })
    }

    /// Per-gesture prior vector in model order, normalized.
    fn priors(&self, models: &[GestureModel]) -> Vec<f64> {
        let w: Vec<f64> = models.iter().map(|m| *self.config.priors.get(&m.label).unwrap_or(&1.0)).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    fn trained(&self) -> Result<&Trained> {
        self.trained.as_ref().ok_or_else(|| SessionError::Conflict("session has no trained models".into()))
    }

    pub fn classify_job(&self, mode: Mode, thr: Option<f64>, seed: u64) -> Result<ClassifyJob> {
        let trained = self.trained()?;
        let quantizer = self.config.quantizer;
        if quantizer.codebook_shape() != trained.shape {
            return Err(SessionError::Conflict(format!(
                "models were trained for a different codebook family; retrain for {}",
                quantizer.as_str()
            )));
        }
        let cfg = ClassifierConfig {
            quantizer,
            thr: thr.unwrap_or(self.config.thr),
            hypothesis: self.config.hypothesis,
            priors: Some(self.priors(&trained.models)),
            seed,
        };
        cfg.validate(trained.models.len())?;
        Ok(ClassifyJob { models: trained.models.clone(), cfg, mode, stale: self.stale })
    }

    pub fn record(&mut self, r: &ClassifyResponse) {
        match r.mode {
            Mode::Signaled => self.live.signaled += 1,
            Mode::DeadStart => {
                self.live.dead_start += 1;
                self.live.abstained += r.result.decision.is_none() as usize;
            }
        }
        if let Some(d) = &r.result.decision {
            *self.live.decisions.entry(d.clone()).or_default() += 1;
        }
    }

    fn ensure_replay(&mut self) -> Result<()> {
        let trained = self.trained()?.clone();
        let priors = self.priors(&trained.models);
        let quantizer = self.config.quantizer;
        if self.replay.as_ref().is_some_and(|r| r.quantizer == quantizer && r.priors == priors) {
            return Ok(());
        }
        let models = &trained.models;
        let mut rows = Vec::new();
        for (g, (_, samples)) in self.gestures.iter().enumerate() {
            let truth = models.iter().position(|m| m.label == self.gestures[g].0);
            let Some(truth) = truth else { continue };
            for (i, t) in samples.iter().enumerate() {
                let seed = derive_seed(trained.seed, ((g as u64) << 32) | i as u64);
                let row = if quantizer.is_statistical() {
                    let rec = Recording::record(t, models, quantizer, &priors, self.config.hypothesis.max_samples, seed)?;
                    (truth, rec.pass_thresholds(&self.config.hypothesis), rec.frequencies())
                } else {
                    let cfg = ClassifierConfig { quantizer, priors: Some(priors.clone()), ..Default::default() };
                    let r = classify(t, models, &cfg)?;
                    let hit: Vec<f64> = r.estimates.iter().map(|e| (Some(&e.label) == r.decision.as_ref()) as u8 as f64).collect();
                    (truth, hit.clone(), hit)
                };
                rows.push(row);
            }
        }
        self.replay = Some(Replay { quantizer, priors, rows });
        Ok(())
    }

    pub fn metrics(&mut self, thr: Option<f64>) -> Result<MetricsView> {
        let thr = thr.unwrap_or(self.config.thr);
        if !(thr > 0.0 && thr < 1.0) {
            return Err(SessionError::BadRequest(format!("thr must be in (0, 1), got {thr}")));
        }
        let report = match &self.trained {
            None => None,
            Some(t) => {
                let labels: Vec<String> = t.models.iter().map(|m| m.label.clone()).collect();
                self.ensure_replay()?;
                let replay = self.replay.as_ref().expect("replay just computed");
                let outcomes: Vec<Outcome> = replay
                    .rows
                    .iter()
                    .map(|(truth, conf, freq)| Outcome {
                        truth: Some(*truth),
                        decision: if replay.quantizer.is_statistical() {
                            Recording::decide_from(conf, freq, thr)
                        } else {
                            conf.iter().position(|x| *x == 1.0)
                        },
                    })
                    .collect();
                Some(metrics_from_outcomes(&labels, &outcomes, replay.quantizer, thr))
            }
        };
        Ok(MetricsView { thr, trained: self.trained.is_some(), stale: self.stale, training_samples: report, live: self.live.clone() })
    }

    pub fn patch_config(&mut self, patch: ConfigPatch) -> Result<SessionConfig> {
        let mut next = self.config.clone();
        if let Some(t) = patch.thr {
            next.thr = t;
        }
        if let Some(q) = patch.quantizer {
            next.quantizer = q;
        }
        if let Some(p) = patch.priors {
            next.priors = p;
        }
        if let Some(m) = patch.min_samples {
            next.min_samples = m;
        }
        if let Some(a) = patch.alpha {
            next.hypothesis.alpha = a;
        }
        if let Some(m) = patch.max_samples {
            next.hypothesis.max_samples = m;
        }
        next.validate()?;
        if let Some(unknown) = next.priors.keys().find(|l| !self.gestures.iter().any(|(g, _)| g == *l)) {
            return Err(SessionError::NotFound(format!("no gesture `{unknown}` for prior")));
        }
        if next.hypothesis != self.config.hypothesis {
            self.replay = None;
        }
        self.config = next;
        Ok(self.config.clone())
    }

    pub fn models(&self) -> Option<Arc<Vec<GestureModel>>> {
        self.trained.as_ref().map(|t| t.models.clone())
    }
}
