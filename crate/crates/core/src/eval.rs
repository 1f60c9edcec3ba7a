//! Train/evaluate protocol: stratified splits, per-gesture training, metrics,
//! threshold sweeps and the sensitivity experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classify::{classify, ClassifierConfig, Recording};
use crate::codebook::{build_elliptical_codebook, spherical_codebook_from, Codebook, DEFAULT_CODEBOOK_SIZE};
use crate::error::{Error, Result};
use crate::error_model::{compute_residuals, error_model_from_residuals, AxisParams, ResidualReport};
use crate::hmm::{baum_welch_train, Topology, TrainConfig, TrainReport};
use crate::model::GestureModel;
use crate::quantize::{quantize_deterministic, QuantizerKind};
use crate::rng::{self, derive_seed};
use crate::trace::{Dataset, Trace};
use crate::uncertain::HypothesisConfig;

/// Stratified split: per label, a seeded shuffle puts `round(ratio · n)`
/// traces (at least one on each side) into the training set.
pub fn split(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    dataset.validate_for_training()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, label) in dataset.labels().iter().enumerate() {
        let mut traces: Vec<&Trace> = dataset.traces_for(label).collect();
        traces.shuffle(&mut rng::seeded(derive_seed(seed, k as u64)));
        let n = traces.len();
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        train.extend(traces[..n_train].iter().map(|t| (*t).clone()));
        test.extend(traces[n_train..].iter().map(|t| (*t).clone()));
    }
    Ok((Dataset::new(train, dataset.provenance.clone()), Dataset::new(test, dataset.provenance.clone())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    /// Only the codebook family matters at training time: spherical for
    /// `deterministic_spherical`, per-gesture elliptical otherwise.
    pub quantizer: QuantizerKind,
    pub n_states: usize,
    pub topology: Topology,
    pub codebook_size: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub emission_floor: f64,
    pub axis_params: AxisParams,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let hmm = TrainConfig::default();
        TrainOptions {
            quantizer: QuantizerKind::StatisticalGmm,
            n_states: hmm.n_states,
            topology: hmm.topology,
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            max_iters: hmm.max_iters,
            tol: hmm.tol,
            emission_floor: hmm.emission_floor,
            axis_params: AxisParams::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureTrainReport {
    pub label: String,
    pub traces: usize,
    pub samples: usize,
    pub codebook_center: [f64; 3],
    pub codebook_radii: [f64; 3],
    pub hmm: TrainReport,
    pub residuals: ResidualReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedSet {
    pub models: Vec<GestureModel>,
    pub reports: Vec<GestureTrainReport>,
}

/// Per gesture: codebook, deterministic quantization, Baum-Welch, error
/// model. Priors are uniform. A spherical codebook is built once from all
/// training traces and shared by every model.
pub fn train_all(train: &Dataset, opts: &TrainOptions) -> Result<TrainedSet> {
    train.validate_for_training()?;
    let labels = train.labels();
    let shared: Option<Arc<Codebook>> = match opts.quantizer {
        QuantizerKind::DeterministicSpherical => {
            let all: Vec<&Trace> = train.traces.iter().collect();
            Some(Arc::new(spherical_codebook_from(&all, opts.codebook_size)?))
        }
        _ => None,
    };
    let prior = 1.0 / labels.len() as f64;
    let mut models = Vec::with_capacity(labels.len());
    let mut reports = Vec::with_capacity(labels.len());
    for (k, label) in labels.iter().enumerate() {
        let traces: Vec<&Trace> = train.traces_for(label).collect();
        let codebook = match &shared {
            Some(c) => Arc::clone(c),
            None => Arc::new(build_elliptical_codebook(&traces, opts.codebook_size)?),
        };
        let sequences: Vec<Vec<usize>> = traces.iter().map(|t| quantize_deterministic(t, &codebook)).collect();
        let cfg = TrainConfig {
            n_states: opts.n_states,
            n_symbols: codebook.len(),
            topology: opts.topology,
            max_iters: opts.max_iters,
            tol: opts.tol,
            seed: derive_seed(opts.seed, 2 * k as u64),
            emission_floor: opts.emission_floor,
        };
        let (hmm, hmm_report) = baum_welch_train(&sequences, &cfg)?;
        let residuals = compute_residuals(&traces, &codebook);
        let error_model =
            error_model_from_residuals(&residuals, derive_seed(opts.seed, 2 * k as u64 + 1))?.with_params(opts.axis_params);
        reports.push(GestureTrainReport {
            label: label.clone(),
            traces: traces.len(),
            samples: traces.iter().map(|t| t.len()).sum(),
            codebook_center: codebook.center(),
            codebook_radii: codebook.radii(),
            hmm: hmm_report,
            residuals: residuals.report(),
        });
        models.push(GestureModel::new(label.clone(), codebook, hmm, error_model, prior)?);
    }
    Ok(TrainedSet { models, reports })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureMetrics {
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Test traces of this gesture.
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    /// Set when the gesture was never predicted; precision is then reported as 1.
    pub never_predicted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub mean_samples: f64,
    pub classifications: usize,
}

impl TimingStats {
    pub fn from_runs(ms: &[f64], samples: &[usize]) -> Self {
        if ms.is_empty() {
            return TimingStats::default();
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let idx = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
        TimingStats {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p95_ms: sorted[idx],
            mean_samples: samples.iter().sum::<usize>() as f64 / samples.len() as f64,
            classifications: ms.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub quantizer: QuantizerKind,
    pub thr: f64,
    pub per_gesture: Vec<GestureMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Fraction of test traces assigned their true label (abstaining on a
    /// trace whose label has no model counts as correct).
    pub recognition_rate: f64,
    pub abstention_rate: f64,
    pub traces: usize,
    pub timing: TimingStats,
}

/// One classified test trace: indices into the model list, `None` for a
/// trace with no matching model or an abstention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub truth: Option<usize>,
    pub decision: Option<usize>,
}

/// Precision, recall and recognition from outcomes. Abstentions count as a
/// false negative for the true gesture and never as a true positive.
pub fn metrics_from_outcomes(labels: &[String], outcomes: &[Outcome], quantizer: QuantizerKind, thr: f64) -> MetricsReport {
    let per_gesture: Vec<GestureMetrics> = labels
        .iter()
        .enumerate()
        .map(|(g, label)| {
            let tp = outcomes.iter().filter(|o| o.truth == Some(g) && o.decision == Some(g)).count();
            let fp = outcomes.iter().filter(|o| o.truth != Some(g) && o.decision == Some(g)).count();
            let fn_ = outcomes.iter().filter(|o| o.truth == Some(g) && o.decision != Some(g)).count();
            GestureMetrics {
                label: label.clone(),
                tp,
                fp,
                fn_,
                support: tp + fn_,
                precision: if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 },
                recall: if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 },
                never_predicted: tp + fp == 0,
            }
        })
        .collect();
    let supported: Vec<&GestureMetrics> = per_gesture.iter().filter(|m| m.support > 0).collect();
    let mean = |f: fn(&GestureMetrics) -> f64| {
        if supported.is_empty() {
            0.0
        } else {
            supported.iter().map(|m| f(m)).sum::<f64>() / supported.len() as f64
        }
    };
    let n = outcomes.len().max(1) as f64;
    MetricsReport {
        quantizer,
        thr,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        recognition_rate: outcomes.iter().filter(|o| o.truth == o.decision).count() as f64 / n,
        abstention_rate: outcomes.iter().filter(|o| o.decision.is_none()).count() as f64 / n,
        traces: outcomes.len(),
        per_gesture,
        timing: TimingStats::default(),
    }
}

fn truth_index(models: &[GestureModel], trace: &Trace) -> Option<usize> {
    let label = trace.label.as_deref()?;
    models.iter().position(|m| m.label == label)
}

/// Classifies every test trace with `cfg` (trace `i` uses seed
/// `derive_seed(cfg.seed, i)`) and scores the decisions.
pub fn evaluate(models: &[GestureModel], test: &Dataset, cfg: &ClassifierConfig) -> Result<MetricsReport> {
    let mut outcomes = Vec::with_capacity(test.traces.len());
    let mut ms = Vec::with_capacity(test.traces.len());
    let mut samples = Vec::with_capacity(test.traces.len());
    for (i, trace) in test.traces.iter().enumerate() {
        let c = ClassifierConfig { seed: derive_seed(cfg.seed, i as u64), ..cfg.clone() };
        let r = classify(trace, models, &c)?;
        ms.push(r.elapsed_ms);
        samples.push(r.samples_used);
        outcomes.push(Outcome { truth: truth_index(models, trace), decision: r.decision_index() });
    }
    let labels: Vec<String> = models.iter().map(|m| m.label.clone()).collect();
    let thr = if cfg.quantizer.is_statistical() { cfg.thr } else { 0.0 };
    let mut report = metrics_from_outcomes(&labels, &outcomes, cfg.quantizer, thr);
    report.timing = TimingStats::from_runs(&ms, &samples);
    Ok(report)
}

/// Classification threshold: a fixed value or `1/N` for `N` gestures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    InverseCount,
}

impl Threshold {
    pub fn resolve(self, n_gestures: usize) -> f64 {
        match self {
            Threshold::Fixed(t) => t,
            Threshold::InverseCount => 1.0 / n_gestures.max(1) as f64,
        }
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Fixed(0.5)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Fixed(t) => write!(f, "{t}"),
            Threshold::InverseCount => f.write_str("1/N"),
        }
    }
}

impl FromStr for Threshold {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("1/n") {
            return Ok(Threshold::InverseCount);
        }
        let t: f64 = s.parse().map_err(|_| Error::invalid(format!("bad threshold `{s}`")))?;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("threshold must be in (0, 1), got {t}")));
        }
        Ok(Threshold::Fixed(t))
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Fixed(t) => s.serialize_f64(*t),
            Threshold::InverseCount => s.serialize_str("1/N"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) => Ok(Threshold::Fixed(t)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub split_ratio: f64,
    pub repetitions: usize,
    pub kinds: Vec<QuantizerKind>,
    pub thr: Threshold,
    pub thr_grid: Vec<f64>,
    pub hypothesis: HypothesisConfig,
    pub train: TrainOptions,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split_ratio: 0.75,
            repetitions: 10,
            kinds: QuantizerKind::ALL.to_vec(),
            thr: Threshold::default(),
            thr_grid: default_thr_grid(),
            hypothesis: HypothesisConfig::default(),
            train: TrainOptions::default(),
            seed: 0,
        }
    }
}

/// `{0.1, 0.2, …, 0.9}`.
pub fn default_thr_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::invalid("split_ratio must be in (0, 1)"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if self.kinds.is_empty() {
            return Err(Error::invalid("no quantizer kinds selected"));
        }
        if self.thr_grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::invalid("thresholds must be in (0, 1)"));
        }
        Ok(())
    }

    fn classifier(&self, kind: QuantizerKind, n_gestures: usize, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            quantizer: kind,
            thr: self.thr.resolve(n_gestures),
            hypothesis: self.hypothesis,
            priors: None,
            seed,
        }
    }
}

/// Trains the spherical and/or elliptical model sets needed for `kinds`.
/// Elliptical, GMM and random quantizers share one trained set.
pub fn train_for_kinds(train: &Dataset, kinds: &[QuantizerKind], opts: &TrainOptions) -> Result<BTreeMap<bool, TrainedSet>> {
    let mut out = BTreeMap::new();
    for &kind in kinds {
        let spherical = kind == QuantizerKind::DeterministicSpherical;
        if let std::collections::btree_map::Entry::Vacant(e) = out.entry(spherical) {
            e.insert(train_all(train, &TrainOptions { quantizer: kind, ..opts.clone() })?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub repetition: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub quantizer: QuantizerKind,
    pub recognition_mean: f64,
    pub recognition_std: f64,
    pub precision_mean: f64,
    pub recall_mean: f64,
    pub abstention_mean: f64,
    pub mean_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub gestures: Vec<String>,
    pub thr: Threshold,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<KindSummary>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn summarize(kinds: &[QuantizerKind], runs: &[RunRecord]) -> Vec<KindSummary> {
    kinds
        .iter()
        .map(|&k| {
            let rs: Vec<&MetricsReport> = runs.iter().map(|r| &r.metrics).filter(|m| m.quantizer == k).collect();
            let col = |f: fn(&MetricsReport) -> f64| rs.iter().map(|m| f(m)).collect::<Vec<f64>>();
            let (recognition_mean, recognition_std) = mean_std(&col(|m| m.recognition_rate));
            KindSummary {
                quantizer: k,
                recognition_mean,
                recognition_std,
                precision_mean: mean_std(&col(|m| m.macro_precision)).0,
                recall_mean: mean_std(&col(|m| m.macro_recall)).0,
                abstention_mean: mean_std(&col(|m| m.abstention_rate)).0,
                mean_ms: mean_std(&col(|m| m.timing.mean_ms)).0,
            }
        })
        .collect()
}

/// Repeated split / train / evaluate for every quantizer kind.
pub fn run_protocol(dataset: &Dataset, cfg: &EvalConfig) -> Result<ProtocolReport> {
    cfg.validate()?;
    let gestures = dataset.labels();
    let mut runs = Vec::new();
    for rep in 0..cfg.repetitions {
        let rep_seed = derive_seed(cfg.seed, rep as u64);
        let (train, test) = split(dataset, cfg.split_ratio, rep_seed)?;
        let opts = TrainOptions { seed: derive_seed(rep_seed, 1), ..cfg.train.clone() };
        let sets = train_for_kinds(&train, &cfg.kinds, &opts)?;
        for &kind in &cfg.kinds {
            let models = &sets[&(kind == QuantizerKind::DeterministicSpherical)].models;
            let metrics = evaluate(models, &test, &cfg.classifier(kind, models.len(), derive_seed(rep_seed, 2)))?;
            runs.push(RunRecord { repetition: rep, metrics });
        }
    }
    let summary = summarize(&cfg.kinds, &runs);
    Ok(ProtocolReport { gestures, thr: cfg.thr, runs, summary })
}

/// One row per gesture × kind × repetition.
pub fn write_runs_csv<W: Write>(runs: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["repetition", "quantizer", "thr", "gesture", "tp", "fp", "fn", "support", "precision", "recall"])
        .map_err(io)?;
    for r in runs {
        for g in &r.metrics.per_gesture {
            w.write_record([
                r.repetition.to_string(),
                r.metrics.quantizer.to_string(),
                r.metrics.thr.to_string(),
                g.label.clone(),
                g.tp.to_string(),
                g.fp.to_string(),
                g.fn_.to_string(),
                g.support.to_string(),
                g.precision.to_string(),
                g.recall.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub quantizer: QuantizerKind,
    pub thr: Vec<f64>,
    pub curves: Vec<Curve>,
    pub recognition: Vec<f64>,
    pub abstention: Vec<f64>,
}

/// Records `hyp.max_samples` joint draws per test trace once, then replays
/// every threshold in `grid` against the same draws.
pub fn sweep_threshold(
    models: &[GestureModel],
    test: &Dataset,
    kind: QuantizerKind,
    grid: &[f64],
    hyp: &HypothesisConfig,
    seed: u64,
) -> Result<ThresholdSweep> {
    if !kind.is_statistical() {
        return Err(Error::invalid("threshold sweeps need a statistical quantizer"));
    }
    let priors: Vec<f64> = models.iter().map(|m| m.prior).collect();
    let mut recorded = Vec::with_capacity(test.traces.len());
    for (i, trace) in test.traces.iter().enumerate() {
        let rec = Recording::record(trace, models, kind, &priors, hyp.max_samples, derive_seed(seed, i as u64))?;
        let conf = rec.pass_thresholds(hyp);
        let freq = rec.frequencies();
        recorded.push((truth_index(models, trace), conf, freq));
    }
    let labels: Vec<String> = models.iter().map(|m| m.label.clone()).collect();
    let reports: Vec<MetricsReport> = grid
        .iter()
        .map(|&thr| {
            let outcomes: Vec<Outcome> = recorded
                .iter()
                .map(|(truth, conf, freq)| Outcome { truth: *truth, decision: Recording::decide_from(conf, freq, thr) })
                .collect();
            metrics_from_outcomes(&labels, &outcomes, kind, thr)
        })
        .collect();
    let curves = labels
        .iter()
        .enumerate()
        .map(|(g, label)| Curve {
            label: label.clone(),
            precision: reports.iter().map(|r| r.per_gesture[g].precision).collect(),
            recall: reports.iter().map(|r| r.per_gesture[g].recall).collect(),
        })
        .collect();
    Ok(ThresholdSweep {
        quantizer: kind,
        thr: grid.to_vec(),
        curves,
        recognition: reports.iter().map(|r| r.recognition_rate).collect(),
        abstention: reports.iter().map(|r| r.abstention_rate).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    /// Gesture count or subject count, depending on the experiment.
    pub count: usize,
    pub quantizer: QuantizerKind,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// For each count, draws that many gestures per repetition and runs the
/// full protocol for every kind.
pub fn gesture_count_sensitivity(dataset: &Dataset, counts: &[usize], cfg: &EvalConfig) -> Result<Vec<SensitivityRow>> {
    cfg.validate()?;
    let labels = dataset.labels();
    let mut rows = Vec::new();
    for &count in counts {
        if count < 1 || count > labels.len() {
            return Err(Error::invalid(format!("cannot pick {count} of {} gestures", labels.len())));
        }
        let mut values: BTreeMap<QuantizerKind, Vec<f64>> = BTreeMap::new();
        for rep in 0..cfg.repetitions {
            let seed = derive_seed(cfg.seed, ((count as u64) << 20) | rep as u64);
            let mut chosen = labels.clone();
            chosen.shuffle(&mut rng::seeded(seed));
            chosen.truncate(count);
            let subset = dataset.with_labels(&chosen);
            let one = EvalConfig { repetitions: 1, seed, ..cfg.clone() };
            for run in run_protocol(&subset, &one)?.runs {
                values.entry(run.metrics.quantizer).or_default().push(run.metrics.recognition_rate);
            }
        }
        for &kind in &cfg.kinds {
            let v = values.remove(&kind).unwrap_or_default();
            let (mean, std) = mean_std(&v);
            rows.push(SensitivityRow { count, quantizer: kind, mean, std, values: v });
        }
    }
    Ok(rows)
}

/// Recognition of the deterministic elliptical quantizer when only `count`
/// subjects contribute data (split, train and test within those subjects).
pub fn user_count_sensitivity(dataset: &Dataset, counts: &[usize], cfg: &EvalConfig) -> Result<Vec<SensitivityRow>> {
    cfg.validate()?;
    let mut subjects: Vec<String> = Vec::new();
    for t in &dataset.traces {
        if let Some(s) = &t.subject {
            if !subjects.contains(s) {
                subjects.push(s.clone());
            }
        }
    }
    let kind = QuantizerKind::DeterministicElliptical;
    let mut rows = Vec::new();
    for &count in counts {
        if count < 1 || count > subjects.len() {
            return Err(Error::invalid(format!("cannot pick {count} of {} subjects", subjects.len())));
        }
        let mut v = Vec::new();
        for rep in 0..cfg.repetitions {
            let seed = derive_seed(cfg.seed, ((count as u64) << 20) | rep as u64);
            let mut chosen = subjects.clone();
            chosen.shuffle(&mut rng::seeded(seed));
            chosen.truncate(count);
            let traces = dataset
                .traces
                .iter()
                .filter(|t| t.subject.as_ref().is_some_and(|s| chosen.contains(s)))
                .cloned()
                .collect();
            let subset = Dataset::new(traces, dataset.provenance.clone());
            let one = EvalConfig { repetitions: 1, seed, kinds: vec![kind], ..cfg.clone() };
            v.push(run_protocol(&subset, &one)?.runs[0].metrics.recognition_rate);
        }
        let (mean, std) = mean_std(&v);
        rows.push(SensitivityRow { count, quantizer: kind, mean, std, values: v });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationRun {
    pub repetition: usize,
    pub frequent: Vec<String>,
    pub uniform: f64,
    pub personalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationReport {
    pub quantizer: QuantizerKind,
    pub rare_weight: f64,
    pub runs: Vec<PersonalizationRun>,
    pub uniform_mean: f64,
    pub personalized_mean: f64,
}

/// Picks `n_frequent` gestures per repetition, and compares recognition on
/// their test traces under uniform priors and under priors weighting them 1
/// and the rest `rare_weight`.
pub fn personalization(
    dataset: &Dataset,
    n_frequent: usize,
    rare_weight: f64,
    kind: QuantizerKind,
    cfg: &EvalConfig,
) -> Result<PersonalizationReport> {
    cfg.validate()?;
    let labels = dataset.labels();
    if n_frequent == 0 || n_frequent > labels.len() {
        return Err(Error::invalid(format!("cannot favour {n_frequent} of {} gestures", labels.len())));
    }
    let mut runs = Vec::new();
    for rep in 0..cfg.repetitions {
        let rep_seed = derive_seed(cfg.seed, rep as u64);
        let (train, test) = split(dataset, cfg.split_ratio, rep_seed)?;
        let opts = TrainOptions { quantizer: kind, seed: derive_seed(rep_seed, 1), ..cfg.train.clone() };
        let models = train_all(&train, &opts)?.models;
        let mut frequent = labels.clone();
        frequent.shuffle(&mut rng::seeded(derive_seed(rep_seed, 3)));
        frequent.truncate(n_frequent);
        let mix = test.with_labels(&frequent);
        let weights: Vec<f64> =
            models.iter().map(|m| if frequent.contains(&m.label) { 1.0 } else { rare_weight }).collect();
        let total: f64 = weights.iter().sum();
        let base = cfg.classifier(kind, models.len(), derive_seed(rep_seed, 2));
        let uniform = evaluate(&models, &mix, &base)?.recognition_rate;
        let tuned = ClassifierConfig { priors: Some(weights.iter().map(|w| w / total).collect()), ..base };
        let personalized = evaluate(&models, &mix, &tuned)?.recognition_rate;
        runs.push(PersonalizationRun { repetition: rep, frequent, uniform, personalized });
    }
    let uniform_mean = mean_std(&runs.iter().map(|r| r.uniform).collect::<Vec<_>>()).0;
    let personalized_mean = mean_std(&runs.iter().map(|r| r.personalized).collect::<Vec<_>>()).0;
    Ok(PersonalizationReport { quantizer: kind, rare_weight, runs, uniform_mean, personalized_mean })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindTiming {
    pub quantizer: QuantizerKind,
    pub timing: TimingStats,
}

/// Wall-clock classification cost per kind on the same traces.
pub fn time_classification(
    models: &[GestureModel],
    test: &Dataset,
    kinds: &[QuantizerKind],
    cfg: &ClassifierConfig,
) -> Result<Vec<KindTiming>> {
    kinds
        .iter()
        .map(|&kind| {
            let c = ClassifierConfig { quantizer: kind, ..cfg.clone() };
            Ok(KindTiming { quantizer: kind, timing: evaluate(models, test, &c)?.timing })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthetic_dataset, SyntheticSpec};

    fn small() -> Dataset {
        let spec = SyntheticSpec {
            templates: vec!["circle-xy".into(), "line-x".into()],
            subjects: 4,
            repetitions: 5,
            ..Default::default()
        };
        synthetic_dataset(&spec, None).unwrap()
    }

    #[test]
    fn split_is_stratified_partition() {
        let ds = small();
        let (train, test) = split(&ds, 0.75, 3).unwrap();
        for l in ds.labels() {
            assert_eq!(train.traces_for(&l).count(), 15);
            assert_eq!(test.traces_for(&l).count(), 5);
        }
        let mut ids: Vec<_> = train.traces.iter().chain(&test.traces).map(|t| t.id.clone().unwrap()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), ds.traces.len());
        assert_eq!(split(&ds, 0.75, 3).unwrap(), (train, test));
    }

    #[test]
    fn half_split_of_four() {
        let mut ds = small();
        ds.traces.retain(|t| t.id.as_deref().is_some_and(|id| id.ends_with("r0")));
        let (train, test) = split(&ds, 0.5, 1).unwrap();
        assert_eq!(train.traces_for("line-x").count(), 2);
        assert_eq!(test.traces_for("line-x").count(), 2);
    }

    #[test]
    fn metric_identities() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let mut outcomes = vec![Outcome { truth: Some(0), decision: Some(0) }; 8];
        outcomes.extend([Outcome { truth: Some(0), decision: Some(1) }; 2]);
        outcomes.extend([Outcome { truth: Some(1), decision: Some(0) }; 2]);
        let m = metrics_from_outcomes(&labels, &outcomes, QuantizerKind::DeterministicElliptical, 0.0);
        assert_eq!((m.per_gesture[0].tp, m.per_gesture[0].fp, m.per_gesture[0].fn_), (8, 2, 2));
        assert!((m.per_gesture[0].precision - 0.8).abs() < 1e-15);
        assert!((m.per_gesture[0].recall - 0.8).abs() < 1e-15);
    }

    #[test]
    fn always_abstaining() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let outcomes = vec![Outcome { truth: Some(0), decision: None }, Outcome { truth: Some(1), decision: None }];
        let m = metrics_from_outcomes(&labels, &outcomes, QuantizerKind::StatisticalGmm, 0.5);
        for g in &m.per_gesture {
            assert_eq!(g.recall, 0.0);
            assert_eq!(g.precision, 1.0);
            assert!(g.never_predicted);
        }
        assert_eq!(m.abstention_rate, 1.0);
    }

    #[test]
    fn perfect_classifier() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let outcomes = vec![Outcome { truth: Some(0), decision: Some(0) }, Outcome { truth: Some(1), decision: Some(1) }];
        let m = metrics_from_outcomes(&labels, &outcomes, QuantizerKind::StatisticalGmm, 0.5);
        assert_eq!((m.macro_precision, m.macro_recall, m.recognition_rate), (1.0, 1.0, 1.0));
    }

    #[test]
    fn training_is_deterministic_and_per_gesture() {
        let ds = small();
        let a = train_all(&ds, &TrainOptions::default()).unwrap();
        assert_eq!(a.models.len(), 2);
        assert_ne!(a.models[0].codebook.center(), a.models[1].codebook.center());
        assert_eq!(a, train_all(&ds, &TrainOptions::default()).unwrap());
        let s = train_all(&ds, &TrainOptions { quantizer: QuantizerKind::DeterministicSpherical, ..Default::default() })
            .unwrap();
        assert!(Arc::ptr_eq(&s.models[0].codebook, &s.models[1].codebook));
    }

    #[test]
    fn threshold_parsing() {
        assert_eq!("1/N".parse::<Threshold>().unwrap(), Threshold::InverseCount);
        assert_eq!("0.3".parse::<Threshold>().unwrap(), Threshold::Fixed(0.3));
        assert!("1.5".parse::<Threshold>().is_err());
        assert_eq!(Threshold::InverseCount.resolve(4), 0.25);
        let j = serde_json::to_string(&Threshold::InverseCount).unwrap();
        assert_eq!(serde_json::from_str::<Threshold>(&j).unwrap(), Threshold::InverseCount);
    }
}
