use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use quantgest::classify::{classify, ClassificationResult, ClassifierConfig};
use quantgest::drift::{drift_closed_form, drift_curve, log_log_slope};
use quantgest::eval::{
    gesture_count_sensitivity, personalization, run_protocol, split, sweep_threshold, train_all, user_count_sensitivity,
    write_runs_csv, EvalConfig, Threshold, TrainOptions,
};
use quantgest::hmm::Topology;
use quantgest::model::{load_models, save_models, GestureModel};
use quantgest::quantize::QuantizerKind;
use quantgest::rng::derive_seed;
use quantgest::synth::{benchmark_templates, synthetic_dataset, SyntheticSpec};
use quantgest::trace::{load_traces_with, save_traces, Dataset, Units};
use quantgest::uncertain::HypothesisConfig;

#[derive(Parser)]
#[command(name = "quantgest", version, about = "Accelerometer gesture recognition with statistical quantization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic labelled traces as CSV.
    Gen(GenArgs),
    /// Train one model per gesture from a trace CSV.
    Train(TrainArgs),
    /// Classify every trace in a CSV; prints JSON.
    Classify(ClassifyArgs),
    /// Repeated split / train / evaluate with reports.
    Eval(EvalArgs),
    /// Position drift of a still phone with a misjudged pitch, as CSV.
    Drift(DriftArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Template id; repeat or comma-separate for several gestures.
    #[arg(long, required = true, value_delimiter = ',')]
    template: Vec<String>,
    /// Traces per template and subject.
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    subjects: usize,
    /// Per-axis sensor noise in g, `sx,sy,sz`. Defaults to a per-gesture
    /// anisotropic level derived from the seed.
    #[arg(long, value_delimiter = ',')]
    noise_xyz: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.02)]
    orientation_std: f64,
    #[arg(long, default_value_t = 0.1)]
    speed_jitter: f64,
    /// Samples per trace; defaults to the template duration at 50 Hz.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceInput {
    /// Trace CSV (`trace_id,label,subject,t,ax,ay,az`).
    #[arg(long)]
    input: PathBuf,
    /// Accelerations are in m/s² rather than g.
    #[arg(long)]
    si_units: bool,
}

impl TraceInput {
    fn load(&self) -> anyhow::Result<Dataset> {
        let units = if self.si_units { Units::MetersPerSecondSquared } else { Units::G };
        load_traces_with(&self.input, units).map_err(|e| invalid(format!("{}: {e}", self.input.display())))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: TraceInput,
    /// spherical, elliptical, gmm or random. Spherical trains one shared
    /// codebook; the others train one elliptical codebook per gesture.
    #[arg(long, default_value = "gmm")]
    quantizer: QuantizerKind,
    #[arg(long, default_value_t = 8)]
    states: usize,
    /// Left-to-right band; 0 keeps only self-loops. Ignored with --ergodic.
    #[arg(long, default_value_t = 3)]
    band: usize,
    #[arg(long)]
    ergodic: bool,
    #[arg(long, default_value_t = 18)]
    codebook_size: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    models: PathBuf,
    #[command(flatten)]
    input: TraceInput,
    #[arg(long, default_value = "gmm")]
    quantizer: QuantizerKind,
    /// Minimum confidence to accept a gesture; `1/N` uses one over the
    /// number of gestures.
    #[arg(long, default_value = "0.5")]
    thr: Threshold,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    max_samples: usize,
    /// Comma-separated prior weights in model order; normalized.
    #[arg(long, value_delimiter = ',')]
    priors: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Use the first N benchmark templates of the built-in generator.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    #[arg(long, default_value_t = 0.75)]
    split: f64,
    #[arg(long, default_value = "1/N")]
    thr: Threshold,
    #[arg(long, value_delimiter = ',', default_value = "spherical,elliptical,gmm,random")]
    kinds: Vec<QuantizerKind>,
    /// Also run the gesture-count sensitivity for these counts.
    #[arg(long, value_delimiter = ',')]
    gesture_counts: Vec<usize>,
    /// Also run the subject-count sensitivity for these counts.
    #[arg(long, value_delimiter = ',')]
    user_counts: Vec<usize>,
    /// Also compare uniform priors against priors favouring this many gestures.
    #[arg(long)]
    personalize: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    rare_weight: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for protocol.json, runs.csv and sweep.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DriftArgs {
    /// Pitch errors in degrees.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1,2")]
    angles: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Errors caused by the caller's input; they exit with status 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Invalid>().is_some() {
        return 2;
    }
    match e.downcast_ref::<quantgest::Error>() {
        Some(quantgest::Error::Io(_)) | None => 1,
        Some(_) => 2,
    }
}

fn print_json<T: Serialize>(v: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn gen(a: GenArgs) -> anyhow::Result<()> {
    let axis_std = match a.noise_xyz {
        Some(v) if v.len() == 3 => vec![[v[0], v[1], v[2]]],
        Some(v) => return Err(invalid(format!("--noise-xyz takes 3 values, got {}", v.len()))),
        None => Vec::new(),
    };
    let spec = SyntheticSpec {
        templates: a.template,
        subjects: a.subjects,
        repetitions: a.count,
        axis_std,
        orientation_std: a.orientation_std,
        speed_jitter: a.speed_jitter,
        seed: a.seed,
        ..Default::default()
    };
    if spec.subjects == 0 || spec.repetitions == 0 {
        return Err(invalid("--count and --subjects must be positive"));
    }
    let ds = synthetic_dataset(&spec, a.samples).map_err(|e| invalid(e.to_string()))?;
    save_traces(&a.out, &ds.traces).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} traces to {}", ds.traces.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let ds = a.input.load()?;
    let topology = if a.ergodic { Topology::Ergodic } else { Topology::LeftToRight { band: a.band } };
    let opts = TrainOptions {
        quantizer: a.quantizer,
        n_states: a.states,
        topology,
        codebook_size: a.codebook_size,
        max_iters: a.max_iters,
        seed: a.seed,
        ..Default::default()
    };
    let trained = train_all(&ds, &opts)?;
    save_models(&trained.models, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    print_json(&serde_json::json!({
        "models": a.out,
        "quantizer": a.quantizer,
        "gestures": trained.reports,
    }))
}

fn load_model_file(path: &Path) -> anyhow::Result<Vec<GestureModel>> {
    load_models(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn classify_cmd(a: ClassifyArgs) -> anyhow::Result<()> {
    let models = load_model_file(&a.models)?;
    let ds = a.input.load()?;
    let priors = match a.priors {
        Some(w) => {
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(invalid("--priors must have a positive sum"));
            }
            Some(w.iter().map(|x| x / total).collect())
        }
        None => None,
    };
    let base = ClassifierConfig {
        quantizer: a.quantizer,
        thr: a.thr.resolve(models.len()),
        hypothesis: HypothesisConfig { alpha: a.alpha, max_samples: a.max_samples, ..Default::default() },
        priors,
        seed: a.seed,
    };
    base.validate(models.len())?;
    let results = ds
        .traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let cfg = ClassifierConfig { seed: derive_seed(a.seed, i as u64), ..base.clone() };
            let r = classify(t, &models, &cfg)?;
            Ok(Classified { trace: t.id.clone(), label: t.label.clone(), result: r })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    match results.as_slice() {
        [one] => print_json(one),
        _ => print_json(&results),
    }
}

#[derive(Serialize)]
struct Classified {
    trace: Option<String>,
    label: Option<String>,
    #[serde(flatten)]
    result: ClassificationResult,
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let ds = match (&a.input, a.synthetic) {
        (Some(p), None) => TraceInput { input: p.clone(), si_units: false }.load()?,
        (None, Some(n)) => {
            let templates = benchmark_templates(n).map_err(|e| invalid(e.to_string()))?;
            synthetic_dataset(&SyntheticSpec { templates, seed: a.seed, ..Default::default() }, None)?
        }
        _ => bail!(Invalid("give either --input or --synthetic".into())),
    };
    let cfg = EvalConfig {
        split_ratio: a.split,
        repetitions: a.repetitions,
        kinds: a.kinds.clone(),
        thr: a.thr,
        seed: a.seed,
        ..Default::default()
    };
    cfg.validate()?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let report = run_protocol(&ds, &cfg)?;
    write_runs_csv(&report.runs, fs::File::create(a.out_dir.join("runs.csv"))?)?;

    // Threshold sweep on the first split, replaying one set of draws.
    let sweep_kind = a.kinds.iter().copied().find(|k| k.is_statistical());
    let sweep = match sweep_kind {
        Some(kind) => {
            let rep_seed = derive_seed(cfg.seed, 0);
            let (train, test) = split(&ds, cfg.split_ratio, rep_seed)?;
            let opts = TrainOptions { quantizer: kind, seed: derive_seed(rep_seed, 1), ..cfg.train.clone() };
            let models = train_all(&train, &opts)?.models;
            let s = sweep_threshold(&models, &test, kind, &cfg.thr_grid, &cfg.hypothesis, derive_seed(rep_seed, 2))?;
            let mut w = std::io::BufWriter::new(fs::File::create(a.out_dir.join("sweep.csv"))?);
            writeln!(w, "thr,label,precision,recall")?;
            for c in &s.curves {
                for (i, thr) in s.thr.iter().enumerate() {
                    writeln!(w, "{thr},{},{},{}", c.label, c.precision[i], c.recall[i])?;
                }
            }
            Some(s)
        }
        None => None,
    };
    let gesture_counts = (!a.gesture_counts.is_empty())
        .then(|| gesture_count_sensitivity(&ds, &a.gesture_counts, &cfg))
        .transpose()?;
    let user_counts = (!a.user_counts.is_empty()).then(|| user_count_sensitivity(&ds, &a.user_counts, &cfg)).transpose()?;
    let personalized = a
        .personalize
        .map(|n| personalization(&ds, n, a.rare_weight, QuantizerKind::DeterministicElliptical, &cfg))
        .transpose()?;

    let full = serde_json::json!({
        "protocol": report,
        "threshold_sweep": sweep,
        "gesture_counts": gesture_counts,
        "user_counts": user_counts,
        "personalization": personalized,
    });
    fs::write(a.out_dir.join("protocol.json"), serde_json::to_string_pretty(&full)?)?;
    print_json(&serde_json::json!({
        "gestures": report.gestures,
        "thr": report.thr,
        "summary": report.summary,
        "out_dir": a.out_dir,
    }))
}

fn drift(a: DriftArgs) -> anyhow::Result<()> {
    let radians: Vec<f64> = a.angles.iter().map(|d| d.to_radians()).collect();
    let curve = drift_curve(&radians, a.duration, a.dt).map_err(|e| invalid(e.to_string()))?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "angle_deg,t,position_error,closed_form")?;
    for (deg, rad) in a.angles.iter().zip(&radians) {
        let pts: Vec<_> = curve.iter().filter(|p| p.angle_error == *rad).copied().collect();
        for p in &pts {
            writeln!(out, "{deg},{},{},{}", p.t, p.position_error, drift_closed_form(*rad, p.t))?;
        }
        if let Some(slope) = log_log_slope(&pts) {
            eprintln!("{deg}°: log-log slope {slope:.4}");
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Train(a) => train(a),
        Cmd::Classify(a) => classify_cmd(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Drift(a) => drift(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
