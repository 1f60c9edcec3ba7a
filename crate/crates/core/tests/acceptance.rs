//! One PASS/FAIL line per headline criterion. Run with `--nocapture` to see
//! the report; the test fails if any line fails.

use std::io::Write;
use std::time::Instant;

use quantgest::classify::{classify, classify_deterministic, ClassifierConfig};
use quantgest::codebook::{Codebook, CodebookShape};
use quantgest::drift::{drift_closed_form, drift_curve, log_log_slope};
use quantgest::error_model::build_error_model;
use quantgest::eval::{
    mean_std, personalization, run_protocol, split, sweep_threshold, time_classification, train_all, EvalConfig,
    Threshold, TrainOptions,
};
use quantgest::model::GestureModel;
use quantgest::hmm::{baum_welch_step, baum_welch_train, Hmm, Topology, TrainConfig};
use quantgest::quantize::{
    codeword_probabilities_inverse_distance, gaussian_codeword_weights, nearest_codeword, QuantizerKind,
};
use quantgest::rng::seeded;
use quantgest::synth::{benchmark_templates, synthetic_dataset, SyntheticSpec};
use quantgest::trace::{Dataset, Trace};
use quantgest::uncertain::{pr, HypothesisConfig, Uncertain};
use rand::{Rng, RngCore};

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        let line = format!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        // Straight to the stderr handle: the test harness captures println!,
        // and these lines should show in a plain `cargo test` run.
        let _ = writeln!(std::io::stderr(), "{line}");
        self.lines.push((ok, line));
    }
}

fn stochastic_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = row.iter().sum();
    row.into_iter().map(|x| x / s).collect()
}

fn random_hmm<R: Rng>(n: usize, v: usize, rng: &mut R) -> Hmm {
    let a = (0..n).map(|_| stochastic_row(n, rng)).collect();
    let b = (0..n).map(|_| stochastic_row(v, rng)).collect();
    Hmm::new(a, b, stochastic_row(n, rng), Topology::Ergodic).unwrap()
}

fn brute_force(h: &Hmm, obs: &[usize]) -> f64 {
    let n = h.n_states();
    let mut total = 0.0;
    for code in 0..n.pow(obs.len() as u32) {
        let path: Vec<usize> = (0..obs.len()).map(|t| (code / n.pow(t as u32)) % n).collect();
        let mut p = h.pi()[path[0]] * h.b()[path[0]][obs[0]];
        for t in 1..obs.len() {
            p *= h.a()[path[t - 1]][path[t]] * h.b()[path[t]][obs[t]];
        }
        total += p;
    }
    total
}

fn hmm_oracle(r: &mut Report) {
    let start = Instant::now();
    let mut rng = seeded(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=3);
        let v = rng.random_range(1..=4);
        let h = random_hmm(n, v, &mut rng);
        let len = rng.random_range(1..=6);
        let obs: Vec<usize> = (0..len).map(|_| rng.random_range(0..v)).collect();
        let want = brute_force(&h, &obs);
        let got = h.log_likelihood(&obs).unwrap().exp();
        worst = worst.max((got - want).abs() / want);
    }
    let secs = start.elapsed().as_secs_f64();
    r.check(
        "hmm forward matches path enumeration",
        worst <= 1e-10 && secs < 10.0,
        format!("200 models, worst relative error {worst:.2e} (limit 1e-10), {secs:.2} s (limit 10 s)"),
    );
}

fn em_correctness(r: &mut Report) {
    let mut rng = seeded(202);
    let mut worst_drop = 0.0f64;
    for i in 0..100u64 {
        let v = rng.random_range(2..=5);
        let seqs: Vec<Vec<usize>> = (0..rng.random_range(1..=4))
            .map(|_| (0..rng.random_range(3..=20)).map(|_| rng.random_range(0..v)).collect())
            .collect();
        let topology = if i % 2 == 0 { Topology::Ergodic } else { Topology::LeftToRight { band: 2 } };
        let cfg = TrainConfig {
            n_states: rng.random_range(1..=4),
            n_symbols: v,
            topology,
            max_iters: 60,
            tol: 1e-12,
            seed: i,
            emission_floor: 0.0,
        };
        let (_, report) = baum_welch_train(&seqs, &cfg).unwrap();
        for w in report.log_likelihoods.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    r.check(
        "baum-welch likelihood never decreases",
        worst_drop <= 1e-9,
        format!("100 instances, largest decrease {worst_drop:.2e} (slack 1e-9)"),
    );

    let h = Hmm::new(
        vec![vec![0.7, 0.3], vec![0.4, 0.6]],
        vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        vec![0.6, 0.4],
        Topology::Ergodic,
    )
    .unwrap();
    let step = baum_welch_step(&h, &[vec![0, 1]]).unwrap();
    let want_pi = [837.0 / 1045.0, 208.0 / 1045.0];
    let want_a = [[7.0 / 31.0, 24.0 / 31.0], [1.0 / 13.0, 12.0 / 13.0]];
    let want_b = [[837.0 / 1042.0, 205.0 / 1042.0], [26.0 / 131.0, 105.0 / 131.0]];
    let mut err = (step.log_likelihood - 0.209f64.ln()).abs();
    for i in 0..2 {
        err = err.max((step.hmm.pi()[i] - want_pi[i]).abs());
        for j in 0..2 {
            err = err.max((step.hmm.a()[i][j] - want_a[i][j]).abs());
            err = err.max((step.hmm.b()[i][j] - want_b[i][j]).abs());
        }
    }
    r.check("em step on the two-state fixture", err <= 1e-12, format!("max deviation {err:.2e} (limit 1e-12)"));
}

fn quantizer_distributions(r: &mut Report) {
    let mut rng = seeded(303);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=18);
        let gen = |rng: &mut quantgest::rng::GestureRng, lo: f64, hi: f64| -> Vec<[f64; 3]> {
            (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(lo..hi))).collect()
        };
        let d = gen(&mut rng, -2.0, 2.0);
        let mu = gen(&mut rng, -0.2, 0.2);
        let sigma = gen(&mut rng, 0.0005, 0.5);
        let p = gaussian_codeword_weights(&d, &mu, &sigma);
        worst = worst.max((p.probabilities().iter().sum::<f64>() - 1.0).abs());
        let cb = Codebook::from_template(n.max(2), CodebookShape::Elliptical, [0.1, -0.2, 0.3], [1.0, 0.6, 0.8]).unwrap();
        let sample = [0, 1, 2].map(|_| rng.random_range(-2.0..2.0));
        let q = codeword_probabilities_inverse_distance(&sample, &cb);
        worst = worst.max((q.probabilities().iter().sum::<f64>() - 1.0).abs());
    }
    r.check("codeword distributions sum to one", worst <= 1e-12, format!("worst |sum - 1| {worst:.2e} (limit 1e-12)"));

    // Distances 1 and 3 from the sample at the origin.
    let cb = Codebook::new(vec![[1.0, 0.0, 0.0], [-3.0, 0.0, 0.0]], CodebookShape::Elliptical, [-1.0, 0.0, 0.0], [2.0, 2.0, 2.0])
        .unwrap();
    let q = codeword_probabilities_inverse_distance(&[0.0; 3], &cb);
    let mut rng = seeded(304);
    let draws = 100_000;
    let hits = (0..draws).filter(|_| q.sample(&mut rng) == 0).count() as f64 / draws as f64;
    let analytic_ok = (q.probabilities()[0] - 0.75).abs() < 1e-12;
    let mc_ok = (hits - 0.75).abs() <= 0.01;
    r.check(
        "monte carlo codeword frequencies",
        analytic_ok && mc_ok,
        format!("distances (1, 3): analytic {:.4}, sampled {hits:.4} over 1e5 draws (target 0.75 ± 0.01)", q.probabilities()[0]),
    );
}

fn quiet_spec(templates: Vec<String>, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        templates,
        noise_scale: 0.0,
        orientation_std: 0.0,
        speed_jitter: 0.0,
        seed,
        ..Default::default()
    }
}

/// Moves every sample onto its nearest codeword of `cb`, holding each one
/// for `hold` samples.
fn snapped(trace: &Trace, cb: &Codebook, hold: usize) -> Trace {
    let dt = trace.duration() / (trace.len() * hold - 1) as f64;
    let rows: Vec<[f64; 4]> = trace
        .samples()
        .iter()
        .flat_map(|s| std::iter::repeat_n(cb.codewords()[nearest_codeword(&s.accel(), cb)], hold))
        .enumerate()
        .map(|(i, c)| [i as f64 * dt, c[0], c[1], c[2]])
        .collect();
    Trace::from_rows(&rows).unwrap().with_label(trace.label.clone().unwrap_or_default())
}

/// Models trained on noise-free traces, with error models measured on the
/// same traces resting on their codewords: every residual and every noise
/// estimate is zero, so all σ sit at the floor.
fn zero_noise_models(labels: &[String], kind: QuantizerKind) -> Vec<GestureModel> {
    let train = synthetic_dataset(&quiet_spec(labels.to_vec(), 1), None).unwrap();
    let mut models = train_all(&train, &TrainOptions { quantizer: kind, ..Default::default() }).unwrap().models;
    for m in &mut models {
        let on: Vec<Trace> = train.traces_for(&m.label).map(|t| snapped(t, &m.codebook, 5)).collect();
        let refs: Vec<&Trace> = on.iter().collect();
        m.error_model = build_error_model(&refs, &m.codebook, 7).unwrap();
    }
    models
}

fn degenerate_noise(r: &mut Report) {
    let labels = benchmark_templates(6).unwrap();
    // Fresh subjects, no sensor noise, no jitter.
    let mut test = synthetic_dataset(&SyntheticSpec { subjects: 17, ..quiet_spec(labels.clone(), 2) }, None).unwrap().traces;
    test.truncate(500);
    // Inverse distance has no noise parameter and only collapses onto a
    // codeword when the sample lies on it, so it runs on a shared codebook
    // with the traces moved onto its codewords.
    let cases = [
        (QuantizerKind::StatisticalGmm, QuantizerKind::DeterministicElliptical, false),
        (QuantizerKind::StatisticalRandom, QuantizerKind::DeterministicSpherical, true),
    ];
    for (kind, codebooks, on_codewords) in cases {
        let models = zero_noise_models(&labels, codebooks);
        let floored = models.iter().all(|m| {
            m.error_model.codewords.iter().all(|c| c.noise_std == [0.0; 3] && c.axis_mean == [0.0; 3])
        });
        let mut agree = 0;
        for (i, t) in test.iter().enumerate() {
            let t = if on_codewords { snapped(t, &models[0].codebook, 1) } else { t.clone() };
            let det = classify_deterministic(&t, &models).unwrap().decision;
            let cfg = ClassifierConfig { quantizer: kind, seed: i as u64, ..Default::default() };
            agree += (classify(&t, &models, &cfg).unwrap().decision == det) as usize;
        }
        let rate = agree as f64 / test.len() as f64;
        let setup = if on_codewords { "shared codebook, traces on its codewords" } else { "per-gesture codebooks" };
        r.check(
            &format!("zero noise: {} agrees with deterministic", kind.as_str()),
            floored && rate >= 0.99 && test.len() == 500,
            format!("{agree}/{} traces, {setup}, error model at floor: {floored} ({:.1}%, need 99%)", test.len(), 100.0 * rate),
        );
    }
}

fn ordering(r: &mut Report) {
    let start = Instant::now();
    let kinds = [QuantizerKind::DeterministicSpherical, QuantizerKind::DeterministicElliptical, QuantizerKind::StatisticalGmm];
    let mut means = Vec::new();
    let mut per_kind: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
    for seed in 0..10 {
        let spec = SyntheticSpec { templates: benchmark_templates(10).unwrap(), seed, ..Default::default() };
        let ds = synthetic_dataset(&spec, None).unwrap();
        let cfg = EvalConfig { repetitions: 1, kinds: kinds.to_vec(), thr: Threshold::InverseCount, seed, ..Default::default() };
        for run in run_protocol(&ds, &cfg).unwrap().runs {
            let k = kinds.iter().position(|k| *k == run.metrics.quantizer).unwrap();
            per_kind[k].push(run.metrics.recognition_rate);
        }
    }
    for v in &per_kind {
        means.push(mean_std(v).0);
    }
    let secs = start.elapsed().as_secs_f64();
    let (sph, ell, gmm) = (means[0], means[1], means[2]);
    r.check(
        "quantizer ordering on 10 gestures",
        sph < ell && ell <= gmm && gmm - sph >= 0.10 && secs < 300.0,
        format!(
            "spherical {:.1}% < elliptical {:.1}% <= gmm {:.1}%, gap {:.1} points (need 10), thr 1/N, 10 seeds, {secs:.0} s (limit 300 s)",
            100.0 * sph,
            100.0 * ell,
            100.0 * gmm,
            100.0 * (gmm - sph)
        ),
    );
}

fn two_gestures(r: &mut Report) {
    let mut rates = Vec::new();
    for seed in 0..10 {
        let spec = SyntheticSpec { templates: benchmark_templates(2).unwrap(), seed, ..Default::default() };
        let ds = synthetic_dataset(&spec, None).unwrap();
        let cfg = EvalConfig { repetitions: 1, kinds: vec![QuantizerKind::StatisticalGmm], seed, ..Default::default() };
        rates.push(run_protocol(&ds, &cfg).unwrap().runs[0].metrics.recognition_rate);
    }
    let (m, _) = mean_std(&rates);
    let worst = rates.iter().cloned().fold(1.0, f64::min);
    r.check(
        "two well-separated gestures",
        m >= 0.95,
        format!("gmm mean recognition {:.1}% over 10 seeds, worst seed {:.1}% (need 95%)", 100.0 * m, 100.0 * worst),
    );
}

fn drift(r: &mut Report) {
    let angle = 1f64.to_radians();
    let curve = drift_curve(&[angle], 10.0, 0.01).unwrap();
    let got = curve.last().unwrap().position_error;
    let want = drift_closed_form(angle, 10.0);
    let slope = log_log_slope(&curve).unwrap();
    let ok = (got - want).abs() <= 0.01 * want && (want - 8.5575).abs() < 1e-3 && (1.95..=2.05).contains(&slope);
    r.check(
        "drift of a still phone with 1 degree error",
        ok,
        format!("{got:.4} m after 10 s vs closed form {want:.4} m (1%), log-log slope {slope:.4} (1.95..2.05)"),
    );
}

fn calibration(r: &mut Report) {
    let cfg = HypothesisConfig { prob: 0.5, alpha: 0.1, ..Default::default() };
    let mut rng = seeded(808);
    for (p, want) in [(0.7, true), (0.3, false)] {
        let coin = Uncertain::new(move |rng: &mut dyn RngCore| rng.random_bool(p));
        let hits = (0..500).filter(|_| pr(&coin, &cfg, &mut rng).unwrap() == want).count();
        r.check(
            &format!("hypothesis test on bernoulli({p})"),
            hits as f64 >= 0.95 * 500.0,
            format!("decided {want} in {hits}/500 runs (need 475)"),
        );
    }
}

fn trained(n: usize, kind: QuantizerKind, seed: u64) -> (Vec<GestureModel>, Dataset) {
    let ds = synthetic_dataset(&SyntheticSpec { templates: benchmark_templates(n).unwrap(), seed, ..Default::default() }, None)
        .unwrap();
    let (train, test) = split(&ds, 0.75, seed).unwrap();
    let models = train_all(&train, &TrainOptions { quantizer: kind, seed, ..Default::default() }).unwrap().models;
    (models, test)
}

fn threshold_monotonicity(r: &mut Report) {
    let (models, test) = trained(10, QuantizerKind::StatisticalGmm, 5);
    let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let sweep = sweep_threshold(&models, &test, QuantizerKind::StatisticalGmm, &grid, &HypothesisConfig::default(), 5).unwrap();
    let recall_ok = sweep.curves.iter().all(|c| c.recall.windows(2).all(|w| w[1] <= w[0]));
    let abst_ok = sweep.abstention.windows(2).all(|w| w[1] >= w[0]);
    r.check(
        "threshold sweep monotone",
        recall_ok && abst_ok,
        format!(
            "abstention {} across thr 0.1..0.9, recall non-increasing for all {} gestures: {recall_ok}",
            sweep.abstention.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>().join(" "),
            sweep.curves.len()
        ),
    );
}

fn timing(r: &mut Report) {
    let (models, test) = trained(20, QuantizerKind::StatisticalGmm, 9);
    let cfg = ClassifierConfig { thr: 0.05, ..Default::default() };
    let t = time_classification(
        &models,
        &test,
        &[QuantizerKind::DeterministicElliptical, QuantizerKind::StatisticalGmm],
        &cfg,
    )
    .unwrap();
    let (det, stat) = (t[0].timing.mean_ms, t[1].timing.mean_ms);
    r.check(
        "classification time with 20 gestures",
        stat < 100.0 && det < stat,
        format!("gmm mean {stat:.2} ms (limit 100 ms), deterministic {det:.3} ms, ratio {:.0}x", stat / det),
    );
}

fn personalized(r: &mut Report) {
    let ds = synthetic_dataset(&SyntheticSpec { templates: benchmark_templates(20).unwrap(), seed: 11, ..Default::default() }, None)
        .unwrap();
    let cfg = EvalConfig { repetitions: 10, seed: 11, ..Default::default() };
    let rep = personalization(&ds, 10, 1e-3, QuantizerKind::DeterministicElliptical, &cfg).unwrap();
    r.check(
        "frequency prior on 10 of 20 gestures",
        rep.personalized_mean > rep.uniform_mean,
        format!(
            "recognition of the frequent 10: uniform {:.1}% -> personalized {:.1}% over 10 seeds",
            100.0 * rep.uniform_mean,
            100.0 * rep.personalized_mean
        ),
    );
}

#[test]
fn acceptance() {
    let mut r = Report { lines: Vec::new() };
    hmm_oracle(&mut r);
    em_correctness(&mut r);
    quantizer_distributions(&mut r);
    degenerate_noise(&mut r);
    ordering(&mut r);
    two_gestures(&mut r);
    drift(&mut r);
    calibration(&mut r);
    threshold_monotonicity(&mut r);
    timing(&mut r);
    personalized(&mut r);
    let failed: Vec<&String> = r.lines.iter().filter(|(ok, _)| !ok).map(|(_, l)| l).collect();
    assert!(failed.is_empty(), "{} criteria failed:\n{}", failed.len(), failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
}
