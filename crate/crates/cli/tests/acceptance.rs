//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test --release -p adafocus --test acceptance`.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use adafocus::commands::{evaluate_samples, frontier_rows, Evaluation};
use adafocus::gradcheck::{self, TOLERANCE};
use adafocus_core::cost::{cube_cost, Component};
use adafocus_core::crop::{CubeSize, CubeSpec};
use adafocus_core::earlyexit::{
    fixed_exit, grid_oracle, random_exit, simulate_with, solve_with, Criterion, ExitRecord, SolverOptions,
};
use adafocus_core::model::{
    full_video_local_cost, train, CubePlanner, GradientMode, Inference, ModelComponents, ModelConfig, TrainConfig,
};
use adafocus_core::synth::{generate, Split, SplitSizes, SynthConfig, SynthSplit};

const SEED: u64 = 0;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, n: usize, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("criterion {n} ({name}): {} | {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn points(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn list(v: &[f64]) -> String {
    v.iter().map(|&a| points(a)).collect::<Vec<_>>().join("/")
}

/// Models and evaluations shared by criteria 4 to 7.
struct Trained {
    featuregrad: Evaluation,
    pixelgrad: Evaluation,
    random: Evaluation,
    val_records: Vec<ExitRecord>,
    elapsed: Duration,
}

/// Two-stage training on the default configuration. The first stage (random
/// cubes, policy frozen) is shared; the policy stage runs once per estimator.
fn train_default() -> Trained {
    let start = Instant::now();
    let data = generate(
        &SynthConfig::default(),
        SplitSizes {
            train: 1000,
            val: 200,
            test: 500,
        },
    )
    .expect("dataset");
    let train_split = data.split(Split::Train).materialize();
    let defaults = TrainConfig::default();
    let mut stage_one = ModelComponents::new(ModelConfig::default(), SEED).expect("model");
    train(
        &mut stage_one,
        &train_split,
        &TrainConfig {
            policy_epochs: 0,
            ..defaults.clone()
        },
        |_, _| {},
    )
    .expect("stage one");
    let policy_stage = |mode| {
        let mut m = stage_one.clone();
        let cfg = TrainConfig {
            epochs: 0,
            mode,
            ..defaults.clone()
        };
        train(&mut m, &train_split, &cfg, |_, _| {}).expect("policy stage");
        m
    };
    let featuregrad_model = policy_stage(GradientMode::FeatureGrad);
    let pixelgrad_model = policy_stage(GradientMode::PixelGrad);
    let test: SynthSplit = data.split(Split::Test);
    let eval = |m: &ModelComponents, planner| evaluate_samples(m, &test, planner).expect("evaluation");
    let val_records = evaluate_samples(&featuregrad_model, &data.split(Split::Val), CubePlanner::LEARNED)
        .expect("validation")
        .records;
    Trained {
        featuregrad: eval(&featuregrad_model, CubePlanner::LEARNED),
        pixelgrad: eval(&pixelgrad_model, CubePlanner::LEARNED),
        random: eval(&featuregrad_model, CubePlanner::random(SEED + 1)),
        val_records,
        elapsed: start.elapsed(),
    }
}

/// `lo + f·(hi − lo)` for each fraction, truncated to whole mult-adds.
fn budgets_between(lo: f64, hi: f64, fractions: &[f64]) -> Vec<u64> {
    fractions.iter().map(|f| (lo + f * (hi - lo)) as u64).collect()
}

fn criterion_1(r: &mut Report) {
    let (check, t) = timed(|| gradcheck::pixelgrad_center(200, SEED));
    r.line(
        1,
        "pixel-path centre gradient vs finite differences",
        check.passed() && t < Duration::from_secs(60),
        format!("max rel err {:.2e} over {} off-lattice probes (< {TOLERANCE:e}), {:.2?}", check.max_rel_error, check.probes, t),
    );
}

fn criterion_2(r: &mut Report) {
    let (check, t) = timed(|| gradcheck::feature_center(200, SEED));
    r.line(
        2,
        "feature-path estimator contract",
        check.forward_invariant && check.gradient.passed() && t < Duration::from_secs(60),
        format!(
            "forward bit-identical under centre change: {}; max rel err {:.2e} over {} probes, {:.2?}",
            check.forward_invariant, check.gradient.max_rel_error, check.gradient.probes, t
        ),
    );
}

fn criterion_3(r: &mut Report) {
    let gap = gradcheck::interpolation_oracle(1000, SEED);
    let exact = gradcheck::lattice_crops_exact(1000, SEED);
    r.line(
        3,
        "interpolation vs eight-neighbour brute force",
        gap <= 1e-12 && exact,
        format!("max abs gap {gap:.2e} over 1000 probes (<= 1e-12); lattice crops bit-exact: {exact}"),
    );
}

/// Returns the schedules it solved, as `(budget, thresholds)` for criterion 7.
fn criterion_4(r: &mut Report, val: &[ExitRecord]) -> Vec<(u64, Vec<f64>)> {
    let start = Instant::now();
    let k = val[0].steps.len() - 1;
    let lo = fixed_exit(val, 0).unwrap().mean_cost;
    let hi = fixed_exit(val, k).unwrap().mean_cost;
    let mut pass = true;
    let mut gaps = Vec::new();
    let mut solved = Vec::new();
    for b in budgets_between(lo, hi, &[0.1, 0.3, 0.5, 0.7, 0.9]) {
        let s = solve_with(val, Criterion::Entropy, b, &SolverOptions::default()).unwrap();
        let (_, oracle) = grid_oracle(val, Criterion::Entropy, b, 50).unwrap().expect("oracle has a feasible point");
        let gap = oracle.accuracy - s.outcome.accuracy;
        pass &= gap <= 0.005 + 1e-12 && s.outcome.within(b, val.len());
        gaps.push(format!("B={b}: {} vs oracle {}", points(s.outcome.accuracy), points(oracle.accuracy)));
        solved.push((b, s.schedule.thresholds));
    }
    let t = start.elapsed();
    pass &= t < Duration::from_secs(120);
    r.line(
        4,
        "threshold solver vs 50x50 grid oracle",
        pass,
        format!("{} val samples, K={k}; {}; {:.2?}", val.len(), gaps.join(", "), t),
    );
    solved
}

fn criterion_5(r: &mut Report, tr: &Trained) {
    let fg = tr.featuregrad.accuracy();
    let pg = tr.pixelgrad.accuracy();
    let rnd = tr.random.accuracy();
    let k = fg.len() - 1;
    let policy_gap = fg[1] - rnd[1];
    let a = policy_gap >= 0.03;
    let b = (1..=k).all(|t| fg[t] >= pg[t]) && fg[0] == pg[0];
    let drops: Vec<f64> = fg.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 0.0).collect();
    let c = drops.len() <= 1 && drops.iter().all(|&d| d <= 0.005);
    r.line(
        5,
        "policy and estimator pattern",
        a && b && c && tr.elapsed < Duration::from_secs(30 * 60),
        format!(
            "test accuracy % per t: featuregrad {}, pixelgrad {}, random policy {}; (a) t=1 gap {} pts: {a}; (b): {b}; (c): {c}; trained and evaluated in {:.1?}",
            list(&fg),
            list(&pg),
            list(&rnd),
            points(policy_gap),
            tr.elapsed
        ),
    );
}

/// Budgets span the whole range from the glance alone to every step, so the
/// three operating points are distinct. Schedules are solved on val and scored
/// on test. Returns the schedules (entropy and confidence) for criterion 7.
fn criterion_6(r: &mut Report, tr: &Trained) -> Vec<(u64, Criterion, Vec<f64>)> {
    let val = &tr.val_records;
    let test = &tr.featuregrad.records;
    let k = val[0].steps.len() - 1;
    let lo = fixed_exit(val, 0).unwrap().mean_cost;
    let hi = fixed_exit(val, k).unwrap().mean_cost;
    let mut pass = true;
    let mut detail = Vec::new();
    let mut solved = Vec::new();
    for b in budgets_between(lo, hi, &[0.25, 0.5, 0.75]) {
        let (_, entropy) = frontier_rows(val, b, 1, SEED).unwrap();
        let confidence = solve_with(val, Criterion::Confidence, b, &SolverOptions::default()).unwrap();
        let e = simulate_with(test, Criterion::Entropy, &entropy.schedule.thresholds).unwrap();
        let c = simulate_with(test, Criterion::Confidence, &confidence.schedule.thresholds).unwrap();
        let rnd = random_exit(test, &e.histogram, 100, SEED).unwrap();
        let beats_random = e.accuracy - rnd.accuracy >= 0.01;
        let near_confidence = e.accuracy >= c.accuracy - 0.005;
        pass &= beats_random && near_confidence;
        detail.push(format!(
            "B={b}: entropy {} at {:.0}, random {}±{} at {:.0}, confidence {} at {:.0} (beats random by 1: {beats_random}; within 0.5 of confidence: {near_confidence})",
            points(e.accuracy),
            e.mean_cost,
            points(rnd.accuracy),
            points(rnd.accuracy_stderr),
            rnd.mean_cost,
            points(c.accuracy),
            c.mean_cost
        ));
        solved.push((b, Criterion::Entropy, entropy.schedule.thresholds));
        solved.push((b, Criterion::Confidence, confidence.schedule.thresholds));
    }
    r.line(
        6,
        "entropy exit vs random and confidence exits",
        pass,
        format!("solved on val, scored on {} test samples; {}", test.len(), detail.join("; ")),
    );
    solved
}

fn criterion_7(r: &mut Report, val: &[ExitRecord], schedules: &[(u64, Criterion, Vec<f64>)]) {
    let n = val.len() as u128;
    let mut worst = f64::NEG_INFINITY;
    let pass = schedules.iter().all(|(b, criterion, eta)| {
        let o = simulate_with(val, *criterion, eta).unwrap();
        worst = worst.max(o.mean_cost / *b as f64);
        o.total_cost <= u128::from(*b) * n
    });
    r.line(
        7,
        "budget constraint hardness",
        pass,
        format!(
            "{} solved schedules re-simulated on the solving split; integer check total <= B*n; max realized/B {worst:.6}",
            schedules.len()
        ),
    );
}

fn criterion_8(r: &mut Report) {
    let model = ModelComponents::new(ModelConfig::default(), SEED).unwrap();
    let cube = model.ledger().total(Component::LocalEncoder) as f64;
    let full = full_video_local_cost(&model).unwrap() as f64;
    let volume = model.config.cube.volume() as f64 / model.config.video.iter().product::<usize>() as f64;
    let ratio = cube / full;
    let locality = (ratio / volume - 1.0).abs() <= 0.1;

    let frame_wise = ModelConfig {
        cube: CubeSize::new(16, 16, 1),
        max_cubes: 8,
        ..ModelConfig::default()
    };
    let fw = ModelComponents::new(frame_wise, SEED).unwrap();
    let ledger = fw.ledger();
    let local = ledger.total(Component::LocalEncoder);
    let spec = CubeSpec::new([20.0, 30.0, 5.5], fw.config.cube);
    let direct = cube_cost(local, &spec, fw.config.video, &BTreeSet::from([5]));
    // the zero-initialised policy places every cube on the same frame
    let video = adafocus_core::diff::Tensor::full(&[64, 64, 16, 1], 0.5);
    let trace = Inference::new(&fw, &video, CubePlanner::LEARNED, 0).unwrap().run().unwrap();
    let increments: Vec<u64> = trace.cumulative_madds.windows(2).skip(1).map(|w| w[1] - w[0]).collect();
    let classifier = ledger.total(Component::Classifier);
    let dedup = direct == 0 && increments.iter().all(|&d| d == classifier);
    r.line(
        8,
        "cost-model locality and frame dedup",
        locality && dedup,
        format!(
            "cube/full f_L cost {ratio:.5} vs volume ratio {volume:.5} (off by {:.2}%); repeated T'=1 cube adds {direct} f_L mult-adds, later steps add only the classifier's {classifier}",
            100.0 * (ratio / volume - 1.0).abs()
        ),
    );
}

const SMALL_CONFIG: &str = "\
seed = 7
data.height = 32
data.width = 32
data.frames = 8
data.glyph = 8
data.classes = 10
data.trajectory = static
data.window = 4
data.noise = 0.1
data.distractors = 2
data.train = 60
data.val = 20
data.test = 20
model.cube = 16x16x4
model.max_cubes = 2
model.global_channels = 4,8
model.local_channels = 8,16,32,32
train.epochs = 2
train.policy_epochs = 2
train.batch_size = 8
train.learning_rate = 0.2
train.policy_learning_rate = 0.05
train.momentum = 0.9
train.weight_decay = 0.0001
train.mode = featuregrad
train.schedule = two_stage
train.policy = learned
train.offsets = centered
";

fn run_cli(args: &[&str], root: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_adafocus"))
        .args(args)
        .current_dir(root)
        .env_remove("ADAFOCUS_SEED")
        .stderr(std::process::Stdio::null())
        .status()
        .expect("spawn adafocus");
    assert!(status.success(), "adafocus {args:?} failed with {status}");
}

fn pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    std::fs::write(root.join("run.conf"), SMALL_CONFIG).unwrap();
    run_cli(&["generate", "--config", "run.conf", "--out", "data"], root);
    run_cli(&["train", "--dataset", "data", "--config", "run.conf", "--out", "run"], root);
    run_cli(&["eval", "--checkpoint", "run/checkpoint.ackp", "--dataset", "data", "--out", "eval"], root);
    [
        "data/manifest.csv",
        "run/training_curve.csv",
        "run/ledger.csv",
        "eval/records.csv",
        "eval/accuracy.csv",
        "eval/summary.csv",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(root.join(f)).unwrap()))
    .collect()
}

fn criterion_9(r: &mut Report) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    r.line(
        9,
        "determinism of train + eval CSVs",
        differing.is_empty(),
        format!("{} CSVs compared across two runs in separate directories; differing: {differing:?}", first.len()),
    );
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        // test discovery: this target is a single custom harness
        println!("acceptance: test");
        return;
    }
    let mut report = Report { failures: 0 };
    criterion_1(&mut report);
    criterion_2(&mut report);
    criterion_3(&mut report);
    let trained = train_default();
    let entropy_schedules = criterion_4(&mut report, &trained.val_records);
    criterion_5(&mut report, &trained);
    let mut schedules = criterion_6(&mut report, &trained);
    schedules.extend(entropy_schedules.into_iter().map(|(b, eta)| (b, Criterion::Entropy, eta)));
    criterion_7(&mut report, &trained.val_records, &schedules);
    criterion_8(&mut report);
    criterion_9(&mut report);
    println!("{} of 9 criteria passed", 9 - report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
