//! Subcommand implementations. Data goes to files; progress goes to stderr.

use std::path::{Path, PathBuf};

use adafocus_core::earlyexit::{
    fixed_exit, random_exit, solve_with, Criterion, ExitRecord, Solution, SolverOptions, ThresholdSchedule,
};
use adafocus_core::model::{train as fit, CubePlanner, Inference, ModelComponents};
use adafocus_core::synth::{policy_iou, AnnotatedSample, Samples, Split};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{write_dataset, DatasetDir};
use crate::error::{Error, Result};
use crate::formats::{
    histogram_text, write_ledger, write_records, write_rows, write_schedule, AccuracyRow, CurveRow, FrontierRow,
};
use crate::gradcheck::{self, OpCheck};
use crate::manifest::RunManifest;
use crate::{checkpoint, formats};

pub const CHECKPOINT_FILE: &str = "checkpoint.ackp";
pub const CURVE_FILE: &str = "training_curve.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))
}

/// Writes a dataset directory for `config`.
pub fn generate(config: &RunConfig, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::start("generate", config.seed, config.to_text());
    manifest.outputs = write_dataset(out, config)?;
    manifest.finish(out)?;
    Ok(())
}

/// Trains on the dataset's training split; writes the checkpoint, training
/// curve and cost ledger into `out`.
pub fn train(dataset: &Path, config: &RunConfig, out: &Path) -> Result<ModelComponents> {
    let data = DatasetDir::open(dataset)?;
    let model_config = config.model.resolve(data.video_extents(), data.classes());
    let mut model = ModelComponents::new(model_config, config.seed)?;
    let history = fit(&mut model, &data.split(Split::Train), &config.train, |s, _| {
        eprintln!(
            "epoch {} phase {} lr {:.5} loss {:.5}",
            s.epoch, s.phase, s.learning_rate, s.mean_loss
        );
    })?;
    create_dir(out)?;
    let mut manifest = RunManifest::start("train", config.seed, config.to_text());
    manifest.inputs.push(dataset.to_path_buf());
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &model)?;
    let curve = out.join(CURVE_FILE);
    write_rows(&curve, &history.iter().map(CurveRow::from).collect::<Vec<_>>())?;
    let ledger = out.join(LEDGER_FILE);
    write_ledger(&ledger, &model.ledger())?;
    manifest.checkpoint = Some(ckpt.clone());
    manifest.outputs = vec![ckpt, curve, ledger];
    manifest.finish(out)?;
    Ok(model)
}

/// Records and placement quality of one evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub records: Vec<ExitRecord>,
    pub table: Vec<AccuracyRow>,
    /// Mean IoU over every planned cube of every sample.
    pub mean_iou: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> Vec<f64> {
        self.table.iter().map(|r| r.accuracy).collect()
    }
}

/// Runs inference on `n` samples in parallel; output order follows the index.
pub fn evaluate_with(
    model: &ModelComponents,
    n: usize,
    fetch: impl Fn(usize) -> Result<AnnotatedSample> + Sync,
    planner: CubePlanner,
) -> Result<Evaluation> {
    if n == 0 {
        return Err(adafocus_core::Error::EmptyDataset.into());
    }
    let k = model.config.max_cubes;
    let per_sample: Vec<(ExitRecord, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = fetch(i)?;
            let trace = Inference::new(model, &s.video, planner, s.id)?.run()?;
            let ious = trace.cubes.iter().map(|c| policy_iou(c, &s.truth_cube)).collect();
            Ok((ExitRecord::from_trace(s.id, &trace, s.label)?, ious))
        })
        .collect::<Result<_>>()?;
    let m = n as f64;
    let table = (0..=k)
        .map(|t| AccuracyRow {
            t,
            accuracy: per_sample.iter().filter(|(r, _)| r.steps[t].correct).count() as f64 / m,
            mean_cumulative_madds: per_sample.iter().map(|(r, _)| r.steps[t].cumulative_madds as f64).sum::<f64>() / m,
            mean_iou: (t > 0).then(|| per_sample.iter().map(|(_, iou)| iou[t - 1]).sum::<f64>() / m),
        })
        .collect();
    let mean_iou = per_sample.iter().flat_map(|(_, iou)| iou).sum::<f64>() / (m * k as f64);
    Ok(Evaluation {
        records: per_sample.into_iter().map(|(r, _)| r).collect(),
        table,
        mean_iou,
    })
}

pub fn evaluate_samples<S: Samples + Sync + ?Sized>(
    model: &ModelComponents,
    samples: &S,
    planner: CubePlanner,
) -> Result<Evaluation> {
    evaluate_with(model, samples.len(), |i| Ok(samples.get(i).into_owned()), planner)
}

#[derive(serde::Serialize)]
struct SummaryRow<'a> {
    metric: &'a str,
    value: String,
}

/// Evaluates a checkpoint on one split of a dataset directory.
pub fn eval(checkpoint_path: &Path, dataset: &Path, split: Split, planner: CubePlanner, out: &Path) -> Result<Evaluation> {
    let model = checkpoint::load(checkpoint_path)?;
    let data = DatasetDir::open(dataset)?;
    let part = data.split(split);
    let evaluation = evaluate_with(&model, part.len(), |i| part.load(i), planner)?;
    create_dir(out)?;
    let records = out.join(RECORDS_FILE);
    write_records(&records, &evaluation.records)?;
    let accuracy = out.join(ACCURACY_FILE);
    write_rows(&accuracy, &evaluation.table)?;
    let summary = out.join(SUMMARY_FILE);
    write_rows(
        &summary,
        &[
            SummaryRow {
                metric: "split",
                value: split.name().into(),
            },
            SummaryRow {
                metric: "policy",
                value: planner.mode.name().into(),
            },
            SummaryRow {
                metric: "samples",
                value: part.len().to_string(),
            },
            SummaryRow {
                metric: "mean_policy_iou",
                value: evaluation.mean_iou.to_string(),
            },
        ],
    )?;
    for row in &evaluation.table {
        eprintln!("t={} accuracy {:.4} mean madds {:.0}", row.t, row.accuracy, row.mean_cumulative_madds);
    }
    eprintln!("mean policy IoU {:.4}", evaluation.mean_iou);
    let mut manifest = RunManifest::start("eval", planner.seed, format!("split = {}\npolicy = {}\n", split.name(), planner.mode.name()));
    manifest.checkpoint = Some(checkpoint_path.to_path_buf());
    manifest.inputs.push(dataset.to_path_buf());
    manifest.outputs = vec![records, accuracy, summary];
    manifest.finish(out)?;
    Ok(evaluation)
}

fn solve(records: &[ExitRecord], criterion: Criterion, budget: u64) -> Result<Solution> {
    solve_with(records, criterion, budget, &SolverOptions::default()).map_err(|e| match e {
        adafocus_core::Error::InfeasibleBudget { .. } => Error::Usage(e.to_string()),
        other => other.into(),
    })
}

/// Solves entropy (or confidence) thresholds for `budget` mean mult-adds per video.
pub fn solve_thresholds(records_path: &Path, budget: u64, criterion: Criterion, out: &Path) -> Result<ThresholdSchedule> {
    let records = formats::read_records(records_path)?;
    let solution = solve(&records, criterion, budget)?;
    write_schedule(out, &solution.schedule)?;
    eprintln!(
        "{} thresholds {:?}: accuracy {:.4}, mean cost {:.1} (budget {budget}), exits {:?}",
        criterion.name(),
        solution.schedule.thresholds,
        solution.outcome.accuracy,
        solution.outcome.mean_cost,
        solution.outcome.histogram
    );
    Ok(solution.schedule)
}

/// Frontier rows for one budget: entropy, confidence, random with the entropy
/// exit histogram, and the deepest fixed step within budget.
pub fn frontier_rows(records: &[ExitRecord], budget: u64, shuffles: usize, seed: u64) -> Result<(Vec<FrontierRow>, Solution)> {
    let row = |policy: &str, cost: f64, accuracy: f64, stderr: f64, hist: &[usize]| FrontierRow {
        policy: policy.to_string(),
        budget,
        realized_cost: cost,
        accuracy,
        accuracy_stderr: stderr,
        histogram: histogram_text(hist),
    };
    let entropy = solve(records, Criterion::Entropy, budget)?;
    let confidence = solve(records, Criterion::Confidence, budget)?;
    let random = random_exit(records, &entropy.outcome.histogram, shuffles, seed)?;
    let k = entropy.outcome.histogram.len() - 1;
    let mut fixed = fixed_exit(records, 0)?;
    for t in 1..=k {
        let o = fixed_exit(records, t)?;
        if o.within(budget, records.len()) {
            fixed = o;
        }
    }
    let e = &entropy.outcome;
    let c = &confidence.outcome;
    let rows = vec![
        row("entropy", e.mean_cost, e.accuracy, 0.0, &e.histogram),
        row("confidence", c.mean_cost, c.accuracy, 0.0, &c.histogram),
        row("random", random.mean_cost, random.accuracy, random.accuracy_stderr, &e.histogram),
        row("fixed", fixed.mean_cost, fixed.accuracy, 0.0, &fixed.histogram),
    ];
    Ok((rows, entropy))
}

/// Budget sweep over a records file; optionally stores each entropy schedule.
pub fn sweep(
    records_path: &Path,
    budgets: &[u64],
    shuffles: usize,
    seed: u64,
    out: &Path,
    schedules: Option<&Path>,
) -> Result<Vec<FrontierRow>> {
    let records = formats::read_records(records_path)?;
    let per_budget: Vec<(Vec<FrontierRow>, Solution)> = budgets
        .par_iter()
        .map(|&b| frontier_rows(&records, b, shuffles, seed))
        .collect::<Result<_>>()?;
    let mut written: Vec<PathBuf> = Vec::new();
    if let Some(dir) = schedules {
        create_dir(dir)?;
        for (_, s) in &per_budget {
            let path = dir.join(format!("schedule_{}.csv", s.schedule.budget));
            write_schedule(&path, &s.schedule)?;
            written.push(path);
        }
    }
    let rows: Vec<FrontierRow> = per_budget.into_iter().flat_map(|(r, _)| r).collect();
    write_rows(out, &rows)?;
    eprintln!("wrote {} frontier rows and {} schedules", rows.len(), written.len());
    Ok(rows)
}

/// Finite-difference suite plus the interpolation oracle.
pub fn gradcheck(seed: u64) -> (Vec<OpCheck>, f64, bool) {
    let checks = gradcheck::suite(seed);
    let oracle = gradcheck::interpolation_oracle(1000, seed);
    let lattice = gradcheck::lattice_crops_exact(200, seed);
    (checks, oracle, lattice)
}
