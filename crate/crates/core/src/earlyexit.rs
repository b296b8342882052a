//! Entropy-based early exit under a mean-cost budget.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::PredictionTrace;
use crate::synth::stream_rng;

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|&x| x.is_nan() || x < 0.0) {
        return Err(Error::NotNormalized { sum });
    }
    Ok(-p.iter().filter(|&&x| x > 0.0).map(|&x| x * libm::log(x)).sum::<f64>())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub entropy: f64,
    pub max_prob: f64,
    pub correct: bool,
    pub cumulative_madds: u64,
}

/// Steps `0..=K` of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitRecord {
    pub sample_id: u64,
    pub steps: Vec<StepRecord>,
}

impl ExitRecord {
    pub fn from_trace(sample_id: u64, trace: &PredictionTrace, label: usize) -> Result<Self> {
        let steps = trace
            .probabilities
            .iter()
            .zip(&trace.cumulative_madds)
            .enumerate()
            .map(|(t, (p, &c))| {
                Ok(StepRecord {
                    entropy: entropy(p)?,
                    max_prob: p.iter().copied().fold(0.0, f64::max),
                    correct: trace.predicted(t) == label,
                    cumulative_madds: c,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sample_id, steps })
    }
}

/// Checks that every record has `K + 1` steps with costs strictly increasing; returns `K`.
pub fn validate_records(records: &[ExitRecord]) -> Result<usize> {
    let first = records.first().ok_or(Error::EmptyDataset)?;
    let k = first.steps.len().checked_sub(1).ok_or_else(|| Error::InvalidRecords("record without steps".into()))?;
    for r in records {
        if r.steps.len() != k + 1 {
            return Err(Error::InvalidRecords(format!(
                "sample {} has {} steps, expected {}",
                r.sample_id,
                r.steps.len(),
                k + 1
            )));
        }
        if r.steps.windows(2).any(|w| w[1].cumulative_madds <= w[0].cumulative_madds) {
            return Err(Error::InvalidRecords(format!("sample {} has non-increasing costs", r.sample_id)));
        }
        if r.steps.iter().any(|s| s.entropy.is_nan() || s.entropy < 0.0 || !(0.0..=1.0).contains(&s.max_prob)) {
            return Err(Error::InvalidRecords(format!("sample {} has an invalid entropy or probability", r.sample_id)));
        }
    }
    Ok(k)
}

/// Exit score: a sample leaves at the first `t` whose score is `≤ η_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    Entropy,
    /// Score `1 − max_j p_j`.
    Confidence,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Entropy => "entropy",
            Criterion::Confidence => "confidence",
        }
    }

    pub fn score(self, s: &StepRecord) -> f64 {
        match self {
            Criterion::Entropy => s.entropy,
            Criterion::Confidence => 1.0 - s.max_prob,
        }
    }
}

/// Thresholds `η_0 … η_{K−1}`; step `K` always exits.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSchedule {
    pub thresholds: Vec<f64>,
    /// Mean mult-adds per video the schedule was solved for.
    pub budget: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitOutcome {
    /// Fraction of correct predictions at the exit step.
    pub accuracy: f64,
    pub mean_cost: f64,
    /// Sum of exit-step costs; `mean_cost = total_cost / n`.
    pub total_cost: u128,
    /// Samples exiting at each step `0..=K`.
    pub histogram: Vec<usize>,
}

impl ExitOutcome {
    /// Exact `mean_cost ≤ budget`.
    pub fn within(&self, budget: u64, samples: usize) -> bool {
        self.total_cost <= u128::from(budget) * samples as u128
    }

    fn better_than(&self, other: &ExitOutcome) -> bool {
        self.accuracy > other.accuracy || (self.accuracy == other.accuracy && self.total_cost < other.total_cost)
    }
}

fn outcome_from_exits(records: &[ExitRecord], exits: impl Iterator<Item = usize>, k: usize) -> ExitOutcome {
    let mut histogram = vec![0; k + 1];
    let mut correct = 0usize;
    let mut total = 0u128;
    for (r, t) in records.iter().zip(exits) {
        histogram[t] += 1;
        correct += usize::from(r.steps[t].correct);
        total += u128::from(r.steps[t].cumulative_madds);
    }
    let n = records.len() as f64;
    ExitOutcome {
        accuracy: correct as f64 / n,
        mean_cost: total as f64 / n,
        total_cost: total,
        histogram,
    }
}

fn exit_step(r: &ExitRecord, criterion: Criterion, thresholds: &[f64]) -> usize {
    thresholds
        .iter()
        .zip(&r.steps)
        .position(|(&eta, s)| criterion.score(s) <= eta)
        .unwrap_or(thresholds.len())
}

/// Exits under `criterion` with the given thresholds.
pub fn simulate_with(records: &[ExitRecord], criterion: Criterion, thresholds: &[f64]) -> Result<ExitOutcome> {
    let k = validate_records(records)?;
    if thresholds.len() != k {
        return Err(Error::InvalidRecords(format!(
            "{} thresholds for records with K = {k}",
            thresholds.len()
        )));
    }
    Ok(outcome_from_exits(records, records.iter().map(|r| exit_step(r, criterion, thresholds)), k))
}

/// Entropy exit with the schedule's thresholds; ties exit.
pub fn simulate(records: &[ExitRecord], schedule: &ThresholdSchedule) -> Result<ExitOutcome> {
    simulate_with(records, Criterion::Entropy, &schedule.thresholds)
}

/// Every sample exits at step `t`.
pub fn fixed_exit(records: &[ExitRecord], t: usize) -> Result<ExitOutcome> {
    let k = validate_records(records)?;
    if t > k {
        return Err(Error::InvalidRecords(format!("step {t} beyond K = {k}")));
    }
    Ok(outcome_from_exits(records, core::iter::repeat(t), k))
}

/// Thresholds that let a fraction `proportions[t]` of all samples exit at
/// `t`: among the samples still running, the `round(n·π_t)` lowest scores
/// leave, and `η_t` is the largest of them.
pub fn quantile_thresholds(records: &[ExitRecord], criterion: Criterion, proportions: &[f64]) -> Vec<f64> {
    let n = records.len();
    let k = proportions.len() - 1;
    let mut running: Vec<usize> = (0..n).collect();
    let mut target_exited = 0.0;
    let mut exited = 0usize;
    let mut thresholds = Vec::with_capacity(k);
    for (t, &p) in proportions.iter().take(k).enumerate() {
        target_exited += p * n as f64;
        let quota = (libm::round(target_exited) as usize).saturating_sub(exited).min(running.len());
        if quota == 0 {
            thresholds.push(-1.0);
            continue;
        }
        let mut scores: Vec<(f64, usize)> = running.iter().map(|&i| (criterion.score(&records[i].steps[t]), i)).collect();
        scores.sort_by(|a, b| a.0.total_cmp(&b.0));
        let eta = scores[quota - 1].0;
        thresholds.push(eta);
        running.retain(|&i| criterion.score(&records[i].steps[t]) > eta);
        exited = n - running.len();
    }
    thresholds
}

/// Exit proportions `∝ q^t` for `t = 0..=K`.
pub fn geometric_proportions(q: f64, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..=k).map(|t| libm::pow(q, t as f64)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Number of `q` values, log-spaced over `[q_min, q_max]`.
    pub scan_points: usize,
    pub q_min: f64,
    pub q_max: f64,
    /// Coordinate-wise threshold search seeded with the best scanned schedule.
    pub refine: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            scan_points: 401,
            q_min: 1e-3,
            q_max: 1e3,
            refine: true,
        }
    }
}

/// Solved thresholds with their outcome on the solving records.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub schedule: ThresholdSchedule,
    pub outcome: ExitOutcome,
    /// Decay parameter of the best scanned proportions.
    pub q: f64,
}

/// Highest-accuracy thresholds whose mean cost on `records` is at most `budget`.
pub fn solve_thresholds(records: &[ExitRecord], budget: u64) -> Result<ThresholdSchedule> {
    solve_with(records, Criterion::Entropy, budget, &SolverOptions::default()).map(|s| s.schedule)
}

pub fn solve_with(records: &[ExitRecord], criterion: Criterion, budget: u64, options: &SolverOptions) -> Result<Solution> {
    let k = validate_records(records)?;
    let n = records.len();
    let glance_cost = records.iter().map(|r| r.steps[0].cumulative_madds).max().expect("non-empty");
    if budget < glance_cost {
        return Err(Error::InfeasibleBudget { budget, glance_cost });
    }
    // Every sample leaving at step 0 always fits.
    let mut best_thresholds = vec![f64::INFINITY; k];
    let mut best = simulate_with(records, criterion, &best_thresholds)?;
    let mut best_q = 0.0;
    let steps = options.scan_points.max(2);
    for i in 0..steps {
        let frac = i as f64 / (steps - 1) as f64;
        let q = libm::exp(libm::log(options.q_min) + frac * (libm::log(options.q_max) - libm::log(options.q_min)));
        let thresholds = quantile_thresholds(records, criterion, &geometric_proportions(q, k));
        let outcome = simulate_with(records, criterion, &thresholds)?;
        if outcome.within(budget, n) && outcome.better_than(&best) {
            best = outcome;
            best_thresholds = thresholds;
            best_q = q;
        }
    }
    if options.refine && k > 0 {
        let candidates: Vec<Vec<f64>> = (0..k)
            .map(|t| {
                let mut c: Vec<f64> = records.iter().map(|r| criterion.score(&r.steps[t])).collect();
                c.push(-1.0);
                c.push(f64::INFINITY);
                c.sort_by(|a, b| a.total_cmp(b));
                c.dedup();
                c
            })
            .collect();
        for _ in 0..8 {
            let mut improved = false;
            for t in 0..k {
                let mut trial = best_thresholds.clone();
                for &eta in &candidates[t] {
                    trial[t] = eta;
                    let outcome = simulate_with(records, criterion, &trial)?;
                    if outcome.within(budget, n) && outcome.better_than(&best) {
                        best = outcome;
                        best_thresholds = trial.clone();
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    Ok(Solution {
        schedule: ThresholdSchedule {
            thresholds: best_thresholds,
            budget,
        },
        outcome: best,
        q: best_q,
    })
}

/// Exhaustive search over `points` candidate thresholds per stage: `−1`
/// (never exit) and evenly spaced quantiles of that stage's scores.
pub fn grid_oracle(records: &[ExitRecord], criterion: Criterion, budget: u64, points: usize) -> Result<Option<(Vec<f64>, ExitOutcome)>> {
    let k = validate_records(records)?;
    let n = records.len();
    let axes: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            let mut scores: Vec<f64> = records.iter().map(|r| criterion.score(&r.steps[t])).collect();
            scores.sort_by(|a, b| a.total_cmp(b));
            let mut axis = vec![-1.0];
            let m = points.saturating_sub(1).max(1);
            for i in 0..m {
                let idx = if m == 1 { n - 1 } else { i * (n - 1) / (m - 1) };
                axis.push(scores[idx]);
            }
            axis
        })
        .collect();
    let mut best: Option<(Vec<f64>, ExitOutcome)> = None;
    let mut index = vec![0usize; k];
    loop {
        let thresholds: Vec<f64> = index.iter().enumerate().map(|(t, &i)| axes[t][i]).collect();
        let outcome = simulate_with(records, criterion, &thresholds)?;
        if outcome.within(budget, n) && best.as_ref().is_none_or(|(_, b)| outcome.better_than(b)) {
            best = Some((thresholds, outcome));
        }
        let mut axis = 0;
        loop {
            if axis == k {
                return Ok(best);
            }
            index[axis] += 1;
            if index[axis] < axes[axis].len() {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomExitSummary {
    pub accuracy: f64,
    /// Standard error of the accuracy across seeds.
    pub accuracy_stderr: f64,
    pub mean_cost: f64,
}

const RANDOM_EXIT_STREAM: u64 = 0x1417_0005;

/// Exits chosen uniformly at random with exactly `histogram[t]` samples
/// leaving at step `t`, averaged over `seeds` draws.
pub fn random_exit(records: &[ExitRecord], histogram: &[usize], seeds: usize, seed: u64) -> Result<RandomExitSummary> {
    let k = validate_records(records)?;
    if histogram.len() != k + 1 || histogram.iter().sum::<usize>() != records.len() || seeds == 0 {
        return Err(Error::InvalidRecords(format!(
            "histogram {histogram:?} does not partition {} samples over {} steps",
            records.len(),
            k + 1
        )));
    }
    let mut stages: Vec<usize> = histogram.iter().enumerate().flat_map(|(t, &c)| core::iter::repeat_n(t, c)).collect();
    let mut accs = Vec::with_capacity(seeds);
    let mut cost = 0.0;
    for s in 0..seeds {
        stages.shuffle(&mut stream_rng(seed, RANDOM_EXIT_STREAM, s as u64));
        let o = outcome_from_exits(records, stages.iter().copied(), k);
        accs.push(o.accuracy);
        cost += o.mean_cost;
    }
    let m = seeds as f64;
    let mean = accs.iter().sum::<f64>() / m;
    let var = if seeds > 1 {
        accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok(RandomExitSummary {
        accuracy: mean,
        accuracy_stderr: libm::sqrt(var / m),
        mean_cost: cost / m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, steps: &[(f64, bool)]) -> ExitRecord {
        ExitRecord {
            sample_id: id,
            steps: steps
                .iter()
                .enumerate()
                .map(|(t, &(e, c))| StepRecord {
                    entropy: e,
                    max_prob: 1.0 - e / 3.0,
                    correct: c,
                    cumulative_madds: 10 + 100 * t as u64,
                })
                .collect(),
        }
    }

    fn hand_records() -> Vec<ExitRecord> {
        vec![
            rec(0, &[(0.2, true), (0.1, true), (0.0, true)]),
            rec(1, &[(1.5, false), (0.4, true), (0.3, true)]),
            rec(2, &[(2.0, false), (1.8, false), (1.0, true)]),
        ]
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.1; 10]).unwrap() - libm::log(10.0)).abs() < 1e-12);
        assert!((entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.5 * core::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(entropy(&[0.5, 0.4]), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn degenerate_schedules() {
        let r = hand_records();
        let all_exit = simulate_with(&r, Criterion::Entropy, &[f64::INFINITY; 2]).unwrap();
        assert_eq!(all_exit.histogram, vec![3, 0, 0]);
        assert_eq!(all_exit.mean_cost, 10.0);
        let never = simulate_with(&r, Criterion::Entropy, &[-1.0; 2]).unwrap();
        assert_eq!(never.histogram, vec![0, 0, 3]);
        assert_eq!(never.accuracy, 1.0);
    }

    #[test]
    fn hand_computed_exits() {
        let r = hand_records();
        // sample 0 exits at 0 (tie), sample 1 at 1, sample 2 at 2
        let o = simulate_with(&r, Criterion::Entropy, &[0.2, 0.4]).unwrap();
        assert_eq!(o.histogram, vec![1, 1, 1]);
        assert_eq!(o.accuracy, 1.0);
        assert_eq!(o.total_cost, 10 + 110 + 210);
        let o = simulate_with(&r, Criterion::Entropy, &[1.5, 2.0]).unwrap();
        assert_eq!(o.histogram, vec![2, 1, 0]);
        assert!((o.accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_stage_quantile() {
        let r: Vec<ExitRecord> = (0..10).map(|i| rec(i, &[(i as f64 / 10.0, true), (0.0, true)])).collect();
        let t = quantile_thresholds(&r, Criterion::Entropy, &[0.3, 0.7]);
        assert_eq!(t, vec![0.2]);
        assert_eq!(simulate_with(&r, Criterion::Entropy, &t).unwrap().histogram, vec![3, 7]);
    }

    #[test]
    fn solver_respects_budget() {
        let r = hand_records();
        assert!(matches!(solve_thresholds(&r, 9), Err(Error::InfeasibleBudget { budget: 9, glance_cost: 10 })));
        for budget in [10, 50, 110, 150, 210, 500] {
            let s = solve_thresholds(&r, budget).unwrap();
            let o = simulate(&r, &s).unwrap();
            assert!(o.within(budget, r.len()), "budget {budget}: {o:?}");
        }
        // (10 + 110 + 210) / 3 = 110 affords the perfect schedule
        assert_eq!(simulate(&r, &solve_thresholds(&r, 110).unwrap()).unwrap().accuracy, 1.0);
    }

    #[test]
    fn random_exit_matches_histogram_cost() {
        let r = hand_records();
        let s = random_exit(&r, &[0, 0, 3], 10, 1).unwrap();
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.accuracy_stderr, 0.0);
        assert!(random_exit(&r, &[1, 1], 10, 1).is_err());
    }

    #[test]
    fn fixed_exit_costs() {
        let r = hand_records();
        assert_eq!(fixed_exit(&r, 1).unwrap().mean_cost, 110.0);
        assert!(fixed_exit(&r, 3).is_err());
    }
}
