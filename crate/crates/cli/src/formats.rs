//! CSV artifacts: exit records, threshold schedules, frontiers, cost ledgers
//! and training curves. Floats are written in shortest round-trip form so
//! identical runs produce identical bytes.

use std::path::Path;

use adafocus_core::cost::CostLedger;
use adafocus_core::earlyexit::{validate_records, ExitRecord, StepRecord, ThresholdSchedule};
use adafocus_core::model::EpochStats;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    for r in rows {
        w.serialize(r).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(Error::csv(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub sample_id: u64,
    pub t: usize,
    pub entropy: f64,
    pub max_prob: f64,
    /// 1 when `argmax(p_t)` is the label.
    pub correct: u8,
    pub cumulative_madds: u64,
}

pub fn write_records(path: &Path, records: &[ExitRecord]) -> Result<()> {
    let rows: Vec<RecordRow> = records
        .iter()
        .flat_map(|r| {
            r.steps.iter().enumerate().map(|(t, s)| RecordRow {
                sample_id: r.sample_id,
                t,
                entropy: s.entropy,
                max_prob: s.max_prob,
                correct: u8::from(s.correct),
                cumulative_madds: s.cumulative_madds,
            })
        })
        .collect();
    write_rows(path, &rows)
}

/// Groups rows into records; each sample's rows must be contiguous with `t = 0, 1, …`.
pub fn read_records(path: &Path) -> Result<Vec<ExitRecord>> {
    let rows: Vec<RecordRow> = read_rows(path)?;
    let mut records: Vec<ExitRecord> = Vec::new();
    for (line, row) in rows.into_iter().enumerate() {
        let step = StepRecord {
            entropy: row.entropy,
            max_prob: row.max_prob,
            correct: match row.correct {
                0 => false,
                1 => true,
                c => return Err(Error::format(path, format!("row {}: correct must be 0 or 1, got {c}", line + 2))),
            },
            cumulative_madds: row.cumulative_madds,
        };
        match records.last_mut() {
            Some(r) if r.sample_id == row.sample_id && row.t == r.steps.len() => r.steps.push(step),
            _ if row.t == 0 => records.push(ExitRecord {
                sample_id: row.sample_id,
                steps: vec![step],
            }),
            _ => {
                return Err(Error::format(
                    path,
                    format!("row {}: step {} of sample {} is out of sequence", line + 2, row.t, row.sample_id),
                ))
            }
        }
    }
    validate_records(&records).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(records)
}

/// `budget,B` then `t,eta` and one row per threshold.
pub fn write_schedule(path: &Path, schedule: &ThresholdSchedule) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    let e = Error::csv(path);
    let mut rows = vec![
        ["budget".to_string(), schedule.budget.to_string()],
        ["t".to_string(), "eta".to_string()],
    ];
    rows.extend(schedule.thresholds.iter().enumerate().map(|(t, eta)| [t.to_string(), eta.to_string()]));
    rows.iter()
        .try_for_each(|r| w.write_record(r))
        .map_err(e)?;
    w.flush().map_err(Error::io(path))
}

pub fn read_schedule(path: &Path) -> Result<ThresholdSchedule> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(Error::csv(path))?;
    let rows: Vec<csv::StringRecord> = r.records().collect::<Result<_, _>>().map_err(Error::csv(path))?;
    let bad = |detail: String| Error::format(path, detail);
    let budget = match rows.first() {
        Some(r) if &r[0] == "budget" => r[1].parse().map_err(|_| bad(format!("bad budget `{}`", &r[1])))?,
        _ => return Err(bad("first row must be `budget,<B>`".into())),
    };
    if rows.get(1).map(|r| (&r[0], &r[1])) != Some(("t", "eta")) {
        return Err(bad("second row must be `t,eta`".into()));
    }
    let mut thresholds = Vec::new();
    for (i, r) in rows[2..].iter().enumerate() {
        if r[0].parse::<usize>().ok() != Some(i) {
            return Err(bad(format!("threshold rows must be numbered 0.., found `{}`", &r[0])));
        }
        thresholds.push(r[1].parse().map_err(|_| bad(format!("bad threshold `{}`", &r[1])))?);
    }
    Ok(ThresholdSchedule { thresholds, budget })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub component: String,
    pub layer: String,
    pub madds: u64,
}

pub fn write_ledger(path: &Path, ledger: &CostLedger) -> Result<()> {
    let rows: Vec<LedgerRow> = ledger
        .entries()
        .iter()
        .map(|e| LedgerRow {
            component: e.component.name().to_string(),
            layer: e.layer.clone(),
            madds: e.madds,
        })
        .collect();
    write_rows(path, &rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub phase: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
}

impl From<&EpochStats> for CurveRow {
    fn from(s: &EpochStats) -> Self {
        Self {
            epoch: s.epoch,
            phase: s.phase,
            learning_rate: s.learning_rate,
            mean_loss: s.mean_loss,
        }
    }
}

/// Per-step accuracy table of an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub t: usize,
    pub accuracy: f64,
    pub mean_cumulative_madds: f64,
    /// Mean IoU of cube `t` with the ground-truth cube; empty for the glance step.
    pub mean_iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub policy: String,
    pub budget: u64,
    pub realized_cost: f64,
    pub accuracy: f64,
    /// Standard error across shuffles for the random policy, 0 otherwise.
    pub accuracy_stderr: f64,
    /// Exit counts per step, `;`-separated.
    pub histogram: String,
}

pub fn histogram_text(h: &[usize]) -> String {
    h.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}
