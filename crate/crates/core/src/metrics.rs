//! Attack success bookkeeping: TASR and per-utterance report rows.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::target::{Decision, Task};
use crate::{Error, Result};

/// Fraction of `decisions` that identify enrolled speaker `t` (1-based).
pub fn tasr(decisions: &[Decision], t: usize) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = decisions.iter().filter(|d| **d == Decision::Speaker(t)).count();
    Ok(hits as f64 / decisions.len() as f64)
}

/// Outcome of attacking one test utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub utterance_id: u32,
    pub source_speaker: u32,
    /// `None` when the attack itself failed (see `error`).
    pub decision: Option<Decision>,
    /// `None` when the perturbation is identically zero.
    pub snr_db: Option<f64>,
    pub gen_time_s: f64,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub tasr: f64,
    /// Mean over rows with a nonzero perturbation; `None` if there are none.
    pub mean_snr_db: Option<f64>,
    pub mean_time_s: f64,
}

impl Aggregates {
    pub fn from_rows(rows: &[ReportRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = rows.len() as f64;
        let tasr = rows.iter().filter(|r| r.success).count() as f64 / n;
        let snrs: Vec<f64> = rows.iter().filter_map(|r| r.snr_db).collect();
        let mean_snr_db = (!snrs.is_empty()).then(|| snrs.iter().sum::<f64>() / snrs.len() as f64);
        let mean_time_s = rows.iter().map(|r| r.gen_time_s).sum::<f64>() / n;
        Ok(Self { tasr, mean_snr_db, mean_time_s })
    }
}

/// Results of one attack configuration on one set of imposter utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub task: Task,
    pub epsilon: f64,
    /// Target speaker, 1-based enrollment position.
    pub target: usize,
    pub rows: Vec<ReportRow>,
    pub aggregates: Aggregates,
}

impl AttackReport {
    pub fn new(attack: impl Into<String>, task: Task, epsilon: f64, target: usize, rows: Vec<ReportRow>) -> Result<Self> {
        let aggregates = Aggregates::from_rows(&rows)?;
        Ok(Self { attack: attack.into(), task, epsilon, target, rows, aggregates })
    }

    /// Whether the stored aggregates match a recomputation from the rows.
    pub fn is_consistent(&self) -> bool {
        Aggregates::from_rows(&self.rows).is_ok_and(|a| a == self.aggregates)
    }
}

/// Whether `decision` counts as a targeted success for `t`.
pub fn is_success(decision: Decision, t: usize) -> bool {
    decision == Decision::Speaker(t)
}
