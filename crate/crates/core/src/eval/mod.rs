//! Offline metrics over candidate correctness matrices.

mod baseline;
mod stats;

pub use baseline::{baseline_select, BaselineKind, BaselinePick};
pub use stats::{correlations, wilcoxon_signed_rank, Correlations, WilcoxonMethod, WilcoxonResult, SIGNIFICANCE};

use crate::patch::{CandidatePatch, FileTree};
use crate::regression::{evaluate_patch, RunnerConfig, RunnerError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("issue `{issue}` has {got} outcomes, expected {expected}")]
    RaggedMatrix { issue: String, expected: usize, got: usize },
    #[error("matrix has no issues or no candidates")]
    EmptyMatrix,
    #[error("no usable selection for issue `{0}`")]
    MissingSelection(String),
    #[error("confusion counts sum to zero")]
    ZeroTotal,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("inputs have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {0} observations")]
    TooShort(usize),
    #[error("input is constant; coefficient undefined")]
    ConstantInput,
    #[error("no candidates")]
    NoCandidates,
    #[error("provider error: {0}")]
    Provider(String),
    #[error("{0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueRow {
    pub id: String,
    pub outcomes: Vec<bool>,
    /// Optional candidate ids, parallel to `outcomes`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub patch_ids: Vec<String>,
}

/// Whether each candidate of each issue passes all golden tests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessMatrix {
    pub issues: Vec<IssueRow>,
}

impl CorrectnessMatrix {
    pub fn from_rows(rows: Vec<Vec<bool>>) -> Result<Self, EvalError> {
        let m = CorrectnessMatrix {
            issues: rows
                .into_iter()
                .enumerate()
                .map(|(i, outcomes)| IssueRow { id: format!("issue-{i}"), outcomes, patch_ids: Vec::new() })
                .collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let m: CorrectnessMatrix = serde_json::from_str(text).map_err(|e| EvalError::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Rejects ragged rows and `patch_ids` lists of the wrong length.
    pub fn validate(&self) -> Result<(), EvalError> {
        let Some(first) = self.issues.first() else { return Ok(()) };
        let n = first.outcomes.len();
        for row in &self.issues {
            let bad_ids = !row.patch_ids.is_empty() && row.patch_ids.len() != row.outcomes.len();
            if row.outcomes.len() != n || bad_ids {
                return Err(EvalError::RaggedMatrix {
                    issue: row.id.clone(),
                    expected: n,
                    got: if bad_ids { row.patch_ids.len() } else { row.outcomes.len() },
                });
            }
        }
        Ok(())
    }

    /// Candidates per issue.
    pub fn width(&self) -> usize {
        self.issues.first().map_or(0, |r| r.outcomes.len())
    }

    fn nonempty(&self) -> Result<(), EvalError> {
        if self.issues.is_empty() || self.width() == 0 {
            return Err(EvalError::EmptyMatrix);
        }
        self.validate()
    }

    /// Copy with one more outcome appended to every row.
    pub fn with_column(&self, column: &[bool]) -> Self {
        let mut m = self.clone();
        for (row, &b) in m.issues.iter_mut().zip(column) {
            row.outcomes.push(b);
            if !row.patch_ids.is_empty() {
                row.patch_ids.push(format!("c{}", row.outcomes.len() - 1));
            }
        }
        m
    }
}

/// A selected candidate, by column index or by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Selection {
    Index(usize),
    Id(String),
}

impl Selection {
    fn column(&self, row: &IssueRow) -> Option<usize> {
        match self {
            Selection::Index(i) => (*i < row.outcomes.len()).then_some(*i),
            Selection::Id(id) => row.patch_ids.iter().position(|p| p == id).or_else(|| {
                // `c{k}` names column k when the row carries no ids
                id.strip_prefix('c')
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|k| row.patch_ids.is_empty() && *k < row.outcomes.len())
            }),
        }
    }
}

/// Fraction of issues whose selected candidate is correct.
pub fn pass_at_1(selections: &BTreeMap<String, Selection>, matrix: &CorrectnessMatrix) -> Result<f64, EvalError> {
    matrix.nonempty()?;
    let mut hits = 0usize;
    for row in &matrix.issues {
        let col = selections
            .get(&row.id)
            .and_then(|s| s.column(row))
            .ok_or_else(|| EvalError::MissingSelection(row.id.clone()))?;
        hits += row.outcomes[col] as usize;
    }
    Ok(hits as f64 / matrix.issues.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBounds {
    /// Mean over issues of "any candidate correct".
    pub oracle: f64,
    /// Mean over issues of "every candidate correct".
    pub adversary: f64,
    /// Mean over issues of the fraction of correct candidates.
    pub average: f64,
}

pub fn ensemble_bounds(matrix: &CorrectnessMatrix) -> Result<EnsembleBounds, EvalError> {
    matrix.nonempty()?;
    let n = matrix.issues.len() as f64;
    let width = matrix.width() as f64;
    let (mut any, mut all, mut mean) = (0usize, 0usize, 0.0);
    for row in &matrix.issues {
        any += row.outcomes.iter().any(|&b| b) as usize;
        all += row.outcomes.iter().all(|&b| b) as usize;
        mean += row.outcomes.iter().filter(|&&b| b).count() as f64 / width;
    }
    Ok(EnsembleBounds {
        oracle: any as f64 / n,
        adversary: all as f64 / n,
        average: mean / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllCorrectRatios {
    pub all_correct: f64,
    pub all_incorrect: f64,
}

pub fn all_correct_ratios(matrix: &CorrectnessMatrix) -> Result<AllCorrectRatios, EvalError> {
    matrix.nonempty()?;
    let n = matrix.issues.len() as f64;
    let count = |f: fn(&bool) -> bool| matrix.issues.iter().filter(|r| r.outcomes.iter().all(f)).count() as f64 / n;
    Ok(AllCorrectRatios {
        all_correct: count(|&b| b),
        all_incorrect: count(|&b| !b),
    })
}

/// Ratios whose denominator is zero are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn confusion_metrics(tp: u64, tn: u64, fp: u64, fn_: u64) -> Result<ConfusionMetrics, EvalError> {
    let total = tp + tn + fp + fn_;
    if total == 0 {
        return Err(EvalError::ZeroTotal);
    }
    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(ConfusionMetrics {
        accuracy: (tp + tn) as f64 / total as f64,
        precision,
        recall,
        f1,
    })
}

/// `fraction` as a percentage with two decimals, halves rounded up.
pub fn format_pct(fraction: f64) -> String {
    let hundredths = fraction * 10_000.0;
    // absorb binary representation error so 0.63275 rounds like the decimal it came from
    let rounded = (hundredths + 0.5 + 1e-9 * hundredths.abs().max(1.0)).floor();
    format!("{:.2}", rounded / 100.0)
}

/// Formats an optional metric, rendering `None` as `undefined`.
pub fn format_opt_pct(fraction: Option<f64>) -> String {
    fraction.map_or_else(|| "undefined".to_string(), format_pct)
}

/// Summary of one matrix and, when given, one selection policy over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass_at_1: Option<f64>,
    pub oracle: f64,
    pub adversary: f64,
    pub average: f64,
    pub all_correct_ratio: f64,
    pub all_incorrect_ratio: f64,
    pub issues: usize,
    pub candidates: usize,
}

pub fn metrics_report(
    matrix: &CorrectnessMatrix,
    selections: Option<&BTreeMap<String, Selection>>,
) -> Result<MetricsReport, EvalError> {
    let b = ensemble_bounds(matrix)?;
    let r = all_correct_ratios(matrix)?;
    Ok(MetricsReport {
        pass_at_1: selections.map(|s| pass_at_1(s, matrix)).transpose()?,
        oracle: b.oracle,
        adversary: b.adversary,
        average: b.average,
        all_correct_ratio: r.all_correct,
        all_incorrect_ratio: r.all_incorrect,
        issues: matrix.issues.len(),
        candidates: matrix.width(),
    })
}

/// One matrix row: whether each patch passes every golden test.
pub fn grade_candidates(
    codebase: &FileTree,
    patches: &[CandidatePatch],
    golden_tests: &[String],
    runner: &RunnerConfig,
) -> Result<Vec<bool>, RunnerError> {
    patches
        .iter()
        .map(|p| evaluate_patch(p, codebase, golden_tests, runner).map(|o| o.clean()))
        .collect()
}
