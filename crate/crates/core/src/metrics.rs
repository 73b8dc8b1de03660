//! Fairness, speedup and overhead figures, plus the run-summary CSV row.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("fairness is undefined for an empty or all-zero allocation")]
    UndefinedFairness,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Per-worker allocation (completed tasks or busy seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationVector(Vec<f64>);

impl AllocationVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::InvalidInput("empty allocation".into()));
        }
        if values.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(MetricsError::InvalidInput(
                "allocations must be finite and non-negative".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn from_counts<I: IntoIterator<Item = u64>>(counts: I) -> Result<Self, MetricsError> {
        Self::new(counts.into_iter().map(|c| c as f64).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Jain's fairness index `(sum x)^2 / (m * sum x^2)`, in `(0, 1]`.
pub fn jains_index(alloc: &AllocationVector) -> Result<f64, MetricsError> {
    let xs = alloc.as_slice();
    let sum: f64 = xs.iter().sum();
    let sum_sq: f64 = xs.iter().map(|x| x * x).sum();
    if sum_sq == 0.0 {
        return Err(MetricsError::UndefinedFairness);
    }
    Ok((sum * sum / (xs.len() as f64 * sum_sq)).min(1.0))
}

pub fn speedup(single_s: f64, distributed_s: f64) -> Result<f64, MetricsError> {
    if !(single_s > 0.0 && distributed_s > 0.0) {
        return Err(MetricsError::InvalidInput(format!(
            "times must be positive, got {single_s} and {distributed_s}"
        )));
    }
    Ok(single_s / distributed_s)
}

pub fn checkpoint_overhead(enabled_s: f64, disabled_s: f64) -> f64 {
    enabled_s - disabled_s
}

/// Percentage reduction of `candidate` relative to `baseline`.
pub fn improvement_pct(baseline_s: f64, candidate_s: f64) -> f64 {
    (baseline_s - candidate_s) / baseline_s * 100.0
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one sample).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One simulated run, as written to the per-run CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub strategy: String,
    /// `None` when checkpointing is disabled.
    pub interval_s: Option<f64>,
    pub seed: u64,
    pub makespan_s: f64,
    pub fairness: f64,
    pub speedup: f64,
    pub overhead_s: Option<f64>,
    pub allocations: Vec<f64>,
}

impl RunSummary {
    pub const CSV_HEADER: &'static str =
        "scenario,strategy,interval_s,seed,makespan_s,J,speedup,overhead_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{}",
            csv_field(&self.scenario),
            csv_field(&self.strategy),
            self.interval_s.map(|v| v.to_string()).unwrap_or_default(),
            self.seed,
            self.makespan_s,
            self.fairness,
            self.speedup,
            self.overhead_s.map(|v| format!("{v:.6}")).unwrap_or_default(),
        )
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
