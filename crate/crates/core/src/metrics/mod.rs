//! Learning-trend and representation metrics, seed aggregation and
//! baseline comparison tables.

mod log;

pub use log::{read_metrics_csv, write_metrics_csv, MetricsRow, METRICS_COLUMNS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction has {pred} steps, truth has {truth}")]
    Length { pred: usize, truth: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("runs use different step budgets: {0:?}")]
    Budget(Vec<u64>),
    #[error("runs are for different environments: {0:?}")]
    Env(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EwmaConvention {
    /// `alpha * prev + (1 - alpha) * G`.
    #[default]
    Printed,
    /// `(1 - alpha) * prev + alpha * G`.
    Swapped,
}

pub fn ewma_update(prev: f64, g: f64, alpha: f64) -> f64 {
    alpha * prev + (1.0 - alpha) * g
}

pub fn ewma_update_with(convention: EwmaConvention, prev: f64, g: f64, alpha: f64) -> f64 {
    match convention {
        EwmaConvention::Printed => ewma_update(prev, g, alpha),
        EwmaConvention::Swapped => (1.0 - alpha) * prev + alpha * g,
    }
}

/// Running EWMA over completed-episode returns, seeded with the first one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ewma {
    pub alpha: f64,
    pub convention: EwmaConvention,
    pub value: Option<f64>,
}

impl Ewma {
    pub fn new(alpha: f64, convention: EwmaConvention) -> Self {
        Self {
            alpha,
            convention,
            value: None,
        }
    }

    pub fn push(&mut self, g: f64) -> f64 {
        let next = match self.value {
            None => g,
            Some(prev) => ewma_update_with(self.convention, prev, g, self.alpha),
        };
        self.value = Some(next);
        next
    }
}

/// Mean absolute error over state dimensions for one step.
fn step_error(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Cumulative trajectory error of one window: with `e_h` the mean
/// absolute error at step `h`, `(1/H) sum_h (1/h) sum_{k<=h} e_k`.
pub fn cte(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::Length {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty("cte needs at least one step"));
    }
    let mut cumulative = 0.0;
    let mut total = 0.0;
    for (h, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.len() != t.len() || p.is_empty() {
            return Err(MetricsError::Length {
                pred: p.len(),
                truth: t.len(),
            });
        }
        cumulative += step_error(p, t);
        total += cumulative / (h + 1) as f64;
    }
    Ok(total / pred.len() as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (`n - 1`); 0 for a single value.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl SeedAggregate {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::Empty("no seeds to aggregate"));
        }
        Ok(Self {
            mean: mean(&values),
            sd: sample_sd(&values),
            values,
        })
    }
}

/// Positive when `new` has the higher mean.
pub fn pct_mean(new: f64, base: f64) -> f64 {
    (new - base) / base.abs() * 100.0
}

/// Positive when `new` has the lower spread.
pub fn pct_sd(new: f64, base: f64) -> f64 {
    (1.0 - new / base) * 100.0
}

/// `(x - mean) / sd` against a baseline's statistics.
pub fn standardize(x: f64, base_mean: f64, base_sd: f64) -> f64 {
    (x - base_mean) / base_sd
}

/// Final metrics of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub env: String,
    pub method: String,
    pub seed: u64,
    pub total_steps: u64,
    pub final_ewma: f64,
    pub final_cte: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub env: String,
    pub method: String,
    pub mean: f64,
    pub sd: f64,
    pub pct_mean: f64,
    pub pct_sd: f64,
    /// Per-seed final EWMA values the row was computed from.
    #[serde(skip)]
    pub seeds: Vec<f64>,
}

fn check_runs<'a>(runs: impl Iterator<Item = &'a RunSummary> + Clone) -> Result<(), MetricsError> {
    let mut budgets: Vec<u64> = runs.clone().map(|r| r.total_steps).collect();
    budgets.sort_unstable();
    budgets.dedup();
    if budgets.len() > 1 {
        return Err(MetricsError::Budget(budgets));
    }
    let mut envs: Vec<String> = runs.map(|r| r.env.clone()).collect();
    envs.sort();
    envs.dedup();
    if envs.len() > 1 {
        return Err(MetricsError::Env(envs));
    }
    Ok(())
}

/// Mean/SD of final EWMA per method and percent differences against the
/// baseline runs. The baseline itself is the first row (0% by definition).
pub fn aggregate_and_compare(
    methods: &[(String, Vec<RunSummary>)],
    baseline: &(String, Vec<RunSummary>),
) -> Result<Vec<ComparisonRow>, MetricsError> {
    check_runs(baseline.1.iter().chain(methods.iter().flat_map(|m| m.1.iter())))?;
    let env = baseline
        .1
        .first()
        .map(|r| r.env.clone())
        .ok_or(MetricsError::Empty("no baseline runs"))?;
    let base = SeedAggregate::new(baseline.1.iter().map(|r| r.final_ewma).collect())?;
    let mut rows = vec![ComparisonRow {
        env: env.clone(),
        method: baseline.0.clone(),
        mean: base.mean,
        sd: base.sd,
        pct_mean: 0.0,
        pct_sd: 0.0,
        seeds: base.values.clone(),
    }];
    for (name, runs) in methods {
        let agg = SeedAggregate::new(runs.iter().map(|r| r.final_ewma).collect())?;
        rows.push(ComparisonRow {
            env: env.clone(),
            method: name.clone(),
            mean: agg.mean,
            sd: agg.sd,
            pct_mean: pct_mean(agg.mean, base.mean),
            pct_sd: if base.sd == 0.0 && agg.sd == 0.0 { 0.0 } else { pct_sd(agg.sd, base.sd) },
            seeds: agg.values,
        });
    }
    Ok(rows)
}

/// Fixed-width text rendering: env, method, mean, SD, %dmean, %dSD.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:<12} {:<16} {:>12} {:>12} {:>10} {:>10}\n",
        "env", "method", "mean", "sd", "%dmean", "%dsd"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:<16} {:>12.2} {:>12.2} {:>10.2} {:>10.2}\n",
            r.env, r.method, r.mean, r.sd, r.pct_mean, r.pct_sd
        ));
    }
    out
}
