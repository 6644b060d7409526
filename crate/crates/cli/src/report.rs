//! Reading finished runs back and building the comparison, ablation and
//! sweep tables.

use std::path::Path;

use kippo_core::metrics::{mean, read_metrics_csv, sample_sd, MetricsRow, RunSummary};
use kippo_core::trainer::{TrainConfig, CONFIG_FILE, METRICS_FILE};
use serde::{Deserialize, Serialize};

use crate::{io_err, CliError};

pub struct RunData {
    pub config: TrainConfig,
    pub rows: Vec<MetricsRow>,
}

pub fn load_run(dir: &Path) -> Result<RunData, CliError> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| CliError::Missing(format!("{}: {e}", cfg_path.display())))?;
    let config = TrainConfig::from_toml(&text)?;
    let metrics = dir.join(METRICS_FILE);
    if !metrics.exists() {
        return Err(CliError::Missing(format!("{} does not exist", metrics.display())));
    }
    let rows = read_metrics_csv(&metrics).map_err(|e| io_err(&metrics, e))?;
    Ok(RunData { config, rows })
}

impl RunData {
    /// Last EWMA and last logged CTE of the run.
    pub fn summary(&self, method: &str, dir: &Path) -> Result<RunSummary, CliError> {
        let final_ewma = self
            .rows
            .iter()
            .rev()
            .find_map(|r| r.ewma)
            .ok_or_else(|| CliError::Runtime(format!("{}: no episode finished, EWMA undefined", dir.display())))?;
        Ok(RunSummary {
            env: self.config.env.name.clone(),
            method: method.to_string(),
            seed: self.config.seed,
            total_steps: self.config.total_steps,
            final_ewma,
            final_cte: self.rows.iter().rev().find_map(|r| r.cte),
        })
    }

    /// `(global_step, value)` for one metrics column; empty cells skipped.
    pub fn column(&self, name: &str) -> Result<Vec<(f64, f64)>, CliError> {
        let pick: fn(&MetricsRow) -> Option<f64> = match name {
            "episodic_return_mean" => |r| r.episodic_return_mean,
            "ewma" => |r| r.ewma,
            "L_rec" => |r| r.l_rec,
            "L_ls" => |r| r.l_ls,
            "L_ss" => |r| r.l_ss,
            "L_ppo_policy" => |r| Some(r.l_ppo_policy),
            "L_ppo_value" => |r| Some(r.l_ppo_value),
            "entropy" => |r| Some(r.entropy),
            "cte" => |r| r.cte,
            "wall_time_s" => |r| r.wall_time_s,
            other => return Err(CliError::Config(format!("unknown metrics column '{other}'"))),
        };
        Ok(self
            .rows
            .iter()
            .filter_map(|r| pick(r).map(|v| (r.global_step as f64, v)))
            .collect())
    }

    /// Mean CTE over the first and last quarter of the logged updates.
    pub fn cte_quartiles(&self) -> Option<(f64, f64)> {
        let cte: Vec<f64> = self.rows.iter().filter_map(|r| r.cte).collect();
        let q = cte.len() / 4;
        if q == 0 {
            return None;
        }
        Some((mean(&cte[..q]), mean(&cte[cte.len() - q..])))
    }
}

/// Mean and sample SD across runs at each shared step. Steps missing in any
/// run are dropped.
pub fn mean_band(curves: &[Vec<(f64, f64)>]) -> Vec<(f64, f64, f64)> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    first
        .iter()
        .filter_map(|&(x, _)| {
            let vals: Option<Vec<f64>> = curves
                .iter()
                .map(|c| c.iter().find(|p| p.0 == x).map(|p| p.1))
                .collect();
            vals.map(|v| (x, mean(&v), sample_sd(&v)))
        })
        .collect()
}

/// One line of the ablation table. CTE is empty for the baseline row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub env: String,
    pub losses: String,
    pub ewma_mean: f64,
    pub ewma_sd: f64,
    pub cte_mean: Option<f64>,
    pub cte_sd: Option<f64>,
}

pub const ABLATION_COLUMNS: [&str; 6] = ["env", "losses", "ewma_mean", "ewma_sd", "cte_mean", "cte_sd"];

pub fn ablation_row(env: &str, losses: &str, runs: &[RunSummary]) -> AblationRow {
    let ewma: Vec<f64> = runs.iter().map(|r| r.final_ewma).collect();
    let cte: Option<Vec<f64>> = runs.iter().map(|r| r.final_cte).collect();
    AblationRow {
        env: env.to_string(),
        losses: losses.to_string(),
        ewma_mean: mean(&ewma),
        ewma_sd: sample_sd(&ewma),
        cte_mean: cte.as_ref().map(|c| mean(c)),
        cte_sd: cte.as_ref().map(|c| sample_sd(c)),
    }
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let mut out = format!(
        "{:<12} {:<12} {:>12} {:>12} {:>12} {:>12}\n",
        "env", "losses", "ewma_mean", "ewma_sd", "cte_mean", "cte_sd"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:<12} {:>12.2} {:>12.2} {:>12} {:>12}\n",
            r.env,
            r.losses,
            r.ewma_mean,
            r.ewma_sd,
            opt(r.cte_mean),
            opt(r.cte_sd)
        ));
    }
    out
}

/// Write serializable rows as CSV with a fixed header.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}
