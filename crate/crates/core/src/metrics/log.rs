use std::path::Path;

use serde::{Deserialize, Serialize};

/// Column order of the per-update metrics file.
pub const METRICS_COLUMNS: [&str; 11] = [
    "global_step",
    "episodic_return_mean",
    "ewma",
    "L_rec",
    "L_ls",
    "L_ss",
    "L_ppo_policy",
    "L_ppo_value",
    "entropy",
    "cte",
    "wall_time_s",
];

/// One row per policy update. Empty optional fields are written as empty
/// CSV cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub global_step: u64,
    pub episodic_return_mean: Option<f64>,
    pub ewma: Option<f64>,
    #[serde(rename = "L_rec")]
    pub l_rec: Option<f64>,
    #[serde(rename = "L_ls")]
    pub l_ls: Option<f64>,
    #[serde(rename = "L_ss")]
    pub l_ss: Option<f64>,
    #[serde(rename = "L_ppo_policy")]
    pub l_ppo_policy: f64,
    #[serde(rename = "L_ppo_value")]
    pub l_ppo_value: f64,
    pub entropy: f64,
    pub cte: Option<f64>,
    pub wall_time_s: Option<f64>,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(METRICS_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, csv::Error> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_COLUMNS {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected metrics header {header:?}"),
        )));
    }
    r.deserialize().collect()
}
