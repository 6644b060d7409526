//! Cells, manifests and the bounded parallel runner.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use kippo_core::trainer::{train_to_dir, TrainConfig, TrainError, CHECKPOINT_FILE, METRICS_FILE};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{io_err, CliError};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const STATE_FILE: &str = "state.json";

/// One run: a full config plus the directory (relative to the manifest's
/// output root) it writes into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub id: String,
    pub dir: PathBuf,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub output_root: PathBuf,
    /// Concurrent cells; 0 means one per available core.
    pub parallelism: usize,
    pub cells: Vec<Cell>,
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<(), CliError> {
        let mut ids = std::collections::BTreeSet::new();
        let mut dirs = std::collections::BTreeSet::new();
        for c in &self.cells {
            if !ids.insert(&c.id) {
                return Err(CliError::Config(format!("duplicate cell id '{}'", c.id)));
            }
            if !dirs.insert(&c.dir) {
                return Err(CliError::Config(format!("cell '{}' reuses output directory {}", c.id, c.dir.display())));
            }
            if c.dir.is_absolute() || c.dir.components().any(|p| matches!(p, std::path::Component::ParentDir)) {
                return Err(CliError::Config(format!("cell '{}' directory must stay under the output root", c.id)));
            }
            c.config
                .validate()
                .map_err(|e| CliError::Config(format!("cell '{}': {e}", c.id)))?;
        }
        Ok(())
    }

    pub fn cell_dir(&self, cell: &Cell) -> PathBuf {
        self.output_root.join(&cell.dir)
    }

    pub fn threads(&self) -> usize {
        if self.parallelism == 0 {
            std::thread::available_parallelism().map_or(1, usize::from)
        } else {
            self.parallelism
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("manifest serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("manifest: {e}")))
    }

    pub fn write(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.output_root).map_err(|e| io_err(&self.output_root, e))?;
        let path = self.output_root.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| io_err(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CellStatus {
    Done { config_hash: String },
    Failed { config_hash: String, error: String, nan: bool },
}

/// Completion record of every cell, keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepState {
    pub cells: BTreeMap<String, CellStatus>,
}

impl SweepState {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }

    pub fn is_done(&self, cell: &Cell) -> bool {
        matches!(self.cells.get(&cell.id), Some(CellStatus::Done { config_hash }) if *config_hash == cell.config.hash())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ran,
    Skipped,
    Failed { error: String, nan: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub id: String,
    pub outcome: Outcome,
}

fn run_cell(manifest: &ExperimentManifest, cell: &Cell) -> Result<(), (String, bool)> {
    let dir = manifest.cell_dir(cell);
    let mut config = cell.config.clone();
    config.output_dir = Some(dir.display().to_string());
    let res = catch_unwind(AssertUnwindSafe(|| train_to_dir(config, &dir, true)));
    match res {
        Ok(Ok(_)) => Ok(()),
        Ok(Err(e)) => {
            let nan = matches!(e, TrainError::NonFinite { .. });
            Err((e.to_string(), nan))
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Err((format!("panic: {msg}"), false))
        }
    }
}

/// Run every cell not already recorded as done, at most `threads()` at a
/// time. A failing cell is recorded and never stops its siblings. The state
/// file is rewritten after each cell so an interrupted experiment resumes
/// where it stopped.
pub fn run_manifest(manifest: &ExperimentManifest) -> Result<Vec<CellOutcome>, CliError> {
    manifest.validate()?;
    manifest.write()?;
    let state_path = manifest.output_root.join(STATE_FILE);
    let state = Mutex::new(SweepState::load(&state_path)?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(manifest.threads())
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let outcomes: Vec<Result<CellOutcome, CliError>> = pool.install(|| {
        manifest
            .cells
            .par_iter()
            .map(|cell| {
                if state.lock().expect("state lock").is_done(cell) {
                    log::info!("{}: already complete, skipping", cell.id);
                    return Ok(CellOutcome {
                        id: cell.id.clone(),
                        outcome: Outcome::Skipped,
                    });
                }
                log::info!("{}: running ({} steps)", cell.id, cell.config.total_steps);
                let result = run_cell(manifest, cell);
                let config_hash = cell.config.hash();
                let (status, outcome) = match result {
                    Ok(()) => {
                        log::info!("{}: done", cell.id);
                        (CellStatus::Done { config_hash }, Outcome::Ran)
                    }
                    Err((error, nan)) => {
                        log::error!("{}: failed: {error}", cell.id);
                        (
                            CellStatus::Failed {
                                config_hash,
                                error: error.clone(),
                                nan,
                            },
                            Outcome::Failed { error, nan },
                        )
                    }
                };
                let mut st = state.lock().expect("state lock");
                st.cells.insert(cell.id.clone(), status);
                st.save(&state_path)?;
                Ok(CellOutcome {
                    id: cell.id.clone(),
                    outcome,
                })
            })
            .collect()
    });
    outcomes.into_iter().collect()
}

/// Turn failed cells into the matching error after all cells have run.
pub fn check_outcomes(outcomes: &[CellOutcome]) -> Result<(), CliError> {
    let failed: Vec<_> = outcomes
        .iter()
        .filter_map(|o| match &o.outcome {
            Outcome::Failed { error, .. } => Some((o.id.as_str(), error.as_str())),
            _ => None,
        })
        .collect();
    if failed.is_empty() {
        return Ok(());
    }
    let list = failed.iter().map(|(id, e)| format!("  {id}: {e}")).collect::<Vec<_>>().join("\n");
    let msg = format!("{} of {} cells failed:\n{list}", failed.len(), outcomes.len());
    Err(CliError::Runtime(msg))
}

/// Cells whose metrics file is missing, for aggregation-only commands.
pub fn missing_cells(manifest: &ExperimentManifest) -> Vec<String> {
    manifest
        .cells
        .iter()
        .filter(|c| {
            let dir = manifest.cell_dir(c);
            !dir.join(METRICS_FILE).exists() || !dir.join(CHECKPOINT_FILE).exists()
        })
        .map(|c| format!("{} ({})", c.id, manifest.cell_dir(c).display()))
        .collect()
}

/// Replace characters that do not belong in a directory name.
pub fn slug(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '-' })
        .collect()
}
