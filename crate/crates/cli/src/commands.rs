//! Subcommands and their argument types.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use kippo_core::metrics::{aggregate_and_compare, render_table, standardize, mean, sample_sd, RunSummary};
use kippo_core::trainer::{parse_override, train_to_dir, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::experiment::{check_outcomes, missing_cells, run_manifest, slug, Cell, ExperimentManifest, Outcome};
use crate::plot::{render_svg, validate_svg, Series};
use crate::report::{ablation_row, load_run, mean_band, render_ablation, write_csv, write_text, AblationRow, ABLATION_COLUMNS};
use crate::{io_err, output_root, CliError};

#[derive(Debug, Parser)]
#[command(name = "kippo", version, about = "Koopman auxiliary representation learning for PPO")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run.
    Train(TrainArgs),
    /// Multi-seed comparison of methods against a baseline.
    Compare(CompareArgs),
    /// Grid over on/off combinations of the three representation losses.
    Ablate(AblateArgs),
    /// Hyperparameter sweep described by a TOML file.
    Sweep(SweepArgs),
    /// Learning curves of finished runs as SVG.
    Plot(PlotArgs),
    /// Parse, override and validate a config, then print it.
    ValidateConfig(ValidateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file (defaults apply when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub total_steps: Option<u64>,
    /// `key=value` override applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `false` trains plain PPO on raw states.
    #[arg(long, action = ArgAction::Set)]
    pub kippo: Option<bool>,
    /// Run directory (default: <root>/train/<env>/<method>/seed_<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the run directory's checkpoint if present.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub seeds: Vec<u64>,
    /// `name` or `name=kind` with kind `kippo` or `ppo`.
    #[arg(long, value_delimiter = ',', default_value = "ppo,kippo")]
    pub methods: Vec<String>,
    #[arg(long, default_value = "ppo")]
    pub baseline: String,
    /// Output root (default: $KIPPO_OUTPUT_ROOT or ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Concurrent runs (0: available cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Only aggregate existing runs; fail listing any missing one.
    #[arg(long)]
    pub aggregate_only: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub aggregate_only: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep description (TOML).
    pub spec: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the spec's parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Run directories, one series each.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "ewma")]
    pub column: String,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub file: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Compare(a) => cmd_compare(a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a).map(|_| ()),
        Command::Plot(a) => cmd_plot(a),
        Command::ValidateConfig(a) => {
            let cfg = ConfigArgs {
                config: Some(a.file),
                set: a.set,
                ..ConfigArgs::default()
            };
            let c = resolve_config(&cfg, Vec::new())?;
            print!("{}", c.to_toml());
            println!("# hash {}", c.hash());
            Ok(())
        }
    }
}

/// File, then the convenience flags, then `--set` overrides, key by key.
pub fn resolve_config(cfg: &ConfigArgs, extra: Vec<(String, toml::Value)>) -> Result<TrainConfig, CliError> {
    let text = match &cfg.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Missing(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = Vec::new();
    if let Some(env) = &cfg.env {
        overrides.push(("env.name".to_string(), toml::Value::String(env.clone())));
    }
    if let Some(n) = cfg.total_steps {
        let n = i64::try_from(n).map_err(|_| CliError::Config(format!("total_steps {n} too large")))?;
        overrides.push(("total_steps".to_string(), toml::Value::Integer(n)));
    }
    overrides.extend(extra);
    for s in &cfg.set {
        overrides.push(parse_override(s)?);
    }
    for (k, v) in &overrides {
        log::info!("override {k} = {v}");
    }
    Ok(TrainConfig::from_toml_with_overrides(&text, &overrides)?)
}

fn method_name(kippo: bool) -> &'static str {
    if kippo {
        "kippo"
    } else {
        "ppo"
    }
}

pub fn cmd_train(a: TrainArgs) -> Result<PathBuf, CliError> {
    let mut extra = Vec::new();
    if let Some(s) = a.seed {
        extra.push(("seed".to_string(), toml::Value::Integer(s as i64)));
    }
    if let Some(k) = a.kippo {
        extra.push(("kippo_enabled".to_string(), toml::Value::Boolean(k)));
    }
    let mut config = resolve_config(&a.cfg, extra)?;
    let dir = match a.out {
        Some(d) => d,
        None => output_root(None)
            .join("train")
            .join(slug(&config.env.name))
            .join(method_name(config.kippo_enabled))
            .join(format!("seed_{}", config.seed)),
    };
    config.output_dir = Some(dir.display().to_string());
    log::info!("training into {} ({} updates)", dir.display(), config.num_updates());
    let t = train_to_dir(config, &dir, a.resume)?;
    let last = t.rows.last();
    println!(
        "{}: {} steps, final ewma {}",
        dir.display(),
        t.global_step,
        last.and_then(|r| r.ewma).map_or("-".into(), |v| format!("{v:.3}"))
    );
    Ok(dir)
}

/// `(name, kippo_enabled)` from `name` or `name=kind`.
pub fn parse_method(spec: &str) -> Result<(String, bool), CliError> {
    let (name, kind) = spec.split_once('=').unwrap_or((spec, spec));
    let kippo = match kind.trim() {
        "kippo" => true,
        "ppo" => false,
        other => {
            return Err(CliError::Config(format!(
                "method '{spec}': kind must be 'kippo' or 'ppo', got '{other}'"
            )))
        }
    };
    let name = name.trim();
    if name.is_empty() || slug(name) != name {
        return Err(CliError::Config(format!("method name '{name}' must be alphanumeric, '-', '_' or '.'")));
    }
    Ok((name.to_string(), kippo))
}

fn check_seeds(seeds: &[u64]) -> Result<(), CliError> {
    let mut s = seeds.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != seeds.len() || seeds.is_empty() {
        return Err(CliError::Config(format!("seeds must be a non-empty list without repeats, got {seeds:?}")));
    }
    Ok(())
}

fn seed_cells(name: &str, base: &TrainConfig, seeds: &[u64]) -> Vec<Cell> {
    seeds
        .iter()
        .map(|&s| {
            let mut config = base.clone();
            config.seed = s;
            let id = format!("{name}/seed_{s}");
            Cell {
                dir: PathBuf::from(slug(name)).join(format!("seed_{s}")),
                id,
                config,
            }
        })
        .collect()
}

fn execute(manifest: &ExperimentManifest, aggregate_only: bool) -> Result<(), CliError> {
    if aggregate_only {
        manifest.validate()?;
        let missing = missing_cells(manifest);
        if !missing.is_empty() {
            return Err(CliError::Missing(format!("missing runs:\n  {}", missing.join("\n  "))));
        }
        return Ok(());
    }
    let outcomes = run_manifest(manifest)?;
    let ran = outcomes.iter().filter(|o| o.outcome == Outcome::Ran).count();
    log::info!("{ran} cells ran, {} skipped", outcomes.iter().filter(|o| o.outcome == Outcome::Skipped).count());
    check_outcomes(&outcomes)
}

fn summaries(manifest: &ExperimentManifest, cells: &[Cell], method: &str) -> Result<Vec<RunSummary>, CliError> {
    cells
        .iter()
        .map(|c| {
            let dir = manifest.cell_dir(c);
            load_run(&dir)?.summary(method, &dir)
        })
        .collect()
}

fn band_series(manifest: &ExperimentManifest, cells: &[Cell], label: &str, column: &str) -> Result<Series, CliError> {
    let curves = cells
        .iter()
        .map(|c| load_run(&manifest.cell_dir(c))?.column(column))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Series {
        label: label.to_string(),
        points: mean_band(&curves),
    })
}

fn write_plot(path: &Path, title: &str, y_label: &str, series: &[Series]) -> Result<(), CliError> {
    let svg = render_svg(title, "environment steps", y_label, series).map_err(|e| CliError::Runtime(format!("plot: {e}")))?;
    validate_svg(&svg).map_err(|e| CliError::Runtime(format!("plot failed validation: {e}")))?;
    write_text(path, &svg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub env: String,
    pub method: String,
    pub seed: u64,
    pub total_steps: u64,
    pub final_ewma: f64,
    pub final_cte: Option<f64>,
}

pub const SEED_COLUMNS: [&str; 6] = ["env", "method", "seed", "total_steps", "final_ewma", "final_cte"];
pub const COMPARISON_COLUMNS: [&str; 6] = ["env", "method", "mean", "sd", "pct_mean", "pct_sd"];

fn seed_rows(runs: &[RunSummary]) -> Vec<SeedRow> {
    runs.iter()
        .map(|r| SeedRow {
            env: r.env.clone(),
            method: r.method.clone(),
            seed: r.seed,
            total_steps: r.total_steps,
            final_ewma: r.final_ewma,
            final_cte: r.final_cte,
        })
        .collect()
}

/// Output directory of a compare run, for callers that want to read it.
pub fn compare_dir(root: &Path, env: &str) -> PathBuf {
    root.join("compare").join(slug(env))
}

pub fn cmd_compare(a: CompareArgs) -> Result<PathBuf, CliError> {
    check_seeds(&a.seeds)?;
    let base = resolve_config(&a.cfg, Vec::new())?;
    let methods = a.methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>, _>>()?;
    let mut names: Vec<&str> = methods.iter().map(|m| m.0.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != methods.len() {
        return Err(CliError::Config(format!("duplicate method names in {:?}", a.methods)));
    }
    if !methods.iter().any(|m| m.0 == a.baseline) {
        return Err(CliError::Config(format!("baseline '{}' is not among the methods", a.baseline)));
    }
    let root = compare_dir(&output_root(a.out), &base.env.name);
    let groups: Vec<(String, Vec<Cell>)> = methods
        .iter()
        .map(|(name, kippo)| {
            let mut c = base.clone();
            c.kippo_enabled = *kippo;
            (name.clone(), seed_cells(name, &c, &a.seeds))
        })
        .collect();
    let manifest = ExperimentManifest {
        output_root: root.clone(),
        parallelism: a.jobs,
        cells: groups.iter().flat_map(|g| g.1.clone()).collect(),
    };
    execute(&manifest, a.aggregate_only)?;

    let mut all = Vec::new();
    let mut baseline = None;
    let mut others = Vec::new();
    let mut series = Vec::new();
    for (name, cells) in &groups {
        let runs = summaries(&manifest, cells, name)?;
        all.extend(runs.clone());
        series.push(band_series(&manifest, cells, name, "ewma")?);
        if *name == a.baseline {
            baseline = Some((name.clone(), runs));
        } else {
            others.push((name.clone(), runs));
        }
    }
    let baseline = baseline.expect("baseline checked above");
    let rows = aggregate_and_compare(&others, &baseline).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_csv(&root.join("seeds.csv"), &SEED_COLUMNS, &seed_rows(&all))?;
    write_csv(&root.join("comparison.csv"), &COMPARISON_COLUMNS, &rows)?;
    let table = render_table(&rows);
    write_text(&root.join("comparison.txt"), &table)?;
    write_plot(
        &root.join("curves.svg"),
        &format!("{} (mean ± SD over {} seeds)", base.env.name, a.seeds.len()),
        "EWMA of episodic return",
        &series,
    )?;
    print!("{table}");
    Ok(root)
}

/// Baseline PPO first, then every non-empty subset of {rec, ls, ss} with the
/// unused weights set to zero.
pub fn ablation_grid(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let mut ppo = base.clone();
    ppo.kippo_enabled = false;
    let mut grid = vec![("ppo".to_string(), ppo)];
    let subsets: [&[&str]; 7] = [
        &["rec"],
        &["ls"],
        &["ss"],
        &["rec", "ls"],
        &["rec", "ss"],
        &["ls", "ss"],
        &["rec", "ls", "ss"],
    ];
    for terms in subsets {
        let mut c = base.clone();
        c.kippo_enabled = true;
        c.frozen_encoder = false;
        if !terms.contains(&"rec") {
            c.weights.rec = 0.0;
        }
        if !terms.contains(&"ls") {
            c.weights.ls = 0.0;
        }
        if !terms.contains(&"ss") {
            c.weights.ss = 0.0;
        }
        grid.push((terms.join("+"), c));
    }
    grid
}

pub fn ablate_dir(root: &Path, env: &str) -> PathBuf {
    root.join("ablate").join(slug(env))
}

pub fn cmd_ablate(a: AblateArgs) -> Result<PathBuf, CliError> {
    check_seeds(&a.seeds)?;
    let base = resolve_config(&a.cfg, Vec::new())?;
    let root = ablate_dir(&output_root(a.out), &base.env.name);
    let groups: Vec<(String, Vec<Cell>)> = ablation_grid(&base)
        .into_iter()
        .map(|(name, c)| {
            let cells = seed_cells(&name, &c, &a.seeds);
            (name, cells)
        })
        .collect();
    let manifest = ExperimentManifest {
        output_root: root.clone(),
        parallelism: a.jobs,
        cells: groups.iter().flat_map(|g| g.1.clone()).collect(),
    };
    execute(&manifest, a.aggregate_only)?;
    let mut rows: Vec<AblationRow> = Vec::new();
    let mut all = Vec::new();
    for (name, cells) in &groups {
        let runs = summaries(&manifest, cells, name)?;
        rows.push(ablation_row(&base.env.name, name, &runs));
        all.extend(runs);
    }
    write_csv(&root.join("seeds.csv"), &SEED_COLUMNS, &seed_rows(&all))?;
    write_csv(&root.join("ablation.csv"), &ABLATION_COLUMNS, &rows)?;
    let table = render_ablation(&rows);
    write_text(&root.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(root)
}

/// Sweep description file.
///
/// ```toml
/// name = "horizon"
/// seeds = [1, 2]
/// baseline = true
///
/// [base]
/// total_steps = 50000
/// env = { name = "pendulum" }
///
/// [grid]
/// horizon = [1, 4, 8]
/// "weights.rec" = [0.25, 0.5]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub parallelism: usize,
    /// Also run plain PPO per seed and standardize final EWMA against it.
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub base: toml::Table,
    pub grid: BTreeMap<String, Vec<toml::Value>>,
}

/// One grid point: `(label, overrides)`.
pub type GridPoint = (String, Vec<(String, toml::Value)>);

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| CliError::Config(format!("sweep spec: {e}")))?;
        check_seeds(&spec.seeds)?;
        if spec.grid.is_empty() || spec.grid.values().any(Vec::is_empty) {
            return Err(CliError::Config("sweep grid needs at least one key with at least one value".into()));
        }
        if slug(&spec.name) != spec.name || spec.name.is_empty() {
            return Err(CliError::Config(format!("sweep name '{}' must be a plain directory name", spec.name)));
        }
        Ok(spec)
    }

    /// Cartesian product of the grid in key order.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut points: Vec<GridPoint> = vec![(String::new(), Vec::new())];
        for (key, values) in &self.grid {
            points = points
                .into_iter()
                .flat_map(|(label, ov)| {
                    values.iter().map(move |v| {
                        let part = format!("{key}={v}");
                        let label = if label.is_empty() { part } else { format!("{label},{part}") };
                        let mut ov = ov.clone();
                        ov.push((key.clone(), v.clone()));
                        (label, ov)
                    })
                })
                .collect();
        }
        points
    }

    fn config(&self, overrides: &[(String, toml::Value)]) -> Result<TrainConfig, CliError> {
        let text = toml::to_string(&self.base).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(TrainConfig::from_toml_with_overrides(&text, overrides)?)
    }

    pub fn manifest(&self, root: &Path, jobs: Option<usize>) -> Result<ExperimentManifest, CliError> {
        let mut cells = Vec::new();
        for (label, ov) in self.points() {
            let c = self.config(&ov).map_err(|e| CliError::Config(format!("grid point {label}: {e}")))?;
            cells.extend(seed_cells(&label, &c, &self.seeds));
        }
        if self.baseline {
            let mut c = self.config(&[])?;
            c.kippo_enabled = false;
            c.frozen_encoder = false;
            cells.extend(seed_cells(BASELINE_LABEL, &c, &self.seeds));
        }
        Ok(ExperimentManifest {
            output_root: root.to_path_buf(),
            parallelism: jobs.unwrap_or(self.parallelism),
            cells,
        })
    }
}

pub const BASELINE_LABEL: &str = "baseline";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: String,
    pub seed: u64,
    pub status: String,
    pub final_ewma: Option<f64>,
    pub final_cte: Option<f64>,
    pub standardized_return: Option<f64>,
}

pub const SWEEP_COLUMNS: [&str; 6] = ["point", "seed", "status", "final_ewma", "final_cte", "standardized_return"];

pub fn sweep_dir(root: &Path, name: &str) -> PathBuf {
    root.join("sweep").join(name)
}

pub fn cmd_sweep(a: SweepArgs) -> Result<PathBuf, CliError> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| CliError::Missing(format!("{}: {e}", a.spec.display())))?;
    let spec = SweepSpec::from_toml(&text)?;
    let root = sweep_dir(&output_root(a.out), &spec.name);
    let manifest = spec.manifest(&root, a.jobs)?;
    std::fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
    write_text(&root.join("spec.toml"), &text)?;
    let outcomes = run_manifest(&manifest)?;

    let failed: BTreeMap<&str, &Outcome> = outcomes
        .iter()
        .filter(|o| matches!(o.outcome, Outcome::Failed { .. }))
        .map(|o| (o.id.as_str(), &o.outcome))
        .collect();
    let mut rows = Vec::new();
    for (point, cell) in manifest.cells.iter().map(|c| (c.id.rsplit_once('/').map_or("", |p| p.0), c)) {
        let dir = manifest.cell_dir(cell);
        let summary = if failed.contains_key(cell.id.as_str()) {
            None
        } else {
            load_run(&dir).and_then(|r| r.summary(point, &dir)).ok()
        };
        rows.push(SweepRow {
            point: point.to_string(),
            seed: cell.config.seed,
            status: if summary.is_some() { "ok" } else { "failed" }.to_string(),
            final_ewma: summary.as_ref().map(|s| s.final_ewma),
            final_cte: summary.as_ref().and_then(|s| s.final_cte),
            standardized_return: None,
        });
    }
    let base: Vec<f64> = rows
        .iter()
        .filter(|r| r.point == BASELINE_LABEL)
        .filter_map(|r| r.final_ewma)
        .collect();
    if base.len() >= 2 {
        let (m, sd) = (mean(&base), sample_sd(&base));
        if sd > 0.0 {
            for r in &mut rows {
                r.standardized_return = r.final_ewma.map(|x| standardize(x, m, sd));
            }
        }
    }
    write_csv(&root.join("sweep_results.csv"), &SWEEP_COLUMNS, &rows)?;
    log::info!("sweep results in {}", root.join("sweep_results.csv").display());
    check_outcomes(&outcomes)?;
    Ok(root)
}

pub fn cmd_plot(a: PlotArgs) -> Result<(), CliError> {
    let mut series = Vec::new();
    for dir in &a.runs {
        let run = load_run(dir)?;
        let label = dir
            .file_name()
            .map(|f| {
                let parent = dir.parent().and_then(Path::file_name).map(|p| p.to_string_lossy().to_string());
                match parent {
                    Some(p) => format!("{p}/{}", f.to_string_lossy()),
                    None => f.to_string_lossy().to_string(),
                }
            })
            .unwrap_or_else(|| dir.display().to_string());
        series.push(Series {
            label,
            points: run.column(&a.column)?.into_iter().map(|(x, y)| (x, y, 0.0)).collect(),
        });
    }
    let title = a.title.unwrap_or_else(|| a.column.clone());
    write_plot(&a.out, &title, &a.column, &series)?;
    println!("{}", a.out.display());
    Ok(())
}
