//! Grid sweeps over strategy x flags x noise type x noise rate x seed.

use std::fs;
use std::path::{Path, PathBuf};

use hetfed::datahub::NoiseKind;
use hetfed::fedproto::{AblationFlags, Strategy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ConfigStack, ExperimentConfig, SEED_ENV};
use crate::error::{CliError, Result};
use crate::runner::{execute, run_id};

pub const INDEX_FILE: &str = "sweep.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    /// Config files applied first, relative to the grid file.
    #[serde(default)]
    pub base: Vec<PathBuf>,
    /// Inline overrides applied after `base`.
    #[serde(default)]
    pub overrides: Option<Value>,
    pub strategy: Vec<Strategy>,
    /// Flag rows; only applied to strategies that take flags.
    #[serde(default)]
    pub flags: Option<Vec<AblationFlags>>,
    pub noise_type: Vec<NoiseKind>,
    pub mu: Vec<f64>,
    pub seed: Vec<u64>,
    /// Output root, relative to the grid file.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Axis values of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub strategy: Strategy,
    pub flags: Option<AblationFlags>,
    pub noise_type: NoiseKind,
    pub mu: f64,
    pub seed: u64,
}

impl Cell {
    fn overlay(&self) -> Value {
        json!({
            "strategy": self.strategy,
            "flags": self.flags,
            "seed": self.seed,
            "data": { "noise": { "kind": self.noise_type, "rate": self.mu, "random_range": null } },
        })
    }
}

impl Grid {
    pub fn load(path: &Path) -> Result<(Grid, PathBuf)> {
        let origin = path.display().to_string();
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::config(&origin, format!("invalid JSON: {e}")))?;
        let grid: Grid = serde_path_to_error::deserialize(value)
            .map_err(|e| CliError::config(&origin, format!("`{}`: {}", e.path(), e.inner())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((grid, root))
    }

    /// Cartesian product in axis order. Strategies without flags get one cell per
    /// remaining axis combination.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let axes = [
            ("strategy", self.strategy.is_empty()),
            ("noise_type", self.noise_type.is_empty()),
            ("mu", self.mu.is_empty()),
            ("seed", self.seed.is_empty()),
            ("flags", self.flags.as_ref().is_some_and(Vec::is_empty)),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, empty)| *empty) {
            return Err(CliError::config("grid", format!("axis `{name}` is empty")));
        }
        let mut cells = Vec::new();
        for &strategy in &self.strategy {
            let flag_rows: Vec<Option<AblationFlags>> = match (&self.flags, strategy.default_flags()) {
                (Some(rows), Some(_)) => rows.iter().copied().map(Some).collect(),
                _ => vec![None],
            };
            for flags in flag_rows {
                for &noise_type in &self.noise_type {
                    for &mu in &self.mu {
                        for &seed in &self.seed {
                            cells.push(Cell {
                                strategy,
                                flags,
                                noise_type,
                                mu,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    /// Resolved config of every cell.
    pub fn resolve(&self, root: &Path, env_seed: Option<&str>) -> Result<Vec<(Cell, ExperimentConfig)>> {
        let mut base = ConfigStack::new();
        base.env_seed(env_seed)?;
        for f in &self.base {
            base.file(&root.join(f))?;
        }
        if let Some(o) = &self.overrides {
            base.push("grid overrides", o.clone())?;
        }
        let out = root.join(self.out.clone().unwrap_or_else(|| PathBuf::from("runs")));
        base.push("grid out", json!({ "out": out }))?;
        self.cells()?
            .into_iter()
            .map(|cell| {
                let mut s = base.clone();
                s.push(format!("grid cell {}", serde_json::to_string(&cell).unwrap_or_default()), cell.overlay())?;
                Ok((cell, s.resolve()?))
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub run: String,
    pub result: Result<bool>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub out: PathBuf,
    pub outcomes: Vec<CellOutcome>,
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.result.is_err()).count()
    }

    pub fn skipped(&self) -> usize {
        self.outcomes.iter().filter(|o| matches!(o.result, Ok(true))).count()
    }
}

#[derive(Serialize)]
struct IndexLine<'a> {
    cell: &'a Cell,
    run: &'a str,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Runs every cell, up to `jobs` at a time. Cell failures are recorded in the
/// index and do not stop the sweep.
pub fn run_sweep(grid: &Grid, root: &Path, jobs: usize) -> Result<SweepReport> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cells = grid.resolve(root, env_seed.as_deref())?;
    let out = cells
        .first()
        .map(|(_, c)| c.out.clone())
        .expect("cells() rejects empty grids");
    fs::create_dir_all(&out).map_err(CliError::io(&out))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Run(format!("thread pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .into_par_iter()
            .map(|(cell, cfg)| CellOutcome {
                run: run_id(&cfg),
                result: execute(&cfg, 1).map(|r| r.skipped),
                cell,
            })
            .collect()
    });

    let mut index = String::new();
    for o in &outcomes {
        let line = IndexLine {
            cell: &o.cell,
            run: &o.run,
            ok: o.result.is_ok(),
            error: o.result.as_ref().err().map(|e| e.to_string()),
        };
        index.push_str(&serde_json::to_string(&line).expect("index line serializes"));
        index.push('\n');
    }
    let path = out.join(INDEX_FILE);
    fs::write(&path, index).map_err(CliError::io(&path))?;
    Ok(SweepReport { out, outcomes })
}
