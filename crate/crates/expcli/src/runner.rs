//! One run: content-addressed directory holding the resolved config, the
//! per-round logs and a completion marker.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hetfed::datahub::build_scenario;
use hetfed::fedproto::{run_experiment, RoundLog};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const DONE_FILE: &str = "done";

/// Hex digest identifying the run; the output root does not take part.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    v.as_object_mut().expect("config is an object").remove("out");
    let digest = Sha256::digest(v.to_string().as_bytes());
    hex::encode(&digest[..8])
}

pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join(run_id(cfg))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRecord {
    pub dir: PathBuf,
    /// The directory already held a finished run.
    pub skipped: bool,
}

pub fn is_complete(dir: &Path) -> bool {
    dir.join(DONE_FILE).is_file()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(CliError::io(path))?;
    f.write_all(bytes).map_err(CliError::io(path))
}

pub fn config_echo(cfg: &ExperimentConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

pub fn logs_jsonl(logs: &[RoundLog]) -> String {
    let mut out = String::new();
    for l in logs {
        out.push_str(&serde_json::to_string(l).expect("round log serializes"));
        out.push('\n');
    }
    out
}

/// Runs `cfg` unless its directory is already complete. `jobs` threads share
/// the client work inside the run.
pub fn execute(cfg: &ExperimentConfig, jobs: usize) -> Result<RunRecord> {
    cfg.validate()?;
    let dir = run_dir(cfg);
    if is_complete(&dir) {
        return Ok(RunRecord { dir, skipped: true });
    }
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    write_file(&dir.join(CONFIG_FILE), config_echo(cfg).as_bytes())?;

    let scenario = build_scenario(&cfg.data_spec()?, cfg.seed)?;
    let logs = run_experiment(cfg.strategy_config(), scenario, &cfg.models, cfg.seed, jobs)?;
    write_file(&dir.join(ROUNDS_FILE), logs_jsonl(&logs).as_bytes())?;
    write_file(&dir.join(DONE_FILE), b"")?;
    Ok(RunRecord { dir, skipped: false })
}

pub fn read_config(dir: &Path) -> Result<ExperimentConfig> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(path.display().to_string(), e.to_string()))
}

pub fn read_logs(dir: &Path) -> Result<Vec<RoundLog>> {
    let path = dir.join(ROUNDS_FILE);
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| CliError::Run(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}
