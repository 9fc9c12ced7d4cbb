//! Layered experiment configuration.
//!
//! Sources are JSON objects applied in order: `HETFED_SEED`, then each config
//! file, then `--set key=value` and `--noise-rate` overrides. Objects merge key by
//! key; everything else replaces. An object whose `kind` or `scheme` tag changes
//! replaces the old object instead of merging into it.

use std::path::{Path, PathBuf};

use hetfed::datahub::{DataSource, DataSpec, NoiseKind, PartitionKind};
use hetfed::fedproto::{AblationFlags, FailurePoint, Strategy, StrategyConfig};
use hetfed::nnkernel::Hyperparams;
use hetfed::seed::{stream, Purpose};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "HETFED_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_noise_kind")]
    pub kind: NoiseKind,
    /// Same rate on every client.
    #[serde(default)]
    pub rate: Option<f64>,
    /// Per-client rates drawn uniformly from `[lo, hi]`.
    #[serde(default)]
    pub random_range: Option<[f64; 2]>,
}

fn default_noise_kind() -> NoiseKind {
    NoiseKind::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_source")]
    pub source: DataSource,
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_private_size")]
    pub private_size: usize,
    #[serde(default = "default_public_size")]
    pub public_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_partition")]
    pub partition: PartitionKind,
    #[serde(default = "default_noise")]
    pub noise: NoiseConfig,
}

fn default_source() -> DataSource {
    DataSource::Blobs {
        classes: 3,
        dims: 2,
        spread: 0.5,
    }
}
fn default_clients() -> usize {
    4
}
fn default_private_size() -> usize {
    400
}
fn default_public_size() -> usize {
    200
}
fn default_test_size() -> usize {
    600
}
fn default_partition() -> PartitionKind {
    PartitionKind::Iid
}
fn default_noise() -> NoiseConfig {
    NoiseConfig {
        kind: NoiseKind::None,
        rate: None,
        random_range: None,
    }
}
fn default_data() -> DataConfig {
    serde_json::from_value(json!({})).expect("every data field has a default")
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub strategy: Strategy,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "one")]
    pub local_epochs: usize,
    #[serde(default = "one")]
    pub collab_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_participation")]
    pub participation: f64,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub flags: Option<AblationFlags>,
    /// Hidden-layer widths, assigned to clients round-robin.
    #[serde(default = "default_models")]
    pub models: Vec<Vec<usize>>,
    #[serde(default)]
    pub log_wall_clock: bool,
    #[serde(default)]
    pub fail_at: Option<FailurePoint>,
    #[serde(default = "default_data")]
    pub data: DataConfig,
    /// Root under which run directories are created. Not part of the run identity.
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_rounds() -> usize {
    StrategyConfig::new(Strategy::LocalOnly).rounds
}
fn one() -> usize {
    1
}
fn default_batch_size() -> usize {
    StrategyConfig::new(Strategy::LocalOnly).batch_size
}
fn default_participation() -> f64 {
    1.0
}
fn default_models() -> Vec<Vec<usize>> {
    vec![vec![16]]
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

/// `K` independent draws from `U[lo, hi]`.
pub fn random_noise_assignment(k: usize, range: [f64; 2], seed: u64) -> Result<Vec<f64>> {
    let [lo, hi] = range;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(CliError::config(
            "data.noise.random_range",
            format!("need 0 <= lo <= hi <= 1, got [{lo}, {hi}]"),
        ));
    }
    if lo == hi {
        return Ok(vec![lo; k]);
    }
    let mut rng = stream(seed, Purpose::NoiseRates, &[]);
    Ok((0..k).map(|_| rng.random_range(lo..=hi)).collect())
}

impl ExperimentConfig {
    /// Noise rate of every client.
    pub fn client_rates(&self) -> Result<Vec<f64>> {
        let noise = &self.data.noise;
        let k = self.data.clients;
        match (noise.rate, noise.random_range) {
            (Some(_), Some(_)) => Err(CliError::config(
                "data.noise",
                "set either rate or random_range, not both",
            )),
            (Some(r), None) => Ok(vec![r; k]),
            (None, Some(range)) => random_noise_assignment(k, range, self.seed),
            (None, None) if noise.kind == NoiseKind::None => Ok(vec![0.0; k]),
            (None, None) => Err(CliError::config(
                "data.noise",
                format!("{} noise needs rate or random_range", noise.kind),
            )),
        }
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            strategy: self.strategy,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            collab_epochs: self.collab_epochs,
            batch_size: self.batch_size,
            hyperparams: self.hyperparams,
            flags: self.flags,
            participation: self.participation,
            fail_at: self.fail_at,
            log_wall_clock: self.log_wall_clock,
        }
    }

    pub fn data_spec(&self) -> Result<DataSpec> {
        Ok(DataSpec {
            source: self.data.source.clone(),
            clients: self.data.clients,
            private_size: self.data.private_size,
            public_size: self.data.public_size,
            test_size: self.data.test_size,
            partition: self.data.partition.clone(),
            noise: self.data.noise.kind,
            client_rates: self.client_rates()?,
        })
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        self.strategy_config().validate()?;
        self.client_rates()?;
        if self.models.is_empty() || self.models.iter().flatten().any(|&w| w == 0) {
            return Err(CliError::config("models", "need at least one model with non-zero widths"));
        }
        Ok(())
    }
}

/// An ordered list of configuration sources.
#[derive(Debug, Clone, Default)]
pub struct ConfigStack {
    layers: Vec<(String, Value)>,
}

/// Deep merge of `over` into `base`.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let retagged = ["kind", "scheme"]
                .iter()
                .any(|t| o.get(*t).is_some_and(|v| b.get(*t).is_some_and(|bv| bv != v)));
            if retagged {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, o) => *slot = o,
    }
}

fn parse_as<T: serde::de::DeserializeOwned>(value: Value, origin: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." || path.is_empty() {
            CliError::config(origin, inner.to_string())
        } else {
            CliError::config(origin, format!("`{path}`: {inner}"))
        }
    })
}

impl ConfigStack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pushes a source after checking it against the schema on its own.
    pub fn push(&mut self, origin: impl Into<String>, value: Value) -> Result<&mut Self> {
        let origin = origin.into();
        if !value.is_object() {
            return Err(CliError::config(origin, "expected a JSON object"));
        }
        let mut probe = json!({ "strategy": "local_only" });
        merge(&mut probe, value.clone());
        parse_as::<ExperimentConfig>(probe, &origin)?;
        self.layers.push((origin, value));
        Ok(self)
    }

    /// Lowest-precedence seed from `HETFED_SEED`, when set.
    pub fn env_seed(&mut self, value: Option<&str>) -> Result<&mut Self> {
        match value {
            Some(v) => {
                let seed: u64 = v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::config(SEED_ENV, format!("not an unsigned integer: {v:?}")))?;
                self.push(SEED_ENV, json!({ "seed": seed }))
            }
            None => Ok(self),
        }
    }

    pub fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::config(&origin, format!("invalid JSON: {e}")))?;
        self.push(origin, value)
    }

    /// `--set a.b.c=value`; `value` is parsed as JSON, falling back to a string.
    pub fn set(&mut self, assignment: &str) -> Result<&mut Self> {
        let origin = format!("--set {assignment}");
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::config(&origin, "expected key=value"))?;
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(CliError::config(&origin, format!("invalid key {key:?}")));
        }
        let leaf = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let value = key.rsplit('.').fold(leaf, |acc, part| {
            let mut m = Map::new();
            m.insert(part.to_string(), acc);
            Value::Object(m)
        });
        self.push(origin, value)
    }

    /// Sets one rate for every client, replacing any random range.
    pub fn noise_rate(&mut self, rate: f64) -> Result<&mut Self> {
        self.push(
            format!("--noise-rate {rate}"),
            json!({ "data": { "noise": { "rate": rate, "random_range": null } } }),
        )
    }

    /// Merged JSON of all sources, before defaults.
    pub fn merged(&self) -> Value {
        let mut acc = Value::Object(Map::new());
        for (_, v) in &self.layers {
            merge(&mut acc, v.clone());
        }
        acc
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = parse_as(self.merged(), "resolved configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Files in order plus `HETFED_SEED` from the environment.
pub fn parse_config(paths: &[PathBuf]) -> Result<ExperimentConfig> {
    let mut stack = ConfigStack::new();
    stack.env_seed(std::env::var(SEED_ENV).ok().as_deref())?;
    for p in paths {
        stack.file(p)?;
    }
    stack.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(layers: &[Value]) -> ConfigStack {
        let mut s = ConfigStack::new();
        for (i, l) in layers.iter().enumerate() {
            s.push(format!("layer{i}"), l.clone()).unwrap();
        }
        s
    }

    #[test]
    fn later_layers_override() {
        let cfg = stack(&[
            json!({"strategy": "rhfl", "hyperparams": {"lr": 0.001, "zeta": 5.0}}),
            json!({"hyperparams": {"lr": 0.0001}}),
        ])
        .resolve()
        .unwrap();
        assert_eq!(cfg.hyperparams.lr, 0.0001);
        assert_eq!(cfg.hyperparams.zeta, 5.0);
        assert_eq!(cfg.hyperparams.gamma, 0.9);
    }

    #[test]
    fn missing_strategy_is_named() {
        let err = stack(&[json!({"rounds": 3})]).resolve().unwrap_err();
        assert!(err.to_string().contains("strategy"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_key_names_path_and_origin() {
        let err = ConfigStack::new()
            .push("base.json", json!({"data": {"noise": {"rat": 0.1}}}))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("base.json") && msg.contains("data.noise") && msg.contains("rat"), "{msg}");
    }

    #[test]
    fn type_mismatch_names_key() {
        let err = ConfigStack::new().push("d.json", json!({"rounds": "many"})).unwrap_err();
        assert!(err.to_string().contains("`rounds`"), "{err}");
    }

    #[test]
    fn cli_noise_rate_beats_file() {
        let mut s = stack(&[json!({"strategy": "local_only", "data": {"noise": {"kind": "pairflip", "rate": 0.1}}})]);
        s.noise_rate(0.2).unwrap();
        let cfg = s.resolve().unwrap();
        assert_eq!(cfg.client_rates().unwrap(), vec![0.2; 4]);
    }

    #[test]
    fn set_parses_json_and_strings() {
        let mut s = stack(&[json!({"strategy": "local_only"})]);
        s.set("hyperparams.lr=0.05").unwrap().set("strategy=fedavg").unwrap();
        let cfg = s.resolve().unwrap();
        assert_eq!(cfg.hyperparams.lr, 0.05);
        assert_eq!(cfg.strategy, Strategy::Fedavg);
        assert!(ConfigStack::new().set("noequals").is_err());
        assert!(ConfigStack::new().set("a..b=1").is_err());
    }

    #[test]
    fn env_seed_has_lowest_precedence() {
        let mut s = ConfigStack::new();
        s.env_seed(Some("17")).unwrap();
        s.push("f", json!({"strategy": "local_only"})).unwrap();
        assert_eq!(s.resolve().unwrap().seed, 17);
        s.push("g", json!({"seed": 3})).unwrap();
        assert_eq!(s.resolve().unwrap().seed, 3);
        assert!(ConfigStack::new().env_seed(Some("x")).is_err());
    }

    #[test]
    fn retagged_source_replaces() {
        let cfg = stack(&[
            json!({"strategy": "local_only", "data": {"source": {"kind": "blobs", "classes": 3, "dims": 2}}}),
            json!({"data": {"source": {"kind": "csv", "path": "x.csv", "features": 4, "classes": 2}}}),
        ])
        .resolve()
        .unwrap();
        assert!(matches!(cfg.data.source, DataSource::Csv { features: 4, .. }));
    }

    #[test]
    fn echo_roundtrips() {
        let cfg = stack(&[json!({"strategy": "rhfl_plus_eccr", "models": [[4], [6, 3]],
            "data": {"noise": {"kind": "symmetric", "random_range": [0.0, 0.5]}}})])
        .resolve()
        .unwrap();
        let echoed = serde_json::to_value(&cfg).unwrap();
        let again = stack(&[echoed]).resolve().unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn noise_rate_rules() {
        let base = json!({"strategy": "local_only", "data": {"noise": {"kind": "pairflip"}}});
        assert!(stack(&[base.clone()]).resolve().is_err());
        let both = json!({"data": {"noise": {"rate": 0.1, "random_range": [0.0, 0.2]}}});
        assert!(stack(&[base.clone(), both]).resolve().is_err());
        let inverted = json!({"data": {"noise": {"random_range": [0.4, 0.2]}}});
        assert_eq!(stack(&[base, inverted]).resolve().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn random_assignment_examples() {
        assert_eq!(random_noise_assignment(5, [0.2, 0.2], 9).unwrap(), vec![0.2; 5]);
        let a = random_noise_assignment(10, [0.0, 0.5], 4).unwrap();
        assert_eq!(a, random_noise_assignment(10, [0.0, 0.5], 4).unwrap());
        assert!(a.iter().all(|r| (0.0..=0.5).contains(r)));
        assert!(random_noise_assignment(3, [0.5, 0.1], 0).is_err());
        assert!(random_noise_assignment(3, [-0.1, 0.1], 0).is_err());
    }
}
