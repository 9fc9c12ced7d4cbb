//! Round-based federated protocol engine.
//!
//! A [`Simulator`] owns one controller and `K` client states. Each round the
//! clients run their local work (in parallel when a thread pool is configured),
//! send uploads over a channel, and the controller folds the uploads in ascending
//! client id before broadcasting. Strategies:
//!
//! | strategy          | collaboration                                   |
//! |-------------------|-------------------------------------------------|
//! | `local_only`      | none                                            |
//! | `fedavg`          | size-weighted parameter averaging               |
//! | `hetero_distill`  | KL to the mean public logits                    |
//! | `rhfl*`           | confidence-weighted peer distillation, SL, DLR  |

mod aggregate;
mod client;
mod engine;
mod message;

use serde::{Deserialize, Serialize};

pub use aggregate::fedavg_aggregate;
pub use client::{ClientState, History, PrivateMode};
pub use engine::{consensus_logits, run_experiment, Simulator};
pub use message::{AuditEntry, Controller, Knowledge, MessageKind, Payload, RoundMessage};

use crate::error::{Error, Result};
use crate::nnkernel::Hyperparams;
use crate::rhflcore::Reweight;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LocalOnly,
    Fedavg,
    HeteroDistill,
    Rhfl,
    RhflPlusCcr,
    RhflPlusEccr,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::LocalOnly,
        Strategy::Fedavg,
        Strategy::HeteroDistill,
        Strategy::Rhfl,
        Strategy::RhflPlusCcr,
        Strategy::RhflPlusEccr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::LocalOnly => "local_only",
            Strategy::Fedavg => "fedavg",
            Strategy::HeteroDistill => "hetero_distill",
            Strategy::Rhfl => "rhfl",
            Strategy::RhflPlusCcr => "rhfl_plus_ccr",
            Strategy::RhflPlusEccr => "rhfl_plus_eccr",
        }
    }

    /// Component flags implied by the strategy, for the strategies that run on the
    /// robust-collaboration engine.
    pub fn default_flags(self) -> Option<AblationFlags> {
        let f = |hfl, sl, dlr, reweight| Some(AblationFlags { hfl, sl, dlr, reweight });
        match self {
            Strategy::LocalOnly => f(false, false, false, Reweight::None),
            Strategy::Rhfl => f(true, true, false, Reweight::Ccr),
            Strategy::RhflPlusCcr => f(true, true, true, Reweight::Ccr),
            Strategy::RhflPlusEccr => f(true, true, true, Reweight::Eccr),
            Strategy::Fedavg | Strategy::HeteroDistill => None,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy {s:?}")))
    }
}

/// Component switches: heterogeneous collaboration, SL loss, DLR, reweighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    pub hfl: bool,
    pub sl: bool,
    pub dlr: bool,
    pub reweight: Reweight,
}

impl AblationFlags {
    /// The six component rows of the standard ablation table, from no component
    /// to the full method.
    pub fn ablation_rows() -> [AblationFlags; 6] {
        let f = |hfl, sl, dlr, reweight| AblationFlags { hfl, sl, dlr, reweight };
        [
            f(false, false, false, Reweight::None),
            f(true, false, false, Reweight::None),
            f(false, true, false, Reweight::None),
            f(true, true, false, Reweight::None),
            f(true, true, true, Reweight::None),
            f(true, true, true, Reweight::Eccr),
        ]
    }
}

/// A client that silently fails to upload in a given round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailurePoint {
    pub round: usize,
    pub client_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub rounds: usize,
    pub local_epochs: usize,
    pub collab_epochs: usize,
    pub batch_size: usize,
    pub hyperparams: Hyperparams,
    /// Overrides [`Strategy::default_flags`] for `local_only` and the `rhfl*` strategies.
    pub flags: Option<AblationFlags>,
    /// Fraction of clients sampled per FedAvg round.
    pub participation: f64,
    pub fail_at: Option<FailurePoint>,
    /// Adds per-round wall-clock time to the logs (which makes them non-reproducible).
    pub log_wall_clock: bool,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        StrategyConfig {
            strategy,
            rounds: 40,
            local_epochs: 1,
            collab_epochs: 1,
            batch_size: 32,
            hyperparams: Hyperparams::default(),
            flags: None,
            participation: 1.0,
            fail_at: None,
            log_wall_clock: false,
        }
    }

    /// Flags in effect, `None` for FedAvg and heterogeneous distillation.
    pub fn effective_flags(&self) -> Option<AblationFlags> {
        self.strategy.default_flags().map(|d| self.flags.unwrap_or(d))
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::config(format!("participation must lie in (0, 1], got {}", self.participation)));
        }
        if self.flags.is_some() && self.strategy.default_flags().is_none() {
            return Err(Error::config(format!("ablation flags do not apply to strategy {}", self.strategy)));
        }
        Ok(())
    }
}

/// Per-round, per-client log record (one JSONL line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub client_id: usize,
    pub accuracy: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub mean_sl_loss: f64,
    pub q: Option<f64>,
    pub p: Option<f64>,
    pub f: Option<f64>,
    pub w: Option<f64>,
    pub collab_loss: Option<f64>,
    pub noise_rate: f64,
    pub clamp_events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<f64>,
}
