//! Experiment driver for the `hetfed` simulator: layered JSON configuration,
//! content-addressed run directories, grid sweeps and CSV summaries.

pub mod config;
pub mod error;
pub mod runner;
pub mod summary;
pub mod sweep;

pub use config::{parse_config, random_noise_assignment, ConfigStack, ExperimentConfig};
pub use error::{CliError, Result};
pub use runner::{execute, run_id, RunRecord};
pub use summary::{summarize, Selection};
pub use sweep::{run_sweep, Grid, SweepReport};
