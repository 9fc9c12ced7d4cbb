//! Deterministic simulator for heterogeneous federated learning under label noise.
//!
//! The crate is organised bottom-up:
//!
//! - [`nnkernel`]: dense MLP forward/backward, tempered softmax and the loss family
//!   (cross-entropy, reverse cross-entropy, symmetric cross-entropy, KL).
//! - [`datahub`]: synthetic blobs, IDX/CSV ingestion, client partitioning and
//!   symmetric / pairflip label noise.
//! - [`rhflcore`]: dynamic label refinement, label quality, learning efficiency,
//!   client confidence (CCR / ECCR), confidence weights and the weighted
//!   collaborative distillation loss.
//! - [`fedproto`]: round-based controller/client protocol with the LocalOnly,
//!   FedAvg, heterogeneous distillation and RHFL-family strategies.
//! - [`metrics`]: accuracy, ROC AUC, PR AUC (average precision).
//!
//! Every stochastic step draws from a stream derived from the experiment seed (see
//! [`seed`]), so runs are bitwise reproducible regardless of thread scheduling.

pub mod datahub;
pub mod error;
pub mod fedproto;
pub mod metrics;
pub mod nnkernel;
pub mod rhflcore;
pub mod seed;

pub use error::{Error, Result};
