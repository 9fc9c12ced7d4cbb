//! Dense neural-network kernel shared by every strategy.

mod loss;
mod matrix;
mod mlp;

pub use loss::{ce_loss, kl_div, rce_loss, sl_loss, softmax_t, Hyperparams, ProbDist, PROB_FLOOR};
pub use matrix::Matrix;

pub(crate) mod loss_internals {
    pub(crate) use super::loss::{ce_raw, kl_raw, rce_raw, softmax_into};
}
pub use mlp::{backward, batch_loss, mlp_forward, sgd_step, LossSpec, ModelParams};
