use rand::seq::SliceRandom;

use crate::datahub::{one_hot_matrix, Dataset, NoisyDataset};
use crate::error::{Error, Result};
use crate::metrics::ClientEval;
use crate::nnkernel::loss_internals::{ce_raw, rce_raw, softmax_into};
use crate::nnkernel::{backward, mlp_forward, sgd_step, Hyperparams, LossSpec, Matrix, ModelParams, ProbDist};
use crate::rhflcore::{dlr_refine, dlr_weight, DlrSchedule};
use crate::seed::{stream, Purpose};

/// State carried from one confidence computation to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub mean_sl_loss: f64,
    pub snapshot: Vec<f64>,
}

/// One client: its model, private shard and random stream.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub params: ModelParams,
    pub arch: Vec<(usize, usize)>,
    pub shard: NoisyDataset,
    /// Root of every stream this client draws from.
    pub rng_seed: u64,
    /// `None` until the first confidence computation.
    pub history: Option<History>,
}

/// How private epochs build targets and which loss they descend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivateMode {
    pub sl: bool,
    pub dlr: Option<DlrSchedule>,
}

impl PrivateMode {
    pub const CROSS_ENTROPY: PrivateMode = PrivateMode { sl: false, dlr: None };
}

/// Row-wise `softmax(z / tau)`.
pub(crate) fn softmax_rows(logits: &Matrix, tau: f64) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), tau, out.row_mut(i));
    }
    out
}

impl ClientState {
    pub fn new(client_id: usize, params: ModelParams, shard: NoisyDataset, rng_seed: u64) -> Result<Self> {
        if params.input_dim() != shard.base.dims() {
            return Err(Error::config(format!(
                "client {client_id}: model input {} but data has {} features",
                params.input_dim(),
                shard.base.dims()
            )));
        }
        if params.output_dim() != shard.base.class_count {
            return Err(Error::config(format!(
                "client {client_id}: model output {} but data has {} classes",
                params.output_dim(),
                shard.base.class_count
            )));
        }
        Ok(ClientState {
            client_id,
            arch: params.layer_dims.clone(),
            params,
            shard,
            rng_seed,
            history: None,
        })
    }

    /// Fresh model for `widths` drawn from this client's init stream.
    pub fn init_params(rng_seed: u64, widths: &[usize]) -> Result<ModelParams> {
        ModelParams::init(widths, &mut stream(rng_seed, Purpose::ModelInit, &[]))
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        mlp_forward(&self.params, x)
    }

    /// Per-sample SL loss on the noisy training labels.
    pub fn sl_losses(&self, hp: &Hyperparams) -> Result<Vec<f64>> {
        let probs = softmax_rows(&self.logits(&self.shard.base.features)?, 1.0);
        let c = probs.cols();
        let mut t = vec![0.0; c];
        Ok(probs
            .iter_rows()
            .zip(&self.shard.noisy_labels)
            .map(|(q, &y)| {
                t.fill(0.0);
                t[y] = 1.0;
                hp.lambda * ce_raw(q, &t) + hp.gamma * rce_raw(q, &t, hp.rce_log_floor)
            })
            .collect())
    }

    pub fn mean_sl_loss(&self, hp: &Hyperparams) -> Result<f64> {
        let l = self.sl_losses(hp)?;
        Ok(l.iter().sum::<f64>() / l.len() as f64)
    }

    /// `‖θ − θ_snapshot‖ / ‖θ_snapshot‖`, zero without history.
    pub fn update_ratio(&self) -> f64 {
        let Some(h) = &self.history else { return 0.0 };
        let diff: f64 = self
            .params
            .values
            .iter()
            .zip(&h.snapshot)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm = h.snapshot.iter().map(|v| v * v).sum::<f64>().sqrt();
        diff / norm.max(1e-12)
    }

    /// Training targets for a private epoch of `round`: noisy one-hot labels, or
    /// their DLR refinement against the current predictions.
    pub fn private_targets(&self, mode: &PrivateMode, round: usize) -> Result<Matrix> {
        let labels = &self.shard.noisy_labels;
        let c = self.shard.base.class_count;
        let Some(sched) = mode.dlr else {
            return Ok(one_hot_matrix(labels, c));
        };
        let s = dlr_weight(round as i64, &sched)?;
        let probs = softmax_rows(&self.logits(&self.shard.base.features)?, 1.0);
        let mut out = Matrix::zeros(labels.len(), c);
        for (i, &y) in labels.iter().enumerate() {
            let pred = ProbDist::from_vec_unchecked(probs.row(i).to_vec());
            let refined = dlr_refine(&ProbDist::one_hot(y, c)?, &pred, s)?;
            out.row_mut(i).copy_from_slice(refined.as_slice());
        }
        Ok(out)
    }

    /// `epochs` passes of mini-batch SGD over the private shard.
    pub fn train_private(
        &mut self,
        round: usize,
        epochs: usize,
        batch_size: usize,
        hp: &Hyperparams,
        mode: &PrivateMode,
    ) -> Result<()> {
        for epoch in 0..epochs {
            let targets = self.private_targets(mode, round)?;
            let order = self.permutation(Purpose::Shuffle, round, epoch, self.shard.len());
            sgd_epoch(&mut self.params, &self.shard.base.features, &targets, &order, batch_size, hp.lr, |t| {
                if mode.sl {
                    LossSpec::Symmetric {
                        targets: t,
                        lambda: hp.lambda,
                        gamma: hp.gamma,
                        log_floor: hp.rce_log_floor,
                    }
                } else {
                    LossSpec::CrossEntropy { targets: t }
                }
            })?;
        }
        self.check_finite()
    }

    /// `epochs` passes over the public inputs descending `KL(target ‖ softmax(z / τ))`.
    pub fn train_distill(
        &mut self,
        round: usize,
        epochs: usize,
        batch_size: usize,
        public: &Matrix,
        targets: &Matrix,
        hp: &Hyperparams,
    ) -> Result<()> {
        let tau = hp.temperature;
        for epoch in 0..epochs {
            let order = self.permutation(Purpose::CollabShuffle, round, epoch, public.rows());
            sgd_epoch(&mut self.params, public, targets, &order, batch_size, hp.lr, |t| LossSpec::Distill { targets: t, tau })?;
        }
        self.check_finite()
    }

    fn permutation(&self, purpose: Purpose, round: usize, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(self.rng_seed, purpose, &[round as u64, epoch as u64]));
        order
    }

    fn check_finite(&self) -> Result<()> {
        if self.params.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("client {} parameters diverged", self.client_id)))
        }
    }

    /// Accuracy and AUCs on the clean test set; loss on the own noisy shard.
    pub fn evaluate(&self, test: &Dataset, hp: &Hyperparams) -> Result<ClientEval> {
        let probs = softmax_rows(&self.logits(&test.features)?, 1.0);
        ClientEval::from_probs(&probs, &test.labels, self.mean_sl_loss(hp)?)
    }
}

fn sgd_epoch(
    params: &mut ModelParams,
    x: &Matrix,
    targets: &Matrix,
    order: &[usize],
    batch_size: usize,
    lr: f64,
    spec: impl Fn(&Matrix) -> LossSpec<'_>,
) -> Result<()> {
    for idx in order.chunks(batch_size) {
        let xb = x.select_rows(idx);
        let tb = targets.select_rows(idx);
        let grad = backward(params, &xb, &spec(&tb))?;
        *params = sgd_step(params, &grad, lr)?;
    }
    Ok(())
}
