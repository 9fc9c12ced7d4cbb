use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use rayon::ThreadPool;

use super::client::{softmax_rows, ClientState, History, PrivateMode};
use super::message::{Controller, Knowledge, MessageKind, Payload, RoundMessage};
use super::{fedavg_aggregate, AblationFlags, AuditEntry, FailurePoint, RoundLog, Strategy, StrategyConfig};
use crate::datahub::{Dataset, Scenario};
use crate::error::{Error, Result};
use crate::nnkernel::loss_internals::{kl_raw, softmax_into};
use crate::nnkernel::{Matrix, ModelParams};
use crate::rhflcore::{
    collaborative_loss, collaborative_target, confidence_weights, finalize_confidence, label_quality, ConfidenceReport,
    DlrSchedule, LogitShare, Reweight, WeightVector,
};
use crate::seed::{derive, stream, Purpose};

/// Elementwise mean of the shared logits, folded in the given order.
pub fn consensus_logits(shares: &[LogitShare]) -> Result<Matrix> {
    let first = shares.first().ok_or_else(|| Error::protocol(None, None, "no logits to average"))?;
    let (n, c) = first.logits.shape();
    let mut acc = first.logits.as_slice().to_vec();
    for s in &shares[1..] {
        if s.logits.shape() != (n, c) {
            return Err(Error::protocol(
                Some(s.round),
                Some(s.client_id),
                format!("logits are {:?}, expected {:?}", s.logits.shape(), (n, c)),
            ));
        }
        for (a, v) in acc.iter_mut().zip(s.logits.as_slice()) {
            *a += v;
        }
    }
    let k = shares.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Matrix::from_vec(n, c, acc)
}

/// Runs `work` on the clients whose id is in `ids` (sorted), in parallel when a
/// pool is given. Results come back in client order.
fn fan_out<T, F>(pool: Option<&ThreadPool>, clients: &mut [ClientState], ids: &[usize], work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ClientState) -> Result<T> + Sync + Send,
{
    let selected = |c: &&mut ClientState| ids.binary_search(&c.client_id).is_ok();
    let results: Vec<Result<T>> = match pool {
        Some(p) => p.install(|| clients.par_iter_mut().filter(selected).map(&work).collect()),
        None => clients.iter_mut().filter(selected).map(&work).collect(),
    };
    results.into_iter().collect()
}

/// Client work followed by one upload each, collected by the controller. A
/// client hit by `fail` does its work but never sends.
fn upload<F>(
    controller: &mut Controller,
    pool: Option<&ThreadPool>,
    fail: Option<FailurePoint>,
    clients: &mut [ClientState],
    kind: MessageKind,
    ids: &[usize],
    make: F,
) -> Result<Vec<RoundMessage>>
where
    F: Fn(&mut ClientState) -> Result<Payload> + Sync + Send,
{
    let round = controller.round();
    let (tx, rx) = mpsc::channel();
    fan_out(pool, clients, ids, |c| {
        let payload = make(c)?;
        if fail != Some(FailurePoint { round, client_id: c.client_id }) {
            tx.send(RoundMessage::upload(round, c.client_id, payload))
                .expect("receiver outlives the fan-out");
        }
        Ok(())
    })?;
    drop(tx);
    controller.collect(rx, kind, ids)
}

fn attribute(e: Error, round: usize) -> Error {
    match e {
        Error::Protocol { round: None, client, message } => Error::Protocol {
            round: Some(round),
            client,
            message,
        },
        other => other,
    }
}

/// Per-client values that end up in the round log besides the evaluation.
#[derive(Debug, Clone, Copy, Default)]
struct Extras {
    q: Option<f64>,
    p: Option<f64>,
    f: Option<f64>,
    w: Option<f64>,
    collab_loss: Option<f64>,
}

/// A full simulation: controller, clients, public and test data.
pub struct Simulator {
    cfg: StrategyConfig,
    flags: Option<AblationFlags>,
    clients: Vec<ClientState>,
    public: Option<Matrix>,
    test: Dataset,
    controller: Controller,
    pool: Option<ThreadPool>,
    seed: u64,
    next_round: usize,
}

impl Simulator {
    /// `hidden[k % hidden.len()]` are the hidden widths of client `k`. `jobs > 1`
    /// runs client work on that many threads; results do not depend on it.
    pub fn new(cfg: StrategyConfig, scenario: Scenario, hidden: &[Vec<usize>], seed: u64, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        if hidden.is_empty() {
            return Err(Error::config("need at least one model architecture"));
        }
        let k = scenario.clients.len();
        if k == 0 {
            return Err(Error::config("need at least one client"));
        }
        let (input_dim, classes) = (scenario.input_dim(), scenario.class_count);
        let widths = |i: usize| {
            let mut w = vec![input_dim];
            w.extend(&hidden[i % hidden.len()]);
            w.push(classes);
            w
        };
        let flags = cfg.effective_flags();
        let distills = cfg.strategy == Strategy::HeteroDistill || flags.is_some_and(|f| f.hfl);
        if distills && scenario.public.is_none() {
            return Err(Error::config(format!("strategy {} needs a public dataset", cfg.strategy)));
        }
        let global = if cfg.strategy == Strategy::Fedavg {
            if (1..k).any(|i| widths(i) != widths(0)) {
                return Err(Error::config("fedavg requires the same architecture on every client"));
            }
            Some(ModelParams::init(&widths(0), &mut stream(seed, Purpose::ServerInit, &[]))?)
        } else {
            None
        };

        let mut clients = Vec::with_capacity(k);
        for (id, shard) in scenario.clients.into_iter().enumerate() {
            let rng_seed = derive(seed, Purpose::Client, &[id as u64]);
            let params = match &global {
                Some(g) => g.clone(),
                None => ClientState::init_params(rng_seed, &widths(id))?,
            };
            clients.push(ClientState::new(id, params, shard, rng_seed)?);
        }

        let pool = if jobs > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build()
                    .map_err(|e| Error::config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };

        Ok(Simulator {
            cfg,
            flags,
            clients,
            public: scenario.public.map(|p| p.features),
            test: scenario.test,
            controller: Controller::new(),
            pool,
            seed,
            next_round: 0,
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.cfg
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn clients_mut(&mut self) -> &mut [ClientState] {
        &mut self.clients
    }

    pub fn public(&self) -> Option<&Matrix> {
        self.public.as_ref()
    }

    pub fn audit(&self) -> &[AuditEntry] {
        self.controller.audit()
    }

    /// Round the next [`step`](Self::step) executes; round 0 is the initial evaluation.
    pub fn next_round(&self) -> usize {
        self.next_round
    }

    /// Executes every remaining round and returns their logs.
    pub fn run(&mut self) -> Result<Vec<RoundLog>> {
        let mut logs = Vec::with_capacity((self.cfg.rounds + 1) * self.clients.len());
        while self.next_round <= self.cfg.rounds {
            logs.extend(self.step()?);
        }
        Ok(logs)
    }

    /// Executes one round and returns one log record per client.
    pub fn step(&mut self) -> Result<Vec<RoundLog>> {
        let t = self.next_round;
        if t > self.cfg.rounds {
            return Err(Error::protocol(Some(t), None, format!("run has only {} rounds", self.cfg.rounds)));
        }
        let started = Instant::now();
        self.controller.begin_round(t);
        let (extras, clamp_events) = if t == 0 {
            (vec![Extras::default(); self.clients.len()], 0)
        } else {
            match self.cfg.strategy {
                Strategy::Fedavg => (self.round_fedavg(t)?, 0),
                Strategy::HeteroDistill => (self.round_hetero(t)?, 0),
                _ => self.round_robust(t)?,
            }
        };
        let mut logs = self.evaluate(&extras, clamp_events)?;
        if self.cfg.log_wall_clock {
            let ms = started.elapsed().as_secs_f64() * 1e3;
            logs.iter_mut().for_each(|l| l.wall_clock_ms = Some(ms));
        }
        self.next_round += 1;
        Ok(logs)
    }

    fn all_ids(&self) -> Vec<usize> {
        (0..self.clients.len()).collect()
    }

    fn participants(&self, t: usize) -> Vec<usize> {
        let k = self.clients.len();
        if self.cfg.participation >= 1.0 {
            return self.all_ids();
        }
        let m = ((self.cfg.participation * k as f64).round() as usize).clamp(1, k);
        let mut ids = index::sample(&mut stream(self.seed, Purpose::Participation, &[t as u64]), k, m).into_vec();
        ids.sort_unstable();
        ids
    }

    fn evaluate(&mut self, extras: &[Extras], clamp_events: usize) -> Result<Vec<RoundLog>> {
        let hp = self.cfg.hyperparams;
        let test = &self.test;
        let ids = self.all_ids();
        let msgs = upload(
            &mut self.controller,
            self.pool.as_ref(),
            self.cfg.fail_at,
            &mut self.clients,
            MessageKind::EvalReport,
            &ids,
            |c| {
                Ok(Payload::Eval {
                    eval: c.evaluate(test, &hp)?,
                    collab_loss: extras[c.client_id].collab_loss,
                })
            },
        )?;
        let round = self.controller.round();
        Ok(msgs
            .into_iter()
            .map(|m| {
                let id = m.client_id.expect("uploads carry a sender");
                let Payload::Eval { eval, collab_loss } = m.payload else {
                    unreachable!("collect checks the kind")
                };
                let x = extras[id];
                RoundLog {
                    round,
                    client_id: id,
                    accuracy: eval.accuracy,
                    roc_auc: eval.roc_auc,
                    pr_auc: eval.pr_auc,
                    mean_sl_loss: eval.mean_sl_loss,
                    q: x.q,
                    p: x.p,
                    f: x.f,
                    w: x.w,
                    collab_loss,
                    noise_rate: self.clients[id].shard.noise.rate,
                    clamp_events,
                    wall_clock_ms: None,
                }
            })
            .collect())
    }

    fn round_fedavg(&mut self, t: usize) -> Result<Vec<Extras>> {
        let cfg = &self.cfg;
        let (epochs, batch, hp) = (cfg.local_epochs, cfg.batch_size, cfg.hyperparams);
        let ids = self.participants(t);
        let msgs = upload(
            &mut self.controller,
            self.pool.as_ref(),
            cfg.fail_at,
            &mut self.clients,
            MessageKind::ModelUpload,
            &ids,
            |c| {
                c.train_private(t, epochs, batch, &hp, &PrivateMode::CROSS_ENTROPY)?;
                Ok(Payload::Model {
                    params: c.params.clone(),
                    samples: c.shard.len(),
                })
            },
        )?;
        let (params, sizes): (Vec<_>, Vec<_>) = msgs
            .into_iter()
            .map(|m| match m.payload {
                Payload::Model { params, samples } => (params, samples),
                _ => unreachable!("collect checks the kind"),
            })
            .unzip();
        let global = fedavg_aggregate(&params, &sizes).map_err(|e| attribute(e, t))?;
        let msg = self.controller.broadcast(Payload::Global(global));
        let Payload::Global(global) = msg.payload else { unreachable!() };
        for c in &mut self.clients {
            c.params = global.clone();
        }
        Ok(vec![Extras::default(); self.clients.len()])
    }

    fn share_logits(&mut self, t: usize) -> Result<Vec<LogitShare>> {
        let public = self.public.as_ref().expect("checked at construction");
        let ids = self.all_ids();
        let msgs = upload(
            &mut self.controller,
            self.pool.as_ref(),
            self.cfg.fail_at,
            &mut self.clients,
            MessageKind::LogitShare,
            &ids,
            |c| {
                Ok(Payload::Logits(LogitShare {
                    client_id: c.client_id,
                    round: t,
                    logits: c.logits(public)?,
                }))
            },
        )?;
        Ok(msgs
            .into_iter()
            .map(|m| match m.payload {
                Payload::Logits(s) => s,
                _ => unreachable!("collect checks the kind"),
            })
            .collect())
    }

    fn round_hetero(&mut self, t: usize) -> Result<Vec<Extras>> {
        let shares = self.share_logits(t)?;
        let consensus = consensus_logits(&shares).map_err(|e| attribute(e, t))?;
        let msg = self.controller.broadcast(Payload::Knowledge(Knowledge::Consensus(Arc::new(consensus))));
        let Payload::Knowledge(Knowledge::Consensus(consensus)) = msg.payload else { unreachable!() };

        let cfg = &self.cfg;
        let hp = cfg.hyperparams;
        let target = softmax_rows(&consensus, hp.temperature);
        let public = self.public.as_ref().expect("checked at construction");
        let k = self.clients.len();
        let ids = self.all_ids();
        let losses = fan_out(self.pool.as_ref(), &mut self.clients, &ids, |c| {
            let own = &shares[c.client_id].logits;
            let mut q = vec![0.0; own.cols()];
            let mut loss = 0.0;
            for i in 0..own.rows() {
                softmax_into(own.row(i), hp.temperature, &mut q);
                loss += kl_raw(target.row(i), &q);
            }
            c.train_distill(t, cfg.collab_epochs, cfg.batch_size, public, &target, &hp)?;
            c.train_private(t, cfg.local_epochs, cfg.batch_size, &hp, &PrivateMode::CROSS_ENTROPY)?;
            Ok(loss / own.rows() as f64)
        })?;
        Ok(losses
            .into_iter()
            .map(|l| Extras {
                w: Some(1.0 / k as f64),
                collab_loss: Some(l),
                ..Extras::default()
            })
            .collect())
    }

    /// Confidence phase: every client reports quality and, once it has history,
    /// learning efficiency. Returns the weights and the clamp count.
    fn confidence_phase(&mut self, mode: Reweight, extras: &mut [Extras]) -> Result<(WeightVector, usize)> {
        let hp = self.cfg.hyperparams;
        let ids = self.all_ids();
        let msgs = upload(
            &mut self.controller,
            self.pool.as_ref(),
            self.cfg.fail_at,
            &mut self.clients,
            MessageKind::ConfidenceUpload,
            &ids,
            |c| {
                let losses = c.sl_losses(&hp)?;
                let mean = losses.iter().sum::<f64>() / losses.len() as f64;
                let (report, has_history) = match &c.history {
                    Some(h) => (
                        ConfidenceReport::new(c.client_id, &losses, h.mean_sl_loss, c.update_ratio())?,
                        true,
                    ),
                    None => (
                        ConfidenceReport {
                            client_id: c.client_id,
                            q: label_quality(&losses)?,
                            p: 0.0,
                            f: 0.0,
                            delta_sl: 0.0,
                            update_ratio: 0.0,
                        },
                        false,
                    ),
                };
                c.history = Some(History {
                    mean_sl_loss: mean,
                    snapshot: c.params.values.clone(),
                });
                Ok(Payload::Confidence { report, has_history })
            },
        )?;
        let mut reports = Vec::with_capacity(msgs.len());
        let mut all_history = true;
        for m in msgs {
            let Payload::Confidence { report, has_history } = m.payload else {
                unreachable!("collect checks the kind")
            };
            all_history &= has_history;
            extras[report.client_id].q = Some(report.q);
            reports.push(report);
        }
        let k = reports.len();
        if !all_history || k < 2 {
            return Ok((WeightVector::uniform(k), 0));
        }
        finalize_confidence(&mut reports, mode);
        for r in &reports {
            extras[r.client_id].p = Some(r.p);
            extras[r.client_id].f = Some(r.f);
        }
        let f: Vec<f64> = reports.iter().map(|r| r.f).collect();
        let weighting = confidence_weights(&f, hp.eta_conf)?;
        Ok((weighting.weights, weighting.clamped))
    }

    /// Local-only, RHFL and RHFL+ rounds, driven by the ablation flags.
    fn round_robust(&mut self, t: usize) -> Result<(Vec<Extras>, usize)> {
        let flags = self.flags.expect("robust strategies carry flags");
        let hp = self.cfg.hyperparams;
        let k = self.clients.len();
        let mode = PrivateMode {
            sl: flags.sl,
            dlr: if flags.dlr {
                Some(DlrSchedule::new(hp.zeta, self.cfg.rounds)?)
            } else {
                None
            },
        };
        let mut extras = vec![Extras::default(); k];
        let mut clamp_events = 0;

        let knowledge = if flags.hfl {
            let weights = if flags.reweight == Reweight::None {
                WeightVector::uniform(k)
            } else {
                let (w, clamped) = self.confidence_phase(flags.reweight, &mut extras)?;
                clamp_events = clamped;
                w
            };
            let shares = self.share_logits(t)?;
            let msg = self.controller.broadcast(Payload::Knowledge(Knowledge::Weighted {
                weights,
                shares: Arc::new(shares),
            }));
            let Payload::Knowledge(Knowledge::Weighted { weights, shares }) = msg.payload else {
                unreachable!()
            };
            for (x, w) in extras.iter_mut().zip(weights.as_slice()) {
                x.w = Some(*w);
            }
            Some((weights, shares))
        } else {
            None
        };

        let cfg = &self.cfg;
        let public = self.public.as_ref();
        let ids = self.all_ids();
        let losses = fan_out(self.pool.as_ref(), &mut self.clients, &ids, |c| {
            let mut collab = None;
            if let Some((weights, shares)) = &knowledge {
                let own = &shares[c.client_id];
                collab = Some(collaborative_loss(own, shares, weights, hp.temperature)?);
                if let Some(target) = collaborative_target(own, shares, weights, hp.temperature)? {
                    let public = public.expect("checked at construction");
                    c.train_distill(t, cfg.collab_epochs, cfg.batch_size, public, &target, &hp)?;
                }
            }
            c.train_private(t, cfg.local_epochs, cfg.batch_size, &hp, &mode)?;
            Ok(collab)
        })?;
        for (x, l) in extras.iter_mut().zip(losses) {
            x.collab_loss = l;
        }
        Ok((extras, clamp_events))
    }
}

/// Builds a [`Simulator`] and runs it to completion.
pub fn run_experiment(
    cfg: StrategyConfig,
    scenario: Scenario,
    hidden: &[Vec<usize>],
    seed: u64,
    jobs: usize,
) -> Result<Vec<RoundLog>> {
    Simulator::new(cfg, scenario, hidden, seed, jobs)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn share(id: usize, v: Vec<f64>) -> LogitShare {
        LogitShare {
            client_id: id,
            round: 1,
            logits: Matrix::from_vec(2, 2, v).unwrap(),
        }
    }

    #[test]
    fn consensus_is_elementwise_mean() {
        let m = consensus_logits(&[share(0, vec![1.0, 2.0, 3.0, 4.0]), share(1, vec![3.0, 0.0, -3.0, 1.0])]).unwrap();
        assert_eq!(m.as_slice(), &[2.0, 1.0, 0.0, 2.5]);
    }

    #[test]
    fn consensus_rejects_shape_clash() {
        let odd = LogitShare {
            client_id: 1,
            round: 1,
            logits: Matrix::zeros(3, 2),
        };
        let err = consensus_logits(&[share(0, vec![0.0; 4]), odd]).unwrap_err();
        assert!(matches!(err, Error::Protocol { client: Some(1), .. }));
    }
}
