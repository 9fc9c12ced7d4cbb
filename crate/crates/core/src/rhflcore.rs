//! Robust collaboration maths: dynamic label refinement (DLR), label quality,
//! learning efficiency, client confidence (CCR / ECCR), confidence weights and the
//! weighted collaborative distillation loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkernel::loss_internals::{kl_raw, softmax_into};
use crate::nnkernel::{Matrix, ProbDist};

/// Guard applied to a mean SL loss before taking its reciprocal.
pub const QUALITY_FLOOR: f64 = 1e-9;
/// Quality reported when the mean loss is at or below [`QUALITY_FLOOR`].
pub const QUALITY_CEILING: f64 = 1e9;

/// `s(t) = t / (ζ·T + t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlrSchedule {
    pub zeta: f64,
    pub total_epochs: usize,
}

impl DlrSchedule {
    pub fn new(zeta: f64, total_epochs: usize) -> Result<Self> {
        if !(zeta > 0.0 && zeta.is_finite()) || total_epochs == 0 {
            return Err(Error::config(format!(
                "DLR schedule needs zeta > 0 and T > 0 (got {zeta}, {total_epochs})"
            )));
        }
        Ok(DlrSchedule { zeta, total_epochs })
    }
}

/// Weight of the model's own prediction in the refined label at epoch `t_c`.
pub fn dlr_weight(t_c: i64, sched: &DlrSchedule) -> Result<f64> {
    if t_c < 0 {
        return Err(Error::config(format!("DLR epoch must be non-negative, got {t_c}")));
    }
    let t = t_c as f64;
    Ok(t / (sched.zeta * sched.total_epochs as f64 + t))
}

/// `(1 - s)·noisy + s·pred`.
pub fn dlr_refine(noisy_onehot: &ProbDist, pred: &ProbDist, s: f64) -> Result<ProbDist> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::config(format!("DLR mix weight must lie in [0, 1), got {s}")));
    }
    if noisy_onehot.len() != pred.len() {
        return Err(Error::config("DLR inputs differ in length"));
    }
    let mixed = noisy_onehot
        .as_slice()
        .iter()
        .zip(pred.as_slice())
        .map(|(&y, &p)| ((1.0 - s) * y + s * p).clamp(0.0, 1.0))
        .collect();
    Ok(ProbDist::from_vec_unchecked(mixed))
}

/// Reciprocal of the mean per-sample SL loss. A mean at or below
/// [`QUALITY_FLOOR`] yields [`QUALITY_CEILING`].
pub fn label_quality(sl_losses: &[f64]) -> Result<f64> {
    if sl_losses.is_empty() {
        return Err(Error::config("label quality needs at least one loss"));
    }
    let mean = sl_losses.iter().sum::<f64>() / sl_losses.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric(format!("mean SL loss is {mean}")));
    }
    if mean <= QUALITY_FLOOR {
        return Ok(QUALITY_CEILING);
    }
    Ok(1.0 / mean)
}

/// `ΔL / (Δθ/|θ| + 1)`; negative when the loss rose.
pub fn learning_efficiency(delta_sl: f64, update_ratio: f64) -> Result<f64> {
    if !(update_ratio >= 0.0) || !update_ratio.is_finite() || !delta_sl.is_finite() {
        return Err(Error::Numeric(format!(
            "learning efficiency inputs must be finite with a non-negative ratio (got {delta_sl}, {update_ratio})"
        )));
    }
    Ok(delta_sl / (update_ratio + 1.0))
}

/// ECCR confidence: normalised quality times learning efficiency.
pub fn client_confidence_eccr(q_norm: f64, p: f64) -> f64 {
    q_norm * p
}

/// CCR confidence: normalised quality times the raw SL-loss drop.
pub fn client_confidence_ccr(q_norm: f64, delta_sl: f64) -> f64 {
    q_norm * delta_sl
}

/// `Q_k / Σ_j Q_j`.
pub fn normalize_quality(q: &[f64]) -> Vec<f64> {
    let total: f64 = q.iter().sum();
    if total > 0.0 {
        q.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / q.len() as f64; q.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reweight {
    None,
    Ccr,
    Eccr,
}

/// Per-client confidence terms for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub client_id: usize,
    /// Label quality.
    pub q: f64,
    /// Learning efficiency (ECCR form).
    pub p: f64,
    /// Confidence, filled in once every client's quality is known.
    pub f: f64,
    /// Previous mean SL loss minus the current one.
    pub delta_sl: f64,
    /// `‖θ_now − θ_prev‖ / ‖θ_prev‖`.
    pub update_ratio: f64,
}

impl ConfidenceReport {
    /// Client-side part: quality from this round's losses, efficiency from the
    /// change since the previous round.
    pub fn new(client_id: usize, sl_losses: &[f64], previous_mean: f64, update_ratio: f64) -> Result<Self> {
        let q = label_quality(sl_losses)?;
        let mean = sl_losses.iter().sum::<f64>() / sl_losses.len() as f64;
        let delta_sl = previous_mean - mean;
        let p = learning_efficiency(delta_sl, update_ratio)?;
        Ok(ConfidenceReport {
            client_id,
            q,
            p,
            f: 0.0,
            delta_sl,
            update_ratio,
        })
    }
}

/// Server-side part: normalise quality across clients and fill in `f`.
pub fn finalize_confidence(reports: &mut [ConfidenceReport], mode: Reweight) {
    let q: Vec<f64> = reports.iter().map(|r| r.q).collect();
    for (r, qn) in reports.iter_mut().zip(normalize_quality(&q)) {
        r.f = match mode {
            Reweight::Eccr => client_confidence_eccr(qn, r.p),
            Reweight::Ccr => client_confidence_ccr(qn, r.delta_sl),
            Reweight::None => 0.0,
        };
    }
}

/// Per-client aggregation weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn uniform(k: usize) -> Self {
        WeightVector(vec![1.0 / k as f64; k])
    }

    /// Normalises non-negative raw weights.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config(format!("invalid raw weights {raw:?}")));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Ok(Self::uniform(raw.len()));
        }
        Ok(WeightVector(raw.into_iter().map(|w| w / total).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Result of [`confidence_weights`]: the weights plus how many raw weights were
/// negative and clamped to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Weighting {
    pub weights: WeightVector,
    pub clamped: usize,
}

/// `w_k = 1/(K−1) + η·F_k / Σ|F|`, clamped at zero, then normalised to sum to one.
/// All-zero confidence gives uniform weights.
pub fn confidence_weights(f: &[f64], eta_conf: f64) -> Result<Weighting> {
    let k = f.len();
    if k < 2 {
        return Err(Error::config(format!("confidence weights need K >= 2, got {k}")));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite confidence {f:?}")));
    }
    let abs_sum: f64 = f.iter().map(|v| v.abs()).sum();
    if abs_sum == 0.0 {
        return Ok(Weighting {
            weights: WeightVector::uniform(k),
            clamped: 0,
        });
    }
    let base = 1.0 / (k - 1) as f64;
    let mut clamped = 0;
    let raw: Vec<f64> = f
        .iter()
        .map(|&fk| {
            let w = base + eta_conf * fk / abs_sum;
            if w < 0.0 {
                clamped += 1;
                0.0
            } else {
                w
            }
        })
        .collect();
    Ok(Weighting {
        weights: WeightVector::from_raw(raw)?,
        clamped,
    })
}

/// One client's logits on the public set for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitShare {
    pub client_id: usize,
    pub round: usize,
    pub logits: Matrix,
}

fn check_shares(own: &LogitShare, all: &[LogitShare], w: &WeightVector) -> Result<()> {
    if all.len() != w.len() {
        return Err(Error::config(format!("{} logit shares but {} weights", all.len(), w.len())));
    }
    for s in all {
        if s.logits.shape() != own.logits.shape() {
            return Err(Error::config(format!(
                "client {} logits are {:?}, expected {:?}",
                s.client_id,
                s.logits.shape(),
                own.logits.shape()
            )));
        }
    }
    Ok(())
}

/// Peers of `own` with their weights renormalised over the peers only.
fn peer_weights<'a>(own: &LogitShare, all: &'a [LogitShare], w: &WeightVector) -> Vec<(&'a LogitShare, f64)> {
    let peers: Vec<(&LogitShare, f64)> = all
        .iter()
        .zip(w.as_slice())
        .filter(|(s, _)| s.client_id != own.client_id)
        .map(|(s, &wj)| (s, wj))
        .collect();
    let total: f64 = peers.iter().map(|(_, wj)| wj).sum();
    if total > 0.0 {
        peers.into_iter().map(|(s, wj)| (s, wj / total)).collect()
    } else {
        let n = peers.len() as f64;
        peers.into_iter().map(|(s, _)| (s, 1.0 / n)).collect()
    }
}

/// Mean over public samples of `Σ_{j≠k} W̃_j · KL(softmax(φ_j/τ) ‖ softmax(φ_k/τ))`,
/// where `W̃` are the peer weights renormalised to sum to one over `j ≠ k`.
/// Zero when `own` has no peers.
pub fn collaborative_loss(own: &LogitShare, all: &[LogitShare], w: &WeightVector, tau: f64) -> Result<f64> {
    check_shares(own, all, w)?;
    if !(tau > 0.0) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    let peers = peer_weights(own, all, w);
    let (n, c) = own.logits.shape();
    if peers.is_empty() || n == 0 {
        return Ok(0.0);
    }
    let mut q = vec![0.0; c];
    let mut p = vec![0.0; c];
    let mut total = 0.0;
    for i in 0..n {
        softmax_into(own.logits.row(i), tau, &mut q);
        for (s, wj) in &peers {
            softmax_into(s.logits.row(i), tau, &mut p);
            total += wj * kl_raw(&p, &q);
        }
    }
    Ok(total / n as f64)
}

/// Peer mixture `m_k = Σ_{j≠k} W̃_j · softmax(φ_j/τ)` per public sample.
///
/// `Σ_j W̃_j KL(p_j ‖ q) = KL(m_k ‖ q) + const`, so distilling towards `m_k` has
/// the same gradient in the own logits as [`collaborative_loss`]. `None` when
/// `own` has no peers.
pub fn collaborative_target(own: &LogitShare, all: &[LogitShare], w: &WeightVector, tau: f64) -> Result<Option<Matrix>> {
    check_shares(own, all, w)?;
    let peers = peer_weights(own, all, w);
    if peers.is_empty() {
        return Ok(None);
    }
    let (n, c) = own.logits.shape();
    let mut m = Matrix::zeros(n, c);
    let mut p = vec![0.0; c];
    for i in 0..n {
        let row = m.row_mut(i);
        for (s, wj) in &peers {
            softmax_into(s.logits.row(i), tau, &mut p);
            for (r, pi) in row.iter_mut().zip(&p) {
                *r += wj * pi;
            }
        }
    }
    Ok(Some(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkernel::{kl_div, softmax_t};
    use proptest::prelude::*;

    fn share(id: usize, rows: &[Vec<f64>]) -> LogitShare {
        LogitShare {
            client_id: id,
            round: 1,
            logits: Matrix::from_rows(rows).unwrap(),
        }
    }

    #[test]
    fn dlr_weight_examples() {
        let s = DlrSchedule::new(10.0, 40).unwrap();
        assert_eq!(dlr_weight(0, &s).unwrap(), 0.0);
        assert!((dlr_weight(40, &s).unwrap() - 40.0 / 440.0).abs() < 1e-15);
        let half = DlrSchedule::new(0.5, 8).unwrap();
        assert_eq!(dlr_weight(4, &half).unwrap(), 0.5);
        assert!(dlr_weight(-1, &s).is_err());
        assert!(DlrSchedule::new(0.0, 4).is_err());
    }

    #[test]
    fn dlr_refine_examples() {
        let y = ProbDist::one_hot(0, 2).unwrap();
        let u = ProbDist::uniform(2);
        assert_eq!(dlr_refine(&y, &u, 0.0).unwrap(), y);
        assert_eq!(dlr_refine(&y, &u, 0.5).unwrap().as_slice(), &[0.75, 0.25]);
        assert_eq!(dlr_refine(&y, &y, 0.3).unwrap(), y);
        assert!(dlr_refine(&y, &u, 1.0).is_err());
        assert!(dlr_refine(&y, &u, -0.1).is_err());
    }

    #[test]
    fn quality_examples() {
        assert_eq!(label_quality(&[2.0, 2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(label_quality(&[1.0, 3.0]).unwrap(), 0.5);
        let q = label_quality(&[1e-15, 0.0]).unwrap();
        assert_eq!(q, 1e9);
        assert!(label_quality(&[]).is_err());
    }

    #[test]
    fn efficiency_and_confidence_examples() {
        assert!((learning_efficiency(0.5, 0.25).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(learning_efficiency(0.7, 0.0).unwrap(), 0.7);
        assert_eq!(learning_efficiency(0.0, 3.0).unwrap(), 0.0);
        assert!(learning_efficiency(0.1, -0.5).is_err());
        assert!((client_confidence_eccr(0.25, 0.4) - 0.1).abs() < 1e-15);
        assert_eq!(client_confidence_eccr(0.3, 0.0), 0.0);
        assert_eq!(client_confidence_eccr(1.0, -0.37), -0.37);
        assert_eq!(client_confidence_ccr(0.25, 0.5), 0.125);
        assert_eq!(client_confidence_ccr(0.25, 0.0), 0.0);
        let d = 0.37;
        assert_eq!(client_confidence_ccr(0.2, d), client_confidence_eccr(0.2, learning_efficiency(d, 0.0).unwrap()));
    }

    #[test]
    fn weight_examples() {
        let w = confidence_weights(&[0.3; 4], 1.2).unwrap();
        for &x in w.weights.as_slice() {
            assert!((x - 0.25).abs() < 1e-15);
        }
        let w = confidence_weights(&[1.0, 0.0], 1.0).unwrap();
        assert!((w.weights.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.weights.as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(confidence_weights(&[0.0; 3], 1.2).unwrap().weights, WeightVector::uniform(3));
        assert!(confidence_weights(&[1.0], 1.0).is_err());
    }

    #[test]
    fn negative_raw_weights_are_clamped_and_counted() {
        // raw = 1/3 + 1.2 * F/Σ|F| with F = [-1, 0.1, 0.1, 0.1] -> first raw is negative
        let w = confidence_weights(&[-1.0, 0.1, 0.1, 0.1], 1.2).unwrap();
        assert_eq!(w.clamped, 1);
        assert_eq!(w.weights.as_slice()[0], 0.0);
        let s: f64 = w.weights.as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn finalize_modes() {
        let mut reports = vec![
            ConfidenceReport::new(0, &[1.0, 1.0], 2.0, 0.5).unwrap(),
            ConfidenceReport::new(1, &[2.0, 2.0], 2.5, 0.0).unwrap(),
        ];
        finalize_confidence(&mut reports, Reweight::Eccr);
        // Q = [1, 0.5], q_norm = [2/3, 1/3]; P = [1/1.5, 0.5]
        assert!((reports[0].f - (2.0 / 3.0) * (1.0 / 1.5)).abs() < 1e-15);
        assert!((reports[1].f - (1.0 / 3.0) * 0.5).abs() < 1e-15);
        finalize_confidence(&mut reports, Reweight::Ccr);
        assert!((reports[0].f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn collaborative_loss_identical_clients_is_zero() {
        let rows = vec![vec![1.0, -0.5, 0.2], vec![0.0, 2.0, -1.0]];
        let all: Vec<_> = (0..3).map(|k| share(k, &rows)).collect();
        let v = collaborative_loss(&all[1], &all, &WeightVector::uniform(3), 4.0).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn two_clients_reduce_to_single_kl() {
        let own = share(0, &[vec![0.3, -1.0, 2.0]]);
        let peer = share(1, &[vec![1.5, 0.2, -0.4]]);
        let all = vec![own.clone(), peer.clone()];
        let tau = 4.0;
        let v = collaborative_loss(&own, &all, &WeightVector::uniform(2), tau).unwrap();
        let expect = kl_div(
            &softmax_t(peer.logits.row(0), tau).unwrap(),
            &softmax_t(own.logits.row(0), tau).unwrap(),
        )
        .unwrap();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn temperature_cancels_with_scaled_logits() {
        let a = vec![vec![0.3, -1.0, 2.0], vec![1.0, 1.0, 0.0]];
        let b = vec![vec![1.5, 0.2, -0.4], vec![-2.0, 0.5, 0.5]];
        let c = vec![vec![0.0, 0.1, 0.2], vec![0.9, -0.3, 0.3]];
        let scale = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|v| v * 4.0).collect()).collect::<Vec<Vec<f64>>>();
        let w = WeightVector::from_raw(vec![0.2, 0.5, 0.3]).unwrap();
        let plain = vec![share(0, &a), share(1, &b), share(2, &c)];
        let scaled = vec![share(0, &scale(&a)), share(1, &scale(&b)), share(2, &scale(&c))];
        let l1 = collaborative_loss(&plain[0], &plain, &w, 1.0).unwrap();
        let l4 = collaborative_loss(&scaled[0], &scaled, &w, 4.0).unwrap();
        assert!((l1 - l4).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = share(0, &[vec![0.0, 1.0]]);
        let b = share(1, &[vec![0.0, 1.0, 2.0]]);
        let all = vec![a.clone(), b];
        assert!(collaborative_loss(&a, &all, &WeightVector::uniform(2), 1.0).is_err());
        assert!(collaborative_loss(&a, &all[..1], &WeightVector::uniform(2), 1.0).is_err());
    }

    #[test]
    fn target_mixture_differs_from_loss_by_constant() {
        // Σ W̃_j KL(p_j‖q) - KL(m‖q) = Σ W̃_j Σ p_j ln p_j - Σ m ln m, independent of own logits
        let b = vec![vec![1.5, 0.2, -0.4]];
        let c = vec![vec![-0.5, 0.9, 0.1]];
        let w = WeightVector::from_raw(vec![0.1, 0.6, 0.3]).unwrap();
        let gap = |own_row: Vec<f64>| {
            let all = vec![share(0, &[own_row]), share(1, &b), share(2, &c)];
            let loss = collaborative_loss(&all[0], &all, &w, 2.0).unwrap();
            let m = collaborative_target(&all[0], &all, &w, 2.0).unwrap().unwrap();
            let q = softmax_t(all[0].logits.row(0), 2.0).unwrap();
            let m = ProbDist::new(m.row(0).to_vec()).unwrap();
            loss - kl_div(&m, &q).unwrap()
        };
        assert!((gap(vec![0.0, 0.0, 0.0]) - gap(vec![3.0, -1.0, 0.5])).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn dlr_weight_monotone_and_bounded(zeta in 0.1f64..20.0, total in 1usize..200) {
            let s = DlrSchedule::new(zeta, total).unwrap();
            let mut prev = -1.0;
            for t in 0..=total as i64 {
                let v = dlr_weight(t, &s).unwrap();
                prop_assert!(v > prev);
                prop_assert!(v <= 1.0 / (zeta + 1.0) + 1e-15);
                prev = v;
            }
        }

        #[test]
        fn weights_sum_to_one_and_track_argmax(
            f in prop::collection::vec(-5.0f64..5.0, 2..12),
            eta in 0.01f64..3.0,
        ) {
            prop_assume!(f.iter().any(|v| *v != 0.0));
            let w = confidence_weights(&f, eta).unwrap();
            let s: f64 = w.weights.as_slice().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            if w.clamped == 0 {
                let am = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                let fmax = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(f[am(w.weights.as_slice())] == fmax);
            }
        }

        #[test]
        fn weights_permutation_equivariant(f in prop::collection::vec(-5.0f64..5.0, 3..8), rot in 0usize..8) {
            let k = rot % f.len();
            let mut g = f.clone();
            g.rotate_left(k);
            let wf = confidence_weights(&f, 1.2).unwrap().weights.as_slice().to_vec();
            let wg = confidence_weights(&g, 1.2).unwrap().weights.as_slice().to_vec();
            let mut expect = wf.clone();
            expect.rotate_left(k);
            for (a, b) in wg.iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn collaborative_loss_nonnegative(
            logits in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 6),
            raw in prop::collection::vec(0.01f64..1.0, 3),
        ) {
            let all: Vec<_> = (0..3).map(|k| share(k, &logits[2 * k..2 * k + 2])).collect();
            let w = WeightVector::from_raw(raw).unwrap();
            for own in &all {
                prop_assert!(collaborative_loss(own, &all, &w, 4.0).unwrap() >= -1e-15);
            }
        }
    }
}
