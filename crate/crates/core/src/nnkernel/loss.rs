use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to predicted probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

/// A probability vector over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Validates entries in `[0, 1]` summing to 1 within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::config("empty probability vector"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::Numeric(format!("probabilities out of [0,1]: {probs:?}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("probabilities sum to {s}, not 1")));
        }
        Ok(ProbDist(probs))
    }

    pub fn one_hot(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::config(format!("class {class} out of range for {classes} classes")));
        }
        let mut v = vec![0.0; classes];
        v[class] = 1.0;
        Ok(ProbDist(v))
    }

    pub fn uniform(classes: usize) -> Self {
        ProbDist(vec![1.0 / classes as f64; classes])
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_vec_unchecked(v: Vec<f64>) -> Self {
        ProbDist(v)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// CE weight in the symmetric loss.
    pub lambda: f64,
    /// RCE weight in the symmetric loss.
    pub gamma: f64,
    /// Distillation temperature.
    pub temperature: f64,
    pub lr: f64,
    /// DLR schedule constant.
    pub zeta: f64,
    /// Sensitivity of client weights to confidence.
    pub eta_conf: f64,
    /// Value substituted for `ln 0` (and any smaller log) in RCE.
    pub rce_log_floor: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: 0.4,
            gamma: 0.9,
            temperature: 4.0,
            lr: 0.001,
            zeta: 10.0,
            eta_conf: 1.2,
            rce_log_floor: -4.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("temperature", self.temperature),
            ("lr", self.lr),
            ("zeta", self.zeta),
            ("eta_conf", self.eta_conf),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("hyperparameter {name} must be positive, got {v}")));
            }
        }
        if !(self.rce_log_floor.is_finite() && self.rce_log_floor < 0.0) {
            return Err(Error::config(format!(
                "rce_log_floor must be strictly negative, got {}",
                self.rce_log_floor
            )));
        }
        Ok(())
    }
}

pub(crate) fn softmax_into(logits: &[f64], tau: f64, out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max) / tau;
    let mut s = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z / tau - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Softmax of `logits / tau`, shifted by the max for stability.
pub fn softmax_t(logits: &[f64], tau: f64) -> Result<ProbDist> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    if logits.is_empty() {
        return Err(Error::config("empty logit vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits: {logits:?}")));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, tau, &mut out);
    Ok(ProbDist(out))
}

fn same_len(a: &ProbDist, b: &ProbDist) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "distribution lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub(crate) fn ce_raw(pred: &[f64], target: &[f64]) -> f64 {
    -pred
        .iter()
        .zip(target)
        .map(|(&q, &t)| if t == 0.0 { 0.0 } else { t * q.max(PROB_FLOOR).ln() })
        .sum::<f64>()
}

/// `ln t` floored at `floor`; `ln 0` maps to `floor`.
pub(crate) fn clamped_ln(t: f64, floor: f64) -> f64 {
    if t <= 0.0 {
        floor
    } else {
        t.ln().max(floor)
    }
}

pub(crate) fn rce_raw(pred: &[f64], target: &[f64], floor: f64) -> f64 {
    -pred
        .iter()
        .zip(target)
        .map(|(&q, &t)| q * clamped_ln(t, floor))
        .sum::<f64>()
}

pub(crate) fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi == 0.0 { 0.0 } else { pi * (pi / qi.max(PROB_FLOOR)).ln() })
        .sum()
}

/// Cross-entropy `-Σ target·ln(pred)`.
pub fn ce_loss(pred: &ProbDist, target: &ProbDist) -> Result<f64> {
    same_len(pred, target)?;
    Ok(ce_raw(&pred.0, &target.0))
}

/// Reverse cross-entropy `-Σ pred·ln*(target)`, `ln*` floored at `floor`.
pub fn rce_loss(pred: &ProbDist, target: &ProbDist, floor: f64) -> Result<f64> {
    same_len(pred, target)?;
    if !(floor < 0.0) {
        return Err(Error::config(format!("RCE log floor must be negative, got {floor}")));
    }
    Ok(rce_raw(&pred.0, &target.0, floor))
}

/// Symmetric cross-entropy `λ·CE + γ·RCE`.
pub fn sl_loss(pred: &ProbDist, target: &ProbDist, h: &Hyperparams) -> Result<f64> {
    Ok(h.lambda * ce_loss(pred, target)? + h.gamma * rce_loss(pred, target, h.rce_log_floor)?)
}

/// `KL(p ‖ q)` with `q` floored at [`PROB_FLOOR`].
pub fn kl_div(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    same_len(p, q)?;
    Ok(kl_raw(&p.0, &q.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pd(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_t(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for x in p.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_t(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((p.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax_t(&[3.0, -1.0, 0.5, 2.0], 1e6).unwrap();
        for x in p.as_slice() {
            assert!((x - 0.25).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(softmax_t(&[f64::NAN, 0.0], 1.0), Err(Error::Numeric(_))));
        assert!(matches!(softmax_t(&[f64::INFINITY], 1.0), Err(Error::Numeric(_))));
        assert!(matches!(softmax_t(&[0.0], 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn ce_examples() {
        let t = ProbDist::one_hot(2, 10).unwrap();
        assert!(ce_loss(&t, &t).unwrap().abs() < 1e-15);
        let u = ProbDist::uniform(10);
        assert!((ce_loss(&u, &t).unwrap() - 2.302585).abs() < 1e-6);
        assert!((ce_loss(&pd(&[0.5, 0.5]), &pd(&[0.5, 0.5])).unwrap() - 0.693147).abs() < 1e-6);
        assert!(ce_loss(&u, &pd(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn rce_examples() {
        let t = ProbDist::one_hot(0, 10).unwrap();
        assert_eq!(rce_loss(&t, &t, -4.0).unwrap(), 0.0);
        let u = ProbDist::uniform(10);
        assert!((rce_loss(&u, &t, -4.0).unwrap() - 3.6).abs() < 1e-12);
        let j = ProbDist::one_hot(3, 10).unwrap();
        assert!((rce_loss(&j, &t, -4.0).unwrap() - 4.0).abs() < 1e-15);
        assert!(rce_loss(&u, &t, 0.0).is_err());
    }

    #[test]
    fn sl_examples() {
        let h = Hyperparams::default();
        let t = ProbDist::one_hot(0, 10).unwrap();
        let u = ProbDist::uniform(10);
        assert!((sl_loss(&u, &t, &h).unwrap() - 4.161034).abs() < 1e-6);
        assert!(sl_loss(&t, &t, &h).unwrap().abs() < 1e-15);
        let h0 = Hyperparams { gamma: 0.0, ..h };
        assert_eq!(sl_loss(&u, &t, &h0).unwrap(), h.lambda * ce_loss(&u, &t).unwrap());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_div(&pd(&[0.3, 0.7]), &pd(&[0.3, 0.7])).unwrap(), 0.0);
        assert!((kl_div(&pd(&[1.0, 0.0]), &pd(&[0.5, 0.5])).unwrap() - 2f64.ln()).abs() < 1e-15);
        let v = kl_div(&pd(&[0.5, 0.5]), &pd(&[0.25, 0.75])).unwrap();
        assert!((v - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        let bad = Hyperparams { rce_log_floor: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = Hyperparams { temperature: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = ProbDist> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
            let v: Vec<f64> = v.iter().map(|x| x + 1e-3).collect();
            let s: f64 = v.iter().sum();
            ProbDist::new(v.iter().map(|x| x / s).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_equivariant(
            logits in prop::collection::vec(-30.0f64..30.0, 2..12),
            tau in 0.1f64..10.0,
            rot in 0usize..12,
        ) {
            let p = softmax_t(&logits, tau).unwrap();
            let s: f64 = p.as_slice().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            let k = rot % logits.len();
            let mut rotated = logits.clone();
            rotated.rotate_left(k);
            let pr = softmax_t(&rotated, tau).unwrap();
            let mut expect = p.as_slice().to_vec();
            expect.rotate_left(k);
            for (a, b) in pr.as_slice().iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }

        #[test]
        fn kl_nonnegative(p in simplex(5), q in simplex(5)) {
            prop_assert!(kl_div(&p, &q).unwrap() >= -1e-15);
            prop_assert!(kl_div(&p, &p).unwrap().abs() < 1e-9);
        }

        #[test]
        fn sl_nonnegative_for_one_hot(pred in simplex(6), class in 0usize..6) {
            let t = ProbDist::one_hot(class, 6).unwrap();
            prop_assert!(sl_loss(&pred, &t, &Hyperparams::default()).unwrap() >= 0.0);
        }
    }
}
