use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{ce_raw, clamped_ln, kl_raw, rce_raw, softmax_into};
use super::Matrix;
use crate::error::{Error, Result};

/// Parameters of a ReLU multilayer perceptron.
///
/// `values` holds, for each layer in order, the `out x in` weight matrix (row-major,
/// one row per output unit) followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layer_dims: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

fn param_count(layer_dims: &[(usize, usize)]) -> usize {
    layer_dims.iter().map(|&(i, o)| i * o + o).sum()
}

impl ModelParams {
    /// Wraps existing values, checking length, chaining and finiteness.
    pub fn new(layer_dims: Vec<(usize, usize)>, values: Vec<f64>) -> Result<Self> {
        if layer_dims.is_empty() {
            return Err(Error::config("model needs at least one layer"));
        }
        for w in layer_dims.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(Error::config(format!("layer dims do not chain: {layer_dims:?}")));
            }
        }
        if layer_dims.iter().any(|&(i, o)| i == 0 || o == 0) {
            return Err(Error::config(format!("zero-width layer in {layer_dims:?}")));
        }
        let expected = param_count(&layer_dims);
        if values.len() != expected {
            return Err(Error::config(format!(
                "parameter vector has {} values, layers need {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(ModelParams { layer_dims, values })
    }

    /// Layer dims for widths `[input, hidden..., output]`.
    pub fn dims_from_widths(widths: &[usize]) -> Result<Vec<(usize, usize)>> {
        if widths.len() < 2 {
            return Err(Error::config("need at least input and output widths"));
        }
        Ok(widths.windows(2).map(|w| (w[0], w[1])).collect())
    }

    /// Uniform fan-based init in `±sqrt(6 / (in + out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let layer_dims = Self::dims_from_widths(widths)?;
        let mut values = Vec::with_capacity(param_count(&layer_dims));
        for &(i, o) in &layer_dims {
            let limit = (6.0 / (i + o) as f64).sqrt();
            values.extend((0..i * o).map(|_| rng.random_range(-limit..=limit)));
            values.extend(std::iter::repeat_n(0.0, o));
        }
        Self::new(layer_dims, values)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0].0
    }

    pub fn output_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1].1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Slices `(weights, biases)` for each layer.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, &[f64], &[f64])> {
        let mut off = 0;
        self.layer_dims.iter().map(move |&(i, o)| {
            let w = &self.values[off..off + i * o];
            let b = &self.values[off + i * o..off + i * o + o];
            off += i * o + o;
            (i, o, w, b)
        })
    }
}

/// Input of every layer (after the previous ReLU), kept for the backward pass.
/// `inputs[0]` is the batch itself.
struct Trace {
    inputs: Vec<Matrix>,
    logits: Matrix,
}

fn affine(x: &Matrix, w: &[f64], b: &[f64], out_dim: usize, relu: bool) -> Matrix {
    let in_dim = x.cols();
    let mut y = Matrix::zeros(x.rows(), out_dim);
    for n in 0..x.rows() {
        let xr = x.row(n);
        let yr = y.row_mut(n);
        for (o, yo) in yr.iter_mut().enumerate() {
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for (wi, xi) in wr.iter().zip(xr) {
                acc += wi * xi;
            }
            *yo = if relu && acc < 0.0 { 0.0 } else { acc };
        }
    }
    y
}

fn check_batch(params: &ModelParams, batch: &Matrix) -> Result<()> {
    if batch.cols() != params.input_dim() {
        return Err(Error::config(format!(
            "batch has {} columns, model expects {}",
            batch.cols(),
            params.input_dim()
        )));
    }
    Ok(())
}

fn forward_trace(params: &ModelParams, batch: &Matrix) -> Trace {
    let n_layers = params.layer_dims.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut x = batch.clone();
    for (l, (_, o, w, b)) in params.layers().enumerate() {
        let y = affine(&x, w, b, o, l + 1 < n_layers);
        inputs.push(x);
        x = y;
    }
    Trace { inputs, logits: x }
}

/// Logits `N x C` for a batch. Hidden layers use ReLU, the output layer is linear.
pub fn mlp_forward(params: &ModelParams, batch: &Matrix) -> Result<Matrix> {
    check_batch(params, batch)?;
    let n_layers = params.layer_dims.len();
    let mut x = batch.clone();
    for (l, (_, o, w, b)) in params.layers().enumerate() {
        x = affine(&x, w, b, o, l + 1 < n_layers);
    }
    Ok(x)
}

/// Loss to differentiate in [`backward`]. `targets` has one distribution per batch row.
#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    /// `-Σ t·ln softmax(z)`.
    CrossEntropy { targets: &'a Matrix },
    /// `λ·CE + γ·RCE` on `softmax(z)`.
    Symmetric {
        targets: &'a Matrix,
        lambda: f64,
        gamma: f64,
        log_floor: f64,
    },
    /// `KL(t ‖ softmax(z / τ))`.
    Distill { targets: &'a Matrix, tau: f64 },
}

impl LossSpec<'_> {
    fn targets(&self) -> &Matrix {
        match self {
            LossSpec::CrossEntropy { targets }
            | LossSpec::Symmetric { targets, .. }
            | LossSpec::Distill { targets, .. } => targets,
        }
    }

    fn tau(&self) -> f64 {
        match self {
            LossSpec::Distill { tau, .. } => *tau,
            _ => 1.0,
        }
    }

    fn sample_loss(&self, q: &[f64], t: &[f64]) -> f64 {
        match *self {
            LossSpec::CrossEntropy { .. } => ce_raw(q, t),
            LossSpec::Symmetric {
                lambda,
                gamma,
                log_floor,
                ..
            } => lambda * ce_raw(q, t) + gamma * rce_raw(q, t, log_floor),
            LossSpec::Distill { .. } => kl_raw(t, q),
        }
    }

    /// d(sample loss)/d(logits), written into `g`.
    fn sample_grad(&self, q: &[f64], t: &[f64], g: &mut [f64]) {
        let t_sum: f64 = t.iter().sum();
        match *self {
            LossSpec::CrossEntropy { .. } => {
                for ((gi, &qi), &ti) in g.iter_mut().zip(q).zip(t) {
                    *gi = qi * t_sum - ti;
                }
            }
            LossSpec::Symmetric {
                lambda,
                gamma,
                log_floor,
                ..
            } => {
                let expected: f64 = q.iter().zip(t).map(|(&qi, &ti)| qi * clamped_ln(ti, log_floor)).sum();
                for ((gi, &qi), &ti) in g.iter_mut().zip(q).zip(t) {
                    let ce = qi * t_sum - ti;
                    let rce = -qi * (clamped_ln(ti, log_floor) - expected);
                    *gi = lambda * ce + gamma * rce;
                }
            }
            LossSpec::Distill { tau, .. } => {
                for ((gi, &qi), &ti) in g.iter_mut().zip(q).zip(t) {
                    *gi = (qi * t_sum - ti) / tau;
                }
            }
        }
    }

    fn check(&self, params: &ModelParams, batch: &Matrix) -> Result<()> {
        check_batch(params, batch)?;
        let t = self.targets();
        if t.rows() != batch.rows() || t.cols() != params.output_dim() {
            return Err(Error::config(format!(
                "targets are {}x{}, expected {}x{}",
                t.rows(),
                t.cols(),
                batch.rows(),
                params.output_dim()
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::config("empty batch"));
        }
        if let LossSpec::Distill { tau, .. } = self {
            if !(*tau > 0.0) {
                return Err(Error::config(format!("temperature must be positive, got {tau}")));
            }
        }
        Ok(())
    }
}

/// Mean loss over the batch; the function whose gradient [`backward`] returns.
pub fn batch_loss(params: &ModelParams, batch: &Matrix, spec: &LossSpec<'_>) -> Result<f64> {
    spec.check(params, batch)?;
    let logits = mlp_forward(params, batch)?;
    let c = logits.cols();
    let mut q = vec![0.0; c];
    let mut total = 0.0;
    for (n, z) in logits.iter_rows().enumerate() {
        softmax_into(z, spec.tau(), &mut q);
        total += spec.sample_loss(&q, spec.targets().row(n));
    }
    Ok(total / batch.rows() as f64)
}

/// Gradient of [`batch_loss`] with respect to `params.values`, averaged over the batch.
pub fn backward(params: &ModelParams, batch: &Matrix, spec: &LossSpec<'_>) -> Result<Vec<f64>> {
    spec.check(params, batch)?;
    let trace = forward_trace(params, batch);
    let n = batch.rows();
    let inv_n = 1.0 / n as f64;

    let c = trace.logits.cols();
    let mut delta = Matrix::zeros(n, c);
    let mut q = vec![0.0; c];
    for i in 0..n {
        softmax_into(trace.logits.row(i), spec.tau(), &mut q);
        spec.sample_grad(&q, spec.targets().row(i), delta.row_mut(i));
        for d in delta.row_mut(i) {
            *d *= inv_n;
        }
    }

    let mut grad = vec![0.0; params.len()];
    let offsets: Vec<usize> = params
        .layer_dims
        .iter()
        .scan(0, |off, &(i, o)| {
            let start = *off;
            *off += i * o + o;
            Some(start)
        })
        .collect();
    let layers: Vec<_> = params.layers().collect();

    for l in (0..layers.len()).rev() {
        let (in_dim, out_dim, w, _) = layers[l];
        let x = &trace.inputs[l];
        let off = offsets[l];
        let (gw, rest) = grad[off..off + in_dim * out_dim + out_dim].split_at_mut(in_dim * out_dim);
        for s in 0..n {
            let dr = delta.row(s);
            let xr = x.row(s);
            for o in 0..out_dim {
                let d = dr[o];
                if d == 0.0 {
                    continue;
                }
                rest[o] += d;
                for (g, &xi) in gw[o * in_dim..(o + 1) * in_dim].iter_mut().zip(xr) {
                    *g += d * xi;
                }
            }
        }
        if l > 0 {
            // x is the ReLU output of layer l-1; a zero entry means the unit was inactive
            let mut prev = Matrix::zeros(n, in_dim);
            for s in 0..n {
                let dr = delta.row(s);
                let xr = x.row(s);
                let pr = prev.row_mut(s);
                for o in 0..out_dim {
                    let d = dr[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &wi) in pr.iter_mut().zip(&w[o * in_dim..(o + 1) * in_dim]) {
                        *p += d * wi;
                    }
                }
                for (p, &xi) in pr.iter_mut().zip(xr) {
                    if xi <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
    }
    Ok(grad)
}

/// `values - alpha * grad`.
pub fn sgd_step(params: &ModelParams, grad: &[f64], alpha: f64) -> Result<ModelParams> {
    if grad.len() != params.len() {
        return Err(Error::config(format!(
            "gradient has {} entries, parameters {}",
            grad.len(),
            params.len()
        )));
    }
    let values = params.values.iter().zip(grad).map(|(v, g)| v - alpha * g).collect();
    Ok(ModelParams {
        layer_dims: params.layer_dims.clone(),
        values,
    })
}
