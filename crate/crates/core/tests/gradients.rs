//! Finite-difference checks of the analytic MLP gradient for every loss.

use hetfed::nnkernel::{backward, batch_loss, LossSpec, Matrix, ModelParams};
use hetfed::seed::rng_from;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn random_simplex_rows(rng: &mut ChaCha8Rng, n: usize, c: usize, one_hot: bool) -> Matrix {
    let mut m = Matrix::zeros(n, c);
    for i in 0..n {
        let row = m.row_mut(i);
        if one_hot {
            row[rng.random_range(0..c)] = 1.0;
        } else {
            row.iter_mut().for_each(|v| *v = rng.random_range(0.05..1.0));
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    m
}

fn instance(rng: &mut ChaCha8Rng) -> (ModelParams, Matrix) {
    let depth = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(1..=5)];
    widths.extend((0..depth - 1).map(|_| rng.random_range(2..=7)));
    widths.push(rng.random_range(2..=5));
    // random biases too: zero biases behind a dead layer sit exactly on the ReLU kink
    let dims = ModelParams::dims_from_widths(&widths).unwrap();
    let count = dims.iter().map(|&(i, o)| i * o + o).sum::<usize>();
    let params = ModelParams::new(dims, (0..count).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let n = rng.random_range(1..=6);
    let x: Vec<f64> = (0..n * widths[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
    (params, Matrix::from_vec(n, widths[0], x).unwrap())
}

/// Worst relative error over 20 sampled coordinates.
fn check(params: &ModelParams, x: &Matrix, spec: &LossSpec<'_>, rng: &mut ChaCha8Rng) -> f64 {
    let g = backward(params, x, spec).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let j = rng.random_range(0..params.len());
        let shifted = |d: f64| {
            let mut p = params.clone();
            p.values[j] += d;
            batch_loss(&p, x, spec).unwrap()
        };
        let fd = (shifted(EPS) - shifted(-EPS)) / (2.0 * EPS);
        // a ReLU kink inside the stencil breaks the central difference, skip it
        let one_sided = (shifted(EPS) - batch_loss(params, x, spec).unwrap()) / EPS;
        if (fd - one_sided).abs() > 1e-3 * (1.0 + fd.abs()) {
            continue;
        }
        let err = (g[j] - fd).abs() / (g[j].abs() + fd.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = rng_from(101);
    for _ in 0..100 {
        let (p, x) = instance(&mut rng);
        let t = random_simplex_rows(&mut rng, x.rows(), p.output_dim(), true);
        let err = check(&p, &x, &LossSpec::CrossEntropy { targets: &t }, &mut rng);
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn symmetric_gradient_with_soft_targets() {
    let mut rng = rng_from(202);
    for i in 0..100 {
        let (p, x) = instance(&mut rng);
        let t = random_simplex_rows(&mut rng, x.rows(), p.output_dim(), i % 2 == 0);
        let spec = LossSpec::Symmetric {
            targets: &t,
            lambda: 0.4,
            gamma: 0.9,
            log_floor: -4.0,
        };
        let err = check(&p, &x, &spec, &mut rng);
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn distillation_gradient() {
    let mut rng = rng_from(303);
    for _ in 0..100 {
        let (p, x) = instance(&mut rng);
        let t = random_simplex_rows(&mut rng, x.rows(), p.output_dim(), false);
        let tau = rng.random_range(0.5..6.0);
        let err = check(&p, &x, &LossSpec::Distill { targets: &t, tau }, &mut rng);
        assert!(err < 1e-4, "relative error {err}");
    }
}

