use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nnkernel::Matrix;
use crate::seed::rng_from;

/// Class centroid: evenly spaced on the unit circle in the first two coordinates
/// (zeros elsewhere), or evenly spaced on `[-1, 1]` when `dims == 1`.
fn centroid(class: usize, classes: usize, dims: usize) -> Vec<f64> {
    let mut c = vec![0.0; dims];
    if dims == 1 {
        c[0] = -1.0 + 2.0 * class as f64 / (classes - 1) as f64;
    } else {
        let angle = 2.0 * PI * class as f64 / classes as f64;
        c[0] = angle.cos();
        c[1] = angle.sin();
    }
    c
}

/// Isotropic Gaussian clusters, `per_class` points per class, rows grouped by class.
pub fn gen_blobs(classes: usize, dims: usize, per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || dims == 0 || per_class == 0 {
        return Err(Error::config(format!(
            "blobs need classes >= 2, dims >= 1, per_class >= 1 (got {classes}, {dims}, {per_class})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::config(format!("spread must be non-negative, got {spread}")));
    }
    let mut rng = rng_from(seed);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let mu = centroid(c, classes, dims);
        for _ in 0..per_class {
            for &m in &mu {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(Matrix::from_vec(n, dims, data)?, labels, classes)
}
