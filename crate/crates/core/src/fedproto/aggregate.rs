use crate::error::{Error, Result};
use crate::nnkernel::ModelParams;

/// Elementwise mean of `params` weighted by `sizes[i] / Σ sizes`.
///
/// Computed as `θ_0 + Σ w_i (θ_i − θ_0)`, folded in input order, so identical
/// inputs (and a single input) come back bit for bit.
pub fn fedavg_aggregate(params: &[ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    let first = params.first().ok_or_else(|| Error::protocol(None, None, "no models to aggregate"))?;
    if params.len() != sizes.len() {
        return Err(Error::protocol(None, None, format!("{} models but {} sizes", params.len(), sizes.len())));
    }
    for (i, p) in params.iter().enumerate() {
        if p.layer_dims != first.layer_dims {
            return Err(Error::protocol(
                None,
                Some(i),
                format!("architecture {:?} differs from {:?}", p.layer_dims, first.layer_dims),
            ));
        }
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::protocol(None, Some(i), "zero sample count"));
    }
    let total: usize = sizes.iter().sum();
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / total as f64).collect();

    let mut acc = first.values.clone();
    for (p, &w) in params.iter().zip(&weights).skip(1) {
        for ((a, v), v0) in acc.iter_mut().zip(&p.values).zip(&first.values) {
            *a += w * (v - v0);
        }
    }
    ModelParams::new(first.layer_dims.clone(), acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp(v: Vec<f64>) -> ModelParams {
        let n = v.len();
        ModelParams::new(vec![(1, n / 2)], v).unwrap()
    }

    #[test]
    fn midpoint() {
        let a = mp(vec![0.0, 2.0]);
        let b = mp(vec![2.0, 4.0]);
        assert_eq!(fedavg_aggregate(&[a, b], &[5, 5]).unwrap().values, vec![1.0, 3.0]);
    }

    #[test]
    fn single_client_identity() {
        let a = mp(vec![0.1, -0.0, 3.7, 1e-300]);
        let out = fedavg_aggregate(&[a.clone()], &[17]).unwrap();
        let bits = |p: &ModelParams| p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out), bits(&a));
    }

    #[test]
    fn identical_inputs_identity() {
        let a = mp(vec![0.1, 0.7, -1.3, 2.9]);
        let out = fedavg_aggregate(&[a.clone(), a.clone(), a.clone()], &[3, 5, 7]).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn size_weighting() {
        let a = ModelParams::new(vec![(1, 1)], vec![0.0, 0.0]).unwrap();
        let b = ModelParams::new(vec![(1, 1)], vec![4.0, 8.0]).unwrap();
        assert_eq!(fedavg_aggregate(&[a, b], &[1, 3]).unwrap().values, vec![3.0, 6.0]);
    }

    #[test]
    fn heterogeneous_shapes_rejected() {
        let a = ModelParams::new(vec![(1, 1)], vec![0.0, 0.0]).unwrap();
        let b = ModelParams::new(vec![(2, 1)], vec![0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(fedavg_aggregate(&[a, b], &[1, 1]), Err(Error::Protocol { client: Some(1), .. })));
    }
}
