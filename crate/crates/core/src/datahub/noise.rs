use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    /// Flip to a uniformly drawn other class.
    Symmetric,
    /// Flip `y -> (y + 1) mod C`.
    Pairflip,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::None => "none",
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Pairflip => "pairflip",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

/// A dataset whose training labels may be corrupted. `base.labels` keeps the
/// clean labels for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub base: Dataset,
    pub noisy_labels: Vec<usize>,
    pub flipped: Vec<bool>,
    pub noise: NoiseSpec,
}

impl NoisyDataset {
    pub fn clean(base: Dataset) -> Self {
        let n = base.len();
        NoisyDataset {
            noisy_labels: base.labels.clone(),
            flipped: vec![false; n],
            base,
            noise: NoiseSpec {
                kind: NoiseKind::None,
                rate: 0.0,
                seed: 0,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Empirical fraction of corrupted labels.
    pub fn flip_fraction(&self) -> f64 {
        self.flipped.iter().filter(|&&f| f).count() as f64 / self.len() as f64
    }
}

fn check_rate(mu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::config(format!("noise rate must lie in [0, 1], got {mu}")));
    }
    Ok(())
}

fn inject(ds: &Dataset, spec: NoiseSpec, dest: impl Fn(usize, &mut rand_chacha::ChaCha8Rng) -> usize) -> NoisyDataset {
    let mut rng = rng_from(spec.seed);
    let mut noisy = Vec::with_capacity(ds.len());
    let mut flipped = Vec::with_capacity(ds.len());
    for &y in &ds.labels {
        // one uniform draw per record, flip when below the rate
        let flip = rng.random::<f64>() < spec.rate;
        let label = if flip { dest(y, &mut rng) } else { y };
        noisy.push(label);
        flipped.push(label != y);
    }
    NoisyDataset {
        base: ds.clone(),
        noisy_labels: noisy,
        flipped,
        noise: spec,
    }
}

/// With probability `mu` replace each label by a uniform draw over the other `C - 1` classes.
pub fn inject_symmetric(ds: &Dataset, mu: f64, seed: u64) -> Result<NoisyDataset> {
    check_rate(mu)?;
    let c = ds.class_count;
    let spec = NoiseSpec {
        kind: NoiseKind::Symmetric,
        rate: mu,
        seed,
    };
    Ok(inject(ds, spec, |y, rng| {
        let r = rng.random_range(0..c - 1);
        if r >= y {
            r + 1
        } else {
            r
        }
    }))
}

/// With probability `mu` replace label `y` by `(y + 1) mod C`.
pub fn inject_pairflip(ds: &Dataset, mu: f64, seed: u64) -> Result<NoisyDataset> {
    check_rate(mu)?;
    let c = ds.class_count;
    let spec = NoiseSpec {
        kind: NoiseKind::Pairflip,
        rate: mu,
        seed,
    };
    Ok(inject(ds, spec, |y, _| (y + 1) % c))
}

pub fn inject_noise(ds: &Dataset, kind: NoiseKind, mu: f64, seed: u64) -> Result<NoisyDataset> {
    match kind {
        NoiseKind::None => {
            check_rate(mu)?;
            Ok(NoisyDataset::clean(ds.clone()))
        }
        NoiseKind::Symmetric => inject_symmetric(ds, mu, seed),
        NoiseKind::Pairflip => inject_pairflip(ds, mu, seed),
    }
}
