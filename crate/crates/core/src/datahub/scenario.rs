use std::path::PathBuf;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{gen_blobs, inject_noise, load_csv, load_idx, partition, CsvSchema, Dataset, NoiseKind, NoisyDataset, PartitionPlan, PartitionScheme};
use crate::error::{Error, Result};
use crate::seed::{derive, rng_from, Purpose};

/// Uniform sample of `n_pub` distinct indices out of `0..n`, in draw order.
pub fn sample_public_indices(n: usize, n_pub: usize, seed: u64) -> Result<Vec<usize>> {
    if n_pub == 0 {
        return Err(Error::config("public dataset must hold at least one record"));
    }
    if n_pub > n {
        return Err(Error::config(format!("public size {n_pub} exceeds dataset size {n}")));
    }
    Ok(index::sample(&mut rng_from(seed), n, n_pub).into_vec())
}

/// Public distillation set: a uniform sample without replacement. Labels are kept
/// but only logits on these inputs are ever exchanged.
pub fn sample_public(ds: &Dataset, n_pub: usize, seed: u64) -> Result<Dataset> {
    Ok(ds.subset(&sample_public_indices(ds.len(), n_pub, seed)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Blobs {
        classes: usize,
        dims: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        classes: usize,
    },
    Csv {
        path: PathBuf,
        features: usize,
        classes: usize,
    },
}

fn default_spread() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionKind {
    Iid,
    LabelSkew { concentration: f64 },
}

/// Fully resolved data layout of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub source: DataSource,
    pub clients: usize,
    pub private_size: usize,
    pub public_size: usize,
    pub test_size: usize,
    pub partition: PartitionKind,
    pub noise: NoiseKind,
    /// One noise rate per client.
    pub client_rates: Vec<f64>,
}

/// Client shards, public set and clean test set of one run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub clients: Vec<NoisyDataset>,
    pub public: Option<Dataset>,
    pub test: Dataset,
    pub class_count: usize,
}

impl Scenario {
    pub fn input_dim(&self) -> usize {
        self.test.dims()
    }
}

/// Builds the base dataset, carves out disjoint public / test / private pools,
/// partitions the private pool and corrupts each client shard with its own stream.
pub fn build_scenario(spec: &DataSpec, seed: u64) -> Result<Scenario> {
    if spec.clients == 0 {
        return Err(Error::config("need at least one client"));
    }
    if spec.client_rates.len() != spec.clients {
        return Err(Error::config(format!(
            "{} noise rates for {} clients",
            spec.client_rates.len(),
            spec.clients
        )));
    }
    if spec.test_size == 0 || spec.private_size == 0 {
        return Err(Error::config("test_size and private_size must be positive"));
    }
    let needed = spec.clients * spec.private_size + spec.public_size + spec.test_size;

    let base = match &spec.source {
        DataSource::Blobs { classes, dims, spread } => {
            let per_class = needed.div_ceil(*classes);
            gen_blobs(*classes, *dims, per_class, *spread, derive(seed, Purpose::DataGen, &[]))?
        }
        DataSource::Idx { images, labels, classes } => load_idx(images, labels, *classes)?,
        DataSource::Csv { path, features, classes } => load_csv(
            path,
            CsvSchema {
                features: *features,
                classes: *classes,
            },
        )?,
    };
    if base.len() < needed {
        return Err(Error::config(format!(
            "layout needs {needed} records, source provides {}",
            base.len()
        )));
    }

    let mut taken = vec![false; base.len()];
    let public = if spec.public_size > 0 {
        let idx = sample_public_indices(base.len(), spec.public_size, derive(seed, Purpose::Split, &[0]))?;
        idx.iter().for_each(|&i| taken[i] = true);
        Some(base.subset(&idx))
    } else {
        None
    };
    let mut rest: Vec<usize> = (0..base.len()).filter(|&i| !taken[i]).collect();
    rest.shuffle(&mut rng_from(derive(seed, Purpose::Split, &[1])));
    let test = base.subset(&rest[..spec.test_size]);
    let pool = base.subset(&rest[spec.test_size..]);

    let sizes = vec![spec.private_size; spec.clients];
    let scheme = match spec.partition {
        PartitionKind::Iid => PartitionScheme::IidSized(sizes),
        PartitionKind::LabelSkew { concentration } => PartitionScheme::LabelSkew { concentration, sizes },
    };
    let shards = partition(
        &pool,
        &PartitionPlan {
            scheme,
            clients: spec.clients,
            seed: derive(seed, Purpose::Partition, &[]),
        },
    )?;

    let clients = shards
        .iter()
        .zip(&spec.client_rates)
        .enumerate()
        .map(|(k, (shard, &mu))| inject_noise(shard, spec.noise, mu, derive(seed, Purpose::Noise, &[k as u64])))
        .collect::<Result<Vec<_>>>()?;

    Ok(Scenario {
        clients,
        public,
        test,
        class_count: base.class_count,
    })
}
