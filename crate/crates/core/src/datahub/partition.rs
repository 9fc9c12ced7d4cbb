use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Shuffle, then split into `K` equal shards (remainder unused).
    IidEqual,
    /// Shuffle, then cut consecutive shards of the given sizes.
    IidSized(Vec<usize>),
    /// Each client draws a class mix from `Dirichlet(concentration)` and fills
    /// its shard by sampling classes from that mix. Empty `sizes` means `N / K` each.
    LabelSkew { concentration: f64, sizes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub clients: usize,
    pub seed: u64,
}

impl PartitionPlan {
    fn sizes(&self, n: usize) -> Result<Vec<usize>> {
        let sizes = match &self.scheme {
            PartitionScheme::IidEqual => vec![n / self.clients; self.clients],
            PartitionScheme::IidSized(s) => s.clone(),
            PartitionScheme::LabelSkew { sizes, .. } if sizes.is_empty() => vec![n / self.clients; self.clients],
            PartitionScheme::LabelSkew { sizes, .. } => sizes.clone(),
        };
        if sizes.len() != self.clients {
            return Err(Error::config(format!("{} shard sizes for {} clients", sizes.len(), self.clients)));
        }
        let total: usize = sizes.iter().sum();
        if total > n {
            return Err(Error::config(format!("shard sizes sum to {total}, dataset has {n} records")));
        }
        if sizes.contains(&0) {
            return Err(Error::config("empty client shard"));
        }
        Ok(sizes)
    }
}

/// Disjoint per-client index sets, each sorted ascending.
pub fn partition_indices(ds: &Dataset, plan: &PartitionPlan) -> Result<Vec<Vec<usize>>> {
    if plan.clients == 0 {
        return Err(Error::config("partition needs at least one client"));
    }
    let n = ds.len();
    let sizes = plan.sizes(n)?;
    let mut rng = rng_from(plan.seed);

    let mut shards = match &plan.scheme {
        PartitionScheme::IidEqual | PartitionScheme::IidSized(_) => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut out = Vec::with_capacity(sizes.len());
            let mut start = 0;
            for s in &sizes {
                out.push(idx[start..start + s].to_vec());
                start += s;
            }
            out
        }
        PartitionScheme::LabelSkew { concentration, .. } => label_skew(ds, &sizes, *concentration, &mut rng)?,
    };
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

fn label_skew<R: Rng>(ds: &Dataset, sizes: &[usize], alpha: f64, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("concentration must be positive, got {alpha}")));
    }
    let c = ds.class_count;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in ds.labels.iter().enumerate() {
        pools[l].push(i);
    }
    for p in &mut pools {
        p.shuffle(rng);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::config(e.to_string()))?;

    let mut shards = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut mix: Vec<f64> = (0..c).map(|_| gamma.sample(rng)).collect();
        let total: f64 = mix.iter().sum();
        if total > 0.0 {
            mix.iter_mut().for_each(|m| *m /= total);
        } else {
            // every draw underflowed (tiny concentration): put all mass on one class
            mix = vec![0.0; c];
            mix[rng.random_range(0..c)] = 1.0;
        }
        let mut shard = Vec::with_capacity(size);
        for _ in 0..size {
            let live: f64 = mix.iter().zip(&pools).filter(|(_, p)| !p.is_empty()).map(|(m, _)| m).sum();
            let class = if live > 0.0 {
                let mut u = rng.random::<f64>() * live;
                let mut pick = None;
                for (k, (m, p)) in mix.iter().zip(&pools).enumerate() {
                    if p.is_empty() {
                        continue;
                    }
                    pick = Some(k);
                    if u < *m {
                        break;
                    }
                    u -= m;
                }
                pick
            } else {
                // mix only covers exhausted classes: fall back to any remaining class
                pools.iter().position(|p| !p.is_empty())
            };
            let class = class.ok_or_else(|| Error::config("ran out of records while partitioning"))?;
            shard.push(pools[class].pop().expect("non-empty pool"));
        }
        shards.push(shard);
    }
    Ok(shards)
}

pub fn partition(ds: &Dataset, plan: &PartitionPlan) -> Result<Vec<Dataset>> {
    Ok(partition_indices(ds, plan)?.iter().map(|idx| ds.subset(idx)).collect())
}
