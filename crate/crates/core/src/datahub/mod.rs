//! Datasets, ingestion, client partitioning and label-noise injection.

mod blobs;
mod ingest;
mod noise;
mod partition;
mod scenario;

pub use blobs::gen_blobs;
pub use ingest::{load_csv, load_idx, CsvSchema};
pub use noise::{inject_noise, inject_pairflip, inject_symmetric, NoiseKind, NoiseSpec, NoisyDataset};
pub use partition::{partition, partition_indices, PartitionPlan, PartitionScheme};
pub use scenario::{build_scenario, sample_public, sample_public_indices, DataSource, DataSpec, PartitionKind, Scenario};

use crate::error::{Error, Result};
use crate::nnkernel::Matrix;

/// Feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::config(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::config("dataset is empty"));
        }
        if class_count < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {class_count}")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::config(format!("label {bad} out of range for {class_count} classes")));
        }
        if !features.is_finite() {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    /// Rows `idx` in the given order. Panics on out-of-range indices.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Per-class counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        histogram(&self.labels, self.class_count)
    }
}

pub(crate) fn histogram(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for &l in labels {
        h[l] += 1;
    }
    h
}

/// One-hot rows for `labels`.
pub fn one_hot_matrix(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        m.row_mut(i)[l] = 1.0;
    }
    m
}
