//! Statistical checks of partitioning and label-noise injection across seeds.

use std::collections::HashSet;

use hetfed::datahub::{gen_blobs, inject_pairflip, inject_symmetric, partition_indices, Dataset, PartitionPlan, PartitionScheme};
use hetfed::nnkernel::Matrix;
use proptest::prelude::*;

/// 0.99 quantile of chi-squared with 12 degrees of freedom.
const CHI2_12_Q99: f64 = 26.217;

/// Pearson statistic of the client x class contingency table.
fn chi2(ds: &Dataset, shards: &[Vec<usize>]) -> f64 {
    let c = ds.class_count;
    let table: Vec<Vec<f64>> = shards
        .iter()
        .map(|s| ds.subset(s).class_histogram().iter().map(|&v| v as f64).collect())
        .collect();
    let total: f64 = table.iter().flatten().sum();
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..c).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut stat = 0.0;
    for (i, r) in table.iter().enumerate() {
        for j in 0..c {
            let expected = row[i] * col[j] / total;
            if expected > 0.0 {
                stat += (r[j] - expected).powi(2) / expected;
            }
        }
    }
    stat
}

fn labelled(n: usize, classes: usize) -> Dataset {
    Dataset::new(Matrix::zeros(n, 1), (0..n).map(|i| i % classes).collect(), classes).unwrap()
}

#[test]
fn iid_shards_pass_homogeneity_and_skewed_shards_fail() {
    // 4 clients x 5 classes -> 12 degrees of freedom
    let ds = gen_blobs(5, 2, 200, 0.3, 1).unwrap();
    let mut iid_rejections = 0;
    let mut skew_rejections = 0;
    for seed in 0..50 {
        let iid = PartitionPlan {
            scheme: PartitionScheme::IidEqual,
            clients: 4,
            seed,
        };
        if chi2(&ds, &partition_indices(&ds, &iid).unwrap()) > CHI2_12_Q99 {
            iid_rejections += 1;
        }
        let skew = PartitionPlan {
            scheme: PartitionScheme::LabelSkew {
                concentration: 0.1,
                sizes: vec![200; 4],
            },
            clients: 4,
            seed,
        };
        if chi2(&ds, &partition_indices(&ds, &skew).unwrap()) > CHI2_12_Q99 {
            skew_rejections += 1;
        }
    }
    // about one rejection in 100 is expected under the null
    assert!(iid_rejections <= 4, "{iid_rejections}");
    assert!(skew_rejections >= 45, "{skew_rejections}");
}

#[test]
fn symmetric_noise_statistics_across_seeds() {
    let ds = labelled(100_000, 10);
    for seed in 0..10 {
        let noisy = inject_symmetric(&ds, 0.2, seed).unwrap();
        let frac = noisy.flip_fraction();
        assert!((0.195..=0.205).contains(&frac), "seed {seed}: {frac}");
        let mut dest = [0usize; 10];
        for (&y, &z) in ds.labels.iter().zip(&noisy.noisy_labels) {
            if y != z {
                dest[z] += 1;
            }
        }
        let flips: f64 = dest.iter().sum::<usize>() as f64;
        for &d in &dest {
            let share = d as f64 / flips;
            assert!((share - 0.1).abs() <= 0.01, "seed {seed}: {dest:?}");
        }
    }
}

#[test]
fn pairflip_statistics_across_seeds() {
    let ds = labelled(100_000, 10);
    for seed in 0..10 {
        let noisy = inject_pairflip(&ds, 0.2, seed).unwrap();
        assert!((0.195..=0.205).contains(&noisy.flip_fraction()));
        for ((&y, &z), &f) in ds.labels.iter().zip(&noisy.noisy_labels).zip(&noisy.flipped) {
            assert_eq!(f, y != z);
            if f {
                assert_eq!(z, (y + 1) % 10);
            }
        }
    }
}

proptest! {
    #[test]
    fn partitions_are_disjoint_with_requested_sizes(
        clients in 1usize..6,
        per in 1usize..20,
        skew in proptest::bool::ANY,
        seed in 0u64..1000,
    ) {
        let ds = gen_blobs(3, 2, 40, 0.3, seed).unwrap();
        let scheme = if skew {
            PartitionScheme::LabelSkew { concentration: 0.5, sizes: vec![per; clients] }
        } else {
            PartitionScheme::IidSized(vec![per; clients])
        };
        let shards = partition_indices(&ds, &PartitionPlan { scheme, clients, seed }).unwrap();
        prop_assert_eq!(shards.len(), clients);
        let mut seen = HashSet::new();
        for s in &shards {
            prop_assert_eq!(s.len(), per);
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            for &i in s {
                prop_assert!(seen.insert(i));
            }
        }
    }
}
