//! Dataset partitioning into per-worker shards.
//!
//! Both schemes give every worker the same shard size J by dropping excess
//! samples deterministically (largest indices first, per class for the
//! sharded scheme) before any seeded shuffling, so the retained set does not
//! depend on the seed, only the assignment does.

use crate::error::{Error, Result};
use crate::models::dataset::Dataset;
use crate::rng::{derive_stream, StreamKind};
use rand::seq::SliceRandom;

#[derive(Clone, Debug, PartialEq)]
pub enum PartitionScheme {
    /// Seeded global shuffle, dealt out evenly: shards are i.i.d. draws from
    /// the dataset.
    IidUniform,
    /// Each class's samples go to a dedicated group of `workers_per_class`
    /// workers (workers `c*g..(c+1)*g` serve class `c`), the maximally
    /// heterogeneous split. Requires `workers == g * num_classes`.
    ClassSharded { workers_per_class: usize },
}

/// Index list for one worker. Indices refer to the dataset passed to
/// [`partition`]; J = `samples.len()` is identical across workers.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerShard {
    pub worker_id: usize,
    pub samples: Vec<usize>,
}

impl WorkerShard {
    pub fn local_size(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Clone, Debug)]
pub struct Partition {
    pub shards: Vec<WorkerShard>,
    /// Samples dropped to equalize shard sizes.
    pub dropped: usize,
}

pub fn partition(
    data: &Dataset,
    workers: usize,
    scheme: &PartitionScheme,
    seed: u64,
) -> Result<Partition> {
    if workers == 0 {
        return Err(Error::invalid("partition needs at least one worker"));
    }
    let mut rng = derive_stream(seed, StreamKind::Partition, 0);
    let out = match scheme {
        PartitionScheme::IidUniform => {
            let j = data.len() / workers;
            if j == 0 {
                return Err(Error::invalid(format!(
                    "{} samples cannot cover {workers} workers",
                    data.len()
                )));
            }
            let mut retained: Vec<usize> = (0..workers * j).collect();
            retained.shuffle(&mut rng);
            let shards = retained
                .chunks(j)
                .enumerate()
                .map(|(worker_id, chunk)| WorkerShard { worker_id, samples: chunk.to_vec() })
                .collect();
            Partition { shards, dropped: data.len() - workers * j }
        }
        PartitionScheme::ClassSharded { workers_per_class } => {
            let g = *workers_per_class;
            let classes = data.num_classes();
            if g == 0 {
                return Err(Error::invalid("workers_per_class must be >= 1"));
            }
            if classes == 0 {
                return Err(Error::invalid("class-sharded partition needs class labels"));
            }
            if workers != g * classes {
                return Err(Error::invalid(format!(
                    "class-sharded needs workers == workers_per_class * num_classes \
                     ({workers} != {g} * {classes})"
                )));
            }
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for i in 0..data.len() {
                by_class[data.class(i)].push(i); // ascending index order
            }
            let j = by_class.iter().map(|c| c.len() / g).min().unwrap();
            if j == 0 {
                return Err(Error::invalid(
                    "some class is too small to cover its worker group",
                ));
            }
            let mut dropped = 0;
            let mut shards = Vec::with_capacity(workers);
            for (class, indices) in by_class.iter().enumerate() {
                dropped += indices.len() - g * j;
                let mut retained: Vec<usize> = indices[..g * j].to_vec();
                retained.shuffle(&mut rng);
                for (t, chunk) in retained.chunks(j).enumerate() {
                    shards.push(WorkerShard {
                        worker_id: class * g + t,
                        samples: chunk.to_vec(),
                    });
                }
            }
            Partition { shards, dropped }
        }
    };
    if out.dropped > 0 {
        log::info!("partition dropped {} samples to equalize shard sizes", out.dropped);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::dataset::{synthetic_blobs, BlobSpec, Sample};

    fn tiny_data(n: usize, classes: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample { features: vec![i as f64], label: (i % classes) as f64 })
            .collect();
        Dataset::new(samples, classes).unwrap()
    }

    #[test]
    fn iid_thirty_samples_thirty_workers() {
        let data = tiny_data(30, 3);
        let p = partition(&data, 30, &PartitionScheme::IidUniform, 0).unwrap();
        assert_eq!(p.shards.len(), 30);
        assert!(p.shards.iter().all(|s| s.local_size() == 1));
        assert_eq!(p.dropped, 0);
        let mut seen: Vec<usize> = p.shards.iter().flat_map(|s| s.samples.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn iid_drops_excess_largest_indices() {
        let data = tiny_data(32, 2);
        let p = partition(&data, 30, &PartitionScheme::IidUniform, 9).unwrap();
        assert_eq!(p.dropped, 2);
        let seen: std::collections::BTreeSet<usize> =
            p.shards.iter().flat_map(|s| s.samples.clone()).collect();
        assert!(!seen.contains(&30) && !seen.contains(&31));
    }

    #[test]
    fn class_sharded_ten_classes_three_workers_each() {
        let spec = BlobSpec {
            classes: 10,
            per_class: 90,
            feature_dim: 2,
            centers: None,
            center_spread: 3.0,
            noise: 0.3,
        };
        let data = synthetic_blobs(&spec, 5).unwrap();
        let p = partition(
            &data,
            30,
            &PartitionScheme::ClassSharded { workers_per_class: 3 },
            1,
        )
        .unwrap();
        assert_eq!(p.shards.len(), 30);
        for shard in &p.shards {
            assert_eq!(shard.local_size(), 30);
            let class = shard.worker_id / 3;
            assert!(
                shard.samples.iter().all(|&i| data.class(i) == class),
                "worker {} holds out-of-class samples",
                shard.worker_id
            );
        }
    }

    #[test]
    fn class_sharded_rejects_mismatched_worker_count() {
        let data = tiny_data(40, 4);
        let err = partition(
            &data,
            30,
            &PartitionScheme::ClassSharded { workers_per_class: 3 },
            0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn same_seed_same_shards_different_seed_differs() {
        let data = tiny_data(60, 3);
        let scheme = PartitionScheme::IidUniform;
        let a = partition(&data, 6, &scheme, 7).unwrap();
        let b = partition(&data, 6, &scheme, 7).unwrap();
        let c = partition(&data, 6, &scheme, 8).unwrap();
        assert_eq!(a.shards, b.shards);
        assert_ne!(a.shards, c.shards);
    }
}
