//! Problem definitions: datasets, synthetic generators, per-worker shards,
//! and the loss/gradient oracles.

mod dataset;
mod oracle;
mod partition;

pub use dataset::{synthetic_blobs, BlobSpec, Dataset, Sample};
pub use oracle::{
    global_gradient, global_loss, local_gradient, local_loss, measure_variations,
    sample_gradient, ModelOracle, VariationReport,
};
pub use partition::{partition, Partition, PartitionScheme, WorkerShard};
