//! Worker-side SAGA state: the per-sample gradient table and the corrected
//! (variance-reduced) messages built from it.
//!
//! Entry j holds the gradient of sample j at the iterate where that sample
//! was last visited; `avg` is the running mean of the table. A corrected
//! message for index j is
//!
//! `v = f'_j(x) - stored[j] + avg`
//!
//! evaluated against the table state *before* the visit, after which entry j
//! is overwritten with the fresh gradient and the average is adjusted
//! incrementally by (new - old) / J.

use crate::error::{Error, Result};
use crate::models::{sample_gradient, Dataset, ModelOracle, WorkerShard};
use crate::vecmath::{add_assign, axpy, scale, sub};

#[derive(Clone, Debug)]
pub struct SagaTable {
    worker_id: usize,
    stored: Vec<Vec<f64>>,
    avg: Vec<f64>,
}

impl SagaTable {
    /// Fill the table with the true per-sample gradients at x0 (so `avg`
    /// starts as the exact local gradient).
    pub fn init(
        oracle: &ModelOracle,
        x0: &[f64],
        data: &Dataset,
        shard: &WorkerShard,
    ) -> Result<Self> {
        if shard.samples.is_empty() {
            return Err(Error::EmptyInput("worker shard"));
        }
        let stored = (0..shard.samples.len())
            .map(|j| sample_gradient(oracle, x0, data, shard, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_stored(shard.worker_id, stored))
    }

    /// Build a table from explicit per-sample gradient entries (each entry
    /// may come from a different historical iterate). Used by tests that
    /// need arbitrary table states.
    pub fn from_stored(worker_id: usize, stored: Vec<Vec<f64>>) -> Self {
        assert!(!stored.is_empty());
        let mut avg = vec![0.0; stored[0].len()];
        for g in &stored {
            add_assign(&mut avg, g);
        }
        scale(&mut avg, 1.0 / stored.len() as f64);
        SagaTable { worker_id, stored, avg }
    }

    pub fn worker_id(&self) -> usize {
        self.worker_id
    }

    pub fn local_size(&self) -> usize {
        self.stored.len()
    }

    pub fn running_average(&self) -> &[f64] {
        &self.avg
    }

    pub fn stored(&self, j: usize) -> &[f64] {
        &self.stored[j]
    }

    /// Exact mean of the stored entries, recomputed from scratch. The run
    /// loop keeps `avg` incrementally; this is the reference for drift
    /// checks and the periodic test-mode refresh.
    pub fn recomputed_average(&self) -> Vec<f64> {
        let mut avg = vec![0.0; self.avg.len()];
        for g in &self.stored {
            add_assign(&mut avg, g);
        }
        scale(&mut avg, 1.0 / self.stored.len() as f64);
        avg
    }

    pub fn refresh_average(&mut self) {
        self.avg = self.recomputed_average();
    }

    /// Corrected gradient for a single drawn index.
    pub fn corrected_gradient(
        &mut self,
        oracle: &ModelOracle,
        x: &[f64],
        data: &Dataset,
        shard: &WorkerShard,
        j: usize,
    ) -> Result<Vec<f64>> {
        self.minibatch_corrected_gradient(oracle, x, data, shard, &[j])
    }

    /// Corrected gradient for a minibatch of distinct indices:
    /// mean_j(f'_j(x) - stored[j]) + avg against the pre-update table, then
    /// every visited entry is refreshed.
    pub fn minibatch_corrected_gradient(
        &mut self,
        oracle: &ModelOracle,
        x: &[f64],
        data: &Dataset,
        shard: &WorkerShard,
        batch: &[usize],
    ) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("minibatch"));
        }
        if shard.worker_id != self.worker_id || shard.samples.len() != self.stored.len() {
            return Err(Error::invalid("SAGA table does not belong to this shard"));
        }
        let j_total = self.stored.len();
        let mut seen = vec![false; j_total];
        for &j in batch {
            if j >= j_total {
                return Err(Error::IndexOutOfRange { index: j, len: j_total });
            }
            if seen[j] {
                return Err(Error::DuplicateIndex(j));
            }
            seen[j] = true;
        }
        let fresh: Vec<Vec<f64>> = batch
            .iter()
            .map(|&j| sample_gradient(oracle, x, data, shard, j))
            .collect::<Result<_>>()?;

        let mut v = self.avg.clone();
        let inv_b = 1.0 / batch.len() as f64;
        for (g, &j) in fresh.iter().zip(batch) {
            axpy(&mut v, inv_b, &sub(g, &self.stored[j]));
        }
        // table update after the message is formed
        let inv_j = 1.0 / j_total as f64;
        for (g, &j) in fresh.into_iter().zip(batch) {
            axpy(&mut self.avg, inv_j, &sub(&g, &self.stored[j]));
            self.stored[j] = g;
        }
        Ok(v)
    }
}
