//! Worker cohort bookkeeping: who participates, who is Byzantine, and the
//! message unit exchanged with the central node.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// W workers, of which the listed ids behave adversarially. The regular set
/// is everyone else; the analysis constants are all functions of (W, B).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cohort {
    workers: usize,
    byzantine: BTreeSet<usize>,
}

impl Cohort {
    pub fn new(workers: usize, byzantine: impl IntoIterator<Item = usize>) -> Result<Self> {
        if workers == 0 {
            return Err(Error::invalid("cohort needs at least one worker"));
        }
        let byzantine: BTreeSet<usize> = byzantine.into_iter().collect();
        if let Some(&bad) = byzantine.iter().find(|&&id| id >= workers) {
            return Err(Error::IndexOutOfRange { index: bad, len: workers });
        }
        if byzantine.len() >= workers {
            return Err(Error::invalid("at least one worker must be regular"));
        }
        Ok(Cohort { workers, byzantine })
    }

    pub fn all_regular(workers: usize) -> Result<Self> {
        Cohort::new(workers, [])
    }

    pub fn num_workers(&self) -> usize {
        self.workers
    }

    pub fn num_byzantine(&self) -> usize {
        self.byzantine.len()
    }

    pub fn num_regular(&self) -> usize {
        self.workers - self.byzantine.len()
    }

    /// Byzantine fraction B/W.
    pub fn alpha(&self) -> f64 {
        self.byzantine.len() as f64 / self.workers as f64
    }

    pub fn is_byzantine(&self, id: usize) -> bool {
        self.byzantine.contains(&id)
    }

    pub fn byzantine_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.byzantine.iter().copied()
    }

    pub fn regular_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.workers).filter(|id| !self.byzantine.contains(id))
    }
}

/// One worker→center transmission. `honest` is instrumentation only: attacks
/// clear it on the entries they replace so traces can report contamination.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub worker_id: usize,
    pub values: Vec<f64>,
    pub honest: bool,
}

impl Message {
    pub fn honest(worker_id: usize, values: Vec<f64>) -> Self {
        Message { worker_id, values, honest: true }
    }
}
