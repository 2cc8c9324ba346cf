//! The simulation engine: drives worker rounds, applies attacks, aggregates,
//! steps the iterate, and records metrics.
//!
//! Workers are processed in ascending worker-id order everywhere and every
//! random decision draws from a stream keyed by (root seed, purpose, id), so
//! a run is a pure function of its configuration: rerunning a config is
//! reproducible bit for bit and reordering the shard list changes nothing.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::aggregation::{geometric_median, krum, mean_aggregate, resample, GeoMedParams, ResampleParams};
use crate::attacks::{apply, AttackKind, AttackSpec};
use crate::cohort::{Cohort, Message};
use crate::error::{Error, Result};
use crate::models::{
    global_gradient, global_loss, sample_gradient, Dataset, ModelOracle, WorkerShard,
};
use crate::rng::{derive_stream, StreamKind};
use crate::saga::SagaTable;
use crate::vecmath::{add_assign, all_finite, axpy, dist_sq, norm, scale};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    /// Plain averaging of SGD messages (no robustness).
    DistSgd,
    /// Geometric median of SGD messages.
    ByrdSgd,
    /// Resampling pass, then geometric median of SGD messages.
    RsByrdSgd,
    /// Krum selection over SGD messages.
    KrumSgd,
    /// Geometric median of SAGA-corrected messages.
    ByrdSaga,
    /// Resampling pass, then geometric median of SAGA-corrected messages:
    /// the combination this crate exists to study.
    RsByrdSaga,
    /// Model-consensus updates with an l1 penalty; workers transmit models,
    /// not gradients.
    Rsa,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 7] = [
        AlgorithmKind::DistSgd,
        AlgorithmKind::ByrdSgd,
        AlgorithmKind::RsByrdSgd,
        AlgorithmKind::KrumSgd,
        AlgorithmKind::ByrdSaga,
        AlgorithmKind::RsByrdSaga,
        AlgorithmKind::Rsa,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmKind::DistSgd => "dist-sgd",
            AlgorithmKind::ByrdSgd => "byrd-sgd",
            AlgorithmKind::RsByrdSgd => "rs-byrd-sgd",
            AlgorithmKind::KrumSgd => "krum-sgd",
            AlgorithmKind::ByrdSaga => "byrd-saga",
            AlgorithmKind::RsByrdSaga => "rs-byrd-saga",
            AlgorithmKind::Rsa => "rsa",
        }
    }

    pub fn uses_saga(&self) -> bool {
        matches!(self, AlgorithmKind::ByrdSaga | AlgorithmKind::RsByrdSaga)
    }

    pub fn uses_resampling(&self) -> bool {
        matches!(self, AlgorithmKind::RsByrdSgd | AlgorithmKind::RsByrdSaga)
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgorithmKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Step size gamma.
    pub gamma: f64,
    /// Resampling rate s for the rs-* variants.
    pub s: usize,
    /// Worker minibatch size (clamped to the shard size).
    pub batch_size: usize,
    /// Total steps K.
    pub iterations: usize,
    /// Record a metrics row every this many steps.
    pub eval_every: usize,
    /// Root seed; every stream in the run derives from it.
    pub seed: u64,
    /// l1-penalty weight for rsa.
    pub lambda: f64,
    pub geomed: GeoMedParams,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            gamma: 0.1,
            s: 2,
            batch_size: 32,
            iterations: 100,
            eval_every: 1,
            seed: 0,
            lambda: 0.5,
            geomed: GeoMedParams::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be finite and > 0"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if self.s == 0 || self.batch_size == 0 || self.eval_every == 0 || self.iterations == 0 {
            return Err(Error::invalid(
                "s, batch_size, eval_every and iterations must all be >= 1",
            ));
        }
        Ok(())
    }
}

/// Everything fixed about one simulated problem.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub oracle: &'a ModelOracle,
    pub data: &'a Dataset,
    pub shards: &'a [WorkerShard],
    pub cohort: &'a Cohort,
}

impl<'a> Problem<'a> {
    pub fn validate(&self) -> Result<()> {
        self.oracle.check_compat(self.data)?;
        let w = self.cohort.num_workers();
        if self.shards.len() != w {
            return Err(Error::invalid(format!(
                "{} shards for {w} workers",
                self.shards.len()
            )));
        }
        let mut seen = vec![false; w];
        let j = self.shards[0].samples.len();
        for shard in self.shards {
            if shard.worker_id >= w {
                return Err(Error::IndexOutOfRange { index: shard.worker_id, len: w });
            }
            if std::mem::replace(&mut seen[shard.worker_id], true) {
                return Err(Error::invalid(format!("duplicate shard for worker {}", shard.worker_id)));
            }
            if shard.samples.len() != j || j == 0 {
                return Err(Error::invalid("all shards must have the same non-zero size"));
            }
            if let Some(&bad) = shard.samples.iter().find(|&&i| i >= self.data.len()) {
                return Err(Error::IndexOutOfRange { index: bad, len: self.data.len() });
            }
        }
        Ok(())
    }

}

/// One recorded evaluation. Loss and gradient norm are always present;
/// accuracy only for classifiers, squared distance to the optimum only when
/// a closed-form optimum exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist_to_opt_sq: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub rows: Vec<MetricsRow>,
    /// Set when the iterate went non-finite and the run stopped early.
    pub diverged: bool,
    pub final_x: Vec<f64>,
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Starting iterate; defaults to the oracle's initial point.
    pub x0: Option<Vec<f64>>,
    /// Held-out data for loss/accuracy rows (gradient norm and distance to
    /// optimum still come from the training problem).
    pub eval_data: Option<&'a Dataset>,
}

/// Uniform minibatch draw without replacement, returned in ascending order
/// (so a full batch reproduces the local gradient exactly).
pub fn draw_batch(rng: &mut ChaCha8Rng, shard_size: usize, batch_size: usize) -> Vec<usize> {
    let n = batch_size.min(shard_size);
    let mut idx = rand::seq::index::sample(rng, shard_size, n).into_vec();
    idx.sort_unstable();
    idx
}

/// The message a worker sends for a given batch: the minibatch gradient for
/// SGD variants, or the SAGA-corrected gradient when a table is supplied.
pub fn worker_message_for_batch(
    oracle: &ModelOracle,
    x: &[f64],
    data: &Dataset,
    shard: &WorkerShard,
    table: Option<&mut SagaTable>,
    batch: &[usize],
) -> Result<Vec<f64>> {
    match table {
        Some(t) => t.minibatch_corrected_gradient(oracle, x, data, shard, batch),
        None => {
            if batch.is_empty() {
                return Err(Error::EmptyInput("minibatch"));
            }
            let mut acc = vec![0.0; oracle.param_dim()];
            for &j in batch {
                add_assign(&mut acc, &sample_gradient(oracle, x, data, shard, j)?);
            }
            scale(&mut acc, 1.0 / batch.len() as f64);
            Ok(acc)
        }
    }
}

/// One central update for the gradient-aggregation algorithms.
pub fn central_step(
    kind: AlgorithmKind,
    x: &[f64],
    messages: &[Vec<f64>],
    config: &EngineConfig,
    num_byzantine: usize,
    resample_rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let aggregate = match kind {
        AlgorithmKind::DistSgd => mean_aggregate(messages)?,
        AlgorithmKind::ByrdSgd | AlgorithmKind::ByrdSaga => {
            geometric_median(messages, &config.geomed)?.point
        }
        AlgorithmKind::RsByrdSgd | AlgorithmKind::RsByrdSaga => {
            let mixed = resample(messages, &ResampleParams { s: config.s }, resample_rng)?;
            geometric_median(&mixed, &config.geomed)?.point
        }
        AlgorithmKind::KrumSgd => krum(messages, num_byzantine)?,
        AlgorithmKind::Rsa => {
            return Err(Error::invalid("rsa does not aggregate gradient messages"))
        }
    };
    let mut next = x.to_vec();
    axpy(&mut next, -config.gamma, &aggregate);
    Ok(next)
}

fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// rsa central update: x0 <- x0 - gamma * lambda * sum_w sign(x0 - x_w),
/// over the received (possibly attacked) worker models.
pub fn rsa_central_update(
    central: &[f64],
    received: &[Vec<f64>],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let mut step = vec![0.0; central.len()];
    for model in received {
        for (s, (c, m)) in step.iter_mut().zip(central.iter().zip(model)) {
            *s += sign(c - m);
        }
    }
    let mut next = central.to_vec();
    axpy(&mut next, -gamma * lambda, &step);
    next
}

/// rsa worker update: x_w <- x_w - gamma * (grad + lambda * sign(x_w - x0)).
pub fn rsa_worker_update(
    model: &[f64],
    grad: &[f64],
    central: &[f64],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let mut next = model.to_vec();
    for ((m, g), c) in next.iter_mut().zip(grad).zip(central) {
        *m -= gamma * (g + lambda * sign(*m - c));
    }
    next
}

struct WorkerState<'a> {
    shard: &'a WorkerShard,
    rng: ChaCha8Rng,
    table: Option<SagaTable>,
    /// Local model, rsa only.
    model: Vec<f64>,
}

/// Run `iterations` steps of the chosen algorithm and record metrics every
/// `eval_every` steps (after the step; a K-step run with eval_every = e
/// yields floor(K/e) rows).
pub fn run(
    kind: AlgorithmKind,
    config: &EngineConfig,
    problem: &Problem<'_>,
    attack: &AttackKind,
    options: &RunOptions<'_>,
) -> Result<RunTrace> {
    config.validate()?;
    problem.validate()?;
    warn_if_intolerable(kind, config, problem.cohort);

    let oracle = problem.oracle;
    let mut x = match &options.x0 {
        Some(x0) => {
            if x0.len() != oracle.param_dim() {
                return Err(Error::DimensionMismatch {
                    expected: oracle.param_dim(),
                    got: x0.len(),
                });
            }
            if !all_finite(x0) {
                return Err(Error::NonFinite("initial iterate"));
            }
            x0.clone()
        }
        None => oracle.initial_point(&mut derive_stream(config.seed, StreamKind::Init, 0)),
    };
    // ascending worker-id order is canonical: worker processing, evaluation
    // sums and the closed-form optimum all use it, so permuting the caller's
    // shard list cannot perturb even the last bit of any result
    let mut sorted = problem.shards.to_vec();
    sorted.sort_by_key(|s| s.worker_id);
    let x_star = oracle.closed_form_optimum(problem.data, &sorted, problem.cohort);

    let mut workers: Vec<WorkerState> = sorted
        .iter()
        .map(|shard| {
            let table = if kind.uses_saga() {
                Some(SagaTable::init(oracle, &x, problem.data, shard)?)
            } else {
                None
            };
            Ok(WorkerState {
                shard,
                rng: derive_stream(config.seed, StreamKind::Worker, shard.worker_id as u64),
                table,
                model: if kind == AlgorithmKind::Rsa { x.clone() } else { Vec::new() },
            })
        })
        .collect::<Result<_>>()?;

    let attack_spec = AttackSpec {
        kind: attack.clone(),
        byzantine: problem.cohort.byzantine_ids().collect(),
    };
    let mut attack_rng = derive_stream(config.seed, StreamKind::Attack, 0);
    let mut resample_rng = derive_stream(config.seed, StreamKind::Resample, 0);

    let mut rows = Vec::new();
    let mut diverged = false;
    for k in 1..=config.iterations {
        if kind == AlgorithmKind::Rsa {
            // workers transmit their current models
            let transmitted: Vec<Message> = workers
                .iter()
                .map(|w| Message::honest(w.shard.worker_id, w.model.clone()))
                .collect();
            let received = apply(&attack_spec, &transmitted, &mut attack_rng)?;
            let central_next = rsa_central_update(
                &x,
                &received.iter().map(|m| m.values.clone()).collect::<Vec<_>>(),
                config.gamma,
                config.lambda,
            );
            // every worker (Byzantine included) advances its true model
            // against the old central iterate
            for w in workers.iter_mut() {
                let batch = draw_batch(&mut w.rng, w.shard.samples.len(), config.batch_size);
                let grad = worker_message_for_batch(
                    oracle,
                    &w.model.clone(),
                    problem.data,
                    w.shard,
                    None,
                    &batch,
                )?;
                w.model = rsa_worker_update(&w.model, &grad, &x, config.gamma, config.lambda);
            }
            x = central_next;
        } else {
            let mut messages: Vec<Message> = Vec::with_capacity(workers.len());
            for w in workers.iter_mut() {
                let batch = draw_batch(&mut w.rng, w.shard.samples.len(), config.batch_size);
                let values = worker_message_for_batch(
                    oracle,
                    &x,
                    problem.data,
                    w.shard,
                    w.table.as_mut(),
                    &batch,
                )?;
                messages.push(Message { worker_id: w.shard.worker_id, values, honest: true });
            }
            let attacked = apply(&attack_spec, &messages, &mut attack_rng)?;
            let values: Vec<Vec<f64>> = attacked.into_iter().map(|m| m.values).collect();
            x = central_step(
                kind,
                &x,
                &values,
                config,
                problem.cohort.num_byzantine(),
                &mut resample_rng,
            )?;
        }
        if !all_finite(&x) {
            log::warn!("{kind} diverged at step {k}; stopping early");
            diverged = true;
            break;
        }
        if k % config.eval_every == 0 {
            rows.push(evaluate(k, &x, problem, &sorted, options, x_star.as_deref())?);
        }
    }
    Ok(RunTrace { rows, diverged, final_x: x })
}

fn warn_if_intolerable(kind: AlgorithmKind, config: &EngineConfig, cohort: &Cohort) {
    let w = cohort.num_workers();
    let b = cohort.num_byzantine();
    let over = if kind.uses_resampling() {
        2 * config.s * b >= w
    } else if matches!(kind, AlgorithmKind::ByrdSgd | AlgorithmKind::ByrdSaga) {
        2 * b >= w
    } else {
        false
    };
    if over {
        log::warn!(
            "{kind}: B = {b} exceeds the tolerable Byzantine budget for W = {w}\
             {}; the robustness guarantees do not apply",
            if kind.uses_resampling() { format!(" at s = {}", config.s) } else { String::new() }
        );
    }
}

fn evaluate(
    k: usize,
    x: &[f64],
    problem: &Problem<'_>,
    shards: &[WorkerShard],
    options: &RunOptions<'_>,
    x_star: Option<&[f64]>,
) -> Result<MetricsRow> {
    let oracle = problem.oracle;
    let (loss, accuracy) = match options.eval_data {
        Some(eval) => {
            let mut loss = 0.0;
            let mut correct = 0usize;
            for s in eval.samples() {
                loss += oracle.sample_loss(x, s)?;
                if let Some(pred) = oracle.predict(x, &s.features) {
                    if pred == s.label as usize {
                        correct += 1;
                    }
                }
            }
            let acc = oracle
                .is_classifier()
                .then(|| correct as f64 / eval.len() as f64);
            (loss / eval.len() as f64, acc)
        }
        None => {
            let loss = global_loss(oracle, x, problem.data, shards, problem.cohort)?;
            let acc = if oracle.is_classifier() {
                let mut correct = 0usize;
                let mut total = 0usize;
                for shard in shards.iter().filter(|s| !problem.cohort.is_byzantine(s.worker_id)) {
                    for &i in &shard.samples {
                        let s = problem.data.sample(i)?;
                        if oracle.predict(x, &s.features) == Some(s.label as usize) {
                            correct += 1;
                        }
                        total += 1;
                    }
                }
                Some(correct as f64 / total as f64)
            } else {
                None
            };
            (loss, acc)
        }
    };
    let grad = global_gradient(oracle, x, problem.data, shards, problem.cohort)?;
    Ok(MetricsRow {
        k,
        loss,
        accuracy,
        dist_to_opt_sq: x_star.map(|xs| dist_sq(x, xs)),
        grad_norm: norm(&grad),
    })
}
