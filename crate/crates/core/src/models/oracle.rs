//! Loss/gradient oracles for the three benchmark models, plus the gradient
//! aggregates (per-sample, per-worker, global) and the heterogeneity
//! measurements the robustness bounds are stated in terms of.
//!
//! Parameters are always a flat `Vec<f64>`:
//! - quadratic: x itself, `f_j(x) = 1/2 * sum_i q_i (x_i - a_{j,i})^2` where
//!   `a_j` is the sample's feature vector (labels ignored, Hessian diag(q)),
//! - softmax: class weight rows then biases, `[W (C x n), b (C)]`,
//! - mlp2-tanh: two tanh hidden layers then a softmax cross-entropy head,
//!   `[W1, b1, W2, b2, W3, b3]`, each weight block row-major.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::models::dataset::{Dataset, Sample};
use crate::models::partition::WorkerShard;
use crate::vecmath::{add_assign, all_finite, axpy, dist_sq, scale};

#[derive(Clone, Debug, PartialEq)]
pub enum ModelOracle {
    Quadratic { curvature: Vec<f64> },
    Softmax { input_dim: usize, classes: usize },
    Mlp2Tanh { input_dim: usize, classes: usize, hidden: (usize, usize) },
}

impl ModelOracle {
    /// Quadratic with unit curvature: smoothness = strong convexity = 1.
    pub fn quadratic_isotropic(dim: usize) -> Result<Self> {
        Self::quadratic(vec![1.0; dim])
    }

    pub fn quadratic(curvature: Vec<f64>) -> Result<Self> {
        if curvature.is_empty() {
            return Err(Error::EmptyInput("curvature"));
        }
        if !curvature.iter().all(|&q| q.is_finite() && q > 0.0) {
            return Err(Error::invalid("curvature entries must be finite and > 0"));
        }
        Ok(ModelOracle::Quadratic { curvature })
    }

    pub fn softmax(input_dim: usize, classes: usize) -> Result<Self> {
        if input_dim == 0 || classes < 2 {
            return Err(Error::invalid("softmax needs input_dim >= 1 and classes >= 2"));
        }
        Ok(ModelOracle::Softmax { input_dim, classes })
    }

    pub fn mlp2_tanh(input_dim: usize, classes: usize, hidden: (usize, usize)) -> Result<Self> {
        if input_dim == 0 || classes < 2 || hidden.0 == 0 || hidden.1 == 0 {
            return Err(Error::invalid(
                "mlp2-tanh needs input_dim >= 1, classes >= 2 and non-empty hidden layers",
            ));
        }
        Ok(ModelOracle::Mlp2Tanh { input_dim, classes, hidden })
    }

    pub fn param_dim(&self) -> usize {
        match self {
            ModelOracle::Quadratic { curvature } => curvature.len(),
            ModelOracle::Softmax { input_dim, classes } => classes * (input_dim + 1),
            ModelOracle::Mlp2Tanh { input_dim, classes, hidden: (h1, h2) } => {
                h1 * (input_dim + 1) + h2 * (h1 + 1) + classes * (h2 + 1)
            }
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, ModelOracle::Quadratic { .. })
    }

    /// Smoothness constant L of every `f_{w,j}`, where known.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            ModelOracle::Quadratic { curvature } => {
                curvature.iter().copied().fold(None, |m: Option<f64>, q| {
                    Some(m.map_or(q, |m| m.max(q)))
                })
            }
            _ => None,
        }
    }

    /// Strong-convexity constant mu, where known.
    pub fn strong_convexity(&self) -> Option<f64> {
        match self {
            ModelOracle::Quadratic { curvature } => {
                curvature.iter().copied().fold(None, |m: Option<f64>, q| {
                    Some(m.map_or(q, |m| m.min(q)))
                })
            }
            _ => None,
        }
    }

    pub fn check_compat(&self, data: &Dataset) -> Result<()> {
        let expect_dim = match self {
            ModelOracle::Quadratic { curvature } => curvature.len(),
            ModelOracle::Softmax { input_dim, classes }
            | ModelOracle::Mlp2Tanh { input_dim, classes, .. } => {
                if data.num_classes() != *classes {
                    return Err(Error::invalid(format!(
                        "model expects {} classes, dataset declares {}",
                        classes,
                        data.num_classes()
                    )));
                }
                *input_dim
            }
        };
        if data.feature_dim() != expect_dim {
            return Err(Error::DimensionMismatch {
                expected: expect_dim,
                got: data.feature_dim(),
            });
        }
        Ok(())
    }

    /// Default initial iterate. Zeros for the convex models; the mlp draws
    /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights (biases zero),
    /// consuming the stream layer by layer, row-major.
    pub fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            ModelOracle::Quadratic { .. } | ModelOracle::Softmax { .. } => {
                vec![0.0; self.param_dim()]
            }
            ModelOracle::Mlp2Tanh { input_dim, classes, hidden: (h1, h2) } => {
                let mut x = vec![0.0; self.param_dim()];
                let layers = [(*h1, *input_dim), (*h2, *h1), (*classes, *h2)];
                let mut offset = 0;
                for (rows, fan_in) in layers {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    for w in x[offset..offset + rows * fan_in].iter_mut() {
                        *w = rng.gen_range(-a..=a);
                    }
                    offset += rows * (fan_in + 1); // skip the zero biases
                }
                x
            }
        }
    }

    pub fn sample_loss(&self, x: &[f64], sample: &Sample) -> Result<f64> {
        self.validate_x(x)?;
        Ok(match self {
            ModelOracle::Quadratic { curvature } => {
                0.5 * x
                    .iter()
                    .zip(&sample.features)
                    .zip(curvature)
                    .map(|((xi, ai), qi)| qi * (xi - ai) * (xi - ai))
                    .sum::<f64>()
            }
            ModelOracle::Softmax { .. } => {
                let logits = self.logits(x, &sample.features);
                cross_entropy(&logits, sample.label as usize)
            }
            ModelOracle::Mlp2Tanh { .. } => {
                let fwd = self.mlp_forward(x, &sample.features);
                cross_entropy(&fwd.logits, sample.label as usize)
            }
        })
    }

    pub fn sample_gradient_at(&self, x: &[f64], sample: &Sample) -> Result<Vec<f64>> {
        self.validate_x(x)?;
        Ok(match self {
            ModelOracle::Quadratic { curvature } => x
                .iter()
                .zip(&sample.features)
                .zip(curvature)
                .map(|((xi, ai), qi)| qi * (xi - ai))
                .collect(),
            ModelOracle::Softmax { input_dim, classes } => {
                let n = *input_dim;
                let logits = self.logits(x, &sample.features);
                let mut gz = softmax_probs(&logits);
                gz[sample.label as usize] -= 1.0;
                let mut g = vec![0.0; self.param_dim()];
                for c in 0..*classes {
                    axpy(&mut g[c * n..(c + 1) * n], gz[c], &sample.features);
                    g[classes * n + c] = gz[c];
                }
                g
            }
            ModelOracle::Mlp2Tanh { .. } => self.mlp_backward(x, sample),
        })
    }

    /// Predicted class (classifiers only): argmax of the logits, lowest
    /// index on ties.
    pub fn predict(&self, x: &[f64], features: &[f64]) -> Option<usize> {
        let logits = match self {
            ModelOracle::Quadratic { .. } => return None,
            ModelOracle::Softmax { .. } => self.logits(x, features),
            ModelOracle::Mlp2Tanh { .. } => self.mlp_forward(x, features).logits,
        };
        let mut best = 0;
        for (c, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = c;
            }
        }
        Some(best)
    }

    /// Exact minimizer of the regular-worker average objective, where one is
    /// known in closed form (quadratic: the grand mean of the regular
    /// workers' feature vectors, independent of the curvature).
    pub fn closed_form_optimum(
        &self,
        data: &Dataset,
        shards: &[WorkerShard],
        cohort: &Cohort,
    ) -> Option<Vec<f64>> {
        match self {
            ModelOracle::Quadratic { curvature } => {
                let mut acc = vec![0.0; curvature.len()];
                let mut count = 0usize;
                for shard in shards.iter().filter(|s| !cohort.is_byzantine(s.worker_id)) {
                    for &i in &shard.samples {
                        add_assign(&mut acc, &data.samples()[i].features);
                        count += 1;
                    }
                }
                if count == 0 {
                    return None;
                }
                scale(&mut acc, 1.0 / count as f64);
                Some(acc)
            }
            _ => None,
        }
    }

    fn validate_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.param_dim() {
            return Err(Error::DimensionMismatch { expected: self.param_dim(), got: x.len() });
        }
        if !all_finite(x) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(())
    }

    fn logits(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let ModelOracle::Softmax { input_dim, classes } = self else {
            unreachable!("logits() is the softmax head");
        };
        let n = *input_dim;
        (0..*classes)
            .map(|c| {
                x[c * n..(c + 1) * n]
                    .iter()
                    .zip(u)
                    .map(|(w, ui)| w * ui)
                    .sum::<f64>()
                    + x[classes * n + c]
            })
            .collect()
    }

    fn mlp_forward(&self, x: &[f64], u: &[f64]) -> MlpForward {
        let ModelOracle::Mlp2Tanh { input_dim, classes, hidden: (h1, h2) } = self else {
            unreachable!("mlp_forward() is the mlp head");
        };
        let (n, h1, h2, c) = (*input_dim, *h1, *h2, *classes);
        let (w1, b1) = (0, h1 * n);
        let (w2, b2) = (b1 + h1, b1 + h1 + h2 * h1);
        let (w3, b3) = (b2 + h2, b2 + h2 + c * h2);
        let a1: Vec<f64> = (0..h1)
            .map(|r| {
                (x[w1 + r * n..w1 + (r + 1) * n]
                    .iter()
                    .zip(u)
                    .map(|(w, ui)| w * ui)
                    .sum::<f64>()
                    + x[b1 + r])
                    .tanh()
            })
            .collect();
        let a2: Vec<f64> = (0..h2)
            .map(|r| {
                (x[w2 + r * h1..w2 + (r + 1) * h1]
                    .iter()
                    .zip(&a1)
                    .map(|(w, ai)| w * ai)
                    .sum::<f64>()
                    + x[b2 + r])
                    .tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..c)
            .map(|r| {
                x[w3 + r * h2..w3 + (r + 1) * h2]
                    .iter()
                    .zip(&a2)
                    .map(|(w, ai)| w * ai)
                    .sum::<f64>()
                    + x[b3 + r]
            })
            .collect();
        MlpForward { a1, a2, logits }
    }

    fn mlp_backward(&self, x: &[f64], sample: &Sample) -> Vec<f64> {
        let ModelOracle::Mlp2Tanh { input_dim, classes, hidden: (h1, h2) } = self else {
            unreachable!("mlp_backward() is the mlp head");
        };
        let (n, h1, h2, c) = (*input_dim, *h1, *h2, *classes);
        let (w1, b1) = (0, h1 * n);
        let (w2, b2) = (b1 + h1, b1 + h1 + h2 * h1);
        let (w3, b3) = (b2 + h2, b2 + h2 + c * h2);
        let fwd = self.mlp_forward(x, &sample.features);

        let mut g3 = softmax_probs(&fwd.logits);
        g3[sample.label as usize] -= 1.0;

        let mut g = vec![0.0; self.param_dim()];
        for r in 0..c {
            axpy(&mut g[w3 + r * h2..w3 + (r + 1) * h2], g3[r], &fwd.a2);
            g[b3 + r] = g3[r];
        }
        // back through tanh layer 2: g2 = (W3^T g3) .* (1 - a2^2)
        let g2: Vec<f64> = (0..h2)
            .map(|q| {
                let upstream: f64 = (0..c).map(|r| x[w3 + r * h2 + q] * g3[r]).sum();
                upstream * (1.0 - fwd.a2[q] * fwd.a2[q])
            })
            .collect();
        for r in 0..h2 {
            axpy(&mut g[w2 + r * h1..w2 + (r + 1) * h1], g2[r], &fwd.a1);
            g[b2 + r] = g2[r];
        }
        let g1: Vec<f64> = (0..h1)
            .map(|q| {
                let upstream: f64 = (0..h2).map(|r| x[w2 + r * h1 + q] * g2[r]).sum();
                upstream * (1.0 - fwd.a1[q] * fwd.a1[q])
            })
            .collect();
        for r in 0..h1 {
            axpy(&mut g[w1 + r * n..w1 + (r + 1) * n], g1[r], &sample.features);
            g[b1 + r] = g1[r];
        }
        g
    }
}

struct MlpForward {
    a1: Vec<f64>,
    a2: Vec<f64>,
    logits: Vec<f64>,
}

/// Numerically safe -log softmax(logits)[class].
fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[class]
}

fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gradient of `f_{w,j}` at x, with `j` a 0-based index into the shard.
pub fn sample_gradient(
    oracle: &ModelOracle,
    x: &[f64],
    data: &Dataset,
    shard: &WorkerShard,
    j: usize,
) -> Result<Vec<f64>> {
    let &idx = shard
        .samples
        .get(j)
        .ok_or(Error::IndexOutOfRange { index: j, len: shard.samples.len() })?;
    oracle.sample_gradient_at(x, data.sample(idx)?)
}

/// Full local gradient `f'_w(x)`: mean over the worker's shard.
pub fn local_gradient(
    oracle: &ModelOracle,
    x: &[f64],
    data: &Dataset,
    shard: &WorkerShard,
) -> Result<Vec<f64>> {
    if shard.samples.is_empty() {
        return Err(Error::EmptyInput("worker shard"));
    }
    let mut acc = vec![0.0; oracle.param_dim()];
    for &idx in &shard.samples {
        add_assign(&mut acc, &oracle.sample_gradient_at(x, data.sample(idx)?)?);
    }
    scale(&mut acc, 1.0 / shard.samples.len() as f64);
    Ok(acc)
}

pub fn local_loss(
    oracle: &ModelOracle,
    x: &[f64],
    data: &Dataset,
    shard: &WorkerShard,
) -> Result<f64> {
    if shard.samples.is_empty() {
        return Err(Error::EmptyInput("worker shard"));
    }
    let mut acc = 0.0;
    for &idx in &shard.samples {
        acc += oracle.sample_loss(x, data.sample(idx)?)?;
    }
    Ok(acc / shard.samples.len() as f64)
}

fn regular<'a>(
    shards: &'a [WorkerShard],
    cohort: &'a Cohort,
) -> impl Iterator<Item = &'a WorkerShard> {
    shards.iter().filter(|s| !cohort.is_byzantine(s.worker_id))
}

/// Global objective gradient `f'(x)`: mean of the regular workers' local
/// gradients (Byzantine shards never contribute to the objective).
pub fn global_gradient(
    oracle: &ModelOracle,
    x: &[f64],
    data: &Dataset,
    shards: &[WorkerShard],
    cohort: &Cohort,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; oracle.param_dim()];
    let mut count = 0usize;
    for shard in regular(shards, cohort) {
        add_assign(&mut acc, &local_gradient(oracle, x, data, shard)?);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput("regular shards"));
    }
    scale(&mut acc, 1.0 / count as f64);
    Ok(acc)
}

pub fn global_loss(
    oracle: &ModelOracle,
    x: &[f64],
    data: &Dataset,
    shards: &[WorkerShard],
    cohort: &Cohort,
) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for shard in regular(shards, cohort) {
        acc += local_loss(oracle, x, data, shard)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput("regular shards"));
    }
    Ok(acc / count as f64)
}

/// Empirical counterparts of the two variation assumptions, measured at x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariationReport {
    /// Outer variation delta^2: mean over regular workers of
    /// ||f'_w(x) - f'(x)||^2.
    pub outer_sq: f64,
    /// Inner variation sigma^2 as the bounds use it: the max over regular
    /// workers of the per-sample gradient variance.
    pub inner_sq_max: f64,
    /// Mean (over regular workers) of the same per-worker variance, for
    /// diagnostics.
    pub inner_sq_mean: f64,
}

pub fn measure_variations(
    oracle: &ModelOracle,
    x: &[f64],
    data: &Dataset,
    shards: &[WorkerShard],
    cohort: &Cohort,
) -> Result<VariationReport> {
    let locals: Vec<(usize, Vec<f64>)> = regular(shards, cohort)
        .map(|s| Ok((s.worker_id, local_gradient(oracle, x, data, s)?)))
        .collect::<Result<_>>()?;
    if locals.is_empty() {
        return Err(Error::EmptyInput("regular shards"));
    }
    let mut global = vec![0.0; oracle.param_dim()];
    for (_, g) in &locals {
        add_assign(&mut global, g);
    }
    scale(&mut global, 1.0 / locals.len() as f64);

    let outer_sq =
        locals.iter().map(|(_, g)| dist_sq(g, &global)).sum::<f64>() / locals.len() as f64;

    let mut inner_sq_max = 0.0f64;
    let mut inner_sum = 0.0f64;
    for shard in regular(shards, cohort) {
        let lg = &locals.iter().find(|(id, _)| *id == shard.worker_id).unwrap().1;
        let mut v = 0.0;
        for j in 0..shard.samples.len() {
            v += dist_sq(&sample_gradient(oracle, x, data, shard, j)?, lg);
        }
        v /= shard.samples.len() as f64;
        inner_sq_max = inner_sq_max.max(v);
        inner_sum += v;
    }
    Ok(VariationReport {
        outer_sq,
        inner_sq_max,
        inner_sq_mean: inner_sum / locals.len() as f64,
    })
}
