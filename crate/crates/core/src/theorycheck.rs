//! Closed-form robustness constants, convergence-bound evaluation, and
//! Monte-Carlo verification of the concentration identities behind them.
//!
//! The verifiers are built so every asserted statement is literally true:
//! identities are checked on configurations where they are exact (no
//! Byzantine inputs), inequalities are checked where only the inequality is
//! observable, and every Monte-Carlo estimate carries an explicit
//! statistical tolerance and a fixed seed.

use serde::Serialize;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::aggregation::{geometric_median, resample, GeoMedParams, ResampleParams};
use crate::error::{Error, Result};
use crate::rng::{derive_stream, StreamKind};
use crate::vecmath::{add_assign, dist_sq, norm, scale};

/// The dimensionless constants controlling robust aggregation with W
/// workers, B of them Byzantine, under an s-fold resampling pass.
///
/// `c_alpha` is present only when B < W/2 (plain geometric median is
/// meaningful); `c_s_alpha` only when B < W/(2s) (the resampled pass is).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessConstants {
    pub workers: usize,
    pub byzantine: usize,
    pub resample: usize,
    /// alpha = B / W.
    pub alpha: f64,
    /// (2 - 2a) / (1 - 2a), a = alpha.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_alpha: Option<f64>,
    /// (2 - 2sa) / (1 - 2sa), a = alpha.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_s_alpha: Option<f64>,
    /// Finite-population factor (W - 1) / (sW - 1); equals 1 iff s = 1.
    pub d: f64,
    /// B < W / 2.
    pub tolerable_geomed: bool,
    /// B < W / (2s).
    pub tolerable_resampled: bool,
}

pub fn constants(workers: usize, byzantine: usize, s: usize) -> Result<RobustnessConstants> {
    if workers == 0 || s == 0 {
        return Err(Error::invalid("need workers >= 1 and s >= 1"));
    }
    if byzantine >= workers {
        return Err(Error::invalid("need byzantine < workers"));
    }
    let w = workers as f64;
    let alpha = byzantine as f64 / w;
    let tolerable_geomed = 2 * byzantine < workers;
    let tolerable_resampled = 2 * s * byzantine < workers;
    let c_of = |a: f64| (2.0 - 2.0 * a) / (1.0 - 2.0 * a);
    let d = if s * workers == 1 { 1.0 } else { (w - 1.0) / (s as f64 * w - 1.0) };
    Ok(RobustnessConstants {
        workers,
        byzantine,
        resample: s,
        alpha,
        c_alpha: tolerable_geomed.then(|| c_of(alpha)),
        c_s_alpha: tolerable_resampled.then(|| c_of(s as f64 * alpha)),
        d,
        tolerable_geomed,
        tolerable_resampled,
    })
}

/// Problem-scale quantities the convergence bounds are evaluated at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundInputs {
    /// Strong-convexity modulus mu.
    pub mu: f64,
    /// Smoothness constant L.
    pub smoothness: f64,
    /// Per-worker sample count J.
    pub local_size: usize,
    /// Number of regular workers R.
    pub regular: usize,
    /// Outer variation: max over iterates of the mean squared deviation of
    /// local gradients from the global gradient.
    pub delta_sq: f64,
    /// Inner variation: max mean squared deviation of per-sample gradients
    /// from their local gradient.
    pub sigma_sq: f64,
    /// Aggregation accuracy for the approximate-geomed variants.
    pub epsilon: f64,
}

/// Step-size ceilings and asymptotic learning errors for the two analysed
/// algorithms, plus the comparison coefficients for all four baselines.
/// Fields are `None` when the corresponding Byzantine budget is exceeded.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub constants: RobustnessConstants,
    pub inputs: BoundInputs,
    /// gamma <= mu / (2 sqrt(10) J^2 L^2 C_sa) for the saga + resampling
    /// method with exact aggregation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_max_proposed: Option<f64>,
    /// gamma <= mu / (4 sqrt(5) J^2 L^2 C_sa) under epsilon-approximate
    /// aggregation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_max_proposed_approx: Option<f64>,
    /// Learning error 5 d C_sa^2 delta^2 / mu^2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta2_proposed: Option<f64>,
    /// gamma <= mu / (2 L^2) for rs-byrd-sgd.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_max_rs_byrd_sgd: Option<f64>,
    /// Learning error (2/mu^2)((d + (1-d)/R) C_sa^2 sigma^2 + d C_sa^2 delta^2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta2_rs_byrd_sgd: Option<f64>,
    /// 10 eps^2 / (mu^2 (W - 2sB)^2), added (with doubled delta2) under
    /// approximate aggregation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_term: Option<f64>,
    /// 4 eps^2 / (mu^2 (W - 2sB)^2), the rs-byrd-sgd analogue.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_term_rs_byrd_sgd: Option<f64>,
    pub orders: LearningErrorOrders,
}

/// The four asymptotic learning-error magnitudes compared in the analysis,
/// evaluated at the given variations (constant factors dropped).
#[derive(Clone, Debug, Serialize)]
pub struct LearningErrorOrders {
    /// C_a^2 sigma^2 + C_a^2 delta^2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub byrd_sgd: Option<f64>,
    /// (d + (1-d)/R) C_sa^2 sigma^2 + d C_sa^2 delta^2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rs_byrd_sgd: Option<f64>,
    /// C_a^2 delta^2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub byrd_saga: Option<f64>,
    /// d C_sa^2 delta^2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposed: Option<f64>,
}

pub fn bounds(constants: &RobustnessConstants, inputs: &BoundInputs) -> Result<BoundReport> {
    if !(inputs.mu > 0.0 && inputs.smoothness > 0.0) {
        return Err(Error::invalid("mu and smoothness must be > 0"));
    }
    if inputs.local_size == 0 || inputs.regular == 0 {
        return Err(Error::invalid("local_size and regular must be >= 1"));
    }
    if inputs.delta_sq < 0.0 || inputs.sigma_sq < 0.0 || inputs.epsilon < 0.0 {
        return Err(Error::invalid("delta_sq, sigma_sq and epsilon must be >= 0"));
    }
    let mu = inputs.mu;
    let l2 = inputs.smoothness * inputs.smoothness;
    let j2 = (inputs.local_size * inputs.local_size) as f64;
    let r = inputs.regular as f64;
    let d = constants.d;
    let spread = constants.workers as f64
        - 2.0 * (constants.resample * constants.byzantine) as f64; // W - 2sB
    let c_sa = constants.c_s_alpha;

    let resampled = |f: &dyn Fn(f64) -> f64| c_sa.map(f);
    let report = BoundReport {
        constants: constants.clone(),
        inputs: *inputs,
        gamma_max_proposed: resampled(&|c| mu / (2.0 * 10f64.sqrt() * j2 * l2 * c)),
        gamma_max_proposed_approx: resampled(&|c| mu / (4.0 * 5f64.sqrt() * j2 * l2 * c)),
        delta2_proposed: resampled(&|c| 5.0 * d * c * c * inputs.delta_sq / (mu * mu)),
        gamma_max_rs_byrd_sgd: constants.tolerable_resampled.then(|| mu / (2.0 * l2)),
        delta2_rs_byrd_sgd: resampled(&|c| {
            2.0 / (mu * mu)
                * ((d + (1.0 - d) / r) * c * c * inputs.sigma_sq + d * c * c * inputs.delta_sq)
        }),
        epsilon_term: constants
            .tolerable_resampled
            .then(|| 10.0 * inputs.epsilon * inputs.epsilon / (mu * mu * spread * spread)),
        epsilon_term_rs_byrd_sgd: constants
            .tolerable_resampled
            .then(|| 4.0 * inputs.epsilon * inputs.epsilon / (mu * mu * spread * spread)),
        orders: LearningErrorOrders {
            byrd_sgd: constants
                .c_alpha
                .map(|c| c * c * (inputs.sigma_sq + inputs.delta_sq)),
            rs_byrd_sgd: resampled(&|c| {
                (d + (1.0 - d) / r) * c * c * inputs.sigma_sq + d * c * c * inputs.delta_sq
            }),
            byrd_saga: constants.c_alpha.map(|c| c * c * inputs.delta_sq),
            proposed: resampled(&|c| d * c * c * inputs.delta_sq),
        },
    };
    Ok(report)
}

/// One point of the learning-error-versus-alpha comparison.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurvePoint {
    pub s: usize,
    pub alpha: f64,
    /// d C_sa^2 (which is C_a^2 when s = 1), the learning-error coefficient
    /// with the outer variation normalized away.
    pub coefficient: f64,
}

/// The learning-error coefficient d * C_sa^2 at a (possibly non-integral-B)
/// Byzantine fraction, or `None` outside the tolerable range s*alpha < 1/2.
pub fn curve_coefficient(workers: usize, s: usize, alpha: f64) -> Option<f64> {
    if !(0.0..0.5).contains(&(s as f64 * alpha)) || workers == 0 || s == 0 {
        return None;
    }
    let w = workers as f64;
    let d = if s * workers == 1 { 1.0 } else { (w - 1.0) / (s as f64 * w - 1.0) };
    let sa = s as f64 * alpha;
    let c = (2.0 - 2.0 * sa) / (1.0 - 2.0 * sa);
    Some(d * c * c)
}

/// Tabulates d * C_sa^2 over an alpha grid for each s, skipping points
/// beyond the tolerable fraction.
pub fn error_curve(workers: usize, s_list: &[usize], alphas: &[f64]) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for &s in s_list {
        for &alpha in alphas {
            if let Some(coefficient) = curve_coefficient(workers, s, alpha) {
                out.push(CurvePoint { s, alpha, coefficient });
            }
        }
    }
    out
}

/// An independent vector source with closed-form first and second moments,
/// used to drive the Monte-Carlo verifiers.
#[derive(Clone, Debug)]
pub enum RandomSource {
    /// Always emits the same vector.
    PointMass(Vec<f64>),
    /// Independent normal coordinates around `mean`.
    IsotropicGaussian { mean: Vec<f64>, coordinate_variance: f64 },
}

impl RandomSource {
    pub fn dim(&self) -> usize {
        match self {
            RandomSource::PointMass(v) => v.len(),
            RandomSource::IsotropicGaussian { mean, .. } => mean.len(),
        }
    }

    pub fn mean(&self) -> &[f64] {
        match self {
            RandomSource::PointMass(v) => v,
            RandomSource::IsotropicGaussian { mean, .. } => mean,
        }
    }

    /// E || z - E z ||^2.
    pub fn second_central_moment(&self) -> f64 {
        match self {
            RandomSource::PointMass(_) => 0.0,
            RandomSource::IsotropicGaussian { mean, coordinate_variance } => {
                mean.len() as f64 * coordinate_variance
            }
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            RandomSource::PointMass(v) => v.clone(),
            RandomSource::IsotropicGaussian { mean, coordinate_variance } => {
                let normal = Normal::new(0.0, coordinate_variance.sqrt())
                    .expect("variance validated on construction");
                mean.iter().map(|m| m + normal.sample(rng)).collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::EmptyInput("random source mean"));
        }
        if !crate::vecmath::all_finite(self.mean()) {
            return Err(Error::NonFinite("random source mean"));
        }
        if let RandomSource::IsotropicGaussian { coordinate_variance, .. } = self {
            if !(coordinate_variance.is_finite() && *coordinate_variance >= 0.0) {
                return Err(Error::invalid("coordinate_variance must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

fn mean_of_means(sources: &[RandomSource]) -> Vec<f64> {
    let mut acc = vec![0.0; sources[0].dim()];
    for s in sources {
        add_assign(&mut acc, s.mean());
    }
    scale(&mut acc, 1.0 / sources.len() as f64);
    acc
}

/// Monte-Carlo check of the per-slot resampling moments for deterministic
/// inputs: every output slot has mean z-bar and variance
/// d * (1/W) sum ||z_w - z-bar||^2.
#[derive(Clone, Debug, Serialize)]
pub struct ResamplingIdentityReport {
    pub trials: usize,
    pub mean_closed_form: Vec<f64>,
    pub variance_closed_form: f64,
    pub slot_means: Vec<Vec<f64>>,
    pub slot_variances: Vec<f64>,
    pub max_mean_rel_error: f64,
    pub max_variance_rel_error: f64,
}

pub fn verify_resampling_identities(
    vectors: &[Vec<f64>],
    s: usize,
    trials: usize,
    seed: u64,
) -> Result<ResamplingIdentityReport> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput("vectors"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let w = vectors.len();
    let dim = vectors[0].len();
    let params = ResampleParams { s };

    let mut center = vec![0.0; dim];
    for v in vectors {
        add_assign(&mut center, v);
    }
    scale(&mut center, 1.0 / w as f64);
    let popvar = vectors.iter().map(|v| dist_sq(v, &center)).sum::<f64>() / w as f64;
    let d = if s * w == 1 { 1.0 } else { (w as f64 - 1.0) / ((s * w) as f64 - 1.0) };
    let variance_closed_form = d * popvar;

    let mut sums = vec![vec![0.0; dim]; w];
    let mut sq_dev = vec![0.0; w];
    for t in 0..trials {
        let mut rng = derive_stream(seed, StreamKind::Trial, t as u64);
        let mixed = resample(vectors, &params, &mut rng)?;
        for (slot, z) in mixed.iter().enumerate() {
            add_assign(&mut sums[slot], z);
            // centering on the exact closed-form mean keeps the variance
            // estimator unbiased and exactly zero for identical inputs
            sq_dev[slot] += dist_sq(z, &center);
        }
    }
    let slot_means: Vec<Vec<f64>> = sums
        .into_iter()
        .map(|mut v| {
            scale(&mut v, 1.0 / trials as f64);
            v
        })
        .collect();
    let slot_variances: Vec<f64> = sq_dev.iter().map(|s| s / trials as f64).collect();

    let mean_scale = norm(&center).max(f64::MIN_POSITIVE);
    let max_mean_rel_error = slot_means
        .iter()
        .map(|m| dist_sq(m, &center).sqrt() / mean_scale)
        .fold(0.0, f64::max);
    let var_scale = variance_closed_form.max(f64::MIN_POSITIVE);
    let max_variance_rel_error = slot_variances
        .iter()
        .map(|v| (v - variance_closed_form).abs() / var_scale)
        .fold(0.0, f64::max);

    Ok(ResamplingIdentityReport {
        trials,
        mean_closed_form: center,
        variance_closed_form,
        slot_means,
        slot_variances,
        max_mean_rel_error,
        max_variance_rel_error,
    })
}

/// Monte-Carlo check that the mean squared deviation of a resampled slot
/// from the grand mean equals
/// (d + (1-d)/R) * inner + d * outer
/// for independent sources with known moments (the no-Byzantine case, where
/// the relation is an identity rather than an inequality).
#[derive(Clone, Debug, Serialize)]
pub struct SlotDeviationReport {
    pub trials: usize,
    pub lhs_estimate: f64,
    pub rhs_closed_form: f64,
    pub rel_gap: f64,
}

pub fn verify_slot_deviation(
    sources: &[RandomSource],
    s: usize,
    trials: usize,
    seed: u64,
) -> Result<SlotDeviationReport> {
    if sources.is_empty() {
        return Err(Error::EmptyInput("sources"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    for src in sources {
        src.validate()?;
    }
    let w = sources.len();
    let r = w as f64;
    let params = ResampleParams { s };
    let center = mean_of_means(sources);
    let d = if s * w == 1 { 1.0 } else { (w as f64 - 1.0) / ((s * w) as f64 - 1.0) };
    let inner = sources.iter().map(|s| s.second_central_moment()).sum::<f64>() / r;
    let outer = sources.iter().map(|s| dist_sq(s.mean(), &center)).sum::<f64>() / r;
    let rhs_closed_form = (d + (1.0 - d) / r) * inner + d * outer;

    let mut total = 0.0;
    for t in 0..trials {
        let mut rng = derive_stream(seed, StreamKind::Trial, t as u64);
        let draws: Vec<Vec<f64>> = sources.iter().map(|s| s.draw(&mut rng)).collect();
        let mixed = resample(&draws, &params, &mut rng)?;
        for z in &mixed {
            total += dist_sq(z, &center);
        }
    }
    let lhs_estimate = total / (trials * w) as f64;
    let rel_gap =
        (lhs_estimate - rhs_closed_form).abs() / rhs_closed_form.abs().max(f64::MIN_POSITIVE);
    Ok(SlotDeviationReport { trials, lhs_estimate, rhs_closed_form, rel_gap })
}

/// Monte-Carlo check of the geometric-median concentration inequalities:
/// honest sources with known moments plus fixed adversarial vectors, the
/// empirical mean squared error of (resampled) geomed against the
/// closed-form right-hand side. With s = 1 this exercises the plain-geomed
/// bound; `approx` repeats the check with a coarse aggregation tolerance
/// against the doubled right-hand side plus 2 eps^2 / (W - 2sB)^2.
#[derive(Clone, Debug, Serialize)]
pub struct GeomedBoundReport {
    pub trials: usize,
    pub s: usize,
    pub empirical_mse: f64,
    pub bound_rhs: f64,
    /// empirical <= rhs with 1% statistical slack.
    pub holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub approx: Option<ApproxGeomedBound>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ApproxGeomedBound {
    pub epsilon: f64,
    pub empirical_mse: f64,
    pub bound_rhs: f64,
    pub holds: bool,
}

pub fn verify_geomed_bounds(
    honest: &[RandomSource],
    adversarial: &[Vec<f64>],
    s: usize,
    geomed: &GeoMedParams,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<GeomedBoundReport> {
    if honest.is_empty() {
        return Err(Error::EmptyInput("honest sources"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    for src in honest {
        src.validate()?;
    }
    let r = honest.len();
    let b = adversarial.len();
    let w = r + b;
    if 2 * s * b >= w {
        return Err(Error::invalid(format!(
            "bound undefined: 2sB = {} >= W = {w}",
            2 * s * b
        )));
    }
    let consts = constants(w, b, s)?;
    let c = consts.c_s_alpha.expect("tolerability checked above");
    let d = consts.d;
    let center = mean_of_means(honest);
    let inner_sum: f64 = honest.iter().map(|s| s.second_central_moment()).sum();
    let outer_sum: f64 = honest.iter().map(|s| dist_sq(s.mean(), &center)).sum();
    let rf = r as f64;
    let base = (d + (1.0 - d) / rf) * c * c / rf * inner_sum + d * c * c / rf * outer_sum;
    let spread = (w - 2 * s * b) as f64;

    let run_pass = |params: &GeoMedParams, salt: u64| -> Result<f64> {
        let mut total = 0.0;
        for t in 0..trials {
            let mut rng = derive_stream(seed ^ salt, StreamKind::Trial, t as u64);
            let mut msgs: Vec<Vec<f64>> = honest.iter().map(|s| s.draw(&mut rng)).collect();
            msgs.extend(adversarial.iter().cloned());
            let mixed = if s > 1 {
                resample(&msgs, &ResampleParams { s }, &mut rng)?
            } else {
                msgs
            };
            let gm = geometric_median(&mixed, params)?.point;
            total += dist_sq(&gm, &center);
        }
        Ok(total / trials as f64)
    };

    let empirical_mse = run_pass(geomed, 0)?;
    let holds = empirical_mse <= base * 1.01;

    let approx = if epsilon > 0.0 {
        let coarse = GeoMedParams { epsilon, ..*geomed };
        let empirical = run_pass(&coarse, 0x5eed)?;
        let rhs = 2.0 * base + 2.0 * epsilon * epsilon / (spread * spread);
        Some(ApproxGeomedBound {
            epsilon,
            empirical_mse: empirical,
            bound_rhs: rhs,
            holds: empirical <= rhs * 1.01,
        })
    } else {
        None
    };

    Ok(GeomedBoundReport { trials, s, empirical_mse, bound_rhs: base, holds, approx })
}

/// Exact-enumeration check of the variance-reduction inequality: for a
/// quadratic worker whose smoothness constant L is known exactly, the
/// corrected gradient built from a table of gradients taken at points phi_j
/// satisfies E_j ||v - f'_w(x)||^2 <= L^2 (1/J) sum_j ||x - phi_j||^2.
/// Randomly generated worker configurations, zero violations expected.
#[derive(Clone, Debug, Serialize)]
pub struct SagaVarianceReport {
    pub configs: usize,
    /// Largest observed lhs / rhs; at most 1 when the bound holds.
    pub max_ratio: f64,
    pub violations: usize,
}

pub fn verify_saga_variance_bound(configs: usize, seed: u64) -> Result<SagaVarianceReport> {
    use crate::models::{local_gradient, Dataset, ModelOracle, Sample, WorkerShard};
    use crate::saga::SagaTable;

    if configs == 0 {
        return Err(Error::invalid("configs must be >= 1"));
    }
    let mut max_ratio = 0.0f64;
    let mut violations = 0;
    for c in 0..configs {
        let mut rng = derive_stream(seed, StreamKind::Trial, c as u64);
        let dim = rng.gen_range(1..=3);
        let j_count = rng.gen_range(1..=5);
        let curvature: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..3.0)).collect();
        let smoothness = curvature.iter().cloned().fold(f64::MIN, f64::max);
        let oracle = ModelOracle::quadratic(curvature.clone())?;
        let samples: Vec<Sample> = (0..j_count)
            .map(|_| Sample {
                features: (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                label: 0.0,
            })
            .collect();
        let data = Dataset::new(samples, 0)?;
        let shard = WorkerShard { worker_id: 0, samples: (0..j_count).collect() };

        // gradients taken at random past points phi_j
        let phis: Vec<Vec<f64>> = (0..j_count)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let stored: Vec<Vec<f64>> = phis
            .iter()
            .enumerate()
            .map(|(j, phi)| {
                phi.iter()
                    .zip(&curvature)
                    .zip(&data.sample(j).unwrap().features)
                    .map(|((p, q), a)| q * (p - a))
                    .collect()
            })
            .collect();
        let table = SagaTable::from_stored(0, stored);
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let full = local_gradient(&oracle, &x, &data, &shard)?;

        let mut lhs = 0.0;
        for j in 0..j_count {
            let mut t = table.clone();
            let v = t.corrected_gradient(&oracle, &x, &data, &shard, j)?;
            lhs += dist_sq(&v, &full);
        }
        lhs /= j_count as f64;
        let rhs = smoothness * smoothness / j_count as f64
            * phis.iter().map(|phi| dist_sq(&x, phi)).sum::<f64>();
        let ratio = if rhs == 0.0 {
            if lhs == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            lhs / rhs
        };
        max_ratio = max_ratio.max(ratio);
        if ratio > 1.0 + 1e-12 {
            violations += 1;
        }
    }
    Ok(SagaVarianceReport { configs, max_ratio, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn constants_match_hand_computed_values() {
        // W = 30, B = 1, s = 2: alpha = 1/30, C_a = 29/14, C_sa = 28/13,
        // d = 29/59.
        let c = constants(30, 1, 2).unwrap();
        assert!(rel_err(c.alpha, 1.0 / 30.0) <= 1e-12);
        assert!(rel_err(c.c_alpha.unwrap(), 29.0 / 14.0) <= 1e-12);
        assert!(rel_err(c.c_s_alpha.unwrap(), 28.0 / 13.0) <= 1e-12);
        assert!(rel_err(c.d, 29.0 / 59.0) <= 1e-12);
        assert!(c.tolerable_geomed && c.tolerable_resampled);
    }

    #[test]
    fn s_equal_one_reduces_to_plain_constants() {
        let c = constants(12, 3, 1).unwrap();
        assert_eq!(c.d, 1.0);
        assert_eq!(c.c_alpha, c.c_s_alpha);
    }

    #[test]
    fn no_byzantine_gives_factor_two() {
        let c = constants(8, 0, 3).unwrap();
        assert_eq!(c.c_alpha, Some(2.0));
        assert_eq!(c.c_s_alpha, Some(2.0));
    }

    #[test]
    fn over_budget_flags_not_tolerable() {
        let c = constants(4, 1, 2).unwrap(); // 2sB = 4 = W
        assert!(c.tolerable_geomed);
        assert!(!c.tolerable_resampled);
        assert!(c.c_alpha.is_some());
        assert!(c.c_s_alpha.is_none());

        let c = constants(4, 2, 1).unwrap(); // 2B = 4 = W
        assert!(!c.tolerable_geomed);
        assert!(c.c_alpha.is_none());
    }

    #[test]
    fn constants_rejects_degenerate_inputs() {
        assert!(constants(0, 0, 1).is_err());
        assert!(constants(4, 4, 1).is_err());
        assert!(constants(4, 0, 0).is_err());
    }

    fn default_inputs() -> BoundInputs {
        BoundInputs {
            mu: 1.0,
            smoothness: 1.0,
            local_size: 1,
            regular: 29,
            delta_sq: 1.0,
            sigma_sq: 0.0,
            epsilon: 0.0,
        }
    }

    #[test]
    fn proposed_learning_error_matches_hand_value() {
        // 5 * (29/59) * (28/13)^2 = 113680 / 9971
        let c = constants(30, 1, 2).unwrap();
        let rep = bounds(&c, &default_inputs()).unwrap();
        assert!(rel_err(rep.delta2_proposed.unwrap(), 113680.0 / 9971.0) <= 1e-12);
    }

    #[test]
    fn zero_outer_variation_means_exact_convergence() {
        let c = constants(30, 1, 2).unwrap();
        let rep = bounds(&c, &BoundInputs { delta_sq: 0.0, ..default_inputs() }).unwrap();
        assert_eq!(rep.delta2_proposed, Some(0.0));
        assert_eq!(rep.orders.proposed, Some(0.0));
    }

    #[test]
    fn sgd_error_without_resampling_or_noise_is_plain_geomed_order() {
        // s = 1, sigma^2 = 0: (2/mu^2) C_a^2 delta^2.
        let c = constants(30, 3, 1).unwrap();
        let ca = c.c_alpha.unwrap();
        let rep = bounds(&c, &default_inputs()).unwrap();
        assert!(rel_err(rep.delta2_rs_byrd_sgd.unwrap(), 2.0 * ca * ca) <= 1e-12);
    }

    #[test]
    fn step_ceilings_match_hand_values() {
        // mu = L = J = 1, B = 0 (C = 2): mu/(2 sqrt(10) * 2) = 1/(4 sqrt(10)),
        // approx variant 1/(8 sqrt(5)), sgd ceiling 1/2.
        let c = constants(10, 0, 2).unwrap();
        let rep = bounds(&c, &BoundInputs { regular: 10, ..default_inputs() }).unwrap();
        assert!(rel_err(rep.gamma_max_proposed.unwrap(), 1.0 / (4.0 * 10f64.sqrt())) <= 1e-12);
        assert!(
            rel_err(rep.gamma_max_proposed_approx.unwrap(), 1.0 / (8.0 * 5f64.sqrt())) <= 1e-12
        );
        assert_eq!(rep.gamma_max_rs_byrd_sgd, Some(0.5));
    }

    #[test]
    fn epsilon_terms_match_hand_values() {
        // W = 30, B = 1, s = 2, eps = 1: W - 2sB = 26.
        let c = constants(30, 1, 2).unwrap();
        let rep = bounds(&c, &BoundInputs { epsilon: 1.0, ..default_inputs() }).unwrap();
        assert!(rel_err(rep.epsilon_term.unwrap(), 10.0 / 676.0) <= 1e-12);
        assert!(rel_err(rep.epsilon_term_rs_byrd_sgd.unwrap(), 4.0 / 676.0) <= 1e-12);
    }

    #[test]
    fn non_tolerable_bounds_are_absent() {
        let c = constants(4, 1, 2).unwrap();
        let rep = bounds(&c, &default_inputs()).unwrap();
        assert!(rep.delta2_proposed.is_none());
        assert!(rep.gamma_max_proposed.is_none());
        assert!(rep.orders.proposed.is_none());
        assert!(rep.orders.byrd_saga.is_some()); // 2B < W still holds
    }

    #[test]
    fn curve_matches_hand_values_and_crosses() {
        // At alpha = 1/30 with W = 30: s = 2 coefficient 22736/9971, s = 1
        // coefficient (29/14)^2 = 841/196.
        let a = 1.0 / 30.0;
        assert!(rel_err(curve_coefficient(30, 2, a).unwrap(), 22736.0 / 9971.0) <= 1e-9);
        assert!(rel_err(curve_coefficient(30, 1, a).unwrap(), 841.0 / 196.0) <= 1e-9);

        // alpha -> 0: d C_sa^2 -> 4d < 4 = C_a^2.
        let d = 29.0 / 59.0;
        assert!(rel_err(curve_coefficient(30, 2, 0.0).unwrap(), 4.0 * d) <= 1e-12);
        assert_eq!(curve_coefficient(30, 1, 0.0), Some(4.0));

        // The s = 2 curve starts below the s = 1 curve and diverges first:
        // the difference changes sign somewhere on (0, 1/4).
        let mut signs = Vec::new();
        for i in 0..240 {
            let alpha = i as f64 / 1000.0;
            let (Some(two), Some(one)) =
                (curve_coefficient(30, 2, alpha), curve_coefficient(30, 1, alpha))
            else {
                break;
            };
            signs.push(two < one);
        }
        assert!(signs[0]);
        assert!(signs.contains(&false), "no crossover found on the grid");
    }

    #[test]
    fn curve_skips_points_beyond_budget() {
        let pts = error_curve(30, &[1, 2, 3], &[0.0, 0.1, 0.2, 0.3, 0.45]);
        assert!(pts
            .iter()
            .all(|p| p.s as f64 * p.alpha < 0.5 && p.coefficient.is_finite()));
        // s = 3 admits only alpha < 1/6
        assert_eq!(pts.iter().filter(|p| p.s == 3).count(), 2);
        // the coefficient blows up approaching the budget edge
        let near = curve_coefficient(30, 2, 0.2499).unwrap();
        assert!(near > 1e5);
    }

    #[test]
    fn resampling_moments_match_closed_forms() {
        // W = 4, s = 2, inputs {0,1,2,3}: slot mean 1.5, slot variance
        // d * popvar = (3/7) * (5/4) = 15/28. Tolerances 2% / 3% at 1e5
        // trials (~5 / sqrt(trials) heuristic with margin).
        let vectors = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let rep = verify_resampling_identities(&vectors, 2, 100_000, 42).unwrap();
        assert!(rel_err(rep.variance_closed_form, 15.0 / 28.0) <= 1e-12);
        assert_eq!(rep.mean_closed_form, vec![1.5]);
        assert!(rep.max_mean_rel_error <= 0.02, "{}", rep.max_mean_rel_error);
        assert!(rep.max_variance_rel_error <= 0.03, "{}", rep.max_variance_rel_error);
    }

    #[test]
    fn identical_inputs_resample_with_zero_variance() {
        let vectors = vec![vec![2.5, -1.0]; 5];
        let rep = verify_resampling_identities(&vectors, 3, 500, 1).unwrap();
        assert_eq!(rep.variance_closed_form, 0.0);
        assert!(rep.slot_variances.iter().all(|&v| v == 0.0));
        assert_eq!(rep.max_variance_rel_error, 0.0);
    }

    #[test]
    fn slot_deviation_identity_for_point_masses() {
        // Deterministic sources: only the outer term survives, giving the
        // same 15/28 as the variance identity.
        let sources: Vec<RandomSource> =
            (0..4).map(|i| RandomSource::PointMass(vec![i as f64])).collect();
        let rep = verify_slot_deviation(&sources, 2, 100_000, 7).unwrap();
        assert!(rel_err(rep.rhs_closed_form, 15.0 / 28.0) <= 1e-12);
        assert!(rep.rel_gap <= 0.05, "gap {}", rep.rel_gap);
    }

    #[test]
    fn slot_deviation_identity_for_identical_sources() {
        // Identical sources: only the inner term survives with coefficient
        // d + (1-d)/R.
        let sources = vec![
            RandomSource::IsotropicGaussian {
                mean: vec![1.0, -2.0],
                coordinate_variance: 0.5
            };
            4
        ];
        let rep = verify_slot_deviation(&sources, 2, 30_000, 11).unwrap();
        let d: f64 = 3.0 / 7.0;
        let expected = (d + (1.0 - d) / 4.0) * 1.0; // inner moment = 2 * 0.5
        assert!(rel_err(rep.rhs_closed_form, expected) <= 1e-12);
        assert!(rep.rel_gap <= 0.05, "gap {}", rep.rel_gap);
    }

    #[test]
    fn slot_deviation_identity_mixed_moments() {
        let sources = vec![
            RandomSource::IsotropicGaussian { mean: vec![0.0], coordinate_variance: 1.0 },
            RandomSource::IsotropicGaussian { mean: vec![2.0], coordinate_variance: 0.25 },
            RandomSource::PointMass(vec![-1.0]),
            RandomSource::PointMass(vec![3.0]),
        ];
        let rep = verify_slot_deviation(&sources, 2, 100_000, 13).unwrap();
        assert!(rep.rel_gap <= 0.05, "gap {}", rep.rel_gap);
    }

    #[test]
    fn geomed_error_is_zero_for_identical_point_masses() {
        let honest = vec![RandomSource::PointMass(vec![1.0, 2.0]); 5];
        let rep = verify_geomed_bounds(
            &honest,
            &[],
            1,
            &GeoMedParams::default(),
            0.0,
            10,
            3,
        )
        .unwrap();
        assert_eq!(rep.bound_rhs, 0.0);
        assert!(rep.empirical_mse <= 1e-24, "{}", rep.empirical_mse);
        assert!(rep.holds);
    }

    fn gaussian_fleet() -> (Vec<RandomSource>, Vec<Vec<f64>>) {
        let honest = (0..5)
            .map(|i| RandomSource::IsotropicGaussian {
                mean: vec![i as f64 - 2.0],
                coordinate_variance: 1.0,
            })
            .collect();
        (honest, vec![vec![1000.0]])
    }

    #[test]
    fn geomed_concentration_bound_holds_without_resampling() {
        let (honest, adversarial) = gaussian_fleet();
        let rep = verify_geomed_bounds(
            &honest,
            &adversarial,
            1,
            &GeoMedParams::default(),
            0.0,
            1000,
            17,
        )
        .unwrap();
        assert!(rep.holds, "mse {} vs rhs {}", rep.empirical_mse, rep.bound_rhs);
    }

    #[test]
    fn geomed_concentration_bound_holds_with_resampling_and_approx() {
        let (honest, adversarial) = gaussian_fleet();
        let rep = verify_geomed_bounds(
            &honest,
            &adversarial,
            2,
            &GeoMedParams::default(),
            5.0,
            1000,
            19,
        )
        .unwrap();
        assert!(rep.holds, "mse {} vs rhs {}", rep.empirical_mse, rep.bound_rhs);
        let approx = rep.approx.unwrap();
        assert!(approx.holds, "mse {} vs rhs {}", approx.empirical_mse, approx.bound_rhs);
        assert!(approx.bound_rhs > 2.0 * rep.bound_rhs);
    }

    #[test]
    fn geomed_bound_rejects_over_budget_fleet() {
        let honest = vec![RandomSource::PointMass(vec![0.0]); 3];
        let err = verify_geomed_bounds(
            &honest,
            &[vec![9.0]],
            2,
            &GeoMedParams::default(),
            0.0,
            10,
            0,
        );
        assert!(err.is_err());
    }

    proptest! {
        #[test]
        fn c_constant_at_least_two_and_increasing(
            w in 1usize..200,
            s in 1usize..5,
            b in 0usize..100,
        ) {
            prop_assume!(2 * s * b < w);
            let c = constants(w, b, s).unwrap();
            let csa = c.c_s_alpha.unwrap();
            prop_assert!(csa >= 2.0 - 1e-12);
            // strictly increasing in the Byzantine count while tolerable
            if 2 * s * (b + 1) < w {
                let next = constants(w, b + 1, s).unwrap().c_s_alpha.unwrap();
                prop_assert!(next > csa);
            }
        }

        #[test]
        fn d_decreases_in_s(w in 2usize..100, s in 1usize..6) {
            let d0 = constants(w, 0, s).unwrap().d;
            let d1 = constants(w, 0, s + 1).unwrap().d;
            prop_assert!(d1 < d0);
            prop_assert!(d0 <= 1.0 && d0 > 0.0);
        }
    }
}
