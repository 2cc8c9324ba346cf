//! Robust aggregation rules for the central node: plain averaging, the
//! geometric median (Weiszfeld iteration), Krum selection, and the
//! s-replacement message resampling pass that precedes aggregation in the
//! rs-* algorithm variants.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{add_assign, all_finite, dist, mean};

fn validate_messages(messages: &[Vec<f64>]) -> Result<usize> {
    if messages.is_empty() {
        return Err(Error::EmptyInput("messages"));
    }
    let dim = messages[0].len();
    if dim == 0 {
        return Err(Error::EmptyInput("message coordinates"));
    }
    for m in messages {
        if m.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: m.len() });
        }
        if !all_finite(m) {
            return Err(Error::NonFinite("message"));
        }
    }
    Ok(dim)
}

/// Componentwise mean (the aggregation rule of plain distributed SGD).
pub fn mean_aggregate(messages: &[Vec<f64>]) -> Result<Vec<f64>> {
    validate_messages(messages)?;
    Ok(mean(messages))
}

/// Weiszfeld stopping/smoothing knobs. `epsilon` is the approximation budget
/// of the aggregate: iteration stops once the iterate moves by at most
/// epsilon / W. `smoothing` guards the update against data-point collisions
/// by switching distances below it to sqrt(d^2 + smoothing^2).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct GeoMedParams {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub smoothing: f64,
}

impl Default for GeoMedParams {
    fn default() -> Self {
        GeoMedParams { epsilon: 1e-8, max_iterations: 200, smoothing: 1e-10 }
    }
}

impl GeoMedParams {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("geomed epsilon must be >= 0"));
        }
        if !(self.smoothing > 0.0) {
            return Err(Error::invalid("geomed smoothing must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("geomed max_iterations must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GeoMedOutcome {
    pub point: Vec<f64>,
    /// Weiszfeld updates actually performed.
    pub iterations: usize,
    /// Final objective sum_i ||point - g_i||.
    pub objective: f64,
    /// Heuristic upper estimate of the remaining objective gap
    /// (W * last displacement; the objective is W-Lipschitz in the iterate).
    pub gap_estimate: f64,
    /// Objective at the starting mean and after every update, for
    /// monotonicity checks.
    pub objective_trace: Vec<f64>,
}

fn geomed_objective(z: &[f64], messages: &[Vec<f64>]) -> f64 {
    messages.iter().map(|g| dist(z, g)).sum()
}

/// Geometric median by Weiszfeld iteration, started from the componentwise
/// mean.
pub fn geometric_median(messages: &[Vec<f64>], params: &GeoMedParams) -> Result<GeoMedOutcome> {
    let dim = validate_messages(messages)?;
    params.validate()?;
    let w = messages.len() as f64;
    let mut z = mean(messages);
    let mut trace = vec![geomed_objective(&z, messages)];
    let mut iterations = 0;
    let mut last_disp = 0.0;
    for _ in 0..params.max_iterations {
        let mut num = vec![0.0; dim];
        let mut den = 0.0;
        for g in messages {
            let d = dist(&z, g);
            let d = if d < params.smoothing {
                (d * d + params.smoothing * params.smoothing).sqrt()
            } else {
                d
            };
            let inv = 1.0 / d;
            den += inv;
            for (n, gi) in num.iter_mut().zip(g) {
                *n += gi * inv;
            }
        }
        // divide rather than multiply by a rounded reciprocal so identical
        // inputs reproduce themselves exactly
        for n in num.iter_mut() {
            *n /= den;
        }
        last_disp = dist(&num, &z);
        z = num;
        iterations += 1;
        trace.push(geomed_objective(&z, messages));
        if last_disp <= params.epsilon / w {
            break;
        }
    }
    Ok(GeoMedOutcome {
        objective: *trace.last().unwrap(),
        gap_estimate: w * last_disp,
        point: z,
        iterations,
        objective_trace: trace,
    })
}

/// Krum selection: each message is scored by the summed squared distances to
/// its W - B - 2 nearest peers and the lowest score wins (lowest index on
/// ties). Returns the winning message unchanged.
pub fn krum(messages: &[Vec<f64>], num_byzantine: usize) -> Result<Vec<f64>> {
    validate_messages(messages)?;
    let w = messages.len();
    let neighbors = w
        .checked_sub(num_byzantine + 2)
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            Error::invalid(format!(
                "krum needs at least B + 3 = {} workers, got {w}",
                num_byzantine + 3
            ))
        })?;
    let mut best = 0usize;
    let mut best_score = f64::INFINITY;
    for (i, mi) in messages.iter().enumerate() {
        let mut dists: Vec<f64> = messages
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, mj)| crate::vecmath::dist_sq(mi, mj))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let score: f64 = dists[..neighbors].iter().sum();
        if score < best_score {
            best_score = score;
            best = i;
        }
    }
    Ok(messages[best].clone())
}

/// s-replacement resampling parameters. The caller is responsible for the
/// contamination budget s * B < W; the pass itself only needs s >= 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleParams {
    pub s: usize,
}

/// One resampling pass: an urn holds s copies of every input message; each
/// of the W output slots draws s copies without replacement (a draw picks a
/// worker with probability proportional to its remaining copies) and emits
/// their mean. Every input therefore contributes exactly s draws overall,
/// and with s = 1 the pass is a uniform permutation.
///
/// RNG consumption order is pinned: slots in order, s draws per slot, one
/// `gen_range(0..remaining_total)` per draw mapped to workers in ascending
/// input order.
pub fn resample(
    messages: &[Vec<f64>],
    params: &ResampleParams,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let dim = validate_messages(messages)?;
    let s = params.s;
    if s == 0 {
        return Err(Error::invalid("resample needs s >= 1"));
    }
    let w = messages.len();
    let mut remaining = vec![s; w];
    let mut total = s * w;
    let mut out = Vec::with_capacity(w);
    for _slot in 0..w {
        let mut acc = vec![0.0; dim];
        for _draw in 0..s {
            let mut r = rng.gen_range(0..total);
            let mut pick = w - 1;
            for (i, &rem) in remaining.iter().enumerate() {
                if r < rem {
                    pick = i;
                    break;
                }
                r -= rem;
            }
            remaining[pick] -= 1;
            total -= 1;
            add_assign(&mut acc, &messages[pick]);
        }
        for a in acc.iter_mut() {
            *a /= s as f64;
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, StreamKind};
    use crate::vecmath::{dist_sq, norm};
    use rand::Rng;

    #[test]
    fn mean_basics() {
        assert_eq!(mean_aggregate(&[vec![1.0, 1.0]]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(
            mean_aggregate(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap(),
            vec![1.0, 0.0]
        );
        assert!(mean_aggregate(&[]).is_err());
        assert!(mean_aggregate(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(mean_aggregate(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn mean_matches_componentwise_sums() {
        let mut rng = derive_stream(11, StreamKind::Trial, 0);
        let msgs: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let m = mean_aggregate(&msgs).unwrap();
        for i in 0..4 {
            let s: f64 = msgs.iter().map(|v| v[i]).sum();
            assert!((m[i] - s / 100.0).abs() <= 1e-12);
        }
    }

    /// Independent geometric-median oracle: coarse grid over the bounding
    /// box, then repeated local grid refinement around the incumbent.
    pub(crate) fn grid_geomed_oracle(messages: &[Vec<f64>]) -> (Vec<f64>, f64) {
        let dim = messages[0].len();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for m in messages {
            for i in 0..dim {
                lo[i] = lo[i].min(m[i]);
                hi[i] = hi[i].max(m[i]);
            }
        }
        let mut center: Vec<f64> =
            lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut h: f64 = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| b - a)
            .fold(0.0f64, f64::max)
            .max(1e-12)
            / 2.0;
        let mut best = geomed_objective(&center, messages);
        // 5^dim local stencil, halving the spacing each round: final spacing
        // ~ h0 * 2^-45 leaves the objective accurate to well under 1e-9.
        for _ in 0..45 {
            let mut improved = true;
            while improved {
                improved = false;
                let mut probe = center.clone();
                let offsets: Vec<i32> = vec![-2, -1, 0, 1, 2];
                let mut idx = vec![0usize; dim];
                loop {
                    for d in 0..dim {
                        probe[d] = center[d] + offsets[idx[d]] as f64 * h;
                    }
                    let obj = geomed_objective(&probe, messages);
                    if obj < best {
                        best = obj;
                        center = probe.clone();
                        improved = true;
                    }
                    let mut d = 0;
                    loop {
                        if d == dim {
                            break;
                        }
                        idx[d] += 1;
                        if idx[d] < offsets.len() {
                            break;
                        }
                        idx[d] = 0;
                        d += 1;
                    }
                    if d == dim {
                        break;
                    }
                }
            }
            h /= 2.0;
        }
        (center, best)
    }

    #[test]
    fn geomed_single_point_and_1d_median() {
        let p = GeoMedParams::default();
        let one = geometric_median(&[vec![3.0, -1.0]], &p).unwrap();
        assert!(dist(&one.point, &[3.0, -1.0]) <= 1e-12);
        // 1D geometric median is a median; {0, 0, 10} -> 0
        let med = geometric_median(&[vec![0.0], vec![0.0], vec![10.0]], &p).unwrap();
        assert!(med.point[0].abs() <= 1e-4, "got {}", med.point[0]);
    }

    #[test]
    fn geomed_triangle_matches_grid_oracle() {
        let msgs = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let p = GeoMedParams { epsilon: 1e-9, max_iterations: 2000, ..Default::default() };
        let got = geometric_median(&msgs, &p).unwrap();
        let (oracle_pt, oracle_obj) = grid_geomed_oracle(&msgs);
        assert!(dist(&got.point, &oracle_pt) <= 1e-5);
        assert!((got.objective - oracle_obj).abs() <= 1e-7);
    }

    #[test]
    fn geomed_objective_trace_monotone() {
        let mut rng = derive_stream(12, StreamKind::Trial, 0);
        for _ in 0..50 {
            let w = rng.gen_range(2..9);
            let msgs: Vec<Vec<f64>> = (0..w)
                .map(|_| (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect())
                .collect();
            let out = geometric_median(&msgs, &GeoMedParams::default()).unwrap();
            for pair in out.objective_trace.windows(2) {
                // tiny relative slack for float rounding in the objective sum
                assert!(
                    pair[1] <= pair[0] * (1.0 + 1e-12),
                    "objective rose: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn geomed_coincident_mean_terminates() {
        let p = GeoMedParams::default();
        let msgs = vec![vec![1.0, 2.0]; 5];
        let out = geometric_median(&msgs, &p).unwrap();
        assert_eq!(out.point, vec![1.0, 2.0]);
        assert!(out.iterations <= 2);
    }

    #[test]
    fn krum_identical_and_tiebreak() {
        let same = vec![vec![2.0, 2.0]; 5];
        assert_eq!(krum(&same, 1).unwrap(), vec![2.0, 2.0]);
        // scores {1, 1, 1, 64}: first of the tied minima wins
        let msgs = vec![vec![0.0], vec![1.0], vec![2.0], vec![10.0]];
        assert_eq!(krum(&msgs, 1).unwrap(), vec![0.0]);
    }

    #[test]
    fn krum_matches_bruteforce_scores() {
        let mut rng = derive_stream(13, StreamKind::Trial, 0);
        for _ in 0..30 {
            let w = rng.gen_range(5..10);
            let b = rng.gen_range(0..(w - 2).min(3));
            let msgs: Vec<Vec<f64>> = (0..w)
                .map(|_| (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect();
            let got = krum(&msgs, b).unwrap();
            // independent score computation
            let n = w - b - 2;
            let mut best = (f64::INFINITY, 0usize);
            for i in 0..w {
                let mut d: Vec<f64> =
                    (0..w).filter(|&j| j != i).map(|j| dist_sq(&msgs[i], &msgs[j])).collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let score: f64 = d[..n].iter().sum();
                if score < best.0 {
                    best = (score, i);
                }
            }
            assert_eq!(got, msgs[best.1]);
        }
    }

    #[test]
    fn krum_needs_enough_workers() {
        let msgs = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(krum(&msgs, 1).is_err()); // W - B - 2 = 0
        assert!(krum(&msgs, 0).is_ok());
    }

    #[test]
    fn resample_s1_is_permutation() {
        let msgs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, -(i as f64)]).collect();
        let mut rng = derive_stream(14, StreamKind::Resample, 0);
        let out = resample(&msgs, &ResampleParams { s: 1 }, &mut rng).unwrap();
        let mut sorted_in = msgs.clone();
        let mut sorted_out = out.clone();
        sorted_in.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted_out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sorted_in, sorted_out); // bitwise: slot mean of one message
    }

    #[test]
    fn resample_identical_inputs_fixed_point() {
        let msgs = vec![vec![2.5, -1.0]; 5];
        let mut rng = derive_stream(15, StreamKind::Resample, 0);
        let out = resample(&msgs, &ResampleParams { s: 3 }, &mut rng).unwrap();
        assert!(out.iter().all(|m| *m == vec![2.5, -1.0]));
    }

    #[test]
    fn resample_monte_carlo_matches_identities_w6_s2() {
        // d = (W-1)/(sW-1) = 5/11 for W=6, s=2
        let msgs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let pop_mean = 2.5;
        let pop_var: f64 =
            msgs.iter().map(|m| (m[0] - pop_mean) * (m[0] - pop_mean)).sum::<f64>() / 6.0;
        let predicted = 5.0 / 11.0 * pop_var;
        let trials = 100_000;
        let mut mean_acc = vec![0.0f64; 6];
        let mut var_acc = vec![0.0f64; 6];
        for t in 0..trials {
            let mut rng = derive_stream(100, StreamKind::Trial, t);
            let out = resample(&msgs, &ResampleParams { s: 2 }, &mut rng).unwrap();
            for (slot, m) in out.iter().enumerate() {
                mean_acc[slot] += m[0];
                var_acc[slot] += (m[0] - pop_mean) * (m[0] - pop_mean);
            }
        }
        for slot in 0..6 {
            let m = mean_acc[slot] / trials as f64;
            let v = var_acc[slot] / trials as f64;
            assert!((m - pop_mean).abs() / pop_mean <= 0.02, "slot {slot} mean {m}");
            assert!((v - predicted).abs() / predicted <= 0.05, "slot {slot} var {v}");
        }
    }

    #[test]
    fn geomed_translation_equivariance() {
        let mut rng = derive_stream(16, StreamKind::Trial, 0);
        for _ in 0..20 {
            let w = rng.gen_range(3..8);
            let msgs: Vec<Vec<f64>> = (0..w)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let t: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let shifted: Vec<Vec<f64>> = msgs
                .iter()
                .map(|m| m.iter().zip(&t).map(|(a, b)| a + b).collect())
                .collect();
            let p = GeoMedParams { epsilon: 1e-10, max_iterations: 500, ..Default::default() };
            let a = geometric_median(&msgs, &p).unwrap().point;
            let b = geometric_median(&shifted, &p).unwrap().point;
            let back: Vec<f64> = b.iter().zip(&t).map(|(x, y)| x - y).collect();
            assert!(dist(&a, &back) <= 1e-8, "equivariance gap {}", dist(&a, &back));
        }
    }

    #[test]
    fn geomed_stays_in_1d_hull() {
        let mut rng = derive_stream(17, StreamKind::Trial, 0);
        for _ in 0..50 {
            let w = rng.gen_range(2..7);
            let msgs: Vec<Vec<f64>> =
                (0..w).map(|_| vec![rng.gen_range(-5.0..5.0)]).collect();
            let out = geometric_median(&msgs, &GeoMedParams::default()).unwrap();
            let lo = msgs.iter().map(|m| m[0]).fold(f64::INFINITY, f64::min);
            let hi = msgs.iter().map(|m| m[0]).fold(f64::NEG_INFINITY, f64::max);
            assert!(out.point[0] >= lo - 1e-9 && out.point[0] <= hi + 1e-9);
        }
    }

    #[test]
    fn geomed_stays_in_2d_hull() {
        // point-in-hull via support function: for any direction u,
        // <z, u> <= max_i <g_i, u> must hold (checked on many directions)
        let mut rng = derive_stream(18, StreamKind::Trial, 0);
        for _ in 0..20 {
            let w = rng.gen_range(3..8);
            let msgs: Vec<Vec<f64>> = (0..w)
                .map(|_| (0..2).map(|_| rng.gen_range(-4.0..4.0)).collect())
                .collect();
            let z = geometric_median(&msgs, &GeoMedParams::default()).unwrap().point;
            for k in 0..360 {
                let th = k as f64 * std::f64::consts::PI / 180.0;
                let u = [th.cos(), th.sin()];
                let zu = z[0] * u[0] + z[1] * u[1];
                let support = msgs
                    .iter()
                    .map(|m| m[0] * u[0] + m[1] * u[1])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(zu <= support + 1e-8);
            }
        }
    }

    #[test]
    fn geomed_gap_estimate_reported() {
        let msgs = vec![vec![0.0], vec![1.0], vec![5.0]];
        let out = geometric_median(&msgs, &GeoMedParams::default()).unwrap();
        assert!(out.gap_estimate >= 0.0 && out.gap_estimate.is_finite());
        assert!(norm(&out.point) <= 5.0);
    }
}
