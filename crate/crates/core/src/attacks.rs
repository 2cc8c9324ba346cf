//! Byzantine attack models. Every Byzantine worker first runs the honest
//! pipeline on its own shard (producing its "true" message); the attack then
//! replaces the transmitted copy. Regular workers' messages pass through
//! untouched, bit for bit, and keep their position in the message list.

use rand::Rng;
use rand_distr::Normal;

use crate::cohort::Message;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum AttackKind {
    /// No replacement; Byzantine workers transmit their true messages.
    None,
    /// Transmit scale * true message (the classic choice is scale = -5).
    SignFlip { scale: f64 },
    /// Transmit i.i.d. Gaussian coordinates, N(mean, variance).
    Gaussian { mean: f64, variance: f64 },
    /// Transmit a copy of the target regular worker's transmitted message
    /// (its final post-correction message, so under SAGA the duplicated
    /// vector is the corrected one).
    SampleDuplicate { target: usize },
}

impl AttackKind {
    pub const DEFAULT_SIGN_FLIP_SCALE: f64 = -5.0;
    pub const DEFAULT_GAUSSIAN_MEAN: f64 = 0.0;
    pub const DEFAULT_GAUSSIAN_VARIANCE: f64 = 10_000.0;
}

/// An attack plus the set of workers executing it.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub byzantine: Vec<usize>,
}

impl AttackSpec {
    pub fn none() -> Self {
        AttackSpec { kind: AttackKind::None, byzantine: Vec::new() }
    }

    fn validate(&self, messages: &[Message]) -> Result<()> {
        for &id in &self.byzantine {
            if !messages.iter().any(|m| m.worker_id == id) {
                return Err(Error::invalid(format!("byzantine worker {id} sent no message")));
            }
        }
        if let AttackKind::Gaussian { variance, .. } = self.kind {
            if !(variance >= 0.0) {
                return Err(Error::invalid("gaussian attack variance must be >= 0"));
            }
        }
        if let AttackKind::SampleDuplicate { target } = self.kind {
            if self.byzantine.contains(&target) {
                return Err(Error::invalid(format!(
                    "sample-duplicate target {target} must be a regular worker"
                )));
            }
            if !messages.iter().any(|m| m.worker_id == target) {
                return Err(Error::invalid(format!(
                    "sample-duplicate target {target} sent no message"
                )));
            }
        }
        Ok(())
    }
}

/// Apply the attack to a round of messages. Gaussian draws consume the
/// attack stream per Byzantine worker in ascending worker-id order,
/// coordinates in order, so the outcome does not depend on message order.
pub fn apply(spec: &AttackSpec, messages: &[Message], rng: &mut impl Rng) -> Result<Vec<Message>> {
    spec.validate(messages)?;
    let mut out = messages.to_vec();
    if matches!(spec.kind, AttackKind::None) || spec.byzantine.is_empty() {
        return Ok(out);
    }
    let mut byz: Vec<usize> = spec.byzantine.clone();
    byz.sort_unstable();
    byz.dedup();
    for id in byz {
        let pos = out.iter().position(|m| m.worker_id == id).unwrap();
        match spec.kind {
            AttackKind::None => unreachable!(),
            AttackKind::SignFlip { scale } => {
                for v in out[pos].values.iter_mut() {
                    *v *= scale;
                }
            }
            AttackKind::Gaussian { mean, variance } => {
                let normal = Normal::new(mean, variance.sqrt())
                    .map_err(|e| Error::invalid(format!("gaussian attack: {e}")))?;
                for v in out[pos].values.iter_mut() {
                    *v = rng.sample(normal);
                }
            }
            AttackKind::SampleDuplicate { target } => {
                let src = messages.iter().find(|m| m.worker_id == target).unwrap();
                out[pos].values = src.values.clone();
            }
        }
        out[pos].honest = false;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, StreamKind};

    fn round(values: &[Vec<f64>]) -> Vec<Message> {
        values
            .iter()
            .enumerate()
            .map(|(id, v)| Message::honest(id, v.clone()))
            .collect()
    }

    #[test]
    fn sign_flip_scales_by_c() {
        let msgs = round(&[vec![1.0, -2.0], vec![3.0, 4.0]]);
        let spec = AttackSpec {
            kind: AttackKind::SignFlip { scale: -5.0 },
            byzantine: vec![0],
        };
        let mut rng = derive_stream(0, StreamKind::Attack, 0);
        let out = apply(&spec, &msgs, &mut rng).unwrap();
        assert_eq!(out[0].values, vec![-5.0, 10.0]);
        assert!(!out[0].honest);
        assert_eq!(out[1].values, vec![3.0, 4.0]);
        assert!(out[1].honest);
    }

    #[test]
    fn none_is_identity_even_with_byzantine_listed() {
        let msgs = round(&[vec![1.0], vec![2.0]]);
        let spec = AttackSpec { kind: AttackKind::None, byzantine: vec![1] };
        let mut rng = derive_stream(0, StreamKind::Attack, 0);
        let out = apply(&spec, &msgs, &mut rng).unwrap();
        assert_eq!(out, msgs);
    }

    #[test]
    fn duplicate_copies_target_bitwise() {
        let target_values = vec![0.1 + 0.2, -7.25, 1e-300]; // deliberately awkward floats
        let msgs = round(&[vec![9.0, 9.0, 9.0], target_values.clone(), vec![0.0, 0.0, 0.0]]);
        let spec = AttackSpec {
            kind: AttackKind::SampleDuplicate { target: 1 },
            byzantine: vec![0, 2],
        };
        let mut rng = derive_stream(0, StreamKind::Attack, 0);
        let out = apply(&spec, &msgs, &mut rng).unwrap();
        for id in [0usize, 2] {
            assert_eq!(out[id].values, target_values);
            assert!(!out[id].honest);
        }
        assert_eq!(out[1].values, target_values);
        assert!(out[1].honest);
    }

    #[test]
    fn duplicate_target_must_be_regular_and_present() {
        let msgs = round(&[vec![1.0], vec![2.0]]);
        let bad = AttackSpec {
            kind: AttackKind::SampleDuplicate { target: 1 },
            byzantine: vec![1],
        };
        let mut rng = derive_stream(0, StreamKind::Attack, 0);
        assert!(apply(&bad, &msgs, &mut rng).is_err());
        let missing = AttackSpec {
            kind: AttackKind::SampleDuplicate { target: 7 },
            byzantine: vec![0],
        };
        assert!(apply(&missing, &msgs, &mut rng).is_err());
    }

    #[test]
    fn gaussian_moments_match_at_1e5_draws() {
        let coords = 100_000usize;
        let msgs = vec![
            Message::honest(0, vec![0.0; coords]),
            Message::honest(1, vec![5.0; 4]),
        ];
        let spec = AttackSpec {
            kind: AttackKind::Gaussian {
                mean: AttackKind::DEFAULT_GAUSSIAN_MEAN,
                variance: AttackKind::DEFAULT_GAUSSIAN_VARIANCE,
            },
            byzantine: vec![0],
        };
        let mut rng = derive_stream(21, StreamKind::Attack, 0);
        let out = apply(&spec, &msgs, &mut rng).unwrap();
        let n = coords as f64;
        let mean: f64 = out[0].values.iter().sum::<f64>() / n;
        let var: f64 =
            out[0].values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() <= 1.0, "sample mean {mean}");
        assert!((var - 10_000.0).abs() / 10_000.0 <= 0.03, "sample variance {var}");
        assert_eq!(out[1].values, vec![5.0; 4]); // regulars untouched
    }

    #[test]
    fn gaussian_is_deterministic_per_stream() {
        let msgs = round(&[vec![0.0; 8], vec![1.0; 8]]);
        let spec = AttackSpec {
            kind: AttackKind::Gaussian { mean: 0.0, variance: 100.0 },
            byzantine: vec![0],
        };
        let mut r1 = derive_stream(3, StreamKind::Attack, 0);
        let mut r2 = derive_stream(3, StreamKind::Attack, 0);
        let a = apply(&spec, &msgs, &mut r1).unwrap();
        let b = apply(&spec, &msgs, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_byzantine_set_is_noop_for_any_kind() {
        let msgs = round(&[vec![1.0], vec![2.0]]);
        for kind in [
            AttackKind::SignFlip { scale: -5.0 },
            AttackKind::Gaussian { mean: 0.0, variance: 1.0 },
        ] {
            let spec = AttackSpec { kind, byzantine: vec![] };
            let mut rng = derive_stream(0, StreamKind::Attack, 0);
            assert_eq!(apply(&spec, &msgs, &mut rng).unwrap(), msgs);
        }
    }

    #[test]
    fn positions_are_stable() {
        let msgs = round(&[vec![1.0], vec![2.0], vec![3.0]]);
        let spec = AttackSpec {
            kind: AttackKind::SignFlip { scale: -1.0 },
            byzantine: vec![2, 0],
        };
        let mut rng = derive_stream(0, StreamKind::Attack, 0);
        let out = apply(&spec, &msgs, &mut rng).unwrap();
        let ids: Vec<usize> = out.iter().map(|m| m.worker_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(out[1].values, vec![2.0]);
    }
}
