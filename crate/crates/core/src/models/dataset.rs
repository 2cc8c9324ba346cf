//! Dataset container, plain-text loader, and synthetic blob generator.
//!
//! Text format: one sample per line, `label,feat1,feat2,...`, all fields
//! decimal. Blank lines are skipped; everything else is strict and parse
//! errors carry 1-based line numbers.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{derive_stream, StreamKind};
use crate::vecmath::all_finite;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

/// Immutable sample store. `num_classes > 0` declares a classification
/// problem and every label must then be an integer in `[0, num_classes)`;
/// `num_classes == 0` leaves labels as free reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    feature_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        let feature_dim = samples[0].features.len();
        if feature_dim == 0 {
            return Err(Error::EmptyInput("sample features"));
        }
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    got: s.features.len(),
                });
            }
            if !all_finite(&s.features) || !s.label.is_finite() {
                return Err(Error::NonFinite("dataset sample"));
            }
            if num_classes > 0 {
                let ok = s.label >= 0.0
                    && s.label.fract() == 0.0
                    && (s.label as usize) < num_classes;
                if !ok {
                    return Err(Error::invalid(format!(
                        "label {} outside declared class range 0..{}",
                        s.label, num_classes
                    )));
                }
            }
        }
        Ok(Dataset { samples, feature_dim, num_classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty datasets
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> Result<&Sample> {
        self.samples.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.samples.len() })
    }

    /// Class index of sample `i`. Only meaningful when `num_classes > 0`
    /// (construction has then validated integrality and range).
    pub fn class(&self, i: usize) -> usize {
        debug_assert!(self.num_classes > 0);
        self.samples[i].label as usize
    }

    /// Parse the text format. `declared_classes` fixes the class count (and
    /// label validation); `None` infers it: if every label is a non-negative
    /// integer the count is `max label + 1`, otherwise 0 (real labels).
    pub fn parse_text(text: &str, declared_classes: Option<usize>) -> Result<Self> {
        let mut samples = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let mut fields = line.split(',');
            let label = parse_field(fields.next().unwrap_or(""), lineno, "label")?;
            let features = fields
                .map(|f| parse_field(f, lineno, "feature"))
                .collect::<Result<Vec<f64>>>()?;
            if features.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "sample has no features".into(),
                });
            }
            samples.push(Sample { features, label });
        }
        let classes = match declared_classes {
            Some(c) => c,
            None => infer_classes(&samples),
        };
        Dataset::new(samples, classes)
    }

    pub fn load_text(path: impl AsRef<Path>, declared_classes: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Dataset::parse_text(&text, declared_classes)
    }
}

fn parse_field(field: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {what} `{field}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("non-finite {what}") });
    }
    Ok(v)
}

fn infer_classes(samples: &[Sample]) -> usize {
    let mut max = -1.0f64;
    for s in samples {
        if s.label < 0.0 || s.label.fract() != 0.0 {
            return 0;
        }
        max = max.max(s.label);
    }
    if max < 0.0 {
        0
    } else {
        max as usize + 1
    }
}

/// Per-class Gaussian blob generator for synthetic classification problems.
#[derive(Clone, Debug)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub feature_dim: usize,
    /// Explicit class centers; when `None` they are drawn uniformly from
    /// `[-center_spread, center_spread]^dim`.
    pub centers: Option<Vec<Vec<f64>>>,
    pub center_spread: f64,
    /// Per-coordinate noise standard deviation around the class center.
    pub noise: f64,
}

/// Deterministic for a fixed spec and seed: centers (when drawn) consume the
/// stream class by class, then samples are emitted class-major with
/// coordinates in order.
pub fn synthetic_blobs(spec: &BlobSpec, seed: u64) -> Result<Dataset> {
    if spec.classes == 0 || spec.per_class == 0 || spec.feature_dim == 0 {
        return Err(Error::invalid("blob spec needs classes, per_class and feature_dim >= 1"));
    }
    if !(spec.noise >= 0.0 && spec.center_spread >= 0.0) {
        return Err(Error::invalid("blob noise and center_spread must be >= 0"));
    }
    let mut rng = derive_stream(seed, StreamKind::Data, 0);
    let centers = match &spec.centers {
        Some(cs) => {
            if cs.len() != spec.classes {
                return Err(Error::DimensionMismatch { expected: spec.classes, got: cs.len() });
            }
            for c in cs {
                if c.len() != spec.feature_dim {
                    return Err(Error::DimensionMismatch {
                        expected: spec.feature_dim,
                        got: c.len(),
                    });
                }
            }
            cs.clone()
        }
        None => (0..spec.classes)
            .map(|_| {
                (0..spec.feature_dim)
                    .map(|_| rng.gen_range(-spec.center_spread..=spec.center_spread))
                    .collect()
            })
            .collect(),
    };
    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            let features = center
                .iter()
                .map(|&c| c + spec.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push(Sample { features, label: class as f64 });
        }
    }
    Dataset::new(samples, spec.classes)
}
