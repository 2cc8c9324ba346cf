//! The TOML experiment schema and its validation.
//!
//! Unknown keys are rejected everywhere so a typo cannot silently fall back
//! to a default, and every section re-serializes to an equivalent document
//! (the manifest embeds the resolved config this way).

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use byrd::aggregation::GeoMedParams;
use byrd::attacks::AttackKind;
use byrd::engine::{AlgorithmKind, EngineConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Where metrics files and the manifest go; a relative path is resolved
    /// against the config file's directory.
    pub output_dir: PathBuf,
    /// One full run per (algorithm, seed) pair.
    pub seeds: Vec<u64>,
    pub algorithms: Vec<AlgorithmKind>,
    pub model: ModelSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub partition: PartitionSection,
    pub cohort: CohortSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub engine: EngineSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Least squares against each sample's feature vector; the one model
    /// with known strong-convexity and smoothness constants.
    Quadratic,
    /// Multinomial logistic regression.
    Softmax,
    /// Two tanh hidden layers + softmax output.
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Quadratic only: per-coordinate curvature. A single value broadcasts
    /// to every coordinate; omitted means isotropic 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<Vec<f64>>,
    /// Mlp only: the two hidden-layer widths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<(usize, usize)>,
}

impl ModelSection {
    fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::Quadratic => {
                ensure!(self.hidden.is_none(), "model.hidden only applies to kind = \"mlp\"");
                if let Some(c) = &self.curvature {
                    ensure!(!c.is_empty(), "model.curvature must not be empty");
                    ensure!(
                        c.iter().all(|q| q.is_finite() && *q > 0.0),
                        "model.curvature entries must be finite and > 0"
                    );
                }
            }
            ModelKind::Softmax => {
                ensure!(self.curvature.is_none(), "model.curvature only applies to quadratic");
                ensure!(self.hidden.is_none(), "model.hidden only applies to kind = \"mlp\"");
            }
            ModelKind::Mlp => {
                ensure!(self.curvature.is_none(), "model.curvature only applies to quadratic");
                let (h1, h2) = self.hidden.context("model.hidden required for kind = \"mlp\"")?;
                ensure!(h1 >= 1 && h2 >= 1, "model.hidden widths must be >= 1");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    /// Gaussian class blobs generated from `dataset.seed`.
    SyntheticBlobs,
    /// Whitespace-separated text: one sample per line, features then label.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    // synthetic-blobs fields
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_spread: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    // file fields
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// File source: the declared class count (0 = unlabeled regression
    /// data); omitted means infer from the labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    /// Optional held-out set evaluated instead of the training shards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_path: Option<PathBuf>,
}

impl DatasetSection {
    fn validate(&self) -> Result<()> {
        match self.source {
            DatasetSource::SyntheticBlobs => {
                ensure!(self.path.is_none(), "dataset.path only applies to source = \"file\"");
                ensure!(
                    self.num_classes.is_none(),
                    "dataset.num-classes only applies to source = \"file\""
                );
                let classes = self.classes.context("dataset.classes required for blobs")?;
                let per_class = self.per_class.context("dataset.per-class required for blobs")?;
                let dim = self.feature_dim.context("dataset.feature-dim required for blobs")?;
                ensure!(
                    classes >= 1 && per_class >= 1 && dim >= 1,
                    "dataset.classes, per-class and feature-dim must be >= 1"
                );
                if let Some(centers) = &self.centers {
                    ensure!(
                        centers.len() == classes && centers.iter().all(|c| c.len() == dim),
                        "dataset.centers must be {classes} vectors of length {dim}"
                    );
                }
            }
            DatasetSource::File => {
                ensure!(self.path.is_some(), "dataset.path required for source = \"file\"");
                for (name, set) in [
                    ("classes", self.classes.is_some()),
                    ("per-class", self.per_class.is_some()),
                    ("feature-dim", self.feature_dim.is_some()),
                    ("centers", self.centers.is_some()),
                    ("center-spread", self.center_spread.is_some()),
                    ("noise", self.noise.is_some()),
                    ("seed", self.seed.is_some()),
                ] {
                    ensure!(!set, "dataset.{name} only applies to source = \"synthetic-blobs\"");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    #[default]
    Iid,
    ClassSharded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct PartitionSection {
    pub mode: PartitionMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers_per_class: Option<usize>,
    /// Shuffling seed; fixed across run seeds so every algorithm sees the
    /// same shards.
    pub seed: u64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection { mode: PartitionMode::Iid, workers_per_class: None, seed: 0 }
    }
}

impl PartitionSection {
    fn validate(&self) -> Result<()> {
        match self.mode {
            PartitionMode::Iid => ensure!(
                self.workers_per_class.is_none(),
                "partition.workers-per-class only applies to mode = \"class-sharded\""
            ),
            PartitionMode::ClassSharded => {
                let g = self
                    .workers_per_class
                    .context("partition.workers-per-class required for class-sharded mode")?;
                ensure!(g >= 1, "partition.workers-per-class must be >= 1");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CohortSection {
    pub workers: usize,
    /// Worker ids that transmit attacked messages.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub byzantine: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackName {
    #[default]
    None,
    SignFlip,
    Gaussian,
    SampleDuplicate,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct AttackSection {
    pub kind: AttackName,
    /// sign-flip: multiplier applied to the honest message (default -5).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// gaussian: per-coordinate mean (default 0).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    /// gaussian: per-coordinate variance (default 10000).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    /// sample-duplicate: the regular worker whose message is copied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

impl AttackSection {
    pub fn to_attack(&self) -> Result<AttackKind> {
        let forbid = |name: &str, set: bool| {
            ensure!(!set, "attack.{name} does not apply to kind = {:?}", self.kind);
            Ok(())
        };
        match self.kind {
            AttackName::None => {
                forbid("scale", self.scale.is_some())?;
                forbid("mean", self.mean.is_some())?;
                forbid("variance", self.variance.is_some())?;
                forbid("target", self.target.is_some())?;
                Ok(AttackKind::None)
            }
            AttackName::SignFlip => {
                forbid("mean", self.mean.is_some())?;
                forbid("variance", self.variance.is_some())?;
                forbid("target", self.target.is_some())?;
                Ok(AttackKind::SignFlip {
                    scale: self.scale.unwrap_or(AttackKind::DEFAULT_SIGN_FLIP_SCALE),
                })
            }
            AttackName::Gaussian => {
                forbid("scale", self.scale.is_some())?;
                forbid("target", self.target.is_some())?;
                Ok(AttackKind::Gaussian {
                    mean: self.mean.unwrap_or(AttackKind::DEFAULT_GAUSSIAN_MEAN),
                    variance: self.variance.unwrap_or(AttackKind::DEFAULT_GAUSSIAN_VARIANCE),
                })
            }
            AttackName::SampleDuplicate => {
                forbid("scale", self.scale.is_some())?;
                forbid("mean", self.mean.is_some())?;
                forbid("variance", self.variance.is_some())?;
                let target =
                    self.target.context("attack.target required for sample-duplicate")?;
                Ok(AttackKind::SampleDuplicate { target })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct EngineSection {
    pub gamma: f64,
    pub s: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub eval_every: usize,
    pub lambda: f64,
    pub geomed: GeoMedParams,
}

impl Default for EngineSection {
    fn default() -> Self {
        let d = EngineConfig::default();
        EngineSection {
            gamma: d.gamma,
            s: d.s,
            batch_size: d.batch_size,
            iterations: d.iterations,
            eval_every: d.eval_every,
            lambda: d.lambda,
            geomed: d.geomed,
        }
    }
}

impl EngineSection {
    pub fn to_engine_config(&self, seed: u64) -> EngineConfig {
        EngineConfig {
            gamma: self.gamma,
            s: self.s,
            batch_size: self.batch_size,
            iterations: self.iterations,
            eval_every: self.eval_every,
            seed,
            lambda: self.lambda,
            geomed: self.geomed,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.seeds.is_empty(), "seeds must not be empty");
        ensure!(!self.algorithms.is_empty(), "algorithms must not be empty");
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        ensure!(seeds.len() == self.seeds.len(), "seeds contains duplicates");
        let mut algos = self.algorithms.clone();
        algos.sort_by_key(|a| a.name());
        algos.dedup();
        ensure!(algos.len() == self.algorithms.len(), "algorithms contains duplicates");
        ensure!(
            !self.output_dir.as_os_str().is_empty(),
            "output-dir must not be empty"
        );

        self.model.validate()?;
        self.dataset.validate()?;
        self.partition.validate()?;

        ensure!(self.cohort.workers >= 1, "cohort.workers must be >= 1");
        for &b in &self.cohort.byzantine {
            ensure!(
                b < self.cohort.workers,
                "cohort.byzantine id {b} out of range for {} workers",
                self.cohort.workers
            );
        }
        ensure!(
            self.cohort.byzantine.len() < self.cohort.workers,
            "at least one worker must be regular"
        );

        let attack = self.attack.to_attack()?;
        match (&attack, self.cohort.byzantine.is_empty()) {
            (AttackKind::None, false) => {
                bail!("cohort.byzantine is non-empty but attack.kind = \"none\"")
            }
            (AttackKind::None, true) => {}
            (_, true) => bail!("attack.kind set but cohort.byzantine is empty"),
            (AttackKind::SampleDuplicate { target }, false) => {
                ensure!(
                    *target < self.cohort.workers,
                    "attack.target {target} out of range for {} workers",
                    self.cohort.workers
                );
                ensure!(
                    !self.cohort.byzantine.contains(target),
                    "attack.target {target} must be a regular worker"
                );
            }
            _ => {}
        }
        if let AttackKind::Gaussian { variance, .. } = attack {
            ensure!(
                variance.is_finite() && variance >= 0.0,
                "attack.variance must be finite and >= 0"
            );
        }

        self.engine
            .to_engine_config(0)
            .validate()
            .context("in [engine]")?;
        Ok(())
    }
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

/// Read, parse and validate a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}
