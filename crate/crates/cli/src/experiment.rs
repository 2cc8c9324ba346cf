//! Building a problem from a config and driving the full
//! (algorithm x seed) grid, with a manifest that records final metrics and
//! whichever convergence bounds actually apply to the configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::Serialize;

use byrd::attacks::AttackKind;
use byrd::cohort::Cohort;
use byrd::engine::{run, AlgorithmKind, MetricsRow, Problem, RunOptions};
use byrd::models::{
    measure_variations, partition, synthetic_blobs, BlobSpec, Dataset, ModelOracle,
    PartitionScheme, WorkerShard,
};
use byrd::theorycheck::{bounds, constants, BoundInputs, BoundReport, RobustnessConstants};

use crate::config::{DatasetSource, ExperimentConfig, ModelKind, PartitionMode};
use crate::metrics::metrics_to_string;

/// Everything deterministic that is shared by all runs of an experiment.
pub struct BuiltExperiment {
    pub data: Dataset,
    pub eval_data: Option<Dataset>,
    pub oracle: ModelOracle,
    pub shards: Vec<WorkerShard>,
    /// Samples dropped by the partitioner to equalize shard sizes.
    pub dropped: usize,
    pub cohort: Cohort,
    pub attack: AttackKind,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Materialize dataset, model, shards and cohort. Relative paths resolve
/// against `base_dir` (the config file's directory).
pub fn build(config: &ExperimentConfig, base_dir: &Path) -> Result<BuiltExperiment> {
    config.validate()?;
    let ds = &config.dataset;
    let data = match ds.source {
        DatasetSource::SyntheticBlobs => {
            let spec = BlobSpec {
                classes: ds.classes.expect("validated"),
                per_class: ds.per_class.expect("validated"),
                feature_dim: ds.feature_dim.expect("validated"),
                centers: ds.centers.clone(),
                center_spread: ds.center_spread.unwrap_or(5.0),
                noise: ds.noise.unwrap_or(1.0),
            };
            synthetic_blobs(&spec, ds.seed.unwrap_or(0))?
        }
        DatasetSource::File => {
            let path = resolve(base_dir, ds.path.as_ref().expect("validated"));
            Dataset::load_text(&path, ds.num_classes)
                .with_context(|| format!("loading {}", path.display()))?
        }
    };
    let eval_data = ds
        .eval_path
        .as_ref()
        .map(|p| {
            let path = resolve(base_dir, p);
            let eval = Dataset::load_text(&path, Some(data.num_classes()))
                .with_context(|| format!("loading {}", path.display()))?;
            ensure!(
                eval.feature_dim() == data.feature_dim(),
                "eval set has feature dim {}, training set {}",
                eval.feature_dim(),
                data.feature_dim()
            );
            Ok(eval)
        })
        .transpose()?;

    let model = &config.model;
    let oracle = match model.kind {
        ModelKind::Quadratic => {
            let curvature = match &model.curvature {
                None => vec![1.0; data.feature_dim()],
                Some(c) if c.len() == 1 => vec![c[0]; data.feature_dim()],
                Some(c) => {
                    ensure!(
                        c.len() == data.feature_dim(),
                        "model.curvature has {} entries for feature dim {}",
                        c.len(),
                        data.feature_dim()
                    );
                    c.clone()
                }
            };
            ModelOracle::quadratic(curvature)?
        }
        ModelKind::Softmax => ModelOracle::softmax(data.feature_dim(), data.num_classes())?,
        ModelKind::Mlp => {
            let hidden = model.hidden.expect("validated");
            ModelOracle::mlp2_tanh(data.feature_dim(), data.num_classes(), hidden)?
        }
    };
    oracle.check_compat(&data)?;

    let scheme = match config.partition.mode {
        PartitionMode::Iid => PartitionScheme::IidUniform,
        PartitionMode::ClassSharded => PartitionScheme::ClassSharded {
            workers_per_class: config.partition.workers_per_class.expect("validated"),
        },
    };
    let part = partition(&data, config.cohort.workers, &scheme, config.partition.seed)?;
    let cohort = if config.cohort.byzantine.is_empty() {
        Cohort::all_regular(config.cohort.workers)?
    } else {
        Cohort::new(config.cohort.workers, config.cohort.byzantine.iter().copied())?
    };
    Ok(BuiltExperiment {
        data,
        eval_data,
        oracle,
        shards: part.shards,
        dropped: part.dropped,
        cohort,
        attack: config.attack.to_attack()?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub algorithm: AlgorithmKind,
    pub seed: u64,
    pub metrics_file: String,
    pub diverged: bool,
    /// The last recorded row, if any evaluation happened before the run
    /// ended.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_row: Option<MetricsRow>,
}

/// Which convergence bounds apply to this configuration and their values,
/// with the variations measured at the closed-form optimum.
#[derive(Clone, Debug, Serialize)]
pub struct TheoryBlock {
    pub constants: RobustnessConstants,
    pub bound_applicable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Outer variation delta^2 at the optimum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_delta_sq: Option<f64>,
    /// Inner variation sigma^2 (max over workers) at the optimum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_sigma_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundReport>,
}

#[derive(Serialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub dropped_samples: usize,
    pub runs: Vec<RunRecord>,
    pub theory: TheoryBlock,
}

fn theory_block(config: &ExperimentConfig, built: &BuiltExperiment) -> Result<TheoryBlock> {
    let consts = constants(
        built.cohort.num_workers(),
        built.cohort.num_byzantine(),
        config.engine.s,
    )?;
    let (mu, smoothness) = (built.oracle.strong_convexity(), built.oracle.smoothness());
    let mut block = TheoryBlock {
        constants: consts.clone(),
        bound_applicable: false,
        reason: None,
        measured_delta_sq: None,
        measured_sigma_sq: None,
        bounds: None,
    };
    if !consts.tolerable_resampled {
        block.reason = Some(format!(
            "2sB = {} >= W = {}: beyond the tolerable Byzantine fraction",
            2 * config.engine.s * built.cohort.num_byzantine(),
            built.cohort.num_workers()
        ));
        return Ok(block);
    }
    let (Some(mu), Some(smoothness)) = (mu, smoothness) else {
        block.reason = Some(
            "strong convexity and smoothness constants unavailable for this model kind"
                .to_string(),
        );
        return Ok(block);
    };
    let x_star = built
        .oracle
        .closed_form_optimum(&built.data, &built.shards, &built.cohort)
        .expect("quadratic oracles have a closed-form optimum");
    let variations =
        measure_variations(&built.oracle, &x_star, &built.data, &built.shards, &built.cohort)?;
    let inputs = BoundInputs {
        mu,
        smoothness,
        local_size: built.shards[0].samples.len(),
        regular: built.cohort.num_regular(),
        delta_sq: variations.outer_sq,
        sigma_sq: variations.inner_sq_max,
        epsilon: config.engine.geomed.epsilon,
    };
    block.bound_applicable = true;
    block.measured_delta_sq = Some(variations.outer_sq);
    block.measured_sigma_sq = Some(variations.inner_sq_max);
    block.bounds = Some(bounds(&consts, &inputs)?);
    Ok(block)
}

/// Run the whole grid, write one metrics CSV per run plus `manifest.toml`
/// into the output directory, and return the manifest.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path) -> Result<Manifest> {
    let built = build(config, base_dir)?;
    let out_dir = resolve(base_dir, &config.output_dir);
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let mut runs = Vec::new();
    for &algorithm in &config.algorithms {
        for &seed in &config.seeds {
            let engine_config = config.engine.to_engine_config(seed);
            let problem = Problem {
                oracle: &built.oracle,
                data: &built.data,
                shards: &built.shards,
                cohort: &built.cohort,
            };
            let options = RunOptions { x0: None, eval_data: built.eval_data.as_ref() };
            let trace = run(algorithm, &engine_config, &problem, &built.attack, &options)
                .with_context(|| format!("running {algorithm} seed {seed}"))?;
            let metrics_file = format!("{algorithm}-seed{seed}.csv");
            fs::write(out_dir.join(&metrics_file), metrics_to_string(&trace.rows))
                .with_context(|| format!("writing {metrics_file}"))?;
            runs.push(RunRecord {
                algorithm,
                seed,
                metrics_file,
                diverged: trace.diverged,
                final_row: trace.rows.last().cloned(),
            });
        }
    }

    let manifest = Manifest {
        config: config.clone(),
        dropped_samples: built.dropped,
        runs,
        theory: theory_block(config, &built)?,
    };
    let text = toml::to_string_pretty(&manifest).context("serializing manifest")?;
    fs::write(out_dir.join("manifest.toml"), text).context("writing manifest.toml")?;
    Ok(manifest)
}
