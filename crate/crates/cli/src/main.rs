use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand};

use byrd::aggregation::GeoMedParams;
use byrd::theorycheck::{
    bounds, constants, error_curve, verify_geomed_bounds, verify_slot_deviation,
    verify_resampling_identities, verify_saga_variance_bound, BoundInputs, RandomSource,
};
use byrd_cli::{config, experiment};

#[derive(Parser)]
#[command(
    name = "byrd",
    version,
    about = "Byzantine-robust distributed learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) combination from a config file
    Run {
        /// TOML experiment config
        config: PathBuf,
    },
    /// Monte-Carlo verification of the aggregation identities and bounds
    Verify {
        /// Trials per Monte-Carlo check (tolerances scale as 1/sqrt)
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print robustness constants and convergence bounds for (W, B, s)
    Constants {
        /// Total workers
        #[arg(long = "W")]
        workers: usize,
        /// Byzantine workers
        #[arg(long = "B")]
        byzantine: usize,
        /// Resampling rate
        #[arg(long = "s", default_value_t = 2)]
        s: usize,
        /// Strong-convexity modulus
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        /// Smoothness constant
        #[arg(long = "L", default_value_t = 1.0)]
        smoothness: f64,
        /// Per-worker sample count
        #[arg(long = "J", default_value_t = 1)]
        local_size: usize,
        /// Regular workers (defaults to W - B)
        #[arg(long = "R")]
        regular: Option<usize>,
        /// Outer variation delta^2
        #[arg(long, default_value_t = 1.0)]
        delta_sq: f64,
        /// Inner variation sigma^2
        #[arg(long, default_value_t = 0.0)]
        sigma_sq: f64,
        /// Aggregation accuracy for the approximate variants
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
    /// CSV of learning-error coefficients d*C_sa^2 over an alpha grid
    Curve {
        /// Total workers
        #[arg(long = "W")]
        workers: usize,
        /// Comma-separated resampling rates
        #[arg(long = "s-list", value_delimiter = ',', default_value = "1,2")]
        s_list: Vec<usize>,
        /// Alpha grid as start:stop:step
        #[arg(long, default_value = "0:0.24:0.01")]
        grid: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config } => {
            cmd_run(&config)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { trials, seed } => Ok(if cmd_verify(trials, seed)? {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }),
        Command::Constants {
            workers,
            byzantine,
            s,
            mu,
            smoothness,
            local_size,
            regular,
            delta_sq,
            sigma_sq,
            epsilon,
        } => {
            cmd_constants(
                workers, byzantine, s, mu, smoothness, local_size, regular, delta_sq, sigma_sq,
                epsilon,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Curve { workers, s_list, grid } => {
            cmd_curve(workers, &s_list, &grid)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_run(config_path: &Path) -> Result<()> {
    let cfg = config::load_config(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let manifest = experiment::run_experiment(&cfg, base)?;
    for run in &manifest.runs {
        let outcome = match (&run.final_row, run.diverged) {
            (_, true) => "diverged".to_string(),
            (Some(row), false) => format!("final loss {:.6e}", row.loss),
            (None, false) => "no evaluations recorded".to_string(),
        };
        println!("{}-seed{}: {outcome} ({})", run.algorithm, run.seed, run.metrics_file);
    }
    let out = if cfg.output_dir.is_absolute() {
        cfg.output_dir.clone()
    } else {
        base.join(&cfg.output_dir)
    };
    println!("manifest: {}", out.join("manifest.toml").display());
    if !manifest.theory.bound_applicable {
        if let Some(reason) = &manifest.theory.reason {
            println!("note: convergence bounds not evaluated ({reason})");
        }
    }
    Ok(())
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn cmd_verify(trials: usize, seed: u64) -> Result<bool> {
    ensure!(trials >= 100, "need at least 100 trials for meaningful estimates");
    let root = trials as f64;
    let mean_tol = (4.0 / root.sqrt()).max(0.02);
    let var_tol = (5.0 / root.sqrt()).max(0.03);
    let gap_tol = (5.0 / root.sqrt()).max(0.05);
    let mut checks = Vec::new();

    // per-slot resampling moments on the worked 1-D example
    let vectors = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
    let rep = verify_resampling_identities(&vectors, 2, trials, seed)?;
    checks.push(Check {
        name: "resampling-slot-mean",
        pass: rep.max_mean_rel_error <= mean_tol,
        detail: format!(
            "max rel err {:.2e} <= {mean_tol:.2e} (closed form 1.5, {trials} trials)",
            rep.max_mean_rel_error
        ),
    });
    checks.push(Check {
        name: "resampling-slot-variance",
        pass: rep.max_variance_rel_error <= var_tol,
        detail: format!(
            "max rel err {:.2e} <= {var_tol:.2e} (closed form {:.6}, {trials} trials)",
            rep.max_variance_rel_error, rep.variance_closed_form
        ),
    });

    // slot mean-square deviation identity, three moment profiles
    let point_masses: Vec<RandomSource> =
        (0..4).map(|i| RandomSource::PointMass(vec![i as f64])).collect();
    let identical = vec![
        RandomSource::IsotropicGaussian { mean: vec![1.0, -2.0], coordinate_variance: 0.5 };
        4
    ];
    let mixed = vec![
        RandomSource::IsotropicGaussian { mean: vec![0.0], coordinate_variance: 1.0 },
        RandomSource::IsotropicGaussian { mean: vec![2.0], coordinate_variance: 0.25 },
        RandomSource::PointMass(vec![-1.0]),
        RandomSource::PointMass(vec![3.0]),
    ];
    for (name, sources) in [
        ("slot-deviation-point-mass", &point_masses),
        ("slot-deviation-identical", &identical),
        ("slot-deviation-mixed", &mixed),
    ] {
        let rep = verify_slot_deviation(sources, 2, trials, seed)?;
        checks.push(Check {
            name,
            pass: rep.rel_gap <= gap_tol,
            detail: format!(
                "rel gap {:.2e} <= {gap_tol:.2e} (lhs {:.6}, rhs {:.6}, {trials} trials)",
                rep.rel_gap, rep.lhs_estimate, rep.rhs_closed_form
            ),
        });
    }

    // geomed concentration: 5 honest Gaussians + 1 far adversary
    let honest: Vec<RandomSource> = (0..5)
        .map(|i| RandomSource::IsotropicGaussian {
            mean: vec![i as f64 - 2.0],
            coordinate_variance: 1.0,
        })
        .collect();
    let adversarial = vec![vec![1000.0]];
    let plain =
        verify_geomed_bounds(&honest, &adversarial, 1, &GeoMedParams::default(), 0.0, trials, seed)?;
    checks.push(Check {
        name: "geomed-bound",
        pass: plain.holds,
        detail: format!(
            "mse {:.4} <= rhs {:.4} (s=1, {trials} trials)",
            plain.empirical_mse, plain.bound_rhs
        ),
    });
    let resampled =
        verify_geomed_bounds(&honest, &adversarial, 2, &GeoMedParams::default(), 5.0, trials, seed)?;
    checks.push(Check {
        name: "geomed-bound-resampled",
        pass: resampled.holds,
        detail: format!(
            "mse {:.4} <= rhs {:.4} (s=2, {trials} trials)",
            resampled.empirical_mse, resampled.bound_rhs
        ),
    });
    let approx = resampled.approx.as_ref().expect("epsilon > 0 requested");
    checks.push(Check {
        name: "geomed-bound-approx",
        pass: approx.holds,
        detail: format!(
            "mse {:.4} <= rhs {:.4} (s=2, eps={}, {trials} trials)",
            approx.empirical_mse, approx.bound_rhs, approx.epsilon
        ),
    });

    // variance-reduction inequality by exact enumeration
    let saga = verify_saga_variance_bound(100, seed)?;
    checks.push(Check {
        name: "saga-variance-bound",
        pass: saga.violations == 0,
        detail: format!(
            "max ratio {:.4} <= 1 ({} configs, {} violations)",
            saga.max_ratio, saga.configs, saga.violations
        ),
    });

    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut all = true;
    for c in &checks {
        println!("{} {:width$} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.pass;
    }
    println!(
        "{}: {} of {} checks passed",
        if all { "ok" } else { "FAILED" },
        checks.iter().filter(|c| c.pass).count(),
        checks.len()
    );
    Ok(all)
}

#[allow(clippy::too_many_arguments)]
fn cmd_constants(
    workers: usize,
    byzantine: usize,
    s: usize,
    mu: f64,
    smoothness: f64,
    local_size: usize,
    regular: Option<usize>,
    delta_sq: f64,
    sigma_sq: f64,
    epsilon: f64,
) -> Result<()> {
    let consts = constants(workers, byzantine, s)?;
    let show = |v: Option<f64>| match v {
        Some(v) => format!("{v:.6}"),
        None => "n/a".to_string(),
    };
    println!("W = {workers}  B = {byzantine}  s = {s}  alpha = {:.6}", consts.alpha);
    println!("C_alpha                = {}", show(consts.c_alpha));
    println!("C_s_alpha              = {}", show(consts.c_s_alpha));
    println!("d                      = {:.6}", consts.d);
    println!(
        "tolerable              = geomed: {}, resampled: {}",
        if consts.tolerable_geomed { "yes (B < W/2)" } else { "no (B >= W/2)" },
        if consts.tolerable_resampled { "yes (B < W/2s)" } else { "no (B >= W/2s)" },
    );
    let inputs = BoundInputs {
        mu,
        smoothness,
        local_size,
        regular: regular.unwrap_or(workers - byzantine),
        delta_sq,
        sigma_sq,
        epsilon,
    };
    let rep = bounds(&consts, &inputs)?;
    println!(
        "inputs                 = mu {mu}, L {smoothness}, J {local_size}, R {}, delta^2 {delta_sq}, sigma^2 {sigma_sq}, eps {epsilon}",
        inputs.regular
    );
    println!("gamma_max (saga+rs)    = {}", show(rep.gamma_max_proposed));
    println!("gamma_max (eps aggr.)  = {}", show(rep.gamma_max_proposed_approx));
    println!("gamma_max (rs-sgd)     = {}", show(rep.gamma_max_rs_byrd_sgd));
    println!("learning error (saga+rs) = {}", show(rep.delta2_proposed));
    println!("learning error (rs-sgd)  = {}", show(rep.delta2_rs_byrd_sgd));
    println!("epsilon term (saga+rs)   = {}", show(rep.epsilon_term));
    println!("epsilon term (rs-sgd)    = {}", show(rep.epsilon_term_rs_byrd_sgd));
    println!("order byrd-sgd         = {}", show(rep.orders.byrd_sgd));
    println!("order rs-byrd-sgd      = {}", show(rep.orders.rs_byrd_sgd));
    println!("order byrd-saga        = {}", show(rep.orders.byrd_saga));
    println!("order rs-byrd-saga     = {}", show(rep.orders.proposed));
    Ok(())
}

fn parse_grid(grid: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = grid.split(':').collect();
    if parts.len() != 3 {
        bail!("grid must be start:stop:step, got `{grid}`");
    }
    let start: f64 = parts[0].parse().context("bad grid start")?;
    let stop: f64 = parts[1].parse().context("bad grid stop")?;
    let step: f64 = parts[2].parse().context("bad grid step")?;
    ensure!(step > 0.0 && step.is_finite(), "grid step must be positive");
    ensure!(start.is_finite() && stop >= start, "grid needs stop >= start");
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

fn cmd_curve(workers: usize, s_list: &[usize], grid: &str) -> Result<()> {
    let alphas = parse_grid(grid)?;
    let points = error_curve(workers, s_list, &alphas);
    ensure!(!points.is_empty(), "no tolerable (s, alpha) pairs on this grid");
    println!("s,alpha,coefficient");
    for p in points {
        println!("{},{},{}", p.s, p.alpha, p.coefficient);
    }
    Ok(())
}
