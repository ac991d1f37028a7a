//! Command-line front end: `spectrum`, `stability` and `corr`.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 configuration or usage
//! error, 3 numerical failure, 4 a stability clause failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::base::Shape;
use crate::correlations::{backward_corr_at, fit_decay_rate, DecayFit};
use crate::error::{Error, Result};
use crate::experiments::{
    atomic_write, correlation_csv, density_csv, run_deterministic_baseline_with, run_stability_sweep,
    write_stability_report, ExperimentConfig, DENSITY_CSV_POINTS,
};
use crate::skewprod::{skew_fixed_density, SkewOperator};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_FAILED: i32 = 4;
/// Overrides the config seed unless `--seed` is given.
pub const SEED_ENV: &str = "FIBERSPEC_SEED";

#[derive(Debug, Parser)]
#[command(name = "fiberspec", version, about = "Transfer-operator experiments for randomly perturbed expanding circle maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Invariant density, correlation rate and expanding constant of the unperturbed map.
    Spectrum(SpectrumArgs),
    /// ε-sweep of the random invariant density with the stability and rate checks.
    Stability(StabilityArgs),
    /// Backward fiber correlations at one ω or over equispaced ω samples.
    Corr(CorrArgs),
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// JSON experiment config.
    pub config: PathBuf,
    /// Directory for density.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// JSON experiment config.
    pub config: PathBuf,
    /// Directory for stability.csv and stability.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Master RNG seed; overrides FIBERSPEC_SEED and the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    /// JSON experiment config.
    pub config: PathBuf,
    /// Base point in [0, 1); on a shift base it is read as a base-K expansion of the word.
    #[arg(long, conflicts_with = "samples")]
    pub omega: Option<f64>,
    /// Number of equispaced ω samples; the CSV holds the largest |value| at each n.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Number of correlation terms; defaults to the config's n_max.
    #[arg(long)]
    pub nmax: Option<usize>,
    /// Noise strength; defaults to 0.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Directory for corr.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Spectrum(a) => cmd_spectrum(&a),
        Command::Stability(a) => cmd_stability(&a),
        Command::Corr(a) => cmd_corr(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fiberspec: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        _ if e.is_numerical() => EXIT_NUMERICAL,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_IO,
        Error::AtEpsilon { source, .. } => exit_code(source),
        _ => EXIT_CONFIG,
    }
}

/// `--seed`, then `FIBERSPEC_SEED`, then the config value.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned 64-bit integer"))),
        None => Ok(config),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn cmd_spectrum(args: &SpectrumArgs) -> Result<i32> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let (phi, u) = cfg.observables.build(cfg.fourier_n)?;
    let b = run_deterministic_baseline_with(&cfg.map, cfg.fourier_n, cfg.n_max, &phi, &u, &cfg.tolerances)?;
    prepare_out(&args.out)?;
    atomic_write(&args.out.join("density.csv"), &density_csv(&b.rho0, DENSITY_CSV_POINTS)?)?;
    print_json(&json!({
        "rho0_norm": b.rho0.sup_norm(),
        "tau0": b.tau0,
        "lambda_r": b.lambda_r,
        "subdominant": b.subdominant,
        "eigenvalue": [b.eigenvalue.re, b.eigenvalue.im],
    }))?;
    Ok(EXIT_OK)
}

pub fn cmd_stability(args: &StabilityArgs) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    let env = std::env::var(SEED_ENV).ok();
    cfg.seed = resolve_seed(args.seed, env.as_deref(), cfg.seed)?;
    let report = run_stability_sweep(&cfg)?;
    prepare_out(&args.out)?;
    write_stability_report(&report, &args.out)?;
    print_json(&serde_json::to_value(&report)?)?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILED })
}

fn omega_indices(shape: Shape, args: &CorrArgs) -> Result<Vec<usize>> {
    match (args.omega, args.samples) {
        (Some(w), _) if !(0.0..1.0).contains(&w) => Err(Error::Config(format!("--omega {w} is not in [0, 1)"))),
        (Some(w), _) => Ok(vec![shape.index_of_unit(w)]),
        (None, Some(0)) => Err(Error::Config("--samples must be positive".into())),
        (None, Some(n)) => Ok(shape.sample_indices(n)),
        (None, None) => Ok(vec![0]),
    }
}

pub fn cmd_corr(args: &CorrArgs) -> Result<i32> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let n_max = args.nmax.unwrap_or(cfg.n_max);
    if n_max < 4 {
        return Err(Error::Config(format!("--nmax must be at least 4, got {n_max}")));
    }
    let family = cfg.family()?.with_epsilon(args.epsilon)?;
    let (phi, u) = cfg.observables.build(cfg.fourier_n)?;
    let shape = cfg.shape();
    let indices = omega_indices(shape, args)?;
    let op = SkewOperator::new(&family, &cfg.base, shape, cfg.fourier_n)?;
    let rho = skew_fixed_density(&op, cfg.tolerances.density)?.density;
    let seqs = backward_corr_at(&op, &rho, &phi, &u, &indices, n_max)?;
    let fits = seqs
        .iter()
        .map(|s| fit_decay_rate(s, cfg.tolerances.fit_floor))
        .collect::<Result<Vec<DecayFit<f64>>>>()?;

    let worst: Vec<f64> = (0..n_max)
        .map(|n| {
            seqs.iter()
                .map(|s| s[n])
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(0.0)
        })
        .collect();
    let fit = if seqs.len() == 1 { fits[0] } else { fit_decay_rate(&worst, cfg.tolerances.fit_floor)? };
    prepare_out(&args.out)?;
    atomic_write(&args.out.join("corr.csv"), &correlation_csv(&worst, &fit)?)?;

    let taus: Vec<f64> = fits.iter().map(|f| f.tau).collect();
    print_json(&json!({
        "epsilon": args.epsilon,
        "samples": indices.len(),
        "tau": fit.tau,
        "c": fit.c,
        "envelope": fit.envelope,
        "max_ratio": fit.max_ratio,
        "disagreement": fit.disagreement,
        "tau_min": taus.iter().copied().fold(f64::INFINITY, f64::min),
        "tau_max": taus.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }))?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some("2"), 3).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some(" 2 "), 3).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, 3).unwrap(), 3);
        assert!(matches!(resolve_seed(None, Some("x"), 3), Err(Error::Config(_))));
    }

    #[test]
    fn exit_code_classes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::EpsilonTooLarge { epsilon: 1.0, epsilon_max: 0.5 }), EXIT_CONFIG);
        let nc = Error::NotConverged {
            what: "x",
            iterations: 1,
            residual: 1.0,
        };
        assert_eq!(exit_code(&nc), EXIT_NUMERICAL);
        let wrapped = Error::AtEpsilon {
            epsilon: 0.1,
            source: Box::new(Error::Io(std::io::Error::other("x"))),
        };
        assert_eq!(exit_code(&wrapped), EXIT_IO);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(["fiberspec", "spectrum"]), EXIT_CONFIG);
        assert_eq!(run(["fiberspec", "spectrum", "c.json", "--bogus"]), EXIT_CONFIG);
        assert_eq!(run(["fiberspec", "nope"]), EXIT_CONFIG);
        assert_eq!(run(["fiberspec", "spectrum", "/nonexistent/c.json"]), EXIT_CONFIG);
    }
}
