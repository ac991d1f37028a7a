//! ε-sweeps of the random invariant density and decay-rate checks, with
//! CSV/JSON reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{kp_defect, BaseSystem, RandomObservable, Shape};
use crate::correlations::{backward_corr_at, fit_decay_rate, DecayFit, DEFAULT_FLOOR};
use crate::error::{Error, Result};
use crate::fiber::FiberFunction;
use crate::maps::{expanding_constant, CircleMap, TrigTerm};
use crate::skewprod::{skew_fixed_density, NoiseKind, NoiseProfile, RandomMapFamily, SkewOperator};
use crate::spectral::{leading_pair, subdominant_radius, DENSE_EIGEN_LIMIT, EXPANDING_GRID, EXPANDING_M_MAX};
use crate::transfer::{assemble_fourier, OperatorMatrix};

/// ω samples whose fitted rates are averaged into `τ_ε`.
pub const RATE_SAMPLES: usize = 16;
/// ω samples used for the uniformity spread of the fitted rates.
pub const UNIFORMITY_SAMPLES: usize = 32;
/// Points in the density CSV written by the spectrum command.
pub const DENSITY_CSV_POINTS: usize = 512;
pub const CSV_HEADER: [&str; 5] = ["epsilon", "density_error_max_omega", "lambda_bar", "tau_eps", "kp_defect"];

fn default_base() -> BaseSystem<f64> {
    BaseSystem::golden_rotation()
}
fn default_fourier_n() -> usize {
    64
}
fn default_grid() -> usize {
    crate::base::DEFAULT_GRID
}
fn default_depth() -> usize {
    crate::base::DEFAULT_DEPTH
}
fn default_n_max() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "default_noise_kind")]
    pub noise_kind: NoiseKind,
    /// Defaults to the base's natural profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_profile: Option<NoiseProfile<f64>>,
}

fn default_noise_kind() -> NoiseKind {
    NoiseKind::Additive
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            noise_kind: NoiseKind::Additive,
            s_profile: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Power-iteration tolerance for densities (C¹ distance of iterates).
    pub density: f64,
    /// Allowed excess of `τ_ε` over `max(τ₀, Λ_r)`.
    pub rate_slack: f64,
    /// Allowed spread of fitted rates across ω samples.
    pub uniformity: f64,
    pub lambda_bar: f64,
    pub kp_defect: f64,
    /// Density errors below this count as exact; the monotonicity clauses are
    /// then vacuous.
    pub exact: f64,
    /// Largest accepted last-to-first density-error ratio.
    pub error_ratio: f64,
    pub fit_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            density: 1e-11,
            rate_slack: 0.05,
            uniformity: 0.05,
            lambda_bar: 1e-6,
            kp_defect: 1e-8,
            exact: 1e-10,
            error_ratio: 0.5,
            fit_floor: DEFAULT_FLOOR,
        }
    }
}

/// Test observables as trigonometric terms `(k, a_k, b_k)`:
/// `Σ a_k sin 2πkx + b_k cos 2πkx`, with `k = 0` giving the constant `b_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Observables {
    pub phi: Vec<TrigTerm<f64>>,
    pub u: Vec<TrigTerm<f64>>,
}

impl Default for Observables {
    fn default() -> Self {
        Observables {
            phi: vec![(1, 0.0, 1.0)],
            u: vec![(2, 0.0, 1.0)],
        }
    }
}

impl Observables {
    pub fn build(&self, n: usize) -> Result<(FiberFunction<f64>, FiberFunction<f64>)> {
        let check = |terms: &[TrigTerm<f64>], name: &str| {
            if let Some(t) = terms.iter().find(|t| t.0 > n) {
                return Err(Error::Config(format!("{name} uses mode {} above the truncation {n}", t.0)));
            }
            Ok(())
        };
        check(&self.phi, "phi")?;
        check(&self.u, "u")?;
        Ok((FiberFunction::from_trig(n, &self.phi), FiberFunction::from_trig(n, &self.u)))
    }
}

/// Everything an experiment needs, read from a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map: CircleMap<f64>,
    #[serde(default = "default_base")]
    pub base: BaseSystem<f64>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Strictly decreasing noise strengths.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_fourier_n")]
    pub fourier_n: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub observables: Observables,
}

impl ExperimentConfig {
    /// Defaults for everything but the map.
    pub fn new(map: CircleMap<f64>) -> Self {
        ExperimentConfig {
            map,
            base: default_base(),
            noise: NoiseSpec::default(),
            epsilons: Vec::new(),
            fourier_n: default_fourier_n(),
            grid: default_grid(),
            depth: default_depth(),
            n_max: default_n_max(),
            seed: 0,
            tolerances: Tolerances::default(),
            observables: Observables::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Layout of random observables for the configured base.
    pub fn shape(&self) -> Shape {
        self.base.default_shape(self.grid, self.depth)
    }

    /// The noise family at `ε = 0`.
    pub fn family(&self) -> Result<RandomMapFamily<f64>> {
        let profile = self
            .noise
            .s_profile
            .clone()
            .unwrap_or_else(|| NoiseProfile::default_for(&self.base));
        profile.check_base(&self.base)?;
        RandomMapFamily::new(self.map.clone(), self.noise.noise_kind, profile, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.base.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.fourier_n < 8 {
            return bad(format!("fourier_n must be at least 8, got {}", self.fourier_n));
        }
        if self.n_max < 4 {
            return bad(format!("n_max must be at least 4, got {}", self.n_max));
        }
        if self.depth == 0 {
            return bad("cylinder depth must be at least 1".into());
        }
        self.base
            .check_shape(self.shape())
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("noise strengths must be finite and nonnegative".into());
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("the epsilon list must be strictly decreasing".into());
        }
        let family = self.family()?;
        for &eps in &self.epsilons {
            family.with_epsilon(eps)?;
        }
        self.observables.build(self.fourier_n)?;
        Ok(())
    }
}

/// Output of [`run_deterministic_baseline`].
#[derive(Clone, Debug)]
pub struct Baseline {
    pub rho0: FiberFunction<f64>,
    pub eigenvalue: Complex<f64>,
    pub correlations: Vec<f64>,
    pub fit: DecayFit<f64>,
    /// Fitted deterministic correlation rate.
    pub tau0: f64,
    pub lambda_r: f64,
    /// Largest non-unit eigenvalue modulus of the Fourier matrix, when small
    /// enough to compute densely.
    pub subdominant: Option<f64>,
}

/// Invariant density, fitted correlation rate and expanding constant of `map`,
/// with the default test observables.
pub fn run_deterministic_baseline(map: &CircleMap<f64>, n: usize, n_max: usize) -> Result<Baseline> {
    let (phi, u) = Observables::default().build(n)?;
    run_deterministic_baseline_with(map, n, n_max, &phi, &u, &Tolerances::default())
}

pub fn run_deterministic_baseline_with(
    map: &CircleMap<f64>,
    n: usize,
    n_max: usize,
    phi: &FiberFunction<f64>,
    u: &FiberFunction<f64>,
    tol: &Tolerances,
) -> Result<Baseline> {
    let op = assemble_fourier(map, n)?;
    let lp = leading_pair(&op, tol.density)?;
    let mut v = u.resized(n);
    v.axpy_complex(-u.integral(), &lp.density);
    let mut correlations = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        v = op.apply(&v);
        correlations.push(phi.inner(&v).re);
    }
    let fit = fit_decay_rate(&correlations, tol.fit_floor)?;
    let lambda_r = expanding_constant(map, map.r(), EXPANDING_M_MAX, EXPANDING_GRID)?.value;
    let subdominant = if op.dim() <= DENSE_EIGEN_LIMIT {
        Some(subdominant_radius(&OperatorMatrix::Fourier(op))?)
    } else {
        None
    };
    Ok(Baseline {
        rho0: lp.density,
        eigenvalue: lp.eigenvalue,
        correlations,
        tau0: fit.tau,
        fit,
        lambda_r,
        subdominant,
    })
}

/// One CSV row of the stability report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityRow {
    pub epsilon: f64,
    /// `max_ω ‖ρ_ε(ω) − ρ₀‖_{C¹}` over the representation points.
    pub density_error_max_omega: f64,
    pub lambda_bar: f64,
    /// Mean of the fitted backward-correlation rates over 16 ω samples.
    pub tau_eps: f64,
    pub kp_defect: f64,
}

/// Per-ε values reported only in the JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonDiagnostics {
    pub epsilon: f64,
    pub iterations: usize,
    /// `max − min` of fitted rates over 32 ω samples.
    pub tau_spread: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Any ω sample whose fit and max-ratio estimate disagree.
    pub fit_disagreement: bool,
    /// Residual of the skew-product duality for a random pair drawn from
    /// this ε's RNG stream.
    pub global_duality_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAILED")]
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    #[serde(skip)]
    pub rows: Vec<StabilityRow>,
    pub tau0: f64,
    pub lambda_r: f64,
    /// `max(tau0, lambda_r)`.
    pub bound: f64,
    pub status: Status,
    pub rate_slack: f64,
    pub seed: u64,
    pub violations: Vec<String>,
    /// Heuristic clauses that failed but are not asserted.
    pub flags: Vec<String>,
    pub diagnostics: Vec<EpsilonDiagnostics>,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Seed of the RNG stream for the `k`-th ε: a splitmix64 step on
/// `master + (k + 1)·φ₆₄`, independent of evaluation order.
pub fn stream_seed(master: u64, k: usize) -> u64 {
    let mut z = master.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct EpsilonOutcome {
    row: StabilityRow,
    diagnostics: EpsilonDiagnostics,
}

struct Reference {
    density: RandomObservable<f64>,
    tau: f64,
}

fn sampled_rates(
    op: &SkewOperator<f64>,
    rho: &RandomObservable<f64>,
    phi: &FiberFunction<f64>,
    u: &FiberFunction<f64>,
    cfg: &ExperimentConfig,
) -> Result<(f64, Vec<DecayFit<f64>>)> {
    let indices = op.shape().sample_indices(UNIFORMITY_SAMPLES);
    let seqs = backward_corr_at(op, rho, phi, u, &indices, cfg.n_max)?;
    let fits = seqs
        .iter()
        .map(|s| fit_decay_rate(s, cfg.tolerances.fit_floor))
        .collect::<Result<Vec<_>>>()?;
    // the 16-point set is every other point of the 32-point set
    let step = UNIFORMITY_SAMPLES / RATE_SAMPLES;
    let mean = fits.iter().step_by(step).map(|f| f.tau).sum::<f64>() / RATE_SAMPLES as f64;
    Ok((mean, fits))
}

fn random_observable(rng: &mut ChaCha8Rng, shape: Shape, n: usize) -> RandomObservable<f64> {
    let band = n.min(6);
    RandomObservable::from_fn(shape, |_| {
        let terms: Vec<TrigTerm<f64>> = (0..=band)
            .map(|k| (k, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        FiberFunction::from_trig(n, &terms)
    })
}

fn run_epsilon(
    cfg: &ExperimentConfig,
    family: &RandomMapFamily<f64>,
    reference: &Reference,
    k: usize,
    eps: f64,
) -> Result<EpsilonOutcome> {
    let n = cfg.fourier_n;
    let (phi, u) = cfg.observables.build(n)?;
    let fam = family.with_epsilon(eps)?;
    let op = SkewOperator::new(&fam, &cfg.base, cfg.shape(), n)?;
    let fixed = skew_fixed_density(&op, cfg.tolerances.density)?;
    let rho0 = &reference.density.values()[0];
    let density_error = fixed
        .density
        .values()
        .iter()
        .map(|r| r.c1_distance(rho0))
        .fold(0.0, f64::max);
    let (tau_eps, fits) = sampled_rates(&op, &fixed.density, &phi, &u, cfg)?;
    let tau_min = fits.iter().map(|f| f.tau).fold(f64::INFINITY, f64::min);
    let tau_max = fits.iter().map(|f| f.tau).fold(f64::NEG_INFINITY, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, k));
    let shape = cfg.shape();
    let phi_r = random_observable(&mut rng, shape, n);
    let u_r = random_observable(&mut rng, shape, n);
    let duality = op.global_duality_residual(&phi_r, &u_r)?;

    Ok(EpsilonOutcome {
        row: StabilityRow {
            epsilon: eps,
            density_error_max_omega: density_error,
            lambda_bar: fixed.lambda_bar,
            tau_eps,
            kp_defect: kp_defect(&fixed.density),
        },
        diagnostics: EpsilonDiagnostics {
            epsilon: eps,
            iterations: fixed.iterations,
            tau_spread: tau_max - tau_min,
            tau_min,
            tau_max,
            fit_disagreement: fits.iter().any(|f| f.disagreement),
            global_duality_residual: duality,
        },
    })
}

/// Runs the ε-sweep described by `cfg` and checks the stability and rate
/// clauses. Solver failures abort with the offending ε; failed clauses mark
/// the report as failed.
pub fn run_stability_sweep(cfg: &ExperimentConfig) -> Result<StabilityReport> {
    cfg.validate()?;
    if cfg.epsilons.is_empty() {
        return Err(Error::Config("the stability sweep needs at least one epsilon".into()));
    }
    let family = cfg.family()?;
    let n = cfg.fourier_n;
    let (phi, u) = cfg.observables.build(n)?;

    let op0 = SkewOperator::new(&family, &cfg.base, cfg.shape(), n)?;
    let fixed0 = skew_fixed_density(&op0, cfg.tolerances.density).map_err(|e| Error::AtEpsilon {
        epsilon: 0.0,
        source: Box::new(e),
    })?;
    let (tau0, _) = sampled_rates(&op0, &fixed0.density, &phi, &u, cfg)?;
    let reference = Reference {
        density: fixed0.density,
        tau: tau0,
    };
    let lambda_r = expanding_constant(&cfg.map, cfg.map.r(), EXPANDING_M_MAX, EXPANDING_GRID)?.value;
    let bound = reference.tau.max(lambda_r);

    let outcomes = cfg
        .epsilons
        .par_iter()
        .enumerate()
        .map(|(k, &eps)| {
            run_epsilon(cfg, &family, &reference, k, eps).map_err(|e| Error::AtEpsilon {
                epsilon: eps,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, diagnostics): (Vec<_>, Vec<_>) = outcomes.into_iter().map(|o| (o.row, o.diagnostics)).unzip();

    let tol = &cfg.tolerances;
    let mut violations = Vec::new();
    let mut flags = Vec::new();
    let errors: Vec<f64> = rows.iter().map(|r| r.density_error_max_omega).collect();
    let exact = errors.iter().all(|&e| e < tol.exact);
    if !exact {
        for (w, r) in errors.windows(2).zip(&rows[1..]) {
            if !(w[1] < w[0]) {
                violations.push(format!(
                    "density_error not strictly decreasing at epsilon {}: {:e} after {:e}",
                    r.epsilon, w[1], w[0]
                ));
            }
        }
        if errors.len() >= 2 {
            let ratio = errors[errors.len() - 1] / errors[0];
            if !(ratio <= tol.error_ratio) {
                let near_limit = matches!(family.noise_kind(), NoiseKind::Parametric { .. })
                    && cfg.epsilons[0] > family.epsilon_max() / 2.0;
                let msg = format!("last/first density_error ratio {ratio:.4} exceeds {}", tol.error_ratio);
                if near_limit {
                    flags.push(format!("{msg} (first epsilon above half of epsilon_max)"));
                } else {
                    violations.push(msg);
                }
            }
        }
    }
    for (r, d) in rows.iter().zip(&diagnostics) {
        if !(r.tau_eps <= bound + tol.rate_slack) {
            violations.push(format!(
                "tau_eps {:.6} at epsilon {} exceeds bound {:.6} + {}",
                r.tau_eps, r.epsilon, bound, tol.rate_slack
            ));
        }
        if !(d.tau_spread < tol.uniformity) {
            violations.push(format!(
                "fitted rates spread {:.6} across omega at epsilon {}",
                d.tau_spread, r.epsilon
            ));
        }
        if !((r.lambda_bar - 1.0).abs() <= tol.lambda_bar) {
            violations.push(format!("lambda_bar {} at epsilon {}", r.lambda_bar, r.epsilon));
        }
        if !(r.kp_defect < tol.kp_defect) {
            violations.push(format!("kp_defect {:e} at epsilon {}", r.kp_defect, r.epsilon));
        }
        if d.fit_disagreement {
            flags.push(format!("fit and max-ratio rates disagree at epsilon {}", r.epsilon));
        }
    }

    Ok(StabilityReport {
        rows,
        tau0: reference.tau,
        lambda_r,
        bound,
        status: if violations.is_empty() { Status::Pass } else { Status::Failed },
        rate_slack: tol.rate_slack,
        seed: cfg.seed,
        violations,
        flags,
        diagnostics,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn stability_csv(report: &StabilityReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.rows {
        w.serialize(row)?;
    }
    if report.rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes `stability.csv` and the `stability.json` sidecar into `dir`.
pub fn write_stability_report(report: &StabilityReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("stability.csv");
    let json_path = dir.join("stability.json");
    atomic_write(&csv_path, &stability_csv(report)?)?;
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    atomic_write(&json_path, &json)?;
    Ok((csv_path, json_path))
}

/// `x,value` samples of a density on `points` equispaced nodes.
pub fn density_csv(rho: &FiberFunction<f64>, points: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "value"])?;
    for (i, v) in rho.samples(points).iter().enumerate() {
        w.serialize((i as f64 / points as f64, v.re))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// `n,value,envelope` rows of a correlation sequence and its fit.
pub fn correlation_csv(seq: &[f64], fit: &DecayFit<f64>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "value", "envelope"])?;
    for (i, v) in seq.iter().enumerate() {
        let n = i + 1;
        let envelope = if fit.tau > 0.0 {
            fit.envelope * fit.tau.powi(n as i32)
        } else {
            fit.envelope
        };
        w.serialize((n, v, envelope))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
