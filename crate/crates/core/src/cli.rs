//! Experiment configuration, subcommand drivers and CSV output for the
//! `spectral-spde` binary.
//!
//! Configs are TOML files. Step sizes and horizons are written as dyadic
//! rationals (`"1/2^7"`, `"3/2^2"`, `"1"`) so that `T/τ` is checked exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{
    contraction_probe, invariant_gap_sweep, moment_bound_probe, order_sweep, Coupling, InvariantConfig,
    MomentConfig, SweepConfig, CONTRACTION_TOLERANCE,
};
use crate::integrators::{ModelSpec, ReferenceNoise};
use crate::nonlinear::{dissipativity_margin, lipschitz_probe, BuiltinNonlinearity, NemytskiiSpec};
use crate::oracles::TestFunctional;
use crate::spectral::{SpectralVector, Spectrum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_CONFIG,
    }
}

/// A non-negative dyadic rational `p / 2^q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dyadic {
    pub numerator: u64,
    pub exponent: u32,
}

impl Dyadic {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / 2f64.powi(self.exponent as i32)
    }

    /// `self / step` when it is a positive integer.
    pub fn steps_of(&self, step: &Dyadic) -> Option<usize> {
        if step.numerator == 0 {
            return None;
        }
        let q = self.exponent.max(step.exponent);
        let a = (self.numerator as u128) << (q - self.exponent);
        let b = (step.numerator as u128) << (q - step.exponent);
        (a % b == 0 && a > 0).then(|| (a / b) as usize)
    }
}

impl FromStr for Dyadic {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("`{s}` is not a dyadic rational of the form \"p/2^q\"");
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), Some(d.trim())),
            None => (s.trim(), None),
        };
        let numerator: u64 = num.parse().map_err(|_| bad())?;
        if numerator >= 1 << 53 {
            return Err(bad());
        }
        let exponent = match den {
            None => 0,
            Some(d) => match d.strip_prefix("2^") {
                Some(q) => q.parse::<u32>().map_err(|_| bad())?,
                None => {
                    let v: u64 = d.parse().map_err(|_| bad())?;
                    if !v.is_power_of_two() {
                        return Err(bad());
                    }
                    v.trailing_zeros()
                }
            },
        };
        if exponent > 60 {
            return Err(bad());
        }
        Ok(Self { numerator, exponent })
    }
}

impl<'de> Deserialize<'de> for Dyadic {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Int(u64),
        }
        match Repr::deserialize(d)? {
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Int(n) => Ok(Dyadic { numerator: n, exponent: 0 }),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub functional: FunctionalConfig,
    pub contraction: Option<ContractionConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub modes: usize,
    /// Collocation points; defaults to `2 · modes`.
    pub grid: Option<usize>,
    /// Custom eigenvalues of `-B`; defaults to the Dirichlet Laplacian.
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub initial: InitialConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    Zero {},
    ScaledArctan { a: f64, b: f64 },
    ShiftedSine { a: f64 },
    LinearUnsafe { lambda: f64 },
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        Self::ScaledArctan { a: 1.0, b: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Zero {},
    Mode { mode: usize, amplitude: f64 },
    Coefficients { values: Vec<f64> },
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self::Zero {}
    }
}

impl InitialConfig {
    fn build(&self, n: usize, key: &str) -> Result<SpectralVector> {
        match self {
            Self::Zero {} => Ok(SpectralVector::zeros(n)),
            Self::Mode { mode, amplitude } => {
                if *mode >= n {
                    return Err(Error::Config(format!("{key}: mode {mode} outside 0..{n}")));
                }
                SpectralVector::new(SpectralVector::unit(n, *mode).scaled(*amplitude).into_coeffs())
            }
            Self::Coefficients { values } => {
                if values.len() != n {
                    return Err(Error::Config(format!("{key}: expected {n} coefficients, got {}", values.len())));
                }
                SpectralVector::new(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub tau: Option<Dyadic>,
    pub tau_grid: Option<Vec<Dyadic>>,
    pub horizon: Option<Dyadic>,
    pub refinement: usize,
    pub reference: ReferenceChoice,
    pub coupling: CouplingChoice,
    pub antithetic: bool,
    pub doubled_refinement_check: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            tau: None,
            tau_grid: None,
            horizon: None,
            refinement: 16,
            reference: ReferenceChoice::ExactLaw,
            coupling: CouplingChoice::Common,
            antithetic: false,
            doubled_refinement_check: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceChoice {
    LeftEndpoint,
    ExactLaw,
    RawIncrement,
}

impl From<ReferenceChoice> for ReferenceNoise {
    fn from(c: ReferenceChoice) -> Self {
        match c {
            ReferenceChoice::LeftEndpoint => ReferenceNoise::LeftEndpoint,
            ReferenceChoice::ExactLaw => ReferenceNoise::ExactLaw,
            ReferenceChoice::RawIncrement => ReferenceNoise::RawIncrement,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingChoice {
    Common,
    Independent,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub n_samples: Option<usize>,
    pub burn_in: Option<usize>,
    pub window: Option<usize>,
    pub batches: usize,
    pub proxy_refinement: usize,
    pub doubled_proxy_check: bool,
    pub power: u32,
    pub checkpoints: Option<Vec<usize>>,
    /// Acceptance range for the fitted order; outside it the run exits 4.
    pub expected_order: Option<[f64; 2]>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            n_samples: None,
            burn_in: None,
            window: None,
            batches: crate::estimators::DEFAULT_BATCHES,
            proxy_refinement: 16,
            doubled_proxy_check: false,
            power: 2,
            checkpoints: None,
            expected_order: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    Constant { value: f64 },
    CosMode { mode: usize },
    ExpNegSq { mode: usize, a: f64 },
    BoundedPolyProbe { mode: usize },
}

impl Default for FunctionalConfig {
    fn default() -> Self {
        Self::CosMode { mode: 0 }
    }
}

impl From<&FunctionalConfig> for TestFunctional {
    fn from(c: &FunctionalConfig) -> Self {
        match *c {
            FunctionalConfig::Constant { value } => TestFunctional::Constant(value),
            FunctionalConfig::CosMode { mode } => TestFunctional::CosMode(mode),
            FunctionalConfig::ExpNegSq { mode, a } => TestFunctional::ExpNegSq { mode, a },
            FunctionalConfig::BoundedPolyProbe { mode } => TestFunctional::BoundedPolyProbe(mode),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionConfig {
    pub y1: InitialConfig,
    pub y2: InitialConfig,
    pub steps: usize,
}

/// A parsed config together with the identity of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
    pub seed: u64,
}

impl LoadedConfig {
    pub fn parse(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        let digest = Sha256::digest(text.as_bytes());
        let sha256 = digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        let seed = seed_override.or(config.seed).unwrap_or(0);
        Ok(Self { config, sha256, seed })
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, seed_override)
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let m = &self.config.model;
        if m.modes == 0 {
            return Err(Error::Config("model.modes must be ≥ 1".into()));
        }
        let spectrum = match &m.eigenvalues {
            None => Spectrum::dirichlet_laplacian(m.modes),
            Some(ev) if ev.len() == m.modes => Spectrum::custom(ev.clone())?,
            Some(ev) => {
                return Err(Error::Config(format!("model.eigenvalues has {} entries, model.modes = {}", ev.len(), m.modes)))
            }
        };
        let nonlinearity: NemytskiiSpec = match m.nonlinearity {
            NonlinearityConfig::Zero {} => NemytskiiSpec::zero(),
            NonlinearityConfig::ScaledArctan { a, b } => BuiltinNonlinearity::ScaledArctan { a, b }.into(),
            NonlinearityConfig::ShiftedSine { a } => BuiltinNonlinearity::ShiftedSine { a }.into(),
            NonlinearityConfig::LinearUnsafe { lambda } => BuiltinNonlinearity::LinearUnsafe { lambda }.into(),
        };
        let initial = m.initial.build(m.modes, "model.initial")?;
        ModelSpec::with_grid(spectrum, nonlinearity, m.grid.unwrap_or(2 * m.modes), initial)
    }

    fn functional(&self, n: usize) -> Result<TestFunctional> {
        let phi = TestFunctional::from(&self.config.functional);
        phi.check_modes(n)?;
        Ok(phi)
    }

    fn tau_grid(&self) -> Result<Vec<Dyadic>> {
        self.config.scheme.tau_grid.clone().ok_or_else(|| missing("scheme.tau_grid"))
    }

    fn single_taus(&self) -> Result<Vec<Dyadic>> {
        match (&self.config.scheme.tau, &self.config.scheme.tau_grid) {
            (Some(t), _) => Ok(vec![*t]),
            (None, Some(g)) => Ok(g.clone()),
            (None, None) => Err(missing("scheme.tau")),
        }
    }
}

fn missing(key: &str) -> Error {
    Error::Config(format!("missing key {key}"))
}

fn positive_taus(grid: &[Dyadic]) -> Result<Vec<f64>> {
    grid.iter()
        .map(|t| {
            if t.numerator == 0 {
                Err(Error::Config("step sizes must be positive".into()))
            } else {
                Ok(t.value())
            }
        })
        .collect()
}

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn opt(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }

    fn render(&self, out: &mut String) {
        match self {
            Cell::Float(v) if v.is_finite() => {
                let _ = write!(out, "{v:.16e}");
            }
            Cell::Float(v) if v.is_nan() => out.push_str("nan"),
            Cell::Float(v) => out.push_str(if *v > 0.0 { "inf" } else { "-inf" }),
            Cell::Int(v) => {
                let _ = write!(out, "{v}");
            }
            Cell::Text(s) => out.push_str(s),
            Cell::Empty => {}
        }
    }
}

/// Rows of one subcommand plus its summary lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub command: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Vec<String>,
    /// An acceptance check in this table failed.
    pub failed: bool,
}

impl ResultTable {
    fn new(command: &'static str, columns: &[&'static str]) -> Self {
        Self { command, columns: columns.to_vec(), rows: Vec::new(), summary: Vec::new(), failed: false }
    }

    /// CSV bytes: `#` metadata lines, header row, data rows.
    pub fn to_csv(&self, loaded: &LoadedConfig) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# spectral-spde {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# command={}", self.command);
        let _ = writeln!(out, "# config_sha256={}", loaded.sha256);
        let _ = writeln!(out, "# seed={}", loaded.seed);
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                cell.render(&mut out);
            }
            out.push('\n');
        }
        out
    }
}

/// Weak errors over `scheme.tau_grid` at horizon `scheme.horizon`.
pub fn cmd_weak_order(loaded: &LoadedConfig) -> Result<ResultTable> {
    let cfg = &loaded.config;
    let model = loaded.model()?;
    let phi = loaded.functional(model.n_modes())?;
    let grid = loaded.tau_grid()?;
    let horizon = cfg.scheme.horizon.ok_or_else(|| missing("scheme.horizon"))?;
    for t in &grid {
        if horizon.steps_of(t).is_none() {
            return Err(Error::Config(format!(
                "τ = {}/2^{} does not divide T = {}/2^{}",
                t.numerator, t.exponent, horizon.numerator, horizon.exponent
            )));
        }
    }
    let n_samples = cfg.estimator.n_samples.ok_or_else(|| missing("estimator.n_samples"))?;
    let mut sweep = SweepConfig::new(positive_taus(&grid)?, horizon.value(), n_samples, loaded.seed);
    sweep.refinement_r = cfg.scheme.refinement;
    sweep.reference = cfg.scheme.reference.into();
    sweep.coupling = match cfg.scheme.coupling {
        CouplingChoice::Common => Coupling::Common,
        CouplingChoice::Independent => Coupling::Independent,
    };
    sweep.antithetic = cfg.scheme.antithetic;
    sweep.doubled_refinement_check = cfg.scheme.doubled_refinement_check;
    let report = order_sweep(&model, &phi, &sweep)?;

    let mut table = ResultTable::new(
        "weak-order",
        &["tau", "m", "error", "std_error", "n_samples", "signed_error", "excluded_from_fit", "error_doubled_r"],
    );
    for i in 0..report.tau_grid.len() {
        table.rows.push(vec![
            Cell::Float(report.tau_grid[i]),
            Cell::Int(report.steps[i] as u64),
            Cell::Float(report.errors[i]),
            Cell::Float(report.std_errors[i]),
            Cell::Int(report.n_samples as u64),
            Cell::Float(report.signed_errors[i]),
            Cell::Int(report.excluded[i] as u64),
            Cell::opt(report.doubled.as_ref().map(|d| d[i].estimate.abs())),
        ]);
    }
    match report.fit {
        Some(fit) => {
            table.summary.push(format!("fitted_order={:.4} ± {:.4}", fit.order, fit.order_std_error));
            table.summary.push(format!("fit_residual={:.4e} points_used={}", fit.residual, fit.points_used));
        }
        None => table.summary.push("fitted_order=undefined (fewer than 2 usable points)".into()),
    }
    if let Some(shifts) = report.refinement_shifts_beyond_ci() {
        table.summary.push(format!("doubled_refinement_shifts_beyond_ci={shifts}"));
    }
    if let Some([lo, hi]) = cfg.estimator.expected_order {
        let ok = report.fit.is_some_and(|f| lo <= f.order && f.order <= hi);
        table.summary.push(format!("expected_order=[{lo}, {hi}] {}", if ok { "PASS" } else { "FAIL" }));
        table.failed |= !ok;
    }
    Ok(table)
}

/// Ergodic averages and invariant-measure gaps over `scheme.tau_grid`.
pub fn cmd_invariant(loaded: &LoadedConfig) -> Result<ResultTable> {
    let cfg = &loaded.config;
    let model = loaded.model()?;
    let phi = loaded.functional(model.n_modes())?;
    let taus = positive_taus(&loaded.tau_grid()?)?;
    let burn_in = cfg.estimator.burn_in.ok_or_else(|| missing("estimator.burn_in"))?;
    let window = cfg.estimator.window.ok_or_else(|| missing("estimator.window"))?;
    let mut icfg = InvariantConfig::new(taus, burn_in, window, loaded.seed);
    icfg.batches = cfg.estimator.batches;
    icfg.proxy_refinement = cfg.estimator.proxy_refinement;
    icfg.doubled_proxy_check = cfg.estimator.doubled_proxy_check;
    let report = invariant_gap_sweep(&model, &phi, &icfg)?;

    let mut table = ResultTable::new(
        "invariant",
        &[
            "tau",
            "ergodic_avg",
            "ci_low",
            "ci_high",
            "oracle",
            "gap",
            "reference",
            "gap_std_error",
            "gap_ci_low",
            "gap_ci_high",
            "oracle_gap",
            "gap_doubled_proxy",
            "flagged",
        ],
    );
    for row in &report.rows {
        let e = &row.ergodic;
        table.rows.push(vec![
            Cell::Float(e.tau),
            Cell::Float(e.average),
            Cell::Float(e.ci_low),
            Cell::Float(e.ci_high),
            Cell::opt(e.oracle_value),
            Cell::Float(row.gap),
            Cell::Float(row.reference_value),
            Cell::Float(row.gap_std_error),
            Cell::Float(row.gap_ci.0),
            Cell::Float(row.gap_ci.1),
            Cell::opt(row.analytic_gap),
            Cell::opt(row.doubled_proxy_gap),
            Cell::Int(row.flagged as u64),
        ]);
    }
    table.summary.push(format!("reference={}", report.reference_label()));
    match report.fit {
        Some(fit) => table.summary.push(format!("fitted_order={:.4} ± {:.4}", fit.order, fit.order_std_error)),
        None => table.summary.push("fitted_order=undefined (gaps indistinguishable from 0)".into()),
    }
    let flagged = report.rows.iter().filter(|r| r.flagged).count();
    if flagged > 0 {
        table.summary.push(format!("flagged_rows={flagged} (confidence interval wider than the gap)"));
    }
    if let Some([lo, hi]) = cfg.estimator.expected_order {
        let ok = report.fit.is_some_and(|f| lo <= f.order && f.order <= hi);
        table.summary.push(format!("expected_order=[{lo}, {hi}] {}", if ok { "PASS" } else { "FAIL" }));
        table.failed |= !ok;
    }
    Ok(table)
}

fn moment_config(loaded: &LoadedConfig, tau: f64, defaults: (usize, &[usize])) -> MomentConfig {
    let est = &loaded.config.estimator;
    MomentConfig {
        tau,
        power: est.power,
        checkpoints: est.checkpoints.clone().unwrap_or_else(|| defaults.1.to_vec()),
        n_samples: est.n_samples.unwrap_or(defaults.0),
        seed: loaded.seed,
    }
}

/// `E|Y_m|^p` at `estimator.checkpoints` for each configured step.
pub fn cmd_moments(loaded: &LoadedConfig) -> Result<ResultTable> {
    let model = loaded.model()?;
    let taus = positive_taus(&loaded.single_taus()?)?;
    loaded.config.estimator.checkpoints.as_ref().ok_or_else(|| missing("estimator.checkpoints"))?;
    loaded.config.estimator.n_samples.ok_or_else(|| missing("estimator.n_samples"))?;
    let mut table = ResultTable::new("moments", &["tau", "m", "estimate", "std_error", "n_samples"]);
    for tau in taus {
        let report = moment_bound_probe(&model, &moment_config(loaded, tau, (0, &[])))?;
        for p in &report.points {
            table.rows.push(vec![
                Cell::Float(tau),
                Cell::Int(p.m as u64),
                Cell::Float(p.estimate.estimate),
                Cell::Float(p.estimate.std_error),
                Cell::Int(p.estimate.n_samples as u64),
            ]);
        }
        let mut line = format!("tau={tau:e} power={} max_estimate={:.6e}", report.power, report.max_estimate);
        if let Some(t) = report.trend {
            let (lo, hi) = t.ci();
            let _ = write!(line, " trend_slope={:.4e} ci=[{lo:.4e}, {hi:.4e}]", t.slope);
        }
        if let Some(c) = report.ceiling {
            let _ = write!(line, " ceiling={c:.6e}");
        }
        if let Some(o) = report.linear_oracle {
            let _ = write!(line, " linear_oracle={o:.6e}");
        }
        table.summary.push(line);
    }
    Ok(table)
}

/// Shared-noise contraction probe for each configured step.
pub fn cmd_contraction(loaded: &LoadedConfig) -> Result<ResultTable> {
    let model = loaded.model()?;
    let taus = positive_taus(&loaded.single_taus()?)?;
    let c = loaded.config.contraction.as_ref().ok_or_else(|| missing("contraction"))?;
    let n = model.n_modes();
    let y1 = c.y1.build(n, "contraction.y1")?;
    let y2 = c.y2.build(n, "contraction.y2")?;
    let mut table = ResultTable::new(
        "contraction",
        &["tau", "steps", "max_ratio", "bound", "violations", "log10_final_distance", "renormalizations"],
    );
    for tau in taus {
        let r = contraction_probe(&model, tau, &y1, &y2, c.steps, loaded.seed)?;
        table.rows.push(vec![
            Cell::Float(tau),
            Cell::Int(r.steps as u64),
            Cell::Float(r.max_ratio),
            Cell::Float(r.bound),
            Cell::Int(r.violations as u64),
            Cell::Float(r.log10_final_distance),
            Cell::Int(r.renormalizations as u64),
        ]);
        table.failed |= r.violations > 0;
    }
    let total: u64 = table.rows.iter().map(|r| if let Cell::Int(v) = r[4] { v } else { 0 }).sum();
    table.summary.push(format!("violations={total} (tolerance {CONTRACTION_TOLERANCE:e})"));
    Ok(table)
}

fn logspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(move |i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
}

/// Worst ratio of an exact operator norm to its claimed bound.
fn worst_ratio(items: impl Iterator<Item = Result<(f64, f64)>>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for item in items {
        let (norm, bound) = item?;
        worst = worst.max(norm / bound);
    }
    Ok(worst)
}

/// Operator-norm bounds checked over their parameter grids; each entry is
/// the largest `norm / bound` ratio.
pub struct OperatorSuite {
    /// `|(-B)^σ e^{tB}| ≤ (2σ/e)^σ t^{-σ} e^{-μ_0 t/2}`.
    pub semigroup_smoothing: f64,
    /// `|(-B)^{1-κ} R_τ^j| ≤ (jτ)^{κ-1} (1+μ_0τ)^{-jκ}`.
    pub resolvent_smoothing: f64,
    /// `|(-B)^{-β}(I - R_τ)| ≤ τ^β`.
    pub resolvent_defect: f64,
}

/// Relative round-off allowance for the operator-norm comparisons.
pub const OPERATOR_TOLERANCE: f64 = 1e-12;

pub fn operator_suite(spectrum: &Spectrum) -> Result<OperatorSuite> {
    let mu0 = spectrum.mu0();
    let semigroup_smoothing = worst_ratio([0.25, 0.5, 1.0].into_iter().flat_map(|sigma: f64| {
        logspace(1e-4, 1.0, 41).map(move |t| {
            let bound = (2.0 * sigma / std::f64::consts::E).powf(sigma) * t.powf(-sigma) * (-mu0 * t / 2.0).exp();
            Ok((spectrum.semigroup_smoothing_norm(t, sigma)?.value(), bound))
        })
    }))?;
    let resolvent_smoothing = worst_ratio(logspace(1e-3, 1.0, 31).flat_map(|tau| {
        [0.0, 0.25, 0.5, 1.0].into_iter().flat_map(move |kappa: f64| {
            (1..=1000u32).map(move |j| {
                let jt = j as f64 * tau;
                let bound = jt.powf(kappa - 1.0) * (1.0 + mu0 * tau).powf(-(j as f64) * kappa);
                Ok((spectrum.resolvent_smoothing_norm(tau, j, kappa)?.value(), bound))
            })
        })
    }))?;
    let resolvent_defect = worst_ratio(logspace(1e-4, 1.0, 41).flat_map(|tau| {
        (0..=100).map(move |i| {
            let beta = i as f64 / 100.0;
            Ok((spectrum.resolvent_defect_norm(tau, beta)?.value(), tau.powf(beta)))
        })
    }))?;
    Ok(OperatorSuite { semigroup_smoothing, resolvent_smoothing, resolvent_defect })
}

/// Smoothing-norm bounds, dissipativity, Lipschitz, contraction and moment
/// checks for the configured model, one row each.
pub fn cmd_diagnostics(loaded: &LoadedConfig) -> Result<ResultTable> {
    let model = loaded.model()?;
    let spectrum = model.spectrum();
    let spec = model.nonlinearity();
    let tau = match loaded.single_taus() {
        Ok(t) => positive_taus(&t[..1])?[0],
        Err(_) => 0.01,
    };
    let mut table = ResultTable::new("diagnostics", &["check", "measured", "bound", "status"]);
    let push = |table: &mut ResultTable, name: &str, measured: f64, bound: f64, status: Option<bool>| {
        let label = match status {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        table.failed |= status == Some(false);
        table.rows.push(vec![
            Cell::Text(name.into()),
            Cell::Float(measured),
            Cell::Float(bound),
            Cell::Text(label.into()),
        ]);
    };

    let ops = operator_suite(spectrum)?;
    let limit = 1.0 + OPERATOR_TOLERANCE;
    push(&mut table, "semigroup_smoothing_ratio", ops.semigroup_smoothing, 1.0, Some(ops.semigroup_smoothing <= limit));
    push(&mut table, "resolvent_smoothing_ratio", ops.resolvent_smoothing, 1.0, Some(ops.resolvent_smoothing <= limit));
    push(&mut table, "resolvent_defect_ratio", ops.resolvent_defect, 1.0, Some(ops.resolvent_defect <= limit));

    let grid = model.drift().grid_size();
    let diss = dissipativity_margin(spectrum, spec, grid, 2000, 10.0, loaded.seed)?;
    push(&mut table, "dissipativity_violation", diss.max_violation, 0.0, Some(diss.holds()));

    if spec.lipschitz.is_finite() {
        let observed = lipschitz_probe(spec, model.n_modes(), grid, 1000, loaded.seed)?;
        let bound = spec.lipschitz * (1.0 + 1e-8);
        push(&mut table, "lipschitz", observed, bound, Some(observed <= bound));
    }

    let mu0 = spectrum.mu0();
    let strict = spec.lipschitz < mu0;
    match (&loaded.config.contraction, strict) {
        (Some(_), false) => {
            return Err(Error::Precondition(format!(
                "contraction requires strict dissipativity L_G < μ_0, got L_G = {}, μ_0 = {mu0}",
                spec.lipschitz
            )))
        }
        (_, true) => {
            let n = model.n_modes();
            let (y1, y2, steps) = match &loaded.config.contraction {
                Some(c) => (c.y1.build(n, "contraction.y1")?, c.y2.build(n, "contraction.y2")?, c.steps),
                None => (SpectralVector::zeros(n), SpectralVector::unit(n, 0).scaled(10.0), 10_000),
            };
            let r = contraction_probe(&model, tau, &y1, &y2, steps, loaded.seed)?;
            push(&mut table, "contraction_max_ratio", r.max_ratio, r.bound + CONTRACTION_TOLERANCE, Some(r.violations == 0));
        }
        (None, false) => push(&mut table, "contraction_max_ratio", f64::NAN, 1.0, None),
    }

    if diss.holds() {
        let report = moment_bound_probe(&model, &moment_config(loaded, tau, (200, &[10, 100, 1000])))?;
        match report.ceiling {
            Some(ceiling) => push(&mut table, "moment_max", report.max_estimate, ceiling, Some(report.max_estimate <= ceiling)),
            None => push(&mut table, "moment_max", report.max_estimate, f64::NAN, None),
        }
        match report.trend {
            Some(t) => push(&mut table, "moment_trend_slope", t.slope, 1.959963984540054 * t.std_error, Some(t.ci_contains_zero())),
            None => push(&mut table, "moment_trend_slope", f64::NAN, f64::NAN, None),
        }
    } else {
        push(&mut table, "moment_max", f64::NAN, f64::NAN, None);
    }
    let failed = table.rows.iter().filter(|r| r[3] == Cell::Text("FAIL".into())).count();
    table.summary.push(format!("checks={} failed={failed}", table.rows.len()));
    Ok(table)
}

/// Subcommands of the binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    WeakOrder,
    Invariant,
    Diagnostics,
    Moments,
    Contraction,
}

pub fn dispatch(command: Command, loaded: &LoadedConfig) -> Result<ResultTable> {
    match command {
        Command::WeakOrder => cmd_weak_order(loaded),
        Command::Invariant => cmd_invariant(loaded),
        Command::Diagnostics => cmd_diagnostics(loaded),
        Command::Moments => cmd_moments(loaded),
        Command::Contraction => cmd_contraction(loaded),
    }
}
