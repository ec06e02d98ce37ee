//! Monte Carlo estimators: weak errors with common random numbers, ergodic
//! time averages with batch-means confidence intervals, convergence-order
//! fits, and the moment and contraction probes.
//!
//! Samples run in parallel on the ambient rayon pool. Per-sample results are
//! collected in stream-id order before any reduction, so every estimate is
//! a deterministic function of its configuration and seed.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::integrators::{
    run_coupled_levels_with_stream, CoupledTrajectory, ModelSpec, ReferenceNoise, SchemeParams,
    SemiImplicitStepper, DIVERGENCE_THRESHOLD,
};
use crate::noise::NoiseStream;
use crate::oracles::{
    compensated_sum, continuous_stationary_law, expectation_of, invariant_measure_gap, scheme_law,
    scheme_stationary_law, TestFunctional,
};
use crate::spectral::{distance, norm, SpectralVector};

/// Normal quantile used for Monte Carlo confidence intervals.
pub const Z_95: f64 = 1.959963984540054;

/// Default number of batches for batch-means intervals.
pub const DEFAULT_BATCHES: usize = 32;

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = compensated_sum(samples.iter().copied()) / n as f64;
        let var = if n > 1 {
            compensated_sum(samples.iter().map(|x| (x - mean) * (x - mean))) / (n - 1) as f64
        } else {
            0.0
        };
        Self { estimate: mean, std_error: (var / n as f64).sqrt(), n_samples: n }
    }

    /// Half-width of the normal-theory 95% interval.
    pub fn ci_half_width(&self) -> f64 {
        Z_95 * self.std_error
    }

    pub fn contains(&self, value: f64) -> bool {
        (self.estimate - value).abs() <= self.ci_half_width()
    }
}

/// Whether coarse and reference solvers share their Brownian increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    Common,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakErrorConfig {
    pub params: SchemeParams,
    pub n_samples: usize,
    pub coupling: Coupling,
    pub antithetic: bool,
}

impl WeakErrorConfig {
    pub fn new(params: SchemeParams, n_samples: usize) -> Self {
        Self { params, n_samples, coupling: Coupling::Common, antithetic: false }
    }
}

fn sample_differences(
    model: &ModelSpec,
    phi: &TestFunctional,
    cfg: &WeakErrorConfig,
    levels: &[usize],
    index: u64,
) -> Result<Vec<f64>> {
    let seed = cfg.params.master_seed;
    let one = |stream: NoiseStream| -> Result<Vec<f64>> {
        match cfg.coupling {
            Coupling::Common => {
                let (coarse, fine) = run_coupled_levels_with_stream(model, &cfg.params, stream, levels)?;
                let base = phi.eval(coarse.coeffs());
                Ok(fine.iter().map(|f| phi.eval(f.coeffs()) - base).collect())
            }
            Coupling::Independent => {
                // coarse path on stream 2i, references on stream 2i + 1
                let other = NoiseStream::new(seed, stream.stream_id() * 2 + 1);
                let coarse_stream = NoiseStream::new(seed, stream.stream_id() * 2);
                let (coarse, _) = run_coupled_levels_with_stream(model, &cfg.params, coarse_stream, &[])?;
                let (_, fine) = run_coupled_levels_with_stream(model, &cfg.params, other, levels)?;
                let base = phi.eval(coarse.coeffs());
                Ok(fine.iter().map(|f| phi.eval(f.coeffs()) - base).collect())
            }
        }
    };
    let stream = NoiseStream::new(seed, index);
    let mut diffs = one(stream.clone())?;
    if cfg.antithetic {
        let mirrored = one(stream.antithetic())?;
        diffs.iter_mut().zip(mirrored).for_each(|(d, m)| *d = 0.5 * (*d + m));
    }
    Ok(diffs)
}

/// `E φ(reference_r) - E φ(Y_m)` for every reference level `r` in `levels`,
/// all estimated from the same samples.
pub fn weak_error_levels(
    model: &ModelSpec,
    phi: &TestFunctional,
    cfg: &WeakErrorConfig,
    levels: &[usize],
) -> Result<Vec<McEstimate>> {
    if cfg.n_samples < 2 {
        return Err(Error::Config("weak-error estimation needs at least 2 samples".into()));
    }
    phi.check_modes(model.n_modes())?;
    cfg.params.validate()?;
    let per_sample: Vec<Vec<f64>> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| sample_differences(model, phi, cfg, levels, i))
        .collect::<Result<_>>()?;
    Ok((0..levels.len())
        .map(|l| {
            let column: Vec<f64> = per_sample.iter().map(|d| d[l]).collect();
            McEstimate::from_samples(&column)
        })
        .collect())
}

/// Monte Carlo estimate of `E φ(Y(mτ)) - E φ(Y_m)` with the reference at
/// step `τ / r`.
pub fn weak_error(model: &ModelSpec, phi: &TestFunctional, cfg: &WeakErrorConfig) -> Result<McEstimate> {
    Ok(weak_error_levels(model, phi, cfg, &[cfg.params.refinement_r])?[0])
}

/// Weighted least-squares fit of `log error = order · log τ + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFit {
    pub order: f64,
    pub order_std_error: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points_used: usize,
}

/// Fits the convergence order using points with `include[i]`, weighting
/// each by `1 / std_error²` (uniformly when all standard errors vanish).
pub fn fit_order(taus: &[f64], errors: &[f64], std_errors: &[f64], include: &[bool]) -> Option<OrderFit> {
    let pts: Vec<(f64, f64, f64)> = (0..taus.len())
        .filter(|&i| include[i] && errors[i] > 0.0)
        .map(|i| {
            let w = if std_errors[i] > 0.0 { 1.0 / (std_errors[i] * std_errors[i]) } else { f64::NAN };
            (taus[i].ln(), errors[i].ln(), w)
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let uniform = pts.iter().any(|p| !p.2.is_finite());
    let weight = |p: &(f64, f64, f64)| if uniform { 1.0 } else { p.2 };
    let sw: f64 = pts.iter().map(weight).sum();
    let xm = pts.iter().map(|p| weight(p) * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| weight(p) * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| weight(p) * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| weight(p) * (p.0 - xm) * (p.1 - ym)).sum();
    let order = sxy / sxx;
    let intercept = ym - order * xm;
    let resid: Vec<f64> = pts.iter().map(|p| p.1 - (intercept + order * p.0)).collect();
    let dof = pts.len().saturating_sub(2);
    let order_std_error = if dof > 0 {
        let s2 = pts.iter().zip(&resid).map(|(p, r)| weight(p) * r * r).sum::<f64>() / dof as f64;
        (s2 / sxx).sqrt()
    } else {
        0.0
    };
    let residual = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
    Some(OrderFit { order, order_std_error, intercept, residual, points_used: pts.len() })
}

/// Configuration of a weak-order sweep over step sizes at a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub tau_grid: Vec<f64>,
    pub horizon: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub refinement_r: usize,
    pub reference: ReferenceNoise,
    pub coupling: Coupling,
    pub antithetic: bool,
    /// Also estimate every error with `2r` reference steps from the same samples.
    pub doubled_refinement_check: bool,
}

impl SweepConfig {
    pub fn new(tau_grid: Vec<f64>, horizon: f64, n_samples: usize, seed: u64) -> Self {
        Self {
            tau_grid,
            horizon,
            n_samples,
            seed,
            refinement_r: 16,
            reference: ReferenceNoise::ExactLaw,
            coupling: Coupling::Common,
            antithetic: false,
            doubled_refinement_check: false,
        }
    }
}

/// Per-`τ` weak errors and the fitted order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorReport {
    pub tau_grid: Vec<f64>,
    pub steps: Vec<usize>,
    /// `E φ(reference) - E φ(coarse)`.
    pub signed_errors: Vec<f64>,
    pub errors: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub n_samples: usize,
    /// Points whose error is within 2σ of zero; left out of the fit.
    pub excluded: Vec<bool>,
    pub fit: Option<OrderFit>,
    /// Estimates with doubled reference refinement, when requested.
    pub doubled: Option<Vec<McEstimate>>,
}

impl WeakErrorReport {
    pub fn fitted_order(&self) -> Option<f64> {
        self.fit.map(|f| f.order)
    }

    /// Number of step sizes whose doubled-refinement estimate moved by more
    /// than the 95% interval of the original estimate.
    pub fn refinement_shifts_beyond_ci(&self) -> Option<usize> {
        self.doubled.as_ref().map(|d| {
            d.iter()
                .zip(self.signed_errors.iter().zip(&self.std_errors))
                .filter(|(dd, (e, se))| (dd.estimate - *e).abs() > Z_95 * **se)
                .count()
        })
    }
}

/// `T / τ` as an exact step count.
pub fn steps_for(horizon: f64, tau: f64) -> Result<usize> {
    let m = horizon / tau;
    let rounded = m.round();
    if !(rounded >= 1.0) || (m - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(Error::Config(format!("τ = {tau} does not divide the horizon T = {horizon}")));
    }
    Ok(rounded as usize)
}

fn check_tau_grid(tau_grid: &[f64]) -> Result<()> {
    if tau_grid.len() < 4 {
        return Err(Error::Config(format!("τ grid needs at least 4 points, got {}", tau_grid.len())));
    }
    if tau_grid.iter().any(|t| !(*t > 0.0)) || tau_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("τ grid must be positive and strictly decreasing".into()));
    }
    Ok(())
}

/// Weak errors over `tau_grid` at horizon `T`, with `m = T/τ`, plus the
/// weighted log-log order fit.
pub fn order_sweep(model: &ModelSpec, phi: &TestFunctional, cfg: &SweepConfig) -> Result<WeakErrorReport> {
    check_tau_grid(&cfg.tau_grid)?;
    let steps = cfg.tau_grid.iter().map(|&t| steps_for(cfg.horizon, t)).collect::<Result<Vec<_>>>()?;
    let mut levels = vec![cfg.refinement_r];
    if cfg.doubled_refinement_check {
        levels.push(2 * cfg.refinement_r);
    }
    let mut signed = Vec::new();
    let mut std_errors = Vec::new();
    let mut doubled = Vec::new();
    for (&tau, &m) in cfg.tau_grid.iter().zip(&steps) {
        let params = SchemeParams::new(tau, m)
            .with_refinement(cfg.refinement_r)
            .with_seed(cfg.seed)
            .with_reference(cfg.reference);
        let wcfg = WeakErrorConfig { params, n_samples: cfg.n_samples, coupling: cfg.coupling, antithetic: cfg.antithetic };
        let est = weak_error_levels(model, phi, &wcfg, &levels)?;
        signed.push(est[0].estimate);
        std_errors.push(est[0].std_error);
        if let Some(d) = est.get(1) {
            doubled.push(*d);
        }
    }
    let errors: Vec<f64> = signed.iter().map(|e| e.abs()).collect();
    let excluded: Vec<bool> = errors.iter().zip(&std_errors).map(|(e, se)| *e <= 2.0 * se).collect();
    let include: Vec<bool> = excluded.iter().map(|x| !x).collect();
    let fit = fit_order(&cfg.tau_grid, &errors, &std_errors, &include);
    Ok(WeakErrorReport {
        tau_grid: cfg.tau_grid.clone(),
        steps,
        signed_errors: signed,
        errors,
        std_errors,
        n_samples: cfg.n_samples,
        excluded,
        fit,
        doubled: cfg.doubled_refinement_check.then_some(doubled),
    })
}

/// Streaming batch means.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    batch_size: usize,
    current: Vec<f64>,
    means: Vec<f64>,
}

impl BatchMeans {
    pub fn new(batch_size: usize) -> Self {
        Self { batch_size, current: Vec::with_capacity(batch_size), means: Vec::new() }
    }

    pub fn push(&mut self, x: f64) {
        self.current.push(x);
        if self.current.len() == self.batch_size {
            self.means.push(compensated_sum(self.current.drain(..)) / self.batch_size as f64);
        }
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Grand mean, standard error and Student-t 95% half-width.
    pub fn summary(&self) -> (f64, f64, f64) {
        let b = self.means.len();
        let est = McEstimate::from_samples(&self.means);
        let half = if b > 1 {
            let t = StudentsT::new(0.0, 1.0, (b - 1) as f64).expect("valid dof").inverse_cdf(0.975);
            t * est.std_error
        } else {
            f64::INFINITY
        };
        (est.estimate, est.std_error, half)
    }
}

/// Time average `(1/M) Σ φ(Y_m)` after burn-in, with a batch-means interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicReport {
    pub tau: f64,
    pub burn_in_steps: usize,
    pub window_steps: usize,
    pub batches: usize,
    pub average: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `∫ φ dµ^τ` when the scheme's invariant law is known (`G = 0`).
    pub oracle_value: Option<f64>,
}

impl ErgodicReport {
    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgodicConfig {
    pub tau: f64,
    pub burn_in: usize,
    pub window: usize,
    pub batches: usize,
    pub seed: u64,
}

impl ErgodicConfig {
    pub fn new(tau: f64, burn_in: usize, window: usize, seed: u64) -> Self {
        Self { tau, burn_in, window, batches: DEFAULT_BATCHES, seed }
    }

    fn batch_size(&self) -> Result<usize> {
        if self.batches < 20 {
            return Err(Error::Config(format!("need at least 20 batches, got {}", self.batches)));
        }
        if self.window == 0 || self.window % self.batches != 0 {
            return Err(Error::Config(format!(
                "window M = {} must be a positive multiple of the batch count {}",
                self.window, self.batches
            )));
        }
        Ok(self.window / self.batches)
    }
}

fn finish_ergodic(cfg: &ErgodicConfig, batches: &BatchMeans, oracle_value: Option<f64>) -> ErgodicReport {
    let (average, std_error, half) = batches.summary();
    ErgodicReport {
        tau: cfg.tau,
        burn_in_steps: cfg.burn_in,
        window_steps: cfg.window,
        batches: cfg.batches,
        average,
        std_error,
        ci_low: average - half,
        ci_high: average + half,
        oracle_value,
    }
}

/// Single long trajectory of the scheme; averages `φ(Y_m)` for
/// `m = burn_in+1 ..= burn_in+M`.
pub fn ergodic_average(model: &ModelSpec, phi: &TestFunctional, cfg: &ErgodicConfig) -> Result<ErgodicReport> {
    phi.check_modes(model.n_modes())?;
    let batch_size = cfg.batch_size()?;
    let mut path = CoupledTrajectory::new(model, cfg.tau, 1, &[], ReferenceNoise::ExactLaw, NoiseStream::new(cfg.seed, 0))?;
    path.advance_by(cfg.burn_in)?;
    let mut batches = BatchMeans::new(batch_size);
    for _ in 0..cfg.window {
        path.advance()?;
        batches.push(phi.eval(path.coarse()));
    }
    let oracle = if model.is_linear() {
        Some(expectation_of(phi, &scheme_stationary_law(model.spectrum(), cfg.tau)?)?)
    } else {
        None
    };
    Ok(finish_ergodic(cfg, &batches, oracle))
}

/// Configuration of an invariant-measure sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantConfig {
    pub tau_grid: Vec<f64>,
    pub burn_in: usize,
    pub window: usize,
    pub batches: usize,
    pub seed: u64,
    /// Proxy step for nonlinear models is `min(tau_grid) / proxy_refinement`.
    pub proxy_refinement: usize,
    /// Nonlinear models only: also run the proxy at half its step.
    pub doubled_proxy_check: bool,
}

impl InvariantConfig {
    pub fn new(tau_grid: Vec<f64>, burn_in: usize, window: usize, seed: u64) -> Self {
        Self {
            tau_grid,
            burn_in,
            window,
            batches: DEFAULT_BATCHES,
            seed,
            proxy_refinement: 16,
            doubled_proxy_check: false,
        }
    }
}

/// One `τ` of an invariant-measure sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantRow {
    /// Plain ergodic average of `φ(Y_m)`.
    pub ergodic: ErgodicReport,
    /// `∫ φ dµ̄` (exact for `G = 0`, otherwise the proxy chain's average).
    pub reference_value: f64,
    /// Estimated `∫ φ dµ̄ - ∫ φ dµ^τ`.
    pub gap: f64,
    pub gap_std_error: f64,
    pub gap_ci: (f64, f64),
    /// Exact gap for `G = 0`.
    pub analytic_gap: Option<f64>,
    /// Gap measured against the proxy at half its step, when requested.
    pub doubled_proxy_gap: Option<f64>,
    /// The interval half-width exceeds the measured gap.
    pub flagged: bool,
}

/// Result of [`invariant_gap_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantGapReport {
    pub rows: Vec<InvariantRow>,
    pub fit: Option<OrderFit>,
    /// `None` when the exact Gaussian invariant law is used.
    pub proxy_tau: Option<f64>,
}

impl InvariantGapReport {
    pub fn reference_label(&self) -> String {
        match self.proxy_tau {
            None => "exact continuous invariant law".to_string(),
            Some(t) => format!("proxy: exponential-Euler reference at τ_ref = {t:e} (bias not removed)"),
        }
    }
}

/// Gap between the scheme's invariant measure and the continuous one, per
/// `τ`, with an order fit.
///
/// Each `τ` runs one long trajectory of the scheme coupled to a reference
/// chain driven by the same increments; the gap is the time average of
/// `φ(reference) - φ(scheme)`, whose fluctuations are far smaller than those
/// of either average. For `G = 0` the reference is the exact-in-law
/// Ornstein–Uhlenbeck chain at step `τ` (its invariant law is the
/// continuous one). Otherwise it is the exponential-Euler reference at
/// `τ_ref = min(tau_grid)/proxy_refinement`.
pub fn invariant_gap_sweep(model: &ModelSpec, phi: &TestFunctional, cfg: &InvariantConfig) -> Result<InvariantGapReport> {
    check_tau_grid(&cfg.tau_grid)?;
    phi.check_modes(model.n_modes())?;
    let linear = model.is_linear();
    let tau_min = *cfg.tau_grid.last().expect("non-empty grid");
    let proxy_tau = (!linear).then(|| tau_min / cfg.proxy_refinement as f64);
    let ecfg = |tau: f64| ErgodicConfig { tau, burn_in: cfg.burn_in, window: cfg.window, batches: cfg.batches, seed: cfg.seed };
    let batch_size = ecfg(tau_min).batch_size()?;

    let mut rows = Vec::new();
    for &tau in &cfg.tau_grid {
        let levels: Vec<usize> = match proxy_tau {
            None => vec![1],
            Some(t_ref) => {
                let r = steps_for(tau, t_ref)?;
                if !r.is_power_of_two() {
                    return Err(Error::Config(format!("τ/τ_ref = {r} is not a power of two")));
                }
                if cfg.doubled_proxy_check { vec![r, 2 * r] } else { vec![r] }
            }
        };
        let draw = *levels.iter().max().expect("non-empty");
        let mut path = CoupledTrajectory::new(
            model,
            tau,
            draw,
            &levels,
            ReferenceNoise::ExactLaw,
            NoiseStream::new(cfg.seed, 0),
        )?;
        path.advance_by(cfg.burn_in)?;
        let mut scheme = BatchMeans::new(batch_size);
        let mut reference = BatchMeans::new(batch_size);
        let mut diff = BatchMeans::new(batch_size);
        let mut diff2 = BatchMeans::new(batch_size);
        for _ in 0..cfg.window {
            path.advance()?;
            let s = phi.eval(path.coarse());
            let r = phi.eval(path.reference(0));
            scheme.push(s);
            reference.push(r);
            diff.push(r - s);
            if levels.len() > 1 {
                diff2.push(phi.eval(path.reference(1)) - s);
            }
        }
        let oracle_value = if linear {
            Some(expectation_of(phi, &scheme_stationary_law(model.spectrum(), tau)?)?)
        } else {
            None
        };
        let ergodic = finish_ergodic(&ecfg(tau), &scheme, oracle_value);
        let reference_value = if linear {
            expectation_of(phi, &continuous_stationary_law(model.spectrum()))?
        } else {
            reference.summary().0
        };
        let (gap, gap_se, half) = diff.summary();
        rows.push(InvariantRow {
            ergodic,
            reference_value,
            gap,
            gap_std_error: gap_se,
            gap_ci: (gap - half, gap + half),
            analytic_gap: if linear { Some(invariant_measure_gap(phi, model.spectrum(), tau)?) } else { None },
            doubled_proxy_gap: (levels.len() > 1).then(|| diff2.summary().0),
            flagged: half > gap.abs(),
        });
    }
    let taus: Vec<f64> = cfg.tau_grid.clone();
    let errors: Vec<f64> = rows.iter().map(|r| r.gap.abs()).collect();
    let ses: Vec<f64> = rows.iter().map(|r| r.gap_std_error).collect();
    let include: Vec<bool> = errors.iter().zip(&ses).map(|(e, s)| *e > 2.0 * s).collect();
    Ok(InvariantGapReport { fit: fit_order(&taus, &errors, &ses, &include), rows, proxy_tau })
}

/// Straight-line trend of estimates against `log10 m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendFit {
    pub slope: f64,
    pub std_error: f64,
}

impl TrendFit {
    pub fn ci(&self) -> (f64, f64) {
        (self.slope - Z_95 * self.std_error, self.slope + Z_95 * self.std_error)
    }

    pub fn ci_contains_zero(&self) -> bool {
        let (lo, hi) = self.ci();
        lo <= 0.0 && 0.0 <= hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentConfig {
    pub tau: f64,
    pub power: u32,
    pub checkpoints: Vec<usize>,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPoint {
    pub m: usize,
    pub estimate: McEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub power: u32,
    pub points: Vec<MomentPoint>,
    pub max_estimate: f64,
    /// Trend over checkpoints with `m ≥ 100` (inverse-variance weighted).
    pub trend: Option<TrendFit>,
    /// Oracle-free ceiling for `E|Y_m|²`, see [`second_moment_ceiling`].
    pub ceiling: Option<f64>,
    /// Exact `E|Y_m|²` at the last checkpoint for `G = 0`.
    pub linear_oracle: Option<f64>,
}

/// Uniform-in-time ceiling for `E|Y_m|²` of the scheme with bounded drift:
///
/// `Y_m = R_τ^m y + τ Σ R_τ^{m-l} G(Y_l) + S_m`; the first two terms have
/// norm at most `|y| + sup|g|/μ_0` and the noise part satisfies
/// `E|S_m|² ≤ Σ_k 1/(2μ_k)`. Hence
/// `E|Y_m|² ≤ 2 Σ_k 1/(2μ_k) + 2 (|y| + sup|g|/μ_0)²`.
pub fn second_moment_ceiling(model: &ModelSpec) -> Option<f64> {
    let g = model.nonlinearity();
    if !g.is_bounded() {
        return None;
    }
    let trace = continuous_stationary_law(model.spectrum()).second_moment();
    let margin = model.initial().norm() + g.g_bound / model.spectrum().mu0();
    Some(2.0 * trace + 2.0 * margin * margin)
}

/// Monte Carlo estimates of `E|Y_m|^p` at the checkpoint steps.
pub fn moment_bound_probe(model: &ModelSpec, cfg: &MomentConfig) -> Result<MomentReport> {
    if !(cfg.power == 2 || cfg.power == 4) {
        return Err(Error::Config(format!("moment power must be 2 or 4, got {}", cfg.power)));
    }
    if cfg.n_samples < 2 || cfg.checkpoints.is_empty() || cfg.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("need ≥ 2 samples and strictly increasing checkpoints".into()));
    }
    let per_sample: Vec<Vec<f64>> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut path =
                CoupledTrajectory::new(model, cfg.tau, 1, &[], ReferenceNoise::ExactLaw, NoiseStream::new(cfg.seed, i))?;
            let mut out = Vec::with_capacity(cfg.checkpoints.len());
            for &m in &cfg.checkpoints {
                path.advance_by(m - path.steps_taken())?;
                out.push(norm(path.coarse()).powi(cfg.power as i32));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let points: Vec<MomentPoint> = cfg
        .checkpoints
        .iter()
        .enumerate()
        .map(|(c, &m)| {
            let col: Vec<f64> = per_sample.iter().map(|s| s[c]).collect();
            MomentPoint { m, estimate: McEstimate::from_samples(&col) }
        })
        .collect();
    let max_estimate = points.iter().map(|p| p.estimate.estimate).fold(f64::NEG_INFINITY, f64::max);
    let trend = trend_fit(&points.iter().filter(|p| p.m >= 100).copied().collect::<Vec<_>>());
    let linear_oracle = if model.is_linear() && cfg.power == 2 {
        let last = *cfg.checkpoints.last().expect("non-empty");
        Some(scheme_law(model.spectrum(), model.initial(), cfg.tau, last)?.second_moment())
    } else {
        None
    };
    Ok(MomentReport {
        power: cfg.power,
        points,
        max_estimate,
        trend,
        ceiling: if cfg.power == 2 { second_moment_ceiling(model) } else { None },
        linear_oracle,
    })
}

fn trend_fit(points: &[MomentPoint]) -> Option<TrendFit> {
    if points.len() < 2 {
        return None;
    }
    let w: Vec<f64> = points.iter().map(|p| 1.0 / p.estimate.std_error.max(f64::MIN_POSITIVE).powi(2)).collect();
    let x: Vec<f64> = points.iter().map(|p| (p.m as f64).log10()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.estimate.estimate).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = w.iter().zip(&x).zip(&y).map(|((w, x), y)| w * (x - xm) * (y - ym)).sum();
    // known per-point variances: Var(slope) = 1 / Σ w (x - x̄)²
    Some(TrendFit { slope: sxy / sxx, std_error: (1.0 / sxx).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionReport {
    pub steps: usize,
    /// Largest per-step ratio `|ΔY_{k+1}| / |ΔY_k|`.
    pub max_ratio: f64,
    /// `(1 + L_G τ) / (1 + μ_0 τ)`.
    pub bound: f64,
    pub violations: usize,
    /// `log10 |Y¹_k - Y²_k|` after the last step (product of all ratios).
    pub log10_final_distance: f64,
    pub final_distance: f64,
    /// Times the separation was rescaled to keep it well above round-off.
    pub renormalizations: usize,
}

/// Absolute slack allowed on the per-step contraction bound.
pub const CONTRACTION_TOLERANCE: f64 = 1e-12;

/// Two scheme trajectories from `y1` and `y2` driven by identical
/// increments; checks `|ΔY_{k+1}| ≤ (1+L_Gτ)/(1+μ_0τ) |ΔY_k|` at every step.
///
/// The bound is a property of one step applied to any pair of states, so
/// whenever the separation falls below 1% of its initial size the second
/// state is moved back out along the current difference direction. This
/// keeps the ratios resolvable in floating point; the true separation is
/// tracked as the running product of ratios.
pub fn contraction_probe(
    model: &ModelSpec,
    tau: f64,
    y1: &SpectralVector,
    y2: &SpectralVector,
    steps: usize,
    seed: u64,
) -> Result<ContractionReport> {
    let lipschitz = model.nonlinearity().lipschitz;
    let mu0 = model.spectrum().mu0();
    if !(lipschitz < mu0) {
        return Err(Error::Precondition(format!(
            "contraction requires strict dissipativity L_G < μ_0, got L_G = {lipschitz}, μ_0 = {mu0}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {tau}")));
    }
    let n = model.n_modes();
    if y1.n_modes() != n || y2.n_modes() != n {
        return Err(Error::Config("initial states must match the model size".into()));
    }
    let bound = (1.0 + lipschitz * tau) / (1.0 + mu0 * tau);
    let stepper = SemiImplicitStepper::new(model.spectrum(), tau);
    let drift = model.drift();
    let mut scratch = drift.scratch();
    let mut stream = NoiseStream::new(seed, 0);
    let (mut a, mut b) = (y1.coeffs().to_vec(), y2.coeffs().to_vec());
    let (mut ga, mut gb, mut w) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let initial = distance(&a, &b);
    let mut log10_distance = if initial > 0.0 { initial.log10() } else { f64::NEG_INFINITY };
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    let mut renormalizations = 0;
    for step in 1..=steps {
        let before = distance(&a, &b);
        stream.fill_increment(tau, &mut w);
        drift.apply_into(&a, &mut ga, &mut scratch);
        drift.apply_into(&b, &mut gb, &mut scratch);
        stepper.step(&mut a, &ga, &w);
        stepper.step(&mut b, &gb, &w);
        for y in [&a, &b] {
            let nrm = norm(y);
            if !nrm.is_finite() || nrm > DIVERGENCE_THRESHOLD {
                return Err(Error::Divergence { step, norm: nrm });
            }
        }
        let after = distance(&a, &b);
        if before > 0.0 {
            let ratio = after / before;
            max_ratio = max_ratio.max(ratio);
            if ratio > bound + CONTRACTION_TOLERANCE {
                violations += 1;
            }
            log10_distance += ratio.log10();
            if after > 0.0 && after < 1e-2 * initial {
                let scale = initial / after;
                for (bk, ak) in b.iter_mut().zip(&a) {
                    *bk = ak + (*bk - ak) * scale;
                }
                renormalizations += 1;
            }
        }
    }
    Ok(ContractionReport {
        steps,
        max_ratio,
        bound,
        violations,
        log10_final_distance: log10_distance,
        final_distance: 10f64.powf(log10_distance),
        renormalizations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinear::{BuiltinNonlinearity, NemytskiiSpec};
    use crate::spectral::Spectrum;

    fn arctan_model(n: usize) -> ModelSpec {
        let spec: NemytskiiSpec = BuiltinNonlinearity::ScaledArctan { a: 1.0, b: 1.0 }.into();
        ModelSpec::new(Spectrum::dirichlet_laplacian(n), spec, SpectralVector::zeros(n)).unwrap()
    }

    #[test]
    fn order_fit_on_exact_power_laws() {
        let taus: Vec<f64> = (4..10).map(|q| 2f64.powi(-q)).collect();
        let ones = vec![true; taus.len()];
        let se = vec![1e-3; taus.len()];
        for (c, p) in [(3.0, 1.0), (0.7, 0.5)] {
            let errs: Vec<f64> = taus.iter().map(|t| c * t.powf(p)).collect();
            let fit = fit_order(&taus, &errs, &se, &ones).unwrap();
            assert!((fit.order - p).abs() < 1e-12);
            assert!(fit.residual < 1e-12);
        }
    }

    #[test]
    fn fit_excludes_flagged_points() {
        let taus = [0.1, 0.05, 0.025, 0.0125];
        let errs = [0.1, 0.05, 0.025, 1.0];
        let fit = fit_order(&taus, &errs, &[1.0; 4], &[true, true, true, false]).unwrap();
        assert!((fit.order - 1.0).abs() < 1e-12);
        assert_eq!(fit.points_used, 3);
    }

    #[test]
    fn constant_test_function_has_zero_error() {
        let model = arctan_model(8);
        let cfg = WeakErrorConfig::new(SchemeParams::new(0.125, 4).with_refinement(2), 16);
        let est = weak_error(&model, &TestFunctional::Constant(1.0), &cfg).unwrap();
        assert_eq!((est.estimate, est.std_error), (0.0, 0.0));
    }

    #[test]
    fn weak_error_needs_two_samples() {
        let model = ModelSpec::linear(4);
        let cfg = WeakErrorConfig::new(SchemeParams::new(0.125, 4), 1);
        assert!(weak_error(&model, &TestFunctional::CosMode(0), &cfg).is_err());
    }

    #[test]
    fn sweep_rejects_non_dividing_steps() {
        let model = ModelSpec::linear(4);
        let cfg = SweepConfig::new(vec![0.3, 0.2, 0.1, 0.05], 1.0, 4, 0);
        assert!(matches!(order_sweep(&model, &TestFunctional::CosMode(0), &cfg), Err(Error::Config(_))));
        let cfg = SweepConfig::new(vec![0.5, 0.25], 1.0, 4, 0);
        assert!(order_sweep(&model, &TestFunctional::CosMode(0), &cfg).is_err());
    }

    #[test]
    fn ergodic_constant_is_exact() {
        let model = arctan_model(8);
        let rep = ergodic_average(&model, &TestFunctional::Constant(1.0), &ErgodicConfig::new(0.05, 10, 320, 3)).unwrap();
        assert_eq!(rep.average, 1.0);
        assert_eq!(rep.ci_low, rep.ci_high);
    }

    #[test]
    fn ergodic_config_validation() {
        let model = ModelSpec::linear(4);
        let phi = TestFunctional::CosMode(0);
        let mut cfg = ErgodicConfig::new(0.05, 0, 100, 0);
        cfg.batches = 10;
        assert!(ergodic_average(&model, &phi, &cfg).is_err());
        cfg.batches = 32;
        assert!(ergodic_average(&model, &phi, &cfg).is_err());
    }

    #[test]
    fn contraction_precondition_and_trivial_cases() {
        let n = 8;
        let spec: NemytskiiSpec = BuiltinNonlinearity::ScaledArctan { a: 20.0, b: 1.0 }.into();
        let strong = ModelSpec::new(Spectrum::dirichlet_laplacian(n), spec, SpectralVector::zeros(n)).unwrap();
        let y = SpectralVector::zeros(n);
        assert!(matches!(contraction_probe(&strong, 0.01, &y, &y, 10, 0), Err(Error::Precondition(_))));

        let model = arctan_model(n);
        let rep = contraction_probe(&model, 0.01, &y, &y, 100, 0).unwrap();
        assert_eq!(rep.final_distance, 0.0);
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn linear_contraction_is_exact_for_mode_zero_difference() {
        let n = 8;
        let model = ModelSpec::linear(n);
        let tau = 0.05;
        let y1 = SpectralVector::zeros(n);
        let y2 = SpectralVector::unit(n, 0).scaled(3.0);
        let rep = contraction_probe(&model, tau, &y1, &y2, 200, 1).unwrap();
        let expected = 1.0 / (1.0 + model.spectrum().mu0() * tau);
        assert!((rep.max_ratio - expected).abs() < 1e-12);
        assert_eq!(rep.violations, 0);
        assert!(rep.renormalizations > 0);
        let predicted = 3f64.log10() + 200.0 * expected.log10();
        assert!((rep.log10_final_distance - predicted).abs() < 1e-9);
    }

    #[test]
    fn moment_probe_validation() {
        let model = ModelSpec::linear(4);
        let cfg = MomentConfig { tau: 0.1, power: 3, checkpoints: vec![1, 2], n_samples: 4, seed: 0 };
        assert!(moment_bound_probe(&model, &cfg).is_err());
        let cfg = MomentConfig { tau: 0.1, power: 2, checkpoints: vec![2, 1], n_samples: 4, seed: 0 };
        assert!(moment_bound_probe(&model, &cfg).is_err());
    }

    #[test]
    fn ceiling_requires_bounded_drift() {
        let spec: NemytskiiSpec = BuiltinNonlinearity::LinearUnsafe { lambda: 1.0 }.into();
        let model = ModelSpec::new(Spectrum::dirichlet_laplacian(4), spec, SpectralVector::zeros(4)).unwrap();
        assert!(second_moment_ceiling(&model).is_none());
        assert!(second_moment_ceiling(&arctan_model(4)).is_some());
    }
}
