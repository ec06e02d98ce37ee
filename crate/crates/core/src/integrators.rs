//! Time stepping: the semi-implicit Euler scheme and the fine-step
//! exponential-Euler reference, both driven by one shared noise stream.
//!
//! Per coarse step of length `τ` the stream yields an [`IncrementBlock`] of
//! `r` fine Brownian increments. The coarse scheme consumes their sum, each
//! reference level consumes the block coarsened to its own resolution, so
//! every solver sees the same underlying Brownian path.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::noise::{convolution_variance, IncrementBlock, NoiseStream};
use crate::nonlinear::{DriftScratch, NemytskiiOperator, NemytskiiSpec};
use crate::spectral::{norm, SpectralVector, Spectrum};

/// Trajectories whose norm exceeds this are aborted.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// The problem instance: spectrum, drift and initial condition.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    spectrum: Spectrum,
    drift: Arc<NemytskiiOperator>,
    initial: SpectralVector,
}

impl ModelSpec {
    /// Model with the default collocation grid `M = 2N`.
    pub fn new(spectrum: Spectrum, nonlinearity: NemytskiiSpec, initial: SpectralVector) -> Result<Self> {
        let grid = 2 * spectrum.n_modes();
        Self::with_grid(spectrum, nonlinearity, grid, initial)
    }

    pub fn with_grid(
        spectrum: Spectrum,
        nonlinearity: NemytskiiSpec,
        grid_size: usize,
        initial: SpectralVector,
    ) -> Result<Self> {
        if initial.n_modes() != spectrum.n_modes() {
            return Err(Error::Config(format!(
                "initial condition has {} modes, spectrum has {}",
                initial.n_modes(),
                spectrum.n_modes()
            )));
        }
        let drift = NemytskiiOperator::new(nonlinearity, spectrum.n_modes(), grid_size)?;
        Ok(Self { spectrum, drift: Arc::new(drift), initial })
    }

    /// Dirichlet Laplacian with `G = 0`, started at `y = 0`.
    pub fn linear(n_modes: usize) -> Self {
        Self::new(Spectrum::dirichlet_laplacian(n_modes), NemytskiiSpec::zero(), SpectralVector::zeros(n_modes))
            .expect("valid linear model")
    }

    pub fn with_initial(&self, initial: SpectralVector) -> Result<Self> {
        if initial.n_modes() != self.n_modes() {
            return Err(Error::Config("initial condition size mismatch".into()));
        }
        Ok(Self { initial, ..self.clone() })
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn drift(&self) -> &NemytskiiOperator {
        &self.drift
    }

    pub fn nonlinearity(&self) -> &NemytskiiSpec {
        self.drift.spec()
    }

    pub fn initial(&self) -> &SpectralVector {
        &self.initial
    }

    pub fn n_modes(&self) -> usize {
        self.spectrum.n_modes()
    }

    pub fn is_linear(&self) -> bool {
        self.drift.is_zero()
    }
}

/// How a fine reference step turns a Brownian increment `ΔW` into the
/// stochastic-convolution term `∫_0^h e^{(h-s)B} dW(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReferenceNoise {
    /// `e^{hB} ΔW` (left-endpoint rule); per-step variance bias `O(h)`.
    LeftEndpoint,
    /// `c_k ΔW_k` with `c_k² h = (1 - e^{-2μ_k h})/(2μ_k)`: the exact
    /// per-mode variance, still driven by the shared increments.
    ExactLaw,
    /// `ΔW` itself (convolution map disabled); diagnostic only.
    RawIncrement,
}

impl ReferenceNoise {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LeftEndpoint => "left-endpoint",
            Self::ExactLaw => "exact-law",
            Self::RawIncrement => "raw-increment",
        }
    }
}

/// Step size, horizon and coupling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub tau: f64,
    /// Number of coarse steps; the horizon is `T = m τ`.
    pub m: usize,
    /// Fine reference steps per coarse step (power of two).
    pub refinement_r: usize,
    pub master_seed: u64,
    /// Step-size ceiling `τ_0`.
    pub tau_max: f64,
    pub reference: ReferenceNoise,
}

impl SchemeParams {
    pub fn new(tau: f64, m: usize) -> Self {
        Self { tau, m, refinement_r: 16, master_seed: 0, tau_max: 1.0, reference: ReferenceNoise::ExactLaw }
    }

    pub fn with_refinement(self, refinement_r: usize) -> Self {
        Self { refinement_r, ..self }
    }

    pub fn with_seed(self, master_seed: u64) -> Self {
        Self { master_seed, ..self }
    }

    pub fn with_reference(self, reference: ReferenceNoise) -> Self {
        Self { reference, ..self }
    }

    pub fn horizon(&self) -> f64 {
        self.m as f64 * self.tau
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("τ must be positive, got {}", self.tau)));
        }
        if self.tau > self.tau_max {
            return Err(Error::Config(format!("τ = {} exceeds the ceiling τ_0 = {}", self.tau, self.tau_max)));
        }
        if !self.refinement_r.is_power_of_two() {
            return Err(Error::Config(format!(
                "refinement r = {} must be a power of two",
                self.refinement_r
            )));
        }
        Ok(())
    }
}

/// A scheme state `Y_k` with its step counter and noise stream.
#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub y: SpectralVector,
    pub step_index: usize,
    pub stream: NoiseStream,
}

/// Semi-implicit Euler stepper: `y_k ← (y_k + τ G(y)_k + ΔW_k) / (1 + μ_k τ)`.
#[derive(Debug, Clone)]
pub struct SemiImplicitStepper {
    tau: f64,
    inv_denom: Vec<f64>,
}

impl SemiImplicitStepper {
    pub fn new(spectrum: &Spectrum, tau: f64) -> Self {
        Self { tau, inv_denom: spectrum.eigenvalues().iter().map(|mu| 1.0 / (1.0 + mu * tau)).collect() }
    }

    /// `drift` holds `G(y)`, `increment` holds `Normal(0, τ)` draws.
    pub fn step(&self, y: &mut [f64], drift: &[f64], increment: &[f64]) {
        for (((yk, &d), &w), &r) in y.iter_mut().zip(drift).zip(increment).zip(&self.inv_denom) {
            *yk = (*yk + self.tau * d + w) * r;
        }
    }

    /// Contraction factor `1/(1+μ_0 τ)` of `R_τ`.
    pub fn resolvent_norm(&self) -> f64 {
        self.inv_denom[0]
    }
}

/// Exponential-Euler stepper of length `h`:
/// `y ← e^{hB}(y + h G(y)) + (convolution term)`.
#[derive(Debug, Clone)]
pub struct ExponentialEulerStepper {
    h: f64,
    decay: Vec<f64>,
    noise_scale: Vec<f64>,
}

impl ExponentialEulerStepper {
    pub fn new(spectrum: &Spectrum, h: f64, mode: ReferenceNoise) -> Self {
        let decay: Vec<f64> = spectrum.eigenvalues().iter().map(|mu| (-mu * h).exp()).collect();
        let noise_scale = match mode {
            ReferenceNoise::LeftEndpoint => decay.clone(),
            ReferenceNoise::ExactLaw => {
                spectrum.eigenvalues().iter().map(|&mu| (convolution_variance(mu, h) / h).sqrt()).collect()
            }
            ReferenceNoise::RawIncrement => vec![1.0; decay.len()],
        };
        Self { h, decay, noise_scale }
    }

    pub fn step(&self, y: &mut [f64], drift: &[f64], increment: &[f64]) {
        for ((((yk, &d), &w), &e), &s) in
            y.iter_mut().zip(drift).zip(increment).zip(&self.decay).zip(&self.noise_scale)
        {
            *yk = e * (*yk + self.h * d) + s * w;
        }
    }
}

/// One step of the semi-implicit scheme
/// `Y_{k+1} = R_τ Y_k + τ R_τ G(Y_k) + R_τ ΔW`, where `increment` is the raw
/// Brownian increment over the step (`√τ χ_{k+1}`).
pub fn semi_implicit_step(
    state: TrajectoryState,
    model: &ModelSpec,
    tau: f64,
    increment: &SpectralVector,
) -> Result<TrajectoryState> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {tau}")));
    }
    if increment.n_modes() != model.n_modes() || state.y.n_modes() != model.n_modes() {
        return Err(Error::Config("state, increment and model sizes differ".into()));
    }
    if !state.y.is_finite() || !increment.is_finite() {
        return Err(Error::Divergence { step: state.step_index, norm: f64::NAN });
    }
    let stepper = SemiImplicitStepper::new(model.spectrum(), tau);
    let drift = model.drift();
    let mut g = vec![0.0; model.n_modes()];
    drift.apply_into(state.y.coeffs(), &mut g, &mut drift.scratch());
    let TrajectoryState { mut y, step_index, stream } = state;
    stepper.step(y.coeffs_mut(), &g, increment.coeffs());
    check_state(y.coeffs(), step_index + 1)?;
    Ok(TrajectoryState { y, step_index: step_index + 1, stream })
}

fn check_state(y: &[f64], step: usize) -> Result<()> {
    let n = norm(y);
    if !n.is_finite() || n > DIVERGENCE_THRESHOLD {
        return Err(Error::Divergence { step, norm: n });
    }
    Ok(())
}

struct ReferenceChain {
    refinement: usize,
    factor: usize,
    stepper: ExponentialEulerStepper,
    block: IncrementBlock,
    y: Vec<f64>,
}

/// A coarse semi-implicit trajectory and any number of fine reference
/// trajectories advanced in lockstep from one noise stream.
pub struct CoupledTrajectory<'a> {
    model: &'a ModelSpec,
    coarse_stepper: SemiImplicitStepper,
    coarse: Vec<f64>,
    references: Vec<ReferenceChain>,
    stream: NoiseStream,
    block: IncrementBlock,
    scratch: DriftScratch,
    drift_buf: Vec<f64>,
    increment_buf: Vec<f64>,
    step: usize,
}

impl<'a> CoupledTrajectory<'a> {
    /// `draw_refinement` fine increments are drawn per coarse step; every
    /// entry of `reference_levels` must divide it.
    pub fn new(
        model: &'a ModelSpec,
        tau: f64,
        draw_refinement: usize,
        reference_levels: &[usize],
        reference: ReferenceNoise,
        stream: NoiseStream,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Domain(format!("step must be > 0, got {tau}")));
        }
        if draw_refinement == 0 {
            return Err(Error::Config("draw refinement must be ≥ 1".into()));
        }
        let n = model.n_modes();
        let tau_fine = tau / draw_refinement as f64;
        let references = reference_levels
            .iter()
            .map(|&r| {
                if r == 0 || draw_refinement % r != 0 {
                    return Err(Error::Config(format!(
                        "reference level r = {r} does not divide the drawn refinement {draw_refinement}"
                    )));
                }
                let factor = draw_refinement / r;
                Ok(ReferenceChain {
                    refinement: r,
                    factor,
                    stepper: ExponentialEulerStepper::new(model.spectrum(), tau / r as f64, reference),
                    block: IncrementBlock::zeros(n, tau_fine * factor as f64, r),
                    y: model.initial().coeffs().to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            coarse_stepper: SemiImplicitStepper::new(model.spectrum(), tau),
            coarse: model.initial().coeffs().to_vec(),
            references,
            stream,
            block: IncrementBlock::zeros(n, tau_fine, draw_refinement),
            scratch: model.drift().scratch(),
            drift_buf: vec![0.0; n],
            increment_buf: vec![0.0; n],
            step: 0,
        })
    }

    /// Advances every chain by one coarse step.
    pub fn advance(&mut self) -> Result<()> {
        let drift = self.model.drift();
        let linear = drift.is_zero();
        self.stream.fill_block(&mut self.block);
        self.step += 1;

        self.block.row_sums_into(&mut self.increment_buf);
        if !linear {
            drift.apply_into(&self.coarse, &mut self.drift_buf, &mut self.scratch);
        }
        self.coarse_stepper.step(&mut self.coarse, &self.drift_buf, &self.increment_buf);
        check_state(&self.coarse, self.step)?;

        for chain in &mut self.references {
            let block = if chain.factor == 1 {
                &self.block
            } else {
                self.block.coarsen_into(chain.factor, &mut chain.block);
                &chain.block
            };
            for j in 0..chain.refinement {
                if !linear {
                    drift.apply_into(&chain.y, &mut self.drift_buf, &mut self.scratch);
                }
                chain.stepper.step(&mut chain.y, &self.drift_buf, block.column(j));
            }
            check_state(&chain.y, self.step)?;
        }
        Ok(())
    }

    pub fn advance_by(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.advance()?;
        }
        Ok(())
    }

    /// Coarse steps taken so far.
    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn coarse(&self) -> &[f64] {
        &self.coarse
    }

    pub fn reference(&self, level: usize) -> &[f64] {
        &self.references[level].y
    }

    pub fn into_states(self) -> (SpectralVector, Vec<SpectralVector>) {
        (
            SpectralVector::from_raw(self.coarse),
            self.references.into_iter().map(|c| SpectralVector::from_raw(c.y)).collect(),
        )
    }
}

/// Runs `m` coarse steps plus the requested reference levels from `stream`.
/// Increments are drawn at the finest requested level (or at
/// `params.refinement_r` when that is finer).
pub fn run_coupled_levels_with_stream(
    model: &ModelSpec,
    params: &SchemeParams,
    stream: NoiseStream,
    levels: &[usize],
) -> Result<(SpectralVector, Vec<SpectralVector>)> {
    params.validate()?;
    if levels.iter().any(|r| !r.is_power_of_two()) {
        return Err(Error::Config("reference refinements must be powers of two".into()));
    }
    let draw = levels.iter().copied().chain([params.refinement_r]).max().unwrap_or(1);
    let mut path = CoupledTrajectory::new(model, params.tau, draw, levels, params.reference, stream)?;
    path.advance_by(params.m)?;
    Ok(path.into_states())
}

/// Coarse solution `Y_m` and references at each of `levels`, one sample.
pub fn run_coupled_levels(
    model: &ModelSpec,
    params: &SchemeParams,
    stream_id: u64,
    levels: &[usize],
) -> Result<(SpectralVector, Vec<SpectralVector>)> {
    run_coupled_levels_with_stream(model, params, NoiseStream::new(params.master_seed, stream_id), levels)
}

/// `Y_m` of the semi-implicit scheme for sample `stream_id`.
pub fn run_coarse(model: &ModelSpec, params: &SchemeParams, stream_id: u64) -> Result<SpectralVector> {
    Ok(run_coupled_levels(model, params, stream_id, &[])?.0)
}

/// Exponential-Euler reference at step `τ/r` for sample `stream_id`.
pub fn run_reference(model: &ModelSpec, params: &SchemeParams, stream_id: u64) -> Result<SpectralVector> {
    let (_, mut fine) = run_coupled_levels(model, params, stream_id, &[params.refinement_r])?;
    Ok(fine.pop().expect("one reference level"))
}

/// `(coarse, fine)` driven by the same increments: one Monte Carlo sample.
pub fn run_coupled_pair(
    model: &ModelSpec,
    params: &SchemeParams,
    stream_id: u64,
) -> Result<(SpectralVector, SpectralVector)> {
    let (coarse, mut fine) = run_coupled_levels(model, params, stream_id, &[params.refinement_r])?;
    Ok((coarse, fine.pop().expect("one reference level")))
}
