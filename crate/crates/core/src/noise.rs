//! Truncated cylindrical Wiener increments and the stochastic convolution.
//!
//! Randomness comes from ChaCha8 keyed by the master seed, with one ChaCha
//! stream per Monte Carlo sample. The keystream is addressed by
//! `(step, mode)`: the draws for mode `k` at step `s` sit at a fixed word
//! position, independent of how many modes are simulated. Gaussians are
//! produced with the Box–Muller transform, always using both outputs of a
//! pair (modes `2p` and `2p+1` share one pair).

use std::f64::consts::PI;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectral::{SpectralVector, Spectrum};

// 32-bit keystream words reserved per step: 2^20 Box–Muller pairs of 4 words.
const WORDS_PER_STEP: u128 = 1 << 22;

/// Deterministic source of standard normals for one trajectory.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    master_seed: u64,
    stream_id: u64,
    step: u64,
    negate: bool,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self { master_seed, stream_id, step: 0, negate: false, rng }
    }

    /// The antithetic partner: identical draws with flipped sign.
    pub fn antithetic(mut self) -> Self {
        self.negate = !self.negate;
        self
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Index of the next step to be drawn.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn uniform_open_closed(&mut self) -> f64 {
        // (0, 1]: keeps ln finite
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fills `out` with the standard normals of the current step (one per
    /// mode) and advances to the next step.
    pub fn fill_standard_normals(&mut self, out: &mut [f64]) {
        self.rng.set_word_pos(self.step as u128 * WORDS_PER_STEP);
        for pair in out.chunks_mut(2) {
            let u1 = self.uniform_open_closed();
            let u2 = self.uniform_open_closed();
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (2.0 * PI * u2).sin_cos();
            pair[0] = r * c;
            if let Some(second) = pair.get_mut(1) {
                *second = r * s;
            }
        }
        if self.negate {
            out.iter_mut().for_each(|z| *z = -*z);
        }
        self.step += 1;
    }

    /// Fills `out` with `Normal(0, dt)` draws for the current step.
    pub fn fill_increment(&mut self, dt: f64, out: &mut [f64]) {
        self.fill_standard_normals(out);
        let scale = dt.sqrt();
        out.iter_mut().for_each(|z| *z *= scale);
    }

    /// A truncated Wiener increment `W(t+dt) - W(t)` on `n_modes` modes.
    pub fn wiener_increment(&mut self, n_modes: usize, dt: f64) -> Result<SpectralVector> {
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("increment length must be > 0, got {dt}")));
        }
        let mut out = vec![0.0; n_modes];
        self.fill_increment(dt, &mut out);
        Ok(SpectralVector::from_raw(out))
    }

    /// Draws `refinement` consecutive fine increments of length `tau_fine`.
    pub fn draw_block(&mut self, n_modes: usize, tau_fine: f64, refinement: usize) -> Result<IncrementBlock> {
        if !(tau_fine > 0.0) || refinement == 0 {
            return Err(Error::Domain("block needs τ_fine > 0 and r ≥ 1".into()));
        }
        let mut block = IncrementBlock::zeros(n_modes, tau_fine, refinement);
        self.fill_block(&mut block);
        Ok(block)
    }

    pub(crate) fn fill_block(&mut self, block: &mut IncrementBlock) {
        let n = block.n_modes;
        let dt = block.tau_fine;
        for column in block.increments.chunks_exact_mut(n) {
            self.fill_increment(dt, column);
        }
    }
}

/// Fine Brownian increments covering one coarse step: `r` columns of `N`
/// per-mode draws, each `Normal(0, τ_fine)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementBlock {
    n_modes: usize,
    tau_fine: f64,
    refinement: usize,
    // column-major by fine step: increments[j * N + k]
    increments: Vec<f64>,
}

impl IncrementBlock {
    pub fn zeros(n_modes: usize, tau_fine: f64, refinement: usize) -> Self {
        Self { n_modes, tau_fine, refinement, increments: vec![0.0; n_modes * refinement] }
    }

    /// Builds a block from per-fine-step columns.
    pub fn from_columns(tau_fine: f64, columns: &[Vec<f64>]) -> Result<Self> {
        let n_modes = columns.first().map_or(0, Vec::len);
        if n_modes == 0 || columns.iter().any(|c| c.len() != n_modes) {
            return Err(Error::Config("block columns must be non-empty and of equal length".into()));
        }
        Ok(Self {
            n_modes,
            tau_fine,
            refinement: columns.len(),
            increments: columns.concat(),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn tau_fine(&self) -> f64 {
        self.tau_fine
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    /// Increments of fine step `j` across all modes.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.increments[j * self.n_modes..(j + 1) * self.n_modes]
    }

    /// Sums adjacent groups of `factor` fine steps, giving the block seen by
    /// a solver with `r / factor` fine steps per coarse step.
    pub fn coarsen(&self, factor: usize) -> Result<IncrementBlock> {
        if factor == 0 || self.refinement % factor != 0 {
            return Err(Error::Config(format!(
                "cannot coarsen r = {} by a factor {factor}",
                self.refinement
            )));
        }
        let mut out = IncrementBlock::zeros(self.n_modes, self.tau_fine * factor as f64, self.refinement / factor);
        self.coarsen_into(factor, &mut out);
        Ok(out)
    }

    pub(crate) fn coarsen_into(&self, factor: usize, out: &mut IncrementBlock) {
        let n = self.n_modes;
        out.increments.fill(0.0);
        for (j, column) in self.increments.chunks_exact(n).enumerate() {
            let target = &mut out.increments[(j / factor) * n..(j / factor + 1) * n];
            for (t, &w) in target.iter_mut().zip(column) {
                *t += w;
            }
        }
    }

    pub(crate) fn row_sums_into(&self, out: &mut [f64]) {
        out.fill(0.0);
        for column in self.increments.chunks_exact(self.n_modes) {
            for (o, &w) in out.iter_mut().zip(column) {
                *o += w;
            }
        }
    }
}

/// The coarse increment over a block: per-mode sum of its fine increments.
pub fn coarse_from_fine(block: &IncrementBlock) -> SpectralVector {
    let mut out = vec![0.0; block.n_modes];
    block.row_sums_into(&mut out);
    SpectralVector::from_raw(out)
}

/// Per-mode variance `(1 - e^{-2μτ}) / (2μ)` of `∫_0^τ e^{-μ(τ-s)} dβ(s)`.
pub fn convolution_variance(mu: f64, tau: f64) -> f64 {
    -(-2.0 * mu * tau).exp_m1() / (2.0 * mu)
}

/// One exact-in-law step of the stochastic convolution `W^B`:
/// `z_k ↦ e^{-μ_k τ} z_k + η_k`, `η_k ~ Normal(0, (1 - e^{-2μ_kτ})/(2μ_k))`.
pub fn stochastic_convolution_exact_step(
    spectrum: &Spectrum,
    z: &SpectralVector,
    tau: f64,
    stream: &mut NoiseStream,
) -> Result<SpectralVector> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {tau}")));
    }
    if z.n_modes() != spectrum.n_modes() {
        return Err(Error::Config("vector and spectrum sizes differ".into()));
    }
    let mut draws = vec![0.0; z.n_modes()];
    stream.fill_standard_normals(&mut draws);
    let out = spectrum
        .eigenvalues()
        .iter()
        .zip(z.coeffs())
        .zip(&draws)
        .map(|((&mu, &zk), &xi)| (-mu * tau).exp() * zk + convolution_variance(mu, tau).sqrt() * xi)
        .collect();
    Ok(SpectralVector::from_raw(out))
}
