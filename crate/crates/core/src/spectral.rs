//! Spectral representation of the Dirichlet Laplacian on (0, 1).
//!
//! States are stored as coefficients on the orthonormal sine basis
//! `f_k(ξ) = √2 sin((k+1)πξ)`, whose eigenvalues under `-B` are
//! `μ_k = π²(k+1)²`. Every linear operator used by the schemes (semigroup,
//! resolvent, fractional powers) is diagonal in this basis.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

/// Eigenvalue `μ_k = π²(k+1)²` of the default Dirichlet Laplacian.
pub fn eigenvalue(k: usize) -> f64 {
    let n = (k + 1) as f64;
    PI * PI * n * n
}

/// Evaluates `f_k(ξ) = √2 sin((k+1)πξ)` at an interior point.
pub fn eigenfunction_at(k: usize, xi: f64) -> Result<f64> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::Domain(format!("ξ = {xi} lies outside (0, 1)")));
    }
    Ok(SQRT_2 * ((k + 1) as f64 * PI * xi).sin())
}

/// A truncated element of `H = L²(0,1)` given by its first `N` sine coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVector {
    coeffs: Vec<f64>,
}

impl SpectralVector {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Config("a spectral vector needs at least one mode".into()));
        }
        if let Some(k) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("coefficient {k} is not finite")));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(n_modes: usize) -> Self {
        assert!(n_modes > 0, "a spectral vector needs at least one mode");
        Self { coeffs: vec![0.0; n_modes] }
    }

    /// The basis vector `f_k` in an `n_modes`-dimensional truncation.
    pub fn unit(n_modes: usize, k: usize) -> Self {
        let mut v = Self::zeros(n_modes);
        v.coeffs[k] = 1.0;
        v
    }

    pub(crate) fn from_raw(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// `H` norm; the basis is orthonormal so this is the Euclidean norm.
    pub fn norm(&self) -> f64 {
        norm(&self.coeffs)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        distance(&self.coeffs, &other.coeffs)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * factor).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Supremum of a per-mode operator symbol, split into the part attained on
/// the truncated spectrum and the analytic supremum over the continuum
/// `x ≥ μ_{N-1}` that stands in for the discarded modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolSup {
    pub modes: f64,
    pub tail: f64,
}

impl SymbolSup {
    /// Operator norm over the full (untruncated) spectrum.
    pub fn value(&self) -> f64 {
        self.modes.max(self.tail)
    }
}

/// Non-decreasing positive eigenvalues `μ_0 ≤ μ_1 ≤ …` of `-B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
}

impl Spectrum {
    /// First `n_modes` eigenvalues of the Dirichlet Laplacian, `π²(k+1)²`.
    pub fn dirichlet_laplacian(n_modes: usize) -> Self {
        assert!(n_modes > 0, "spectrum needs at least one mode");
        Self { eigenvalues: (0..n_modes).map(eigenvalue).collect() }
    }

    pub fn custom(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Config("spectrum needs at least one mode".into()));
        }
        if eigenvalues.iter().any(|&mu| !(mu.is_finite() && mu > 0.0)) {
            return Err(Error::Domain("eigenvalues must be finite and positive".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("eigenvalues must be non-decreasing".into()));
        }
        Ok(Self { eigenvalues })
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k]
    }

    /// Smallest eigenvalue `μ_0`.
    pub fn mu0(&self) -> f64 {
        self.eigenvalues[0]
    }

    fn check_len(&self, y: &SpectralVector) -> Result<()> {
        if y.n_modes() != self.n_modes() {
            return Err(Error::Config(format!(
                "vector has {} modes but the spectrum has {}",
                y.n_modes(),
                self.n_modes()
            )));
        }
        Ok(())
    }

    fn map_modes(&self, y: &SpectralVector, symbol: impl Fn(f64) -> f64) -> SpectralVector {
        SpectralVector::from_raw(
            self.eigenvalues.iter().zip(y.coeffs()).map(|(&mu, &c)| symbol(mu) * c).collect(),
        )
    }

    /// `e^{tB} y`, i.e. `y_k ↦ e^{-μ_k t} y_k`.
    pub fn apply_semigroup(&self, t: f64, y: &SpectralVector) -> Result<SpectralVector> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("semigroup time must be ≥ 0, got {t}")));
        }
        self.check_len(y)?;
        Ok(self.map_modes(y, |mu| (-mu * t).exp()))
    }

    /// `R_τ^j y` with `R_τ = (I - τB)^{-1}`.
    pub fn apply_resolvent(&self, tau: f64, y: &SpectralVector, power: u32) -> Result<SpectralVector> {
        if !(tau > 0.0) {
            return Err(Error::Domain(format!("resolvent step must be > 0, got {tau}")));
        }
        if power == 0 {
            return Err(Error::Domain("resolvent power must be ≥ 1".into()));
        }
        self.check_len(y)?;
        Ok(self.map_modes(y, |mu| (1.0 + mu * tau).powi(-(power as i32))))
    }

    /// `(-B)^b y`, i.e. `y_k ↦ μ_k^b y_k`.
    pub fn fractional_power_apply(&self, b: f64, y: &SpectralVector) -> Result<SpectralVector> {
        self.check_len(y)?;
        Ok(self.map_modes(y, |mu| mu.powf(b)))
    }

    /// `|y|_b = (Σ μ_k^{2b} y_k²)^{1/2}`; `b = 0` is the `H` norm.
    pub fn sobolev_norm(&self, b: f64, y: &SpectralVector) -> Result<f64> {
        self.check_len(y)?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(y.coeffs())
            .map(|(&mu, &c)| mu.powf(2.0 * b) * c * c)
            .sum::<f64>()
            .sqrt())
    }

    fn symbol_sup(&self, symbol: impl Fn(f64) -> f64, tail: impl FnOnce(f64) -> f64) -> SymbolSup {
        let modes = self.eigenvalues.iter().map(|&mu| symbol(mu)).fold(0.0, f64::max);
        let last = *self.eigenvalues.last().expect("non-empty spectrum");
        SymbolSup { modes, tail: tail(last) }
    }

    /// Exact norm of `(-B)^{1-κ} R_τ^j`: `sup_k μ_k^{1-κ} / (1+μ_k τ)^j`.
    pub fn resolvent_smoothing_norm(&self, tau: f64, power: u32, kappa: f64) -> Result<SymbolSup> {
        if !(tau > 0.0) || power == 0 {
            return Err(Error::Domain("need τ > 0 and j ≥ 1".into()));
        }
        let a = 1.0 - kappa;
        let j = power as f64;
        let symbol = move |x: f64| x.powf(a) / (1.0 + x * tau).powf(j);
        Ok(self.symbol_sup(symbol, |last| {
            // x^a (1+xτ)^{-j} peaks at x* = a / (τ (j - a)); for j ≤ a it
            // increases towards its limit at infinity.
            if j > a {
                let peak = if a > 0.0 { a / (tau * (j - a)) } else { 0.0 };
                symbol(peak.max(last))
            } else if j == a {
                tau.powf(-j)
            } else {
                f64::INFINITY
            }
        }))
    }

    /// Exact norm of `(-B)^σ e^{tB}`: `sup_k μ_k^σ e^{-μ_k t}`.
    pub fn semigroup_smoothing_norm(&self, t: f64, sigma: f64) -> Result<SymbolSup> {
        if !(t > 0.0) || sigma < 0.0 {
            return Err(Error::Domain("need t > 0 and σ ≥ 0".into()));
        }
        let symbol = move |x: f64| x.powf(sigma) * (-x * t).exp();
        Ok(self.symbol_sup(symbol, |last| symbol((sigma / t).max(last))))
    }

    /// Exact norm of `(-B)^{-β}(I - R_τ)`: `sup_k μ_k^{-β} μ_kτ / (1+μ_kτ)`.
    pub fn resolvent_defect_norm(&self, tau: f64, beta: f64) -> Result<SymbolSup> {
        if !(tau > 0.0) || !(0.0..=1.0).contains(&beta) {
            return Err(Error::Domain("need τ > 0 and β ∈ [0, 1]".into()));
        }
        let symbol = move |x: f64| x.powf(-beta) * x * tau / (1.0 + x * tau);
        Ok(self.symbol_sup(symbol, |last| {
            if beta == 0.0 {
                1.0
            } else if beta == 1.0 {
                symbol(last)
            } else {
                symbol(((1.0 - beta) / (beta * tau)).max(last))
            }
        }))
    }
}

/// Samples on the interior grid `ξ_j = j/(M+1)`, `j = 1..M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Self {
        Self { values: grid_points(m).map(f).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Interior collocation points `j/(M+1)` for `j = 1..=M`.
pub fn grid_points(m: usize) -> impl Iterator<Item = f64> {
    let h = 1.0 / (m + 1) as f64;
    (1..=m).map(move |j| j as f64 * h)
}

/// Precomputed discrete sine transform between `N` modes and an `M`-point grid.
///
/// On the grid `ξ_j = j/(M+1)` the vectors `√2 sin((k+1)πξ_j)` are exactly
/// orthogonal under the weight `1/(M+1)`, so `inverse ∘ forward` is the
/// identity on `N`-mode vectors whenever `M ≥ N`.
#[derive(Debug, Clone)]
pub struct SineTransform {
    n_modes: usize,
    grid_size: usize,
    // basis[k * M + j] = √2 sin((k+1)π ξ_j)
    basis: Vec<f64>,
    // projection[j * N + k] = basis[k * M + j] / (M + 1)
    projection: Vec<f64>,
}

impl SineTransform {
    pub fn new(n_modes: usize, grid_size: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Config("transform needs at least one mode".into()));
        }
        if grid_size < n_modes {
            return Err(Error::Config(format!(
                "grid size M = {grid_size} is smaller than the mode count N = {n_modes}"
            )));
        }
        let denom = (grid_size + 1) as f64;
        let mut basis = vec![0.0; n_modes * grid_size];
        let mut projection = vec![0.0; n_modes * grid_size];
        for k in 0..n_modes {
            for j in 0..grid_size {
                // reduce (k+1)(j+1) mod 2(M+1) so the argument stays in [0, 2π)
                let phase = ((k + 1) * (j + 1)) % (2 * (grid_size + 1));
                let value = SQRT_2 * (PI * phase as f64 / denom).sin();
                basis[k * grid_size + j] = value;
                projection[j * n_modes + k] = value / denom;
            }
        }
        Ok(Self { n_modes, grid_size, basis, projection })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// `values_j = Σ_k y_k √2 sin((k+1)πξ_j)`.
    pub fn forward_into(&self, coeffs: &[f64], values: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.n_modes);
        debug_assert_eq!(values.len(), self.grid_size);
        values.fill(0.0);
        for (row, &c) in self.basis.chunks_exact(self.grid_size).zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            for (v, &b) in values.iter_mut().zip(row) {
                *v += c * b;
            }
        }
    }

    /// Discrete projection onto the first `N` modes.
    pub fn inverse_into(&self, values: &[f64], coeffs: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.n_modes);
        debug_assert_eq!(values.len(), self.grid_size);
        coeffs.fill(0.0);
        for (row, &v) in self.projection.chunks_exact(self.n_modes).zip(values) {
            for (c, &p) in coeffs.iter_mut().zip(row) {
                *c += v * p;
            }
        }
    }

    pub fn forward(&self, y: &SpectralVector) -> Result<GridFunction> {
        if y.n_modes() != self.n_modes {
            return Err(Error::Config("mode count does not match the transform".into()));
        }
        let mut values = vec![0.0; self.grid_size];
        self.forward_into(y.coeffs(), &mut values);
        Ok(GridFunction::new(values))
    }

    pub fn inverse(&self, f: &GridFunction) -> Result<SpectralVector> {
        if f.len() != self.grid_size {
            return Err(Error::Config("grid size does not match the transform".into()));
        }
        let mut coeffs = vec![0.0; self.n_modes];
        self.inverse_into(f.values(), &mut coeffs);
        Ok(SpectralVector::from_raw(coeffs))
    }
}

/// Evaluates an `N`-mode expansion on the `M`-point interior grid.
pub fn sine_transform(y: &SpectralVector, grid_size: usize) -> Result<GridFunction> {
    SineTransform::new(y.n_modes(), grid_size)?.forward(y)
}

/// Projects grid samples onto the first `n_modes` sine modes.
pub fn inverse_sine_transform(f: &GridFunction, n_modes: usize) -> Result<SpectralVector> {
    SineTransform::new(n_modes, f.len())?.inverse(f)
}
