//! Nemytskii drift operators `G(y)(ξ) = g(ξ, y(ξ))` realised by collocation.
//!
//! The state is evaluated on the interior grid, `g` is applied pointwise and
//! the result is projected back onto the first `N` modes. Because the sine
//! vectors are orthonormal on the grid (weight `1/(M+1)`), the discrete
//! operator inherits the pointwise bound `sup|g|` and the Lipschitz constant
//! `sup|∂g/∂u|` exactly.

use std::fmt;
use std::sync::Arc;

use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::noise::NoiseStream;
use crate::spectral::{grid_points, SineTransform, SpectralVector, Spectrum};

/// The drift nonlinearities shipped with the library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinNonlinearity {
    Zero,
    /// `g = a·arctan(b·u)`
    ScaledArctan { a: f64, b: f64 },
    /// `g = a·sin(u + ξ)`
    ShiftedSine { a: f64 },
    /// `g = λ·u`; unbounded, meant for oracle and negative tests only.
    LinearUnsafe { lambda: f64 },
}

impl BuiltinNonlinearity {
    fn eval(&self, xi: f64, u: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::ScaledArctan { a, b } => a * (b * u).atan(),
            Self::ShiftedSine { a } => a * (u + xi).sin(),
            Self::LinearUnsafe { lambda } => lambda * u,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::ScaledArctan { .. } => "scaled_arctan",
            Self::ShiftedSine { .. } => "shifted_sine",
            Self::LinearUnsafe { .. } => "linear_unsafe",
        }
    }
}

type PointwiseFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Pointwise {
    Builtin(BuiltinNonlinearity),
    Custom(PointwiseFn),
}

/// A pointwise function `g(ξ, u)` together with its declared bounds.
///
/// `eta` and `second_derivative_bound` are carried as metadata; only the
/// pointwise bound and Lipschitz constant enter computations.
#[derive(Clone)]
pub struct NemytskiiSpec {
    pointwise: Pointwise,
    pub g_bound: f64,
    pub lipschitz: f64,
    pub second_derivative_bound: f64,
    pub eta: f64,
}

impl fmt::Debug for NemytskiiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.pointwise {
            Pointwise::Builtin(b) => format!("{b:?}"),
            Pointwise::Custom(_) => "Custom".to_string(),
        };
        f.debug_struct("NemytskiiSpec")
            .field("g", &kind)
            .field("g_bound", &self.g_bound)
            .field("lipschitz", &self.lipschitz)
            .field("second_derivative_bound", &self.second_derivative_bound)
            .field("eta", &self.eta)
            .finish()
    }
}

impl From<BuiltinNonlinearity> for NemytskiiSpec {
    fn from(b: BuiltinNonlinearity) -> Self {
        let (g_bound, lipschitz, second) = match b {
            BuiltinNonlinearity::Zero => (0.0, 0.0, 0.0),
            // a·b·u/(1+(bu)²)² peaks at |bu| = 1/√3 with value 3√3/8 · a·b²
            BuiltinNonlinearity::ScaledArctan { a, b } => (
                a.abs() * std::f64::consts::FRAC_PI_2,
                (a * b).abs(),
                3.0 * 3f64.sqrt() / 8.0 * (a * b * b).abs(),
            ),
            BuiltinNonlinearity::ShiftedSine { a } => (a.abs(), a.abs(), a.abs()),
            BuiltinNonlinearity::LinearUnsafe { lambda } => (f64::INFINITY, lambda.abs(), 0.0),
        };
        Self { pointwise: Pointwise::Builtin(b), g_bound, lipschitz, second_derivative_bound: second, eta: 0.0 }
    }
}

impl NemytskiiSpec {
    pub fn zero() -> Self {
        BuiltinNonlinearity::Zero.into()
    }

    /// A user-supplied `g(ξ, u)` with declared constants.
    pub fn custom(
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        g_bound: f64,
        lipschitz: f64,
        second_derivative_bound: f64,
        eta: f64,
    ) -> Result<Self> {
        if !(g_bound >= 0.0 && lipschitz >= 0.0 && second_derivative_bound >= 0.0) {
            return Err(Error::Config("declared bounds must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::Config(format!("η must lie in [0, 1), got {eta}")));
        }
        Ok(Self {
            pointwise: Pointwise::Custom(Arc::new(g)),
            g_bound,
            lipschitz,
            second_derivative_bound,
            eta,
        })
    }

    pub fn builtin(&self) -> Option<BuiltinNonlinearity> {
        match &self.pointwise {
            Pointwise::Builtin(b) => Some(*b),
            Pointwise::Custom(_) => None,
        }
    }

    pub fn eval(&self, xi: f64, u: f64) -> f64 {
        match &self.pointwise {
            Pointwise::Builtin(b) => b.eval(xi, u),
            Pointwise::Custom(g) => g(xi, u),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.pointwise, Pointwise::Builtin(BuiltinNonlinearity::Zero))
    }

    /// Whether `g` is globally bounded, as the weak-order theory requires.
    pub fn is_bounded(&self) -> bool {
        self.g_bound.is_finite()
    }

    /// Densely samples `g` and checks the declared bound and Lipschitz
    /// constant pointwise. Returns the observed `(sup|g|, sup|Δg/Δu|)`.
    pub fn sample_pointwise_constants(&self, u_range: f64, resolution: usize) -> (f64, f64) {
        let du = 2.0 * u_range / resolution as f64;
        let mut sup_g: f64 = 0.0;
        let mut sup_slope: f64 = 0.0;
        for xi in grid_points(resolution.min(257)) {
            let mut prev = self.eval(xi, -u_range);
            sup_g = sup_g.max(prev.abs());
            for i in 1..=resolution {
                let u = -u_range + i as f64 * du;
                let g = self.eval(xi, u);
                sup_g = sup_g.max(g.abs());
                sup_slope = sup_slope.max((g - prev).abs() / du);
                prev = g;
            }
        }
        (sup_g, sup_slope)
    }
}

/// Collocation realisation of `G_N = P_N G` for a fixed `(N, M)` pair.
#[derive(Debug, Clone)]
pub struct NemytskiiOperator {
    spec: NemytskiiSpec,
    transform: SineTransform,
    xi: Vec<f64>,
}

/// Scratch space for [`NemytskiiOperator::apply_into`].
#[derive(Debug, Clone)]
pub struct DriftScratch {
    grid: Vec<f64>,
}

impl NemytskiiOperator {
    /// Requires `M ≥ 2N` (dealiasing margin).
    pub fn new(spec: NemytskiiSpec, n_modes: usize, grid_size: usize) -> Result<Self> {
        if grid_size < 2 * n_modes {
            return Err(Error::Config(format!(
                "collocation grid M = {grid_size} is below the dealiasing floor 2N = {}",
                2 * n_modes
            )));
        }
        Ok(Self {
            spec,
            transform: SineTransform::new(n_modes, grid_size)?,
            xi: grid_points(grid_size).collect(),
        })
    }

    pub fn spec(&self) -> &NemytskiiSpec {
        &self.spec
    }

    pub fn n_modes(&self) -> usize {
        self.transform.n_modes()
    }

    pub fn grid_size(&self) -> usize {
        self.transform.grid_size()
    }

    pub fn is_zero(&self) -> bool {
        self.spec.is_zero()
    }

    pub fn scratch(&self) -> DriftScratch {
        DriftScratch { grid: vec![0.0; self.grid_size()] }
    }

    pub fn apply_into(&self, y: &[f64], out: &mut [f64], scratch: &mut DriftScratch) {
        if self.is_zero() {
            out.fill(0.0);
            return;
        }
        let grid = &mut scratch.grid;
        self.transform.forward_into(y, grid);
        match &self.spec.pointwise {
            Pointwise::Builtin(BuiltinNonlinearity::ScaledArctan { a, b }) => {
                grid.iter_mut().for_each(|u| *u = a * (b * *u).atan());
            }
            _ => {
                for (u, &xi) in grid.iter_mut().zip(&self.xi) {
                    *u = self.spec.eval(xi, *u);
                }
            }
        }
        self.transform.inverse_into(grid, out);
    }

    pub fn apply(&self, y: &SpectralVector) -> Result<SpectralVector> {
        if y.n_modes() != self.n_modes() {
            return Err(Error::Config("vector size does not match the operator".into()));
        }
        let mut out = vec![0.0; self.n_modes()];
        self.apply_into(y.coeffs(), &mut out, &mut self.scratch());
        Ok(SpectralVector::from_raw(out))
    }
}

/// `P_N` of the grid composition `ξ ↦ g(ξ, y(ξ))` on an `M`-point grid.
pub fn apply_nemytskii(spec: &NemytskiiSpec, y: &SpectralVector, grid_size: usize) -> Result<SpectralVector> {
    NemytskiiOperator::new(spec.clone(), y.n_modes(), grid_size)?.apply(y)
}

/// Outcome of probing `<By + G(y), y> ≤ -c|y|² + C` on sampled states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipativityReport {
    /// Certificate constant `c`.
    pub c: f64,
    /// Certificate constant `C`.
    pub big_c: f64,
    /// Largest observed `<By+G(y),y> + c|y|² - C` (less a relative 1e-12
    /// round-off allowance); the certificate holds on the samples iff this
    /// is `≤ 0` and `c > 0`.
    pub max_violation: f64,
    /// Smallest `C` that would make the inequality hold on the samples for the same `c`.
    pub big_c_required: f64,
}

impl DissipativityReport {
    pub fn holds(&self) -> bool {
        self.c > 0.0 && self.max_violation <= 0.0
    }
}

/// Candidate `(c, C)` for the dissipativity inequality.
///
/// * `G ≡ 0`: `(μ_0, 0)`.
/// * bounded `g`: `(μ_0/2, sup|g|²/(2μ_0))`, from Cauchy–Schwarz and Young.
/// * unbounded Lipschitz `g`: `((μ_0 - L)/2, g_0²/(2(μ_0 - L)))` with
///   `g_0 = sup_ξ |g(ξ, 0)|`; not a certificate at all when `L ≥ μ_0`.
pub fn dissipativity_certificate(spec: &NemytskiiSpec, mu0: f64) -> (f64, f64) {
    if spec.is_zero() {
        (mu0, 0.0)
    } else if spec.is_bounded() {
        (mu0 / 2.0, spec.g_bound * spec.g_bound / (2.0 * mu0))
    } else {
        let c = (mu0 - spec.lipschitz) / 2.0;
        let g0 = grid_points(1023).map(|xi| spec.eval(xi, 0.0).abs()).fold(0.0, f64::max);
        let big_c = if c > 0.0 { g0 * g0 / (4.0 * c) } else if g0 == 0.0 { 0.0 } else { f64::INFINITY };
        (c, big_c)
    }
}

fn random_state(stream: &mut NoiseStream, n: usize, radius: f64, buf: &mut [f64]) -> Vec<f64> {
    stream.fill_standard_normals(buf);
    let norm = crate::spectral::norm(buf).max(f64::MIN_POSITIVE);
    let mut u = [0.0; 2];
    stream.fill_standard_normals(&mut u);
    // Φ(Z) is uniform on (0, 1): radius spread over the whole ball
    let fraction = 0.5 * (1.0 + erf(u[0] / std::f64::consts::SQRT_2));
    let scale = radius * fraction.max(1e-3);
    buf[..n].iter().map(|z| z * scale / norm).collect()
}

/// Samples `<By + G(y), y> + c|y|² - C` over random states in the ball of
/// the given radius (plus scaled pure mode-0 states, the worst case for the
/// linear part) and reports the largest value.
pub fn dissipativity_margin(
    spectrum: &Spectrum,
    spec: &NemytskiiSpec,
    grid_size: usize,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<DissipativityReport> {
    if sample_count == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    let n = spectrum.n_modes();
    let op = NemytskiiOperator::new(spec.clone(), n, grid_size)?;
    let (c, big_c) = dissipativity_certificate(spec, spectrum.mu0());
    let mut scratch = op.scratch();
    let mut g = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let mut stream = NoiseStream::new(seed, 0xD155);
    let mut worst = f64::NEG_INFINITY;
    let mut evaluate = |y: &[f64]| {
        op.apply_into(y, &mut g, &mut scratch);
        let by_y: f64 = spectrum.eigenvalues().iter().zip(y).map(|(mu, v)| -mu * v * v).sum();
        let g_y: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
        let norm2: f64 = y.iter().map(|v| v * v).sum();
        // forgive round-off in the cancellation of comparable terms
        let slack = 1e-12 * (by_y.abs() + g_y.abs() + c * norm2);
        worst = worst.max(by_y + g_y + c * norm2 - slack);
    };
    for i in 0..sample_count {
        let y = if i % 4 == 0 {
            let mut y = vec![0.0; n];
            y[0] = radius * (i / 4 + 1) as f64 / (sample_count / 4 + 1) as f64;
            y
        } else {
            random_state(&mut stream, n, radius, &mut buf)
        };
        evaluate(&y);
    }
    Ok(DissipativityReport {
        c,
        big_c,
        max_violation: worst - big_c,
        big_c_required: worst.max(0.0),
    })
}

/// Largest observed `|G(y) - G(z)| / |y - z|` over random pairs.
pub fn lipschitz_probe(
    spec: &NemytskiiSpec,
    n_modes: usize,
    grid_size: usize,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    if pairs == 0 {
        return Err(Error::Config("need at least one pair".into()));
    }
    let op = NemytskiiOperator::new(spec.clone(), n_modes, grid_size)?;
    let mut scratch = op.scratch();
    let mut stream = NoiseStream::new(seed, 0x11B5);
    let mut buf = vec![0.0; n_modes];
    let (mut gy, mut gz) = (vec![0.0; n_modes], vec![0.0; n_modes]);
    let mut best: f64 = 0.0;
    for i in 0..pairs {
        // alternate between distant pairs and nearby pairs at varied scales
        let scale = 10f64.powi((i % 5) as i32 - 2);
        let y = random_state(&mut stream, n_modes, scale * 4.0, &mut buf);
        let z = if i % 2 == 0 {
            random_state(&mut stream, n_modes, scale * 4.0, &mut buf)
        } else {
            let d = random_state(&mut stream, n_modes, scale * 1e-3, &mut buf);
            y.iter().zip(&d).map(|(a, b)| a + b).collect()
        };
        let dist = crate::spectral::distance(&y, &z);
        if dist == 0.0 {
            continue;
        }
        op.apply_into(&y, &mut gy, &mut scratch);
        op.apply_into(&z, &mut gz, &mut scratch);
        best = best.max(crate::spectral::distance(&gy, &gz) / dist);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    fn smooth_vector(n: usize, seed: u64, amplitude: f64) -> SpectralVector {
        let mut s = NoiseStream::new(seed, 77);
        let mut buf = vec![0.0; n];
        s.fill_standard_normals(&mut buf);
        SpectralVector::new(
            buf.iter().enumerate().map(|(k, z)| amplitude * z * (-(k as f64) / 2.0).exp()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_drift_gives_zero() {
        let y = smooth_vector(8, 1, 3.0);
        let out = apply_nemytskii(&NemytskiiSpec::zero(), &y, 16).unwrap();
        assert_eq!(out, SpectralVector::zeros(8));
    }

    #[test]
    fn dealiasing_floor_is_enforced() {
        let y = SpectralVector::zeros(8);
        assert!(matches!(apply_nemytskii(&NemytskiiSpec::zero(), &y, 15), Err(Error::Config(_))));
    }

    #[test]
    fn linear_g_is_reproduced_exactly() {
        let spec: NemytskiiSpec = BuiltinNonlinearity::LinearUnsafe { lambda: 1.0 }.into();
        for (n, m) in [(8, 16), (16, 40), (64, 128)] {
            let y = smooth_vector(n, n as u64, 2.0);
            let out = apply_nemytskii(&spec, &y, m).unwrap();
            assert!(out.distance(&y) < 1e-10);
        }
    }

    #[test]
    fn constant_g_matches_sine_integral_at_high_resolution() {
        let spec = NemytskiiSpec::custom(|_, _| 1.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let out = apply_nemytskii(&spec, &SpectralVector::zeros(8), 10_000).unwrap();
        for (k, &c) in out.coeffs().iter().enumerate() {
            let exact = if k % 2 == 0 { 2.0 * SQRT_2 / ((k + 1) as f64 * PI) } else { 0.0 };
            assert!((c - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn output_norm_is_bounded_by_sup_g() {
        for builtin in [
            BuiltinNonlinearity::ScaledArctan { a: 1.0, b: 1.0 },
            BuiltinNonlinearity::ScaledArctan { a: 2.0, b: 5.0 },
            BuiltinNonlinearity::ShiftedSine { a: 0.7 },
        ] {
            let spec: NemytskiiSpec = builtin.into();
            for (i, amp) in [0.1, 1.0, 10.0, 1e4].into_iter().enumerate() {
                let y = smooth_vector(32, i as u64, amp);
                let out = apply_nemytskii(&spec, &y, 64).unwrap();
                assert!(out.norm() <= spec.g_bound * (1.0 + 1e-12), "{builtin:?} amp {amp}");
            }
        }
    }

    #[test]
    fn grid_refinement_changes_little_for_smooth_states() {
        let spec: NemytskiiSpec = BuiltinNonlinearity::ScaledArctan { a: 1.0, b: 1.0 }.into();
        let y = smooth_vector(64, 5, 1.0);
        let coarse = apply_nemytskii(&spec, &y, 128).unwrap();
        let fine = apply_nemytskii(&spec, &y, 256).unwrap();
        assert!(coarse.distance(&fine) < 1e-6, "{}", coarse.distance(&fine));
    }

    #[test]
    fn declared_constants_agree_with_dense_sampling() {
        for builtin in [
            BuiltinNonlinearity::ScaledArctan { a: 1.0, b: 1.0 },
            BuiltinNonlinearity::ScaledArctan { a: 0.5, b: 3.0 },
            BuiltinNonlinearity::ShiftedSine { a: 2.0 },
        ] {
            let spec: NemytskiiSpec = builtin.into();
            let (g, slope) = spec.sample_pointwise_constants(50.0, 20_000);
            assert!(g <= spec.g_bound);
            assert!(slope <= spec.lipschitz * (1.0 + 1e-9));
            assert!(slope >= spec.lipschitz * 0.99);
        }
    }

    #[test]
    fn dissipativity_certificates() {
        let spectrum = Spectrum::dirichlet_laplacian(16);
        let zero = dissipativity_margin(&spectrum, &NemytskiiSpec::zero(), 32, 200, 10.0, 1).unwrap();
        assert_eq!((zero.c, zero.big_c), (spectrum.mu0(), 0.0));
        assert!(zero.holds());

        let arctan: NemytskiiSpec = BuiltinNonlinearity::ScaledArctan { a: 1.0, b: 1.0 }.into();
        let rep = dissipativity_margin(&spectrum, &arctan, 32, 10_000, 5.0, 2).unwrap();
        assert!(rep.holds(), "{rep:?}");

        let unsafe_linear: NemytskiiSpec =
            BuiltinNonlinearity::LinearUnsafe { lambda: 2.0 * spectrum.mu0() }.into();
        let rep = dissipativity_margin(&spectrum, &unsafe_linear, 32, 100, 10.0, 3).unwrap();
        assert!(!rep.holds());
        assert!(rep.max_violation > 0.0);
    }

    #[test]
    fn lipschitz_probe_examples() {
        let constant = NemytskiiSpec::custom(|_, _| 0.3, 0.3, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(lipschitz_probe(&constant, 8, 16, 50, 1).unwrap(), 0.0);

        let arctan: NemytskiiSpec = BuiltinNonlinearity::ScaledArctan { a: 2.0, b: 1.5 }.into();
        let l = lipschitz_probe(&arctan, 16, 32, 500, 2).unwrap();
        assert!(l <= 3.0 * (1.0 + 1e-8) && l > 0.5, "{l}");

        let linear: NemytskiiSpec = BuiltinNonlinearity::LinearUnsafe { lambda: 4.5 }.into();
        let l = lipschitz_probe(&linear, 16, 32, 20, 3).unwrap();
        assert!((l - 4.5).abs() < 1e-6);
    }
}
