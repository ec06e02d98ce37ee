//! Closed-form Gaussian laws for the linear equation (`G = 0`).
//!
//! With no drift every mode is an independent scalar Gaussian, both for the
//! continuous equation and for the semi-implicit scheme, so expectations of
//! test functionals depending on one mode reduce to one-dimensional integrals.

use crate::error::{Error, Result};
use crate::noise::convolution_variance;
use crate::spectral::{SpectralVector, Spectrum};

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Product of independent per-mode Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianLaw {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::Config("mean and variance lengths differ".into()));
        }
        if variance.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("variances must be non-negative".into()));
        }
        Ok(Self { mean, variance })
    }

    pub fn n_modes(&self) -> usize {
        self.mean.len()
    }

    /// `E|Y|² = Σ (mean_k² + var_k)`.
    pub fn second_moment(&self) -> f64 {
        compensated_sum(self.mean.iter().zip(&self.variance).map(|(m, v)| m * m + v))
    }
}

/// Bounded smooth test functions of a single mode coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunctional {
    Constant(f64),
    /// `cos(y_j)`
    CosMode(usize),
    /// `exp(-a·y_j²)`, `a > 0`
    ExpNegSq { mode: usize, a: f64 },
    /// `y_j² / (1 + y_j²)`
    BoundedPolyProbe(usize),
}

impl TestFunctional {
    pub fn mode(&self) -> Option<usize> {
        match *self {
            Self::Constant(_) => None,
            Self::CosMode(j) | Self::BoundedPolyProbe(j) | Self::ExpNegSq { mode: j, .. } => Some(j),
        }
    }

    fn scalar(&self, x: f64) -> f64 {
        match *self {
            Self::Constant(c) => c,
            Self::CosMode(_) => x.cos(),
            Self::ExpNegSq { a, .. } => (-a * x * x).exp(),
            Self::BoundedPolyProbe(_) => {
                let x2 = x * x;
                x2 / (1.0 + x2)
            }
        }
    }

    /// `φ(y)` for a coefficient slice.
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.scalar(self.mode().map_or(0.0, |j| y[j]))
    }

    pub fn check_modes(&self, n_modes: usize) -> Result<()> {
        match self.mode() {
            Some(j) if j >= n_modes => Err(Error::Config(format!(
                "test function reads mode {j} but only {n_modes} modes are simulated"
            ))),
            _ => Ok(()),
        }
    }
}

/// Law of `Y(t)` for `G = 0`: mean `e^{-μ_k t} y_k`, variance `(1 - e^{-2μ_k t})/(2μ_k)`.
pub fn continuous_law(spectrum: &Spectrum, y0: &SpectralVector, t: f64) -> Result<GaussianLaw> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be ≥ 0, got {t}")));
    }
    check_sizes(spectrum, y0)?;
    let mu = spectrum.eigenvalues();
    GaussianLaw::new(
        mu.iter().zip(y0.coeffs()).map(|(m, y)| (-m * t).exp() * y).collect(),
        mu.iter().map(|&m| convolution_variance(m, t)).collect(),
    )
}

/// `t → ∞` limit of [`continuous_law`]: centred with variance `1/(2μ_k)`.
pub fn continuous_stationary_law(spectrum: &Spectrum) -> GaussianLaw {
    let mu = spectrum.eigenvalues();
    GaussianLaw { mean: vec![0.0; mu.len()], variance: mu.iter().map(|m| 0.5 / m).collect() }
}

/// Law of `Y_m` for `G = 0`: mean `(1+μ_kτ)^{-m} y_k`, variance
/// `τ Σ_{j=1}^{m} (1+μ_kτ)^{-2j} = (1 - (1+μ_kτ)^{-2m})/(2μ_k + μ_k²τ)`.
pub fn scheme_law(spectrum: &Spectrum, y0: &SpectralVector, tau: f64, m: usize) -> Result<GaussianLaw> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {tau}")));
    }
    check_sizes(spectrum, y0)?;
    let mu = spectrum.eigenvalues();
    let steps = m as f64;
    GaussianLaw::new(
        mu.iter().zip(y0.coeffs()).map(|(&k, y)| (-steps * (k * tau).ln_1p()).exp() * y).collect(),
        mu.iter()
            .map(|&k| -(-2.0 * steps * (k * tau).ln_1p()).exp_m1() / (2.0 * k + k * k * tau))
            .collect(),
    )
}

/// `m → ∞` limit of [`scheme_law`]: centred with variance `1/(2μ_k + μ_k²τ)`.
pub fn scheme_stationary_law(spectrum: &Spectrum, tau: f64) -> Result<GaussianLaw> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {tau}")));
    }
    let mu = spectrum.eigenvalues();
    Ok(GaussianLaw {
        mean: vec![0.0; mu.len()],
        variance: mu.iter().map(|&k| 1.0 / (2.0 * k + k * k * tau)).collect(),
    })
}

fn check_sizes(spectrum: &Spectrum, y0: &SpectralVector) -> Result<()> {
    if spectrum.n_modes() != y0.n_modes() {
        return Err(Error::Config("initial condition and spectrum sizes differ".into()));
    }
    Ok(())
}

/// `E φ(Y)` for `Y` distributed according to `law`.
pub fn expectation_of(phi: &TestFunctional, law: &GaussianLaw) -> Result<f64> {
    phi.check_modes(law.n_modes())?;
    let Some(j) = phi.mode() else {
        return Ok(phi.scalar(0.0));
    };
    let (m, v) = (law.mean[j], law.variance[j]);
    if v == 0.0 {
        return Ok(phi.scalar(m));
    }
    Ok(match *phi {
        TestFunctional::Constant(c) => c,
        // characteristic function of Normal(m, v) at 1
        TestFunctional::CosMode(_) => (-v / 2.0).exp() * m.cos(),
        TestFunctional::ExpNegSq { a, .. } => {
            let d = 1.0 + 2.0 * a * v;
            (-a * m * m / d).exp() / d.sqrt()
        }
        TestFunctional::BoundedPolyProbe(_) => gaussian_quadrature(|x| phi.scalar(x), m, v, 1e-10),
    })
}

/// Exact `∫ φ dµ̄ - ∫ φ dµ^τ` for the linear equation: the continuous
/// stationary expectation minus the scheme's stationary expectation.
pub fn invariant_measure_gap(phi: &TestFunctional, spectrum: &Spectrum, tau: f64) -> Result<f64> {
    let continuous = expectation_of(phi, &continuous_stationary_law(spectrum))?;
    let scheme = expectation_of(phi, &scheme_stationary_law(spectrum, tau)?)?;
    Ok(continuous - scheme)
}

/// `E f(m + √v Z)` by adaptive Simpson on `z ∈ [-12, 12]` (tail mass < 1e-32).
fn gaussian_quadrature(f: impl Fn(f64) -> f64, mean: f64, var: f64, abs_tol: f64) -> f64 {
    let sd = var.sqrt();
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let g = |z: f64| f(mean + sd * z) * norm * (-0.5 * z * z).exp();
    adaptive_simpson(&g, -12.0, 12.0, abs_tol)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn recurse(
        f: &impl Fn(f64) -> f64,
        (a, fa): (f64, f64),
        (m, fm): (f64, f64),
        (b, fb): (f64, f64),
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, (a, fa), (lm, flm), (m, fm), left, tol / 2.0, depth - 1)
            + recurse(f, (m, fm), (rm, frm), (b, fb), right, tol / 2.0, depth - 1)
    }
    // split first so narrow features near the centre are not skipped
    let pieces = 16;
    let h = (b - a) / pieces as f64;
    compensated_sum((0..pieces).map(|i| {
        let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        recurse(f, (lo, flo), (mid, fmid), (hi, fhi), whole, abs_tol / pieces as f64, 40)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum() -> Spectrum {
        Spectrum::dirichlet_laplacian(8)
    }

    #[test]
    fn continuous_law_limits() {
        let s = spectrum();
        let y0 = SpectralVector::new((0..8).map(|k| 1.0 / (k + 1) as f64).collect()).unwrap();
        let at0 = continuous_law(&s, &y0, 0.0).unwrap();
        assert_eq!(at0.mean, y0.coeffs());
        assert!(at0.variance.iter().all(|&v| v == 0.0));

        let late = continuous_law(&s, &y0, 50.0).unwrap();
        let stat = continuous_stationary_law(&s);
        for k in 0..8 {
            assert!(late.mean[k].abs() < 1e-100);
            assert!((late.variance[k] - stat.variance[k]).abs() < 1e-15);
        }
        let mu0 = s.mu0();
        let half = continuous_law(&s, &y0, 1.0 / (2.0 * mu0)).unwrap();
        assert!((half.variance[0] - (1.0 - (-1.0f64).exp()) / (2.0 * mu0)).abs() < 1e-15);
        assert!(continuous_law(&s, &y0, -1.0).is_err());
    }

    #[test]
    fn scheme_law_matches_recursion() {
        let s = spectrum();
        let y0 = SpectralVector::new(vec![1.0, -2.0, 0.5, 0.0, 0.0, 0.0, 0.0, 3.0]).unwrap();
        let tau = 0.03;
        for m in [0usize, 1, 7, 40] {
            let law = scheme_law(&s, &y0, tau, m).unwrap();
            for k in 0..8 {
                let mu = s.eigenvalue(k);
                let r = 1.0 / (1.0 + mu * tau);
                // variance recursion v ← r²(v + τ)
                let (mut mean, mut var) = (y0.coeffs()[k], 0.0);
                for _ in 0..m {
                    mean *= r;
                    var = r * r * (var + tau);
                }
                assert!((law.mean[k] - mean).abs() < 1e-14 * (1.0 + mean.abs()));
                assert!((law.variance[k] - var).abs() < 1e-14 * (1.0 + var));
            }
        }
    }

    #[test]
    fn scheme_stationary_is_fixed_point_and_below_continuous() {
        let s = spectrum();
        for tau in [1e-3, 0.1, 1.0] {
            let stat = scheme_stationary_law(&s, tau).unwrap();
            let cont = continuous_stationary_law(&s);
            for k in 0..8 {
                let mu = s.eigenvalue(k);
                let v = stat.variance[k];
                let r = 1.0 / (1.0 + mu * tau);
                assert!((r * r * (v + tau) - v).abs() < 1e-15);
                assert!((v - tau / ((1.0 + mu * tau).powi(2) - 1.0)).abs() < 1e-15);
                assert!(v < cont.variance[k]);
            }
            let far = scheme_law(&s, &SpectralVector::zeros(8), tau, 100_000).unwrap();
            assert!((far.variance[0] - stat.variance[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn expectation_examples() {
        let law = GaussianLaw::new(vec![0.3, 0.0], vec![0.0, 0.2]).unwrap();
        assert_eq!(expectation_of(&TestFunctional::CosMode(0), &law).unwrap(), 0.3f64.cos());
        assert!((expectation_of(&TestFunctional::CosMode(1), &law).unwrap() - (-0.1f64).exp()).abs() < 1e-15);
        let a = 1.7;
        let e = expectation_of(&TestFunctional::ExpNegSq { mode: 1, a }, &law).unwrap();
        assert!((e - 1.0 / (1.0 + 2.0 * a * 0.2f64).sqrt()).abs() < 1e-15);
        assert_eq!(expectation_of(&TestFunctional::Constant(2.5), &law).unwrap(), 2.5);
        assert!(expectation_of(&TestFunctional::CosMode(2), &law).is_err());
    }

    #[test]
    fn poly_probe_quadrature_agrees_with_brute_force_sum() {
        let (m, v) = (0.4, 0.7);
        let law = GaussianLaw::new(vec![m], vec![v]).unwrap();
        let e = expectation_of(&TestFunctional::BoundedPolyProbe(0), &law).unwrap();
        // plain midpoint rule on a fine grid as an independent check
        let n = 400_000;
        let (lo, hi) = (-14.0, 14.0);
        let h = (hi - lo) / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            let z: f64 = lo + (i as f64 + 0.5) * h;
            let x = m + v.sqrt() * z;
            s += x * x / (1.0 + x * x) * (-0.5 * z * z).exp();
        }
        let brute = s * h / (2.0 * std::f64::consts::PI).sqrt();
        assert!((e - brute).abs() < 1e-10, "{e} vs {brute}");
    }

    #[test]
    fn cos_gap_closed_form_and_first_order_decay() {
        let s = spectrum();
        let mu0 = s.mu0();
        let phi = TestFunctional::CosMode(0);
        let tau = 0.01;
        let gap = invariant_measure_gap(&phi, &s, tau).unwrap();
        let expected = (-1.0 / (4.0 * mu0)).exp() - (-1.0 / (2.0 * (2.0 * mu0 + mu0 * mu0 * tau))).exp();
        assert!((gap - expected).abs() < 1e-15);
        assert!(gap < 0.0);
        let mut prev = invariant_measure_gap(&phi, &s, 1e-3).unwrap();
        for i in 1..6 {
            let g = invariant_measure_gap(&phi, &s, 1e-3 / 2f64.powi(i)).unwrap();
            let ratio = prev / g;
            assert!(ratio > 1.9 && ratio < 2.01, "ratio {ratio}");
            prev = g;
        }
        assert!(invariant_measure_gap(&phi, &s, 1e-12).unwrap().abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(values), 2.0);
    }
}
