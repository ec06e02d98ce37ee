//! Spectral Galerkin simulation of the stochastic heat equation with a
//! bounded reaction term on (0, 1), discretised in time by the
//! semi-implicit Euler scheme, together with Monte Carlo machinery for
//! weak-error and invariant-measure experiments.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod integrators;
pub mod noise;
pub mod nonlinear;
pub mod oracles;
pub mod spectral;

pub use error::{Error, Result};
pub use integrators::{ModelSpec, ReferenceNoise, SchemeParams};
pub use nonlinear::{BuiltinNonlinearity, NemytskiiSpec};
pub use oracles::{GaussianLaw, TestFunctional};
pub use spectral::{SpectralVector, Spectrum};
