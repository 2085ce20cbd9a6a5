//! Likelihood computation and maximum likelihood estimation for mixed
//! hitting-time duration models.
//!
//! A duration is the first time a spectrally negative Lévy process crosses a
//! threshold `phi(x; beta) * V`, with `V` drawn from a discrete mixing
//! distribution. Brownian specifications use the inverse Gaussian closed
//! forms; specifications with jumps are handled by Euler-summed numerical
//! inversion of the Laplace transform along a deformed contour that never
//! needs the inverse of the Laplace exponent.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
    }};
}

pub mod error;
pub mod estimate;
pub mod gaussian;
pub mod inversion;
pub mod io;
pub mod levy;
pub mod likelihood;
pub mod model;
pub mod normal;
pub mod params;
pub mod simulate;

pub use error::{MhtError, Result};
pub use estimate::{fit, fit_from, starting_values, FitOptions, FitResult, ParameterEstimate};
pub use inversion::{InversionResult, InversionSettings};
pub use levy::{DiscreteShocks, GammaShocks, Jumps, LevyExponent};
pub use likelihood::{
    density, loglik, loglik_gradient, loglik_report, loglik_with_gradient, survival, Dataset, LikelihoodMode,
    Observation,
};
pub use model::{CovariateLink, JumpSpec, MhtModel, MixingDistribution, ModelSpec, Normalization};
pub use params::{JumpFamily, ModelStructure};
pub use simulate::{Censoring, SimSpec};
