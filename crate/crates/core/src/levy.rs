//! Laplace exponents of spectrally negative Lévy processes and their inverses.
//!
//! A process `Y` with `E[exp(s Y(t))] = exp(psi(s) t)` is parameterized by a
//! drift `mu`, a Gaussian dispersion `sigma > 0` and an optional compound
//! Poisson component with negative jumps:
//!
//! ```text
//! psi(s) = mu s + sigma^2 s^2 / 2 + J(s)
//! J(s)   = sum_q lambda_q (exp(s nu_q) - 1)                (discrete shocks)
//! J(s)   = lambda ((s / omega + 1)^(-tau) - 1)             (gamma shocks)
//! ```
//!
//! All complex powers and roots use the principal branch; callers keep
//! `Re s >= 0` so that no argument crosses a cut.

use num_complex::Complex64;

use crate::error::{invalid, MhtError, Result};

/// Compound Poisson jump component of a Laplace exponent.
#[derive(Debug, Clone, PartialEq)]
pub enum Jumps {
    None,
    Discrete(DiscreteShocks),
    Gamma(GammaShocks),
}

/// Shocks of fixed negative sizes `nu_q` arriving at Poisson rates `lambda_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteShocks {
    rates: Vec<f64>,
    sizes: Vec<f64>,
}

impl DiscreteShocks {
    /// `sizes` must be negative and strictly increasing, `rates` positive.
    pub fn new(rates: Vec<f64>, sizes: Vec<f64>) -> Result<Self> {
        if rates.is_empty() || rates.len() != sizes.len() {
            return invalid("discrete shocks need matching, nonempty rate and size vectors");
        }
        if rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return invalid(format!("shock rates must be positive, got {rates:?}"));
        }
        if sizes.iter().any(|v| !v.is_finite() || *v >= 0.0) {
            return invalid(format!("shock sizes must be negative, got {sizes:?}"));
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!("shock sizes must be strictly increasing, got {sizes:?}"));
        }
        Ok(Self { rates, sizes })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

/// Shocks arriving at rate `lambda` whose magnitudes are gamma distributed
/// with shape `tau` and rate `omega` (mean magnitude `tau / omega`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaShocks {
    pub arrival_rate: f64,
    pub size_rate: f64,
    pub shape: f64,
}

impl GammaShocks {
    pub fn new(arrival_rate: f64, size_rate: f64, shape: f64) -> Result<Self> {
        for (name, v) in [
            ("arrival rate", arrival_rate),
            ("size rate", size_rate),
            ("shape", shape),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return invalid(format!("gamma shock {name} must be positive, got {v}"));
            }
        }
        Ok(Self {
            arrival_rate,
            size_rate,
            shape,
        })
    }
}

/// Laplace exponent `psi(.; mu, sigma, alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyExponent {
    mu: f64,
    sigma: f64,
    jumps: Jumps,
}

/// Values of the jump part and its first two derivatives at one point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct JumpValues {
    pub value: Complex64,
    pub d1: Complex64,
    pub d2: Complex64,
}

impl LevyExponent {
    pub fn new(mu: f64, sigma: f64, jumps: Jumps) -> Result<Self> {
        if !mu.is_finite() {
            return invalid(format!("drift must be finite, got {mu}"));
        }
        if !sigma.is_finite() || sigma <= 0.0 {
            return invalid(format!("dispersion must be positive, got {sigma}"));
        }
        Ok(Self { mu, sigma, jumps })
    }

    /// Brownian motion with drift.
    pub fn brownian(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, Jumps::None)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn jumps(&self) -> &Jumps {
        &self.jumps
    }

    pub fn has_jumps(&self) -> bool {
        !matches!(self.jumps, Jumps::None)
    }

    /// Number of parameters in the jump component.
    pub fn jump_param_count(&self) -> usize {
        match &self.jumps {
            Jumps::None => 0,
            Jumps::Discrete(d) => 2 * d.len(),
            Jumps::Gamma(_) => 3,
        }
    }

    /// Total Poisson arrival rate of shocks.
    pub fn total_jump_rate(&self) -> f64 {
        match &self.jumps {
            Jumps::None => 0.0,
            Jumps::Discrete(d) => d.rates.iter().sum(),
            Jumps::Gamma(g) => g.arrival_rate,
        }
    }

    /// `psi(s)`.
    pub fn psi(&self, s: Complex64) -> Result<Complex64> {
        check_finite(s)?;
        Ok(self.psi_unchecked(s))
    }

    /// `psi'(s)`.
    pub fn psi_prime(&self, s: Complex64) -> Result<Complex64> {
        check_finite(s)?;
        Ok(self.mu + self.sigma * self.sigma * s + self.jump_values(s).d1)
    }

    /// Real-axis evaluation.
    pub fn psi_real(&self, x: f64) -> f64 {
        self.psi_unchecked(Complex64::new(x, 0.0)).re
    }

    pub fn psi_prime_real(&self, x: f64) -> f64 {
        self.mu + self.sigma * self.sigma * x + self.jump_values(Complex64::new(x, 0.0)).d1.re
    }

    pub(crate) fn psi_unchecked(&self, s: Complex64) -> Complex64 {
        let brownian = s * (self.mu + 0.5 * self.sigma * self.sigma * s);
        if self.has_jumps() {
            brownian + self.jump_values(s).value
        } else {
            brownian
        }
    }

    /// Jump part `J` and its derivatives `J'`, `J''`.
    pub(crate) fn jump_values(&self, z: Complex64) -> JumpValues {
        let zero = Complex64::new(0.0, 0.0);
        match &self.jumps {
            Jumps::None => JumpValues {
                value: zero,
                d1: zero,
                d2: zero,
            },
            Jumps::Discrete(d) => {
                let mut out = JumpValues {
                    value: zero,
                    d1: zero,
                    d2: zero,
                };
                for (&rate, &size) in d.rates.iter().zip(&d.sizes) {
                    let e = (z * size).exp();
                    out.value += rate * (e - 1.0);
                    out.d1 += rate * size * e;
                    out.d2 += rate * size * size * e;
                }
                out
            }
            Jumps::Gamma(g) => {
                let log_base = ln_1p(z / g.size_rate);
                let p = (-g.shape * log_base).exp();
                let p1 = p / (1.0 + z / g.size_rate);
                let p2 = p1 / (1.0 + z / g.size_rate);
                let k = g.arrival_rate * g.shape / g.size_rate;
                JumpValues {
                    value: g.arrival_rate * (p - 1.0),
                    d1: -k * p1,
                    d2: k * (g.shape + 1.0) / g.size_rate * p2,
                }
            }
        }
    }

    /// Derivatives of `J(z)` and `J'(z)` with respect to the jump
    /// parameters, in the order `(lambda_1..Q, nu_1..Q)` or
    /// `(lambda, omega, tau)`.
    pub(crate) fn jump_param_derivatives(&self, z: Complex64, d_value: &mut [Complex64], d_slope: &mut [Complex64]) {
        match &self.jumps {
            Jumps::None => {}
            Jumps::Discrete(d) => {
                let q = d.len();
                for (i, (&rate, &size)) in d.rates.iter().zip(&d.sizes).enumerate() {
                    let e = (z * size).exp();
                    d_value[i] = e - 1.0;
                    d_slope[i] = size * e;
                    d_value[q + i] = rate * z * e;
                    d_slope[q + i] = rate * e * (1.0 + z * size);
                }
            }
            Jumps::Gamma(g) => {
                let (lambda, omega, tau) = (g.arrival_rate, g.size_rate, g.shape);
                let base = 1.0 + z / omega;
                let log_base = ln_1p(z / omega);
                let p = (-tau * log_base).exp();
                let p1 = p / base;
                let p2 = p1 / base;
                d_value[0] = p - 1.0;
                d_slope[0] = -tau / omega * p1;
                d_value[1] = lambda * tau * z * p1 / (omega * omega);
                d_slope[1] = lambda * tau / (omega * omega) * p2 * (base - (tau + 1.0) * z / omega);
                d_value[2] = -lambda * p * log_base;
                d_slope[2] = lambda / omega * p1 * (tau * log_base - 1.0);
            }
        }
    }

    /// Largest real root `Lambda(s)` of `psi(z) = s`, for real `s >= 0`.
    ///
    /// Bracketed Newton iteration with bisection fallback on the increasing
    /// branch of `psi`.
    pub fn lambda_numeric(&self, s: f64) -> Result<f64> {
        if !s.is_finite() || s < 0.0 {
            return invalid(format!("Lambda is defined for real s >= 0, got {s}"));
        }
        let sigma2 = self.sigma * self.sigma;
        let lambda_total = self.total_jump_rate();

        // psi is convex, so it increases to the right of its minimizer.
        let lo_branch = if self.psi_prime_real(0.0) >= 0.0 {
            0.0
        } else {
            let j1_at_zero = self.jump_values(Complex64::new(0.0, 0.0)).d1.re;
            let hi = (-self.mu - j1_at_zero) / sigma2;
            solve_increasing(
                |z| self.psi_prime_real(z),
                0.0,
                hi,
                0.0,
                |z| self.mu + sigma2 * z + self.jump_values(Complex64::new(z, 0.0)).d2.re,
            )?
        };
        let bm_lo = lambda_bm_real(s, self.mu, self.sigma);
        let lo = bm_lo.max(lo_branch);
        // J >= -lambda_total on the nonnegative axis.
        let hi = lambda_bm_real(s + lambda_total, self.mu, self.sigma).max(lo);
        if !self.has_jumps() {
            return Ok(bm_lo.max(lo_branch));
        }
        solve_increasing(|z| self.psi_real(z) - s, lo, hi, s, |z| self.psi_prime_real(z))
    }
}

/// `Lambda_BM(s; mu, sigma) = (sqrt(mu^2 + 2 sigma^2 s) - mu) / sigma^2`,
/// the inverse of `psi_BM(z) = mu z + sigma^2 z^2 / 2` on its increasing branch.
pub fn lambda_bm(s: Complex64, mu: f64, sigma: f64) -> Result<Complex64> {
    check_finite(s)?;
    if !sigma.is_finite() || sigma <= 0.0 {
        return invalid(format!("dispersion must be positive, got {sigma}"));
    }
    if !mu.is_finite() {
        return invalid(format!("drift must be finite, got {mu}"));
    }
    Ok(lambda_bm_unchecked(s, mu, sigma).0)
}

/// `d Lambda_BM / ds = 1 / sqrt(mu^2 + 2 sigma^2 s)`.
pub fn lambda_bm_prime(s: Complex64, mu: f64, sigma: f64) -> Result<Complex64> {
    check_finite(s)?;
    if !sigma.is_finite() || sigma <= 0.0 {
        return invalid(format!("dispersion must be positive, got {sigma}"));
    }
    let (_, root) = lambda_bm_unchecked(s, mu, sigma);
    if root.norm() == 0.0 {
        return Err(MhtError::Singularity(format!(
            "Lambda_BM' is singular at s = {s} (mu^2 + 2 sigma^2 s = 0)"
        )));
    }
    Ok(root.inv())
}

/// Returns `(Lambda_BM(s), sqrt(mu^2 + 2 sigma^2 s))`.
///
/// For `mu > 0` the rationalized form `2 s / (root + mu)` avoids the
/// cancellation in `root - mu` near `s = 0`.
#[inline]
pub(crate) fn lambda_bm_unchecked(s: Complex64, mu: f64, sigma: f64) -> (Complex64, Complex64) {
    let sigma2 = sigma * sigma;
    let root = (mu * mu + 2.0 * sigma2 * s).sqrt();
    let value = if mu > 0.0 {
        2.0 * s / (root + mu)
    } else {
        (root - mu) / sigma2
    };
    (value, root)
}

pub(crate) fn lambda_bm_real(s: f64, mu: f64, sigma: f64) -> f64 {
    lambda_bm_unchecked(Complex64::new(s, 0.0), mu, sigma).0.re
}

/// `ln(1 + w)` accurate for small `|w|`.
#[inline]
pub(crate) fn ln_1p(w: Complex64) -> Complex64 {
    let re = 0.5 * (2.0 * w.re + w.norm_sqr()).ln_1p();
    let im = w.im.atan2(1.0 + w.re);
    Complex64::new(re, im)
}

fn check_finite(s: Complex64) -> Result<()> {
    if s.re.is_finite() && s.im.is_finite() {
        Ok(())
    } else {
        invalid(format!("non-finite argument {s}"))
    }
}

const ROOT_MAX_ITER: usize = 200;
const ROOT_REL_TOL: f64 = 1e-13;

/// Root of an increasing function `f` on `[lo, hi]` with `f(lo) <= 0 <= f(hi)`.
/// `scale` sets the residual tolerance; `df` is the derivative used for Newton steps.
fn solve_increasing(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    scale: f64,
    df: impl Fn(f64) -> f64,
) -> Result<f64> {
    let residual_tol = 1e-15 * scale.max(1.0);
    let mut f_hi = f(hi);
    // Widen the bracket if rounding left the upper end just short of the root.
    let mut widen = 0;
    while f_hi < 0.0 {
        hi = hi * 2.0 + 1.0;
        f_hi = f(hi);
        widen += 1;
        if widen > 64 {
            return Err(MhtError::Numerical(format!("could not bracket root: f({hi}) = {f_hi}")));
        }
    }
    let f_lo = f(lo);
    if f_lo >= 0.0 {
        return Ok(lo);
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..ROOT_MAX_ITER {
        let fx = f(x);
        if fx.abs() <= residual_tol {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= ROOT_REL_TOL * hi.abs().max(1e-300) {
            return Ok(0.5 * (lo + hi));
        }
        let slope = df(x);
        let newton = x - fx / slope;
        x = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(MhtError::Numerical(format!(
        "root finder did not converge in {ROOT_MAX_ITER} iterations; bracket [{lo}, {hi}]"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn one_shock() -> LevyExponent {
        LevyExponent::new(
            1.0,
            1.0,
            Jumps::Discrete(DiscreteShocks::new(vec![1.0], vec![-1.0]).unwrap()),
        )
        .unwrap()
    }

    fn gamma_spec() -> LevyExponent {
        LevyExponent::new(1.0, 1.0, Jumps::Gamma(GammaShocks::new(1.0, 2.0, 1.0).unwrap())).unwrap()
    }

    #[test]
    fn psi_examples() {
        let bm = LevyExponent::brownian(1.0, 1.0).unwrap();
        assert_close!(bm.psi(c(2.0)).unwrap().re, 4.0, 1e-15);
        assert_eq!(one_shock().psi(c(0.0)).unwrap(), c(0.0));
        assert_eq!(gamma_spec().psi(c(0.0)).unwrap(), c(0.0));
        let expected = 1.0 + 0.5 + ((-1.0f64).exp() - 1.0);
        assert_close!(one_shock().psi(c(1.0)).unwrap().re, expected, 1e-15);
        assert_close!(expected, 0.867879, 1e-6);
    }

    #[test]
    fn psi_prime_examples() {
        let bm = LevyExponent::brownian(1.0, 1.0).unwrap();
        assert_close!(bm.psi_prime(c(3.0)).unwrap().re, 4.0, 1e-15);
        assert_close!(one_shock().psi_prime(c(0.0)).unwrap().re, 0.0, 1e-15);
    }

    #[test]
    fn psi_prime_matches_finite_differences() {
        let h = 1e-6;
        for spec in [one_shock(), gamma_spec(), LevyExponent::brownian(-0.5, 2.0).unwrap()] {
            for &x in &[0.0, 0.3, 1.0, 4.0, 10.0] {
                let fd = (spec.psi_real(x + h) - spec.psi_real(x - h)) / (2.0 * h);
                let an = spec.psi_prime_real(x);
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn non_finite_argument_rejected() {
        let bm = LevyExponent::brownian(1.0, 1.0).unwrap();
        assert!(matches!(
            bm.psi(Complex64::new(f64::NAN, 0.0)),
            Err(MhtError::InvalidArgument(_))
        ));
        assert!(bm.psi_prime(Complex64::new(0.0, f64::INFINITY)).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(LevyExponent::brownian(1.0, 0.0).is_err());
        assert!(DiscreteShocks::new(vec![1.0], vec![0.5]).is_err());
        assert!(DiscreteShocks::new(vec![1.0, 1.0], vec![-1.0, -2.0]).is_err());
        assert!(DiscreteShocks::new(vec![-1.0], vec![-1.0]).is_err());
        assert!(GammaShocks::new(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn lambda_bm_examples() {
        assert_eq!(lambda_bm(c(0.0), 1.0, 1.0).unwrap(), c(0.0));
        assert_close!(lambda_bm(c(0.0), -1.0, 1.0).unwrap().re, 2.0, 1e-15);
        let v = lambda_bm(c(4.0), 1.0, 2f64.sqrt()).unwrap().re;
        assert_close!(v, (17f64.sqrt() - 1.0) / 2.0, 1e-14);
        assert_close!(v, 1.561553, 1e-6);
        assert!(lambda_bm(c(1.0), 1.0, 0.0).is_err());
    }

    #[test]
    fn lambda_bm_prime_examples() {
        assert_close!(lambda_bm_prime(c(0.0), 1.0, 1.0).unwrap().re, 1.0, 1e-15);
        let v = lambda_bm_prime(c(4.0), 1.0, 2f64.sqrt()).unwrap().re;
        assert_close!(v, 1.0 / 17f64.sqrt(), 1e-15);
        assert_close!(v, 0.242536, 1e-6);
        // Branch point mu^2 + 2 sigma^2 s = 0 at s = -1/2.
        assert!(matches!(
            lambda_bm_prime(c(-0.5), 1.0, 1.0),
            Err(MhtError::Singularity(_))
        ));
        let h = 1e-6;
        for &s in &[0.1, 0.5, 2.0, 7.0, 30.0] {
            let fd =
                (lambda_bm(c(s + h), 0.7, 1.3).unwrap().re - lambda_bm(c(s - h), 0.7, 1.3).unwrap().re) / (2.0 * h);
            let an = lambda_bm_prime(c(s), 0.7, 1.3).unwrap().re;
            assert!((fd - an).abs() <= 1e-7 * an.abs(), "{fd} vs {an}");
        }
    }

    #[test]
    fn lambda_bm_inverts_brownian_exponent_on_complex_plane() {
        for &(mu, sigma) in &[(1.0, 1.0), (-1.0, 0.5), (0.3, 2.0)] {
            let bm = LevyExponent::brownian(mu, sigma).unwrap();
            for &(re, im) in &[(0.1, 0.0), (2.0, 5.0), (11.0, -30.0), (0.5, 200.0)] {
                let s = Complex64::new(re, im);
                let back = bm.psi(lambda_bm(s, mu, sigma).unwrap()).unwrap();
                assert!((back - s).norm() <= 1e-12 * s.norm().max(1.0), "{back} vs {s}");
            }
        }
    }

    /// Plain bisection on the increasing branch, independent of the Newton path.
    fn bisection_lambda(spec: &LevyExponent, s: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        while spec.psi_real(hi) < s || spec.psi_prime_real(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if spec.psi_real(mid) < s || spec.psi_prime_real(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambda_numeric_examples() {
        let bm = LevyExponent::brownian(1.0, 1.0).unwrap();
        assert_close!(bm.lambda_numeric(4.0).unwrap(), 2.0, 1e-14);
        assert_eq!(one_shock().lambda_numeric(0.0).unwrap(), 0.0);
        assert_eq!(gamma_spec().lambda_numeric(0.0).unwrap(), 0.0);
        let z = one_shock().lambda_numeric(1.0).unwrap();
        assert_close!(z + 0.5 * z * z + (-z).exp() - 1.0, 1.0, 1e-13);
        assert_close!(z, bisection_lambda(&one_shock(), 1.0), 1e-12);
        assert!(bm.lambda_numeric(-1.0).is_err());
    }

    #[test]
    fn lambda_numeric_defective_case() {
        // psi'(0) < 0: Lambda(0) is the positive root of psi.
        let spec = LevyExponent::new(
            0.2,
            1.0,
            Jumps::Discrete(DiscreteShocks::new(vec![0.5], vec![-2.0]).unwrap()),
        )
        .unwrap();
        assert!(spec.psi_prime_real(0.0) < 0.0);
        let l0 = spec.lambda_numeric(0.0).unwrap();
        assert!(l0 > 0.0);
        assert!(spec.psi_real(l0).abs() <= 1e-12);
        assert_close!(l0, bisection_lambda(&spec, 0.0), 1e-11);
        let bm = LevyExponent::brownian(-1.0, 1.0).unwrap();
        assert_close!(bm.lambda_numeric(0.0).unwrap(), 2.0, 1e-14);
    }

    #[test]
    fn degenerate_gamma_shape_stays_finite() {
        // Shape and rate both huge with ratio 5: nearly a fixed shock of size -5.
        let g = LevyExponent::new(1.0, 0.7, Jumps::Gamma(GammaShocks::new(0.02, 2e8, 1e9).unwrap())).unwrap();
        let d = LevyExponent::new(
            1.0,
            0.7,
            Jumps::Discrete(DiscreteShocks::new(vec![0.02], vec![-5.0]).unwrap()),
        )
        .unwrap();
        for &s in &[Complex64::new(0.5, 0.0), Complex64::new(3.0, 40.0)] {
            let a = g.psi(s).unwrap();
            let b = d.psi(s).unwrap();
            assert!(a.re.is_finite() && a.im.is_finite());
            assert!((a - b).norm() < 1e-6 * b.norm().max(1.0), "{a} vs {b}");
        }
    }
}
