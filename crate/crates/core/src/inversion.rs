//! Density and survival function by numerical Laplace inversion.
//!
//! The Bromwich integral for the survival function is taken along the
//! composed contour `psi(Lambda_BM(gamma))`, where `gamma` is the vertical
//! line `Re s = c` and `Lambda_BM` is the closed-form inverse of the Brownian
//! part of `psi`. After the change of variables the integrand is
//!
//! ```text
//! survival:  exp(t psi(z)) (1 - L(z phi)) / psi(z) * psi'(z) Lambda_BM'(s)
//! density:   exp(t psi(z)) L(z phi) * psi'(z) Lambda_BM'(s)
//! ```
//!
//! with `z = Lambda_BM(s)`, so the inverse `Lambda` of the full exponent is
//! never needed. The real-line integral is discretized by the trapezoidal
//! rule with step `h`, truncated after `R + m` terms, and the partial sums
//! are averaged with binomial (Euler) weights of order `M`.
//!
//! Since `psi_BM(Lambda_BM(s)) = s` and `psi_BM'(Lambda_BM(s)) Lambda_BM'(s) = 1`,
//! the integrand is evaluated as `psi(z) = s + J(z)` and
//! `psi'(z) Lambda_BM'(s) = 1 + J'(z) / sqrt(mu^2 + 2 sigma^2 s)`, with `J` the
//! jump part. `exp(s t)` then has the exact phase `r h t` on the grid.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MhtError, Result};
use crate::levy::lambda_bm_unchecked;
use crate::model::MhtModel;
use crate::params::ModelStructure;

/// Tuning parameters of the Euler-summed trapezoidal inversion. The contour
/// abscissa is `c = c_over_t / t` and the step `h = h_times_t / t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionSettings {
    pub c_over_t: f64,
    pub h_times_t: f64,
    /// Truncation base `R`.
    pub truncation: usize,
    /// Euler averaging order `M`.
    pub euler_order: usize,
}

impl Default for InversionSettings {
    fn default() -> Self {
        Self {
            c_over_t: 11.0,
            h_times_t: PI,
            truncation: 9,
            euler_order: 25,
        }
    }
}

impl InversionSettings {
    pub fn with_euler_order(self, euler_order: usize) -> Self {
        Self { euler_order, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_over_t.is_finite() && self.c_over_t > 0.0) {
            return invalid(format!(
                "contour abscissa multiplier must be positive, got {}",
                self.c_over_t
            ));
        }
        if !(self.h_times_t.is_finite() && self.h_times_t > 0.0) {
            return invalid(format!("step multiplier must be positive, got {}", self.h_times_t));
        }
        if self.truncation == 0 || self.euler_order == 0 {
            return invalid("truncation R and Euler order M must be at least 1");
        }
        Ok(())
    }

    /// Integrand evaluations per inversion (`R + M + 2`, including the
    /// extra term used by the error estimate).
    pub fn term_count(&self) -> usize {
        self.truncation + self.euler_order + 2
    }
}

/// Outcome of one inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionResult {
    /// Euler sum `E_{R,M}`.
    pub value: f64,
    /// `|E_{R,M+1} - E_{R,M}|`.
    pub error_estimate: f64,
    /// Number of integrand evaluations.
    pub evaluations: usize,
    /// Weighted sum of the absolute terms; `f64::EPSILON` times this bounds
    /// the floating point noise in `value`.
    pub term_magnitude: f64,
}

/// Which function of time to recover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Density,
    Survival,
}

/// Euler weights and grid phases for one settings value, reusable across `t`.
#[derive(Debug, Clone)]
pub(crate) struct Quadrature {
    pub settings: InversionSettings,
    /// Weight of `Re q_r` in `E_{R,M}`, excluding the `h / 2 pi` factor.
    main: Vec<f64>,
    /// Weight of `Re q_r` in `E_{R,M+1}`.
    next: Vec<f64>,
    /// `exp(c t) * exp(i r h t)` for each grid point.
    exp_st: Vec<Complex64>,
}

impl Quadrature {
    pub fn new(settings: InversionSettings) -> Result<Self> {
        settings.validate()?;
        let n = settings.term_count();
        let main = euler_weights(settings.truncation, settings.euler_order, n);
        let next = euler_weights(settings.truncation, settings.euler_order + 1, n);
        let scale = settings.c_over_t.exp();
        let exp_st = (0..n)
            .map(|r| {
                let (sin, cos) = (r as f64 * settings.h_times_t).sin_cos();
                Complex64::new(scale * cos, scale * sin)
            })
            .collect();
        Ok(Self {
            settings,
            main,
            next,
            exp_st,
        })
    }

    pub fn len(&self) -> usize {
        self.exp_st.len()
    }

    fn point(&self, r: usize, t: f64) -> Complex64 {
        Complex64::new(self.settings.c_over_t, r as f64 * self.settings.h_times_t) / t
    }

    fn step_factor(&self, t: f64) -> f64 {
        self.settings.h_times_t / t / (2.0 * PI)
    }
}

/// Weights `a_r` such that `E_{R,M} = sum_r a_r Re q_r` (up to `h / 2 pi`),
/// combining the half-sum doubling with the binomial average of the partial
/// sums `S_R .. S_{R+M}`.
fn euler_weights(truncation: usize, order: usize, len: usize) -> Vec<f64> {
    let mut binom = vec![0.0; order + 1];
    binom[0] = 0.5f64.powi(order as i32);
    for m in 0..order {
        binom[m + 1] = binom[m] * (order - m) as f64 / (m + 1) as f64;
    }
    // tail[j] = sum_{m >= j} binom[m]
    let mut tail = vec![0.0; order + 2];
    for m in (0..=order).rev() {
        tail[m] = tail[m + 1] + binom[m];
    }
    (0..len)
        .map(|r| {
            let included = if r <= truncation {
                1.0
            } else {
                tail.get(r - truncation).copied().unwrap_or(0.0)
            };
            let doubling = if r == 0 { 1.0 } else { 2.0 };
            doubling * included
        })
        .collect()
}

/// Complex `exp(w) - 1` without cancellation for small `|w|`.
#[inline]
fn exp_m1(w: Complex64) -> Complex64 {
    let (sin, cos) = w.im.sin_cos();
    let half = (0.5 * w.im).sin();
    Complex64::new(w.re.exp_m1() * cos - 2.0 * half * half, w.re.exp() * sin)
}

/// Everything about the model the integrand needs, laid out for the hot loop.
pub(crate) struct PreparedModel<'a> {
    model: &'a MhtModel,
    mu: f64,
    sigma: f64,
    has_jumps: bool,
    pub structure: ModelStructure,
    /// Length of the full gradient `(mu, sigma, alpha, beta, v_1..L, pi_1..L)`.
    pub grad_len: usize,
}

struct PointValue {
    q: Complex64,
    psi: Complex64,
}

impl<'a> PreparedModel<'a> {
    pub fn new(model: &'a MhtModel) -> Self {
        let structure = ModelStructure::of(model);
        let grad_len = structure.mass_offset() + structure.support_points;
        Self {
            model,
            mu: model.exponent.mu(),
            sigma: model.exponent.sigma(),
            has_jumps: model.exponent.has_jumps(),
            structure,
            grad_len,
        }
    }

    #[inline]
    fn value(&self, target: Target, phi: f64, t: f64, s: Complex64, exp_st: Complex64) -> PointValue {
        let (z, root) = lambda_bm_unchecked(s, self.mu, self.sigma);
        let (psi, slope, e_tg) = if self.has_jumps {
            let jv = self.model.exponent.jump_values(z);
            (s + jv.value, 1.0 + jv.d1 / root, exp_st * (t * jv.value).exp())
        } else {
            (s, Complex64::new(1.0, 0.0), exp_st)
        };
        let arg = z * phi;
        let mixing = &self.model.mixing;
        let q = match target {
            Target::Density => e_tg * mixing.laplace(arg) * slope,
            Target::Survival => {
                let one_minus: Complex64 = mixing
                    .support()
                    .iter()
                    .zip(mixing.masses())
                    .map(|(&v, &p)| -p * exp_m1(-arg * v))
                    .sum();
                e_tg * one_minus / psi * slope
            }
        };
        PointValue { q, psi }
    }

    /// Integrand value and its parameter gradient (full layout, complex).
    fn value_and_gradient(
        &self,
        target: Target,
        phi: f64,
        x: &[f64],
        t: f64,
        s: Complex64,
        exp_st: Complex64,
        grad: &mut [Complex64],
        scratch: &mut [Complex64],
    ) -> Complex64 {
        let st = &self.structure;
        let (mu, sigma) = (self.mu, self.sigma);
        let zero = Complex64::new(0.0, 0.0);
        let (z, root) = lambda_bm_unchecked(s, mu, sigma);
        let z_mu = -z / root;
        let z_sigma = -sigma * z * z / root;
        let root_mu = mu / root;
        let root_sigma = 2.0 * sigma * s / root;

        let jv = self.model.exponent.jump_values(z);
        let psi = s + jv.value;
        let slope = 1.0 + jv.d1 / root;
        let e_tg = if self.has_jumps {
            exp_st * (t * jv.value).exp()
        } else {
            exp_st
        };

        let arg = z * phi;
        let mixing = &self.model.mixing;
        let l = mixing.len();
        let (mut lt, mut vbar, mut one_minus) = (zero, zero, zero);
        let (v_off, pi_off) = (st.support_offset(), st.mass_offset());
        for (i, (&v, &p)) in mixing.support().iter().zip(mixing.masses()).enumerate() {
            let e = (-arg * v).exp();
            lt += p * e;
            vbar += p * v * e;
            if target == Target::Survival {
                one_minus -= p * exp_m1(-arg * v);
            }
            // dL / dv_l and dL / dpi_l, stored for now.
            grad[v_off + i] = -p * arg * e;
            grad[pi_off + i] = e;
        }

        // grad_j = c_g dG_j + c_l dL_j + c_k dK_j
        let (q, c_g, c_l, c_k) = match target {
            Target::Density => {
                let q = e_tg * lt * slope;
                (q, q * t, e_tg * slope, e_tg * lt)
            }
            Target::Survival => {
                let u = one_minus / psi;
                let a = e_tg * slope;
                let q = a * u;
                (q, q * t - a * u / psi, -a / psi, e_tg * u)
            }
        };

        let dl_dz = -phi * vbar;
        // Drift and dispersion move z, psi and the slope factor.
        let dk_mu = jv.d2 * z_mu / root - jv.d1 * root_mu / (root * root);
        let dk_sigma = jv.d2 * z_sigma / root - jv.d1 * root_sigma / (root * root);
        grad[0] = c_g * jv.d1 * z_mu + c_l * dl_dz * z_mu + c_k * dk_mu;
        grad[1] = c_g * jv.d1 * z_sigma + c_l * dl_dz * z_sigma + c_k * dk_sigma;

        let nj = st.jump_len();
        if nj > 0 {
            let (dv, ds) = scratch.split_at_mut(nj);
            self.model.exponent.jump_param_derivatives(z, dv, &mut ds[..nj]);
            for j in 0..nj {
                grad[2 + j] = c_g * dv[j] + c_k * ds[j] / root;
            }
        }
        let b_off = st.beta_offset();
        for (k, &xk) in x.iter().enumerate() {
            grad[b_off + k] = c_l * (-z * phi * xk * vbar);
        }
        for i in 0..l {
            grad[v_off + i] *= c_l;
            grad[pi_off + i] *= c_l;
        }
        q
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        invalid(format!("duration must be positive, got {t}"))
    }
}

fn check_contour(s: Complex64) -> Result<()> {
    if s.re > 0.0 && s.re.is_finite() && s.im.is_finite() {
        Ok(())
    } else {
        invalid(format!("contour point must satisfy Re s > 0, got {s}"))
    }
}

fn integrand(target: Target, model: &MhtModel, x: &[f64], t: f64, s: Complex64) -> Result<Complex64> {
    check_time(t)?;
    check_contour(s)?;
    let phi = model.link.threshold(x)?;
    let exp_st = (s * t).exp();
    let v = PreparedModel::new(model).value(target, phi, t, s, exp_st);
    if v.psi.norm() == 0.0 {
        return Err(MhtError::Singularity(format!("psi(Lambda_BM(s)) vanishes at s = {s}")));
    }
    Ok(v.q)
}

/// Survival-function integrand `q*(t, s | x)` at one contour point.
pub fn survival_integrand(model: &MhtModel, x: &[f64], t: f64, s: Complex64) -> Result<Complex64> {
    integrand(Target::Survival, model, x, t, s)
}

/// Density integrand at one contour point.
pub fn density_integrand(model: &MhtModel, x: &[f64], t: f64, s: Complex64) -> Result<Complex64> {
    integrand(Target::Density, model, x, t, s)
}

/// `E_{R,M}` for the density or survival function at `t`, with its error estimate.
pub fn euler_invert(
    target: Target,
    model: &MhtModel,
    x: &[f64],
    t: f64,
    settings: &InversionSettings,
) -> Result<InversionResult> {
    check_time(t)?;
    let quad = Quadrature::new(*settings)?;
    let phi = model.link.threshold(x)?;
    invert_prepared(target, &PreparedModel::new(model), phi, t, &quad)
}

pub(crate) fn invert_prepared(
    target: Target,
    prepared: &PreparedModel<'_>,
    phi: f64,
    t: f64,
    quad: &Quadrature,
) -> Result<InversionResult> {
    let (mut main, mut next, mut magnitude) = (0.0, 0.0, 0.0);
    for r in 0..quad.len() {
        let v = prepared.value(target, phi, t, quad.point(r, t), quad.exp_st[r]);
        debug_assert!(v.psi.norm() > 0.0);
        main += quad.main[r] * v.q.re;
        next += quad.next[r] * v.q.re;
        magnitude += quad.main[r] * v.q.norm();
    }
    let factor = quad.step_factor(t);
    let (value, value_next) = (main * factor, next * factor);
    if !value.is_finite() || !value_next.is_finite() {
        return Err(MhtError::Numerical(format!(
            "non-finite Euler sum at t = {t} with settings {:?}",
            quad.settings
        )));
    }
    Ok(InversionResult {
        value,
        error_estimate: (value_next - value).abs(),
        evaluations: quad.len(),
        term_magnitude: magnitude * factor,
    })
}

/// `E_{R,M}` and its gradient over the full parameter layout
/// `(mu, sigma, alpha, beta, v_1..L, pi_1..L)`, written to `grad`.
pub(crate) fn invert_with_gradient(
    target: Target,
    prepared: &PreparedModel<'_>,
    phi: f64,
    x: &[f64],
    t: f64,
    quad: &Quadrature,
    grad: &mut [f64],
) -> Result<f64> {
    let n = prepared.grad_len;
    let mut point_grad = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); 2 * prepared.structure.jump_len()];
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut value = 0.0;
    for r in 0..quad.len() - 1 {
        let w = quad.main[r];
        if w == 0.0 {
            continue;
        }
        let q = prepared.value_and_gradient(
            target,
            phi,
            x,
            t,
            quad.point(r, t),
            quad.exp_st[r],
            &mut point_grad,
            &mut scratch,
        );
        value += w * q.re;
        for (g, pg) in grad.iter_mut().zip(&point_grad) {
            *g += w * pg.re;
        }
    }
    let factor = quad.step_factor(t);
    grad.iter_mut().for_each(|g| *g *= factor);
    let value = value * factor;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(MhtError::Numerical(format!(
            "non-finite Euler sum or gradient at t = {t} with settings {:?}",
            quad.settings
        )));
    }
    Ok(value)
}

/// Allowed size of a clamping correction before it counts as a tuning failure.
fn clamp_tolerance(r: &InversionResult) -> f64 {
    10.0 * (r.error_estimate + 64.0 * f64::EPSILON * r.term_magnitude)
}

/// Density `f(t | x)` clamped to `[0, inf)`.
pub fn invert_density(model: &MhtModel, x: &[f64], t: f64, settings: &InversionSettings) -> Result<f64> {
    let r = euler_invert(Target::Density, model, x, t, settings)?;
    if r.value < -clamp_tolerance(&r) {
        return Err(MhtError::Numerical(format!(
            "inverted density {} at t = {t} is negative beyond the error estimate {}",
            r.value, r.error_estimate
        )));
    }
    Ok(r.value.max(0.0))
}

/// Survival function `Fbar(t | x)` clamped to `[0, 1]`.
pub fn invert_survival(model: &MhtModel, x: &[f64], t: f64, settings: &InversionSettings) -> Result<f64> {
    let r = euler_invert(Target::Survival, model, x, t, settings)?;
    let tol = clamp_tolerance(&r);
    if r.value < -tol || r.value > 1.0 + tol {
        return Err(MhtError::Numerical(format!(
            "inverted survival {} at t = {t} lies outside [0, 1] beyond the error estimate {}",
            r.value, r.error_estimate
        )));
    }
    Ok(r.value.clamp(0.0, 1.0))
}
