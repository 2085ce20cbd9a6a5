//! Closed forms for Brownian first passage: the inverse Gaussian density and
//! survival function, and the mixed log-likelihood built from them.

use std::f64::consts::PI;

use crate::error::{invalid, MhtError, Result};
use crate::likelihood::{Dataset, LoglikReport};
use crate::model::MhtModel;
use crate::normal;

/// Brownian motion with drift `mu` and dispersion `sigma` started at zero,
/// crossing the level `barrier = phi(x; beta) * v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IgParams {
    pub mu: f64,
    pub sigma: f64,
    pub barrier: f64,
}

impl IgParams {
    pub fn new(mu: f64, sigma: f64, barrier: f64) -> Result<Self> {
        if !mu.is_finite() {
            return invalid(format!("drift must be finite, got {mu}"));
        }
        if !sigma.is_finite() || sigma <= 0.0 {
            return invalid(format!("dispersion must be positive, got {sigma}"));
        }
        if !barrier.is_finite() || barrier <= 0.0 {
            return invalid(format!("barrier must be positive, got {barrier}"));
        }
        Ok(Self { mu, sigma, barrier })
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        invalid(format!("duration must be positive, got {t}"))
    }
}

/// `ln f(t)` of the first-passage density.
pub fn ig_log_density(p: IgParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(log_density(p, t))
}

/// First-passage density `b / (sigma sqrt(2 pi t^3)) exp(-(b - mu t)^2 / (2 sigma^2 t))`.
pub fn ig_density(p: IgParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(log_density(p, t).exp())
}

/// `ln` of the survival function.
pub fn ig_log_survival(p: IgParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(survival_parts(p, t).log_value)
}

/// Survival function `Phi(a) - exp(2 mu b / sigma^2) Phi(-c)` with
/// `a = (b - mu t) / (sigma sqrt t)` and `c = (b + mu t) / (sigma sqrt t)`.
pub fn ig_survival(p: IgParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(survival_parts(p, t).log_value.exp().clamp(0.0, 1.0))
}

/// Limit of the survival function as `t -> infinity` (the defect).
pub fn ig_defect(p: IgParams) -> f64 {
    if p.mu >= 0.0 {
        0.0
    } else {
        -(2.0 * p.mu * p.barrier / (p.sigma * p.sigma)).exp_m1()
    }
}

pub(crate) fn log_density(p: IgParams, t: f64) -> f64 {
    let IgParams { mu, sigma, barrier } = p;
    let gap = barrier - mu * t;
    barrier.ln() - sigma.ln() - 0.5 * (2.0 * PI * t * t * t).ln() - gap * gap / (2.0 * sigma * sigma * t)
}

/// Log-density together with its derivatives in `(mu, sigma, barrier)`.
pub(crate) fn log_density_with_gradient(p: IgParams, t: f64) -> (f64, [f64; 3]) {
    let IgParams { mu, sigma, barrier } = p;
    let gap = barrier - mu * t;
    let s2 = sigma * sigma;
    let d_mu = gap / s2;
    let d_sigma = -1.0 / sigma + gap * gap / (s2 * sigma * t);
    let d_barrier = 1.0 / barrier - gap / (s2 * t);
    (log_density(p, t), [d_mu, d_sigma, d_barrier])
}

struct SurvivalParts {
    log_value: f64,
    /// `pdf(a) / Fbar`.
    ratio_pdf: f64,
    /// `exp(k) Phi(-c) / Fbar`.
    ratio_reflected: f64,
    root_t: f64,
}

fn survival_parts(p: IgParams, t: f64) -> SurvivalParts {
    let IgParams { mu, sigma, barrier } = p;
    let root_t = t.sqrt();
    let a = (barrier - mu * t) / (sigma * root_t);
    let c = (barrier + mu * t) / (sigma * root_t);
    let k = 2.0 * mu * barrier / (sigma * sigma);
    let direct = normal::ln_cdf(a);
    // exp(k) Phi(-c) is formed on the log scale; exp(k) alone may overflow.
    let reflected = k + normal::ln_cdf(-c);
    let log_value = if reflected < direct {
        direct + (-(reflected - direct).exp()).ln_1p()
    } else {
        f64::NEG_INFINITY
    };
    let log_pdf_a = -0.5 * a * a - 0.5 * (2.0 * PI).ln();
    SurvivalParts {
        log_value,
        ratio_pdf: (log_pdf_a - log_value).exp(),
        ratio_reflected: (reflected - log_value).exp(),
        root_t,
    }
}

/// Log-survival together with its derivatives in `(mu, sigma, barrier)`.
pub(crate) fn log_survival_with_gradient(p: IgParams, t: f64) -> (f64, [f64; 3]) {
    let IgParams { mu, sigma, barrier } = p;
    let parts = survival_parts(p, t);
    let s2 = sigma * sigma;
    let (r1, r2) = (parts.ratio_pdf, parts.ratio_reflected);
    let d_mu = -r2 * 2.0 * barrier / s2;
    let d_sigma = -r1 * 2.0 * barrier / (s2 * parts.root_t) + r2 * 4.0 * mu * barrier / (s2 * sigma);
    let d_barrier = r1 * 2.0 / (sigma * parts.root_t) - r2 * 2.0 * mu / s2;
    (parts.log_value, [d_mu, d_sigma, d_barrier])
}

/// Mixed inverse Gaussian log-likelihood
/// `sum_n ln sum_l pi_l f(T_n | X_n, v_l)^D_n Fbar(T_n | X_n, v_l)^(1 - D_n)`.
pub fn mixed_ig_loglik(model: &MhtModel, data: &Dataset) -> Result<LoglikReport> {
    if model.exponent.has_jumps() {
        return invalid("closed-form likelihood requires a specification without jumps");
    }
    data.check_dim(model.link.dim())?;
    let mu = model.exponent.mu();
    let sigma = model.exponent.sigma();
    let mut report = LoglikReport::default();
    let mut terms = Vec::with_capacity(model.mixing.len());
    for (n, obs) in data.observations().iter().enumerate() {
        let phi = model.link.threshold_unchecked(&obs.covariates);
        terms.clear();
        for (&v, &pi) in model.mixing.support().iter().zip(model.mixing.masses()) {
            let p = IgParams {
                mu,
                sigma,
                barrier: phi * v,
            };
            let log_g = if obs.complete {
                log_density(p, obs.duration)
            } else {
                survival_parts(p, obs.duration).log_value
            };
            terms.push(pi.ln() + log_g);
        }
        let contribution = log_sum_exp(&terms);
        if contribution == f64::NEG_INFINITY || contribution.is_nan() {
            report.nonpositive.push(n);
        } else {
            report.value += contribution;
        }
    }
    if !report.nonpositive.is_empty() {
        report.value = f64::NEG_INFINITY;
    }
    if report.value.is_nan() {
        return Err(MhtError::Numerical("closed-form log-likelihood is NaN".into()));
    }
    Ok(report)
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyExponent;
    use crate::likelihood::Observation;
    use crate::model::{CovariateLink, MixingDistribution, Normalization};

    fn p(mu: f64, sigma: f64, b: f64) -> IgParams {
        IgParams::new(mu, sigma, b).unwrap()
    }

    /// Independent evaluation of the survival function on the natural scale.
    fn naive_survival(q: IgParams, t: f64) -> f64 {
        let st = q.sigma * t.sqrt();
        normal::cdf((q.barrier - q.mu * t) / st)
            - (2.0 * q.mu * q.barrier / (q.sigma * q.sigma)).exp() * normal::cdf(-(q.barrier + q.mu * t) / st)
    }

    #[test]
    fn density_examples() {
        assert_close!(
            ig_density(p(1.0, 1.0, 1.0), 1.0).unwrap(),
            1.0 / (2.0 * PI).sqrt(),
            1e-16
        );
        assert_close!(ig_density(p(1.0, 1.0, 1.0), 1.0).unwrap(), 0.398942, 1e-6);
        assert!(ig_density(p(1.0, 1.0, 1.0), 1e-4).unwrap() < 1e-300);
        let v = ig_density(p(0.0, 1.0, 2.0), 4.0).unwrap();
        assert_close!(v, 2.0 / (2.0 * PI * 64.0).sqrt() * (-0.5f64).exp(), 1e-16);
        assert_close!(v, 0.060493, 1e-6);
        assert!(matches!(
            ig_density(p(1.0, 1.0, 1.0), 0.0),
            Err(MhtError::InvalidArgument(_))
        ));
        assert!(ig_survival(p(1.0, 1.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn survival_examples() {
        assert_close!(ig_survival(p(1.0, 1.0, 1.0), 1e-6).unwrap(), 1.0, 1e-15);
        let v = ig_survival(p(1.0, 1.0, 1.0), 1.0).unwrap();
        assert_close!(v, 0.5 - 1f64.exp().powi(2) * normal::cdf(-2.0), 1e-15);
        assert_close!(v, 0.331898, 1e-6);
        let defective = p(-1.0, 1.0, 1.0);
        assert_close!(ig_survival(defective, 1e6).unwrap(), 1.0 - (-2.0f64).exp(), 1e-12);
        assert_close!(ig_defect(defective), 0.864665, 1e-6);
        assert_close!(ig_survival(p(1.0, 1.0, 1.0), 1e4).unwrap(), 0.0, 1e-300);
    }

    #[test]
    fn survival_agrees_with_naive_formula_where_that_is_stable() {
        for &(mu, sigma, b) in &[(1.0, 1.0, 1.0), (-0.5, 2.0, 3.0), (2.0, 0.5, 0.3)] {
            for &t in &[0.05, 0.3, 1.0, 2.5, 6.0] {
                let q = p(mu, sigma, b);
                let naive = naive_survival(q, t);
                let got = ig_survival(q, t).unwrap();
                assert!((got - naive).abs() <= 1e-13, "{got} vs {naive}");
            }
        }
    }

    #[test]
    fn survival_survives_large_exponent() {
        // exp(2 mu b / sigma^2) = exp(1000) overflows on the natural scale.
        let q = p(1.0, 0.1, 5.0);
        let s = ig_survival(q, 5.0).unwrap();
        assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        assert_close!(s, 0.5, 0.05);
        let ls = ig_log_survival(q, 9.0).unwrap();
        assert!(ls.is_finite());
    }

    #[test]
    fn density_is_negative_survival_slope() {
        for &(mu, sigma, b) in &[(1.0, 1.0, 1.0), (-1.0, 0.5, 2.0), (0.5, 2.0, 5.0)] {
            let q = p(mu, sigma, b);
            for i in 1..40 {
                let t = 0.1 * i as f64;
                let h = 1e-5 * t;
                let slope = (ig_survival(q, t + h).unwrap() - ig_survival(q, t - h).unwrap()) / (2.0 * h);
                let f = ig_density(q, t).unwrap();
                if f > 1e-6 {
                    assert!((f + slope).abs() <= 1e-6 * f + 1e-9, "t={t}: {f} vs {}", -slope);
                }
            }
        }
    }

    /// Composite Gauss-Legendre quadrature (5 points per panel) on `[a, b]`.
    fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        const X: [f64; 5] = [
            -0.906179845938664,
            -0.538469310105683,
            0.0,
            0.538469310105683,
            0.906179845938664,
        ];
        const W: [f64; 5] = [
            0.236926885056189,
            0.478628670499366,
            0.568888888888889,
            0.478628670499366,
            0.236926885056189,
        ];
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|i| {
                let mid = a + (i as f64 + 0.5) * h;
                X.iter().zip(&W).map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
            })
            .sum()
    }

    #[test]
    fn mass_conservation() {
        for &(mu, sigma, b) in &[(1.0, 1.0, 1.0), (-0.7, 1.2, 1.5), (0.4, 0.6, 2.0)] {
            let q = p(mu, sigma, b);
            let t_max: f64 = 60.0;
            // Integrate in u = ln t to resolve the left tail.
            let mass = integrate(|u| u.exp() * ig_density(q, u.exp()).unwrap(), -12.0, t_max.ln(), 4000);
            let total = mass + ig_survival(q, t_max).unwrap();
            assert!((total - 1.0).abs() <= 1e-8, "{total}");
        }
    }

    #[test]
    fn laplace_transform_consistency() {
        let q = p(1.0, 1.0, 1.0);
        for &s in &[0.5, 1.0, 2.0, 5.0] {
            let lt = integrate(
                |u| (u - s * u.exp()).exp() * ig_density(q, u.exp()).unwrap(),
                -12.0,
                5.0,
                4000,
            );
            let lambda = crate::levy::lambda_bm_real(s, 1.0, 1.0);
            assert!((lt - (-lambda).exp()).abs() <= 1e-8, "s={s}: {lt}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for &(mu, sigma, b, t) in &[(1.0, 1.0, 1.0, 1.0), (-0.6, 1.4, 2.0, 3.0), (1.0, 4.0, 6.0, 0.3)] {
            let base = [mu, sigma, b];
            let (_, gd) = log_density_with_gradient(p(mu, sigma, b), t);
            let (_, gs) = log_survival_with_gradient(p(mu, sigma, b), t);
            for j in 0..3 {
                let mut up = base;
                let mut dn = base;
                up[j] += h;
                dn[j] -= h;
                let fd_d =
                    (log_density(p(up[0], up[1], up[2]), t) - log_density(p(dn[0], dn[1], dn[2]), t)) / (2.0 * h);
                let fd_s = (ig_log_survival(p(up[0], up[1], up[2]), t).unwrap()
                    - ig_log_survival(p(dn[0], dn[1], dn[2]), t).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd_d - gd[j]).abs() <= 1e-6 * fd_d.abs().max(1.0),
                    "density {j}: {fd_d} vs {}",
                    gd[j]
                );
                assert!(
                    (fd_s - gs[j]).abs() <= 1e-6 * fd_s.abs().max(1.0),
                    "survival {j}: {fd_s} vs {}",
                    gs[j]
                );
            }
        }
    }

    fn unit_model(support: Vec<f64>, masses: Vec<f64>) -> MhtModel {
        MhtModel::new(
            LevyExponent::brownian(1.0, 1.0).unwrap(),
            CovariateLink::new(vec![0.0]).unwrap(),
            MixingDistribution::new(support, masses).unwrap(),
            Normalization::UnitDrift,
        )
        .unwrap()
    }

    fn obs(t: f64, complete: bool) -> Observation {
        Observation::new(t, complete, vec![0.0]).unwrap()
    }

    #[test]
    fn mixed_loglik_examples() {
        let m = unit_model(vec![1.0], vec![1.0]);
        let single = Dataset::new(vec![obs(1.0, true)], vec!["x".into()]).unwrap();
        let v = mixed_ig_loglik(&m, &single).unwrap().value;
        assert_close!(v, -0.5 * (2.0 * PI).ln(), 1e-15);
        assert_close!(v, -0.918939, 1e-6);
        let censored = Dataset::new(vec![obs(1.0, false)], vec!["x".into()]).unwrap();
        assert_close!(mixed_ig_loglik(&m, &censored).unwrap().value, 0.331898f64.ln(), 1e-5);
        let double = Dataset::new(vec![obs(1.0, true), obs(1.0, true)], vec!["x".into()]).unwrap();
        assert_close!(mixed_ig_loglik(&m, &double).unwrap().value, 2.0 * v, 1e-15);
    }

    #[test]
    fn mixed_loglik_stays_finite_far_in_the_tail() {
        // Contributions far below the smallest double remain finite on the log scale.
        let m = unit_model(vec![1e5], vec![1.0]);
        let data = Dataset::new(vec![obs(1.0, true), obs(1e-6, true)], vec!["x".into()]).unwrap();
        let r = mixed_ig_loglik(&m, &data).unwrap();
        assert!(r.value.is_finite() && r.value < -1e15);
        assert!(r.nonpositive.is_empty());
    }

    #[test]
    fn mixed_loglik_permutation_invariant() {
        let data = Dataset::new(
            vec![obs(0.5, true), obs(2.0, false), obs(4.0, true), obs(9.0, true)],
            vec!["x".into()],
        )
        .unwrap();
        let a = mixed_ig_loglik(&unit_model(vec![0.5, 2.0, 6.0], vec![0.2, 0.5, 0.3]), &data)
            .unwrap()
            .value;
        // Same mixture, components supplied in a different order.
        let mut total = 0.0;
        for o in data.observations() {
            let mut terms = Vec::new();
            for &(v, pi) in &[(6.0, 0.3), (0.5, 0.2), (2.0, 0.5)] {
                let q = p(1.0, 1.0, v);
                let g = if o.complete {
                    ig_density(q, o.duration).unwrap()
                } else {
                    ig_survival(q, o.duration).unwrap()
                };
                terms.push(pi * g);
            }
            total += terms.iter().sum::<f64>().ln();
        }
        assert_close!(a, total, 1e-12);
    }
}
