//! Censored log-likelihood and its analytic gradient.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MhtError, Result};
use crate::gaussian::{self, log_sum_exp, IgParams};
use crate::inversion::{invert_prepared, invert_with_gradient, InversionSettings, PreparedModel, Quadrature, Target};
use crate::model::MhtModel;
use crate::params::{fold_mass_gradient, ModelStructure};

/// One spell: duration, completion indicator and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub duration: f64,
    /// `true` for a completed spell, `false` for a right-censored one.
    pub complete: bool,
    pub covariates: Vec<f64>,
}

impl Observation {
    pub fn new(duration: f64, complete: bool, covariates: Vec<f64>) -> Result<Self> {
        if !duration.is_finite() || duration <= 0.0 {
            return invalid(format!("duration must be positive and finite, got {duration}"));
        }
        if covariates.iter().any(|x| !x.is_finite()) {
            return invalid(format!("covariates must be finite, got {covariates:?}"));
        }
        Ok(Self {
            duration,
            complete,
            covariates,
        })
    }
}

/// Observations sharing one covariate layout.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<Observation>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, covariate_names: Vec<String>) -> Result<Self> {
        let k = covariate_names.len();
        if let Some(i) = observations.iter().position(|o| o.covariates.len() != k) {
            return invalid(format!(
                "observation {i} has {} covariates, dataset declares {k}",
                observations[i].covariates.len()
            ));
        }
        Ok(Self {
            observations,
            covariate_names,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn complete_count(&self) -> usize {
        self.observations.iter().filter(|o| o.complete).count()
    }

    pub fn mean_duration(&self) -> f64 {
        self.observations.iter().map(|o| o.duration).sum::<f64>() / self.len() as f64
    }

    pub fn check_dim(&self, k: usize) -> Result<()> {
        if k != self.covariate_dim() {
            return invalid(format!(
                "model has {k} covariate effects, dataset has {} covariates",
                self.covariate_dim()
            ));
        }
        Ok(())
    }
}

/// Log-likelihood value. When some contributions are not positive the
/// value is `-inf` and their indices are listed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoglikReport {
    pub value: f64,
    pub nonpositive: Vec<usize>,
}

/// How contributions are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    /// Closed forms without jumps, inversion otherwise.
    #[default]
    Auto,
    ClosedForm,
    Inverted,
}

impl LikelihoodMode {
    fn closed_form(self, model: &MhtModel) -> Result<bool> {
        match self {
            LikelihoodMode::Auto => Ok(!model.exponent.has_jumps()),
            LikelihoodMode::Inverted => Ok(false),
            LikelihoodMode::ClosedForm if model.exponent.has_jumps() => {
                invalid("closed-form likelihood requires a specification without jumps")
            }
            LikelihoodMode::ClosedForm => Ok(true),
        }
    }
}

/// `ln L(theta)`; `-inf` when some contribution is not positive.
pub fn loglik(model: &MhtModel, data: &Dataset, settings: &InversionSettings, mode: LikelihoodMode) -> Result<f64> {
    Ok(loglik_report(model, data, settings, mode)?.value)
}

pub fn loglik_report(
    model: &MhtModel,
    data: &Dataset,
    settings: &InversionSettings,
    mode: LikelihoodMode,
) -> Result<LoglikReport> {
    data.check_dim(model.link.dim())?;
    if mode.closed_form(model)? {
        return gaussian::mixed_ig_loglik(model, data);
    }
    let quad = Quadrature::new(*settings)?;
    let prepared = PreparedModel::new(model);
    let (keys, index) = unique_keys(data);
    let values: Vec<Result<f64>> = keys
        .par_iter()
        .map(|&n| {
            let obs = &data.observations()[n];
            let phi = model.link.threshold_unchecked(&obs.covariates);
            invert_prepared(target(obs.complete), &prepared, phi, obs.duration, &quad).map(|r| r.value)
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    let mut report = LoglikReport::default();
    for (n, &k) in index.iter().enumerate() {
        if values[k] > 0.0 {
            report.value += values[k].ln();
        } else {
            report.nonpositive.push(n);
        }
    }
    if !report.nonpositive.is_empty() {
        report.value = f64::NEG_INFINITY;
    }
    Ok(report)
}

/// Log-likelihood and its gradient over the natural coordinates
/// `(mu, sigma, alpha, beta, v_1..L, pi_1..pi_{L-1})`, including the one
/// fixed by the normalization. The gradient is meaningless when the value
/// is `-inf`.
pub fn loglik_with_gradient(
    model: &MhtModel,
    data: &Dataset,
    settings: &InversionSettings,
    mode: LikelihoodMode,
) -> Result<(LoglikReport, Vec<f64>)> {
    data.check_dim(model.link.dim())?;
    let structure = ModelStructure::of(model);
    let contributions = if mode.closed_form(model)? {
        closed_form_contributions(model, data, &structure)
    } else {
        inverted_contributions(model, data, settings)?
    };
    let full_len = structure.mass_offset() + structure.support_points;
    let mut report = LoglikReport::default();
    let mut full = vec![0.0; full_len];
    for (n, (value, grad)) in contributions.iter().enumerate() {
        if value.is_finite() {
            report.value += value;
            full.iter_mut().zip(grad).for_each(|(a, b)| *a += b);
        } else {
            report.nonpositive.push(n);
        }
    }
    if !report.nonpositive.is_empty() {
        report.value = f64::NEG_INFINITY;
    }
    if report.value.is_nan() || full.iter().any(|g| !g.is_finite()) {
        return Err(MhtError::Numerical("log-likelihood or gradient is not finite".into()));
    }
    Ok((report, fold_mass_gradient(&structure, &full)))
}

/// Gradient of `ln L` restricted to the natural coordinates selected by `free`.
pub fn loglik_gradient(
    model: &MhtModel,
    data: &Dataset,
    settings: &InversionSettings,
    mode: LikelihoodMode,
    free: &[bool],
) -> Result<Vec<f64>> {
    let (report, grad) = loglik_with_gradient(model, data, settings, mode)?;
    if free.len() != grad.len() {
        return invalid(format!(
            "free mask has length {}, parameter vector {}",
            free.len(),
            grad.len()
        ));
    }
    if !report.nonpositive.is_empty() {
        return Err(MhtError::Numerical(format!(
            "gradient undefined: {} contributions are not positive",
            report.nonpositive.len()
        )));
    }
    Ok(grad.into_iter().zip(free).filter(|(_, &f)| f).map(|(g, _)| g).collect())
}

/// Density of `T | X = x`, closed form or inverted according to `mode`.
pub fn density(model: &MhtModel, x: &[f64], t: f64, settings: &InversionSettings, mode: LikelihoodMode) -> Result<f64> {
    if mode.closed_form(model)? {
        mixture(model, x, t, |p| gaussian::ig_density(p, t))
    } else {
        crate::inversion::invert_density(model, x, t, settings)
    }
}

/// Survival function of `T | X = x`.
pub fn survival(
    model: &MhtModel,
    x: &[f64],
    t: f64,
    settings: &InversionSettings,
    mode: LikelihoodMode,
) -> Result<f64> {
    if mode.closed_form(model)? {
        mixture(model, x, t, |p| gaussian::ig_survival(p, t))
    } else {
        crate::inversion::invert_survival(model, x, t, settings)
    }
}

fn mixture(model: &MhtModel, x: &[f64], _t: f64, f: impl Fn(IgParams) -> Result<f64>) -> Result<f64> {
    let phi = model.link.threshold(x)?;
    let (mu, sigma) = (model.exponent.mu(), model.exponent.sigma());
    model
        .mixing
        .support()
        .iter()
        .zip(model.mixing.masses())
        .map(|(&v, &p)| Ok(p * f(IgParams::new(mu, sigma, phi * v)?)?))
        .sum()
}

fn target(complete: bool) -> Target {
    if complete {
        Target::Density
    } else {
        Target::Survival
    }
}

/// Representative observation per distinct `(t, complete, x)` and the map
/// from each observation to its representative.
fn unique_keys(data: &Dataset) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<(u64, bool, Vec<u64>), usize> = HashMap::new();
    let mut reps = Vec::new();
    let index = data
        .observations()
        .iter()
        .enumerate()
        .map(|(n, o)| {
            let key = (
                o.duration.to_bits(),
                o.complete,
                o.covariates.iter().map(|x| x.to_bits()).collect(),
            );
            *seen.entry(key).or_insert_with(|| {
                reps.push(n);
                reps.len() - 1
            })
        })
        .collect();
    (reps, index)
}

type Contribution = (f64, Vec<f64>);

fn inverted_contributions(model: &MhtModel, data: &Dataset, settings: &InversionSettings) -> Result<Vec<Contribution>> {
    let quad = Quadrature::new(*settings)?;
    let prepared = PreparedModel::new(model);
    let (keys, index) = unique_keys(data);
    let unique: Vec<Result<Contribution>> = keys
        .par_iter()
        .map(|&n| {
            let obs = &data.observations()[n];
            let phi = model.link.threshold_unchecked(&obs.covariates);
            let mut grad = vec![0.0; prepared.grad_len];
            let value = invert_with_gradient(
                target(obs.complete),
                &prepared,
                phi,
                &obs.covariates,
                obs.duration,
                &quad,
                &mut grad,
            )?;
            if value > 0.0 {
                grad.iter_mut().for_each(|g| *g /= value);
                Ok((value.ln(), grad))
            } else {
                Ok((f64::NEG_INFINITY, grad))
            }
        })
        .collect();
    let unique = unique.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(index.into_iter().map(|k| unique[k].clone()).collect())
}

fn closed_form_contributions(model: &MhtModel, data: &Dataset, structure: &ModelStructure) -> Vec<Contribution> {
    let (mu, sigma) = (model.exponent.mu(), model.exponent.sigma());
    let full_len = structure.mass_offset() + structure.support_points;
    let (b_off, v_off, pi_off) = (
        structure.beta_offset(),
        structure.support_offset(),
        structure.mass_offset(),
    );
    let support = model.mixing.support();
    let masses = model.mixing.masses();
    data.observations()
        .par_iter()
        .map(|obs| {
            let phi = model.link.threshold_unchecked(&obs.covariates);
            let parts: Vec<(f64, [f64; 3])> = support
                .iter()
                .map(|&v| {
                    let p = IgParams {
                        mu,
                        sigma,
                        barrier: phi * v,
                    };
                    if obs.complete {
                        gaussian::log_density_with_gradient(p, obs.duration)
                    } else {
                        gaussian::log_survival_with_gradient(p, obs.duration)
                    }
                })
                .collect();
            let terms: Vec<f64> = parts.iter().zip(masses).map(|((g, _), p)| p.ln() + g).collect();
            let value = log_sum_exp(&terms);
            let mut grad = vec![0.0; full_len];
            if !value.is_finite() {
                return (f64::NEG_INFINITY, grad);
            }
            for (l, ((_, d), &term)) in parts.iter().zip(&terms).enumerate() {
                let w = (term - value).exp();
                if w == 0.0 {
                    continue;
                }
                let barrier = phi * support[l];
                grad[0] += w * d[0];
                grad[1] += w * d[1];
                for (k, &x) in obs.covariates.iter().enumerate() {
                    grad[b_off + k] += w * d[2] * barrier * x;
                }
                grad[v_off + l] += w * d[2] * phi;
                grad[pi_off + l] += w / masses[l];
            }
            (value, grad)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{DiscreteShocks, GammaShocks, Jumps, LevyExponent};
    use crate::model::{CovariateLink, MixingDistribution, Normalization};
    use crate::params::{model_from_natural, natural_vector};

    fn data() -> Dataset {
        let obs = [
            (0.4, true, 0.3),
            (1.3, true, -0.5),
            (2.2, false, 1.0),
            (0.9, true, 0.0),
            (4.0, false, -1.2),
            (0.9, true, 0.0),
        ]
        .iter()
        .map(|&(t, d, x)| Observation::new(t, d, vec![x]).unwrap())
        .collect();
        Dataset::new(obs, vec!["x".into()]).unwrap()
    }

    fn model(jumps: Jumps) -> MhtModel {
        MhtModel::new(
            LevyExponent::new(1.0, 0.9, jumps).unwrap(),
            CovariateLink::new(vec![0.4]).unwrap(),
            MixingDistribution::new(vec![0.8, 2.5], vec![0.35, 0.65]).unwrap(),
            Normalization::UnitDrift,
        )
        .unwrap()
    }

    fn fd_check(m: &MhtModel, mode: LikelihoodMode) {
        let settings = InversionSettings::default();
        let d = data();
        let (_, grad) = loglik_with_gradient(m, &d, &settings, mode).unwrap();
        let structure = ModelStructure::of(m);
        let theta = natural_vector(m);
        for i in 0..theta.len() {
            if i == structure.normalized_index() {
                continue;
            }
            let h = 1e-5 * theta[i].abs().max(1.0);
            let eval = |delta: f64| {
                let mut th = theta.clone();
                th[i] += delta;
                loglik(&model_from_natural(&structure, &th).unwrap(), &d, &settings, mode).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "coordinate {i}: {} vs {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn closed_form_gradient_matches_differences() {
        fd_check(&model(Jumps::None), LikelihoodMode::ClosedForm);
    }

    #[test]
    fn inverted_gradient_matches_differences() {
        fd_check(&model(Jumps::None), LikelihoodMode::Inverted);
        fd_check(
            &model(Jumps::Gamma(GammaShocks::new(0.3, 2.0, 1.5).unwrap())),
            LikelihoodMode::Auto,
        );
        fd_check(
            &model(Jumps::Discrete(
                DiscreteShocks::new(vec![0.2, 0.1], vec![-1.5, -0.4]).unwrap(),
            )),
            LikelihoodMode::Auto,
        );
    }

    #[test]
    fn inverted_matches_closed_form() {
        let m = model(Jumps::None);
        let s = InversionSettings::default();
        let a = loglik(&m, &data(), &s, LikelihoodMode::ClosedForm).unwrap();
        let b = loglik(&m, &data(), &s, LikelihoodMode::Inverted).unwrap();
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        let (r, _) = loglik_with_gradient(&m, &data(), &s, LikelihoodMode::Inverted).unwrap();
        // Same sum, different rounding; terms reach exp(c) in size.
        assert!((r.value - b).abs() < 1e-9, "{} vs {b}", r.value);
    }

    #[test]
    fn closed_form_rejects_jumps() {
        let m = model(Jumps::Gamma(GammaShocks::new(0.3, 2.0, 1.5).unwrap()));
        assert!(loglik(&m, &data(), &InversionSettings::default(), LikelihoodMode::ClosedForm).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = MhtModel::new(
            LevyExponent::brownian(1.0, 1.0).unwrap(),
            CovariateLink::default(),
            MixingDistribution::point(1.0).unwrap(),
            Normalization::UnitDrift,
        )
        .unwrap();
        assert!(loglik(&m, &data(), &InversionSettings::default(), LikelihoodMode::Auto).is_err());
        assert!(Dataset::new(vec![Observation::new(1.0, true, vec![]).unwrap()], vec!["x".into()]).is_err());
        assert!(Observation::new(0.0, true, vec![]).is_err());
    }

    #[test]
    fn gradient_honours_free_mask() {
        let m = model(Jumps::None);
        let mask = ModelStructure::of(&m).free_mask();
        let g = loglik_gradient(&m, &data(), &InversionSettings::default(), LikelihoodMode::Auto, &mask).unwrap();
        assert_eq!(g.len(), mask.len() - 1);
    }

    #[test]
    fn mixture_density_and_survival() {
        let m = model(Jumps::None);
        let s = InversionSettings::default();
        for &t in &[0.3, 1.0, 3.0] {
            let a = density(&m, &[0.2], t, &s, LikelihoodMode::Auto).unwrap();
            let b = density(&m, &[0.2], t, &s, LikelihoodMode::Inverted).unwrap();
            assert!((a - b).abs() < 1e-9);
            let a = survival(&m, &[0.2], t, &s, LikelihoodMode::Auto).unwrap();
            let b = survival(&m, &[0.2], t, &s, LikelihoodMode::Inverted).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }
}
