//! Maximum likelihood estimation.
//!
//! The log-likelihood is maximized over unconstrained coordinates (see
//! [`crate::params`]) by BFGS with the analytic gradient chained through the
//! transform. Standard errors come from a central-difference Hessian of that
//! gradient, mapped to the natural scale by the delta method.

mod bfgs;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MhtError, Result};
use crate::inversion::InversionSettings;
use crate::levy::{DiscreteShocks, GammaShocks, Jumps, LevyExponent};
use crate::likelihood::{loglik_with_gradient, Dataset, LikelihoodMode};
use crate::model::{CovariateLink, MhtModel, MixingDistribution, Normalization};
use crate::params::{
    from_unconstrained, natural_vector, to_unconstrained, unconstrained_jacobian, JumpFamily, ModelStructure,
};

use bfgs::{minimize, norm, BfgsOptions};

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Bound on the Euclidean norm of the gradient of the mean
    /// log-likelihood in unconstrained coordinates.
    pub tolerance: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Number of starts; the first uses the unperturbed starting values.
    pub multistart: usize,
    pub mode: LikelihoodMode,
    /// Skip the Hessian and standard errors.
    pub skip_standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 500,
            seed: 0,
            multistart: 5,
            mode: LikelihoodMode::Auto,
            skip_standard_errors: false,
        }
    }
}

/// One reported parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub value: f64,
    /// Absent for the normalized parameter, the derived last mass, and
    /// coordinates where the Hessian is not negative definite.
    pub std_error: Option<f64>,
}

/// Outcome of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: MhtModel,
    /// All natural parameters plus the last mass, in natural order.
    pub estimates: Vec<ParameterEstimate>,
    /// Standard errors of the free natural parameters, in order.
    pub std_errors: Vec<Option<f64>>,
    pub loglik: f64,
    /// Norm of the gradient of the mean log-likelihood in unconstrained coordinates.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub settings_used: InversionSettings,
    pub mode: LikelihoodMode,
    /// Log-likelihood after each accepted step of the winning start.
    pub trace: Vec<f64>,
    /// Final log-likelihood of every start, `-inf` for failed starts.
    pub start_logliks: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Starting values: a plain inverse Gaussian fit with unit barrier sets the
/// drift and dispersion; support points are exponentiated standard normal
/// draws on the mean-duration scale (the mean duration itself when `L = 1`);
/// masses are uniform and covariate effects zero.
pub fn starting_values(data: &Dataset, structure: &ModelStructure, seed: u64) -> Result<MhtModel> {
    structure.validate()?;
    if data.is_empty() {
        return invalid("starting values need a nonempty dataset");
    }
    data.check_dim(structure.covariates)?;
    let mean = data.mean_duration();
    let mean_inv = data.observations().iter().map(|o| 1.0 / o.duration).sum::<f64>() / data.len() as f64;
    let mu_hat = 1.0 / mean;
    let sigma2_hat = mean_inv - 1.0 / mean;
    // Under unit drift the barrier becomes the mean duration; variance is T sigma^2.
    let sigma2 = if sigma2_hat.is_finite() && sigma2_hat > 1e-12 * mean_inv {
        sigma2_hat / (mu_hat * mu_hat)
    } else {
        // Degenerate data: coefficient of variation one half.
        0.25 * mean
    };
    let (mu, sigma, scale) = match structure.normalization {
        Normalization::UnitDrift => (1.0, sigma2.sqrt(), mean),
        // Rescale space by 1 / sigma: drift 1/sigma, barrier mean/sigma.
        Normalization::UnitDispersion => (1.0 / sigma2.sqrt(), 1.0, mean / sigma2.sqrt()),
    };
    let jumps = match structure.jumps {
        JumpFamily::None => Jumps::None,
        JumpFamily::Discrete(q) => {
            let rates = vec![0.1 / q as f64; q];
            let sizes = (0..q).map(|i| -0.25 * scale * (q - i) as f64).collect();
            Jumps::Discrete(DiscreteShocks::new(rates, sizes)?)
        }
        JumpFamily::Gamma => Jumps::Gamma(GammaShocks::new(0.1, 1.0 / (0.25 * scale), 1.0)?),
    };
    let l = structure.support_points;
    let support = if l == 1 {
        vec![scale]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draws: Vec<f64> = (0..l)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng).exp())
            .collect();
        draws.sort_by(f64::total_cmp);
        for i in 1..l {
            if draws[i] <= draws[i - 1] {
                draws[i] = draws[i - 1] * (1.0 + 1e-3);
            }
        }
        draws
    };
    MhtModel::new(
        LevyExponent::new(mu, sigma, jumps)?,
        CovariateLink::new(vec![0.0; structure.covariates])?,
        MixingDistribution::new(support, vec![1.0 / l as f64; l])?,
        structure.normalization,
    )
}

/// Value and gradient of the mean negative log-likelihood in unconstrained
/// coordinates; `None` outside the admissible region.
fn objective(
    data: &Dataset,
    structure: &ModelStructure,
    settings: &InversionSettings,
    mode: LikelihoodMode,
    eta: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let model = from_unconstrained(structure, eta).ok()?;
    let (report, grad) = loglik_with_gradient(&model, data, settings, mode).ok()?;
    if !report.value.is_finite() {
        return None;
    }
    let jac = unconstrained_jacobian(structure, eta).ok()?;
    let free: Vec<f64> = grad
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != structure.normalized_index())
        .map(|(_, g)| *g)
        .collect();
    let n = data.len() as f64;
    let g_eta: Vec<f64> = (0..eta.len())
        .map(|j| -(0..free.len()).map(|i| jac[(i, j)] * free[i]).sum::<f64>() / n)
        .collect();
    Some((-report.value / n, g_eta))
}

struct Run {
    eta: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Maximum likelihood fit of `structure` to `data`.
pub fn fit(
    data: &Dataset,
    structure: &ModelStructure,
    settings: &InversionSettings,
    options: &FitOptions,
) -> Result<FitResult> {
    let start = starting_values(data, structure, options.seed)?;
    fit_from(data, &start, settings, options)
}

/// As [`fit`], starting from a given model.
pub fn fit_from(
    data: &Dataset,
    start: &MhtModel,
    settings: &InversionSettings,
    options: &FitOptions,
) -> Result<FitResult> {
    let structure = ModelStructure::of(start);
    structure.validate()?;
    settings.validate()?;
    if data.is_empty() {
        return invalid("cannot fit an empty dataset");
    }
    data.check_dim(structure.covariates)?;
    if !(options.tolerance > 0.0) || options.max_iter == 0 || options.multistart == 0 {
        return invalid("tolerance, iteration limit and number of starts must be positive");
    }
    let eta0 = to_unconstrained(start);
    let bfgs_options = BfgsOptions {
        tolerance: options.tolerance,
        max_iter: options.max_iter,
        max_step: 5.0,
    };
    let runs: Vec<Option<Run>> = (0..options.multistart)
        .into_par_iter()
        .map(|k| {
            let eta_start = if k == 0 {
                eta0.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(k as u64));
                let base = starting_values(data, &structure, options.seed.wrapping_add(k as u64))
                    .map(|m| to_unconstrained(&m))
                    .unwrap_or_else(|_| eta0.clone());
                base.iter()
                    .map(|e| e + 0.25 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect::<Vec<f64>>()
            };
            let mut f = |eta: &[f64]| objective(data, &structure, settings, options.mode, eta);
            minimize(&mut f, &eta_start, bfgs_options).map(|o| Run {
                eta: o.x,
                value: o.value,
                gradient: o.gradient,
                iterations: o.iterations,
                converged: o.converged,
                trace: o.trace,
            })
        })
        .collect();
    let n = data.len() as f64;
    let start_logliks: Vec<f64> = runs
        .iter()
        .map(|r| r.as_ref().map_or(f64::NEG_INFINITY, |r| -r.value * n))
        .collect();
    let best = runs
        .into_iter()
        .flatten()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| MhtError::Numerical("log-likelihood undefined at every starting point".into()))?;

    let theta_hat = from_unconstrained(&structure, &best.eta)?;
    let std_errors = if options.skip_standard_errors {
        vec![None; structure.free_len()]
    } else {
        standard_errors(data, &structure, settings, options.mode, &best.eta)?
    };
    let estimates = report_estimates(&theta_hat, &structure, &std_errors);
    Ok(FitResult {
        warnings: boundary_warnings(&theta_hat),
        theta_hat,
        estimates,
        std_errors,
        loglik: -best.value * n,
        gradient_norm: norm(&best.gradient),
        iterations: best.iterations,
        converged: best.converged,
        settings_used: *settings,
        mode: options.mode,
        trace: best.trace.iter().map(|v| -v * n).collect(),
        start_logliks,
    })
}

/// Central-difference Hessian of the log-likelihood in unconstrained
/// coordinates, built from the analytic gradient.
fn hessian(
    data: &Dataset,
    structure: &ModelStructure,
    settings: &InversionSettings,
    mode: LikelihoodMode,
    eta: &[f64],
) -> Option<DMatrix<f64>> {
    let p = eta.len();
    let n = data.len() as f64;
    let mut h = DMatrix::zeros(p, p);
    for j in 0..p {
        let step = 1e-4 * eta[j].abs().max(1.0);
        let mut plus = eta.to_vec();
        let mut minus = eta.to_vec();
        plus[j] += step;
        minus[j] -= step;
        let (_, gp) = objective(data, structure, settings, mode, &plus)?;
        let (_, gm) = objective(data, structure, settings, mode, &minus)?;
        for i in 0..p {
            // Objective is -loglik / n.
            h[(i, j)] = -(gp[i] - gm[i]) * n / (2.0 * step);
        }
    }
    Some((&h + h.transpose()) * 0.5)
}

/// Standard errors of the free natural parameters by the delta method.
fn standard_errors(
    data: &Dataset,
    structure: &ModelStructure,
    settings: &InversionSettings,
    mode: LikelihoodMode,
    eta: &[f64],
) -> Result<Vec<Option<f64>>> {
    let p = eta.len();
    let Some(h) = hessian(data, structure, settings, mode, eta) else {
        return Ok(vec![None; p]);
    };
    let info = -h;
    let eig = SymmetricEigen::new(info);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let good: Vec<bool> = eig.eigenvalues.iter().map(|&v| v > 1e-12 * scale).collect();
    // Pseudo-inverse on the positive eigenspace.
    let mut cov_eta = DMatrix::zeros(p, p);
    let mut flagged = vec![false; p];
    for (k, &ok) in good.iter().enumerate() {
        let vec = eig.eigenvectors.column(k);
        if ok {
            cov_eta += (vec * vec.transpose()) / eig.eigenvalues[k];
        } else {
            for i in 0..p {
                if vec[i].abs() > 1e-3 {
                    flagged[i] = true;
                }
            }
        }
    }
    let jac = unconstrained_jacobian(structure, eta)?;
    let cov = &jac * cov_eta * jac.transpose();
    Ok((0..p)
        .map(|i| {
            // A natural coordinate is unreliable if it depends on a flagged direction.
            let touched = (0..p).any(|j| flagged[j] && jac[(i, j)] != 0.0);
            let var = cov[(i, i)];
            (!touched && var >= 0.0 && var.is_finite()).then(|| var.sqrt())
        })
        .collect())
}

fn report_estimates(
    model: &MhtModel,
    structure: &ModelStructure,
    std_errors: &[Option<f64>],
) -> Vec<ParameterEstimate> {
    let theta = natural_vector(model);
    let norm = structure.normalized_index();
    let mut out: Vec<ParameterEstimate> = structure
        .names()
        .into_iter()
        .zip(&theta)
        .enumerate()
        .map(|(i, (name, &value))| {
            let std_error = match i.cmp(&norm) {
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Less => std_errors[i],
                std::cmp::Ordering::Greater => std_errors[i - 1],
            };
            ParameterEstimate { name, value, std_error }
        })
        .collect();
    let l = structure.support_points;
    out.push(ParameterEstimate {
        name: format!("pi_{l}"),
        value: *model.mixing.masses().last().expect("nonempty mixing"),
        std_error: None,
    });
    out
}

/// Signs that the maximum sits on the boundary of the parameter space.
fn boundary_warnings(model: &MhtModel) -> Vec<String> {
    let mut out = Vec::new();
    let v = model.mixing.support();
    for (i, w) in v.windows(2).enumerate() {
        if (w[1] - w[0]) < 1e-4 * w[1] {
            out.push(format!("support points v_{} and v_{} have nearly merged", i + 1, i + 2));
        }
    }
    for (i, &p) in model.mixing.masses().iter().enumerate() {
        if p < 1e-6 {
            out.push(format!("mass pi_{} is essentially zero", i + 1));
        }
    }
    match model.exponent.jumps() {
        Jumps::None => {}
        Jumps::Discrete(d) => {
            for (i, &r) in d.rates().iter().enumerate() {
                if r < 1e-8 {
                    out.push(format!("shock rate lambda_{} is essentially zero", i + 1));
                }
            }
        }
        Jumps::Gamma(g) => {
            if g.arrival_rate < 1e-8 {
                out.push("shock rate lambda is essentially zero".into());
            }
        }
    }
    out
}
