//! Exact sampler of first passage times for Brownian motion plus compound
//! Poisson shocks.
//!
//! Between shocks the process is Brownian, so each inter-arrival window is
//! handled exactly: either the crossing time is drawn from the first-passage
//! law restricted to the window, or the window-end level is drawn from the
//! Brownian endpoint law conditioned on not crossing, after which the shock
//! is applied.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, InverseGaussian, Normal};
use rayon::prelude::*;

use crate::error::{invalid, MhtError, Result};
use crate::gaussian::{ig_defect, ig_survival, IgParams};
use crate::levy::{Jumps, LevyExponent};
use crate::likelihood::{Dataset, Observation};
use crate::model::MhtModel;

/// Default time after which a path that has not crossed counts as never crossing.
pub const DEFAULT_HORIZON: f64 = 1e6;

const BATCH: usize = 4096;

/// Independent right censoring.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Censoring {
    #[default]
    None,
    /// Every spell is censored at this time.
    Fixed(f64),
    /// Censoring times are exponential with this rate.
    Exponential(f64),
}

/// Everything that determines a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub model: MhtModel,
    pub n_draws: usize,
    pub seed: u64,
    pub censoring: Censoring,
    /// Covariate rows resampled with replacement; zeros when absent.
    pub covariate_source: Option<Vec<Vec<f64>>>,
    pub covariate_names: Vec<String>,
    pub horizon: f64,
}

impl SimSpec {
    pub fn new(model: MhtModel, n_draws: usize, seed: u64) -> Self {
        let names = (1..=model.link.dim()).map(|i| format!("x{i}")).collect();
        Self {
            model,
            n_draws,
            seed,
            censoring: Censoring::None,
            covariate_source: None,
            covariate_names: names,
            horizon: DEFAULT_HORIZON,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_draws == 0 {
            return invalid("number of draws must be positive");
        }
        match self.censoring {
            Censoring::Fixed(c) if !(c.is_finite() && c > 0.0) => {
                return invalid(format!("fixed censoring time must be positive, got {c}"))
            }
            Censoring::Exponential(r) if !(r.is_finite() && r > 0.0) => {
                return invalid(format!("censoring rate must be positive, got {r}"))
            }
            _ => {}
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return invalid(format!("horizon must be positive, got {}", self.horizon));
        }
        let k = self.model.link.dim();
        if self.covariate_names.len() != k {
            return invalid(format!(
                "{} covariate names for {k} covariate effects",
                self.covariate_names.len()
            ));
        }
        if let Some(rows) = &self.covariate_source {
            if rows.is_empty() || rows.iter().any(|r| r.len() != k) {
                return invalid(format!("covariate source must be nonempty with rows of length {k}"));
            }
        }
        if self.censoring == Censoring::None && self.model.exponent.psi_prime_real(0.0) < 0.0 {
            return invalid("durations of a defective model can only be simulated with censoring");
        }
        Ok(())
    }
}

/// Inverse Gaussian first passage time of drift `mu > 0` Brownian motion.
pub fn sample_ig<R: Rng + ?Sized>(mu: f64, sigma: f64, barrier: f64, rng: &mut R) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return invalid(format!(
            "unconditional inverse Gaussian draws need positive drift, got {mu}"
        ));
    }
    IgParams::new(mu, sigma, barrier)?;
    let dist = InverseGaussian::new(barrier / mu, barrier * barrier / (sigma * sigma))
        .map_err(|e| MhtError::InvalidArgument(format!("inverse Gaussian parameters: {e}")))?;
    Ok(dist.sample(rng))
}

/// First passage time of the model's process over `barrier`, or `None` when
/// the path has not crossed by `horizon`.
pub fn sample_first_passage<R: Rng + ?Sized>(
    exponent: &LevyExponent,
    barrier: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<Option<f64>> {
    let (mu, sigma) = (exponent.mu(), exponent.sigma());
    IgParams::new(mu, sigma, barrier)?;
    let rate = exponent.total_jump_rate();
    let waiting = if rate > 0.0 {
        Some(Exp::new(rate).expect("positive rate"))
    } else {
        None
    };
    let shock = ShockSampler::new(exponent.jumps())?;
    let mut elapsed = 0.0;
    let mut gap = barrier;
    while elapsed < horizon {
        let window = waiting
            .as_ref()
            .map_or(f64::INFINITY, |w| w.sample(rng))
            .min(horizon - elapsed);
        if let Some(t) = crossing_in_window(mu, sigma, gap, window, rng) {
            return Ok(Some(elapsed + t));
        }
        if window == horizon - elapsed {
            break;
        }
        gap -= endpoint_without_crossing(mu, sigma, gap, window, rng);
        gap += shock.sample(rng);
        elapsed += window;
    }
    if exponent.psi_prime_real(0.0) > 0.0 {
        return Err(MhtError::Numerical(format!(
            "no passage within horizon {horizon} although the process drifts upward"
        )));
    }
    Ok(None)
}

/// Crossing time within `[0, window]` of Brownian motion started `gap` below
/// the barrier, if it crosses.
fn crossing_in_window<R: Rng + ?Sized>(mu: f64, sigma: f64, gap: f64, window: f64, rng: &mut R) -> Option<f64> {
    let p = IgParams {
        mu,
        sigma,
        barrier: gap,
    };
    if mu > 0.0 {
        let t = InverseGaussian::new(gap / mu, gap * gap / (sigma * sigma))
            .ok()?
            .sample(rng);
        return (t <= window).then_some(t);
    }
    let cdf = |t: f64| 1.0 - ig_survival(p, t).unwrap_or(1.0);
    let total = if window.is_finite() {
        cdf(window)
    } else {
        1.0 - ig_defect(p)
    };
    let u: f64 = rng.random();
    if u >= total {
        return None;
    }
    let level = u;
    let mut hi = if window.is_finite() {
        window
    } else {
        gap * gap / (sigma * sigma)
    };
    while cdf(hi) < level {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        if hi - lo <= 1e-10 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Increment over `[0, window]` conditioned on staying below `gap`.
fn endpoint_without_crossing<R: Rng + ?Sized>(mu: f64, sigma: f64, gap: f64, window: f64, rng: &mut R) -> f64 {
    let var = sigma * sigma * window;
    let normal = Normal::new(mu * window, var.sqrt()).expect("positive variance");
    loop {
        let y = normal.sample(rng);
        if y >= gap {
            continue;
        }
        // No-crossing probability of the bridge from 0 to y.
        let accept = -(-2.0 * gap * (gap - y) / var).exp_m1();
        if rng.random::<f64>() < accept {
            return y;
        }
    }
}

/// Magnitude of one downward shock.
enum ShockSampler {
    None,
    Discrete { cumulative: Vec<f64>, sizes: Vec<f64> },
    Gamma(Gamma<f64>),
}

impl ShockSampler {
    fn new(jumps: &Jumps) -> Result<Self> {
        Ok(match jumps {
            Jumps::None => ShockSampler::None,
            Jumps::Discrete(d) => {
                let total: f64 = d.rates().iter().sum();
                let cumulative = d
                    .rates()
                    .iter()
                    .scan(0.0, |acc, r| {
                        *acc += r / total;
                        Some(*acc)
                    })
                    .collect();
                ShockSampler::Discrete {
                    cumulative,
                    sizes: d.sizes().iter().map(|v| -v).collect(),
                }
            }
            Jumps::Gamma(g) => ShockSampler::Gamma(
                Gamma::new(g.shape, 1.0 / g.size_rate)
                    .map_err(|e| MhtError::InvalidArgument(format!("gamma shock parameters: {e}")))?,
            ),
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ShockSampler::None => 0.0,
            ShockSampler::Discrete { cumulative, sizes } => {
                let u: f64 = rng.random();
                let q = cumulative.iter().position(|&c| u < c).unwrap_or(sizes.len() - 1);
                sizes[q]
            }
            ShockSampler::Gamma(g) => g.sample(rng),
        }
    }
}

fn draw_observation(spec: &SimSpec, rng: &mut ChaCha8Rng) -> Result<Observation> {
    let model = &spec.model;
    let x = match &spec.covariate_source {
        Some(rows) => rows[rng.random_range(0..rows.len())].clone(),
        None => vec![0.0; model.link.dim()],
    };
    let u: f64 = rng.random();
    let masses = model.mixing.masses();
    let mut acc = 0.0;
    let mut l = masses.len() - 1;
    for (i, p) in masses.iter().enumerate() {
        acc += p;
        if u < acc {
            l = i;
            break;
        }
    }
    let barrier = model.link.threshold_unchecked(&x) * model.mixing.support()[l];
    let t = sample_first_passage(&model.exponent, barrier, spec.horizon, rng)?.unwrap_or(f64::INFINITY);
    let c = match spec.censoring {
        Censoring::None => f64::INFINITY,
        Censoring::Fixed(c) => c,
        Censoring::Exponential(r) => Exp::new(r).expect("validated rate").sample(rng),
    };
    if t <= c {
        Observation::new(t, true, x)
    } else if c.is_finite() {
        Observation::new(c, false, x)
    } else {
        Err(MhtError::Numerical(
            "path never crossed and no censoring applies".into(),
        ))
    }
}

/// Simulated dataset; identical specs give bit-identical datasets.
pub fn simulate_dataset(spec: &SimSpec) -> Result<Dataset> {
    spec.validate()?;
    let batches = spec.n_draws.div_ceil(BATCH);
    let parts: Vec<Result<Vec<Observation>>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(b as u64);
            let n = BATCH.min(spec.n_draws - b * BATCH);
            (0..n).map(|_| draw_observation(spec, &mut rng)).collect()
        })
        .collect();
    let mut observations = Vec::with_capacity(spec.n_draws);
    for part in parts {
        observations.extend(part?);
    }
    Dataset::new(observations, spec.covariate_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::ig_survival;
    use crate::levy::{DiscreteShocks, GammaShocks};
    use crate::model::{CovariateLink, MixingDistribution, Normalization};

    fn ks_statistic(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        draws
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let f = cdf(t);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    /// 1% critical value of the one-sample KS statistic.
    fn ks_critical(n: usize) -> f64 {
        1.628 / (n as f64).sqrt()
    }

    #[test]
    fn sample_ig_mean_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_ig(1.0, 1.0, 1.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.004, "{mean}");
        assert!(sample_ig(0.0, 1.0, 1.0, &mut rng).is_err());
        assert!(sample_ig(-1.0, 1.0, 1.0, &mut rng).is_err());
        let tiny = (0..100)
            .map(|_| sample_ig(1.0, 1.0, 1e-9, &mut rng).unwrap())
            .fold(0.0, f64::max);
        assert!(tiny < 1e-6);
    }

    #[test]
    fn brownian_passage_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(mu, sigma, b) in &[(1.0, 1.0, 1.0), (1.0, 0.3, 2.0), (0.5, 2.0, 0.5)] {
            let e = LevyExponent::brownian(mu, sigma).unwrap();
            let n = 100_000;
            let draws: Vec<f64> = (0..n)
                .map(|_| sample_first_passage(&e, b, DEFAULT_HORIZON, &mut rng).unwrap().unwrap())
                .collect();
            let p = IgParams::new(mu, sigma, b).unwrap();
            let d = ks_statistic(draws, |t| 1.0 - ig_survival(p, t).unwrap());
            assert!(d < ks_critical(n), "mu={mu} sigma={sigma} b={b}: D={d}");
        }
    }

    #[test]
    fn defective_passage_conditional_law() {
        // Crossing paths follow F(t) / F(inf); the rest never cross.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = LevyExponent::brownian(-0.5, 1.0).unwrap();
        let p = IgParams::new(-0.5, 1.0, 1.0).unwrap();
        let n = 20_000;
        let draws: Vec<Option<f64>> = (0..n)
            .map(|_| sample_first_passage(&e, 1.0, DEFAULT_HORIZON, &mut rng).unwrap())
            .collect();
        let crossed: Vec<f64> = draws.iter().flatten().copied().collect();
        let reach = 1.0 - ig_defect(p);
        let frac = crossed.len() as f64 / n as f64;
        assert!(
            (frac - reach).abs() < 4.0 * (reach * (1.0 - reach) / n as f64).sqrt(),
            "{frac} vs {reach}"
        );
        let d = ks_statistic(crossed.clone(), |t| (1.0 - ig_survival(p, t).unwrap()) / reach);
        assert!(d < ks_critical(crossed.len()), "D={d}");
    }

    #[test]
    fn endpoint_law_without_crossing() {
        // Mean of the conditioned endpoint against direct quadrature of
        // the killed Brownian density.
        let (mu, sigma, gap, window) = (0.3, 1.0, 1.0, 2.0);
        let var = sigma * sigma * window;
        let density = |y: f64| {
            let z = (y - mu * window) / var.sqrt();
            (-0.5 * z * z).exp() * -(-2.0 * gap * (gap - y) / var).exp_m1()
        };
        let (lo, steps) = (-15.0, 200_000);
        let h = (gap - lo) / steps as f64;
        let (mut mass, mut first) = (0.0, 0.0);
        for i in 0..steps {
            let y = lo + (i as f64 + 0.5) * h;
            mass += density(y) * h;
            first += y * density(y) * h;
        }
        let expected = first / mass;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| endpoint_without_crossing(mu, sigma, gap, window, &mut rng))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(draws.iter().all(|&y| y < gap));
        assert!(
            (mean - expected).abs() < 4.0 * sd / (n as f64).sqrt(),
            "{mean} vs {expected}"
        );
    }

    fn model(jumps: Jumps, sigma: f64) -> MhtModel {
        MhtModel::new(
            LevyExponent::new(1.0, sigma, jumps).unwrap(),
            CovariateLink::default(),
            MixingDistribution::point(1.0).unwrap(),
            Normalization::UnitDrift,
        )
        .unwrap()
    }

    #[test]
    fn discrete_shock_mean_matches_transform_slope() {
        let m = model(
            Jumps::Discrete(DiscreteShocks::new(vec![0.0186], vec![-5.1321]).unwrap()),
            0.5423f64.sqrt(),
        );
        let mut spec = SimSpec::new(m.clone(), 200_000, 5);
        spec.censoring = Censoring::None;
        let data = simulate_dataset(&spec).unwrap();
        let t: Vec<f64> = data.observations().iter().map(|o| o.duration).collect();
        let n = t.len() as f64;
        let mean = t.iter().sum::<f64>() / n;
        let sd = (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let h = 1e-5;
        let slope = (m.duration_laplace(h, &[]).unwrap() - m.duration_laplace(0.0, &[]).unwrap()) / h;
        assert!(
            (mean + slope).abs() < 3.0 * sd / n.sqrt() + 1e-4,
            "{mean} vs {}",
            -slope
        );
    }

    #[test]
    fn gamma_rate_and_size_scaling_consistent() {
        // Doubling the rate and halving the mean size keeps psi'(0); both
        // simulated means track the transform slope.
        for (lambda, omega) in [(0.5, 2.0), (1.0, 4.0)] {
            let m = model(Jumps::Gamma(GammaShocks::new(lambda, omega, 1.0).unwrap()), 1.0);
            let data = simulate_dataset(&SimSpec::new(m.clone(), 100_000, 9)).unwrap();
            let t: Vec<f64> = data.observations().iter().map(|o| o.duration).collect();
            let n = t.len() as f64;
            let mean = t.iter().sum::<f64>() / n;
            let sd = (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let h = 1e-5;
            let slope = (m.duration_laplace(h, &[]).unwrap() - 1.0) / h;
            assert!(
                (mean + slope).abs() < 3.0 * sd / n.sqrt() + 1e-4,
                "lambda={lambda}: {mean} vs {}",
                -slope
            );
        }
    }

    #[test]
    fn reproducible_and_censored() {
        let m = model(Jumps::Gamma(GammaShocks::new(1.0, 2.0, 1.0).unwrap()), 1.0);
        let mut spec = SimSpec::new(m, 5000, 42);
        assert_eq!(simulate_dataset(&spec).unwrap(), simulate_dataset(&spec).unwrap());
        assert!(simulate_dataset(&spec)
            .unwrap()
            .observations()
            .iter()
            .all(|o| o.complete));
        spec.censoring = Censoring::Fixed(1.0);
        let d = simulate_dataset(&spec).unwrap();
        assert!(d.observations().iter().all(|o| o.duration <= 1.0));
        assert!(d.observations().iter().any(|o| !o.complete));
        spec.censoring = Censoring::Fixed(0.0);
        assert!(simulate_dataset(&spec).is_err());
        spec.censoring = Censoring::Exponential(0.5);
        assert!(simulate_dataset(&spec)
            .unwrap()
            .observations()
            .iter()
            .any(|o| !o.complete));
        spec.n_draws = 0;
        assert!(simulate_dataset(&spec).is_err());
    }

    #[test]
    fn defective_model_needs_censoring() {
        let m = MhtModel::new(
            LevyExponent::brownian(-1.0, 1.0).unwrap(),
            CovariateLink::default(),
            MixingDistribution::point(1.0).unwrap(),
            Normalization::UnitDispersion,
        )
        .unwrap();
        let mut spec = SimSpec::new(m, 100, 1);
        assert!(simulate_dataset(&spec).is_err());
        spec.censoring = Censoring::Fixed(5.0);
        let d = simulate_dataset(&spec).unwrap();
        assert_eq!(d.len(), 100);
    }

    #[test]
    fn covariates_resampled_from_source() {
        let m = MhtModel::new(
            LevyExponent::brownian(1.0, 1.0).unwrap(),
            CovariateLink::new(vec![0.5]).unwrap(),
            MixingDistribution::point(1.0).unwrap(),
            Normalization::UnitDrift,
        )
        .unwrap();
        let mut spec = SimSpec::new(m, 1000, 2);
        spec.covariate_source = Some(vec![vec![-1.0], vec![2.0]]);
        let d = simulate_dataset(&spec).unwrap();
        assert!(d
            .observations()
            .iter()
            .all(|o| o.covariates[0] == -1.0 || o.covariates[0] == 2.0));
        assert_eq!(d.covariate_names(), ["x1"]);
    }
}
