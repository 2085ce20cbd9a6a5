//! Mixing distribution, covariate link and the assembled hitting-time model.

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::levy::{DiscreteShocks, GammaShocks, Jumps, LevyExponent};

/// Finitely discrete distribution of the unobserved threshold factor `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingDistribution {
    support: Vec<f64>,
    masses: Vec<f64>,
}

impl MixingDistribution {
    /// Support points must be positive and strictly increasing; masses in
    /// `(0, 1)` (or exactly 1 for a single point) summing to one.
    pub fn new(support: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != masses.len() {
            return invalid("mixing distribution needs matching, nonempty support and masses");
        }
        if support.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return invalid(format!("support points must be positive, got {support:?}"));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!("support points must be strictly increasing, got {support:?}"));
        }
        let single = masses.len() == 1;
        if masses
            .iter()
            .any(|p| !p.is_finite() || *p <= 0.0 || (*p >= 1.0 && !single))
        {
            return invalid(format!("masses must lie in (0, 1), got {masses:?}"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("masses must sum to one, got {total}"));
        }
        Ok(Self { support, masses })
    }

    /// Degenerate distribution at `v`.
    pub fn point(v: f64) -> Result<Self> {
        Self::new(vec![v], vec![1.0])
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// `L(z) = sum_l pi_l exp(-z v_l)`.
    pub fn laplace(&self, z: Complex64) -> Complex64 {
        self.support
            .iter()
            .zip(&self.masses)
            .map(|(&v, &p)| p * (-z * v).exp())
            .sum()
    }
}

/// Log-linear threshold `phi(x; beta) = exp(x' beta)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovariateLink {
    beta: Vec<f64>,
}

impl CovariateLink {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) {
            return invalid(format!("covariate effects must be finite, got {beta:?}"));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn threshold(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.beta.len() {
            return invalid(format!(
                "covariate vector has length {}, link expects {}",
                x.len(),
                self.beta.len()
            ));
        }
        Ok(self.threshold_unchecked(x))
    }

    pub(crate) fn threshold_unchecked(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>().exp()
    }
}

/// Which scale normalization pins down the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `mu = 1`.
    #[default]
    UnitDrift,
    /// `sigma = 1`.
    UnitDispersion,
}

/// Full mixed hitting-time model `theta = (mu, sigma, alpha, beta, kappa)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhtModel {
    pub exponent: LevyExponent,
    pub link: CovariateLink,
    pub mixing: MixingDistribution,
    pub normalization: Normalization,
}

impl MhtModel {
    pub fn new(
        exponent: LevyExponent,
        link: CovariateLink,
        mixing: MixingDistribution,
        normalization: Normalization,
    ) -> Result<Self> {
        match normalization {
            Normalization::UnitDrift if exponent.mu() != 1.0 => {
                return invalid(format!(
                    "unit-drift normalization requires mu = 1, got {}",
                    exponent.mu()
                ))
            }
            Normalization::UnitDispersion if exponent.sigma() != 1.0 => {
                return invalid(format!(
                    "unit-dispersion normalization requires sigma = 1, got {}",
                    exponent.sigma()
                ))
            }
            _ => {}
        }
        Ok(Self {
            exponent,
            link,
            mixing,
            normalization,
        })
    }

    /// Laplace transform of `T | X = x` at real `s >= 0`, through the
    /// numerically inverted exponent. Used as an oracle; the production
    /// inversion path never evaluates `Lambda`.
    pub fn duration_laplace(&self, s: f64, x: &[f64]) -> Result<f64> {
        let phi = self.link.threshold(x)?;
        let lambda = self.exponent.lambda_numeric(s)?;
        Ok(self.mixing.laplace(Complex64::new(lambda * phi, 0.0)).re)
    }
}

/// Plain record of a model, for configuration and result files.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub mu: f64,
    pub sigma: f64,
    #[serde(default)]
    pub jumps: JumpSpec,
    #[serde(default)]
    pub beta: Vec<f64>,
    pub support: Vec<f64>,
    pub masses: Vec<f64>,
    #[serde(default)]
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpSpec {
    #[default]
    None,
    Discrete {
        rates: Vec<f64>,
        sizes: Vec<f64>,
    },
    Gamma {
        arrival_rate: f64,
        size_rate: f64,
        shape: f64,
    },
}

impl From<&MhtModel> for ModelSpec {
    fn from(m: &MhtModel) -> Self {
        let jumps = match m.exponent.jumps() {
            Jumps::None => JumpSpec::None,
            Jumps::Discrete(d) => JumpSpec::Discrete {
                rates: d.rates().to_vec(),
                sizes: d.sizes().to_vec(),
            },
            Jumps::Gamma(g) => JumpSpec::Gamma {
                arrival_rate: g.arrival_rate,
                size_rate: g.size_rate,
                shape: g.shape,
            },
        };
        Self {
            mu: m.exponent.mu(),
            sigma: m.exponent.sigma(),
            jumps,
            beta: m.link.beta().to_vec(),
            support: m.mixing.support().to_vec(),
            masses: m.mixing.masses().to_vec(),
            normalization: m.normalization,
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<MhtModel> {
        let jumps = match &self.jumps {
            JumpSpec::None => Jumps::None,
            JumpSpec::Discrete { rates, sizes } => Jumps::Discrete(DiscreteShocks::new(rates.clone(), sizes.clone())?),
            JumpSpec::Gamma {
                arrival_rate,
                size_rate,
                shape,
            } => Jumps::Gamma(GammaShocks::new(*arrival_rate, *size_rate, *shape)?),
        };
        MhtModel::new(
            LevyExponent::new(self.mu, self.sigma, jumps)?,
            CovariateLink::new(self.beta.clone())?,
            MixingDistribution::new(self.support.clone(), self.masses.clone())?,
            self.normalization,
        )
    }
}
