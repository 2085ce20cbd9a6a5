//! Flat parameter vectors for a fixed model structure.
//!
//! The natural vector is `(mu, sigma, alpha, beta, v_1..v_L, pi_1..pi_{L-1})`
//! with `pi_L = 1 - sum pi_l`, where `alpha` is `(lambda_1..Q, nu_1..Q)` for
//! discrete shocks or `(lambda, omega, tau)` for gamma shocks. The parameter
//! fixed by the normalization (`mu` or `sigma`) is never free.
//!
//! The unconstrained vector used by the optimizer maps the free natural
//! coordinates one to one:
//!
//! * `sigma`, shock rates, `omega`, `tau`: logarithm;
//! * ordered negative shock sizes: `ln(-nu_Q)` then `ln(nu_{q+1} - nu_q)`;
//! * ordered support points: `ln v_1` then `ln(v_l - v_{l-1})`;
//! * masses: centered multinomial logits `ln pi_l - mean_j ln pi_j`, `l < L`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::levy::{DiscreteShocks, GammaShocks, Jumps, LevyExponent};
use crate::model::{CovariateLink, MhtModel, MixingDistribution, Normalization};

/// Jump family of a model structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family", content = "shocks")]
pub enum JumpFamily {
    None,
    Discrete(usize),
    Gamma,
}

/// Shape of a model: everything except the parameter values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStructure {
    pub jumps: JumpFamily,
    pub support_points: usize,
    pub covariates: usize,
    pub normalization: Normalization,
}

pub(crate) const MU: usize = 0;
pub(crate) const SIGMA: usize = 1;
pub(crate) const JUMPS: usize = 2;

impl ModelStructure {
    pub fn new(jumps: JumpFamily, support_points: usize, covariates: usize) -> Self {
        Self {
            jumps,
            support_points,
            covariates,
            normalization: Normalization::UnitDrift,
        }
    }

    pub fn of(model: &MhtModel) -> Self {
        let jumps = match model.exponent.jumps() {
            Jumps::None => JumpFamily::None,
            Jumps::Discrete(d) => JumpFamily::Discrete(d.len()),
            Jumps::Gamma(_) => JumpFamily::Gamma,
        };
        Self {
            jumps,
            support_points: model.mixing.len(),
            covariates: model.link.dim(),
            normalization: model.normalization,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.support_points == 0 {
            return invalid("a model needs at least one support point");
        }
        if self.jumps == JumpFamily::Discrete(0) {
            return invalid("discrete shocks need at least one shock size");
        }
        Ok(())
    }

    pub fn jump_len(&self) -> usize {
        match self.jumps {
            JumpFamily::None => 0,
            JumpFamily::Discrete(q) => 2 * q,
            JumpFamily::Gamma => 3,
        }
    }

    pub(crate) fn beta_offset(&self) -> usize {
        JUMPS + self.jump_len()
    }

    pub(crate) fn support_offset(&self) -> usize {
        self.beta_offset() + self.covariates
    }

    pub(crate) fn mass_offset(&self) -> usize {
        self.support_offset() + self.support_points
    }

    /// Length of the natural vector.
    pub fn natural_len(&self) -> usize {
        self.mass_offset() + self.support_points - 1
    }

    /// Index of the coordinate fixed by the normalization.
    pub fn normalized_index(&self) -> usize {
        match self.normalization {
            Normalization::UnitDrift => MU,
            Normalization::UnitDispersion => SIGMA,
        }
    }

    /// Mask of free natural coordinates.
    pub fn free_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.natural_len()];
        mask[self.normalized_index()] = false;
        mask
    }

    pub fn free_len(&self) -> usize {
        self.natural_len() - 1
    }

    /// Names of the natural coordinates.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["mu".to_string(), "sigma".to_string()];
        match self.jumps {
            JumpFamily::None => {}
            JumpFamily::Discrete(q) => {
                names.extend((1..=q).map(|i| format!("lambda_{i}")));
                names.extend((1..=q).map(|i| format!("nu_{i}")));
            }
            JumpFamily::Gamma => names.extend(["lambda", "omega", "tau"].map(String::from)),
        }
        names.extend((1..=self.covariates).map(|i| format!("beta_{i}")));
        names.extend((1..=self.support_points).map(|i| format!("v_{i}")));
        names.extend((1..self.support_points).map(|i| format!("pi_{i}")));
        names
    }
}

/// Natural parameter vector of a model.
pub fn natural_vector(model: &MhtModel) -> Vec<f64> {
    let mut out = vec![model.exponent.mu(), model.exponent.sigma()];
    match model.exponent.jumps() {
        Jumps::None => {}
        Jumps::Discrete(d) => {
            out.extend_from_slice(d.rates());
            out.extend_from_slice(d.sizes());
        }
        Jumps::Gamma(g) => out.extend([g.arrival_rate, g.size_rate, g.shape]),
    }
    out.extend_from_slice(model.link.beta());
    out.extend_from_slice(model.mixing.support());
    let masses = model.mixing.masses();
    out.extend_from_slice(&masses[..masses.len() - 1]);
    out
}

/// Inverse of [`natural_vector`]; validates every constraint.
pub fn model_from_natural(structure: &ModelStructure, theta: &[f64]) -> Result<MhtModel> {
    structure.validate()?;
    if theta.len() != structure.natural_len() {
        return invalid(format!(
            "natural vector has length {}, structure expects {}",
            theta.len(),
            structure.natural_len()
        ));
    }
    let j = &theta[JUMPS..structure.beta_offset()];
    let jumps = match structure.jumps {
        JumpFamily::None => Jumps::None,
        JumpFamily::Discrete(q) => Jumps::Discrete(DiscreteShocks::new(j[..q].to_vec(), j[q..].to_vec())?),
        JumpFamily::Gamma => Jumps::Gamma(GammaShocks::new(j[0], j[1], j[2])?),
    };
    let exponent = LevyExponent::new(theta[MU], theta[SIGMA], jumps)?;
    let link = CovariateLink::new(theta[structure.beta_offset()..structure.support_offset()].to_vec())?;
    let support = theta[structure.support_offset()..structure.mass_offset()].to_vec();
    let mut masses = theta[structure.mass_offset()..].to_vec();
    let last = 1.0 - masses.iter().sum::<f64>();
    masses.push(last);
    let mixing = MixingDistribution::new(support, masses)?;
    MhtModel::new(exponent, link, mixing, structure.normalization)
}

/// Unconstrained coordinates of the free parameters of `model`.
pub fn to_unconstrained(model: &MhtModel) -> Vec<f64> {
    let s = ModelStructure::of(model);
    let mut eta = Vec::with_capacity(s.free_len());
    match s.normalization {
        Normalization::UnitDrift => eta.push(model.exponent.sigma().ln()),
        Normalization::UnitDispersion => eta.push(model.exponent.mu()),
    }
    match model.exponent.jumps() {
        Jumps::None => {}
        Jumps::Discrete(d) => {
            eta.extend(d.rates().iter().map(|r| r.ln()));
            let sizes = d.sizes();
            let q = sizes.len();
            let mut increments = vec![0.0; q];
            increments[q - 1] = (-sizes[q - 1]).ln();
            for i in 0..q - 1 {
                increments[i] = (sizes[i + 1] - sizes[i]).ln();
            }
            eta.extend(increments);
        }
        Jumps::Gamma(g) => eta.extend([g.arrival_rate.ln(), g.size_rate.ln(), g.shape.ln()]),
    }
    eta.extend_from_slice(model.link.beta());
    let v = model.mixing.support();
    eta.push(v[0].ln());
    eta.extend(v.windows(2).map(|w| (w[1] - w[0]).ln()));
    let log_pi: Vec<f64> = model.mixing.masses().iter().map(|p| p.ln()).collect();
    let mean = log_pi.iter().sum::<f64>() / log_pi.len() as f64;
    eta.extend(log_pi[..log_pi.len() - 1].iter().map(|l| l - mean));
    eta
}

/// Natural vector (all coordinates, including the normalized one) from
/// unconstrained coordinates.
pub fn natural_from_unconstrained(structure: &ModelStructure, eta: &[f64]) -> Result<Vec<f64>> {
    structure.validate()?;
    if eta.len() != structure.free_len() {
        return invalid(format!(
            "unconstrained vector has length {}, expected {}",
            eta.len(),
            structure.free_len()
        ));
    }
    let mut theta = Vec::with_capacity(structure.natural_len());
    match structure.normalization {
        Normalization::UnitDrift => theta.extend([1.0, eta[0].exp()]),
        Normalization::UnitDispersion => theta.extend([eta[0], 1.0]),
    }
    let mut k = 1;
    match structure.jumps {
        JumpFamily::None => {}
        JumpFamily::Discrete(q) => {
            theta.extend(eta[k..k + q].iter().map(|x| x.exp()));
            k += q;
            let mut sizes = vec![0.0; q];
            let mut acc = 0.0;
            for i in (0..q).rev() {
                acc -= eta[k + i].exp();
                sizes[i] = acc;
            }
            theta.extend(sizes);
            k += q;
        }
        JumpFamily::Gamma => {
            theta.extend(eta[k..k + 3].iter().map(|x| x.exp()));
            k += 3;
        }
    }
    theta.extend_from_slice(&eta[k..k + structure.covariates]);
    k += structure.covariates;
    let l = structure.support_points;
    let mut acc = 0.0;
    for i in 0..l {
        acc += eta[k + i].exp();
        theta.push(acc);
    }
    k += l;
    let masses = softmax_centered(&eta[k..]);
    theta.extend_from_slice(&masses[..l - 1]);
    Ok(theta)
}

pub fn from_unconstrained(structure: &ModelStructure, eta: &[f64]) -> Result<MhtModel> {
    model_from_natural(structure, &natural_from_unconstrained(structure, eta)?)
}

/// Probabilities from `L - 1` centered logits (the last logit is minus their sum).
fn softmax_centered(logits: &[f64]) -> Vec<f64> {
    let mut full: Vec<f64> = logits.to_vec();
    full.push(-logits.iter().sum::<f64>());
    let max = full.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = full.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Jacobian `d theta_free / d eta` (rows: free natural coordinates in
/// order, columns: unconstrained coordinates).
pub fn unconstrained_jacobian(structure: &ModelStructure, eta: &[f64]) -> Result<DMatrix<f64>> {
    let theta = natural_from_unconstrained(structure, eta)?;
    let n = structure.free_len();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    // Free natural row index = natural index minus one past the normalized slot.
    let norm = structure.normalized_index();
    let row = |natural: usize| if natural > norm { natural - 1 } else { natural };
    match structure.normalization {
        Normalization::UnitDrift => jac[(0, 0)] = theta[SIGMA],
        Normalization::UnitDispersion => jac[(0, 0)] = 1.0,
    }
    let mut k = 1;
    match structure.jumps {
        JumpFamily::None => {}
        JumpFamily::Discrete(q) => {
            for i in 0..q {
                jac[(row(JUMPS + i), k + i)] = theta[JUMPS + i];
            }
            k += q;
            // nu_i = -sum_{j >= i} exp(eta_j)
            for i in 0..q {
                for j in i..q {
                    jac[(row(JUMPS + q + i), k + j)] = -eta[k + j].exp();
                }
            }
            k += q;
        }
        JumpFamily::Gamma => {
            for i in 0..3 {
                jac[(row(JUMPS + i), k + i)] = theta[JUMPS + i];
            }
            k += 3;
        }
    }
    for i in 0..structure.covariates {
        jac[(row(structure.beta_offset() + i), k + i)] = 1.0;
    }
    k += structure.covariates;
    let l = structure.support_points;
    for i in 0..l {
        for j in 0..=i {
            jac[(row(structure.support_offset() + i), k + j)] = eta[k + j].exp();
        }
    }
    k += l;
    let masses = softmax_centered(&eta[k..]);
    let last = masses[l - 1];
    for i in 0..l - 1 {
        for j in 0..l - 1 {
            let delta = if i == j { 1.0 } else { 0.0 };
            jac[(row(structure.mass_offset() + i), k + j)] = masses[i] * (delta - masses[j] + last);
        }
    }
    Ok(jac)
}

/// Map a gradient over all support masses `(pi_1..pi_L)` treated as free to
/// the natural coordinates `(pi_1..pi_{L-1})` with `pi_L = 1 - sum`.
pub(crate) fn fold_mass_gradient(structure: &ModelStructure, full: &[f64]) -> Vec<f64> {
    let off = structure.mass_offset();
    let l = structure.support_points;
    let last = full[off + l - 1];
    let mut out = full[..off].to_vec();
    out.extend(full[off..off + l - 1].iter().map(|g| g - last));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column_iv() -> MhtModel {
        MhtModel::new(
            LevyExponent::brownian(1.0, 1.2272f64.sqrt()).unwrap(),
            CovariateLink::new(vec![-0.8669]).unwrap(),
            MixingDistribution::new(
                vec![1.1045, 3.2094, 7.1654, 18.5572],
                vec![0.2519, 0.2826, 0.3146, 1.0 - 0.2519 - 0.2826 - 0.3146],
            )
            .unwrap(),
            Normalization::UnitDrift,
        )
        .unwrap()
    }

    #[test]
    fn transform_examples() {
        let m = MhtModel::new(
            LevyExponent::brownian(1.0, 1.0).unwrap(),
            CovariateLink::new(vec![0.0]).unwrap(),
            MixingDistribution::new(vec![1.0, 2.0, 3.0], vec![1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0]).unwrap(),
            Normalization::UnitDrift,
        )
        .unwrap();
        let eta = to_unconstrained(&m);
        assert_eq!(eta[0], 0.0);
        assert!(eta[eta.len() - 2..].iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn column_iv_round_trip() {
        let m = column_iv();
        let s = ModelStructure::of(&m);
        let back = from_unconstrained(&s, &to_unconstrained(&m)).unwrap();
        for (a, b) in natural_vector(&m).iter().zip(natural_vector(&back)) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn natural_round_trip_and_names() {
        let m = column_iv();
        let s = ModelStructure::of(&m);
        let theta = natural_vector(&m);
        assert_eq!(theta.len(), s.natural_len());
        assert_eq!(s.names().len(), s.natural_len());
        let back = natural_vector(&model_from_natural(&s, &theta).unwrap());
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
        }
        assert!(model_from_natural(&s, &theta[1..]).is_err());
    }

    #[test]
    fn inadmissible_natural_rejected() {
        let m = column_iv();
        let s = ModelStructure::of(&m);
        let mut theta = natural_vector(&m);
        theta[s.support_offset() + 1] = theta[s.support_offset()];
        assert!(model_from_natural(&s, &theta).is_err());
    }

    fn numeric_jacobian(s: &ModelStructure, eta: &[f64]) -> DMatrix<f64> {
        let n = eta.len();
        let free: Vec<usize> = (0..s.natural_len()).filter(|&i| i != s.normalized_index()).collect();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * eta[j].abs().max(1.0);
            let mut up = eta.to_vec();
            let mut dn = eta.to_vec();
            up[j] += h;
            dn[j] -= h;
            let tu = natural_from_unconstrained(s, &up).unwrap();
            let td = natural_from_unconstrained(s, &dn).unwrap();
            for (r, &i) in free.iter().enumerate() {
                jac[(r, j)] = (tu[i] - td[i]) / (2.0 * h);
            }
        }
        jac
    }

    proptest! {
        #[test]
        fn round_trip_random(
            q in 1usize..4, l in 1usize..5, k in 0usize..3, gamma in any::<bool>(), unit_sigma in any::<bool>(),
            raw in proptest::collection::vec(-2.0f64..2.0, 30)
        ) {
            let jumps = if gamma { JumpFamily::Gamma } else { JumpFamily::Discrete(q) };
            let mut s = ModelStructure::new(jumps, l, k);
            if unit_sigma { s.normalization = Normalization::UnitDispersion; }
            let eta = &raw[..s.free_len()];
            let m = from_unconstrained(&s, eta).unwrap();
            let back = to_unconstrained(&m);
            for (a, b) in eta.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
            }
            let an = unconstrained_jacobian(&s, eta).unwrap();
            let num = numeric_jacobian(&s, eta);
            for (a, b) in an.iter().zip(num.iter()) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{} vs {}", a, b);
            }
        }
    }
}
