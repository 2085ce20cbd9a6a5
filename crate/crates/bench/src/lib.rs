//! Fixtures shared by the benchmarks in `benches/`.

use mht_core::simulate::simulate_dataset;
use mht_core::{
    CovariateLink, Dataset, GammaShocks, Jumps, LevyExponent, MhtModel, MixingDistribution, Normalization, SimSpec,
};

/// Gamma shocks with a two-point threshold distribution.
pub fn gamma_model() -> MhtModel {
    MhtModel::new(
        LevyExponent::new(1.0, 1.0, Jumps::Gamma(GammaShocks::new(1.0, 2.0, 1.0).unwrap())).unwrap(),
        CovariateLink::new(vec![0.5]).unwrap(),
        MixingDistribution::new(vec![1.0, 5.0], vec![0.7, 0.3]).unwrap(),
        Normalization::UnitDrift,
    )
    .unwrap()
}

/// Brownian latent process with three support points.
pub fn brownian_model() -> MhtModel {
    MhtModel::new(
        LevyExponent::brownian(1.0, 1.1).unwrap(),
        CovariateLink::new(vec![0.5]).unwrap(),
        MixingDistribution::new(vec![1.0, 3.0, 7.0], vec![0.3, 0.3, 0.4]).unwrap(),
        Normalization::UnitDrift,
    )
    .unwrap()
}

/// Strike-sized sample drawn from `model` with a small covariate.
pub fn sample(model: &MhtModel, seed: u64) -> Dataset {
    let mut spec = SimSpec::new(model.clone(), 566, seed);
    spec.covariate_source = Some((0..50).map(|i| vec![(i as f64 - 25.0) / 250.0]).collect());
    simulate_dataset(&spec).unwrap()
}
