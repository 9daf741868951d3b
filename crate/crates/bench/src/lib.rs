//! Fixtures shared by the benchmarks.

use drate_core::{sim, GeneratedScenario, Mechanism, Model, Regime, ScenarioConfig};

/// One replication of a Model 1 scenario with 30% MCAR missingness and
/// unconfoundedness given the masked covariates.
pub fn model1(n: usize) -> GeneratedScenario {
    scenario(Model::Model1, Mechanism::Mcar, Regime::Despite, n)
}

pub fn scenario(model: Model, mechanism: Mechanism, regime: Regime, n: usize) -> GeneratedScenario {
    sim::generate(&ScenarioConfig {
        model,
        mechanism,
        regime,
        n,
        seed: 11,
        ..Default::default()
    })
    .expect("benchmark scenario")
}
