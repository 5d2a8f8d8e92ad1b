//! Shared inputs for the criterion benchmarks in `benches/`.

use semsentry_core::monitor::RuleOracleConfig;
use semsentry_core::scenegen::GenConfig;
use semsentry_core::{generate, Episode, ScenarioClass};

/// Driving corpus with the reference class sizes (50 anomalies, 1585
/// out-of-view observations).
pub fn reference_corpus(seed: u64, embedding_dim: usize) -> Vec<Episode> {
    let mut config = GenConfig { seed, embedding_dim, ..GenConfig::default() };
    for (class, count, observations) in [
        (ScenarioClass::NominalStop, 10, 309),
        (ScenarioClass::NominalLight, 10, 494),
        (ScenarioClass::AnomalousStop, 16, 248),
        (ScenarioClass::AnomalousLight, 19, 197),
        (ScenarioClass::StrangeObject, 15, 337),
    ] {
        config.counts.insert(class, count);
        config.observations.insert(class, observations);
    }
    generate(&config).expect("reference corpus config is valid")
}

pub fn oracle_rules() -> RuleOracleConfig {
    RuleOracleConfig::combined()
}
