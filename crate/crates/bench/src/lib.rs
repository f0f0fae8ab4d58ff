//! Shared fixtures for the benchmarks.

use platoon_core::data::{synthesize, SynthConfig};
use platoon_core::network::{init_params, NetworkParams};
use platoon_core::training::feature_norm_for;
use platoon_core::Platoon;

/// A handful of synthetic platoons and an experiment-sized network
/// normalised to them.
pub fn fixture() -> (Vec<Platoon>, NetworkParams) {
    let ds = synthesize(&SynthConfig {
        num_platoons: 8,
        ..SynthConfig::default()
    })
    .expect("default synth config");
    let norm = feature_norm_for(&ds.platoons).expect("non-empty dataset");
    (ds.platoons, init_params(1).with_norm(norm))
}
