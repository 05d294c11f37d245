//! Benchmark inputs shared by the criterion targets.

use vgx_core::code::SourceUnit;
use vgx_core::model::{Model, ModelConfig, Vocab};
use vgx_core::synth::toy_corpus;

pub fn functions(n: usize) -> Vec<SourceUnit> {
    toy_corpus(n, 11)
}

/// The default architecture over a vocabulary built from `units`.
pub fn model_for(units: &[SourceUnit]) -> Model {
    let pre: Vec<_> = units
        .iter()
        .filter_map(|u| vgx_core::code::preprocess(u).ok())
        .collect();
    let vocab = Vocab::build(pre.iter().flat_map(|p| p.input.sequence()));
    Model::new(ModelConfig::default(), vocab).expect("default config is valid")
}
