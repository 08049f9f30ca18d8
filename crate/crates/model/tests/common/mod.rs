#![allow(dead_code, unused_imports)]

use loopforge_core::synthetic::{build_records, DatasetConfig};
use loopforge_core::LoopSequence;
pub use loopforge_model::check::random_tokens;
use loopforge_model::{Model, ModelConfig};

pub fn tiny_model(seed: u64) -> Model {
    let mut cfg = ModelConfig::tiny();
    cfg.seed = seed;
    Model::new(&cfg).unwrap()
}

pub fn vases(count: usize, planes: usize, seed: u64) -> Vec<LoopSequence> {
    let cfg = DatasetConfig::vase(count, seed).with_planes(planes);
    let (records, _) = build_records(&cfg).unwrap();
    records.into_iter().map(|r| r.sequence).collect()
}
