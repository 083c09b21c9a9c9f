#![allow(dead_code)]

use feddt::config::RunConfig;
use feddt::data::{Sample, SyntheticTask, TaskConfig};
use feddt::model::ModelConfig;

pub fn tiny_model(target_layers: usize, growth_parts: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 8,
        frame_dim: 4,
        d_model: 8,
        heads: 2,
        ffn_dim: 16,
        target_layers,
        growth_parts,
        max_seq_len: 16,
        literal_division: false,
    }
}

pub fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let task = TaskConfig {
        seed,
        min_len: 2,
        max_len: 5,
        ..TaskConfig::default()
    };
    SyntheticTask::new(&task, 8, 4)
        .unwrap()
        .generate(n)
        .unwrap()
}

/// A run small enough for a debug-assertion build: 12 rounds, 2×2 blocks.
pub fn quick_run() -> RunConfig {
    let mut cfg = RunConfig {
        model: tiny_model(4, 2),
        ..RunConfig::default()
    };
    cfg.federated.rounds = 12;
    cfg.federated.local_iters = 2;
    cfg.federated.batch_size = 4;
    cfg.task.min_len = 2;
    cfg.task.max_len = 5;
    cfg.data.n_train = 48;
    cfg.data.n_test = 8;
    cfg
}

pub fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}
