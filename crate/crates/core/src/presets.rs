//! Desk-scale settings shared by the examples, the acceptance suite and `configs/`.
//!
//! A strongly coupled 12-channel VAR process, 96-step histories, 6-step forecasts, and a
//! small codec that pretrains in a couple of seconds on one core.

use crate::codec::{PatchConfig, PretrainCorpusSpec, PretrainSchedule};
use crate::data::{SyntheticSpec, WindowConfig};
use crate::eval::ContrastConfig;
use crate::numerics::OptimizerConfig;
use crate::spatial::SpatialConfig;
use crate::train::TrainConfig;

pub const INPUT_LEN: usize = 96;
pub const HORIZON: usize = 6;

/// Twelve channels, coupling 0.8, 20 000 steps.
pub fn coupled_var() -> SyntheticSpec {
    SyntheticSpec {
        channels: 12,
        length: 20_000,
        coupling_strength: 0.8,
        edge_prob: 0.3,
        ..SyntheticSpec::default()
    }
}

pub fn windows() -> WindowConfig {
    WindowConfig {
        input_len: INPUT_LEN,
        horizon: HORIZON,
        stride: 8,
    }
}

pub fn patch_config() -> PatchConfig {
    PatchConfig {
        patch_len: 16,
        input_len: INPUT_LEN,
        horizon: HORIZON,
        hidden_dim: 32,
        n_layers: 3,
        n_heads: 4,
    }
}

pub fn corpus() -> PretrainCorpusSpec {
    PretrainCorpusSpec {
        n_series: 64,
        length: 1024,
        ..PretrainCorpusSpec::default()
    }
}

pub fn pretrain_schedule() -> PretrainSchedule {
    PretrainSchedule {
        epochs: 10,
        windows_per_epoch: 256,
        batch_size: 16,
        ..PretrainSchedule::default()
    }
}

pub fn spatial() -> SpatialConfig {
    SpatialConfig {
        dim: 32,
        n_heads: 4,
        ..SpatialConfig::default()
    }
}

/// CPiRi training: channel shuffling on, 40 epochs with early stopping.
pub fn cpiri_training(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 40,
        batch_size: 16,
        shuffle_channels: true,
        patience: 5,
        master_seed: seed,
        ..TrainConfig::default()
    }
}

pub fn contrast() -> ContrastConfig {
    ContrastConfig::default()
}

/// Contrast-baseline training: fixed channel order and a larger learning rate.
pub fn contrast_training(seed: u64) -> TrainConfig {
    TrainConfig {
        shuffle_channels: false,
        optimizer: OptimizerConfig {
            base_lr: 3e-3,
            ..OptimizerConfig::default()
        },
        ..cpiri_training(seed)
    }
}
