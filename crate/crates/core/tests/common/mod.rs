#![allow(dead_code)]

use std::path::Path;

use stgram_asd::classifier::MfnConfig;
use stgram_asd::experiments::{ExperimentConfig, SynthConfig};

/// A dataset and model small enough to train in seconds.
pub fn tiny_config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(root.join("data"), root.join("runs"));
    cfg.synth = SynthConfig {
        train_per_id: 6,
        test_normal_per_id: 4,
        test_anomaly_per_id: 4,
        clip_length: 1600,
        ..Default::default()
    };
    cfg.spectral.window_size = 256;
    cfg.spectral.hop_length = 128;
    cfg.spectral.mel_bins = 16;
    cfg.load.target_length = 1600;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;
    cfg.train.mfn = MfnConfig::tiny();
    cfg
}
