use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use super::ablation::AblationCell;
use super::synth::SynthConfig;
use crate::classifier::MfnConfig;
use crate::dataio::LoadOptions;
use crate::error::{Error, Result};
use crate::features::SpectralConfig;
use crate::trainer::TrainConfig;

/// Environment variable that replaces `dataset_root` when set.
pub const DATASET_ROOT_ENV: &str = "STGRAM_DATASET_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding `<machine_type>/{train,test}/*.wav`.
    pub dataset_root: PathBuf,
    /// Further roots merged with `dataset_root` (e.g. an additional training set).
    pub extra_roots: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub run_id: String,
    pub spectral: SpectralConfig,
    pub load: LoadOptions,
    pub train: TrainConfig,
    /// Upper FPR bound of the partial AUC.
    pub pauc_p: f64,
    pub score_batch_size: usize,
    /// Cache spectral features on disk under the run directory.
    pub cache_features: bool,
    pub ablation: Vec<AblationCell>,
    pub synth: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("data"),
            extra_roots: Vec::new(),
            output_dir: PathBuf::from("runs"),
            run_id: "default".into(),
            spectral: SpectralConfig::default(),
            load: LoadOptions::default(),
            train: TrainConfig::default(),
            pauc_p: 0.1,
            score_batch_size: 32,
            cache_features: false,
            ablation: AblationCell::default_matrix(),
            synth: SynthConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale settings for the synthetic dataset: 1 s clips, 64 Mel
    /// bins, a 512-sample window and the tiny MobileFaceNet.
    pub fn desk(dataset_root: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        let mut cfg = Self {
            dataset_root: dataset_root.into(),
            output_dir: output_dir.into(),
            ..Default::default()
        };
        cfg.spectral.window_size = 512;
        cfg.spectral.hop_length = 256;
        cfg.spectral.mel_bins = 64;
        cfg.load.target_length = cfg.synth.clip_length;
        cfg.train.epochs = 20;
        cfg.train.batch_size = 32;
        cfg.train.base_lr = 1e-3;
        cfg.train.mfn = MfnConfig::tiny();
        cfg
    }

    /// Reads YAML, applies `key=value` overrides in order, then the dataset
    /// root environment variable.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let v: Value = serde_yaml::from_str(&text)?;
                if v.is_null() {
                    Value::Mapping(Default::default())
                } else {
                    v
                }
            }
            None => Value::Mapping(Default::default()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: Self = serde_yaml::from_value(value)
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        if let Some(root) = std::env::var_os(DATASET_ROOT_ENV).filter(|v| !v.is_empty()) {
            cfg.dataset_root = PathBuf::from(root);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        self.train.validate()?;
        if !(self.pauc_p > 0.0 && self.pauc_p <= 1.0) {
            return Err(Error::Config(format!("pauc_p must lie in (0, 1], got {}", self.pauc_p)));
        }
        if self.score_batch_size == 0 {
            return Err(Error::Config("score_batch_size must be at least 1".into()));
        }
        if self.load.sample_rate != self.spectral.sample_rate {
            return Err(Error::Config(format!(
                "load.sample_rate {} differs from spectral.sample_rate {}",
                self.load.sample_rate, self.spectral.sample_rate
            )));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return Err(Error::Config(format!("invalid run id '{}'", self.run_id)));
        }
        Ok(())
    }

    pub fn dataset_roots(&self) -> Vec<PathBuf> {
        std::iter::once(self.dataset_root.clone())
            .chain(self.extra_roots.iter().cloned())
            .collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    pub fn to_yaml(&self) -> Result<String> {
        Ok(serde_yaml::to_string(self)?)
    }
}

/// Sets a dotted key (`train.epochs=2`) in a YAML tree. The value is parsed
/// as YAML, so numbers, booleans, lists and `null` keep their types.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override '{spec}' has an empty key segment")));
    }
    let value: Value = serde_yaml::from_str(raw)
        .map_err(|e| Error::Config(format!("override '{spec}': cannot parse value: {e}")))?;
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        if node.is_null() {
            *node = Value::Mapping(Default::default());
        }
        let map = node
            .as_mapping_mut()
            .ok_or_else(|| Error::Config(format!("override '{spec}': '{part}' is not a section")))?;
        node = map
            .entry(Value::String(part.to_string()))
            .or_insert(Value::Mapping(Default::default()));
    }
    if node.is_null() {
        *node = Value::Mapping(Default::default());
    }
    let map = node
        .as_mapping_mut()
        .ok_or_else(|| Error::Config(format!("override '{spec}': parent of the last key is not a section")))?;
    map.insert(Value::String(parts[parts.len() - 1].to_string()), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_take_precedence_and_keep_types() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.yaml");
        std::fs::write(&p, "train:\n  epochs: 50\n  batch_size: 8\nspectral:\n  mel_bins: 64\n").unwrap();
        let cfg = ExperimentConfig::load(
            Some(&p),
            &["train.epochs=2".into(), "train.head.kind=cee".into(), "pauc_p=0.2".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.train.head.kind, crate::classifier::HeadKind::Cee);
        assert_eq!(cfg.spectral.mel_bins, 64);
        assert_eq!(cfg.pauc_p, 0.2);
    }

    #[test]
    fn bad_overrides_and_keys_fail() {
        assert!(ExperimentConfig::load(None, &["train.epochs".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["train..epochs=1".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["train.epochs=0".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["train.epochz=3".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["pauc_p=1.0".into(), "pauc_p.x=1".into()]).is_err());
    }

    #[test]
    fn yaml_round_trip() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = serde_yaml::from_str(&cfg.to_yaml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn shipped_desk_yaml_matches_preset() {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.yaml");
        let mut cfg = ExperimentConfig::load(Some(&p), &[]).unwrap();
        cfg.run_id = "default".into();
        assert_eq!(cfg, ExperimentConfig::desk("data/synth", "runs"));
    }
}
