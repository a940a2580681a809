use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierHead, HeadConfig, MfnConfig, MobileFaceNet};
use crate::error::{Error, Result};
use crate::features::{FeatureCache, FeatureKind, FeatureTensor, SpectralConfig, SpectralFrontEnd};
use crate::nn::ParamStore;
use crate::tgramnet::{TgramConfig, TgramNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Everything needed to rebuild a model's architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub spectral: SpectralConfig,
    pub feature_kind: FeatureKind,
    pub head: HeadConfig,
    pub mfn: MfnConfig,
    pub tgram: TgramConfig,
    /// Samples per clip.
    pub clip_length: usize,
    pub classes: usize,
    pub precision: Precision,
}

impl ModelSpec {
    /// `(channels, rows, frames)` of the classifier input.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        let frames = self.spectral.frames(self.clip_length);
        match self.feature_kind {
            FeatureKind::Sgram | FeatureKind::Tgram => (1, self.spectral.mel_bins, frames),
            FeatureKind::Spec => (1, self.spectral.fft_bins(), frames),
            FeatureKind::STgram => (2, self.spectral.mel_bins, frames),
        }
    }

    pub fn uses_tgram(&self) -> bool {
        matches!(self.feature_kind, FeatureKind::Tgram | FeatureKind::STgram)
    }

    pub fn uses_spectral(&self) -> bool {
        self.feature_kind != FeatureKind::Tgram
    }
}

/// A clip ready for the model: the raw wave plus its fixed spectral map
/// (absent when the model only looks at the Tgram).
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub wave: Vec<f32>,
    pub spectral: Option<Array2<f32>>,
}

/// Spectral front-end, optional TgramNet, MobileFaceNet and head over one
/// parameter store.
pub struct AsdModel {
    spec: ModelSpec,
    store: ParamStore,
    front: SpectralFrontEnd,
    tgram: Option<TgramNet>,
    mfn: MobileFaceNet,
    head: ClassifierHead,
}

impl AsdModel {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        if spec.classes == 0 {
            return Err(Error::Config("model needs at least one class".into()));
        }
        if spec.clip_length < spec.spectral.hop_length {
            return Err(Error::Config(format!(
                "clip length {} is shorter than one hop ({})",
                spec.clip_length, spec.spectral.hop_length
            )));
        }
        let front = SpectralFrontEnd::new(spec.spectral.clone())?;
        let mut store = ParamStore::new(spec.precision.dtype(), seed);
        let tgram = if spec.uses_tgram() {
            Some(TgramNet::new(&mut store, "tgram", &spec.spectral, spec.tgram.clone())?)
        } else {
            None
        };
        let mfn = MobileFaceNet::new(&mut store, "mfn", &spec.mfn, spec.input_shape())?;
        let head = ClassifierHead::new(&mut store, "head", spec.head.clone(), spec.classes, spec.mfn.embedding_dim)?;
        Ok(Self {
            spec,
            store,
            front,
            tgram,
            mfn,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn tgram(&self) -> Option<&TgramNet> {
        self.tgram.as_ref()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Kind of the fixed spectral input, if the model uses one.
    pub fn spectral_kind(&self) -> Option<FeatureKind> {
        match self.spec.feature_kind {
            FeatureKind::Sgram | FeatureKind::STgram => Some(FeatureKind::Sgram),
            FeatureKind::Spec => Some(FeatureKind::Spec),
            FeatureKind::Tgram => None,
        }
    }

    /// The fixed spectral map of one wave, shaped `(1, rows, frames)`.
    pub fn spectral_features(&self, wave: &[f32]) -> Result<Option<FeatureTensor>> {
        Ok(match self.spectral_kind() {
            Some(FeatureKind::Spec) => Some(self.front.log_spec(wave)?),
            Some(_) => Some(self.front.log_mel(wave)?),
            None => None,
        })
    }

    fn check_length(&self, wave: &[f32]) -> Result<()> {
        if wave.len() != self.spec.clip_length {
            return Err(Error::Shape(format!(
                "model expects clips of {} samples, got {}",
                self.spec.clip_length,
                wave.len()
            )));
        }
        Ok(())
    }

    /// Computes the fixed spectral input of one wave of exactly `clip_length` samples.
    pub fn prepare(&self, wave: Vec<f32>) -> Result<PreparedClip> {
        self.check_length(&wave)?;
        let spectral = self.spectral_features(&wave)?;
        Ok(PreparedClip {
            wave,
            spectral: spectral.map(|f| f.data.index_axis_move(Axis(0), 0)),
        })
    }

    /// As [`prepare`](Self::prepare), reading and filling a feature cache keyed by `source`.
    pub fn prepare_cached(&self, wave: Vec<f32>, source: &str, cache: &FeatureCache) -> Result<PreparedClip> {
        self.check_length(&wave)?;
        let spectral = match self.spectral_kind() {
            Some(kind) => {
                let f = cache.get_or_compute(source, &self.spec.spectral, kind, wave.len(), || {
                    Ok(self.spectral_features(&wave)?.expect("kind implies a spectral branch"))
                })?;
                Some(f.data.index_axis_move(Axis(0), 0))
            }
            None => None,
        };
        Ok(PreparedClip { wave, spectral })
    }

    /// Stacks prepared clips into the `(B, C, rows, frames)` classifier input.
    pub fn input(&self, batch: &[&PreparedClip]) -> Result<Tensor> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let dtype = self.dtype();
        let (_, rows, frames) = self.spec.input_shape();
        let b = batch.len();
        let spectral = if self.spec.uses_spectral() {
            let mut flat = Vec::with_capacity(b * rows * frames);
            for clip in batch {
                let map = clip
                    .spectral
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("clip was prepared without spectral features".into()))?;
                if map.dim() != (rows, frames) {
                    return Err(Error::Shape(format!(
                        "spectral map {:?} does not match model input ({rows}, {frames})",
                        map.dim()
                    )));
                }
                flat.extend(map.iter().copied());
            }
            Some(Tensor::from_vec(flat, (b, 1, rows, frames), &Device::Cpu)?.to_dtype(dtype)?)
        } else {
            None
        };
        let temporal = match &self.tgram {
            Some(net) => {
                let mut flat = Vec::with_capacity(b * self.spec.clip_length);
                for clip in batch {
                    flat.extend_from_slice(&clip.wave);
                }
                let waves = Tensor::from_vec(flat, (b, self.spec.clip_length), &Device::Cpu)?.to_dtype(dtype)?;
                Some(net.forward(&waves)?.unsqueeze(1)?)
            }
            None => None,
        };
        match (spectral, temporal) {
            (Some(s), Some(t)) => Ok(Tensor::cat(&[&s, &t], 1)?),
            (Some(s), None) => Ok(s),
            (None, Some(t)) => Ok(t),
            (None, None) => unreachable!("every feature kind has at least one branch"),
        }
    }

    /// `(B, D)` embeddings.
    pub fn embed(&self, batch: &[&PreparedClip], train: bool) -> Result<Tensor> {
        self.mfn.forward(&self.input(batch)?, train)
    }

    /// Training logits (margin applied to `targets`) or, without targets,
    /// inference logits.
    pub fn logits(&self, batch: &[&PreparedClip], targets: Option<&Tensor>, train: bool) -> Result<Tensor> {
        let emb = self.embed(batch, train)?;
        self.head.logits(&emb, targets)
    }
}
