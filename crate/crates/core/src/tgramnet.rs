//! TgramNet: a learnable temporal front-end mapping a raw waveform to an
//! `M x N` map aligned frame-for-frame with the log-Mel spectrogram.
//!
//! Layout: one large-kernel 1-D convolution (M channels, kernel W, stride H,
//! padding W/2) followed by three blocks of
//! `LayerNorm -> LeakyReLU -> Conv1d(M, kernel 3, stride 1, padding 1)`.

use candle_core::{DType, Device, Tensor};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{frame_count, FeatureKind, FeatureTensor, SpectralConfig};
use crate::nn::{conv1d_same, layer_norm_channels, leaky_relu, Init, ParamStore};

pub const TGRAM_BLOCKS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TgramConfig {
    pub leaky_slope: f64,
    pub norm_eps: f64,
    pub block_kernel: usize,
}

impl Default for TgramConfig {
    fn default() -> Self {
        Self {
            leaky_slope: 0.01,
            norm_eps: 1e-5,
            block_kernel: 3,
        }
    }
}

struct TgramBlock {
    norm_gain: Tensor,
    norm_bias: Tensor,
    conv_weight: Tensor,
    conv_bias: Tensor,
}

pub struct TgramNet {
    channels: usize,
    window: usize,
    hop: usize,
    cfg: TgramConfig,
    front_weight: Tensor,
    front_bias: Tensor,
    blocks: Vec<TgramBlock>,
}

impl TgramNet {
    /// Declares the TgramNet parameters under `prefix` in `store`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        spectral: &SpectralConfig,
        cfg: TgramConfig,
    ) -> Result<Self> {
        spectral.validate()?;
        if cfg.block_kernel % 2 == 0 {
            return Err(Error::Config("TgramNet block kernel must be odd".into()));
        }
        let m = spectral.mel_bins;
        let w = spectral.window_size;
        let front_weight = store.param(&format!("{prefix}.front.weight"), &[m, 1, w], Init::FanIn(w))?;
        let front_bias = store.param(&format!("{prefix}.front.bias"), &[m], Init::FanIn(w))?;
        let k = cfg.block_kernel;
        let blocks = (0..TGRAM_BLOCKS)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                Ok(TgramBlock {
                    norm_gain: store.param(&format!("{p}.norm.gain"), &[m], Init::Const(1.0))?,
                    norm_bias: store.param(&format!("{p}.norm.bias"), &[m], Init::Const(0.0))?,
                    conv_weight: store.param(&format!("{p}.conv.weight"), &[m, m, k], Init::FanIn(m * k))?,
                    conv_bias: store.param(&format!("{p}.conv.bias"), &[m], Init::FanIn(m * k))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            channels: m,
            window: w,
            hop: spectral.hop_length,
            cfg,
            front_weight,
            front_bias,
            blocks,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self, wave_len: usize) -> usize {
        // (L + 2*(W/2) - W) / H + 1 == L / H + 1 for even W
        (wave_len + 2 * (self.window / 2) - self.window) / self.hop + 1
    }

    /// `(B, L)` waveforms to `(B, M, N)` Tgrams.
    pub fn forward(&self, waves: &Tensor) -> Result<Tensor> {
        self.forward_masked(waves, [true; TGRAM_BLOCKS])
    }

    /// As [`forward`](Self::forward), with blocks whose flag is `false`
    /// replaced by the identity.
    pub fn forward_masked(&self, waves: &Tensor, active: [bool; TGRAM_BLOCKS]) -> Result<Tensor> {
        let (batch, len) = waves.dims2()?;
        let half = self.window / 2;
        let frames = self.frames(len);
        if frames == 0 || len + 2 * half < self.window {
            return Err(Error::Shape(format!("waveform of {len} samples is too short")));
        }
        // Frame the zero-padded wave: frame n covers padded[n*H .. n*H + W].
        let padded = waves.pad_with_zeros(1, half, half)?;
        let index: Vec<u32> = (0..frames)
            .flat_map(|n| (0..self.window).map(move |k| (n * self.hop + k) as u32))
            .collect();
        let index = Tensor::from_vec(index, frames * self.window, waves.device())?;
        let framed = padded
            .index_select(&index, 1)?
            .reshape((batch, frames, self.window))?;
        let kernel = self.front_weight.reshape((self.channels, self.window))?.t()?;
        let mut x = framed
            .broadcast_matmul(&kernel)?
            .broadcast_add(&self.front_bias.reshape((1, 1, self.channels))?)?
            .transpose(1, 2)?
            .contiguous()?;
        for (block, on) in self.blocks.iter().zip(active) {
            if !on {
                continue;
            }
            let h = layer_norm_channels(&x, &block.norm_gain, &block.norm_bias, self.cfg.norm_eps)?;
            let h = leaky_relu(&h, self.cfg.leaky_slope)?;
            x = conv1d_same(&h, &block.conv_weight, Some(&block.conv_bias))?;
        }
        Ok(x)
    }
}

/// A standalone TgramNet with its own parameter store.
pub fn tgramnet_init(
    spectral: &SpectralConfig,
    cfg: TgramConfig,
    dtype: DType,
    seed: u64,
) -> Result<(ParamStore, TgramNet)> {
    let mut store = ParamStore::new(dtype, seed);
    let net = TgramNet::new(&mut store, "tgram", spectral, cfg)?;
    Ok((store, net))
}

/// Runs one waveform through the network and returns its Tgram.
pub fn tgramnet_forward(net: &TgramNet, wave: &[f32], dtype: DType) -> Result<FeatureTensor> {
    let t = Tensor::from_slice(wave, (1, wave.len()), &Device::Cpu)?.to_dtype(dtype)?;
    let out = net.forward(&t)?;
    let (_, m, n) = out.dims3()?;
    let values: Vec<f32> = out.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    FeatureTensor::new(
        FeatureKind::Tgram,
        Array3::from_shape_vec((1, m, n), values).map_err(|e| Error::Shape(e.to_string()))?,
    )
}

/// Frame count shared by the spectral branch and TgramNet for a clip length.
pub fn aligned_frames(spectral: &SpectralConfig, clip_len: usize) -> usize {
    frame_count(clip_len, spectral.hop_length)
}
