//! Spectral front-end: power spectrogram, log-Mel (Sgram), plain
//! log-spectrogram, and two-channel fusion with the learned Tgram.

mod cache;
mod mel;
mod stft;

use ndarray::{concatenate, s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

pub use cache::FeatureCache;
pub use mel::{build_mel_bank, hz_to_mel, mel_to_hz, MelBank};
pub use stft::{frame_count, power_spectrogram, window};

use crate::dataio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub sample_rate: u32,
    pub window_size: usize,
    pub hop_length: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    /// Upper mel edge; `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
    pub window: WindowKind,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_size: 1024,
            hop_length: 512,
            mel_bins: 128,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-8,
            window: WindowKind::Hann,
        }
    }
}

impl SpectralConfig {
    pub fn fft_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn frames(&self, clip_len: usize) -> usize {
        frame_count(clip_len, self.hop_length)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.window_size < 2 || self.window_size % 2 != 0 {
            return bad(format!(
                "window_size {} must be even and at least 2",
                self.window_size
            ));
        }
        if self.hop_length == 0 || self.hop_length > self.window_size {
            return bad(format!(
                "hop_length {} must be in 1..={}",
                self.hop_length, self.window_size
            ));
        }
        if self.mel_bins == 0 || self.mel_bins > self.fft_bins() {
            return bad(format!(
                "mel_bins {} must be in 1..={} (fft bins)",
                self.mel_bins,
                self.fft_bins()
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad(format!("log_floor {} must be positive", self.log_floor));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.fmin < 0.0 || self.fmax_hz() > nyquist || self.fmin >= self.fmax_hz() {
            return bad(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin={} fmax={}",
                self.fmin,
                self.fmax_hz()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Log-Mel spectrogram.
    #[serde(alias = "LogMel", alias = "logmel")]
    Sgram,
    Tgram,
    Spec,
    STgram,
}

/// A `(channels, rows, frames)` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub kind: FeatureKind,
    pub data: Array3<f32>,
}

impl FeatureTensor {
    pub fn new(kind: FeatureKind, data: Array3<f32>) -> Result<Self> {
        let (c, _, _) = data.dim();
        let want = if kind == FeatureKind::STgram { 2 } else { 1 };
        if c != want {
            return Err(Error::Shape(format!(
                "{kind:?} tensor must have {want} channel(s), got shape {:?}",
                data.shape()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{kind:?} tensor has non-finite entries")));
        }
        Ok(Self { kind, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Splits an STgram back into its Sgram and Tgram channels.
    pub fn split_stgram(&self) -> Result<(FeatureTensor, FeatureTensor)> {
        if self.kind != FeatureKind::STgram {
            return Err(Error::Shape(format!("cannot split a {:?} tensor", self.kind)));
        }
        let s = self.data.slice(s![0..1, .., ..]).to_owned();
        let t = self.data.slice(s![1..2, .., ..]).to_owned();
        Ok((
            FeatureTensor {
                kind: FeatureKind::Sgram,
                data: s,
            },
            FeatureTensor {
                kind: FeatureKind::Tgram,
                data: t,
            },
        ))
    }
}

/// Reusable extractor holding the mel bank for one configuration.
#[derive(Debug, Clone)]
pub struct SpectralFrontEnd {
    cfg: SpectralConfig,
    bank: MelBank,
}

impl SpectralFrontEnd {
    pub fn new(cfg: SpectralConfig) -> Result<Self> {
        let bank = build_mel_bank(&cfg)?;
        Ok(Self { cfg, bank })
    }

    pub fn with_bank(cfg: SpectralConfig, bank: MelBank) -> Result<Self> {
        cfg.validate()?;
        if bank.fft_bins() != cfg.fft_bins() {
            return Err(Error::Shape(format!(
                "mel bank has {} columns, config has {} fft bins",
                bank.fft_bins(),
                cfg.fft_bins()
            )));
        }
        Ok(Self { cfg, bank })
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &MelBank {
        &self.bank
    }

    pub fn power(&self, samples: &[f32]) -> Result<Array2<f64>> {
        power_spectrogram(samples, &self.cfg)
    }

    /// `ln(max(W_M · P, eps))`, shape `(1, rows(W_M), N)`.
    pub fn log_mel(&self, samples: &[f32]) -> Result<FeatureTensor> {
        let power = self.power(samples)?;
        let mel = self.bank.weights.dot(&power);
        Ok(FeatureTensor {
            kind: FeatureKind::Sgram,
            data: log_floor(&mel, self.cfg.log_floor).insert_axis(Axis(0)),
        })
    }

    /// `ln(max(P, eps))`, shape `(1, B, N)`.
    pub fn log_spec(&self, samples: &[f32]) -> Result<FeatureTensor> {
        let power = self.power(samples)?;
        Ok(FeatureTensor {
            kind: FeatureKind::Spec,
            data: log_floor(&power, self.cfg.log_floor).insert_axis(Axis(0)),
        })
    }
}

fn log_floor(x: &Array2<f64>, floor: f64) -> Array2<f32> {
    x.mapv(|v| v.max(floor).ln() as f32)
}

pub fn log_mel(clip: &AudioClip, cfg: &SpectralConfig) -> Result<FeatureTensor> {
    SpectralFrontEnd::new(cfg.clone())?.log_mel(&clip.samples)
}

pub fn log_spec(clip: &AudioClip, cfg: &SpectralConfig) -> Result<FeatureTensor> {
    cfg.validate()?;
    let power = power_spectrogram(&clip.samples, cfg)?;
    Ok(FeatureTensor {
        kind: FeatureKind::Spec,
        data: log_floor(&power, cfg.log_floor).insert_axis(Axis(0)),
    })
}

/// Stacks Sgram (channel 0) and Tgram (channel 1) into an STgram.
pub fn fuse_stgram(sgram: &FeatureTensor, tgram: &FeatureTensor) -> Result<FeatureTensor> {
    if sgram.kind != FeatureKind::Sgram || tgram.kind != FeatureKind::Tgram {
        return Err(Error::Shape(format!(
            "fusion expects (Sgram, Tgram), got ({:?}, {:?})",
            sgram.kind, tgram.kind
        )));
    }
    let (a, b) = (sgram.shape(), tgram.shape());
    if a != b || a.0 != 1 {
        return Err(Error::Shape(format!(
            "cannot fuse Sgram {a:?} with Tgram {b:?}: both must be (1, M, N) with equal M, N"
        )));
    }
    let data = concatenate(Axis(0), &[sgram.data.view(), tgram.data.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(FeatureTensor {
        kind: FeatureKind::STgram,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f32, len: usize, sr: u32) -> Vec<f32> {
        (0..len)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() as f32)
            .collect()
    }

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new(samples, 16_000, "mem").unwrap()
    }

    #[test]
    fn zero_clip_gives_zero_power_and_floor_logs() {
        let cfg = SpectralConfig::default();
        let c = clip(vec![0.0; 4096]);
        let p = power_spectrogram(&c.samples, &cfg).unwrap();
        assert!(p.iter().all(|v| *v == 0.0));
        let floor = (1e-8f64).ln() as f32;
        assert!(log_mel(&c, &cfg).unwrap().data.iter().all(|v| *v == floor));
        assert!(log_spec(&c, &cfg).unwrap().data.iter().all(|v| *v == floor));
    }

    #[test]
    fn default_shapes() {
        let cfg = SpectralConfig::default();
        let c = clip(sine(440.0, 0.5, 160_000, 16_000));
        assert_eq!(log_mel(&c, &cfg).unwrap().shape(), (1, 128, 313));
        assert_eq!(log_spec(&c, &cfg).unwrap().shape(), (1, 513, 313));
    }

    /// Single-frame DFT evaluated directly from its definition.
    fn direct_dft_power(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, x) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn one_khz_sine_peaks_at_bin_64_and_matches_direct_dft() {
        let cfg = SpectralConfig::default();
        let samples = sine(1000.0, 0.8, 16_000, 16_000);
        let p = power_spectrogram(&samples, &cfg).unwrap();
        for col in p.columns().into_iter().skip(1).take(p.ncols() - 2) {
            let argmax = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 64);
        }
        // frame 3 is fully interior: starts at 3*512 - 512
        let win = window(WindowKind::Hann, 1024);
        let start = 2 * 512;
        let frame: Vec<f64> = (0..1024)
            .map(|k| samples[start + k] as f64 * win[k])
            .collect();
        let oracle = direct_dft_power(&frame);
        for (b, want) in oracle.iter().enumerate() {
            let got = p[[b, 3]];
            assert!((got - want).abs() <= 1e-9 * want.max(1.0), "bin {b}: {got} vs {want}");
        }
        let argmax = oracle
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 64);
    }

    #[test]
    fn doubling_amplitude_adds_ln4_above_floor() {
        let cfg = SpectralConfig::default();
        let a = log_mel(&clip(sine(700.0, 0.25, 16_000, 16_000)), &cfg).unwrap();
        let b = log_mel(&clip(sine(700.0, 0.5, 16_000, 16_000)), &cfg).unwrap();
        let floor = (cfg.log_floor.ln() + 4f64.ln()) as f32;
        let mut checked = 0;
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            if *x > floor + 1.0 {
                assert!(((y - x) as f64 - 4f64.ln()).abs() < 1e-4, "{x} {y}");
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn identity_bank_makes_log_mel_equal_log_spec() {
        let cfg = SpectralConfig {
            mel_bins: 513,
            ..Default::default()
        };
        let bank = MelBank {
            weights: Array2::eye(513),
            centers: (0..513).map(|b| b as f64).collect(),
        };
        let fe = SpectralFrontEnd::with_bank(cfg.clone(), bank).unwrap();
        let samples = sine(300.0, 0.3, 8000, 16_000);
        let a = fe.log_mel(&samples).unwrap();
        let b = log_spec(&clip(samples), &cfg).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn fuse_copies_channels() {
        let s = FeatureTensor::new(FeatureKind::Sgram, Array3::zeros((1, 128, 313))).unwrap();
        let t = FeatureTensor::new(FeatureKind::Tgram, Array3::ones((1, 128, 313))).unwrap();
        let st = fuse_stgram(&s, &t).unwrap();
        assert_eq!(st.shape(), (2, 128, 313));
        assert_eq!(st.data.index_axis(Axis(0), 0).sum(), 0.0);
        assert_eq!(st.data.index_axis(Axis(0), 1).sum(), 40_064.0);
        let (s2, t2) = st.split_stgram().unwrap();
        assert_eq!(s2, s);
        assert_eq!(t2, t);
    }

    #[test]
    fn fuse_rejects_mismatched_shapes_naming_both() {
        let s = FeatureTensor::new(FeatureKind::Sgram, Array3::zeros((1, 128, 313))).unwrap();
        let t = FeatureTensor::new(FeatureKind::Tgram, Array3::zeros((1, 64, 313))).unwrap();
        let msg = fuse_stgram(&s, &t).unwrap_err().to_string();
        assert!(msg.contains("(1, 128, 313)") && msg.contains("(1, 64, 313)"), "{msg}");
    }

    #[test]
    fn config_validation() {
        assert!(SpectralConfig::default().validate().is_ok());
        let bad = SpectralConfig {
            hop_length: 2048,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SpectralConfig {
            log_floor: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SpectralConfig {
            fmax: Some(9000.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
