//! Synthetic machine sounds in the standard dataset layout, for desk-scale runs.
//!
//! Each virtual machine hums at its own fundamental with a type-specific
//! harmonic tilt over coloured noise. Anomalous clips detune the fundamental
//! and reshape the harmonic profile.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::write_wav_i16;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub machine_types: Vec<String>,
    pub ids_per_type: usize,
    pub train_per_id: usize,
    pub test_normal_per_id: usize,
    pub test_anomaly_per_id: usize,
    pub sample_rate: u32,
    pub clip_length: usize,
    /// Relative detuning range of anomalous clips, `[low, high]`.
    pub anomaly_detune: [f64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            machine_types: vec!["toyfan".into(), "toypump".into()],
            ids_per_type: 2,
            train_per_id: 50,
            test_normal_per_id: 20,
            test_anomaly_per_id: 20,
            sample_rate: 16_000,
            clip_length: 16_000,
            anomaly_detune: [0.08, 0.16],
            seed: 2024,
        }
    }
}

/// Acoustic signature of one virtual machine.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineVoice {
    pub machine_type: String,
    pub machine_id: String,
    pub f0: f64,
    /// Amplitude of harmonic `k` is `k^-tilt`.
    pub tilt: f64,
    /// One-pole low-pass coefficient of the background noise.
    pub noise_pole: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.machine_types.is_empty() || self.ids_per_type == 0 || self.train_per_id == 0 {
            return Err(Error::Config("synthetic dataset needs types, IDs and training clips".into()));
        }
        if self.clip_length == 0 || self.sample_rate == 0 {
            return Err(Error::Config("synthetic clips need a positive length and rate".into()));
        }
        let [lo, hi] = self.anomaly_detune;
        if !(0.0 < lo && lo <= hi && hi < 0.5) {
            return Err(Error::Config(format!("anomaly_detune must satisfy 0 < low <= high < 0.5, got {lo}, {hi}")));
        }
        Ok(())
    }

    /// Voices for every (type, id), with fundamentals spread geometrically
    /// so that no two machines share a harmonic series.
    pub fn voices(&self) -> Vec<MachineVoice> {
        let n = self.machine_types.len() * self.ids_per_type;
        let mut out = Vec::with_capacity(n);
        for (t, name) in self.machine_types.iter().enumerate() {
            for i in 0..self.ids_per_type {
                let slot = t * self.ids_per_type + i;
                out.push(MachineVoice {
                    machine_type: name.clone(),
                    machine_id: format!("{:02}", 2 * i),
                    f0: 160.0 * 1.45f64.powi(slot as i32),
                    tilt: 0.6 + 0.9 * t as f64,
                    noise_pole: 0.55 + 0.35 * (t % 2) as f64,
                });
            }
        }
        out
    }
}

/// Renders one clip. `anomaly` carries the detuning factor and the tilt change.
fn render(voice: &MachineVoice, cfg: &SynthConfig, anomaly: Option<(f64, f64)>, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sr = cfg.sample_rate as f64;
    let nyquist = sr / 2.0;
    let (detune, tilt_delta) = anomaly.unwrap_or((1.0, 0.0));
    let f0 = voice.f0 * detune * (1.0 + rng.gen_range(-0.01..0.01));
    let tilt = voice.tilt + tilt_delta;
    let gain = rng.gen_range(0.8..1.2);
    let am_rate = rng.gen_range(1.0..4.0);
    let am_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let harmonics: Vec<(f64, f64, f64)> = (1..=8)
        .map(|k| (f0 * k as f64, (k as f64).powf(-tilt), rng.gen_range(0.0..std::f64::consts::TAU)))
        .filter(|(f, _, _)| *f < nyquist * 0.95)
        .collect();
    let norm: f64 = harmonics.iter().map(|h| h.1).sum();
    let mut noise = 0.0;
    (0..cfg.clip_length)
        .map(|n| {
            let t = n as f64 / sr;
            let tone: f64 = harmonics
                .iter()
                .map(|(f, a, p)| a * (std::f64::consts::TAU * f * t + p).sin())
                .sum::<f64>()
                / norm;
            let am = 1.0 + 0.1 * (std::f64::consts::TAU * am_rate * t + am_phase).sin();
            noise = voice.noise_pole * noise + (1.0 - voice.noise_pole) * rng.gen_range(-1.0..1.0);
            (0.5 * gain * am * tone + 0.1 * noise) as f32
        })
        .collect()
}

/// A generated clip and where it belongs.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub relative_path: PathBuf,
    pub samples: Vec<f32>,
}

/// Generates every clip in memory, in a fixed order determined by the seed.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<SynthClip>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for voice in cfg.voices() {
        let dir = PathBuf::from(&voice.machine_type);
        for k in 0..cfg.train_per_id {
            out.push(SynthClip {
                relative_path: dir.join("train").join(format!("normal_id_{}_{k:08}.wav", voice.machine_id)),
                samples: render(&voice, cfg, None, &mut rng),
            });
        }
        for k in 0..cfg.test_normal_per_id {
            out.push(SynthClip {
                relative_path: dir.join("test").join(format!("normal_id_{}_{k:08}.wav", voice.machine_id)),
                samples: render(&voice, cfg, None, &mut rng),
            });
        }
        let [lo, hi] = cfg.anomaly_detune;
        for k in 0..cfg.test_anomaly_per_id {
            let amount = rng.gen_range(lo..=hi);
            let detune = if k % 2 == 0 { 1.0 + amount } else { 1.0 - amount };
            let tilt_delta = if rng.gen_bool(0.5) { 0.8 } else { -0.5 };
            out.push(SynthClip {
                relative_path: dir.join("test").join(format!("anomaly_id_{}_{k:08}.wav", voice.machine_id)),
                samples: render(&voice, cfg, Some((detune, tilt_delta)), &mut rng),
            });
        }
    }
    Ok(out)
}

/// Writes the synthetic dataset under `root` as 16-bit WAV files and
/// returns the number of files written.
pub fn generate_dataset(root: impl AsRef<Path>, cfg: &SynthConfig) -> Result<usize> {
    let root = root.as_ref();
    let clips = synthesize(cfg)?;
    for clip in &clips {
        write_wav_i16(root.join(&clip.relative_path), &clip.samples, cfg.sample_rate)?;
    }
    Ok(clips.len())
}
