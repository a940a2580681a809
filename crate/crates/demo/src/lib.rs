//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations: the log-Mel heatmap of a synthetic machine hum, ROC/AUC/pAUC
//! for two Gaussian score populations, and the ArcFace target-logit curve.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use stgram_asd::classifier::arcface_target_logit;
use stgram_asd::features::{SpectralConfig, SpectralFrontEnd};
use stgram_asd::metrics::{auc, pauc, roc_curve};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// A row-major `rows x cols` map.
#[wasm_bindgen]
pub struct Heatmap {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

#[wasm_bindgen]
impl Heatmap {
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> Vec<f32> {
        self.data.clone()
    }
}

/// One second of a hum at `f0` with `harmonics` partials over light noise,
/// as a log-Mel map with `mel_bins` rows (16 kHz, 1024/512 window and hop).
pub fn hum_log_mel(f0: f64, harmonics: usize, mel_bins: usize) -> Result<Heatmap, String> {
    if !(f0 > 0.0 && f0 < 8000.0) {
        return Err(format!("fundamental must lie in (0, 8000) Hz, got {f0}"));
    }
    let sr = 16_000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let wave: Vec<f32> = (0..16_000)
        .map(|n| {
            let t = n as f64 / sr;
            let tone: f64 = (1..=harmonics.max(1))
                .filter(|&k| f0 * (k as f64) < sr / 2.0)
                .map(|k| (std::f64::consts::TAU * f0 * k as f64 * t).sin() / k as f64)
                .sum();
            (0.3 * tone + 0.02 * (uniform(&mut rng) * 2.0 - 1.0)) as f32
        })
        .collect();
    let cfg = SpectralConfig {
        window_size: 1024,
        hop_length: 512,
        mel_bins,
        ..Default::default()
    };
    let front = SpectralFrontEnd::new(cfg).map_err(|e| e.to_string())?;
    let f = front.log_mel(&wave).map_err(|e| e.to_string())?;
    let (_, rows, cols) = f.shape();
    Ok(Heatmap {
        rows,
        cols,
        data: f.data.iter().copied().collect(),
    })
}

#[wasm_bindgen(js_name = humLogMel)]
pub fn hum_log_mel_js(f0: f64, harmonics: usize, mel_bins: usize) -> Result<Heatmap, JsError> {
    hum_log_mel(f0, harmonics, mel_bins).map_err(js_err)
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Standard normal draw by Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = uniform(rng).max(f64::MIN_POSITIVE);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// ROC of normal scores `N(0, 1)` against anomaly scores `N(separation, 1)`.
#[wasm_bindgen]
pub struct RocDemo {
    fpr: Vec<f64>,
    tpr: Vec<f64>,
    auc: f64,
    pauc: f64,
}

#[wasm_bindgen]
impl RocDemo {
    pub fn fpr(&self) -> Vec<f64> {
        self.fpr.clone()
    }

    pub fn tpr(&self) -> Vec<f64> {
        self.tpr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn auc(&self) -> f64 {
        self.auc
    }

    #[wasm_bindgen(getter)]
    pub fn pauc(&self) -> f64 {
        self.pauc
    }
}

pub fn roc_demo(separation: f64, normals: usize, anomalies: usize, p: f64, seed: u64) -> Result<RocDemo, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: Vec<f64> = (0..normals).map(|_| gaussian(&mut rng)).collect();
    let a: Vec<f64> = (0..anomalies).map(|_| separation + gaussian(&mut rng)).collect();
    let roc = roc_curve(&n, &a).map_err(|e| e.to_string())?;
    Ok(RocDemo {
        fpr: roc.iter().map(|q| q.0).collect(),
        tpr: roc.iter().map(|q| q.1).collect(),
        auc: auc(&n, &a).map_err(|e| e.to_string())?,
        pauc: pauc(&n, &a, p).map_err(|e| e.to_string())?,
    })
}

#[wasm_bindgen(js_name = rocDemo)]
pub fn roc_demo_js(separation: f64, normals: usize, anomalies: usize, p: f64, seed: u64) -> Result<RocDemo, JsError> {
    roc_demo(separation, normals, anomalies, p, seed).map_err(js_err)
}

/// Target logit against the angle `theta` in `[0, pi]`, sampled at `points`
/// angles: `[theta_0, logit_0, theta_1, logit_1, ...]`.
#[wasm_bindgen(js_name = arcfaceCurve)]
pub fn arcface_curve(margin: f64, scale: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .flat_map(|i| {
            let theta = std::f64::consts::PI * i as f64 / (n - 1) as f64;
            [theta, arcface_target_logit(theta.cos(), margin, scale)]
        })
        .collect()
}
