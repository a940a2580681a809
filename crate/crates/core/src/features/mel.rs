use ndarray::Array2;

use super::SpectralConfig;
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters, `M x B`, peak weight 1 (no area normalization).
#[derive(Debug, Clone, PartialEq)]
pub struct MelBank {
    pub weights: Array2<f64>,
    /// Center frequency of each filter, Hz.
    pub centers: Vec<f64>,
}

impl MelBank {
    pub fn mel_bins(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fft_bins(&self) -> usize {
        self.weights.ncols()
    }
}

pub fn build_mel_bank(cfg: &SpectralConfig) -> Result<MelBank> {
    cfg.validate()?;
    let bins = cfg.fft_bins();
    let m = cfg.mel_bins;
    let fmax = cfg.fmax_hz();
    if !(cfg.fmin < fmax) {
        return Err(Error::Config(format!(
            "fmin ({}) must be below fmax ({fmax})",
            cfg.fmin
        )));
    }
    let (mlo, mhi) = (hz_to_mel(cfg.fmin), hz_to_mel(fmax));
    let mut edges: Vec<f64> = (0..m + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (m + 1) as f64))
        .collect();
    // pin the outer edges so round-off cannot leak weight past the band
    edges[0] = cfg.fmin;
    edges[m + 1] = fmax;
    let bin_hz = cfg.sample_rate as f64 / cfg.window_size as f64;
    let mut weights = Array2::<f64>::zeros((m, bins));
    for row in 0..m {
        let (lo, center, hi) = (edges[row], edges[row + 1], edges[row + 2]);
        let mut any = false;
        for b in 0..bins {
            let f = b as f64 * bin_hz;
            let up = (f - lo) / (center - lo);
            let down = (hi - f) / (hi - center);
            let w = up.min(down).max(0.0);
            if w > 0.0 {
                any = true;
            }
            weights[[row, b]] = w;
        }
        // A triangle narrower than the bin spacing can miss every bin.
        if !any {
            let nearest = ((center / bin_hz).round() as usize).min(bins - 1);
            weights[[row, nearest]] = 1.0;
        }
    }
    Ok(MelBank {
        weights,
        centers: edges[1..=m].to_vec(),
    })
}
