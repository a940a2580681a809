use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use super::{SpectralConfig, WindowKind};
use crate::error::{Error, Result};

/// Frame count for centered framing: `floor(len / hop) + 1`.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len / hop + 1
}

pub fn window(kind: WindowKind, size: usize) -> Vec<f64> {
    match kind {
        // periodic Hann
        WindowKind::Hann => (0..size)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / size as f64).cos())
            .collect(),
        WindowKind::Rectangular => vec![1.0; size],
    }
}

/// Mirror an index into `0..len` without repeating the edge sample.
fn reflect(mut i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Squared-magnitude STFT, `B x N` with `B = W/2 + 1` and `N = floor(L/H) + 1`.
///
/// Frames are centered: the signal is reflection-padded by `W/2` on both sides.
pub fn power_spectrogram(samples: &[f32], cfg: &SpectralConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot take the spectrogram of an empty clip".into()));
    }
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
    }
    let w = cfg.window_size;
    let h = cfg.hop_length;
    let half = (w / 2) as isize;
    let bins = cfg.fft_bins();
    let frames = frame_count(samples.len(), h);
    let win = window(cfg.window, w);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(w);
    let mut buf = vec![Complex::new(0.0, 0.0); w];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Array2::<f64>::zeros((bins, frames));
    for n in 0..frames {
        let start = (n * h) as isize - half;
        for (k, slot) in buf.iter_mut().enumerate() {
            let idx = reflect(start + k as isize, samples.len());
            *slot = Complex::new(samples[idx] as f64 * win[k], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for b in 0..bins {
            out[[b, n]] = buf[b].norm_sqr();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_matches_numpy_reflect_mode() {
        // numpy.pad([0,1,2,3], 3, mode="reflect") -> [3,2,1,0,1,2,3,2,1,0]
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn frame_count_depends_on_length_and_hop_only() {
        assert_eq!(frame_count(160_000, 512), 313);
        assert_eq!(frame_count(512, 512), 2);
        assert_eq!(frame_count(1, 512), 1);
    }

    #[test]
    fn short_clip_still_frames() {
        let cfg = SpectralConfig::default();
        let p = power_spectrogram(&[0.5, -0.5, 0.25], &cfg).unwrap();
        assert_eq!(p.dim(), (513, 1));
    }

    #[test]
    fn non_finite_samples_error() {
        let cfg = SpectralConfig::default();
        assert!(power_spectrogram(&[0.0, f32::NAN], &cfg).is_err());
    }
}
