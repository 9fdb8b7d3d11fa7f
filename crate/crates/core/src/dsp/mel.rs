//! Log-mel spectrogram extraction.
//!
//! Analysis settings: 16 kHz input, FFT 1024, periodic Hann window 1024,
//! hop 160 (10 ms), 80 triangular HTK-mel filters spanning 0-8000 Hz applied
//! to the amplitude spectrum, natural log with floor 1e-5. The 10 ms hop
//! makes mel frames run at exactly twice the 50 Hz SSL feature rate, which
//! the generator's x2 transposed-convolution upsampler relies on.

use super::stft::Stft;
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16_000,
            fft_size: 1024,
            hop: 160,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

/// Natural-log amplitude mel spectrogram, frames along the rows.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub hop_s: f64,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank [n_mels x bins], peak weight 1.
pub fn mel_filterbank(cfg: &MelConfig) -> Array2<f64> {
    let bins = cfg.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let centers: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64)
        .collect();
    let mut fb = Array2::zeros((cfg.n_mels, bins));
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
        for b in 0..bins {
            let mel = hz_to_mel(b as f64 * bin_hz);
            let w = if mel <= lo || mel >= hi {
                0.0
            } else if mel <= mid {
                (mel - lo) / (mid - lo)
            } else {
                (hi - mel) / (hi - mid)
            };
            fb[[m, b]] = w;
        }
    }
    fb
}

/// Extract the log-mel spectrogram of a 16 kHz waveform.
pub fn extract_mel(waveform: &[f64], cfg: &MelConfig) -> Result<MelSpectrogram> {
    if waveform.is_empty() {
        return Err(Error::Input("empty waveform".into()));
    }
    if waveform.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("waveform contains non-finite samples".into()));
    }
    let stft = Stft::new(cfg.fft_size, cfg.hop);
    let spec = stft.forward(waveform);
    let fb = mel_filterbank(cfg);
    let n_frames = spec.nrows();
    let mut frames = Array2::zeros((n_frames, cfg.n_mels));
    for t in 0..n_frames {
        for m in 0..cfg.n_mels {
            let mut acc = 0.0;
            for b in 0..spec.ncols() {
                let w = fb[[m, b]];
                if w != 0.0 {
                    acc += w * spec[[t, b]].norm();
                }
            }
            frames[[t, m]] = acc.max(cfg.log_floor).ln();
        }
    }
    Ok(MelSpectrogram {
        frames,
        hop_s: cfg.hop_seconds(),
    })
}
