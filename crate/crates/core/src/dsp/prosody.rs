//! F0 and frame-energy trajectories aligned to the mel frame grid.

use super::mel::MelConfig;
use super::stft::hann;
use crate::error::{Error, Result};
use ndarray::Array2;

/// F0 search range in Hz.
const F0_MIN: f64 = 50.0;
const F0_MAX: f64 = 600.0;
/// Autocorrelation analysis window, 25 ms at 16 kHz.
const ACF_WINDOW: usize = 400;
/// Normalized-autocorrelation voicing threshold.
const VOICING_THRESHOLD: f64 = 0.45;
/// RMS floor below which a frame is unvoiced regardless of periodicity.
const ENERGY_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ProsodyTrack {
    /// Per-frame F0 in Hz, 0 where unvoiced.
    pub f0_hz: Vec<f64>,
    /// Per-frame RMS energy.
    pub energy: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl ProsodyTrack {
    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    /// Rank-2 layout [frames x 3]: f0, energy, voiced flag.
    pub fn to_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), 3));
        for i in 0..self.len() {
            m[[i, 0]] = self.f0_hz[i];
            m[[i, 1]] = self.energy[i];
            m[[i, 2]] = if self.voiced[i] { 1.0 } else { 0.0 };
        }
        m
    }

    pub fn from_matrix(m: &Array2<f64>) -> Result<Self> {
        if m.ncols() != 3 {
            return Err(Error::Shape(format!(
                "prosody matrix needs 3 columns, found {}",
                m.ncols()
            )));
        }
        Ok(ProsodyTrack {
            f0_hz: m.column(0).to_vec(),
            energy: m.column(1).to_vec(),
            voiced: m.column(2).iter().map(|&v| v > 0.5).collect(),
        })
    }
}

fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let mut j = i.rem_euclid(period);
    if j >= len {
        j = period - j;
    }
    j as usize
}

/// Extract F0 (autocorrelation method) and RMS energy at every mel frame
/// center. Output length equals the mel frame count for the same waveform.
pub fn extract_prosody(waveform: &[f64], cfg: &MelConfig) -> Result<ProsodyTrack> {
    if waveform.is_empty() {
        return Err(Error::Input("empty waveform".into()));
    }
    let sr = cfg.sample_rate as f64;
    let lag_min = (sr / F0_MAX).floor() as usize;
    let lag_max = (sr / F0_MIN).ceil() as usize;
    let n_frames = waveform.len() / cfg.hop + 1;
    let half = (ACF_WINDOW / 2) as isize;
    let window = hann(ACF_WINDOW);

    let mut f0 = vec![0.0; n_frames];
    let mut energy = vec![0.0; n_frames];
    let mut voiced = vec![false; n_frames];
    let mut frame = vec![0.0f64; ACF_WINDOW];

    for t in 0..n_frames {
        let center = (t * cfg.hop) as isize;
        for (k, slot) in frame.iter_mut().enumerate() {
            *slot = waveform[reflect(center - half + k as isize, waveform.len())];
        }
        let rms = (frame.iter().map(|v| v * v).sum::<f64>() / ACF_WINDOW as f64).sqrt();
        energy[t] = rms;
        if rms < ENERGY_FLOOR {
            continue;
        }

        // Windowed, mean-removed autocorrelation.
        let mean = frame.iter().sum::<f64>() / ACF_WINDOW as f64;
        let tapered: Vec<f64> = frame
            .iter()
            .zip(&window)
            .map(|(v, w)| (v - mean) * w)
            .collect();
        let r0: f64 = tapered.iter().map(|v| v * v).sum();
        if r0 <= 0.0 {
            continue;
        }
        let acf = |lag: usize| -> f64 {
            let mut acc = 0.0;
            for i in 0..ACF_WINDOW - lag {
                acc += tapered[i] * tapered[i + lag];
            }
            acc / r0
        };
        let mut best_lag = 0usize;
        let mut best = f64::NEG_INFINITY;
        for lag in lag_min..=lag_max.min(ACF_WINDOW - 1) {
            let v = acf(lag);
            if v > best {
                best = v;
                best_lag = lag;
            }
        }
        if best < VOICING_THRESHOLD || best_lag == 0 {
            continue;
        }
        // Prefer a sub-multiple lag of comparable strength: guards against
        // picking the second or third period of strongly periodic signals.
        for div in [4usize, 3, 2] {
            let cand = best_lag / div;
            if cand < lag_min {
                continue;
            }
            let (refined, strength) = refine_peak(&acf, cand, lag_min, lag_max);
            if strength >= 0.9 * best {
                best_lag = refined;
                break;
            }
        }
        // Parabolic interpolation around the integer peak.
        let lag = best_lag as f64 + parabolic_offset(&acf, best_lag, lag_min, lag_max);
        f0[t] = sr / lag;
        voiced[t] = true;
    }
    Ok(ProsodyTrack {
        f0_hz: f0,
        energy,
        voiced,
    })
}

fn refine_peak(
    acf: &dyn Fn(usize) -> f64,
    around: usize,
    lag_min: usize,
    lag_max: usize,
) -> (usize, f64) {
    let lo = around.saturating_sub(3).max(lag_min);
    let hi = (around + 3).min(lag_max);
    let mut best = lo;
    let mut best_v = f64::NEG_INFINITY;
    for lag in lo..=hi {
        let v = acf(lag);
        if v > best_v {
            best_v = v;
            best = lag;
        }
    }
    (best, best_v)
}

fn parabolic_offset(
    acf: &dyn Fn(usize) -> f64,
    lag: usize,
    lag_min: usize,
    lag_max: usize,
) -> f64 {
    if lag <= lag_min || lag >= lag_max {
        return 0.0;
    }
    let (l, c, r) = (acf(lag - 1), acf(lag), acf(lag + 1));
    let denom = l - 2.0 * c + r;
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}
