//! Center-padded STFT / inverse STFT used by mel analysis and Griffin-Lim.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Stft {
    pub fft_size: usize,
    pub hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Mirror index into [0, len), reflecting without repeating the edge sample.
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

impl Stft {
    pub fn new(fft_size: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Stft {
            fft_size,
            hop,
            window: hann(fft_size),
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames produced for a signal of the given length.
    pub fn frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    /// Complex spectrogram [frames x bins]; frame t is centered at t*hop.
    pub fn forward(&self, signal: &[f64]) -> Array2<Complex64> {
        let half = (self.fft_size / 2) as isize;
        let n_frames = self.frames(signal.len());
        let mut spec = Array2::zeros((n_frames, self.bins()));
        let mut buf = vec![Complex64::default(); self.fft_size];
        for t in 0..n_frames {
            let center = (t * self.hop) as isize;
            for (k, slot) in buf.iter_mut().enumerate() {
                let idx = reflect(center - half + k as isize, signal.len());
                *slot = Complex64::new(signal[idx] * self.window[k], 0.0);
            }
            self.forward.process(&mut buf);
            for b in 0..self.bins() {
                spec[[t, b]] = buf[b];
            }
        }
        spec
    }

    /// Inverse STFT via windowed overlap-add, normalized by the running
    /// window-square sum; exact reconstruction wherever that sum is positive.
    pub fn inverse(&self, spec: &Array2<Complex64>, out_len: usize) -> Vec<f64> {
        let n_frames = spec.nrows();
        let half = self.fft_size / 2;
        let full = (n_frames - 1) * self.hop + self.fft_size;
        let mut acc = vec![0.0f64; full];
        let mut wsum = vec![0.0f64; full];
        let mut buf = vec![Complex64::default(); self.fft_size];
        let scale = 1.0 / self.fft_size as f64;
        for t in 0..n_frames {
            buf[0] = spec[[t, 0]];
            for b in 1..self.bins() {
                buf[b] = spec[[t, b]];
                if b != self.fft_size - b {
                    buf[self.fft_size - b] = spec[[t, b]].conj();
                }
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for k in 0..self.fft_size {
                let w = self.window[k];
                acc[start + k] += buf[k].re * scale * w;
                wsum[start + k] += w * w;
            }
        }
        // Drop the center padding and trim/pad to the requested length.
        let mut out = vec![0.0f64; out_len];
        for (i, slot) in out.iter_mut().enumerate() {
            let j = i + half;
            if j < full && wsum[j] > 1e-9 {
                *slot = acc[j] / wsum[j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_formula() {
        let stft = Stft::new(1024, 160);
        assert_eq!(stft.frames(16000), 101);
        assert_eq!(stft.frames(1), 1);
    }

    #[test]
    fn analysis_synthesis_is_near_identity() {
        let stft = Stft::new(1024, 160);
        let signal: Vec<f64> = (0..8000)
            .map(|i| {
                0.5 * (std::f64::consts::TAU * 220.0 * i as f64 / 16000.0).sin()
                    + 0.2 * (std::f64::consts::TAU * 710.0 * i as f64 / 16000.0).sin()
            })
            .collect();
        let spec = stft.forward(&signal);
        let back = stft.inverse(&spec, signal.len());
        // Interior samples reconstruct; edges are affected by reflection padding.
        let err: f64 = signal[1024..7000 - 1024]
            .iter()
            .zip(&back[1024..7000 - 1024])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "max reconstruction error {err}");
    }

    #[test]
    fn reflect_handles_edges() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(0, 1), 0);
        assert_eq!(reflect(-3, 1), 0);
    }
}
