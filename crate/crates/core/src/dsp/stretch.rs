//! Pitch-preserving speaking-rate change via waveform-similarity overlap-add.

use crate::error::{Error, Result};
use crate::tensorio::manifest::{RATE_MIN, RATE_MAX};

const WINDOW: usize = 1024;
const SYNTH_HOP: usize = WINDOW / 2;
const SEARCH: isize = 200;

/// Stretch `signal` to roughly `len / rate` samples without changing pitch.
///
/// `rate > 1` speeds speech up, `rate < 1` slows it down. Rate 1.0 returns
/// the input unchanged.
pub fn time_stretch(signal: &[f64], rate: f64) -> Result<Vec<f64>> {
    if !(RATE_MIN..=RATE_MAX).contains(&rate) {
        return Err(Error::Config(format!(
            "rate {rate} outside [{RATE_MIN}, {RATE_MAX}]"
        )));
    }
    if rate == 1.0 || signal.len() <= WINDOW {
        return Ok(signal.to_vec());
    }

    let window = super::stft::hann(WINDOW);
    let out_len = (signal.len() as f64 / rate).round() as usize;
    let n_frames = out_len.div_ceil(SYNTH_HOP) + 1;
    let mut acc = vec![0.0f64; out_len + WINDOW];
    let mut wsum = vec![0.0f64; out_len + WINDOW];

    // Position of the previously copied analysis frame; the natural
    // continuation of frame m-1 is prev + SYNTH_HOP.
    let mut prev: isize = 0;
    for m in 0..n_frames {
        let target = (m as f64 * SYNTH_HOP as f64 * rate).round() as isize;
        let chosen = if m == 0 {
            0
        } else {
            let natural = prev + SYNTH_HOP as isize;
            let lo = (target - SEARCH).max(0);
            let hi = (target + SEARCH).min(signal.len() as isize - WINDOW as isize).max(lo);
            best_offset(signal, natural, lo, hi)
        };
        prev = chosen;
        let out_start = m * SYNTH_HOP;
        for k in 0..WINDOW {
            let src = chosen + k as isize;
            if src < 0 || src >= signal.len() as isize || out_start + k >= acc.len() {
                continue;
            }
            acc[out_start + k] += signal[src as usize] * window[k];
            wsum[out_start + k] += window[k];
        }
    }
    let mut out = vec![0.0f64; out_len];
    for i in 0..out_len {
        if wsum[i] > 1e-9 {
            out[i] = acc[i] / wsum[i];
        }
    }
    Ok(out)
}

/// Analysis offset in [lo, hi] whose frame best correlates with the natural
/// continuation frame at `natural`.
fn best_offset(signal: &[f64], natural: isize, lo: isize, hi: isize) -> isize {
    let len = signal.len() as isize;
    let score = |cand: isize| -> f64 {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        // Half-window cross-correlation is enough to lock the phase.
        for k in 0..(WINDOW / 2) as isize {
            let i = natural + k;
            let j = cand + k;
            if i < 0 || j < 0 || i >= len || j >= len {
                continue;
            }
            let a = signal[i as usize];
            let b = signal[j as usize];
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        if na <= 0.0 || nb <= 0.0 {
            0.0
        } else {
            dot / (na.sqrt() * nb.sqrt())
        }
    };
    let mut best = lo;
    let mut best_score = f64::NEG_INFINITY;
    let mut cand = lo;
    while cand <= hi {
        let s = score(cand);
        if s > best_score {
            best_score = s;
            best = cand;
        }
        cand += 1;
    }
    best
}
