//! Mel-cepstral distortion between parallel waveforms.

use crate::dsp::{extract_mel, MelConfig};
use crate::error::{Error, Result};
use ndarray::Array2;

/// Cepstral order used for distortion; the 0th (energy) coefficient is
/// excluded on top of these.
pub const MCD_COEFFS: usize = 13;

/// Scale factor (10 / ln 10) * sqrt(2) applied to the cepstral distance.
pub fn mcd_scale() -> f64 {
    10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2
}

/// Orthonormal DCT-II cepstra of a log-mel matrix, coefficients 1..=n_coeffs
/// (c0 dropped). Input frames along rows.
pub fn mel_cepstra(log_mel: &Array2<f64>, n_coeffs: usize) -> Array2<f64> {
    let (t, k) = log_mel.dim();
    let scale = (2.0 / k as f64).sqrt();
    let mut out = Array2::zeros((t, n_coeffs));
    for f in 0..t {
        for d in 1..=n_coeffs {
            let mut acc = 0.0;
            for (i, &x) in log_mel.row(f).iter().enumerate() {
                acc += x * (std::f64::consts::PI * d as f64 * (i as f64 + 0.5) / k as f64).cos();
            }
            out[[f, d - 1]] = scale * acc;
        }
    }
    out
}

fn frame_dist(a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize) -> f64 {
    let mut acc = 0.0;
    for d in 0..a.ncols() {
        let diff = a[[i, d]] - b[[j, d]];
        acc += diff * diff;
    }
    acc.sqrt()
}

/// Monotonic alignment minimizing total Euclidean frame cost; returns the
/// index pairs of the optimal path, start to end.
pub fn dtw_path(a: &Array2<f64>, b: &Array2<f64>) -> Vec<(usize, usize)> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut cost = Array2::from_elem((n, m), f64::INFINITY);
    for i in 0..n {
        for j in 0..m {
            let d = frame_dist(a, b, i, j);
            let best_prev = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cost[[0, j - 1]],
                (_, 0) => cost[[i - 1, 0]],
                _ => cost[[i - 1, j - 1]]
                    .min(cost[[i - 1, j]])
                    .min(cost[[i, j - 1]]),
            };
            cost[[i, j]] = d + best_prev;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let (pi, pj) = match (i, j) {
            (0, _) => (0, j - 1),
            (_, 0) => (i - 1, 0),
            _ => {
                let diag = cost[[i - 1, j - 1]];
                let up = cost[[i - 1, j]];
                let left = cost[[i, j - 1]];
                if diag <= up && diag <= left {
                    (i - 1, j - 1)
                } else if up <= left {
                    (i - 1, j)
                } else {
                    (i, j - 1)
                }
            }
        };
        path.push((pi, pj));
        i = pi;
        j = pj;
    }
    path.reverse();
    path
}

/// Distortion in dB between two cepstral sequences: mean over the DTW path
/// of (10/ln10) * sqrt(2 * sum_d (c_d - c'_d)^2).
pub fn mcd_from_cepstra(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "cepstral orders differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Input("empty cepstral sequence".into()));
    }
    let path = dtw_path(a, b);
    let total: f64 = path
        .iter()
        .map(|&(i, j)| frame_dist(a, b, i, j))
        .sum();
    Ok(mcd_scale() * total / path.len() as f64)
}

/// Mel-cepstral distortion between two waveforms at the same sample rate.
pub fn mcd(converted: &[f64], reference: &[f64], cfg: &MelConfig) -> Result<f64> {
    for (name, w) in [("converted", converted), ("reference", reference)] {
        if w.len() < cfg.fft_size {
            return Err(Error::Input(format!(
                "{name} waveform shorter than one analysis frame ({} < {})",
                w.len(),
                cfg.fft_size
            )));
        }
    }
    let ca = mel_cepstra(&extract_mel(converted, cfg)?.frames, MCD_COEFFS);
    let cb = mel_cepstra(&extract_mel(reference, cfg)?.frames, MCD_COEFFS);
    mcd_from_cepstra(&ca, &cb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp;

    #[test]
    fn identical_waveforms_score_zero() {
        let x = dsp::speech_like(0.6, 3);
        let cfg = MelConfig::default();
        assert_eq!(mcd(&x, &x, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn single_coefficient_offset_hits_the_closed_form() {
        // a[i] differs from b[i] by exactly 1.0 in one coefficient; ramp in
        // the first coefficient forces the identity alignment.
        let n = 20;
        let mut a = Array2::zeros((n, MCD_COEFFS));
        let mut b = Array2::zeros((n, MCD_COEFFS));
        for i in 0..n {
            a[[i, 0]] = i as f64 * 5.0;
            b[[i, 0]] = i as f64 * 5.0;
            b[[i, 1]] = 1.0;
        }
        let got = mcd_from_cepstra(&a, &b).unwrap();
        let want = 10.0 / std::f64::consts::LN_10 * (2.0f64).sqrt();
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
        assert!((want - 6.142).abs() < 1e-3);
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let x = dsp::speech_like(0.5, 7);
        let y = dsp::speech_like(0.5, 8);
        let cfg = MelConfig::default();
        let xy = mcd(&x, &y, &cfg).unwrap();
        let yx = mcd(&y, &x, &cfg).unwrap();
        assert!(xy > 0.0);
        assert!((xy - yx).abs() < 1e-9, "{xy} vs {yx}");
    }

    #[test]
    fn dtw_handles_time_offset() {
        // The same content shifted in time should align nearly free while a
        // naive frame-by-frame comparison would not.
        let x = dsp::speech_like(0.8, 5);
        let shifted: Vec<f64> = x[1600..].to_vec();
        let cfg = MelConfig::default();
        let aligned = mcd(&x, &shifted, &cfg).unwrap();
        let different = mcd(&x, &dsp::speech_like(0.8, 6), &cfg).unwrap();
        assert!(
            aligned < different,
            "shifted copy {aligned} vs different content {different}"
        );
    }

    #[test]
    fn short_input_is_an_input_error() {
        let cfg = MelConfig::default();
        let short = vec![0.1; cfg.fft_size - 1];
        let ok = dsp::sine(200.0, 0.2, 0.3);
        assert!(matches!(
            mcd(&short, &ok, &cfg),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn dtw_path_is_monotonic_and_complete() {
        let a = Array2::from_shape_fn((7, 3), |(i, j)| (i * 3 + j) as f64);
        let b = Array2::from_shape_fn((5, 3), |(i, j)| (i * 2 + j) as f64 * 1.1);
        let path = dtw_path(&a, &b);
        assert_eq!(path[0], (0, 0));
        assert_eq!(*path.last().unwrap(), (6, 4));
        for w in path.windows(2) {
            let di = w[1].0 as i64 - w[0].0 as i64;
            let dj = w[1].1 as i64 - w[0].1 as i64;
            assert!((0..=1).contains(&di) && (0..=1).contains(&dj));
            assert!(di + dj >= 1);
        }
    }
}
