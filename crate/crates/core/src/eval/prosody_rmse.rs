//! Prosody preservation: RMSE between min-max-normalized F0 and energy
//! trajectories of source and converted speech.

use crate::dsp::ProsodyTrack;
use crate::error::{Error, Result};

/// Map to [0, 1] by min-max; a constant sequence maps to all zeros, the
/// degenerate case the caller may want to flag.
fn min_max(values: &[f64]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

fn rmse(diffs: impl Iterator<Item = f64>) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for d in diffs {
        acc += d * d;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (acc / n as f64).sqrt()
    }
}

/// (f0_rmse, energy_rmse), both in [0, 1]. Tracks are truncated to the
/// shorter length; each F0 sequence is normalized over its own voiced frames
/// and compared only where both tracks are voiced; energy is normalized and
/// compared over all shared frames.
pub fn prosody_rmse(source: &ProsodyTrack, converted: &ProsodyTrack) -> Result<(f64, f64)> {
    if source.is_empty() || converted.is_empty() {
        return Err(Error::Input("empty prosody track".into()));
    }
    let n = source.len().min(converted.len());

    let norm_f0 = |t: &ProsodyTrack| -> Vec<f64> {
        let voiced_vals: Vec<f64> = (0..n).filter(|&i| t.voiced[i]).map(|i| t.f0_hz[i]).collect();
        if voiced_vals.is_empty() {
            return vec![0.0; n];
        }
        let normed = min_max(&voiced_vals);
        let mut out = vec![0.0; n];
        let mut k = 0;
        for (i, slot) in out.iter_mut().enumerate() {
            if t.voiced[i] {
                *slot = normed[k];
                k += 1;
            }
        }
        out
    };
    let fa = norm_f0(source);
    let fb = norm_f0(converted);
    let f0_rmse = rmse(
        (0..n)
            .filter(|&i| source.voiced[i] && converted.voiced[i])
            .map(|i| fa[i] - fb[i]),
    );

    let ea = min_max(&source.energy[..n]);
    let eb = min_max(&converted.energy[..n]);
    let energy_rmse = rmse((0..n).map(|i| ea[i] - eb[i]));
    Ok((f0_rmse, energy_rmse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track(f0: Vec<f64>, energy: Vec<f64>) -> ProsodyTrack {
        let voiced = f0.iter().map(|&f| f > 0.0).collect();
        ProsodyTrack {
            f0_hz: f0,
            energy,
            voiced,
        }
    }

    #[test]
    fn identical_tracks_are_zero() {
        let t = track(vec![100.0, 120.0, 0.0, 140.0], vec![0.5, 0.6, 0.1, 0.7]);
        let (f0, en) = prosody_rmse(&t, &t).unwrap();
        assert_eq!((f0, en), (0.0, 0.0));
    }

    #[test]
    fn offset_f0_normalizes_away() {
        let a = track(vec![100.0, 200.0], vec![1.0, 2.0]);
        let b = track(vec![150.0, 250.0], vec![1.0, 2.0]);
        let (f0, _) = prosody_rmse(&a, &b).unwrap();
        assert_eq!(f0, 0.0);
    }

    #[test]
    fn doubled_energy_normalizes_away() {
        let a = track(vec![100.0, 150.0, 120.0], vec![0.2, 0.9, 0.4]);
        let b = track(vec![100.0, 150.0, 120.0], vec![0.4, 1.8, 0.8]);
        let (_, en) = prosody_rmse(&a, &b).unwrap();
        assert!(en < 1e-12, "{en}");
    }

    #[test]
    fn unequal_lengths_truncate() {
        let a = track(vec![100.0, 200.0, 300.0], vec![1.0, 2.0, 3.0]);
        let b = track(vec![100.0, 200.0], vec![1.0, 2.0]);
        let (f0, en) = prosody_rmse(&a, &b).unwrap();
        assert_eq!((f0, en), (0.0, 0.0));
    }

    #[test]
    fn constant_sequences_degenerate_to_zero() {
        let a = track(vec![100.0; 4], vec![0.5; 4]);
        let b = track(vec![100.0; 4], vec![0.5; 4]);
        let (f0, en) = prosody_rmse(&a, &b).unwrap();
        assert_eq!((f0, en), (0.0, 0.0));
    }

    #[test]
    fn voicing_mismatch_frames_are_excluded_from_f0() {
        // Converted frame 1 is unvoiced; only frames 0 and 2 count, and they
        // normalize identically.
        let a = track(vec![100.0, 180.0, 200.0], vec![1.0; 3]);
        let b = track(vec![120.0, 0.0, 240.0], vec![1.0; 3]);
        let (f0, _) = prosody_rmse(&a, &b).unwrap();
        assert_eq!(f0, 0.0);
    }

    #[test]
    fn bounded_by_one() {
        // Maximally opposed normalized sequences.
        let a = track(vec![100.0, 300.0], vec![0.0, 1.0]);
        let b = track(vec![300.0, 100.0], vec![1.0, 0.0]);
        let (f0, en) = prosody_rmse(&a, &b).unwrap();
        assert!(f0 <= 1.0 && en <= 1.0);
        assert_eq!((f0, en), (1.0, 1.0));
    }

    proptest! {
        #[test]
        fn affine_rescaling_is_invisible(
            f0 in proptest::collection::vec(80.0f64..400.0, 4..24),
            scale in 0.5f64..5.0,
            offset in 0.0f64..50.0,
        ) {
            let energy: Vec<f64> = f0.iter().map(|v| v / 100.0).collect();
            let a = track(f0.clone(), energy.clone());
            let scaled = track(
                f0.iter().map(|v| v * scale + offset).collect(),
                energy.iter().map(|v| v * scale).collect(),
            );
            let base = prosody_rmse(&a, &a).unwrap();
            let vs_scaled = prosody_rmse(&a, &scaled).unwrap();
            prop_assert!((vs_scaled.0 - base.0).abs() < 1e-9);
            prop_assert!((vs_scaled.1 - base.1).abs() < 1e-9);
        }
    }
}
