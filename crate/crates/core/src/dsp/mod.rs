//! Signal processing: mel analysis, speaking-rate augmentation, prosody
//! trajectories, and the Griffin-Lim fallback synthesizer.

pub mod griffin_lim;
pub mod mel;
pub mod prosody;
pub mod stft;
pub mod stretch;

pub use griffin_lim::{griffin_lim, DEFAULT_ITERATIONS};
pub use mel::{extract_mel, mel_filterbank, MelConfig, MelSpectrogram};
pub use prosody::{extract_prosody, ProsodyTrack};
pub use stretch::time_stretch;

/// Test/fixture tone: sine at `freq` Hz for `secs` seconds, 16 kHz.
pub fn sine(freq: f64, secs: f64, amp: f64) -> Vec<f64> {
    let n = (secs * 16000.0).round() as usize;
    (0..n)
        .map(|i| amp * (std::f64::consts::TAU * freq * i as f64 / 16000.0).sin())
        .collect()
}

/// Test/fixture tone: band-limited-enough sawtooth (8 harmonics).
pub fn sawtooth(freq: f64, secs: f64, amp: f64) -> Vec<f64> {
    let n = (secs * 16000.0).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / 16000.0;
            let mut v = 0.0;
            for h in 1..=8 {
                v += (std::f64::consts::TAU * freq * h as f64 * t).sin() / h as f64;
            }
            amp * v * 2.0 / std::f64::consts::PI
        })
        .collect()
}

/// Harmonic signal with a slow amplitude/pitch envelope; stands in for speech
/// in loop tests and synthetic corpora.
pub fn speech_like(secs: f64, seed: u64) -> Vec<f64> {
    let n = (secs * 16000.0).round() as usize;
    let mut rng = crate::rng::derive_rng(seed, "speech-like", &[]);
    let base = 110.0 + 140.0 * rand::Rng::random::<f64>(&mut rng);
    let vibrato = 2.0 + 4.0 * rand::Rng::random::<f64>(&mut rng);
    let tremolo = 1.5 + 3.0 * rand::Rng::random::<f64>(&mut rng);
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / 16000.0;
            let f0 = base * (1.0 + 0.03 * (std::f64::consts::TAU * vibrato * t).sin());
            phase += std::f64::consts::TAU * f0 / 16000.0;
            let env = 0.4 * (1.0 + 0.6 * (std::f64::consts::TAU * tremolo * t).sin()) / 1.6;
            let mut v = 0.0;
            for h in 1..=6 {
                v += (phase * h as f64).sin() / (h as f64).powf(1.2);
            }
            env * v / 2.5
        })
        .collect()
}

/// Frequency of the strongest spectral peak, parabolic-refined. Test helper.
pub fn dominant_frequency(signal: &[f64]) -> f64 {
    use rustfft::num_complex::Complex64;
    let n = signal.len().next_power_of_two();
    let mut planner = rustfft::FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex64> = signal
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::default()))
        .take(n)
        .collect();
    fft.process(&mut buf);
    let half = n / 2;
    let mags: Vec<f64> = buf[..half].iter().map(|c| c.norm()).collect();
    let mut peak = 1;
    for (i, &m) in mags.iter().enumerate().skip(1) {
        if m > mags[peak] {
            peak = i;
        }
    }
    let mut delta = 0.0;
    if peak > 0 && peak + 1 < half {
        let (l, c, r) = (mags[peak - 1], mags[peak], mags[peak + 1]);
        let denom = l - 2.0 * c + r;
        if denom.abs() > 1e-12 {
            delta = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    (peak as f64 + delta) * 16000.0 / n as f64
}
