//! WAV I/O. The whole pipeline runs on mono 16 kHz PCM16.

use crate::error::{Error, Result};
use std::path::Path;

pub const SAMPLE_RATE: u32 = 16_000;

/// Read a mono 16 kHz PCM16 WAV into [-1, 1] samples.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Input(format!("cannot open wav {}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Input(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Input(format!(
            "{}: expected {SAMPLE_RATE} Hz, found {} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Input(format!(
            "{}: expected PCM16 samples",
            path.display()
        )));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.into_samples::<i16>().collect();
    let samples =
        samples.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(samples.into_iter().map(|s| s as f64 / 32768.0).collect())
}

/// Write [-1, 1] samples as mono 16 kHz PCM16, clamping out-of-range values.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Input(format!("cannot create wav {}: {e}", path.display())))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(())
}
