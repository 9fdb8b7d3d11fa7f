//! Speaker embeddings for similarity scoring. A statistics fallback keeps
//! the metric self-contained; a real verification model plugs in over the
//! same subprocess contract as feature extraction.

use crate::dsp::{extract_mel, MelConfig};
use crate::error::{Error, Result};
use crate::tensorio::{self, wav};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::process::Command;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerEmbedderKind {
    ExternalCommand,
    /// Concatenated per-channel mean and std of the log-mel.
    #[default]
    FallbackStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeakerEmbedder {
    pub kind: SpeakerEmbedderKind,
    pub dim: usize,
    /// `{input_wav}` and `{output_tensor}` placeholders, whitespace-split.
    pub command_template: Option<String>,
}

impl Default for SpeakerEmbedder {
    fn default() -> Self {
        SpeakerEmbedder {
            kind: SpeakerEmbedderKind::FallbackStats,
            dim: 2 * MelConfig::default().n_mels,
            command_template: None,
        }
    }
}

impl SpeakerEmbedder {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedder dim must be positive".into()));
        }
        if self.kind == SpeakerEmbedderKind::ExternalCommand {
            let t = self.command_template.as_deref().unwrap_or("");
            if !t.contains("{input_wav}") || !t.contains("{output_tensor}") {
                return Err(Error::Config(
                    "external embedder needs {input_wav} and {output_tensor} in its template"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Embed a waveform. External failures are eval errors, never a silent
    /// fallback to the statistics embedder.
    pub fn embed(&self, samples: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        match self.kind {
            SpeakerEmbedderKind::FallbackStats => {
                let mel = extract_mel(samples, &MelConfig::default())?;
                let t = mel.n_frames() as f64;
                let mut out = Vec::with_capacity(2 * mel.n_mels());
                for ch in mel.frames.columns() {
                    out.push(ch.sum() / t);
                }
                for (c, ch) in mel.frames.columns().into_iter().enumerate() {
                    let mean = out[c];
                    let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / t;
                    out.push(var.sqrt());
                }
                Ok(out)
            }
            SpeakerEmbedderKind::ExternalCommand => {
                let dir = std::env::temp_dir();
                let tag = format!("advc-embed-{}-{}", std::process::id(), samples.len());
                let wav_path = dir.join(format!("{tag}.wav"));
                let out_path = dir.join(format!("{tag}.vctf"));
                wav::write_wav(&wav_path, samples)?;
                let result = self.run_external(&wav_path, &out_path);
                let _ = std::fs::remove_file(&wav_path);
                let _ = std::fs::remove_file(&out_path);
                result
            }
        }
    }

    fn run_external(&self, wav_path: &Path, out_path: &Path) -> Result<Vec<f64>> {
        let tokens: Vec<String> = self
            .command_template
            .as_deref()
            .unwrap()
            .split_whitespace()
            .map(|t| {
                t.replace("{input_wav}", &wav_path.to_string_lossy())
                    .replace("{output_tensor}", &out_path.to_string_lossy())
            })
            .collect();
        let output = Command::new(&tokens[0])
            .args(&tokens[1..])
            .output()
            .map_err(|e| Error::Eval(format!("spawning embedder {:?} failed: {e}", tokens[0])))?;
        if !output.status.success() {
            let mut stderr = String::from_utf8_lossy(&output.stderr).into_owned();
            stderr.truncate(500);
            return Err(Error::Eval(format!(
                "embedder exited with {}: {}",
                output.status,
                stderr.trim()
            )));
        }
        let m = tensorio::read_matrix(out_path)?;
        let flat: Vec<f64> = m.iter().cloned().collect();
        if flat.len() != self.dim {
            return Err(Error::Eval(format!(
                "embedder returned {} values, expected {}",
                flat.len(),
                self.dim
            )));
        }
        Ok(flat)
    }
}

/// Cosine of the angle between two vectors after unit normalization.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "cosine over lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Eval("zero-norm embedding cannot be normalized".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Speaker similarity between a converted waveform and a reference of the
/// target speaker.
pub fn cosine_similarity(
    embedder: &SpeakerEmbedder,
    converted: &[f64],
    target_reference: &[f64],
) -> Result<f64> {
    let ea = embedder.embed(converted)?;
    let eb = embedder.embed(target_reference)?;
    cosine(&ea, &eb)
}
