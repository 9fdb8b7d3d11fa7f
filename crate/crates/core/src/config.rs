//! Project configuration: one TOML file drives every command.

use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::eval::SpeakerEmbedder;
use crate::model::GeneratorConfig;
use crate::ssl_frontend::ExtractorSpec;
use crate::tensorio::manifest::{RATE_MAX, RATE_MIN};
use crate::training::TrainingConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub target_corpus: PathBuf,
    pub external_corpus: PathBuf,
    pub workdir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            target_corpus: "corpus/target".into(),
            external_corpus: "corpus/external".into(),
            workdir: "work".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub split_ratio: f64,
    /// Speaking-rate factors added on top of the unaugmented copy.
    pub augment_rates: Vec<f64>,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            split_ratio: 0.9,
            augment_rates: vec![0.8, 0.9, 1.1, 1.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VocoderKind {
    #[default]
    GriffinLim,
    ExternalCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocoderConfig {
    pub kind: VocoderKind,
    /// Phase-recovery rounds for the built-in vocoder.
    pub iterations: usize,
    /// `{input_tensor}` and `{output_wav}` placeholders, whitespace-split.
    pub command_template: Option<String>,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        VocoderConfig {
            kind: VocoderKind::GriffinLim,
            iterations: crate::dsp::DEFAULT_ITERATIONS,
            command_template: None,
        }
    }
}

impl VocoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == VocoderKind::ExternalCommand {
            let t = self.command_template.as_deref().unwrap_or("");
            if !t.contains("{input_tensor}") || !t.contains("{output_wav}") {
                return Err(Error::Config(
                    "external vocoder needs {input_tensor} and {output_wav} in its template"
                        .into(),
                ));
            }
        }
        if self.kind == VocoderKind::GriffinLim && self.iterations == 0 {
            return Err(Error::Config("vocoder iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub embedder: SpeakerEmbedder,
    pub tsne_perplexity: f64,
    pub tsne_iterations: usize,
    /// Frames per window when summarizing content embeddings.
    pub probe_window: usize,
    /// Cap on utterances drawn per speaker for the visualization set.
    pub max_utterances_per_speaker: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            embedder: SpeakerEmbedder::default(),
            tsne_perplexity: 30.0,
            tsne_iterations: 1000,
            probe_window: 32,
            max_utterances_per_speaker: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub seed: u64,
    pub target_speaker: String,
    pub paths: PathsConfig,
    pub split: SplitSettings,
    pub extractor: ExtractorSpec,
    pub mel: MelConfig,
    pub generator: GeneratorConfig,
    pub training: TrainingConfig,
    pub vocoder: VocoderConfig,
    pub eval: EvalSettings,
}

impl ProjectConfig {
    /// Parse and fully validate; nothing runs on a half-checked config.
    pub fn load(path: &Path) -> Result<ProjectConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ProjectConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_speaker.is_empty() {
            return Err(Error::Config("target_speaker must be set".into()));
        }
        self.extractor.validate()?;
        self.generator.validate()?;
        self.training.validate()?;
        self.vocoder.validate()?;
        self.eval.embedder.validate()?;
        if !(0.0..=1.0).contains(&self.split.split_ratio) || self.split.split_ratio <= 0.0 {
            return Err(Error::Config(format!(
                "split_ratio {} outside (0, 1]",
                self.split.split_ratio
            )));
        }
        for &r in &self.split.augment_rates {
            if !(RATE_MIN..=RATE_MAX).contains(&r) {
                return Err(Error::Config(format!(
                    "augment rate {r} outside [{RATE_MIN}, {RATE_MAX}]"
                )));
            }
        }
        if self.extractor.dim != self.generator.input_dim {
            return Err(Error::Config(format!(
                "extractor dim {} != generator input_dim {}",
                self.extractor.dim, self.generator.input_dim
            )));
        }
        if self.mel.n_mels != self.generator.n_mels {
            return Err(Error::Config(format!(
                "mel n_mels {} != generator n_mels {}",
                self.mel.n_mels, self.generator.n_mels
            )));
        }
        // Mel frames per feature frame must hit the generator's upsampling
        // factor exactly, or training targets cannot align.
        let mel_rate = self.mel.sample_rate as f64 / self.mel.hop as f64;
        let ratio = mel_rate / self.extractor.frame_rate_hz;
        if (ratio - self.generator.upsample_factor as f64).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "mel rate {mel_rate} Hz over feature rate {} Hz gives {ratio}, \
                 but the generator upsamples by {}",
                self.extractor.frame_rate_hz, self.generator.upsample_factor
            )));
        }
        if self.eval.tsne_perplexity <= 1.0 {
            return Err(Error::Config("tsne_perplexity must exceed 1".into()));
        }
        if self.eval.probe_window == 0 {
            return Err(Error::Config("probe_window must be positive".into()));
        }
        Ok(())
    }

    /// Fixed artifact layout under the workdir.
    pub fn manifest_train_path(&self) -> PathBuf {
        self.paths.workdir.join("manifest_train.jsonl")
    }

    pub fn manifest_val_path(&self) -> PathBuf {
        self.paths.workdir.join("manifest_val.jsonl")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.paths.workdir.join("checkpoints")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        let cfg = ProjectConfig {
            target_speaker: "target".into(),
            ..ProjectConfig::default()
        };
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ProjectConfig>("target_speker = \"x\"\n");
        assert!(err.is_err());
        let nested = toml::from_str::<ProjectConfig>("[generator]\nhidden_dims = 7\n");
        assert!(nested.is_err());
    }

    #[test]
    fn mismatched_extractor_and_generator_dims_fail() {
        let mut cfg = ProjectConfig {
            target_speaker: "target".into(),
            ..ProjectConfig::default()
        };
        cfg.extractor.dim = 128;
        cfg.generator.input_dim = 256;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn frame_geometry_must_match_upsampling() {
        let mut cfg = ProjectConfig {
            target_speaker: "target".into(),
            ..ProjectConfig::default()
        };
        cfg.extractor.frame_rate_hz = 25.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ProjectConfig {
            target_speaker: "spk7".into(),
            ..ProjectConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: ProjectConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn load_reports_missing_file_as_io() {
        let err = ProjectConfig::load(Path::new("/nonexistent/advc.toml")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
