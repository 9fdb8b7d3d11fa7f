//! Utterance manifests over the target-speaker corpus and the external
//! unannotated corpus. Manifests are JSON lines, one `UtteranceRecord` each.

use crate::error::{Error, Result};
use crate::rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

pub const RATE_MIN: f64 = 0.8;
pub const RATE_MAX: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusTag {
    Target,
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    pub audio_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mel_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prosody_path: Option<PathBuf>,
    pub corpus_tag: CorpusTag,
    pub rate: f64,
}

impl UtteranceRecord {
    /// Stem of the source utterance, without the rate suffix.
    pub fn source_stem(&self) -> &str {
        match self.id.split_once("@r") {
            Some((stem, _)) => stem,
            None => &self.id,
        }
    }

    pub fn validate(&self, target_speaker: &str) -> Result<()> {
        if !(RATE_MIN..=RATE_MAX).contains(&self.rate) {
            return Err(Error::Config(format!(
                "record {}: rate {} outside [{RATE_MIN}, {RATE_MAX}]",
                self.id, self.rate
            )));
        }
        if self.corpus_tag == CorpusTag::Target && self.speaker != target_speaker {
            return Err(Error::Config(format!(
                "record {}: target-corpus speaker {:?} differs from configured target {:?}",
                self.id, self.speaker, target_speaker
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub train: Vec<UtteranceRecord>,
    pub val: Vec<UtteranceRecord>,
}

#[derive(Debug, Clone)]
pub struct SplitConfig {
    pub split_ratio: f64,
    pub seed: u64,
    pub target_speaker: String,
    /// Speaking-rate factors added on top of the unaugmented copy.
    pub augment_rates: Vec<f64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            split_ratio: 0.9,
            seed: 0,
            target_speaker: "target".into(),
            augment_rates: vec![0.8, 0.9, 1.1, 1.2],
        }
    }
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut wavs = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("wav") {
            wavs.push(path);
        }
    }
    wavs.sort();
    Ok(wavs)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn rate_suffix(rate: f64) -> String {
    format!("@r{rate:.2}")
}

/// Scan corpora and build a seeded train/validation manifest.
///
/// The split is made over unaugmented target utterances (sorted by id, then
/// shuffled with the seed); augmented copies follow their source utterance's
/// side. External records never enter the validation set.
pub fn build_manifest(
    target_dir: &Path,
    external_dir: &Path,
    cfg: &SplitConfig,
) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&cfg.split_ratio) || cfg.split_ratio <= 0.0 {
        return Err(Error::Config(format!(
            "split_ratio {} outside (0, 1]",
            cfg.split_ratio
        )));
    }
    for &r in &cfg.augment_rates {
        if !(RATE_MIN..=RATE_MAX).contains(&r) {
            return Err(Error::Config(format!(
                "augmentation rate {r} outside [{RATE_MIN}, {RATE_MAX}]"
            )));
        }
    }
    if !target_dir.is_dir() {
        return Err(Error::Config(format!(
            "target corpus directory not found: {}",
            target_dir.display()
        )));
    }
    if !external_dir.is_dir() {
        return Err(Error::Config(format!(
            "external corpus directory not found: {}",
            external_dir.display()
        )));
    }

    let target_wavs = list_wavs(target_dir)?;
    if target_wavs.is_empty() {
        return Err(Error::Config(format!(
            "target corpus is empty: {}",
            target_dir.display()
        )));
    }

    // External corpus: per-speaker subdirectories, or flat files under a single
    // pseudo-speaker named "external".
    let mut external: Vec<(String, PathBuf)> = Vec::new();
    let mut subdirs: Vec<PathBuf> = fs::read_dir(external_dir)
        .map_err(|e| Error::io(external_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in &subdirs {
        let speaker = stem(sub);
        for wav in list_wavs(sub)? {
            external.push((speaker.clone(), wav));
        }
    }
    for wav in list_wavs(external_dir)? {
        external.push(("external".into(), wav));
    }

    // Seeded split over source utterances.
    let n = target_wavs.len();
    let n_train = ((cfg.split_ratio * n as f64).round() as usize).min(n);
    if n_train == 0 {
        return Err(Error::Config(format!(
            "split_ratio {} leaves no training utterances for {n} target records",
            cfg.split_ratio
        )));
    }
    if n_train == n {
        eprintln!("warning: split_ratio {} leaves the validation set empty", cfg.split_ratio);
    }
    let mut order = rng::permutation(&mut rng::derive_rng(cfg.seed, "manifest-split", &[]), n);
    let train_src: std::collections::BTreeSet<usize> = order.drain(..n_train).collect();

    let mut rates = vec![1.0];
    rates.extend(cfg.augment_rates.iter().copied().filter(|&r| r != 1.0));

    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, wav) in target_wavs.iter().enumerate() {
        let base = stem(wav);
        for &rate in &rates {
            let id = if rate == 1.0 {
                base.clone()
            } else {
                format!("{base}{}", rate_suffix(rate))
            };
            let rec = UtteranceRecord {
                id,
                speaker: cfg.target_speaker.clone(),
                audio_path: wav.clone(),
                feature_path: None,
                mel_path: None,
                prosody_path: None,
                corpus_tag: CorpusTag::Target,
                rate,
            };
            if train_src.contains(&i) {
                train.push(rec);
            } else {
                val.push(rec);
            }
        }
    }
    for (speaker, wav) in &external {
        train.push(UtteranceRecord {
            id: format!("ext_{}_{}", speaker, stem(wav)),
            speaker: speaker.clone(),
            audio_path: wav.clone(),
            feature_path: None,
            mel_path: None,
            prosody_path: None,
            corpus_tag: CorpusTag::External,
            rate: 1.0,
        });
    }
    Ok(Manifest { train, val })
}

pub fn save_manifest(path: &Path, records: &[UtteranceRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec)
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        buf.write_all(b"\n").expect("vec write");
    }
    crate::tensorio::write_atomic(path, &buf)
}

pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        records.push(rec);
    }
    Ok(records)
}
