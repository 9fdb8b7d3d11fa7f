//! Pluggable feature extraction. Real self-supervised extractors run as
//! external subprocesses exchanging tensor files; a deterministic mock keeps
//! end-to-end runs self-contained.

use crate::dsp::{extract_mel, MelConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensorio::manifest::UtteranceRecord;
use crate::tensorio::{self, wav};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::Command;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// Run `command_template` as a subprocess per utterance.
    ExternalCommand,
    /// Features already exist at each record's `feature_path`.
    Precomputed,
    /// Mel pooled to the frame rate, then a fixed random projection.
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub dim: usize,
    pub frame_rate_hz: f64,
    /// Command line with `{input_wav}` and `{output_tensor}` placeholders,
    /// split on whitespace. Required for `external_command`.
    pub command_template: Option<String>,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec {
            kind: ExtractorKind::Mock,
            dim: 256,
            frame_rate_hz: 50.0,
            command_template: None,
        }
    }
}

impl ExtractorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("extractor dim must be positive".into()));
        }
        if !self.frame_rate_hz.is_finite() || self.frame_rate_hz <= 0.0 {
            return Err(Error::Config("extractor frame_rate_hz must be positive".into()));
        }
        if self.kind == ExtractorKind::ExternalCommand {
            let t = self.command_template.as_deref().unwrap_or("");
            if !t.contains("{input_wav}") || !t.contains("{output_tensor}") {
                return Err(Error::Config(
                    "external_command needs a command_template with {input_wav} and {output_tensor}"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Stable digest of the spec; part of the feature-cache key.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        format!("{:x}", h.finalize())
    }
}

/// Mock features from raw samples: log-mel, average-pooled down to the
/// requested frame rate, affinely squashed, then projected to `dim` by a
/// fixed seeded matrix. Linear in the mel, so speaker statistics survive.
pub fn mock_features(samples: &[f64], spec: &ExtractorSpec) -> Result<Array2<f64>> {
    let mel_cfg = MelConfig::default();
    let mel = extract_mel(samples, &mel_cfg)?;
    let mel_rate = 1.0 / mel.hop_s;
    let pool = (mel_rate / spec.frame_rate_hz).round().max(1.0) as usize;
    let pooled = pool_rows(&mel.frames, pool);
    let squashed = pooled.mapv(|x| (x + 6.0) / 3.0);
    let mut prng = rng::derive_rng(0, "mock-ssl-projection", &[spec.dim as u64]);
    let scale = 1.0 / (mel_cfg.n_mels as f64).sqrt();
    let proj = Array2::from_shape_fn((mel_cfg.n_mels, spec.dim), |_| {
        rng::normal(&mut prng) * scale
    });
    Ok(squashed.dot(&proj))
}

/// Mean over non-overlapping row groups of `pool`; a trailing partial group
/// is kept only when it is the sole group.
fn pool_rows(x: &Array2<f64>, pool: usize) -> Array2<f64> {
    if pool <= 1 {
        return x.clone();
    }
    let groups = (x.nrows() / pool).max(1);
    let mut out = Array2::zeros((groups, x.ncols()));
    for g in 0..groups {
        let lo = g * pool;
        let hi = ((g + 1) * pool).min(x.nrows());
        let slab = x.slice(ndarray::s![lo..hi, ..]);
        out.row_mut(g)
            .assign(&(&slab.sum_axis(ndarray::Axis(0)) / (hi - lo) as f64));
    }
    out
}

/// SHA-256 of a file's bytes, hex encoded. Cache keys throughout the
/// pipeline hash file contents, never mtimes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Serialize, Deserialize, PartialEq)]
struct CacheMeta {
    audio_sha256: String,
    spec_digest: String,
}

fn meta_path(feature_path: &Path) -> PathBuf {
    let mut s = feature_path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn cache_fresh(feature_path: &Path, meta: &CacheMeta) -> bool {
    if !feature_path.exists() {
        return false;
    }
    let Ok(bytes) = std::fs::read(meta_path(feature_path)) else {
        return false;
    };
    serde_json::from_slice::<CacheMeta>(&bytes)
        .map(|m| &m == meta)
        .unwrap_or(false)
}

/// Persist and read back, so callers always see the file representation
/// (tensor files are f32; the round trip is the canonical value).
fn store_cache(
    feature_path: &Path,
    features: &Array2<f64>,
    meta: &CacheMeta,
) -> Result<Array2<f64>> {
    if let Some(dir) = feature_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    tensorio::write_matrix(feature_path, features)?;
    let bytes = serde_json::to_vec_pretty(meta).expect("meta serializes");
    tensorio::write_atomic(&meta_path(feature_path), &bytes)?;
    tensorio::read_matrix(feature_path)
}

fn check_dim(features: &Array2<f64>, dim: usize, what: &str) -> Result<()> {
    if features.ncols() != dim {
        return Err(Error::Extraction(format!(
            "{what}: feature dim {} does not match extractor dim {dim}",
            features.ncols()
        )));
    }
    if features.nrows() == 0 {
        return Err(Error::Extraction(format!("{what}: empty feature sequence")));
    }
    Ok(())
}

fn run_external(spec: &ExtractorSpec, wav_path: &Path, out_path: &Path) -> Result<Array2<f64>> {
    let template = spec.command_template.as_deref().unwrap();
    let tokens: Vec<String> = template
        .split_whitespace()
        .map(|t| {
            t.replace("{input_wav}", &wav_path.to_string_lossy())
                .replace("{output_tensor}", &out_path.to_string_lossy())
        })
        .collect();
    let output = Command::new(&tokens[0])
        .args(&tokens[1..])
        .output()
        .map_err(|e| Error::Extraction(format!("spawning {:?} failed: {e}", tokens[0])))?;
    if !output.status.success() {
        let mut stderr = String::from_utf8_lossy(&output.stderr).into_owned();
        stderr.truncate(500);
        return Err(Error::Extraction(format!(
            "extractor exited with {}: {}",
            output.status,
            stderr.trim()
        )));
    }
    tensorio::read_matrix(out_path)
}

/// Cache check, compute on miss, store, and report whether the cache served.
fn cached_or(
    spec: &ExtractorSpec,
    record: &UtteranceRecord,
    compute: impl FnOnce() -> Result<Array2<f64>>,
) -> Result<(Array2<f64>, bool)> {
    let meta = CacheMeta {
        audio_sha256: file_sha256(&record.audio_path)?,
        spec_digest: spec.digest(),
    };
    if let Some(path) = &record.feature_path {
        if cache_fresh(path, &meta) {
            return Ok((tensorio::read_matrix(path)?, true));
        }
    }
    let features = compute()?;
    check_dim(&features, spec.dim, &record.id)?;
    let features = match &record.feature_path {
        Some(path) => store_cache(path, &features, &meta)?,
        None => features,
    };
    Ok((features, false))
}

/// Features for one utterance, honoring the per-record cache when the record
/// carries a `feature_path`. Pure given its file inputs; cache writes go
/// through atomic renames, so concurrent extraction over disjoint records is
/// safe.
pub fn extract(spec: &ExtractorSpec, record: &UtteranceRecord) -> Result<Array2<f64>> {
    extract_with_status(spec, record).map(|(f, _)| f)
}

/// `extract`, plus whether the result was served from disk without running
/// the extractor (a fresh cache entry, or the precomputed file itself).
pub fn extract_with_status(
    spec: &ExtractorSpec,
    record: &UtteranceRecord,
) -> Result<(Array2<f64>, bool)> {
    spec.validate()?;
    match spec.kind {
        ExtractorKind::Precomputed => {
            let path = record.feature_path.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "record {}: precomputed extractor needs feature_path",
                    record.id
                ))
            })?;
            let features = tensorio::read_matrix(path)?;
            check_dim(&features, spec.dim, &record.id)?;
            Ok((features, true))
        }
        ExtractorKind::Mock => cached_or(spec, record, || {
            let samples = wav::read_wav(&record.audio_path)?;
            mock_features(&samples, spec)
        }),
        ExtractorKind::ExternalCommand => cached_or(spec, record, || {
            let seq = TEMP_SEQ.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            let out_path = std::env::temp_dir().join(format!(
                "advc-extract-{}-{seq}.vctf",
                std::process::id()
            ));
            let result = run_external(spec, &record.audio_path, &out_path);
            let _ = std::fs::remove_file(&out_path);
            result
        }),
    }
}

static TEMP_SEQ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
