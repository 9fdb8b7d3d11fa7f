//! Batch pipeline behind the CLI: prepare corpora, convert waveforms,
//! evaluate converted/reference pairs, and visualize content embeddings.

use crate::config::{ProjectConfig, VocoderKind};
use crate::dsp::{
    extract_mel, extract_prosody, griffin_lim, time_stretch, MelSpectrogram, ProsodyTrack,
};
use crate::error::{Error, Result};
use crate::eval::{
    self, collect_points, probe_accuracy, silhouette, summarize_windows, EvalReport, TsneConfig,
};
use crate::model::Generator;
use crate::nn::Module;
use crate::ssl_frontend::{self, file_sha256};
use crate::tensorio::manifest::{
    build_manifest, load_manifest, save_manifest, CorpusTag, SplitConfig, UtteranceRecord,
};
use crate::tensorio::{self, wav};
use crate::training::{load_checkpoint, CheckpointData, ModelBundleConfig};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

/// Natural-log mels of speech sit around [-11, 2]; this squash centers them
/// near zero so they work as regression targets. Inverted before synthesis.
pub fn normalize_mel(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|x| (x + 6.0) / 3.0)
}

pub fn denormalize_mel(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|x| x * 3.0 - 6.0)
}

struct Layout {
    audio: PathBuf,
    features: PathBuf,
    mels: PathBuf,
    prosody: PathBuf,
}

impl Layout {
    fn create(workdir: &Path) -> Result<Layout> {
        let layout = Layout {
            audio: workdir.join("audio"),
            features: workdir.join("features"),
            mels: workdir.join("mels"),
            prosody: workdir.join("prosody"),
        };
        for dir in [&layout.audio, &layout.features, &layout.mels, &layout.prosody] {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(layout)
    }
}

#[derive(Debug, Serialize)]
pub struct PrepareSummary {
    pub n_train: usize,
    pub n_val: usize,
    pub features_extracted: usize,
    pub features_cached: usize,
    pub audio_stretched: usize,
    pub manifest_train: PathBuf,
    pub manifest_val: PathBuf,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct StretchMeta {
    source_sha256: String,
    rate: f64,
}

fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Materialize the rate-changed copy of an augmented record and point the
/// record at it. Returns whether the audio was synthesized on this call.
fn stretch_record(rec: &mut UtteranceRecord, audio_dir: &Path) -> Result<bool> {
    let out = audio_dir.join(format!("{}.wav", rec.id));
    let meta = StretchMeta {
        source_sha256: file_sha256(&rec.audio_path)?,
        rate: rec.rate,
    };
    let fresh = out.exists()
        && std::fs::read(sidecar_path(&out))
            .ok()
            .and_then(|b| serde_json::from_slice::<StretchMeta>(&b).ok())
            .map(|m| m == meta)
            .unwrap_or(false);
    if !fresh {
        let samples = wav::read_wav(&rec.audio_path)?;
        let stretched = time_stretch(&samples, rec.rate)?;
        wav::write_wav(&out, &stretched)?;
        let bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        tensorio::write_atomic(&sidecar_path(&out), &bytes)?;
    }
    rec.audio_path = out;
    Ok(!fresh)
}

struct PrepareCounts {
    extracted: usize,
    cached: usize,
    stretched: usize,
}

fn prepare_record(
    cfg: &ProjectConfig,
    layout: &Layout,
    rec: &mut UtteranceRecord,
    counts: &mut PrepareCounts,
) -> Result<()> {
    if rec.rate != 1.0 && stretch_record(rec, &layout.audio)? {
        counts.stretched += 1;
    }
    rec.feature_path = Some(layout.features.join(format!("{}.vctf", rec.id)));
    let (_, cache_hit) = ssl_frontend::extract_with_status(&cfg.extractor, rec)?;
    if cache_hit {
        counts.cached += 1;
    } else {
        counts.extracted += 1;
    }
    if rec.corpus_tag == CorpusTag::Target {
        let mel_path = layout.mels.join(format!("{}.vctf", rec.id));
        let prosody_path = layout.prosody.join(format!("{}.vctf", rec.id));
        // Fresh features mean the audio changed, so mels and prosody are
        // stale even if their files exist.
        if !cache_hit || !mel_path.exists() || !prosody_path.exists() {
            let samples = wav::read_wav(&rec.audio_path)?;
            let mel = extract_mel(&samples, &cfg.mel)?;
            tensorio::write_matrix(&mel_path, &normalize_mel(&mel.frames))?;
            let prosody = extract_prosody(&samples, &cfg.mel)?;
            tensorio::write_matrix(&prosody_path, &prosody.to_matrix())?;
        }
        rec.mel_path = Some(mel_path);
        rec.prosody_path = Some(prosody_path);
    }
    Ok(())
}

/// Scan the corpora, build the seeded split, and materialize every training
/// artifact (stretched audio, features, mels, prosody) under the workdir.
/// Idempotent: unchanged inputs are served from content-hashed caches. All
/// per-utterance failures are collected and reported in one error.
pub fn prepare(cfg: &ProjectConfig) -> Result<PrepareSummary> {
    cfg.validate()?;
    let split = SplitConfig {
        split_ratio: cfg.split.split_ratio,
        seed: cfg.seed,
        target_speaker: cfg.target_speaker.clone(),
        augment_rates: cfg.split.augment_rates.clone(),
    };
    let mut m = build_manifest(&cfg.paths.target_corpus, &cfg.paths.external_corpus, &split)?;
    let layout = Layout::create(&cfg.paths.workdir)?;

    let mut counts = PrepareCounts {
        extracted: 0,
        cached: 0,
        stretched: 0,
    };
    let mut failures = Vec::new();
    for rec in m.train.iter_mut().chain(m.val.iter_mut()) {
        if let Err(e) = prepare_record(cfg, &layout, rec, &mut counts) {
            failures.push(format!("{}: {e}", rec.id));
        }
    }
    if !failures.is_empty() {
        return Err(Error::Input(format!(
            "{} utterances failed to prepare:\n  {}",
            failures.len(),
            failures.join("\n  ")
        )));
    }

    let manifest_train = cfg.manifest_train_path();
    let manifest_val = cfg.manifest_val_path();
    save_manifest(&manifest_train, &m.train)?;
    save_manifest(&manifest_val, &m.val)?;
    Ok(PrepareSummary {
        n_train: m.train.len(),
        n_val: m.val.len(),
        features_extracted: counts.extracted,
        features_cached: counts.cached,
        audio_stretched: counts.stretched,
        manifest_train,
        manifest_val,
    })
}

/// Run training over the prepared manifests.
pub fn train(
    cfg: &ProjectConfig,
    resume: Option<&Path>,
) -> Result<crate::training::TrainOutcome> {
    cfg.validate()?;
    let train_records = load_manifest(&cfg.manifest_train_path())?;
    let val_records = load_manifest(&cfg.manifest_val_path())?;
    for rec in train_records.iter().chain(&val_records) {
        rec.validate(&cfg.target_speaker)?;
    }
    let bundle = ModelBundleConfig::for_generator(cfg.generator.clone());
    crate::training::train(
        &train_records,
        &val_records,
        bundle,
        &cfg.training,
        &cfg.checkpoints_dir(),
        resume,
    )
}

/// Rebuild just the generator from a checkpoint blob.
pub fn load_generator(blob: &Path) -> Result<(Generator, ModelBundleConfig, u64)> {
    let data: CheckpointData<ModelBundleConfig> = load_checkpoint(blob)?;
    let mut generator = Generator::new(data.config.generator.clone(), 0)?;
    for p in generator.params_mut() {
        let t = data.tensors.get(&p.name).ok_or_else(|| {
            Error::Format(format!("checkpoint missing tensor {}", p.name))
        })?;
        if t.dim() != p.value.dim() {
            return Err(Error::Format(format!(
                "checkpoint tensor {} has shape {:?}, model wants {:?}",
                p.name,
                t.dim(),
                p.value.dim()
            )));
        }
        p.value = t.clone();
    }
    Ok((generator, data.config, data.step))
}

fn run_external_vocoder(template: &str, log_mel: &Array2<f64>, out_wav: &Path) -> Result<Vec<f64>> {
    let tensor = std::env::temp_dir().join(format!(
        "advc-vocoder-{}-{}.vctf",
        std::process::id(),
        out_wav.file_stem().and_then(|s| s.to_str()).unwrap_or("x")
    ));
    tensorio::write_matrix(&tensor, log_mel)?;
    let tokens: Vec<String> = template
        .split_whitespace()
        .map(|t| {
            t.replace("{input_tensor}", &tensor.to_string_lossy())
                .replace("{output_wav}", &out_wav.to_string_lossy())
        })
        .collect();
    let output = Command::new(&tokens[0])
        .args(&tokens[1..])
        .output()
        .map_err(|e| Error::Extraction(format!("spawning {:?} failed: {e}", tokens[0])));
    let _ = std::fs::remove_file(&tensor);
    let output = output?;
    if !output.status.success() {
        let mut stderr = String::from_utf8_lossy(&output.stderr).into_owned();
        stderr.truncate(500);
        return Err(Error::Extraction(format!(
            "vocoder exited with {}: {}",
            output.status,
            stderr.trim()
        )));
    }
    wav::read_wav(out_wav)
}

/// Log-mel `[T x n_mels]` to waveform via the configured vocoder.
fn synthesize(cfg: &ProjectConfig, log_mel: &Array2<f64>, out_wav: &Path) -> Result<Vec<f64>> {
    match cfg.vocoder.kind {
        VocoderKind::GriffinLim => {
            let spec = MelSpectrogram {
                frames: log_mel.clone(),
                hop_s: cfg.mel.hop as f64 / cfg.mel.sample_rate as f64,
            };
            griffin_lim(&spec, &cfg.mel, cfg.vocoder.iterations)
        }
        VocoderKind::ExternalCommand => {
            let template = cfg.vocoder.command_template.as_deref().unwrap();
            run_external_vocoder(template, log_mel, out_wav)
        }
    }
}

fn conversion_record(input: &Path) -> UtteranceRecord {
    UtteranceRecord {
        id: input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "input".into()),
        speaker: "source".into(),
        audio_path: input.to_path_buf(),
        feature_path: None,
        mel_path: None,
        prosody_path: None,
        corpus_tag: CorpusTag::External,
        rate: 1.0,
    }
}

#[derive(Debug, Serialize)]
pub struct ConvertSummary {
    pub outputs: Vec<PathBuf>,
    pub checkpoint_step: u64,
}

/// A loaded model ready to convert waveforms. The CLI and the C ABI both
/// run conversions through this handle.
pub struct Converter {
    cfg: ProjectConfig,
    generator: Generator,
    pub checkpoint_step: u64,
}

impl Converter {
    pub fn open(cfg: ProjectConfig, checkpoint: &Path) -> Result<Converter> {
        cfg.validate()?;
        let (generator, bundle, step) = load_generator(checkpoint)?;
        if bundle.generator.input_dim != cfg.extractor.dim {
            return Err(Error::Config(format!(
                "checkpoint expects {}-dim features but the extractor provides {}",
                bundle.generator.input_dim, cfg.extractor.dim
            )));
        }
        if bundle.generator.n_mels != cfg.mel.n_mels {
            return Err(Error::Config(format!(
                "checkpoint emits {} mel bins but the vocoder config has {}",
                bundle.generator.n_mels, cfg.mel.n_mels
            )));
        }
        Ok(Converter {
            cfg,
            generator,
            checkpoint_step: step,
        })
    }

    /// Convert one wav from any source speaker into the target voice.
    pub fn convert_file(&self, input: &Path, output: &Path) -> Result<()> {
        let rec = conversion_record(input);
        let features = ssl_frontend::extract(&self.cfg.extractor, &rec)?;
        let (mel_norm, _) = self.generator.forward(&features)?;
        let log_mel = denormalize_mel(&mel_norm);
        let samples = synthesize(&self.cfg, &log_mel, output)?;
        wav::write_wav(output, &samples)
    }
}

/// Convert waveforms from any source speaker into the target voice. One
/// output per input, named by the input's stem. An empty input list is a
/// successful no-op.
pub fn convert(
    cfg: &ProjectConfig,
    checkpoint: &Path,
    inputs: &[PathBuf],
    out_dir: &Path,
) -> Result<ConvertSummary> {
    let converter = Converter::open(cfg.clone(), checkpoint)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut outputs = Vec::with_capacity(inputs.len());
    for input in inputs {
        let out = out_dir.join(format!("{}.wav", conversion_record(input).id));
        converter.convert_file(input, &out)?;
        outputs.push(out);
    }
    Ok(ConvertSummary {
        outputs,
        checkpoint_step: converter.checkpoint_step,
    })
}

/// Per-pair metrics kept alongside the aggregate report.
#[derive(Debug, Serialize)]
pub struct PairMetrics {
    pub stem: String,
    pub mcd_db: f64,
    pub cos_sim: f64,
    pub f0_rmse: f64,
    pub energy_rmse: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub pairs: Vec<PairMetrics>,
}

fn wav_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("wav") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Score converted wavs against targets. Pairing is by file stem across the
/// directories: spectral and speaker metrics against `reference_dir` (target
/// renditions), prosody against `source_dir` (the inputs that were
/// converted; defaults to the reference).
pub fn evaluate(
    cfg: &ProjectConfig,
    converted_dir: &Path,
    reference_dir: &Path,
    source_dir: Option<&Path>,
) -> Result<EvalOutput> {
    cfg.validate()?;
    let converted = wav_stems(converted_dir)?;
    let reference = wav_stems(reference_dir)?;
    let source = match source_dir {
        Some(dir) => wav_stems(dir)?,
        None => reference.clone(),
    };
    let mut pairs = Vec::new();
    let mut tuples = Vec::new();
    for (stem, conv_path) in &converted {
        let (Some(ref_path), Some(src_path)) = (reference.get(stem), source.get(stem)) else {
            continue;
        };
        let conv = wav::read_wav(conv_path)?;
        let refr = wav::read_wav(ref_path)?;
        let src = wav::read_wav(src_path)?;
        let mcd_db = eval::mcd(&conv, &refr, &cfg.mel)?;
        let cos_sim = eval::cosine_similarity(&cfg.eval.embedder, &conv, &refr)?;
        let src_track = extract_prosody(&src, &cfg.mel)?;
        let conv_track = extract_prosody(&conv, &cfg.mel)?;
        let (f0_rmse, energy_rmse) = eval::prosody_rmse(&src_track, &conv_track)?;
        tuples.push((mcd_db, cos_sim, f0_rmse, energy_rmse));
        pairs.push(PairMetrics {
            stem: stem.clone(),
            mcd_db,
            cos_sim,
            f0_rmse,
            energy_rmse,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Param(format!(
            "no converted/reference pairs matched by stem between {} and {}",
            converted_dir.display(),
            reference_dir.display()
        )));
    }
    let report = EvalReport::from_pairs(&tuples)?;
    Ok(EvalOutput { report, pairs })
}

#[derive(Debug, Serialize)]
pub struct PanelSummary {
    pub label: String,
    pub checkpoint_step: u64,
    pub n_points: usize,
    pub n_speakers: usize,
    pub probe_accuracy: f64,
    pub silhouette: f64,
    pub plot: PathBuf,
    pub points_file: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct VisualizeSummary {
    pub panels: Vec<PanelSummary>,
    pub composite: Option<PathBuf>,
}

/// Utterances for the speaker-leakage probe: unaugmented records across all
/// speakers, capped per speaker, drawn from the prepared training manifest.
fn probe_records(cfg: &ProjectConfig) -> Result<Vec<UtteranceRecord>> {
    let all = load_manifest(&cfg.manifest_train_path())?;
    let mut per_speaker: BTreeMap<String, usize> = BTreeMap::new();
    let mut picked = Vec::new();
    for rec in all {
        if rec.rate != 1.0 {
            continue;
        }
        let n = per_speaker.entry(rec.speaker.clone()).or_insert(0);
        if *n < cfg.eval.max_utterances_per_speaker {
            *n += 1;
            picked.push(rec);
        }
    }
    if per_speaker.len() < 2 {
        return Err(Error::Param(format!(
            "speaker-leakage probe needs utterances from at least 2 speakers, found {}",
            per_speaker.len()
        )));
    }
    Ok(picked)
}

fn panel(
    cfg: &ProjectConfig,
    records: &[UtteranceRecord],
    label: &str,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<PanelSummary> {
    let (generator, _, step) = load_generator(checkpoint)?;
    let mut groups: Vec<(String, Array2<f64>)> = Vec::new();
    for rec in records {
        let features = ssl_frontend::extract(&cfg.extractor, rec)?;
        let embedding = generator.encode(&features)?;
        groups.push((
            rec.speaker.clone(),
            summarize_windows(&embedding, cfg.eval.probe_window),
        ));
    }
    let data = collect_points(&groups)?;
    let tsne_cfg = TsneConfig {
        perplexity: cfg.eval.tsne_perplexity,
        iterations: cfg.eval.tsne_iterations,
        seed: cfg.seed,
        ..TsneConfig::default()
    };
    let points2d = eval::tsne(&data.points, &tsne_cfg)?;
    let plot = out_dir.join(format!("tsne_{label}.png"));
    eval::scatter_png(&plot, &points2d, &data.labels)?;
    let points_file = out_dir.join(format!("tsne_{label}.vctf"));
    tensorio::write_matrix(&points_file, &points2d)?;
    Ok(PanelSummary {
        label: label.to_string(),
        checkpoint_step: step,
        n_points: data.points.nrows(),
        n_speakers: data.names.len(),
        probe_accuracy: probe_accuracy(&data, cfg.seed)?,
        silhouette: silhouette(&points2d, &data.labels)?,
        plot,
        points_file,
    })
}

/// Project per-speaker content embeddings to 2-D and quantify speaker
/// leakage for each labeled checkpoint; two panels also get a side-by-side
/// composite image.
pub fn visualize(
    cfg: &ProjectConfig,
    checkpoints: &[(String, PathBuf)],
    out_dir: &Path,
) -> Result<VisualizeSummary> {
    cfg.validate()?;
    if checkpoints.is_empty() {
        return Err(Error::Param("no checkpoints to visualize".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = probe_records(cfg)?;
    let mut panels = Vec::new();
    for (label, ckpt) in checkpoints {
        panels.push(panel(cfg, &records, label, ckpt, out_dir)?);
    }
    let composite = if panels.len() == 2 {
        let out = out_dir.join("tsne_comparison.png");
        eval::compose_two_panel(&panels[0].plot, &panels[1].plot, &out)?;
        Some(out)
    } else {
        None
    };
    Ok(VisualizeSummary { panels, composite })
}

/// Prosody track for a wav file, using the project's mel geometry.
pub fn prosody_of_wav(cfg: &ProjectConfig, path: &Path) -> Result<ProsodyTrack> {
    let samples = wav::read_wav(path)?;
    extract_prosody(&samples, &cfg.mel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp;
    use crate::model::GeneratorConfig;
    use crate::training::{TrainState, TrainingConfig};

    fn tiny_project(root: &Path) -> ProjectConfig {
        let mut cfg = ProjectConfig::default();
        cfg.seed = 5;
        cfg.target_speaker = "target".into();
        cfg.paths.target_corpus = root.join("corpus/target");
        cfg.paths.external_corpus = root.join("corpus/external");
        cfg.paths.workdir = root.join("work");
        cfg.split.augment_rates = vec![1.2];
        cfg.extractor.dim = 24;
        cfg.generator = GeneratorConfig {
            input_dim: 24,
            hidden_dim: 16,
            encoder_blocks: 1,
            decoder_blocks: 1,
            attention_heads: 2,
            conv_kernel: 3,
            upsample_factor: 2,
            n_mels: 80,
            dropout: 0.0,
        };
        cfg.eval.tsne_perplexity = 3.0;
        cfg.eval.probe_window = 8;
        cfg
    }

    fn seed_corpus(cfg: &ProjectConfig, n_target: usize, externals: &[(&str, usize)]) {
        std::fs::create_dir_all(&cfg.paths.target_corpus).unwrap();
        for i in 0..n_target {
            let samples = dsp::speech_like(0.5, 100 + i as u64);
            wav::write_wav(
                &cfg.paths.target_corpus.join(format!("t{i:02}.wav")),
                &samples,
            )
            .unwrap();
        }
        for (spk, n) in externals {
            let sub = cfg.paths.external_corpus.join(spk);
            std::fs::create_dir_all(&sub).unwrap();
            for i in 0..*n {
                let samples = dsp::speech_like(0.5, 500 + i as u64);
                wav::write_wav(&sub.join(format!("{spk}{i:02}.wav")), &samples).unwrap();
            }
        }
    }

    #[test]
    fn prepare_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_project(dir.path());
        seed_corpus(&cfg, 3, &[("a", 2)]);
        let first = prepare(&cfg).unwrap();
        assert_eq!(first.n_train + first.n_val, 3 * 2 + 2);
        assert_eq!(first.features_cached, 0);
        assert_eq!(first.features_extracted, 3 * 2 + 2);
        assert_eq!(first.audio_stretched, 3);

        let second = prepare(&cfg).unwrap();
        assert_eq!(second.features_extracted, 0, "second run must extract nothing");
        assert_eq!(second.features_cached, 3 * 2 + 2);
        assert_eq!(second.audio_stretched, 0);
    }

    #[test]
    fn prepare_fills_every_artifact_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_project(dir.path());
        seed_corpus(&cfg, 2, &[("a", 1)]);
        let s = prepare(&cfg).unwrap();
        let train = load_manifest(&s.manifest_train).unwrap();
        let val = load_manifest(&s.manifest_val).unwrap();
        for rec in train.iter().chain(&val) {
            let f = rec.feature_path.as_ref().unwrap();
            assert!(f.exists(), "{}: {}", rec.id, f.display());
            if rec.corpus_tag == CorpusTag::Target {
                assert!(rec.mel_path.as_ref().unwrap().exists());
                assert!(rec.prosody_path.as_ref().unwrap().exists());
                let mel = tensorio::read_matrix(rec.mel_path.as_ref().unwrap()).unwrap();
                assert_eq!(mel.ncols(), cfg.mel.n_mels);
            } else {
                assert!(rec.mel_path.is_none());
            }
        }
    }

    #[test]
    fn prepare_lists_every_unreadable_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_project(dir.path());
        seed_corpus(&cfg, 2, &[("a", 1)]);
        std::fs::write(cfg.paths.target_corpus.join("bad1.wav"), b"not audio").unwrap();
        std::fs::write(cfg.paths.target_corpus.join("bad2.wav"), b"me neither").unwrap();
        let err = prepare(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Input(_)), "{msg}");
        assert!(msg.contains("bad1"), "{msg}");
        assert!(msg.contains("bad2"), "{msg}");
    }

    #[test]
    fn mel_normalization_round_trips() {
        let m = Array2::from_shape_fn((7, 5), |(r, c)| -11.0 + r as f64 + c as f64 * 0.3);
        let back = denormalize_mel(&normalize_mel(&m));
        for (a, b) in m.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn checkpoint_for(cfg: &ProjectConfig, dir: &Path, seed: u64) -> PathBuf {
        let bundle = ModelBundleConfig::for_generator(cfg.generator.clone());
        let state = TrainState::new(bundle, &TrainingConfig::default(), seed).unwrap();
        state.save(dir, 0).unwrap()
    }

    #[test]
    fn convert_writes_one_output_per_input_with_matched_duration() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_project(dir.path());
        let ckpt = checkpoint_for(&cfg, dir.path(), 3);
        let in_dir = dir.path().join("in");
        std::fs::create_dir_all(&in_dir).unwrap();
        let a = in_dir.join("a.wav");
        wav::write_wav(&a, &dsp::speech_like(0.5, 1)).unwrap();
        let out_dir = dir.path().join("out");
        let summary = convert(&cfg, &ckpt, &[a.clone()], &out_dir).unwrap();
        assert_eq!(summary.outputs, vec![out_dir.join("a.wav")]);
        let output = wav::read_wav(&summary.outputs[0]).unwrap();
        let input = wav::read_wav(&a).unwrap();
        let diff = (output.len() as i64 - input.len() as i64).abs();
        assert!(
            diff <= 2 * cfg.mel.hop as i64,
            "duration drifted by {diff} samples"
        );
    }

    #[test]
    fn convert_with_no_inputs_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_project(dir.path());
        let ckpt = checkpoint_for(&cfg, dir.path(), 3);
        let summary = convert(&cfg, &ckpt, &[], &dir.path().join("out")).unwrap();
        assert!(summary.outputs.is_empty());
    }

    #[test]
    fn convert_rejects_extractor_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_project(dir.path());
        let ckpt = checkpoint_for(&cfg, dir.path(), 3);
        cfg.extractor.dim = 48;
        cfg.generator.input_dim = 48;
        let err = convert(&cfg, &ckpt, &[], &dir.path().join("out")).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn evaluate_pairs_by_stem_and_errors_when_empty() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_project(dir.path());
        let conv = dir.path().join("conv");
        let refr = dir.path().join("ref");
        std::fs::create_dir_all(&conv).unwrap();
        std::fs::create_dir_all(&refr).unwrap();
        wav::write_wav(&conv.join("u1.wav"), &dsp::speech_like(0.4, 2)).unwrap();
        wav::write_wav(&refr.join("u1.wav"), &dsp::speech_like(0.4, 2)).unwrap();
        // Unmatched stems on both sides are skipped, not errors.
        wav::write_wav(&conv.join("only_conv.wav"), &dsp::speech_like(0.4, 3)).unwrap();
        wav::write_wav(&refr.join("only_ref.wav"), &dsp::speech_like(0.4, 4)).unwrap();
        let out = evaluate(&cfg, &conv, &refr, None).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].stem, "u1");
        // Identical pair: zero spectral distance, perfect similarity.
        assert!(out.report.mcd_db.abs() < 1e-9);
        assert!((out.report.cos_sim - 1.0).abs() < 1e-9);

        let empty = dir.path().join("empty");
        std::fs::create_dir_all(&empty).unwrap();
        let err = evaluate(&cfg, &empty, &refr, None).unwrap_err();
        assert!(matches!(err, Error::Param(_)), "{err}");
    }

    #[test]
    fn visualize_emits_plots_points_and_composite() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_project(dir.path());
        seed_corpus(&cfg, 4, &[("a", 4), ("b", 4)]);
        prepare(&cfg).unwrap();
        let c1 = checkpoint_for(&cfg, &dir.path().join("c1"), 11);
        let c2 = checkpoint_for(&cfg, &dir.path().join("c2"), 22);
        let out_dir = dir.path().join("viz");
        let summary = visualize(
            &cfg,
            &[("with".into(), c1), ("without".into(), c2)],
            &out_dir,
        )
        .unwrap();
        assert_eq!(summary.panels.len(), 2);
        for p in &summary.panels {
            assert!(p.plot.exists());
            assert!(p.points_file.exists());
            assert!(p.n_speakers >= 2);
            assert!((0.0..=1.0).contains(&p.probe_accuracy), "{}", p.probe_accuracy);
            let pts = tensorio::read_matrix(&p.points_file).unwrap();
            assert_eq!(pts.ncols(), 2);
            assert_eq!(pts.nrows(), p.n_points);
        }
        let composite = summary.composite.unwrap();
        assert!(composite.exists());
    }
}
