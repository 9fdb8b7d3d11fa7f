//! Outer training loop: preflight, batch schedule, JSONL logging,
//! checkpoint cadence, and resume.

use super::data::{assemble_batch, load_corpus, Corpus};
use super::step::{train_step, ModelBundleConfig, TrainState};
use super::TrainingConfig;
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::tensorio::manifest::UtteranceRecord;
use serde_json::json;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, serde::Serialize)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub steps_run: u64,
    pub last_report: Option<LossReport>,
}

/// Mean eval-mode reconstruction error over held-out utterances.
fn validation_l_rec(state: &TrainState, corpus: &Corpus) -> Result<Option<f64>> {
    if corpus.validation.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for utt in &corpus.validation {
        let mel_ref = utt
            .mel
            .as_ref()
            .ok_or_else(|| Error::Training(format!("validation utterance {} lacks a mel", utt.id)))?;
        let (mel_f, _) = state.generator.forward(&utt.features)?;
        if mel_f.dim() != mel_ref.dim() {
            return Err(Error::Shape(format!(
                "validation {}: predicted mel {:?} vs reference {:?}",
                utt.id,
                mel_f.dim(),
                mel_ref.dim()
            )));
        }
        total += (&mel_f - mel_ref).mapv(f64::abs).mean().unwrap();
    }
    Ok(Some(total / corpus.validation.len() as f64))
}

fn log_line(log: &mut impl Write, value: serde_json::Value) -> Result<()> {
    writeln!(log, "{value}").map_err(|e| Error::Training(format!("log write failed: {e}")))?;
    Ok(())
}

/// Run (or resume) training. Writes checkpoints and `train_log.jsonl` under
/// `out_dir`; returns the final checkpoint path.
pub fn train(
    train_records: &[UtteranceRecord],
    val_records: &[UtteranceRecord],
    bundle: ModelBundleConfig,
    tcfg: &TrainingConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    bundle.validate()?;
    let corpus = load_corpus(
        train_records,
        val_records,
        bundle.generator.upsample_factor,
    )?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let (mut state, start_step) = match resume {
        Some(path) => {
            let (state, step) = TrainState::load(path, tcfg)?;
            if state.bundle != bundle {
                return Err(Error::Config(
                    "checkpoint architecture does not match the configured model".into(),
                ));
            }
            (state, step)
        }
        None => (TrainState::new(bundle, tcfg, tcfg.seed)?, 0),
    };

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let started = Instant::now();
    let mut last_report = None;
    let mut last_checkpoint = None;

    for step in start_step..tcfg.steps {
        let batch = assemble_batch(
            &corpus,
            tcfg.seed,
            step,
            tcfg.batch_size,
            tcfg.crop_frames,
            state.bundle.generator.upsample_factor,
        );
        let report = train_step(&mut state, &batch, step, tcfg).map_err(|e| {
            Error::Training(format!(
                "step {step} failed ({e}); batch: {}",
                batch.describe(&corpus)
            ))
        })?;
        let mut record = serde_json::to_value(&report).expect("report serializes");
        let obj = record.as_object_mut().unwrap();
        obj.insert("step".into(), json!(step));
        obj.insert("wall_ms".into(), json!(started.elapsed().as_millis() as u64));
        log_line(&mut log, record)?;
        last_report = Some(report);

        let completed = step + 1;
        if tcfg.validate_every > 0 && completed % tcfg.validate_every == 0 {
            if let Some(v) = validation_l_rec(&state, &corpus)? {
                log_line(&mut log, json!({ "step": step, "val_l_rec": v }))?;
            }
        }
        if tcfg.checkpoint_every > 0
            && completed % tcfg.checkpoint_every == 0
            && completed != tcfg.steps
        {
            last_checkpoint = Some(state.save(out_dir, completed)?);
        }
    }

    let end_step = tcfg.steps.max(start_step);
    let final_checkpoint = state.save(out_dir, end_step)?;
    if let Some(v) = validation_l_rec(&state, &corpus)? {
        log_line(&mut log, json!({ "step": end_step, "val_l_rec": v, "final": true }))?;
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let _ = last_checkpoint;
    Ok(TrainOutcome {
        final_checkpoint,
        steps_run: end_step.saturating_sub(start_step),
        last_report,
    })
}
