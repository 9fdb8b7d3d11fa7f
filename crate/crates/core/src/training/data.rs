//! In-memory training corpus and stateless batch assembly.
//!
//! Every random draw is derived from (seed, purpose, step, slot), never from
//! mutable RNG state, so an interrupted run resumed from a checkpoint samples
//! exactly the batches the unbroken run would have.

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::tensorio::manifest::{CorpusTag, UtteranceRecord};
use crate::tensorio::read_matrix;
use ndarray::{s, Array2};
use rand::Rng;

/// One utterance with everything training needs resident in memory.
pub struct PreparedUtterance {
    pub id: String,
    pub features: Array2<f64>,
    /// Present for target-corpus records only; external mels are never used.
    pub mel: Option<Array2<f64>>,
}

pub struct Corpus {
    pub target: Vec<PreparedUtterance>,
    pub external: Vec<PreparedUtterance>,
    pub validation: Vec<PreparedUtterance>,
}

/// Check that every record points at the prepared artifacts it needs. All
/// gaps are reported at once so one `prepare` rerun fixes everything.
pub fn preflight(train: &[UtteranceRecord], val: &[UtteranceRecord]) -> Result<()> {
    let mut gaps = Vec::new();
    for r in train.iter().chain(val) {
        match &r.feature_path {
            None => gaps.push(format!("{}: no feature artifact recorded", r.id)),
            Some(p) if !p.exists() => gaps.push(format!("{}: missing {}", r.id, p.display())),
            _ => {}
        }
        if r.corpus_tag == CorpusTag::Target {
            match &r.mel_path {
                None => gaps.push(format!("{}: no mel artifact recorded", r.id)),
                Some(p) if !p.exists() => {
                    gaps.push(format!("{}: missing {}", r.id, p.display()))
                }
                _ => {}
            }
        }
    }
    if gaps.is_empty() {
        Ok(())
    } else {
        Err(Error::Training(format!(
            "{} unprepared utterances:\n  {}",
            gaps.len(),
            gaps.join("\n  ")
        )))
    }
}

fn load_one(record: &UtteranceRecord, upsample_factor: usize) -> Result<PreparedUtterance> {
    let feat_path = record.feature_path.as_ref().expect("preflight checked");
    let features = read_matrix(feat_path)?;
    let mel = match (record.corpus_tag, &record.mel_path) {
        (CorpusTag::Target, Some(p)) => {
            let mel = read_matrix(p)?;
            // Trim the pair to an exact factor alignment; extraction rounding
            // can leave the mel a frame or two long.
            let t_s = features.nrows().min(mel.nrows() / upsample_factor);
            if t_s == 0 {
                return Err(Error::Training(format!(
                    "{}: features [{} x {}] and mel [{} x {}] have no aligned frames",
                    record.id,
                    features.nrows(),
                    features.ncols(),
                    mel.nrows(),
                    mel.ncols()
                )));
            }
            let features = features.slice(s![..t_s, ..]).to_owned();
            let mel = mel.slice(s![..t_s * upsample_factor, ..]).to_owned();
            return Ok(PreparedUtterance {
                id: record.id.clone(),
                features,
                mel: Some(mel),
            });
        }
        _ => None,
    };
    Ok(PreparedUtterance {
        id: record.id.clone(),
        features,
        mel,
    })
}

/// Load the full corpus into memory, split by tag.
pub fn load_corpus(
    train: &[UtteranceRecord],
    val: &[UtteranceRecord],
    upsample_factor: usize,
) -> Result<Corpus> {
    preflight(train, val)?;
    let mut target = Vec::new();
    let mut external = Vec::new();
    for r in train {
        let u = load_one(r, upsample_factor)?;
        match r.corpus_tag {
            CorpusTag::Target => target.push(u),
            CorpusTag::External => external.push(u),
        }
    }
    let validation = val
        .iter()
        .map(|r| load_one(r, upsample_factor))
        .collect::<Result<Vec<_>>>()?;
    if target.is_empty() {
        return Err(Error::Training("no target-corpus training utterances".into()));
    }
    Ok(Corpus {
        target,
        external,
        validation,
    })
}

/// A batch item: cropped features plus, for target items, the aligned mel.
pub struct BatchItem {
    pub utterance: usize,
    pub features: Array2<f64>,
    pub mel: Option<Array2<f64>>,
}

pub struct TrainingBatch {
    pub target: Vec<BatchItem>,
    pub external: Vec<BatchItem>,
}

impl TrainingBatch {
    /// Utterance ids for diagnostics, resolved against the corpus.
    pub fn describe(&self, corpus: &Corpus) -> String {
        let t: Vec<&str> = self
            .target
            .iter()
            .map(|b| corpus.target[b.utterance].id.as_str())
            .collect();
        let x: Vec<&str> = self
            .external
            .iter()
            .map(|b| corpus.external[b.utterance].id.as_str())
            .collect();
        format!("target=[{}] external=[{}]", t.join(","), x.join(","))
    }
}

fn crop(
    u: &PreparedUtterance,
    crop_frames: usize,
    factor: usize,
    rng: &mut rand_chacha::ChaCha20Rng,
) -> BatchItem {
    let t = u.features.nrows();
    let len = crop_frames.min(t);
    let start = if t > len {
        rng.random_range(0..=(t - len))
    } else {
        0
    };
    let features = u.features.slice(s![start..start + len, ..]).to_owned();
    let mel = u
        .mel
        .as_ref()
        .map(|m| m.slice(s![start * factor..(start + len) * factor, ..]).to_owned());
    BatchItem {
        utterance: 0,
        features,
        mel,
    }
}

/// Assemble the step's batch. Target and external draws come from separate
/// derivation streams; both are pure functions of (seed, step, slot).
pub fn assemble_batch(
    corpus: &Corpus,
    seed: u64,
    step: u64,
    batch_size: usize,
    crop_frames: usize,
    factor: usize,
) -> TrainingBatch {
    let mut target = Vec::with_capacity(batch_size);
    for slot in 0..batch_size {
        let mut rng = derive_rng(seed, "batch-target", &[step, slot as u64]);
        let pick = rng.random_range(0..corpus.target.len());
        let mut item = crop(&corpus.target[pick], crop_frames, factor, &mut rng);
        item.utterance = pick;
        target.push(item);
    }
    let mut external = Vec::new();
    if !corpus.external.is_empty() {
        for slot in 0..batch_size {
            let mut rng = derive_rng(seed, "batch-external", &[step, slot as u64]);
            let pick = rng.random_range(0..corpus.external.len());
            let mut item = crop(&corpus.external[pick], crop_frames, factor, &mut rng);
            item.utterance = pick;
            external.push(item);
        }
    }
    TrainingBatch { target, external }
}
