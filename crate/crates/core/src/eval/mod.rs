//! Objective evaluation: mel-cepstral distortion, prosody RMSE, speaker
//! similarity, and speaker-leakage probes over content embeddings.

pub mod embedder;
pub mod mcd;
pub mod plot;
pub mod probe;
pub mod prosody_rmse;
pub mod tsne;

pub use embedder::{cosine, cosine_similarity, SpeakerEmbedder, SpeakerEmbedderKind};
pub use mcd::{dtw_path, mcd, mcd_from_cepstra, mel_cepstra, MCD_COEFFS};
pub use plot::{compose_two_panel, scatter_png};
pub use probe::{
    collect_points, probe_accuracy, summarize_mean, summarize_windows, LabeledPoints,
    LogisticProbe,
};
pub use prosody_rmse::prosody_rmse;
pub use tsne::{kmeans, silhouette, tsne, TsneConfig};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Aggregated objective metrics over a set of parallel utterance pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mcd_db: f64,
    pub cos_sim: f64,
    pub f0_rmse: f64,
    pub energy_rmse: f64,
    pub n_pairs: usize,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mcd_db", self.mcd_db),
            ("cos_sim", self.cos_sim),
            ("f0_rmse", self.f0_rmse),
            ("energy_rmse", self.energy_rmse),
        ] {
            if !v.is_finite() {
                return Err(Error::Eval(format!("{name} is not finite")));
            }
        }
        if !(-1.0..=1.0).contains(&self.cos_sim) {
            return Err(Error::Eval(format!("cos_sim {} outside [-1, 1]", self.cos_sim)));
        }
        for (name, v) in [("f0_rmse", self.f0_rmse), ("energy_rmse", self.energy_rmse)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Eval(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.n_pairs == 0 {
            return Err(Error::Eval("report covers zero pairs".into()));
        }
        Ok(())
    }

    /// Aggregate per-pair metrics by their means.
    pub fn from_pairs(pairs: &[(f64, f64, f64, f64)]) -> Result<EvalReport> {
        if pairs.is_empty() {
            return Err(Error::Eval("no evaluation pairs".into()));
        }
        let n = pairs.len() as f64;
        let report = EvalReport {
            mcd_db: pairs.iter().map(|p| p.0).sum::<f64>() / n,
            cos_sim: pairs.iter().map(|p| p.1).sum::<f64>() / n,
            f0_rmse: pairs.iter().map(|p| p.2).sum::<f64>() / n,
            energy_rmse: pairs.iter().map(|p| p.3).sum::<f64>() / n,
            n_pairs: pairs.len(),
        };
        report.validate()?;
        Ok(report)
    }

    /// Plain-text table for terminal output.
    pub fn table(&self) -> String {
        format!(
            "metric        value\n\
             ------------  --------\n\
             MCD (dB)      {:8.4}\n\
             COS-SIM       {:8.4}\n\
             F0 RMSE       {:8.4}\n\
             Energy RMSE   {:8.4}\n\
             pairs         {:8}\n",
            self.mcd_db, self.cos_sim, self.f0_rmse, self.energy_rmse, self.n_pairs
        )
    }
}
