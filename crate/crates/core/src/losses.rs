//! Adversarial and reconstruction objectives, split into generator-side and
//! discriminator-side terms.
//!
//! The adversarial losses are evaluated literally as expectations of sigmoid
//! scores: the discriminator drives fake-class scores toward 0 and real-class
//! scores toward 1, and each generator term is the mean complement of the
//! scores it can influence. A least-squares variant sits behind `GanForm`
//! for when the constant-gradient expectation form stalls.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GanForm {
    /// Mean scores and score complements, exactly as written.
    #[default]
    Expectation,
    /// Squared distance to the 0/1 targets.
    LeastSquares,
}

/// Every scalar of one optimization step. `total_d` never contains the
/// reconstruction term.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossReport {
    pub l_rec: f64,
    pub l_rf_g: f64,
    pub l_rf_d: f64,
    pub l_cvt_g: f64,
    pub l_cvt_d: f64,
    pub l_e_g: f64,
    pub l_e_d: f64,
    pub l_sim_g: f64,
    pub l_sim_d: f64,
    pub total_g: f64,
    pub total_d: f64,
    pub lambda_sim: f64,
    pub lambda_rf: f64,
}

fn check_probs(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Domain(format!("{name}: empty score batch")));
    }
    for &s in scores {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Domain(format!(
                "{name}: score {s} outside the open interval (0, 1)"
            )));
        }
    }
    Ok(())
}

fn mean(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Real/fake critic objective.
/// d_term = E[D(y_f)] + E[1 - D(y_g)]; g_term = E[1 - D(y_f)].
pub fn loss_rf(d_fake: &[f64], d_real: &[f64]) -> Result<(f64, f64)> {
    check_probs("d_fake", d_fake)?;
    check_probs("d_real", d_real)?;
    let g = 1.0 - mean(d_fake);
    let d = mean(d_fake) + (1.0 - mean(d_real));
    Ok((g, d))
}

/// Conversion critic objective; positives are the target's own mels (ground
/// truth and reconstruction), the negative is the converted external mel.
/// d_term = E[D(y_c)] + E[1 - D(y_f)] + E[1 - D(y_g)]; g_term = E[1 - D(y_c)].
pub fn loss_cvt(d_converted: &[f64], d_fake: &[f64], d_real: &[f64]) -> Result<(f64, f64)> {
    check_probs("d_converted", d_converted)?;
    check_probs("d_fake", d_fake)?;
    check_probs("d_real", d_real)?;
    let g = 1.0 - mean(d_converted);
    let d = mean(d_converted) + (1.0 - mean(d_fake)) + (1.0 - mean(d_real));
    Ok((g, d))
}

/// Embedding critic objective over external (e_o) vs target (e_i) content
/// embeddings. d_term = E[D(e_o)] + E[1 - D(e_i)]; g_term = E[1 - D(e_o)].
pub fn loss_e(d_external: &[f64], d_internal: &[f64]) -> Result<(f64, f64)> {
    check_probs("d_external", d_external)?;
    check_probs("d_internal", d_internal)?;
    let g = 1.0 - mean(d_external);
    let d = mean(d_external) + (1.0 - mean(d_internal));
    Ok((g, d))
}

/// Mean absolute difference between reconstruction and ground truth. The
/// element-count normalization keeps the value resolution independent.
pub fn loss_rec(y_f: &Array2<f64>, y_g: &Array2<f64>) -> Result<f64> {
    if y_f.dim() != y_g.dim() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs ground truth {:?}",
            y_f.dim(),
            y_g.dim()
        )));
    }
    let n = y_f.len();
    if n == 0 {
        return Err(Error::Shape("empty mel pair".into()));
    }
    Ok(y_f
        .iter()
        .zip(y_g.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n as f64)
}

/// Combine per-loss terms into the step report. The similarity loss is the
/// sum of the embedding and conversion terms; the generator total carries the
/// reconstruction term, the discriminator total does not.
pub fn assemble(
    l_rec: f64,
    rf: (f64, f64),
    cvt: (f64, f64),
    e: (f64, f64),
    lambda_sim: f64,
    lambda_rf: f64,
) -> LossReport {
    let (l_rf_g, l_rf_d) = rf;
    let (l_cvt_g, l_cvt_d) = cvt;
    let (l_e_g, l_e_d) = e;
    let l_sim_g = l_e_g + l_cvt_g;
    let l_sim_d = l_e_d + l_cvt_d;
    LossReport {
        l_rec,
        l_rf_g,
        l_rf_d,
        l_cvt_g,
        l_cvt_d,
        l_e_g,
        l_e_d,
        l_sim_g,
        l_sim_d,
        total_g: lambda_sim * l_sim_g + lambda_rf * l_rf_g + l_rec,
        total_d: lambda_sim * l_sim_d + lambda_rf * l_rf_d,
        lambda_sim,
        lambda_rf,
    }
}

/// Mean of scalar score nodes as a `[1 x 1]` node.
fn mean_of(tape: &mut Tape, scores: &[NodeId]) -> NodeId {
    assert!(!scores.is_empty(), "empty score batch on tape");
    let mut acc = scores[0];
    for &s in &scores[1..] {
        acc = tape.add(acc, s);
    }
    tape.scale(acc, 1.0 / scores.len() as f64)
}

/// 1 - node, elementwise.
fn complement(tape: &mut Tape, x: NodeId) -> NodeId {
    let neg = tape.scale(x, -1.0);
    tape.add_scalar(neg, 1.0)
}

fn square(tape: &mut Tape, x: NodeId) -> NodeId {
    tape.mul(x, x)
}

/// Mean of (score - 1)^2 over the batch.
fn ls_to_one(tape: &mut Tape, scores: &[NodeId]) -> NodeId {
    let terms: Vec<NodeId> = scores
        .iter()
        .map(|&s| {
            let d = tape.add_scalar(s, -1.0);
            square(tape, d)
        })
        .collect();
    mean_of(tape, &terms)
}

/// Mean of score^2 over the batch.
fn ls_to_zero(tape: &mut Tape, scores: &[NodeId]) -> NodeId {
    let terms: Vec<NodeId> = scores.iter().map(|&s| square(tape, s)).collect();
    mean_of(tape, &terms)
}

/// Generator term on the tape: drive `scores` toward 1.
pub fn g_side(tape: &mut Tape, form: GanForm, scores: &[NodeId]) -> NodeId {
    match form {
        GanForm::Expectation => {
            let m = mean_of(tape, scores);
            complement(tape, m)
        }
        GanForm::LeastSquares => ls_to_one(tape, scores),
    }
}

/// Discriminator term on the tape: drive `fakes` toward 0 and each batch in
/// `reals` toward 1.
fn d_side(tape: &mut Tape, form: GanForm, fakes: &[NodeId], reals: &[&[NodeId]]) -> NodeId {
    match form {
        GanForm::Expectation => {
            let mut total = mean_of(tape, fakes);
            for real in reals {
                let m = mean_of(tape, real);
                let c = complement(tape, m);
                total = tape.add(total, c);
            }
            total
        }
        GanForm::LeastSquares => {
            let mut total = ls_to_zero(tape, fakes);
            for real in reals {
                let t = ls_to_one(tape, real);
                total = tape.add(total, t);
            }
            total
        }
    }
}

/// Tape-level real/fake loss. Returns (g_term, d_term) nodes.
pub fn loss_rf_on(
    tape: &mut Tape,
    form: GanForm,
    d_fake: &[NodeId],
    d_real: &[NodeId],
) -> (NodeId, NodeId) {
    let g = g_side(tape, form, d_fake);
    let d = d_side(tape, form, d_fake, &[d_real]);
    (g, d)
}

/// Tape-level conversion loss. Returns (g_term, d_term) nodes.
pub fn loss_cvt_on(
    tape: &mut Tape,
    form: GanForm,
    d_converted: &[NodeId],
    d_fake: &[NodeId],
    d_real: &[NodeId],
) -> (NodeId, NodeId) {
    let g = g_side(tape, form, d_converted);
    let d = d_side(tape, form, d_converted, &[d_fake, d_real]);
    (g, d)
}

/// Tape-level embedding loss. Returns (g_term, d_term) nodes.
pub fn loss_e_on(
    tape: &mut Tape,
    form: GanForm,
    d_external: &[NodeId],
    d_internal: &[NodeId],
) -> (NodeId, NodeId) {
    let g = g_side(tape, form, d_external);
    let d = d_side(tape, form, d_external, &[d_internal]);
    (g, d)
}

/// Tape-level reconstruction loss: mean |y_f - y_g|.
pub fn loss_rec_on(tape: &mut Tape, y_f: NodeId, y_g: NodeId) -> NodeId {
    tape.mean_abs_diff(y_f, y_g)
}
