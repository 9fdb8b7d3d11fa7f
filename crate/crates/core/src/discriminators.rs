//! The three adversarial critics. Two operate on mel sequences: one separates
//! ground truth from reconstructions, one separates converted speech from the
//! target's own. The third operates on content embeddings and separates the
//! external corpus from the target corpus. All accept arbitrary sequence
//! lengths and emit a single probability.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nn::{Linear, Module, Param, StridedConv1d};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MelDiscriminatorConfig {
    pub input_dim: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for MelDiscriminatorConfig {
    fn default() -> Self {
        MelDiscriminatorConfig {
            input_dim: 80,
            channels: vec![128, 256, 512, 512],
            kernel: 5,
            stride: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingDiscriminatorConfig {
    pub input_dim: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for EmbeddingDiscriminatorConfig {
    fn default() -> Self {
        EmbeddingDiscriminatorConfig {
            input_dim: 256,
            channels: vec![256, 256, 256],
            kernel: 3,
        }
    }
}

fn validate_common(input_dim: usize, channels: &[usize], kernel: usize) -> Result<()> {
    if input_dim == 0 || channels.is_empty() || channels.contains(&0) {
        return Err(Error::Config("discriminator dims must be positive".into()));
    }
    if kernel == 0 {
        return Err(Error::Config("discriminator kernel must be positive".into()));
    }
    Ok(())
}

/// Strided conv stack over time -> LeakyReLU -> mean pool -> linear ->
/// sigmoid. Used for both mel critics; they share shape, never weights.
pub struct MelDiscriminator {
    pub cfg: MelDiscriminatorConfig,
    stack: Vec<StridedConv1d>,
    head: Linear,
}

impl MelDiscriminator {
    pub fn new(name: &str, cfg: MelDiscriminatorConfig, seed: u64) -> Result<Self> {
        validate_common(cfg.input_dim, &cfg.channels, cfg.kernel)?;
        if cfg.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        let mut stack = Vec::new();
        let mut c_in = cfg.input_dim;
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            stack.push(StridedConv1d::new(
                &format!("{name}.conv{i}"),
                c_in,
                c_out,
                cfg.kernel,
                cfg.stride,
                seed,
            ));
            c_in = c_out;
        }
        Ok(MelDiscriminator {
            head: Linear::new(&format!("{name}.head"), c_in, 1, seed),
            stack,
            cfg,
        })
    }

    /// mel [T x input_dim] -> probability node [1 x 1].
    pub fn forward_on(&self, tape: &mut Tape, mel: NodeId) -> NodeId {
        let mut h = mel;
        for conv in &self.stack {
            h = conv.forward(tape, h);
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
        let pooled = tape.mean_rows(h);
        let logit = self.head.forward(tape, pooled);
        tape.sigmoid(logit)
    }

    pub fn score(&self, mel: &Array2<f64>) -> Result<f64> {
        if mel.ncols() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "mel dim {} != discriminator input {}",
                mel.ncols(),
                self.cfg.input_dim
            )));
        }
        if mel.nrows() == 0 {
            return Err(Error::Shape("empty mel sequence".into()));
        }
        let mut tape = Tape::new();
        let x = tape.constant(mel.clone());
        let p = self.forward_on(&mut tape, x);
        Ok(tape.scalar(p))
    }
}

impl Module for MelDiscriminator {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        for c in &self.stack {
            c.visit(out);
        }
        self.head.visit(out);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for c in &mut self.stack {
            c.visit_mut(out);
        }
        self.head.visit_mut(out);
    }
}

/// Unstrided conv stack over content embeddings, same pooling head.
pub struct EmbeddingDiscriminator {
    pub cfg: EmbeddingDiscriminatorConfig,
    stack: Vec<crate::nn::Conv1d>,
    head: Linear,
}

impl EmbeddingDiscriminator {
    pub fn new(name: &str, cfg: EmbeddingDiscriminatorConfig, seed: u64) -> Result<Self> {
        validate_common(cfg.input_dim, &cfg.channels, cfg.kernel)?;
        let mut stack = Vec::new();
        let mut c_in = cfg.input_dim;
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            stack.push(crate::nn::Conv1d::new(
                &format!("{name}.conv{i}"),
                c_in,
                c_out,
                cfg.kernel,
                seed,
            ));
            c_in = c_out;
        }
        Ok(EmbeddingDiscriminator {
            head: Linear::new(&format!("{name}.head"), c_in, 1, seed),
            stack,
            cfg,
        })
    }

    /// embedding [T x input_dim] -> probability node [1 x 1].
    pub fn forward_on(&self, tape: &mut Tape, emb: NodeId) -> NodeId {
        let mut h = emb;
        for conv in &self.stack {
            h = conv.forward(tape, h);
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
        let pooled = tape.mean_rows(h);
        let logit = self.head.forward(tape, pooled);
        tape.sigmoid(logit)
    }

    pub fn score(&self, emb: &Array2<f64>) -> Result<f64> {
        if emb.ncols() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "embedding dim {} != discriminator input {}",
                emb.ncols(),
                self.cfg.input_dim
            )));
        }
        if emb.nrows() == 0 {
            return Err(Error::Shape("empty embedding".into()));
        }
        let mut tape = Tape::new();
        let x = tape.constant(emb.clone());
        let p = self.forward_on(&mut tape, x);
        Ok(tape.scalar(p))
    }
}

impl Module for EmbeddingDiscriminator {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        for c in &self.stack {
            c.visit(out);
        }
        self.head.visit(out);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for c in &mut self.stack {
            c.visit_mut(out);
        }
        self.head.visit_mut(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn mat(t: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = derive_rng(seed, "disc-test", &[]);
        Array2::from_shape_fn((t, c), |_| crate::rng::normal(&mut rng))
    }

    fn small_mel_cfg() -> MelDiscriminatorConfig {
        MelDiscriminatorConfig {
            input_dim: 10,
            channels: vec![8, 16],
            kernel: 5,
            stride: 2,
        }
    }

    fn small_emb_cfg() -> EmbeddingDiscriminatorConfig {
        EmbeddingDiscriminatorConfig {
            input_dim: 12,
            channels: vec![8, 8],
            kernel: 3,
        }
    }

    #[test]
    fn scores_are_probabilities_and_deterministic() {
        let d = MelDiscriminator::new("d_r", small_mel_cfg(), 1).unwrap();
        for t in [1usize, 40, 400] {
            let mel = mat(t, 10, t as u64);
            let p = d.score(&mel).unwrap();
            assert!(p > 0.0 && p < 1.0, "t={t} p={p}");
            assert_eq!(d.score(&mel).unwrap(), p);
        }
        let e = EmbeddingDiscriminator::new("d_e", small_emb_cfg(), 2).unwrap();
        for t in [1usize, 40, 400] {
            let emb = mat(t, 12, 100 + t as u64);
            let p = e.score(&emb).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let d = MelDiscriminator::new("d_r", small_mel_cfg(), 3).unwrap();
        assert!(matches!(d.score(&mat(20, 11, 4)), Err(Error::Shape(_))));
        let e = EmbeddingDiscriminator::new("d_e", small_emb_cfg(), 5).unwrap();
        assert!(matches!(e.score(&mat(20, 13, 6)), Err(Error::Shape(_))));
    }

    #[test]
    fn same_architecture_different_weights() {
        let cfg = small_mel_cfg();
        let d_r = MelDiscriminator::new("d_r", cfg.clone(), 7).unwrap();
        let d_c = MelDiscriminator::new("d_c", cfg, 7).unwrap();
        let mel = mat(30, 10, 8);
        // Distinct name prefixes give distinct init streams even at the same
        // seed; the two critics must never coincide.
        assert_ne!(d_r.score(&mel).unwrap(), d_c.score(&mel).unwrap());
        let keys_r: std::collections::HashSet<u64> =
            d_r.params().iter().map(|p| p.key).collect();
        let keys_c: std::collections::HashSet<u64> =
            d_c.params().iter().map(|p| p.key).collect();
        assert!(keys_r.is_disjoint(&keys_c));
    }

    #[test]
    fn kernel_one_embedding_critic_ignores_temporal_order() {
        let cfg = EmbeddingDiscriminatorConfig {
            input_dim: 12,
            channels: vec![8, 8],
            kernel: 1,
        };
        let d = EmbeddingDiscriminator::new("d_e", cfg, 9).unwrap();
        let emb = mat(25, 12, 10);
        let mut reversed = emb.clone();
        for (i, row) in emb.rows().into_iter().enumerate() {
            reversed.row_mut(24 - i).assign(&row);
        }
        let a = d.score(&emb).unwrap();
        let b = d.score(&reversed).unwrap();
        assert!((a - b).abs() < 1e-6, "a={a} b={b}");
    }

    #[test]
    fn mel_discriminator_gradients() {
        let mut d = MelDiscriminator::new("d_t", small_mel_cfg(), 11).unwrap();
        let mel = mat(17, 10, 12);
        gradient_check(&mut d, |tape, m: &MelDiscriminator| {
            let x = tape.constant(mel.clone());
            m.forward_on(tape, x)
        });
    }

    #[test]
    fn embedding_discriminator_gradients() {
        let mut d = EmbeddingDiscriminator::new("d_u", small_emb_cfg(), 13).unwrap();
        let emb = mat(15, 12, 14);
        gradient_check(&mut d, |tape, m: &EmbeddingDiscriminator| {
            let x = tape.constant(emb.clone());
            m.forward_on(tape, x)
        });
    }

    fn gradient_check<M: Module, F>(module: &mut M, build: F)
    where
        F: Fn(&mut Tape, &M) -> NodeId,
    {
        let mut tape = Tape::new();
        let loss = build(&mut tape, module);
        let grads = tape.backward(loss);
        let h = 1e-6;
        let meta: Vec<(u64, usize)> = module.params().iter().map(|p| (p.key, p.len())).collect();
        for (pi, (key, len)) in meta.iter().enumerate() {
            let analytic: Vec<f64> = grads.get(*key).unwrap().iter().cloned().collect();
            let stride = (len / 4).max(1);
            for idx in (0..*len).step_by(stride) {
                let orig = module.params()[pi].value.iter().nth(idx).copied().unwrap();
                module.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig + h;
                let mut tp = Tape::new();
                let lp = build(&mut tp, module);
                let fp = tp.scalar(lp);
                module.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig - h;
                let mut tm = Tape::new();
                let lm = build(&mut tm, module);
                let fm = tm.scalar(lm);
                module.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = analytic[idx];
                if (fd - an).abs() < 1e-9 {
                    continue;
                }
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel < 1e-4, "key {key} idx {idx}: fd={fd} an={an}");
            }
        }
    }
}
