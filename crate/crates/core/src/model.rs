//! The acoustic model G: a content encoder built from feed-forward
//! transformer blocks, instance normalization over time, a transposed-conv
//! upsampler, a decoder of the same block type, and a linear mel projection.
//!
//! Instance normalization carries no learned affine part: its whole job is to
//! strip static per-channel statistics from the content embedding.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nn::{
    add_positional_encoding, ConvTranspose1d, FftBlock, ForwardCtx, Linear, Module, Param,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Feature dimension of the self-supervised frontend.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub attention_heads: usize,
    /// Kernel of the first feed-forward conv inside each block.
    pub conv_kernel: usize,
    /// Feature-rate to mel-rate ratio; output frames = factor * input frames.
    pub upsample_factor: usize,
    pub n_mels: usize,
    pub dropout: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            input_dim: 256,
            hidden_dim: 256,
            encoder_blocks: 4,
            decoder_blocks: 4,
            attention_heads: 2,
            conv_kernel: 9,
            upsample_factor: 2,
            n_mels: 80,
            dropout: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.input_dim == 0 || self.n_mels == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        if self.attention_heads == 0 || self.hidden_dim % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by attention_heads {}",
                self.hidden_dim, self.attention_heads
            )));
        }
        if self.upsample_factor < 1 {
            return Err(Error::Config("upsample_factor must be >= 1".into()));
        }
        if self.conv_kernel == 0 || self.conv_kernel % 2 == 0 {
            return Err(Error::Config("conv_kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count; kept in sync with the layer list by a
    /// unit test.
    ///
    ///   linear(i, o)          = i*o + o
    ///   block(h, k)           = 4*linear(h, h)            attention q,k,v,o
    ///                         + 2*2h                      two layer norms
    ///                         + linear(k*h, 4h)           ff conv 1
    ///                         + linear(4h, h)             ff conv 2 (kernel 1)
    ///   generator             = linear(d_in, h)
    ///                         + (enc + dec) * block(h, k)
    ///                         + linear(2*factor*h, h)     transposed conv
    ///                         + linear(h, n_mels)
    pub fn param_count(&self) -> usize {
        let lin = |i: usize, o: usize| i * o + o;
        let h = self.hidden_dim;
        let block = lin(h, h) * 4
            + 4 * h
            + lin(self.conv_kernel * h, 4 * h)
            + lin(4 * h, h);
        lin(self.input_dim, h)
            + (self.encoder_blocks + self.decoder_blocks) * block
            + lin(2 * self.upsample_factor * h, h)
            + lin(h, self.n_mels)
    }
}

pub struct Generator {
    pub cfg: GeneratorConfig,
    input_proj: Linear,
    encoder: Vec<FftBlock>,
    upsample: ConvTranspose1d,
    decoder: Vec<FftBlock>,
    mel_proj: Linear,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_dim;
        let encoder = (0..cfg.encoder_blocks)
            .map(|i| FftBlock::new(&format!("g.enc{i}"), h, cfg.attention_heads, cfg.conv_kernel, seed))
            .collect();
        let decoder = (0..cfg.decoder_blocks)
            .map(|i| FftBlock::new(&format!("g.dec{i}"), h, cfg.attention_heads, cfg.conv_kernel, seed))
            .collect();
        Ok(Generator {
            input_proj: Linear::new("g.in", cfg.input_dim, h, seed),
            encoder,
            upsample: ConvTranspose1d::new("g.up", h, h, cfg.upsample_factor, seed),
            decoder,
            mel_proj: Linear::new("g.mel", h, cfg.n_mels, seed),
            cfg,
        })
    }

    /// Encoder stack output *before* instance normalization.
    pub fn encode_preact(&self, tape: &mut Tape, x: NodeId, ctx: &mut ForwardCtx) -> NodeId {
        let mut h = self.input_proj.forward(tape, x);
        h = add_positional_encoding(tape, h);
        for block in &self.encoder {
            h = block.forward(tape, h, ctx);
        }
        h
    }

    /// Instance normalization: per channel over time, no affine part.
    pub fn apply_instance_norm(&self, tape: &mut Tape, pre: NodeId) -> NodeId {
        tape.instance_norm_cols(pre)
    }

    /// features [T_s x D] -> content embedding [T_s x H].
    pub fn encode_on(&self, tape: &mut Tape, x: NodeId, ctx: &mut ForwardCtx) -> NodeId {
        let pre = self.encode_preact(tape, x, ctx);
        self.apply_instance_norm(tape, pre)
    }

    /// embedding [T_s x H] -> mel [factor*T_s x n_mels].
    pub fn decode_on(&self, tape: &mut Tape, e: NodeId, ctx: &mut ForwardCtx) -> NodeId {
        let mut h = self.upsample.forward(tape, e);
        h = add_positional_encoding(tape, h);
        for block in &self.decoder {
            h = block.forward(tape, h, ctx);
        }
        self.mel_proj.forward(tape, h)
    }

    /// features -> (mel, embedding) on an existing tape.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        x: NodeId,
        ctx: &mut ForwardCtx,
    ) -> (NodeId, NodeId) {
        let e = self.encode_on(tape, x, ctx);
        let mel = self.decode_on(tape, e, ctx);
        (mel, e)
    }

    fn check_features(&self, features: &Array2<f64>) -> Result<()> {
        if features.ncols() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "feature dim {} != generator input_dim {}",
                features.ncols(),
                self.cfg.input_dim
            )));
        }
        if features.nrows() == 0 {
            return Err(Error::Shape("empty feature sequence".into()));
        }
        Ok(())
    }

    /// Eval-mode encode over plain arrays.
    pub fn encode(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_features(features)?;
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let mut ctx = ForwardCtx::inference();
        let e = self.encode_on(&mut tape, x, &mut ctx);
        Ok(tape.value(e).clone())
    }

    /// Eval-mode decode over plain arrays.
    pub fn decode(&self, embedding: &Array2<f64>) -> Result<Array2<f64>> {
        if embedding.ncols() != self.cfg.hidden_dim {
            return Err(Error::Shape(format!(
                "embedding dim {} != hidden_dim {}",
                embedding.ncols(),
                self.cfg.hidden_dim
            )));
        }
        if embedding.nrows() == 0 {
            return Err(Error::Shape("empty embedding".into()));
        }
        let mut tape = Tape::new();
        let e = tape.constant(embedding.clone());
        let mut ctx = ForwardCtx::inference();
        let mel = self.decode_on(&mut tape, e, &mut ctx);
        Ok(tape.value(mel).clone())
    }

    /// Eval-mode forward: (mel, embedding).
    pub fn forward(&self, features: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_features(features)?;
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let mut ctx = ForwardCtx::inference();
        let (mel, e) = self.forward_on(&mut tape, x, &mut ctx);
        Ok((tape.value(mel).clone(), tape.value(e).clone()))
    }
}

impl Module for Generator {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.input_proj.visit(out);
        for b in &self.encoder {
            b.visit(out);
        }
        self.upsample.visit(out);
        for b in &self.decoder {
            b.visit(out);
        }
        self.mel_proj.visit(out);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.input_proj.visit_mut(out);
        for b in &mut self.encoder {
            b.visit_mut(out);
        }
        self.upsample.visit_mut(out);
        for b in &mut self.decoder {
            b.visit_mut(out);
        }
        self.mel_proj.visit_mut(out);
    }
}
