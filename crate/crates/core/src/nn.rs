//! Layers on top of the gradient tape: linear, 1D convolutions, multi-head
//! attention, layer norm with affine part, and the feed-forward transformer
//! block both networks are assembled from.

use crate::autodiff::{NodeId, Tape};
use crate::rng::derive_rng;
use ndarray::Array2;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Named trainable matrix. The key is a stable hash of the name, so optimizer
/// state and checkpoints address parameters identically across runs.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub key: u64,
    pub value: Array2<f64>,
}

pub fn param_key(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let name = name.into();
        let key = param_key(&name);
        Param { name, key, value }
    }

    /// Scaled-normal init. The stream is derived from the parameter name, so
    /// initialization does not depend on construction order.
    pub fn init(name: impl Into<String>, rows: usize, cols: usize, scale: f64, seed: u64) -> Self {
        let name = name.into();
        let mut rng = init_rng(seed, &name);
        let value =
            Array2::from_shape_fn((rows, cols), |_| crate::rng::normal(&mut rng) * scale);
        Param::new(name, value)
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Param::new(name, Array2::zeros((rows, cols)))
    }

    pub fn bind(&self, tape: &mut Tape) -> NodeId {
        tape.leaf_param(self.key, &self.value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

fn init_rng(seed: u64, name: &str) -> ChaCha20Rng {
    derive_rng(seed, "param-init", &[param_key(name)])
}

/// Anything that exposes its parameters for optimization and checkpointing.
pub trait Module {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>);

    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        self.visit(&mut v);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        self.visit_mut(&mut v);
        v
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Per-forward state: dropout only fires in training mode, and every mask
/// comes from a stream derived from (seed, tag, call counter) so a forward
/// pass is a pure function of its inputs.
pub struct ForwardCtx {
    pub training: bool,
    pub dropout: f64,
    seed: u64,
    tag: String,
    calls: u64,
}

impl ForwardCtx {
    pub fn inference() -> Self {
        ForwardCtx {
            training: false,
            dropout: 0.0,
            seed: 0,
            tag: String::new(),
            calls: 0,
        }
    }

    pub fn training(dropout: f64, seed: u64, tag: impl Into<String>) -> Self {
        ForwardCtx {
            training: true,
            dropout,
            seed,
            tag: tag.into(),
            calls: 0,
        }
    }

    /// Apply inverted dropout, or pass through when inactive.
    pub fn apply_dropout(&mut self, tape: &mut Tape, x: NodeId) -> NodeId {
        if !self.training || self.dropout <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.dropout;
        let dim = tape.value(x).dim();
        let call = self.calls;
        self.calls += 1;
        let mut rng = derive_rng(self.seed, &format!("dropout:{}", self.tag), &[call]);
        let mask = Array2::from_shape_fn(dim, |_| {
            if crate::rng::uniform(&mut rng, 0.0, 1.0) < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        tape.dropout(x, mask)
    }
}

pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(name: &str, d_in: usize, d_out: usize, seed: u64) -> Self {
        let scale = (2.0 / (d_in + d_out) as f64).sqrt();
        Linear {
            w: Param::init(format!("{name}.w"), d_in, d_out, scale, seed),
            b: Param::zeros(format!("{name}.b"), 1, d_out),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let w = self.w.bind(tape);
        let b = self.b.bind(tape);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

impl Module for Linear {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.w);
        out.push(&self.b);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
}

/// Same-padded 1D convolution over time. Weight is `[K*C_in x C_out]` in
/// im2col tap-major order.
pub struct Conv1d {
    pub kernel: usize,
    pub w: Param,
    pub b: Param,
}

impl Conv1d {
    pub fn new(name: &str, c_in: usize, c_out: usize, kernel: usize, seed: u64) -> Self {
        let fan_in = (kernel * c_in) as f64;
        let scale = (2.0 / fan_in).sqrt();
        Conv1d {
            kernel,
            w: Param::init(format!("{name}.w"), kernel * c_in, c_out, scale, seed),
            b: Param::zeros(format!("{name}.b"), 1, c_out),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let cols = tape.im2col(x, self.kernel);
        let w = self.w.bind(tape);
        let b = self.b.bind(tape);
        let y = tape.matmul(cols, w);
        tape.add_row(y, b)
    }
}

impl Module for Conv1d {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.w);
        out.push(&self.b);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
}

/// Strided 1D convolution: same-padded conv followed by keeping every
/// `stride`-th frame. `[T x C] -> [ceil(T/stride) x C_out]`.
pub struct StridedConv1d {
    pub conv: Conv1d,
    pub stride: usize,
}

impl StridedConv1d {
    pub fn new(name: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize, seed: u64) -> Self {
        StridedConv1d {
            conv: Conv1d::new(name, c_in, c_out, kernel, seed),
            stride,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let y = self.conv.forward(tape, x);
        if self.stride == 1 {
            return y;
        }
        downsample_rows(tape, y, self.stride)
    }
}

impl Module for StridedConv1d {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.conv.visit(out);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.conv.visit_mut(out);
    }
}

/// Keep every `stride`-th row. Expressed through the tape's transposed
/// matmul-free ops: a gather is the adjoint of zero stuffing, so we reuse
/// `zero_stuff_rows` on the *backward* side by building the selection as a
/// sparse constant matrix product.
fn downsample_rows(tape: &mut Tape, x: NodeId, stride: usize) -> NodeId {
    let t = tape.value(x).nrows();
    let t_out = t.div_ceil(stride);
    let mut sel = Array2::zeros((t_out, t));
    for (i, mut row) in sel.rows_mut().into_iter().enumerate() {
        row[i * stride] = 1.0;
    }
    let sel = tape.constant(sel);
    tape.matmul(sel, x)
}

/// Transposed 1D convolution with kernel `2*factor` and stride `factor`,
/// realized as zero stuffing followed by a same-padded conv. Output length is
/// exactly `factor * T`.
pub struct ConvTranspose1d {
    pub factor: usize,
    pub conv: Conv1d,
}

impl ConvTranspose1d {
    pub fn new(name: &str, c_in: usize, c_out: usize, factor: usize, seed: u64) -> Self {
        ConvTranspose1d {
            factor,
            conv: Conv1d::new(name, c_in, c_out, 2 * factor, seed),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let stuffed = tape.zero_stuff_rows(x, self.factor);
        self.conv.forward(tape, stuffed)
    }
}

impl Module for ConvTranspose1d {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.conv.visit(out);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.conv.visit_mut(out);
    }
}

/// LayerNorm over channels with learned gain and bias.
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(format!("{name}.gamma"), Array2::from_elem((1, dim), 1.0)),
            beta: Param::zeros(format!("{name}.beta"), 1, dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let n = tape.layer_norm_rows(x);
        let gamma = self.gamma.bind(tape);
        let beta = self.beta.bind(tape);
        let y = tape.mul_row(n, gamma);
        tape.add_row(y, beta)
    }
}

impl Module for LayerNorm {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.gamma);
        out.push(&self.beta);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}

/// Full-sequence (non-causal) multi-head self-attention.
pub struct MultiHeadAttention {
    pub n_heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, n_heads: usize, seed: u64) -> Self {
        assert!(dim % n_heads == 0, "dim must divide into heads");
        MultiHeadAttention {
            n_heads,
            wq: Linear::new(&format!("{name}.q"), dim, dim, seed),
            wk: Linear::new(&format!("{name}.k"), dim, dim, seed),
            wv: Linear::new(&format!("{name}.v"), dim, dim, seed),
            wo: Linear::new(&format!("{name}.o"), dim, dim, seed),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let dim = tape.value(x).ncols();
        let d_head = dim / self.n_heads;
        let q = self.wq.forward(tape, x);
        let k = self.wk.forward(tape, x);
        let v = self.wv.forward(tape, x);
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let lo = h * d_head;
            let hi = lo + d_head;
            let qh = tape.slice_cols(q, lo, hi);
            let kh = tape.slice_cols(k, lo, hi);
            let vh = tape.slice_cols(v, lo, hi);
            let scores = tape.matmul_t(qh, kh, false, true);
            let scores = tape.scale(scores, 1.0 / (d_head as f64).sqrt());
            let att = tape.softmax_rows(scores);
            heads.push(tape.matmul(att, vh));
        }
        let cat = tape.concat_cols(&heads);
        self.wo.forward(tape, cat)
    }
}

impl Module for MultiHeadAttention {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.wq.visit(out);
        self.wk.visit(out);
        self.wv.visit(out);
        self.wo.visit(out);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.wq.visit_mut(out);
        self.wk.visit_mut(out);
        self.wv.visit_mut(out);
        self.wo.visit_mut(out);
    }
}

pub const FFT_FF_MULT: usize = 4;

/// Feed-forward transformer block: self-attention and a two-layer conv
/// feed-forward (kernel `kernel` then 1), each wrapped in residual +
/// post-LayerNorm.
pub struct FftBlock {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub ln2: LayerNorm,
}

impl FftBlock {
    pub fn new(name: &str, dim: usize, n_heads: usize, kernel: usize, seed: u64) -> Self {
        let ff = FFT_FF_MULT * dim;
        FftBlock {
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, n_heads, seed),
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim),
            conv1: Conv1d::new(&format!("{name}.ff1"), dim, ff, kernel, seed),
            conv2: Conv1d::new(&format!("{name}.ff2"), ff, dim, 1, seed),
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId, ctx: &mut ForwardCtx) -> NodeId {
        let a = self.attn.forward(tape, x);
        let a = ctx.apply_dropout(tape, a);
        let x = tape.add(x, a);
        let x = self.ln1.forward(tape, x);

        let f = self.conv1.forward(tape, x);
        let f = tape.relu(f);
        let f = self.conv2.forward(tape, f);
        let f = ctx.apply_dropout(tape, f);
        let x = tape.add(x, f);
        self.ln2.forward(tape, x)
    }
}

impl Module for FftBlock {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.attn.visit(out);
        self.ln1.visit(out);
        self.conv1.visit(out);
        self.conv2.visit(out);
        self.ln2.visit(out);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.attn.visit_mut(out);
        self.ln1.visit_mut(out);
        self.conv1.visit_mut(out);
        self.conv2.visit_mut(out);
        self.ln2.visit_mut(out);
    }
}

/// Sinusoidal positional encoding, `[T x dim]`.
pub fn positional_encoding(t: usize, dim: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((t, dim));
    for pos in 0..t {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            pe[[pos, 2 * i]] = angle.sin();
            pe[[pos, 2 * i + 1]] = angle.cos();
        }
    }
    pe
}

/// Add positional encoding to a sequence node.
pub fn add_positional_encoding(tape: &mut Tape, x: NodeId) -> NodeId {
    let (t, dim) = tape.value(x).dim();
    let pe = tape.constant(positional_encoding(t, dim));
    tape.add(x, pe)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(t: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = derive_rng(seed, "nn-test", &[]);
        Array2::from_shape_fn((t, c), |_| crate::rng::normal(&mut rng))
    }

    fn fd_check<M: Module, F>(module: &mut M, build: F, tol: f64)
    where
        F: Fn(&mut Tape, &M) -> NodeId,
    {
        let mut tape = Tape::new();
        let loss = build(&mut tape, module);
        let grads = tape.backward(loss);
        let h = 1e-6;
        let keys: Vec<(u64, usize)> = module
            .params()
            .iter()
            .map(|p| (p.key, p.len()))
            .collect();
        for (pi, (key, len)) in keys.iter().enumerate() {
            let analytic: Vec<f64> = grads.get(*key).expect("grad missing").iter().cloned().collect();
            // Probe a few entries per parameter; full sweeps live in the
            // acceptance suite.
            let stride = (len / 5).max(1);
            for idx in (0..*len).step_by(stride) {
                let orig = {
                    let mut ps = module.params_mut();
                    let slot = ps[pi].value.as_slice_mut().unwrap();
                    let o = slot[idx];
                    slot[idx] = o + h;
                    o
                };
                let mut tp = Tape::new();
                let fp = {
                    let l = build(&mut tp, module);
                    tp.scalar(l)
                };
                {
                    let mut ps = module.params_mut();
                    ps[pi].value.as_slice_mut().unwrap()[idx] = orig - h;
                }
                let mut tm = Tape::new();
                let fm = {
                    let l = build(&mut tm, module);
                    tm.scalar(l)
                };
                {
                    let mut ps = module.params_mut();
                    ps[pi].value.as_slice_mut().unwrap()[idx] = orig;
                }
                let fd = (fp - fm) / (2.0 * h);
                let an = analytic[idx];
                // Below the central-difference noise floor the relative test
                // is meaningless.
                if (fd - an).abs() < 1e-9 {
                    continue;
                }
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < tol,
                    "key {key} idx {idx}: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn linear_gradients() {
        let mut lin = Linear::new("t.lin", 4, 3, 1);
        let x = input(5, 4, 2);
        fd_check(
            &mut lin,
            |tape, m| {
                let xn = tape.constant(x.clone());
                let y = m.forward(tape, xn);
                let y = tape.sigmoid(y);
                tape.mean_all(y)
            },
            1e-6,
        );
    }

    #[test]
    fn conv_output_shape_and_gradients() {
        let mut conv = Conv1d::new("t.conv", 3, 6, 5, 3);
        let x = input(9, 3, 4);
        {
            let mut tape = Tape::new();
            let xn = tape.constant(x.clone());
            let y = conv.forward(&mut tape, xn);
            assert_eq!(tape.value(y).dim(), (9, 6));
        }
        fd_check(
            &mut conv,
            |tape, m| {
                let xn = tape.constant(x.clone());
                let y = m.forward(tape, xn);
                let y = tape.abs(y);
                tape.mean_all(y)
            },
            1e-5,
        );
    }

    #[test]
    fn strided_conv_halves_length() {
        let conv = StridedConv1d::new("t.sconv", 4, 8, 5, 2, 5);
        let x = input(11, 4, 6);
        let mut tape = Tape::new();
        let xn = tape.constant(x);
        let y = conv.forward(&mut tape, xn);
        assert_eq!(tape.value(y).dim(), (6, 8));
    }

    #[test]
    fn conv_transpose_multiplies_length_exactly() {
        for factor in [1usize, 2, 3, 4] {
            let up = ConvTranspose1d::new("t.up", 4, 4, factor, 7);
            let x = input(7, 4, 8);
            let mut tape = Tape::new();
            let xn = tape.constant(x);
            let y = up.forward(&mut tape, xn);
            assert_eq!(tape.value(y).dim(), (7 * factor, 4), "factor {factor}");
        }
    }

    #[test]
    fn conv_transpose_gradients() {
        let mut up = ConvTranspose1d::new("t.up", 3, 2, 2, 9);
        let x = input(5, 3, 10);
        fd_check(
            &mut up,
            |tape, m| {
                let xn = tape.constant(x.clone());
                let y = m.forward(tape, xn);
                let y = tape.sigmoid(y);
                tape.mean_all(y)
            },
            1e-5,
        );
    }

    #[test]
    fn attention_gradients_and_shape() {
        let mut attn = MultiHeadAttention::new("t.attn", 8, 2, 11);
        let x = input(6, 8, 12);
        {
            let mut tape = Tape::new();
            let xn = tape.constant(x.clone());
            let y = attn.forward(&mut tape, xn);
            assert_eq!(tape.value(y).dim(), (6, 8));
        }
        fd_check(
            &mut attn,
            |tape, m| {
                let xn = tape.constant(x.clone());
                let y = m.forward(tape, xn);
                let y = tape.abs(y);
                tape.mean_all(y)
            },
            1e-4,
        );
    }

    #[test]
    fn fft_block_gradients_eval_mode() {
        let mut block = FftBlock::new("t.blk", 8, 2, 3, 13);
        let x = input(5, 8, 14);
        fd_check(
            &mut block,
            |tape, m| {
                let xn = tape.constant(x.clone());
                let mut ctx = ForwardCtx::inference();
                let y = m.forward(tape, xn, &mut ctx);
                let y = tape.abs(y);
                tape.mean_all(y)
            },
            1e-4,
        );
    }

    #[test]
    fn dropout_only_fires_in_training_mode() {
        let block = FftBlock::new("t.blk", 8, 2, 3, 15);
        let x = input(5, 8, 16);

        let run = |ctx: &mut ForwardCtx| {
            let mut tape = Tape::new();
            let xn = tape.constant(x.clone());
            let y = block.forward(&mut tape, xn, ctx);
            tape.value(y).clone()
        };
        let eval_a = run(&mut ForwardCtx::inference());
        let eval_b = run(&mut ForwardCtx::inference());
        assert_eq!(eval_a, eval_b, "inference must be deterministic");

        let train_a = run(&mut ForwardCtx::training(0.5, 1, "tag"));
        let train_rerun = run(&mut ForwardCtx::training(0.5, 1, "tag"));
        assert_eq!(train_a, train_rerun, "same seed, same masks");

        let train_c = run(&mut ForwardCtx::training(0.5, 2, "tag"));
        assert_ne!(train_a, train_c, "different seed, different masks");
        assert_ne!(train_a, eval_a);
    }

    #[test]
    fn positional_encoding_matches_reference_formula() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe[[0, 0]], 0.0);
        assert_eq!(pe[[0, 1]], 1.0);
        let expect = 1.0f64.sin();
        assert!((pe[[1, 0]] - expect).abs() < 1e-15);
        let expect = (2.0 / 10000f64.powf(0.5)).cos();
        assert!((pe[[2, 3]] - expect).abs() < 1e-15);
    }

    #[test]
    fn init_is_order_independent() {
        let a = Param::init("m.w", 4, 4, 0.1, 42);
        let _other = Param::init("m.x", 8, 8, 0.1, 42);
        let b = Param::init("m.w", 4, 4, 0.1, 42);
        assert_eq!(a.value, b.value);
        assert_eq!(a.key, b.key);
    }

    #[test]
    fn param_keys_are_distinct_across_names() {
        let names = [
            "g.enc0.attn.q.w",
            "g.enc0.attn.q.b",
            "g.enc1.attn.q.w",
            "d_r.stack0.w",
        ];
        let keys: std::collections::HashSet<u64> = names.iter().map(|n| param_key(n)).collect();
        assert_eq!(keys.len(), names.len());
    }
}
