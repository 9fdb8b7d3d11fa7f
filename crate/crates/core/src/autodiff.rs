//! Reverse-mode automatic differentiation over `ndarray` matrices.
//!
//! A tape of eagerly evaluated nodes; `backward` walks it in reverse and
//! accumulates adjoints. Everything is `f64` and single threaded so that a
//! given graph always produces bit-identical values and gradients.
//!
//! Matrices are `[rows x cols]`. Sequence data is laid out time-major,
//! `[T x channels]`, throughout the crate.

use ndarray::{s, Array2, Axis};

pub const EPS_NORM: f64 = 1e-5;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
enum Op {
    /// Constant or parameter input; the `bound` map tracks which is which.
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    /// `a @ b` with optional transposes applied before the product.
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_a: bool,
        trans_b: bool,
    },
    /// Broadcast a `[1 x C]` row over every row of `a`.
    AddRow(NodeId, NodeId),
    /// Multiply every row of `a` by a `[1 x C]` row.
    MulRow(NodeId, NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Abs(NodeId),
    /// Row-wise softmax.
    SoftmaxRows(NodeId),
    /// Normalize each row to zero mean, unit variance (no affine part).
    LayerNormRows(NodeId),
    /// Normalize each column over rows, i.e. per channel over time.
    InstanceNormCols(NodeId),
    /// Unfold `[T x C]` into `[T x K*C]` windows for kernel-size-K conv.
    Im2col(NodeId, usize),
    /// Insert `factor - 1` zero rows after every row.
    ZeroStuffRows(NodeId, usize),
    /// Mean over all entries, yielding `[1 x 1]`.
    MeanAll(NodeId),
    /// Mean over rows, yielding `[1 x C]`.
    MeanRows(NodeId),
    SliceCols(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    /// Multiply by a fixed 0/(1/keep) mask (inverted dropout).
    Dropout(NodeId, std::sync::Arc<Array2<f64>>),
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Gradient tape. Build the graph with the methods below, then call
/// `backward` on a `[1 x 1]` loss node.
pub struct Tape {
    nodes: Vec<Node>,
    /// Parameter key -> leaf node, so repeated `leaf_param` binds of the same
    /// parameter share one node and accumulate one gradient.
    bound: std::collections::HashMap<u64, NodeId>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bound: std::collections::HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id.0].value;
        assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar node");
        v[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is kept for it.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Parameter input keyed by `key`. Binding the same key again returns the
    /// existing node, so a parameter used in several subgraphs accumulates a
    /// single gradient.
    pub fn leaf_param(&mut self, key: u64, value: &Array2<f64>) -> NodeId {
        if let Some(&id) = self.bound.get(&key) {
            return id;
        }
        let id = self.push(Op::Leaf, value.clone());
        self.bound.insert(key, id);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) + c;
        self.push(Op::AddScalar(a), v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, trans_a: bool, trans_b: bool) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        let v = match (trans_a, trans_b) {
            (false, false) => av.dot(bv),
            (true, false) => av.t().dot(bv),
            (false, true) => av.dot(&bv.t()),
            (true, true) => av.t().dot(&bv.t()),
        };
        self.push(
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            },
            v,
        )
    }

    /// `a + row` where `row` is `[1 x C]`, broadcast over rows of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let rv = self.value(row);
        assert_eq!(rv.nrows(), 1, "add_row rhs must be [1 x C]");
        let v = self.value(a) + rv;
        self.push(Op::AddRow(a, row), v)
    }

    /// `a * row` where `row` is `[1 x C]`, broadcast over rows of `a`.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let rv = self.value(row);
        assert_eq!(rv.nrows(), 1, "mul_row rhs must be [1 x C]");
        let v = self.value(a) * rv;
        self.push(Op::MulRow(a, row), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn layer_norm_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut v = av.clone();
        for mut row in v.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + EPS_NORM).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        self.push(Op::LayerNormRows(a), v)
    }

    pub fn instance_norm_cols(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut v = av.clone();
        for mut col in v.columns_mut() {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + EPS_NORM).sqrt();
            col.mapv_inplace(|x| (x - mean) * inv);
        }
        self.push(Op::InstanceNormCols(a), v)
    }

    /// Same-padded unfold: output row t concatenates input rows
    /// `t - K/2 .. t + (K-1)/2` (zero outside), so `[T x C] -> [T x K*C]`.
    pub fn im2col(&mut self, a: NodeId, kernel: usize) -> NodeId {
        let av = self.value(a);
        let v = im2col(av, kernel);
        self.push(Op::Im2col(a, kernel), v)
    }

    pub fn zero_stuff_rows(&mut self, a: NodeId, factor: usize) -> NodeId {
        assert!(factor >= 1);
        let av = self.value(a);
        let (t, c) = av.dim();
        let mut v = Array2::zeros((t * factor, c));
        for i in 0..t {
            v.row_mut(i * factor).assign(&av.row(i));
        }
        self.push(Op::ZeroStuffRows(a, factor), v)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let m = av.sum() / av.len() as f64;
        self.push(Op::MeanAll(a), Array2::from_elem((1, 1), m))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let m = av.mean_axis(Axis(0)).unwrap();
        let v = m.insert_axis(Axis(0));
        self.push(Op::MeanRows(a), v)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(a, start, end), v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape mismatch");
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    /// Inverted dropout with a fixed mask of `0` and `1/keep` entries.
    pub fn dropout(&mut self, a: NodeId, mask: Array2<f64>) -> NodeId {
        let v = self.value(a) * &mask;
        self.push(Op::Dropout(a, std::sync::Arc::new(mask)), v)
    }

    /// Mean of |a - b| over all entries.
    pub fn mean_abs_diff(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean_all(d)
    }

    /// Reverse pass from a `[1 x 1]` loss node. Returns per-node adjoints;
    /// look up parameter gradients through the `bound` map with `grad_of`.
    pub fn backward(&mut self, loss: NodeId) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.dim(),
            (1, 1),
            "backward() expects a scalar loss node"
        );
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.accumulate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        let mut by_key = std::collections::HashMap::new();
        for (&key, &id) in &self.bound {
            if let Some(g) = &adj[id.0] {
                by_key.insert(key, g.clone());
            } else {
                by_key.insert(key, Array2::zeros(self.nodes[id.0].value.dim()));
            }
        }
        Gradients { by_key }
    }

    fn accumulate(&self, i: usize, g: &Array2<f64>, adj: &mut [Option<Array2<f64>>]) {
        let mut bump = |id: NodeId, delta: Array2<f64>| match &mut adj[id.0] {
            Some(acc) => *acc += &delta,
            slot @ None => *slot = Some(delta),
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                bump(*a, g.clone());
                bump(*b, g.clone());
            }
            Op::Sub(a, b) => {
                bump(*a, g.clone());
                bump(*b, -g.clone());
            }
            Op::Mul(a, b) => {
                bump(*a, g * &self.nodes[b.0].value);
                bump(*b, g * &self.nodes[a.0].value);
            }
            Op::Scale(a, c) => bump(*a, g * *c),
            Op::AddScalar(a) => bump(*a, g.clone()),
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let ga = match (trans_a, trans_b) {
                    (false, false) => g.dot(&bv.t()),
                    (false, true) => g.dot(bv),
                    (true, false) => bv.dot(&g.t()),
                    (true, true) => bv.t().dot(&g.t()),
                };
                let gb = match (trans_a, trans_b) {
                    (false, false) => av.t().dot(g),
                    (true, false) => av.dot(g),
                    (false, true) => g.t().dot(av),
                    (true, true) => g.t().dot(&av.t()),
                };
                bump(*a, ga);
                bump(*b, gb);
            }
            Op::AddRow(a, row) => {
                bump(*a, g.clone());
                let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                bump(*row, summed);
            }
            Op::MulRow(a, row) => {
                let av = &self.nodes[a.0].value;
                let rv = &self.nodes[row.0].value;
                bump(*a, g * rv);
                let summed = (g * av).sum_axis(Axis(0)).insert_axis(Axis(0));
                bump(*row, summed);
            }
            Op::Relu(a) => {
                let av = &self.nodes[a.0].value;
                bump(*a, g * &av.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let av = &self.nodes[a.0].value;
                let s = *slope;
                bump(*a, g * &av.mapv(|x| if x > 0.0 { 1.0 } else { s }));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                bump(*a, g * &(y * &y.mapv(|v| 1.0 - v)));
            }
            Op::Abs(a) => {
                let av = &self.nodes[a.0].value;
                bump(*a, g * &av.mapv(signum_zero));
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut ga = Array2::zeros(y.dim());
                for r in 0..y.nrows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                    for c in 0..y.ncols() {
                        ga[[r, c]] = yr[c] * (gr[c] - dot);
                    }
                }
                bump(*a, ga);
            }
            Op::LayerNormRows(a) => {
                let av = &self.nodes[a.0].value;
                let y = &self.nodes[i].value;
                let mut ga = Array2::zeros(av.dim());
                let n = av.ncols() as f64;
                for r in 0..av.nrows() {
                    let row = av.row(r);
                    let mean = row.sum() / n;
                    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + EPS_NORM).sqrt();
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let g_mean: f64 = gr.sum() / n;
                    let gy_mean: f64 = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                    for c in 0..av.ncols() {
                        ga[[r, c]] = inv * (gr[c] - g_mean - yr[c] * gy_mean);
                    }
                }
                bump(*a, ga);
            }
            Op::InstanceNormCols(a) => {
                let av = &self.nodes[a.0].value;
                let y = &self.nodes[i].value;
                let mut ga = Array2::zeros(av.dim());
                let n = av.nrows() as f64;
                for c in 0..av.ncols() {
                    let col = av.column(c);
                    let mean = col.sum() / n;
                    let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + EPS_NORM).sqrt();
                    let mut g_mean = 0.0;
                    let mut gy_mean = 0.0;
                    for r in 0..av.nrows() {
                        g_mean += g[[r, c]];
                        gy_mean += g[[r, c]] * y[[r, c]];
                    }
                    g_mean /= n;
                    gy_mean /= n;
                    for r in 0..av.nrows() {
                        ga[[r, c]] = inv * (g[[r, c]] - g_mean - y[[r, c]] * gy_mean);
                    }
                }
                bump(*a, ga);
            }
            Op::Im2col(a, kernel) => {
                let av = &self.nodes[a.0].value;
                let (t, c) = av.dim();
                let k = *kernel;
                let half = k / 2;
                let mut ga = Array2::zeros((t, c));
                for row in 0..t {
                    for tap in 0..k {
                        let src = row as isize + tap as isize - half as isize;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        for ch in 0..c {
                            ga[[src as usize, ch]] += g[[row, tap * c + ch]];
                        }
                    }
                }
                bump(*a, ga);
            }
            Op::ZeroStuffRows(a, factor) => {
                let av = &self.nodes[a.0].value;
                let (t, c) = av.dim();
                let mut ga = Array2::zeros((t, c));
                for r in 0..t {
                    ga.row_mut(r).assign(&g.row(r * factor));
                }
                bump(*a, ga);
            }
            Op::MeanAll(a) => {
                let av = &self.nodes[a.0].value;
                let coeff = g[[0, 0]] / av.len() as f64;
                bump(*a, Array2::from_elem(av.dim(), coeff));
            }
            Op::MeanRows(a) => {
                let av = &self.nodes[a.0].value;
                let coeff = 1.0 / av.nrows() as f64;
                let mut ga = Array2::zeros(av.dim());
                for mut row in ga.rows_mut() {
                    for (c, slot) in row.iter_mut().enumerate() {
                        *slot = g[[0, c]] * coeff;
                    }
                }
                bump(*a, ga);
            }
            Op::SliceCols(a, start, _end) => {
                let av = &self.nodes[a.0].value;
                let mut ga = Array2::zeros(av.dim());
                ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                bump(*a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.ncols();
                    let gp = g.slice(s![.., offset..offset + w]).to_owned();
                    bump(p, gp);
                    offset += w;
                }
            }
            Op::Dropout(a, mask) => {
                bump(*a, g * mask.as_ref());
            }
        }
    }
}

/// Parameter gradients keyed by the `leaf_param` key.
pub struct Gradients {
    by_key: std::collections::HashMap<u64, Array2<f64>>,
}

impl Gradients {
    pub fn get(&self, key: u64) -> Option<&Array2<f64>> {
        self.by_key.get(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.by_key.keys().copied()
    }

    pub fn merge_scaled(&mut self, other: &Gradients, scale: f64) {
        for (k, g) in &other.by_key {
            match self.by_key.get_mut(k) {
                Some(acc) => *acc += &(g * scale),
                None => {
                    self.by_key.insert(*k, g * scale);
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.by_key
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.by_key.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn signum_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn softmax_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut v = a.clone();
    for mut row in v.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    v
}

fn im2col(a: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let (t, c) = a.dim();
    let half = kernel / 2;
    let mut out = Array2::zeros((t, kernel * c));
    for row in 0..t {
        for tap in 0..kernel {
            let src = row as isize + tap as isize - half as isize;
            if src < 0 || src >= t as isize {
                continue;
            }
            for ch in 0..c {
                out[[row, tap * c + ch]] = a[[src as usize, ch]];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central finite differences on every entry of every bound parameter.
    fn check_grads<F>(params: &mut [(u64, Array2<f64>)], build: F, tol: f64)
    where
        F: Fn(&mut Tape, &[(u64, Array2<f64>)]) -> NodeId,
    {
        let mut tape = Tape::new();
        let loss = build(&mut tape, params);
        let grads = tape.backward(loss);
        let h = 1e-6;
        for pi in 0..params.len() {
            let key = params[pi].0;
            // Logical (row-major) order is layout independent.
            let analytic: Vec<f64> = grads
                .get(key)
                .expect("gradient missing")
                .iter()
                .cloned()
                .collect();
            for idx in 0..params[pi].1.len() {
                let orig = params[pi].1.as_slice().unwrap()[idx];
                params[pi].1.as_slice_mut().unwrap()[idx] = orig + h;
                let mut tp = Tape::new();
                let lp = build(&mut tp, params);
                let fp = tp.scalar(lp);
                params[pi].1.as_slice_mut().unwrap()[idx] = orig - h;
                let mut tm = Tape::new();
                let lm = build(&mut tm, params);
                let fm = tm.scalar(lm);
                params[pi].1.as_slice_mut().unwrap()[idx] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = analytic[idx];
                // Central differences bottom out around eps*|f|/h; below that
                // the relative test is noise.
                if (fd - an).abs() < 1e-9 {
                    continue;
                }
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < tol,
                    "param {key} entry {idx}: fd={fd} analytic={an}"
                );
            }
        }
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::derive_rng(seed, "autodiff-test", &[rows as u64, cols as u64]);
        Array2::from_shape_fn((rows, cols), |_| crate::rng::normal(&mut rng) * 0.5)
    }

    #[test]
    fn matmul_all_transpose_variants() {
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a_dim = if ta { (4, 3) } else { (3, 4) };
            let b_dim = if tb { (5, 4) } else { (4, 5) };
            let mut params = vec![
                (1u64, rand_mat(a_dim.0, a_dim.1, 11)),
                (2u64, rand_mat(b_dim.0, b_dim.1, 12)),
            ];
            check_grads(
                &mut params,
                |t, ps| {
                    let a = t.leaf_param(ps[0].0, &ps[0].1);
                    let b = t.leaf_param(ps[1].0, &ps[1].1);
                    let m = t.matmul_t(a, b, ta, tb);
                    let m = t.sigmoid(m);
                    t.mean_all(m)
                },
                1e-6,
            );
        }
    }

    #[test]
    fn elementwise_and_norm_ops() {
        let mut params = vec![
            (1u64, rand_mat(6, 5, 21)),
            (2u64, rand_mat(6, 5, 22)),
            (3u64, rand_mat(1, 5, 23)),
        ];
        check_grads(
            &mut params,
            |t, ps| {
                let a = t.leaf_param(ps[0].0, &ps[0].1);
                let b = t.leaf_param(ps[1].0, &ps[1].1);
                let gamma = t.leaf_param(ps[2].0, &ps[2].1);
                let x = t.mul(a, b);
                let x = t.add(x, a);
                let x = t.leaky_relu(x, 0.2);
                let x = t.layer_norm_rows(x);
                let x = t.mul_row(x, gamma);
                let x = t.instance_norm_cols(x);
                let x = t.abs(x);
                t.mean_all(x)
            },
            1e-5,
        );
    }

    #[test]
    fn softmax_attention_shape_ops() {
        let mut params = vec![(1u64, rand_mat(5, 6, 31)), (2u64, rand_mat(1, 6, 32))];
        check_grads(
            &mut params,
            |t, ps| {
                let a = t.leaf_param(ps[0].0, &ps[0].1);
                let row = t.leaf_param(ps[1].0, &ps[1].1);
                let x = t.add_row(a, row);
                let left = t.slice_cols(x, 0, 3);
                let right = t.slice_cols(x, 3, 6);
                let scores = t.matmul_t(left, right, false, true);
                let att = t.softmax_rows(scores);
                let y = t.matmul(att, x);
                let y = t.concat_cols(&[y, x]);
                let y = t.sigmoid(y);
                t.mean_all(y)
            },
            1e-5,
        );
    }

    #[test]
    fn conv_ops_im2col_and_zero_stuff() {
        let mut params = vec![(1u64, rand_mat(7, 3, 41)), (2u64, rand_mat(9, 4, 42))];
        check_grads(
            &mut params,
            |t, ps| {
                let a = t.leaf_param(ps[0].0, &ps[0].1);
                let w = t.leaf_param(ps[1].0, &ps[1].1);
                let stuffed = t.zero_stuff_rows(a, 2);
                let cols = t.im2col(stuffed, 3);
                let y = t.matmul(cols, w);
                let y = t.relu(y);
                let m = t.mean_rows(y);
                let m = t.abs(m);
                t.mean_all(m)
            },
            1e-5,
        );
    }

    #[test]
    fn rebinding_same_key_accumulates_one_gradient() {
        let w = rand_mat(3, 3, 51);
        let x1 = rand_mat(4, 3, 52);
        let x2 = rand_mat(4, 3, 53);
        let mut tape = Tape::new();
        let xa = tape.constant(x1.clone());
        let xb = tape.constant(x2.clone());
        let wa = tape.leaf_param(7, &w);
        let wb = tape.leaf_param(7, &w);
        assert_eq!(wa, wb, "same key must bind to the same node");
        let ya = tape.matmul(xa, wa);
        let yb = tape.matmul(xb, wb);
        let sum = tape.add(ya, yb);
        let loss = tape.mean_all(sum);
        let grads = tape.backward(loss);
        let g = grads.get(7).unwrap();

        // Analytic: d/dW mean(x1 W + x2 W) = (x1 + x2)^T 1 / N.
        let n = 12.0;
        let ones = Array2::from_elem((4, 3), 1.0 / n);
        let expect = x1.t().dot(&ones) + x2.t().dot(&ones);
        for (a, b) in g.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_parameter_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let w = tape.leaf_param(1, &array![[0.5, -0.5], [0.25, 0.75]]);
        let y = tape.matmul(c, w);
        let loss = tape.mean_all(y);
        let grads = tape.backward(loss);
        assert!(grads.get(1).is_some());
        assert_eq!(grads.keys().count(), 1);
    }

    #[test]
    fn dropout_mask_is_applied_exactly() {
        let mut tape = Tape::new();
        let x = tape.leaf_param(1, &array![[1.0, 2.0], [3.0, 4.0]]);
        let mask = array![[2.0, 0.0], [0.0, 2.0]];
        let y = tape.dropout(x, mask.clone());
        assert_eq!(tape.value(y), &array![[2.0, 0.0], [0.0, 8.0]]);
        let loss = tape.mean_all(y);
        let grads = tape.backward(loss);
        let g = grads.get(1).unwrap();
        for (gv, mv) in g.iter().zip(mask.iter()) {
            assert!((gv - mv / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn instance_norm_output_is_standardized() {
        let x = rand_mat(64, 5, 61);
        let mut tape = Tape::new();
        let xn = tape.constant(x);
        let y = tape.instance_norm_cols(xn);
        let yv = tape.value(y);
        for c in 0..5 {
            let col = yv.column(c);
            let mean = col.sum() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "var={var}");
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, 2.0]]);
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            let mut t = Tape::new();
            let y = t.constant(array![[1.0, 2.0]]);
            t.backward(y);
        }));
        assert!(result.is_err());
        let _ = x;
    }
}
