//! Quantitative speaker-leakage probe: how well a small classifier can
//! recover speaker identity from content embeddings. Lower accuracy means
//! less residual speaker information.

use crate::error::{Error, Result};
use crate::rng;
use ndarray::{Array1, Array2, Axis};

/// Per-utterance summary: temporal mean of an embedding sequence.
pub fn summarize_mean(embedding: &Array2<f64>) -> Array1<f64> {
    embedding.mean_axis(Axis(0)).expect("non-empty embedding")
}

/// Non-overlapping window summaries, one row per complete window (a short
/// sequence yields a single whole-sequence row). Each row concatenates the
/// per-channel window mean and window standard deviation. Instance-normalized
/// embeddings have exactly zero full-sequence mean and unit variance, so
/// whole-utterance moments carry nothing and per-window means alone still
/// average to zero across any utterance; the within-window second moment is
/// the part a linear probe can read.
pub fn summarize_windows(embedding: &Array2<f64>, window: usize) -> Array2<f64> {
    let t = embedding.nrows();
    let window = window.max(1);
    if t <= window {
        return window_stats(&embedding.view());
    }
    let groups = t / window;
    let mut out = Array2::zeros((groups, 2 * embedding.ncols()));
    for g in 0..groups {
        let slab = embedding.slice(ndarray::s![g * window..(g + 1) * window, ..]);
        out.row_mut(g).assign(&window_stats(&slab).row(0));
    }
    out
}

fn window_stats(slab: &ndarray::ArrayView2<f64>) -> Array2<f64> {
    let n = slab.nrows() as f64;
    let d = slab.ncols();
    let mut out = Array2::zeros((1, 2 * d));
    for j in 0..d {
        let col = slab.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        out[[0, j]] = mean;
        out[[0, d + j]] = var.sqrt();
    }
    out
}

/// Labeled summary set for the probe and the t-SNE scatter.
pub struct LabeledPoints {
    pub points: Array2<f64>,
    /// Label index per row.
    pub labels: Vec<usize>,
    /// Distinct label names, indexed by label value.
    pub names: Vec<String>,
}

impl LabeledPoints {
    pub fn n_classes(&self) -> usize {
        self.names.len()
    }
}

/// Collect (speaker, summary rows) pairs into one labeled matrix.
pub fn collect_points(groups: &[(String, Array2<f64>)]) -> Result<LabeledPoints> {
    let mut names: Vec<String> = Vec::new();
    let mut rows = 0usize;
    let mut dim = 0usize;
    for (speaker, m) in groups {
        if !names.contains(speaker) {
            names.push(speaker.clone());
        }
        rows += m.nrows();
        if dim == 0 {
            dim = m.ncols();
        } else if dim != m.ncols() {
            return Err(Error::Shape(format!(
                "summary dim {} != {dim} for speaker {speaker}",
                m.ncols()
            )));
        }
    }
    if rows == 0 {
        return Err(Error::Param("no summary points".into()));
    }
    names.sort();
    let mut points = Array2::zeros((rows, dim));
    let mut labels = Vec::with_capacity(rows);
    let mut r = 0;
    for (speaker, m) in groups {
        let label = names.iter().position(|n| n == speaker).unwrap();
        for row in m.rows() {
            points.row_mut(r).assign(&row);
            labels.push(label);
            r += 1;
        }
    }
    Ok(LabeledPoints {
        points,
        labels,
        names,
    })
}

fn softmax_rows_inplace(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Multinomial logistic regression by full-batch gradient descent. The
/// objective is convex; zero init plus a fixed schedule makes the fit
/// deterministic.
pub struct LogisticProbe {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Feature standardization fitted on the training split.
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl LogisticProbe {
    pub fn fit(x: &Array2<f64>, y: &[usize], n_classes: usize, steps: usize, lr: f64) -> Self {
        let (n, d) = x.dim();
        let mean = x.mean_axis(Axis(0)).unwrap();
        let mut scale = Array1::zeros(d);
        for j in 0..d {
            let var = x
                .column(j)
                .iter()
                .map(|&v| (v - mean[j]) * (v - mean[j]))
                .sum::<f64>()
                / n as f64;
            scale[j] = var.sqrt().max(1e-8);
        }
        let xs = standardize(x, &mean, &scale);
        let mut w = Array2::zeros((d, n_classes));
        let mut b = Array1::zeros(n_classes);
        let mut onehot = Array2::zeros((n, n_classes));
        for (i, &label) in y.iter().enumerate() {
            onehot[[i, label]] = 1.0;
        }
        for _ in 0..steps {
            let mut probs = xs.dot(&w) + &b;
            softmax_rows_inplace(&mut probs);
            let err = &probs - &onehot;
            let gw = xs.t().dot(&err) / n as f64;
            let gb = err.sum_axis(Axis(0)) / n as f64;
            w -= &(gw * lr);
            b -= &(gb * lr);
        }
        LogisticProbe { w, b, mean, scale }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        let xs = standardize(x, &self.mean, &self.scale);
        let mut scores = xs.dot(&self.w) + &self.b;
        softmax_rows_inplace(&mut scores);
        scores
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            })
            .collect()
    }
}

fn standardize(x: &Array2<f64>, mean: &Array1<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let (m, s) = (mean[j], scale[j]);
        out.column_mut(j).mapv_inplace(|v| (v - m) / s);
    }
    out
}

/// Stratified 80/20 split: within each class the seeded permutation's first
/// 80% trains, the rest tests. Every class keeps at least one test point.
fn stratified_split(labels: &[usize], n_classes: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..n_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let mut prng = rng::derive_rng(seed, "probe-split", &[c as u64]);
        let order = rng::permutation(&mut prng, members.len());
        let cut = ((members.len() as f64) * 0.8).floor() as usize;
        let cut = cut.min(members.len().saturating_sub(1)).max(1.min(members.len()));
        for (rank, &o) in order.iter().enumerate() {
            if rank < cut {
                train.push(members[o]);
            } else {
                test.push(members[o]);
            }
        }
    }
    (train, test)
}

/// Held-out accuracy of the speaker probe. Chance level is 1/n_classes.
pub fn probe_accuracy(data: &LabeledPoints, seed: u64) -> Result<f64> {
    let k = data.n_classes();
    if k < 2 {
        return Err(Error::Param(
            "speaker probe needs at least two speakers".into(),
        ));
    }
    let (train_idx, test_idx) = stratified_split(&data.labels, k, seed);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Param("split produced an empty side".into()));
    }
    let take = |idx: &[usize]| -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((idx.len(), data.points.ncols()));
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&data.points.row(i));
            y.push(data.labels[i]);
        }
        (x, y)
    };
    let (xtr, ytr) = take(&train_idx);
    let (xte, yte) = take(&test_idx);
    let probe = LogisticProbe::fit(&xtr, &ytr, k, 500, 0.5);
    let pred = probe.predict(&xte);
    let correct = pred.iter().zip(&yte).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / yte.len() as f64)
}
