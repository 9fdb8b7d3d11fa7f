//! Exact t-SNE for the speaker-leakage probe. O(N^2) per iteration, capped
//! at desk scale; deterministic given the seed.

use crate::error::{Error, Result};
use crate::rng;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hard cap keeping the exact O(N^2) algorithm tractable.
pub const MAX_POINTS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            seed: 0,
        }
    }
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for k in 0..x.ncols() {
                let diff = x[[i, k]] - x[[j, k]];
                acc += diff * diff;
            }
            d[[i, j]] = acc;
            d[[j, i]] = acc;
        }
    }
    d
}

/// Conditional distribution row with the precision that hits the target
/// entropy, found by binary search.
fn conditional_row(dist_row: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let n = dist_row.len();
    let mut beta = 1.0;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut p = vec![0.0; n];
    for _ in 0..64 {
        let mut sum = 0.0;
        for (j, slot) in p.iter_mut().enumerate() {
            *slot = if j == i {
                0.0
            } else {
                (-beta * dist_row[j]).exp()
            };
            sum += *slot;
        }
        let mut entropy = 0.0;
        if sum > 0.0 {
            for slot in p.iter_mut() {
                *slot /= sum;
                if *slot > 1e-300 {
                    entropy -= *slot * slot.ln();
                }
            }
        }
        let diff = entropy - target;
        if diff.abs() < 1e-7 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
    }
    p
}

/// Symmetrized affinities with minimum mass 1e-12.
fn joint_affinities(x: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let d = squared_distances(x);
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let row = conditional_row(d.row(i).as_slice().unwrap(), i, perplexity);
        for j in 0..n {
            p[[i, j]] = row[j];
        }
    }
    let mut joint = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            joint[[i, j]] = ((p[[i, j]] + p[[j, i]]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    joint
}

/// Embed rows of `points` into 2-D.
pub fn tsne(points: &Array2<f64>, cfg: &TsneConfig) -> Result<Array2<f64>> {
    let n = points.nrows();
    if n > MAX_POINTS {
        return Err(Error::Param(format!(
            "{n} points exceed the exact t-SNE cap of {MAX_POINTS}"
        )));
    }
    if cfg.perplexity <= 1.0 {
        return Err(Error::Param("perplexity must exceed 1".into()));
    }
    if (n as f64) < cfg.perplexity * 3.0 {
        return Err(Error::Param(format!(
            "{n} points is fewer than 3x perplexity {}",
            cfg.perplexity
        )));
    }
    let p = joint_affinities(points, cfg.perplexity);

    let mut prng = rng::derive_rng(cfg.seed, "tsne-init", &[n as u64]);
    let mut y = Array2::from_shape_fn((n, 2), |_| rng::normal(&mut prng) * 1e-4);
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::from_elem((n, 2), 1.0);

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < cfg.exaggeration_iters { 0.5 } else { 0.8 };

        // Student-t kernel over the current embedding.
        let mut num = Array2::zeros((n, n));
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let k = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[[i, j]] = k;
                num[[j, i]] = k;
                z += 2.0 * k;
            }
        }
        let z = z.max(1e-12);

        for i in 0..n {
            let mut g = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / z).max(1e-12);
                let coeff = 4.0 * (exaggeration * p[[i, j]] - q) * num[[i, j]];
                g[0] += coeff * (y[[i, 0]] - y[[j, 0]]);
                g[1] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
            for d in 0..2 {
                // Adaptive per-coordinate gains, after the reference
                // implementation.
                let same_sign = g[d].signum() == velocity[[i, d]].signum();
                gains[[i, d]] = if same_sign {
                    (gains[[i, d]] * 0.8).max(0.01)
                } else {
                    gains[[i, d]] + 0.2
                };
                velocity[[i, d]] =
                    momentum * velocity[[i, d]] - cfg.learning_rate * gains[[i, d]] * g[d];
            }
        }
        y += &velocity;
        for d in 0..2 {
            let mean = y.column(d).sum() / n as f64;
            y.column_mut(d).mapv_inplace(|v| v - mean);
        }
    }
    Ok(y)
}

/// Seeded k-means with k-means++ initialization; returns labels.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::Param(format!("k = {k} with {n} points")));
    }
    let mut prng = rng::derive_rng(seed, "kmeans-init", &[n as u64, k as u64]);
    let dim = points.ncols();
    let dist2 = |a: ndarray::ArrayView1<f64>, b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    };

    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = prng.random_range(0..n);
    centers.push(points.row(first).to_vec());
    while centers.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                centers
                    .iter()
                    .map(|c| dist2(points.row(i), c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total <= 0.0 {
            prng.random_range(0..n)
        } else {
            let mut pick = rng::uniform(&mut prng, 0.0, total);
            let mut chosen = n - 1;
            for (i, w) in weights.iter().enumerate() {
                pick -= w;
                if pick <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centers.push(points.row(next).to_vec());
    }

    let mut labels = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(points.row(i), center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            for (d, slot) in center.iter_mut().enumerate().take(dim) {
                *slot = members.iter().map(|&i| points[[i, d]]).sum::<f64>()
                    / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(labels)
}

/// Mean silhouette coefficient over all points; higher means tighter,
/// better-separated clusters.
pub fn silhouette(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} points",
            labels.len()
        )));
    }
    let k = labels.iter().max().map(|&m| m + 1).unwrap_or(0);
    if k < 2 {
        return Err(Error::Param("silhouette needs at least 2 clusters".into()));
    }
    let dist = |i: usize, j: usize| -> f64 {
        points
            .row(i)
            .iter()
            .zip(points.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0f64; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j == i {
                continue;
            }
            sums[labels[j]] += dist(i, j);
            counts[labels[j]] += 1;
        }
        let own = labels[i];
        let a = if counts[own] == 0 {
            0.0
        } else {
            sums[own] / counts[own] as f64
        };
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_clusters(n_per: usize, sep: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut prng = rng::derive_rng(seed, "tsne-test-clusters", &[]);
        let mut pts = Array2::zeros((2 * n_per, 8));
        let mut labels = vec![0usize; 2 * n_per];
        for i in 0..2 * n_per {
            let cluster = i / n_per;
            labels[i] = cluster;
            for d in 0..8 {
                let center = if cluster == 0 { 0.0 } else { sep };
                pts[[i, d]] = center + rng::normal(&mut prng);
            }
        }
        (pts, labels)
    }

    #[test]
    fn separated_gaussians_stay_separated() {
        let (pts, _) = two_clusters(60, 10.0, 1);
        let cfg = TsneConfig {
            perplexity: 20.0,
            iterations: 500,
            ..TsneConfig::default()
        };
        let y = tsne(&pts, &cfg).unwrap();
        assert_eq!(y.dim(), (120, 2));
        let labels = kmeans(&y, 2, 7).unwrap();
        let s = silhouette(&y, &labels).unwrap();
        assert!(s > 0.5, "silhouette {s} on a 10-sigma separation");
    }

    #[test]
    fn deterministic_given_seed() {
        let (pts, _) = two_clusters(40, 4.0, 2);
        let cfg = TsneConfig {
            perplexity: 15.0,
            iterations: 120,
            ..TsneConfig::default()
        };
        let a = tsne(&pts, &cfg).unwrap();
        let b = tsne(&pts, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perplexity_precondition_is_enforced() {
        let (pts, _) = two_clusters(50, 4.0, 3);
        assert_eq!(pts.nrows(), 100);
        let ok = TsneConfig {
            perplexity: 30.0,
            iterations: 10,
            ..TsneConfig::default()
        };
        assert!(tsne(&pts, &ok).is_ok());
        let too_high = TsneConfig {
            perplexity: 40.0,
            iterations: 10,
            ..TsneConfig::default()
        };
        assert!(matches!(tsne(&pts, &too_high), Err(Error::Param(_))));
    }

    #[test]
    fn kmeans_recovers_separated_clusters() {
        let (pts, truth) = two_clusters(30, 12.0, 4);
        let labels = kmeans(&pts, 2, 5).unwrap();
        let agree = truth
            .iter()
            .zip(&labels)
            .filter(|(a, b)| a == b)
            .count();
        let acc = agree.max(truth.len() - agree) as f64 / truth.len() as f64;
        assert!(acc > 0.95, "kmeans clustering accuracy {acc}");
    }

    #[test]
    fn silhouette_orders_good_and_bad_separations() {
        let (pts, labels) = two_clusters(30, 12.0, 6);
        let good = silhouette(&pts, &labels).unwrap();
        let (near, labels2) = two_clusters(30, 0.5, 6);
        let bad = silhouette(&near, &labels2).unwrap();
        assert!(good > bad, "{good} vs {bad}");
        assert!(good > 0.5);
    }
}
