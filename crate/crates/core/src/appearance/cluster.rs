//! K-Means (Lloyd's algorithm with k-means++ seeding) and 2D PCA over
//! appearance embeddings.

use super::AppearanceError;
use crate::scalar::Scalar;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone)]
pub struct ClusterResult<S> {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<S>>,
    /// Per-embedding projection onto the top-2 principal components.
    pub pca_2d: Vec<[S; 2]>,
}

const MAX_ITERS: usize = 100;
const MOVEMENT_EPS: f64 = 1e-8;

fn dist_sq<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp_seed<S: Scalar>(data: &[Vec<S>], k: usize, rng: &mut StdRng) -> Vec<Vec<S>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(data[rng.gen_range(0..data.len())].clone());
    let mut d2: Vec<S> = data.iter().map(|p| dist_sq(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: S = d2.iter().copied().sum();
        let next = if total <= S::zero() {
            // All points coincide with a centroid; any choice works.
            rng.gen_range(0..data.len())
        } else {
            let mut target = S::of(rng.gen::<f64>()) * total;
            let mut pick = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.push(data[next].clone());
        for (i, p) in data.iter().enumerate() {
            let d = dist_sq(p, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Lloyd's algorithm, fixed iteration cap or centroid movement below
/// 1e-8, then a 2D PCA of the (centered) embeddings.
pub fn cluster_embeddings<S: Scalar>(
    embeddings: &[Vec<S>],
    kclusters: usize,
    seed: u64,
) -> Result<ClusterResult<S>, AppearanceError> {
    if embeddings.len() < kclusters || kclusters == 0 {
        return Err(AppearanceError::TooFewSamples {
            samples: embeddings.len(),
            clusters: kclusters,
        });
    }
    let dim = embeddings[0].len();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_seed(embeddings, kclusters, &mut rng);
    let mut labels = vec![0usize; embeddings.len()];
    for _ in 0..MAX_ITERS {
        for (i, p) in embeddings.iter().enumerate() {
            let mut best = S::infinity();
            for (c, centroid) in centroids.iter().enumerate() {
                let d = dist_sq(p, centroid);
                if d < best {
                    best = d;
                    labels[i] = c;
                }
            }
        }
        let mut sums = vec![vec![S::zero(); dim]; kclusters];
        let mut counts = vec![0usize; kclusters];
        for (p, &l) in embeddings.iter().zip(&labels) {
            counts[l] += 1;
            for (s, &v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut movement = S::zero();
        for c in 0..kclusters {
            if counts[c] == 0 {
                continue; // empty cluster keeps its centroid
            }
            let inv = S::one() / S::of_usize(counts[c]);
            for d in 0..dim {
                let new = sums[c][d] * inv;
                movement = movement.max((new - centroids[c][d]).abs());
                centroids[c][d] = new;
            }
        }
        if movement < S::of(MOVEMENT_EPS) {
            break;
        }
    }
    // Final assignment against the converged centroids.
    for (i, p) in embeddings.iter().enumerate() {
        let mut best = S::infinity();
        for (c, centroid) in centroids.iter().enumerate() {
            let d = dist_sq(p, centroid);
            if d < best {
                best = d;
                labels[i] = c;
            }
        }
    }

    let pca_2d = pca_project_2d(embeddings);
    Ok(ClusterResult {
        labels,
        centroids,
        pca_2d,
    })
}

/// Projection onto the top-2 eigenvectors of the centered covariance.
fn pca_project_2d<S: Scalar>(embeddings: &[Vec<S>]) -> Vec<[S; 2]> {
    let n = embeddings.len();
    let dim = embeddings[0].len();
    let mut mean = vec![S::zero(); dim];
    for p in embeddings {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let inv_n = S::one() / S::of_usize(n);
    for m in mean.iter_mut() {
        *m *= inv_n;
    }
    let mut cov = vec![vec![S::zero(); dim]; dim];
    for p in embeddings {
        for i in 0..dim {
            let di = p[i] - mean[i];
            for j in i..dim {
                cov[i][j] += di * (p[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            cov[i][j] *= inv_n;
            cov[j][i] = cov[i][j];
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap());
    let (e0, e1) = (order[0], order.get(1).copied().unwrap_or(order[0]));
    embeddings
        .iter()
        .map(|p| {
            let mut proj = [S::zero(); 2];
            for i in 0..dim {
                let d = p[i] - mean[i];
                proj[0] += d * eigvecs[i][e0];
                proj[1] += if dim > 1 { d * eigvecs[i][e1] } else { S::zero() };
            }
            proj
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// `(eigenvalues, eigenvectors-as-columns)`.
fn jacobi_eigen<S: Scalar>(a: &[Vec<S>]) -> (Vec<S>, Vec<Vec<S>>) {
    let n = a.len();
    let mut m: Vec<Vec<S>> = a.to_vec();
    let mut v = vec![vec![S::zero(); n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = S::one();
    }
    for _sweep in 0..100 {
        let mut off = S::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off < S::of(1e-24) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < S::of(1e-30) {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (S::two() * m[p][q]);
                let t = {
                    let sign = if theta >= S::zero() { S::one() } else { -S::one() };
                    sign / (theta.abs() + (theta * theta + S::one()).sqrt())
                };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| m[i][i]).collect();
    (eigvals, v)
}

/// Fraction of samples whose cluster's majority truth label matches their
/// own: `sum_c max_l |cluster c with label l| / total`.
pub fn cluster_purity(labels: &[usize], truth: &[u32]) -> f64 {
    assert_eq!(labels.len(), truth.len());
    let kclusters = labels.iter().max().map_or(0, |m| m + 1);
    let classes = truth.iter().max().map_or(0, |m| *m as usize + 1);
    let mut counts = vec![vec![0usize; classes]; kclusters];
    for (&l, &t) in labels.iter().zip(truth) {
        counts[l][t as usize] += 1;
    }
    let majority: usize = counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    majority as f64 / labels.len() as f64
}
