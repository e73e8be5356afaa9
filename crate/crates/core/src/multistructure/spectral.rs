//! Kernel PCA embedding and spectral clustering of the ORK matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ork::{kernel_matrix, ordered_residues, OrkConfig};
use super::{MultiStructureError, PatchLabeling};
use crate::geometry::{fit_homography, Correspondence, ResidualKind};
use crate::sampling::Hypothesis;

/// Robust scale of a residual sample: 1.4826 × median.
pub fn noise_scale(residuals: &[f64]) -> f64 {
    let mut finite: Vec<f64> = residuals.iter().copied().filter(|r| r.is_finite()).collect();
    if finite.is_empty() {
        return 0.0;
    }
    finite.sort_by(f64::total_cmp);
    let n = finite.len();
    let median = if n % 2 == 1 {
        finite[n / 2]
    } else {
        0.5 * (finite[n / 2 - 1] + finite[n / 2])
    };
    1.4826 * median
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Upper bound on the number of spectral clusters.
    pub max_planes: usize,
    /// Fixed outlier threshold in pixels; `None` derives it from the noise scale.
    pub epsilon_outlier: Option<f64>,
    /// Multiplier on the robust noise scale for the derived threshold.
    pub outlier_scale: f64,
    /// Lower bound on the derived threshold, pixels.
    pub outlier_floor: f64,
    /// Clusters with fewer members become outliers.
    pub min_cluster_size: usize,
    /// Fraction of inliers one homography must explain to skip clustering.
    pub single_structure_fraction: f64,
    /// Neighbour rank used for the local scale of the affinity.
    pub scale_neighbor: usize,
    /// Kernel PCA dimension; `None` ties it to the cluster count.
    pub embedding_dim: Option<usize>,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            max_planes: 12,
            epsilon_outlier: None,
            outlier_scale: 3.0,
            outlier_floor: 2.0,
            min_cluster_size: 10,
            single_structure_fraction: 0.9,
            scale_neighbor: 7,
            embedding_dim: None,
            kmeans_restarts: 10,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    /// Outlier threshold for the given best-hypothesis residuals.
    pub fn outlier_threshold(&self, best: &[f64]) -> f64 {
        self.epsilon_outlier
            .unwrap_or_else(|| (self.outlier_scale * noise_scale(best)).max(self.outlier_floor))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialPatches {
    pub labeling: PatchLabeling,
    pub epsilon_outlier: f64,
    pub noise_scale: f64,
    /// Cluster count picked by the eigengap, or 1 when one homography explains the data.
    pub cluster_count: usize,
    pub single_structure: bool,
}

/// Smallest residual of each match over the hypotheses not fit to it.
///
/// A hypothesis passes exactly through its own sample, so counting it would
/// give every sampled match, outliers included, a zero residual.
pub fn held_out_best_residuals(matches: &[Correspondence], hypotheses: &[Hypothesis], kind: ResidualKind) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; matches.len()];
    for hyp in hypotheses {
        for (i, c) in matches.iter().enumerate() {
            if !hyp.sample.contains(&i) {
                best[i] = best[i].min(kind.eval_or_inf(&hyp.homography, c));
            }
        }
    }
    best
}

/// Detects initial planar patches from matches and sampled hypotheses.
pub fn initial_patches(
    matches: &[Correspondence],
    hypotheses: &[Hypothesis],
    ork: &OrkConfig,
    cfg: &ClusterConfig,
) -> Result<InitialPatches, MultiStructureError> {
    let homographies: Vec<_> = hypotheses.iter().map(|h| h.homography).collect();
    let ordered = ordered_residues(matches, &homographies, ork.residual)?;
    let best = held_out_best_residuals(matches, hypotheses, ork.residual);
    let scale = noise_scale(&best);
    let eps = cfg.outlier_threshold(&best);
    let inliers: Vec<usize> = (0..matches.len()).filter(|&i| best[i] <= eps).collect();

    let mut result = InitialPatches {
        labeling: PatchLabeling::all_outliers(matches.len()),
        epsilon_outlier: eps,
        noise_scale: scale,
        cluster_count: 0,
        single_structure: false,
    };
    if inliers.len() < cfg.min_cluster_size.max(2) {
        return Ok(result);
    }

    let mut raw: Vec<Option<usize>> = vec![None; matches.len()];
    if explained_by_one_homography(matches, &inliers, eps, ork.residual, cfg.single_structure_fraction) {
        for &i in &inliers {
            raw[i] = Some(0);
        }
        result.labeling = PatchLabeling::from_raw(&raw);
        result.cluster_count = 1;
        result.single_structure = true;
        return Ok(result);
    }

    let kernel = kernel_matrix(&ordered.select(&inliers), &ork.schedule(hypotheses.len()));
    let assignment = spectral_cluster(&kernel, cfg)?;
    result.cluster_count = assignment.iter().max().map_or(0, |m| m + 1);
    for (&i, &c) in inliers.iter().zip(&assignment) {
        raw[i] = Some(c);
    }
    result.labeling = PatchLabeling::from_raw_in_order(&raw).drop_small(cfg.min_cluster_size);
    Ok(result)
}

/// Trimmed refit of one homography to all inliers; true when it explains
/// at least `fraction` of them within `eps`.
fn explained_by_one_homography(
    matches: &[Correspondence],
    inliers: &[usize],
    eps: f64,
    kind: ResidualKind,
    fraction: f64,
) -> bool {
    let mut support: Vec<usize> = inliers.to_vec();
    for _ in 0..3 {
        let Ok(h) = fit_homography(support.iter().map(|&i| (&matches[i].x, &matches[i].x_prime))) else {
            return false;
        };
        let within: Vec<usize> = inliers
            .iter()
            .copied()
            .filter(|&i| kind.eval_or_inf(&h, &matches[i]) <= eps)
            .collect();
        if within.len() as f64 >= fraction * inliers.len() as f64 {
            return true;
        }
        if within.len() < 4 {
            return false;
        }
        support = within;
    }
    false
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), MultiStructureError> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m, 1e-12, 10_000).ok_or(MultiStructureError::EmbeddingFailed)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
    Ok((values, vectors))
}

/// Kernel PCA coordinates (one row per point) on the top `p` components.
fn kernel_pca(centered_values: &[f64], centered_vectors: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let n = centered_vectors.nrows();
    let p = p.min(n);
    DMatrix::from_fn(n, p, |i, j| {
        centered_vectors[(i, j)] * centered_values[j].max(0.0).sqrt()
    })
}

fn center_kernel(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let row_means: DVector<f64> = DVector::from_fn(n, |i, _| k.row(i).mean());
    let total = row_means.mean();
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - row_means[j] + total)
}

/// Self-tuning Gaussian affinity, normalised as `D^-1/2 A D^-1/2`.
fn normalized_affinity(points: &DMatrix<f64>, neighbor: usize) -> DMatrix<f64> {
    let n = points.nrows();
    let dist2 = DMatrix::from_fn(n, n, |i, j| (points.row(i) - points.row(j)).norm_squared());
    let sigma: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist2[(i, j)]).collect();
            d.sort_by(f64::total_cmp);
            let r = neighbor.min(d.len()).max(1) - 1;
            d.get(r).copied().unwrap_or(0.0).sqrt().max(1e-12)
        })
        .collect();
    let mut a = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (-dist2[(i, j)] / (sigma[i] * sigma[j])).exp()
        }
    });
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum().max(1e-300)).collect();
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] /= (deg[i] * deg[j]).sqrt();
        }
    }
    a
}

/// Index `k ∈ [2, cap]` maximising the gap between the k-th and (k+1)-th eigenvalue.
fn eigengap(values: &[f64], cap: usize) -> usize {
    let cap = cap.min(values.len().saturating_sub(1)).max(2);
    (2..=cap)
        .map(|k| (k, values[k - 1] - values.get(k).copied().unwrap_or(0.0)))
        .fold(
            (2, f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
        .0
}

fn spectral_cluster(kernel: &DMatrix<f64>, cfg: &ClusterConfig) -> Result<Vec<usize>, MultiStructureError> {
    let n = kernel.nrows();
    if n <= 2 {
        return Ok((0..n).collect());
    }
    let (kv, kvec) = sorted_eigen(center_kernel(kernel))?;
    let cap = cfg.max_planes.max(2).min(n - 1);

    let probe = kernel_pca(&kv, &kvec, cap);
    let (av, _) = sorted_eigen(normalized_affinity(&probe, cfg.scale_neighbor))?;
    let k = eigengap(&av, cap);

    let coords = kernel_pca(&kv, &kvec, cfg.embedding_dim.unwrap_or(k));
    let (_, avec) = sorted_eigen(normalized_affinity(&coords, cfg.scale_neighbor))?;
    let mut rows = DMatrix::from_fn(n, k, |i, j| avec[(i, j)]);
    for mut row in rows.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(kmeans(&rows, k, cfg.kmeans_restarts.max(1), cfg.seed))
}

/// Lloyd's k-means with k-means++ seeding; returns the lowest-inertia run.
pub(crate) fn kmeans(points: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let n = points.nrows();
    let d2 = |i: usize, c: &DVector<f64>| (points.row(i).transpose() - c).norm_squared();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let mut centers = vec![points.row(rng.random_range(0..n)).transpose()];
        while centers.len() < k {
            let w: Vec<f64> = (0..n)
                .map(|i| centers.iter().map(|c| d2(i, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = w.iter().sum();
            let pick = if total > 0.0 {
                let mut target = rng.random_range(0.0..total);
                let mut chosen = n - 1;
                for (i, wi) in w.iter().enumerate() {
                    if target < *wi {
                        chosen = i;
                        break;
                    }
                    target -= wi;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            centers.push(points.row(pick).transpose());
        }

        let mut assign = vec![0usize; n];
        for iter in 0..100 {
            let mut changed = false;
            for (i, a) in assign.iter_mut().enumerate() {
                let nearest = (0..k)
                    .min_by(|&x, &y| d2(i, &centers[x]).total_cmp(&d2(i, &centers[y])))
                    .unwrap();
                if nearest != *a || iter == 0 {
                    changed |= nearest != *a;
                    *a = nearest;
                }
            }
            if !changed && iter > 0 {
                break;
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
                if !members.is_empty() {
                    let mut sum = DVector::zeros(points.ncols());
                    for &i in &members {
                        sum += points.row(i).transpose();
                    }
                    *center = sum / members.len() as f64;
                }
            }
        }
        let inertia: f64 = (0..n).map(|i| d2(i, &centers[assign[i]])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}
