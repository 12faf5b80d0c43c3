//! Quality measures for learned state sets.
//!
//! KNN-MSE excludes the query point from its own neighbourhood and breaks
//! distance ties toward the lower index. Pearson correlations use the
//! population (1/n) convention; a constant dimension yields correlation 0
//! and a flag rather than an error.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{chunks, par_map, Exec, Serial};
use crate::linalg::{symmetric_eigen, Matrix};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("row count mismatch: learned has {learned}, ground truth has {gt}")]
    DimensionMismatch { learned: usize, gt: usize },
    #[error("k = {k} needs more than {k} samples, got {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("need at least {needed} samples, got {n}")]
    TooFewSamples { needed: usize, n: usize },
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest rows to row `q` (self excluded), ordered by
/// distance then index.
pub fn nearest_neighbors(points: &Matrix, q: usize, k: usize) -> Vec<usize> {
    let query = points.row(q);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for j in 0..points.rows {
        if j == q {
            continue;
        }
        let d = sq_dist(query, points.row(j));
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        // Later indices never displace equal distances, so ties keep the lower index.
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, j));
        best.truncate(k);
    }
    best.into_iter().map(|(_, j)| j).collect()
}

/// Mean over samples of the average squared ground-truth distance to the
/// `k` nearest neighbours found in the learned space.
pub fn knn_mse(learned: &Matrix, gt: &Matrix, k: usize) -> Result<f64, MetricsError> {
    knn_mse_with(&Serial, learned, gt, k)
}

pub fn knn_mse_with(exec: &dyn Exec, learned: &Matrix, gt: &Matrix, k: usize) -> Result<f64, MetricsError> {
    if learned.rows != gt.rows {
        return Err(MetricsError::DimensionMismatch { learned: learned.rows, gt: gt.rows });
    }
    let n = learned.rows;
    if k == 0 || k >= n {
        return Err(MetricsError::KTooLarge { k, n });
    }
    const QUERIES: usize = 256;
    let parts = par_map(exec, n.div_ceil(QUERIES), |c| {
        chunks(n, QUERIES)
            .nth(c)
            .unwrap()
            .map(|q| {
                let nn = nearest_neighbors(learned, q, k);
                nn.iter().map(|&j| sq_dist(gt.row(q), gt.row(j))).sum::<f64>() / k as f64
            })
            .collect::<Vec<f64>>()
    });
    let total: f64 = parts.iter().flatten().sum();
    Ok(total / n as f64)
}

/// Pearson correlations between learned dimensions (rows) and
/// ground-truth dimensions (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub learned_labels: Vec<String>,
    pub gt_labels: Vec<String>,
    pub entries: Matrix,
    pub learned_mean: Vec<f64>,
    pub learned_std: Vec<f64>,
    /// Dimensions with zero variance, e.g. `zero_variance:learned[2]`.
    pub flags: Vec<String>,
}

fn mean_std(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = m.column_means();
    let n = m.rows as f64;
    let std = (0..m.cols)
        .map(|j| ((0..m.rows).map(|i| (m.get(i, j) - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (mean, std)
}

pub fn correlation_matrix(learned: &Matrix, gt: &Matrix, gt_labels: &[&str]) -> Result<CorrelationMatrix, MetricsError> {
    if learned.rows != gt.rows {
        return Err(MetricsError::DimensionMismatch { learned: learned.rows, gt: gt.rows });
    }
    if learned.rows < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, n: learned.rows });
    }
    let n = learned.rows as f64;
    let (lm, ls) = mean_std(learned);
    let (gm, gs) = mean_std(gt);
    let mut flags = Vec::new();
    for (j, &s) in ls.iter().enumerate() {
        if s == 0.0 {
            flags.push(format!("zero_variance:learned[{j}]"));
        }
    }
    for (j, &s) in gs.iter().enumerate() {
        if s == 0.0 {
            flags.push(format!("zero_variance:gt[{j}]"));
        }
    }
    let mut entries = Matrix::zeros(learned.cols, gt.cols);
    for a in 0..learned.cols {
        for b in 0..gt.cols {
            if ls[a] == 0.0 || gs[b] == 0.0 {
                continue;
            }
            let cov = (0..learned.rows).map(|i| (learned.get(i, a) - lm[a]) * (gt.get(i, b) - gm[b])).sum::<f64>() / n;
            entries.set(a, b, (cov / (ls[a] * gs[b])).clamp(-1.0, 1.0));
        }
    }
    let gt_labels = (0..gt.cols).map(|j| gt_labels.get(j).map_or_else(|| format!("gt{j}"), |s| String::from(*s))).collect();
    Ok(CorrelationMatrix {
        learned_labels: (0..learned.cols).map(|j| format!("s{j}")).collect(),
        gt_labels,
        entries,
        learned_mean: lm,
        learned_std: ls,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtcVector {
    /// Per ground-truth component: max over learned dims of |correlation|.
    pub components: Vec<f64>,
    pub mean: f64,
}

pub fn gtc(corr: &CorrelationMatrix) -> GtcVector {
    let e = &corr.entries;
    let components: Vec<f64> = (0..e.cols).map(|j| (0..e.rows).map(|i| e.get(i, j).abs()).fold(0.0, f64::max)).collect();
    let mean = if components.is_empty() { 0.0 } else { components.iter().sum::<f64>() / components.len() as f64 };
    GtcVector { components, mean }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `dim x out_dim`, one principal axis per column.
    pub components: Matrix,
    pub explained_variance_ratio: Vec<f64>,
    pub projected: Matrix,
}

impl Pca {
    /// Coordinates of a new point in the principal axes.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let c = &self.components;
        (0..c.cols).map(|k| (0..c.rows).map(|r| (x[r] - self.mean[r]) * c.get(r, k)).sum()).collect()
    }
}

/// Projects centred `states` onto the top `out_dim` covariance
/// eigenvectors (fewer if the data has fewer dimensions). Each axis is
/// oriented so its largest-magnitude loading is positive.
pub fn pca_project(states: &Matrix, out_dim: usize) -> Result<Pca, MetricsError> {
    if states.rows <= out_dim {
        return Err(MetricsError::TooFewSamples { needed: out_dim + 1, n: states.rows });
    }
    let (n, d) = (states.rows, states.cols);
    let mean = states.column_means();
    let mut centred = states.clone();
    for i in 0..n {
        for (v, m) in centred.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = centred.transpose().matmul(&centred);
    cov.data.iter_mut().for_each(|v| *v /= n as f64);
    let eig = symmetric_eigen(&cov);
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let k = out_dim.min(d);
    let mut components = Matrix::zeros(d, k);
    for c in 0..k {
        let col = eig.vectors.column(c);
        let lead = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            components.set(r, c, sign * col[r]);
        }
    }
    let explained_variance_ratio =
        (0..k).map(|c| if total > 0.0 { eig.values[c].max(0.0) / total } else { 0.0 }).collect();
    let projected = centred.matmul(&components);
    Ok(Pca { mean, components, explained_variance_ratio, projected })
}

/// Pads or projects states to exactly three columns for plotting:
/// identity with zero padding when `dim <= 3`, PCA otherwise.
pub fn project3(states: &Matrix) -> Result<Matrix, MetricsError> {
    if states.cols <= 3 {
        let mut out = Matrix::zeros(states.rows, 3);
        for i in 0..states.rows {
            out.row_mut(i)[..states.cols].copy_from_slice(states.row(i));
        }
        return Ok(out);
    }
    Ok(pca_project(states, 3)?.projected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub knn_mse: f64,
    pub k: usize,
    pub correlation: CorrelationMatrix,
    pub gtc: Vec<f64>,
    pub gtc_mean: f64,
    pub flags: Vec<String>,
}

pub fn evaluate(exec: &dyn Exec, learned: &Matrix, gt: &Matrix, gt_labels: &[&str], k: usize) -> Result<MetricsReport, MetricsError> {
    let knn = knn_mse_with(exec, learned, gt, k)?;
    let corr = correlation_matrix(learned, gt, gt_labels)?;
    let g = gtc(&corr);
    Ok(MetricsReport { knn_mse: knn, k, flags: corr.flags.clone(), correlation: corr, gtc: g.components, gtc_mean: g.mean })
}

/// Column-stacked copy of `m` with row `i` of every column transformed.
#[doc(hidden)]
pub fn map_columns(m: &Matrix, f: impl Fn(usize, f64) -> f64) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows {
        for j in 0..m.cols {
            out.set(i, j, f(j, m.get(i, j)));
        }
    }
    out
}
