//! Cluster-robust (sandwich) covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::RegressionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallSampleCorrection {
    /// `G/(G-1) * (N-1)/(N-K)`.
    #[default]
    Standard,
    None,
}

#[derive(Debug, Clone)]
pub struct ClusteredCovariance {
    pub matrix: DMatrix<f64>,
    pub n_clusters: usize,
    /// Set when every cluster holds a single observation.
    pub singleton_clusters_only: bool,
}

impl ClusteredCovariance {
    pub fn standard_errors(&self) -> Vec<f64> {
        self.matrix
            .diagonal()
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    }
}

/// `(X'X)^{-1} (Σ_g X_g' u_g u_g' X_g) (X'X)^{-1}`, scaled by the chosen
/// small-sample factor. `k` is the total parameter count including absorbed
/// fixed-effect levels. `clusters` are dense codes `0..G`.
pub fn clustered_covariance(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    xtx_inv: &DMatrix<f64>,
    clusters: &[usize],
    k: usize,
    correction: SmallSampleCorrection,
) -> Result<ClusteredCovariance, RegressionError> {
    let n = x.nrows();
    let p = x.ncols();
    let g = clusters.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; g];
    for &c in clusters {
        sizes[c] += 1;
    }
    let n_clusters = sizes.iter().filter(|&&s| s > 0).count();
    if n_clusters < 2 {
        return Err(RegressionError::TooFewClusters(n_clusters));
    }
    let singleton_clusters_only = sizes.iter().all(|&s| s <= 1);
    if singleton_clusters_only {
        log::warn!("every cluster has one observation; clustered covariance reduces to HC1");
    }

    // cluster scores s_g = X_g' u_g, stacked as rows
    let mut scores = DMatrix::<f64>::zeros(g, p);
    for i in 0..n {
        let u = residuals[i];
        let c = clusters[i];
        for j in 0..p {
            scores[(c, j)] += x[(i, j)] * u;
        }
    }
    let meat = scores.transpose() * &scores;
    let mut v = xtx_inv * meat * xtx_inv;
    if correction == SmallSampleCorrection::Standard {
        let gf = n_clusters as f64;
        let factor = gf / (gf - 1.0) * (n as f64 - 1.0) / (n as f64 - k as f64);
        v *= factor;
    }
    Ok(ClusteredCovariance {
        matrix: v,
        n_clusters,
        singleton_clusters_only,
    })
}
