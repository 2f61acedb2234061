//! Two-way fixed-effects OLS with cluster-robust inference.
//!
//! Firm and year effects are swept out by alternating demeaning, the grand
//! means are added back so that a `_cons` is reported, and the slopes are
//! estimated by QR least squares. Standard errors are clustered (industry by
//! default) with the `G/(G-1) * (N-1)/(N-K)` correction, where `K` counts the
//! absorbed fixed-effect levels as well as the slopes and intercept.

pub mod absorb;
pub mod cluster;
pub mod ols;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::panel::{PanelDataset, PanelError};
pub use absorb::{absorb_fixed_effects, AbsorbInfo, FeGroups, FixedEffectsSpec};
pub use cluster::{clustered_covariance, ClusteredCovariance, SmallSampleCorrection};
pub use ols::{adjusted_r2, fit_ols, r_squared, OlsFit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressionError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("regressor `{0}` is collinear with earlier columns")]
    RankDeficient(String),
    #[error("design has no columns")]
    EmptyDesign,
    #[error("{n_obs} observations cannot identify {n_params} parameters")]
    TooFewObservations { n_obs: usize, n_params: usize },
    #[error("adjusted R² undefined with n = {n_obs}, k = {k}")]
    UndefinedDoF { n_obs: usize, k: usize },
    #[error("clustered covariance needs at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("fixed-effect absorption did not converge in {sweeps} sweeps (last change {delta:e})")]
    NonConvergence { sweeps: usize, delta: f64 },
}

impl From<PanelError> for RegressionError {
    fn from(e: PanelError) -> Self {
        match e {
            PanelError::UnknownVariable(v) => RegressionError::UnknownVariable(v),
            other => RegressionError::UnknownVariable(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub cluster_variable: String,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            cluster_variable: "industry".into(),
        }
    }
}

/// A regression to run on a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Specification {
    pub dependent: String,
    #[serde(default)]
    pub regressors: Vec<String>,
    /// Element-wise products, named `a:b`, appended after `regressors`.
    #[serde(default)]
    pub interactions: Vec<(String, String)>,
    #[serde(default)]
    pub fe: FixedEffectsSpec,
    #[serde(default)]
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub correction: SmallSampleCorrection,
}

impl Specification {
    pub fn new(dependent: &str, regressors: &[&str]) -> Self {
        Self {
            dependent: dependent.into(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            interactions: Vec::new(),
            fe: FixedEffectsSpec::TWO_WAY,
            cluster: ClusterSpec::default(),
            correction: SmallSampleCorrection::Standard,
        }
    }

    pub fn with_interaction(mut self, a: &str, b: &str) -> Self {
        self.interactions.push((a.into(), b.into()));
        self
    }

    pub fn slope_names(&self) -> Vec<String> {
        let mut names = self.regressors.clone();
        names.extend(
            self.interactions
                .iter()
                .map(|(a, b)| interaction_name(a, b)),
        );
        names
    }

    /// Every panel variable the specification reads.
    pub fn variables(&self) -> Vec<&str> {
        let mut v = vec![self.dependent.as_str()];
        v.extend(self.regressors.iter().map(String::as_str));
        for (a, b) in &self.interactions {
            v.push(a);
            v.push(b);
        }
        v
    }
}

pub fn interaction_name(a: &str, b: &str) -> String {
    format!("{a}:{b}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeSummary {
    pub absorb_firm: bool,
    pub absorb_year: bool,
    pub firm_levels: usize,
    pub year_levels: usize,
    pub absorbed_dof: usize,
    pub sweeps: usize,
    pub singletons_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub dependent: String,
    /// Slopes in specification order, then `_cons`.
    pub coefficients: Vec<CoefficientEstimate>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub cluster_variable: String,
    /// Parameter count used for degrees of freedom (slopes, intercept, absorbed levels).
    pub n_params: usize,
    pub r2: f64,
    pub adj_r2: f64,
    pub fe: FeSummary,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub fitted: Vec<f64>,
    /// Panel row index of each estimation observation.
    #[serde(skip)]
    pub rows: Vec<usize>,
}

impl RegressionResult {
    pub fn coef(&self, name: &str) -> Option<&CoefficientEstimate> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

fn resolve_column(panel: &PanelDataset, name: &str) -> Result<Vec<Option<f64>>, RegressionError> {
    if let Some((a, b)) = name.split_once(':') {
        let ca = panel.require(a)?;
        let cb = panel.require(b)?;
        return Ok(ca
            .iter()
            .zip(cb)
            .map(|(x, y)| Some((*x)? * (*y)?))
            .collect());
    }
    Ok(panel.require(name)?.to_vec())
}

/// Fits a specification after list-wise deletion of rows with any missing
/// variable. With firm effects, firms observed once are dropped.
pub fn run_specification(
    panel: &PanelDataset,
    spec: &Specification,
) -> Result<RegressionResult, RegressionError> {
    let slope_names = spec.slope_names();
    let y_all = resolve_column(panel, &spec.dependent)?;
    let x_all: Vec<Vec<Option<f64>>> = slope_names
        .iter()
        .map(|n| resolve_column(panel, n))
        .collect::<Result<_, _>>()?;
    let cluster_labels = panel.labels(&spec.cluster.cluster_variable)?;

    let usable = |i: usize| {
        y_all[i].is_some_and(f64::is_finite)
            && x_all.iter().all(|c| c[i].is_some_and(f64::is_finite))
            && !cluster_labels[i].is_empty()
    };
    let mut rows: Vec<usize> = (0..panel.len()).filter(|&i| usable(i)).collect();

    let keys = panel.keys();
    let mut singletons_dropped = 0;
    if spec.fe.absorb_firm {
        let mut counts = std::collections::HashMap::new();
        for &i in &rows {
            *counts.entry(keys[i].0.as_str()).or_insert(0usize) += 1;
        }
        let before = rows.len();
        rows.retain(|&i| counts[keys[i].0.as_str()] > 1);
        singletons_dropped = before - rows.len();
        if singletons_dropped > 0 {
            log::info!("dropped {singletons_dropped} singleton firm observations");
        }
    }

    let y: Vec<f64> = rows.iter().map(|&i| y_all[i].unwrap()).collect();
    let x: Vec<Vec<f64>> = x_all
        .iter()
        .map(|c| rows.iter().map(|&i| c[i].unwrap()).collect())
        .collect();
    let firms: Vec<&str> = rows.iter().map(|&i| keys[i].0.as_str()).collect();
    let years: Vec<i32> = rows.iter().map(|&i| keys[i].1).collect();
    let clusters: Vec<&str> = rows.iter().map(|&i| cluster_labels[i].as_str()).collect();

    let mut result = fit_fixed_effects(
        &y,
        &x,
        &slope_names,
        &firms,
        &years,
        &clusters,
        spec.fe,
        spec.correction,
    )?;
    result.dependent = spec.dependent.clone();
    result.cluster_variable = spec.cluster.cluster_variable.clone();
    result.fe.singletons_dropped = singletons_dropped;
    result.rows = rows;
    Ok(result)
}

/// Core estimator on already-aligned data.
#[allow(clippy::too_many_arguments)]
pub fn fit_fixed_effects<F: Ord + Clone, Y: Ord + Clone, C: Ord + Clone>(
    y: &[f64],
    x: &[Vec<f64>],
    names: &[String],
    firms: &[F],
    years: &[Y],
    clusters: &[C],
    fe: FixedEffectsSpec,
    correction: SmallSampleCorrection,
) -> Result<RegressionResult, RegressionError> {
    let n = y.len();
    let p = x.len();
    if n == 0 {
        return Err(RegressionError::TooFewObservations {
            n_obs: 0,
            n_params: p + 1,
        });
    }
    let groups = FeGroups::from_labels(firms, years);

    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
    cols.push(y.to_vec());
    cols.extend(x.iter().cloned());
    let means: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    let info = absorb_fixed_effects(
        &mut cols,
        &groups,
        fe,
        absorb::DEFAULT_TOLERANCE,
        absorb::DEFAULT_MAX_SWEEPS,
    )?;
    if fe.absorb_firm || fe.absorb_year {
        for (c, m) in cols.iter_mut().zip(&means) {
            c.iter_mut().for_each(|v| *v += m);
        }
    }

    let yv = DVector::from_vec(cols[0].clone());
    let xm = DMatrix::from_fn(n, p, |i, j| cols[j + 1][i]);
    let n_params = p + info.fe_rank;
    if n <= n_params {
        return Err(RegressionError::TooFewObservations { n_obs: n, n_params });
    }
    let fit = fit_ols(&yv, &xm, names, true)?;

    let (cluster_codes, _) = absorb::encode(clusters);
    let cov = clustered_covariance(
        &fit.design,
        &fit.residuals,
        &fit.xtx_inv,
        &cluster_codes,
        n_params,
        correction,
    )?;
    let se = cov.standard_errors();
    let t_dist = StudentsT::new(0.0, 1.0, (cov.n_clusters - 1) as f64).expect("df >= 1");

    let estimate = |j: usize| {
        let t = fit.coefficients[j] / se[j];
        let p_value = if t.is_nan() {
            f64::NAN
        } else {
            (2.0 * (1.0 - t_dist.cdf(t.abs()))).clamp(0.0, 1.0)
        };
        CoefficientEstimate {
            name: fit.names[j].clone(),
            estimate: fit.coefficients[j],
            std_error: se[j],
            t_value: t,
            p_value,
        }
    };
    // design column 0 is the intercept; report it last
    let mut coefficients: Vec<CoefficientEstimate> = (1..=p).map(estimate).collect();
    coefficients.push(estimate(0));

    let residuals: Vec<f64> = fit.residuals.iter().copied().collect();
    let fitted: Vec<f64> = y.iter().zip(&residuals).map(|(a, e)| a - e).collect();
    let r2 = r_squared(y, &fitted);
    let adj_r2 = adjusted_r2(y, &fitted, n_params - 1)?;

    let mut warnings = Vec::new();
    if cov.singleton_clusters_only {
        warnings.push("every cluster has a single observation".to_string());
    }
    Ok(RegressionResult {
        dependent: String::new(),
        coefficients,
        n_obs: n,
        n_clusters: cov.n_clusters,
        cluster_variable: String::new(),
        n_params,
        r2,
        adj_r2,
        fe: FeSummary {
            absorb_firm: fe.absorb_firm,
            absorb_year: fe.absorb_year,
            firm_levels: info.firm_levels,
            year_levels: info.year_levels,
            absorbed_dof: info.fe_rank - 1,
            sweeps: info.sweeps,
            singletons_dropped: 0,
        },
        warnings,
        residuals,
        fitted,
        rows: Vec::new(),
    })
}
