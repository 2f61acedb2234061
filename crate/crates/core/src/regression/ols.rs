//! Least squares via Householder QR.

use nalgebra::{DMatrix, DVector};

use super::RegressionError;

/// Columns whose QR diagonal falls below this fraction of the column norm
/// are treated as linearly dependent on earlier columns.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Column names of the design, intercept (if any) first.
    pub names: Vec<String>,
    pub design: DMatrix<f64>,
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub fitted: DVector<f64>,
    /// `(X'X)^{-1}`, formed as `R^{-1} R^{-T}`.
    pub xtx_inv: DMatrix<f64>,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.coefficients[j])
    }
}

/// Fits `y` on the columns of `x` (plus a leading `_cons` column when
/// `add_intercept`).
pub fn fit_ols(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    names: &[String],
    add_intercept: bool,
) -> Result<OlsFit, RegressionError> {
    let n = y.len();
    assert_eq!(x.nrows(), n, "design rows must match y");
    assert_eq!(x.ncols(), names.len(), "one name per design column");

    let (design, names) = if add_intercept {
        let mut d = DMatrix::from_element(n, x.ncols() + 1, 1.0);
        d.view_mut((0, 1), (n, x.ncols())).copy_from(x);
        let mut nm = vec!["_cons".to_string()];
        nm.extend(names.iter().cloned());
        (d, nm)
    } else {
        (x.clone(), names.to_vec())
    };
    let k = design.ncols();
    if k == 0 {
        return Err(RegressionError::EmptyDesign);
    }
    if n <= k {
        return Err(RegressionError::TooFewObservations {
            n_obs: n,
            n_params: k,
        });
    }

    let qr = design.clone().qr();
    let r = qr.r();
    for j in 0..k {
        let col_norm = design.column(j).norm();
        if col_norm == 0.0 || r[(j, j)].abs() <= RANK_TOLERANCE * col_norm {
            return Err(RegressionError::RankDeficient(names[j].clone()));
        }
    }
    let q = qr.q();
    let qty = q.transpose() * y;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| RegressionError::RankDeficient(names[k - 1].clone()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| RegressionError::RankDeficient(names[k - 1].clone()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let fitted = &design * &coefficients;
    let residuals = y - &fitted;
    Ok(OlsFit {
        names,
        design,
        coefficients,
        residuals,
        fitted,
        xtx_inv,
    })
}

/// `1 - (1 - R^2)(n - 1)/(n - k - 1)`, where `k` counts slopes and absorbed
/// fixed-effect levels but not the intercept.
pub fn adjusted_r2(y: &[f64], fitted: &[f64], k: usize) -> Result<f64, RegressionError> {
    let n = y.len();
    if n <= k + 1 {
        return Err(RegressionError::UndefinedDoF { n_obs: n, k });
    }
    let r2 = r_squared(y, fitted);
    Ok(1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - k as f64 - 1.0))
}

pub fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    if sst == 0.0 {
        return if ssr == 0.0 { 1.0 } else { f64::NAN };
    }
    1.0 - ssr / sst
}
