//! Small descriptive-statistics helpers shared by winsorization, summary
//! tables, and the group tests.

use serde::{Deserialize, Serialize};

/// Sample quantile convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMethod {
    /// Hyndman & Fan type 7: linear interpolation at position `(n-1)p + 1`.
    #[default]
    Linear,
    /// Hyndman & Fan type 1: inverse of the empirical CDF, always an order statistic.
    InvertedCdf,
}

/// Quantile of an already sorted, non-empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64, method: QuantileMethod) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let p = p.clamp(0.0, 1.0);
    match method {
        QuantileMethod::Linear => {
            // zero-based position of h = (n-1)p + 1
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let frac = h - lo as f64;
            if lo + 1 >= n {
                sorted[n - 1]
            } else if frac == 0.0 {
                sorted[lo]
            } else {
                sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
            }
        }
        QuantileMethod::InvertedCdf => {
            let np = n as f64 * p;
            let k = np.ceil() as usize;
            sorted[k.clamp(1, n) - 1]
        }
    }
}

/// Sorted copy of the finite values.
pub fn sorted_finite(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the `n - 1` divisor.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    if values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn std_dev(values: &[f64]) -> f64 {
    variance(values).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let sorted = sorted_finite(values.iter().copied());
    if sorted.is_empty() {
        return f64::NAN;
    }
    quantile_sorted(&sorted, 0.5, QuantileMethod::Linear)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quartiles_of_one_to_five() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.25, QuantileMethod::Linear), 2.0);
        assert_eq!(quantile_sorted(&v, 0.5, QuantileMethod::Linear), 3.0);
        assert_eq!(quantile_sorted(&v, 0.75, QuantileMethod::Linear), 4.0);
    }

    #[test]
    fn type7_interpolates_between_order_statistics() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let lo = quantile_sorted(&v, 0.01, QuantileMethod::Linear);
        let hi = quantile_sorted(&v, 0.99, QuantileMethod::Linear);
        assert!((lo - 1.99).abs() < 1e-12);
        assert!((hi - 99.01).abs() < 1e-12);
    }

    #[test]
    fn inverted_cdf_returns_order_statistics() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile_sorted(&v, 0.01, QuantileMethod::InvertedCdf), 1.0);
        assert_eq!(quantile_sorted(&v, 0.99, QuantileMethod::InvertedCdf), 99.0);
        assert_eq!(quantile_sorted(&v, 0.5, QuantileMethod::InvertedCdf), 50.0);
    }

    #[test]
    fn median_even_length() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
