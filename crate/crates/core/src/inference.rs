//! Summary statistics and between-group tests.
//!
//! Every resampling test draws replication `r` from a ChaCha8 stream
//! `seed_from_u64(seed)` with stream id `r`, so replications can run in any
//! order or in parallel and still give the same p-value.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};
use thiserror::Error;

use crate::panel::PanelDataset;
use crate::regression::{run_specification, RegressionError, Specification};
use crate::stats::{self, QuantileMethod};

/// Smallest replication count accepted by the resampling tests.
pub const MIN_REPLICATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("group `{group}` has {n} observations, need at least {need}")]
    TooFewObservations {
        group: String,
        n: usize,
        need: usize,
    },
    #[error("group `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("{0} replications requested, need at least {MIN_REPLICATIONS}")]
    TooFewReplications(usize),
    #[error("`{0}` is estimable in one group only")]
    IncomparableSamples(String),
    #[error("focal regressor `{0}` is not in the specification")]
    UnknownFocal(String),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

/// `***` below 0.01, `**` below 0.05, `*` below 0.1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variable: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

pub fn summarize(variable: &str, values: &[f64]) -> SummaryRow {
    let sorted = stats::sorted_finite(values.iter().copied());
    let q = |p| stats::quantile_sorted(&sorted, p, QuantileMethod::Linear);
    SummaryRow {
        variable: variable.into(),
        n: sorted.len(),
        mean: stats::mean(&sorted),
        sd: stats::std_dev(&sorted),
        min: sorted.first().copied().unwrap_or(f64::NAN),
        p25: q(0.25),
        median: q(0.5),
        p75: q(0.75),
        max: sorted.last().copied().unwrap_or(f64::NAN),
    }
}

/// N, mean, sd, min, quartiles, max for each variable, over non-missing values.
pub fn summary_statistics(
    panel: &PanelDataset,
    variables: &[&str],
) -> Result<Vec<SummaryRow>, InferenceError> {
    variables
        .iter()
        .map(|v| {
            let col = panel
                .column(v)
                .ok_or_else(|| InferenceError::UnknownVariable(v.to_string()))?;
            let vals: Vec<f64> = col.iter().flatten().copied().collect();
            Ok(summarize(v, &vals))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    /// Two-sided F ratio test.
    #[default]
    FRatio,
    /// Levene's test on absolute deviations from the group means.
    Levene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceTest {
    pub method: VarianceMethod,
    /// `sd(group2) / sd(group1)`.
    pub sd_ratio: f64,
    pub statistic: f64,
    pub df: (f64, f64),
    pub p_value: f64,
}

fn check_group(name: &str, g: &[f64], need: usize) -> Result<(), InferenceError> {
    if g.len() < need {
        return Err(InferenceError::TooFewObservations {
            group: name.into(),
            n: g.len(),
            need,
        });
    }
    Ok(())
}

/// `F = s2² / s1²` against `F(n2 − 1, n1 − 1)`, two-sided.
pub fn variance_homogeneity_test(g1: &[f64], g2: &[f64]) -> Result<VarianceTest, InferenceError> {
    variance_test(g1, g2, VarianceMethod::FRatio)
}

pub fn variance_test(
    g1: &[f64],
    g2: &[f64],
    method: VarianceMethod,
) -> Result<VarianceTest, InferenceError> {
    check_group("group1", g1, 2)?;
    check_group("group2", g2, 2)?;
    let (v1, v2) = (stats::variance(g1), stats::variance(g2));
    if v1 == 0.0 {
        return Err(InferenceError::ZeroVariance("group1".into()));
    }
    if v2 == 0.0 {
        return Err(InferenceError::ZeroVariance("group2".into()));
    }
    let sd_ratio = (v2 / v1).sqrt();
    let (n1, n2) = (g1.len() as f64, g2.len() as f64);
    match method {
        VarianceMethod::FRatio => {
            let f = v2 / v1;
            let dist = FisherSnedecor::new(n2 - 1.0, n1 - 1.0).expect("df > 0");
            let c = dist.cdf(f);
            Ok(VarianceTest {
                method,
                sd_ratio,
                statistic: f,
                df: (n2 - 1.0, n1 - 1.0),
                p_value: (2.0 * c.min(1.0 - c)).clamp(0.0, 1.0),
            })
        }
        VarianceMethod::Levene => {
            let dev = |g: &[f64]| {
                let m = stats::mean(g);
                g.iter().map(|x| (x - m).abs()).collect::<Vec<f64>>()
            };
            let (z1, z2) = (dev(g1), dev(g2));
            let (m1, m2) = (stats::mean(&z1), stats::mean(&z2));
            let n = n1 + n2;
            let grand = (m1 * n1 + m2 * n2) / n;
            let between = n1 * (m1 - grand).powi(2) + n2 * (m2 - grand).powi(2);
            let within: f64 = z1.iter().map(|z| (z - m1).powi(2)).sum::<f64>()
                + z2.iter().map(|z| (z - m2).powi(2)).sum::<f64>();
            let w = (n - 2.0) * between / within;
            let dist = FisherSnedecor::new(1.0, n - 2.0).expect("df > 0");
            Ok(VarianceTest {
                method,
                sd_ratio,
                statistic: w,
                df: (1.0, n - 2.0),
                p_value: if w.is_finite() { dist.sf(w) } else { 0.0 },
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianMethod {
    #[default]
    Permutation,
    /// Mood's median test (chi-square, one df).
    Mood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianTest {
    pub method: MedianMethod,
    pub median1: f64,
    pub median2: f64,
    /// `median(group1) − median(group2)`.
    pub median_diff: f64,
    pub p_value: f64,
    pub seed: u64,
    pub replications: usize,
}

/// Generator for replication `rep`.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn median_of(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    stats::quantile_sorted(&s, 0.5, QuantileMethod::Linear)
}

/// `|t| >= |observed|`, with a relative slack for ties lost to rounding.
fn as_extreme(t: f64, observed: f64) -> bool {
    t.abs() >= observed.abs() - 1e-12 * observed.abs().max(1e-300)
}

/// Permutation p-value `(count + 1) / (B + 1)`, two-sided.
pub fn median_difference_test(
    g1: &[f64],
    g2: &[f64],
    b: usize,
    seed: u64,
) -> Result<MedianTest, InferenceError> {
    median_test(g1, g2, b, seed, MedianMethod::Permutation)
}

pub fn median_test(
    g1: &[f64],
    g2: &[f64],
    b: usize,
    seed: u64,
    method: MedianMethod,
) -> Result<MedianTest, InferenceError> {
    check_group("group1", g1, 1)?;
    check_group("group2", g2, 1)?;
    let (m1, m2) = (median_of(g1), median_of(g2));
    let observed = m1 - m2;
    let p_value = match method {
        MedianMethod::Permutation => {
            if b < MIN_REPLICATIONS {
                return Err(InferenceError::TooFewReplications(b));
            }
            // sorting first makes the result depend only on the two multisets
            let mut pooled: Vec<f64> = g1.iter().chain(g2).copied().collect();
            pooled.sort_by(f64::total_cmp);
            let n1 = g1.len();
            let count: usize = (0..b)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replication_rng(seed, r);
                    let mut perm = pooled.clone();
                    perm.shuffle(&mut rng);
                    let t = median_of(&perm[..n1]) - median_of(&perm[n1..]);
                    as_extreme(t, observed) as usize
                })
                .sum();
            (count + 1) as f64 / (b + 1) as f64
        }
        MedianMethod::Mood => {
            let mut pooled: Vec<f64> = g1.iter().chain(g2).copied().collect();
            pooled.sort_by(f64::total_cmp);
            let grand = stats::quantile_sorted(&pooled, 0.5, QuantileMethod::Linear);
            let above = |g: &[f64]| g.iter().filter(|&&x| x > grand).count() as f64;
            let table = [
                [above(g1), g1.len() as f64 - above(g1)],
                [above(g2), g2.len() as f64 - above(g2)],
            ];
            let n = pooled.len() as f64;
            let mut chi2 = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let row: f64 = table[i].iter().sum();
                    let col = table[0][j] + table[1][j];
                    let e = row * col / n;
                    if e > 0.0 {
                        chi2 += (table[i][j] - e).powi(2) / e;
                    }
                }
            }
            ChiSquared::new(1.0).expect("df 1").sf(chi2)
        }
    };
    Ok(MedianTest {
        method,
        median1: m1,
        median2: m2,
        median_diff: observed,
        p_value,
        seed,
        replications: if method == MedianMethod::Permutation {
            b
        } else {
            0
        },
    })
}

/// Table-3 style comparison of one variable across two groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTestReport {
    pub variable: String,
    pub labels: [String; 2],
    pub n: [usize; 2],
    pub mean: [f64; 2],
    pub median: [f64; 2],
    pub sd_ratio: f64,
    pub variance_method: VarianceMethod,
    pub variance_p: f64,
    pub variance_stars: String,
    pub median_diff: f64,
    pub median_method: MedianMethod,
    pub median_diff_p: f64,
    pub median_stars: String,
    pub seed: u64,
    pub replications: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn group_test_report(
    variable: &str,
    labels: [&str; 2],
    g1: &[f64],
    g2: &[f64],
    b: usize,
    seed: u64,
    variance_method: VarianceMethod,
    median_method: MedianMethod,
) -> Result<GroupTestReport, InferenceError> {
    let var = variance_test(g1, g2, variance_method)?;
    let med = median_test(g1, g2, b, seed, median_method)?;
    Ok(GroupTestReport {
        variable: variable.into(),
        labels: [labels[0].into(), labels[1].into()],
        n: [g1.len(), g2.len()],
        mean: [stats::mean(g1), stats::mean(g2)],
        median: [med.median1, med.median2],
        sd_ratio: var.sd_ratio,
        variance_method,
        variance_p: var.p_value,
        variance_stars: stars(var.p_value).into(),
        median_diff: med.median_diff,
        median_method,
        median_diff_p: med.p_value,
        median_stars: stars(med.p_value).into(),
        seed,
        replications: med.replications,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefDiffMethod {
    /// Group labels permuted across firms.
    #[default]
    FirmPermutation,
    /// Firms resampled with replacement within each group.
    FirmBootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefDiffPoint {
    pub replications: usize,
    pub p_value: f64,
    /// Replications whose regressions failed and were left out.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefDiffReport {
    pub focal: String,
    pub labels: [String; 2],
    pub coefficient: [f64; 2],
    /// `coefficient[0] − coefficient[1]`.
    pub difference: f64,
    pub method: CoefDiffMethod,
    pub seed: u64,
    pub points: Vec<CoefDiffPoint>,
}

fn focal_coef(
    panel: &PanelDataset,
    spec: &Specification,
    focal: &str,
    mask: &[bool],
) -> Result<f64, RegressionError> {
    let sub = panel.filter(mask);
    let r = run_specification(&sub, spec)?;
    Ok(r.coef(focal).expect("focal checked").estimate)
}

/// Fits `spec` separately in each group (`in_group1[i]` true / false; `None`
/// rows are left out) and tests the difference of the `focal` coefficient.
///
/// Under `FirmPermutation` each firm carries its most frequent label, and the
/// firm labels are shuffled. The p-value for each entry of `b_list` uses the
/// first `B` replications.
#[allow(clippy::too_many_arguments)]
pub fn coefficient_difference_test(
    panel: &PanelDataset,
    spec: &Specification,
    focal: &str,
    in_group1: &[Option<bool>],
    labels: [&str; 2],
    b_list: &[usize],
    seed: u64,
    method: CoefDiffMethod,
) -> Result<CoefDiffReport, InferenceError> {
    if !spec.slope_names().iter().any(|n| n == focal) {
        return Err(InferenceError::UnknownFocal(focal.into()));
    }
    if let Some(&b) = b_list.iter().find(|&&b| b < MIN_REPLICATIONS) {
        return Err(InferenceError::TooFewReplications(b));
    }
    let b_max = b_list.iter().copied().max().unwrap_or(0);

    let mask1: Vec<bool> = in_group1.iter().map(|g| *g == Some(true)).collect();
    let mask2: Vec<bool> = in_group1.iter().map(|g| *g == Some(false)).collect();
    let c1 = focal_coef(panel, spec, focal, &mask1);
    let c2 = focal_coef(panel, spec, focal, &mask2);
    let (c1, c2) = match (c1, c2) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(RegressionError::RankDeficient(v)), Ok(_))
        | (Ok(_), Err(RegressionError::RankDeficient(v))) => {
            return Err(InferenceError::IncomparableSamples(v))
        }
        (Err(e), _) | (_, Err(e)) => return Err(e.into()),
    };
    let observed = c1 - c2;

    // firm → rows, and each firm's modal label
    let keys = panel.keys();
    let mut firm_rows: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut firm_votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, g) in in_group1.iter().enumerate() {
        let Some(g) = g else { continue };
        let f = keys[i].0.as_str();
        firm_rows.entry(f).or_default().push(i);
        let v = firm_votes.entry(f).or_default();
        if *g {
            v.0 += 1;
        } else {
            v.1 += 1;
        }
    }
    let firms: Vec<&str> = firm_rows.keys().copied().collect();
    let firm_label: Vec<bool> = firms
        .iter()
        .map(|f| firm_votes[f].0 >= firm_votes[f].1)
        .collect();
    let mixed = firm_votes
        .values()
        .filter(|(a, b)| *a > 0 && *b > 0)
        .count();
    if mixed > 0 {
        log::warn!(
            "{mixed} firms switch groups; they are permuted under their most frequent label"
        );
    }

    let n = panel.len();
    let replicate = |r: usize| -> Option<f64> {
        let mut rng = replication_rng(seed, r);
        match method {
            CoefDiffMethod::FirmPermutation => {
                let mut perm = firm_label.clone();
                perm.shuffle(&mut rng);
                let (mut m1, mut m2) = (vec![false; n], vec![false; n]);
                for (f, &g) in firms.iter().zip(&perm) {
                    for &i in &firm_rows[f] {
                        if g {
                            m1[i] = true;
                        } else {
                            m2[i] = true;
                        }
                    }
                }
                let a = focal_coef(panel, spec, focal, &m1).ok()?;
                let b = focal_coef(panel, spec, focal, &m2).ok()?;
                Some(a - b)
            }
            CoefDiffMethod::FirmBootstrap => {
                // resampled firms get fresh ids so duplicates stay distinct firms
                let mut draw = |group: bool| -> Option<f64> {
                    let pool: Vec<&str> = firms
                        .iter()
                        .zip(&firm_label)
                        .filter(|(_, &g)| g == group)
                        .map(|(f, _)| *f)
                        .collect();
                    if pool.is_empty() {
                        return None;
                    }
                    let picks: Vec<&str> = (0..pool.len())
                        .map(|_| pool[rng.random_range(0..pool.len())])
                        .collect();
                    let boot = resample_firms(panel, &firm_rows, &picks);
                    run_specification(&boot, spec)
                        .ok()
                        .and_then(|r| r.coef(focal).map(|c| c.estimate))
                };
                let a = draw(true)?;
                let b = draw(false)?;
                Some(a - b)
            }
        }
    };
    let draws: Vec<Option<f64>> = (0..b_max).into_par_iter().map(replicate).collect();

    let points = b_list
        .iter()
        .map(|&b| {
            let valid: Vec<f64> = draws[..b].iter().flatten().copied().collect();
            let failed = b - valid.len();
            let p_value = match method {
                CoefDiffMethod::FirmPermutation => {
                    let count = valid.iter().filter(|&&t| as_extreme(t, observed)).count();
                    (count + 1) as f64 / (valid.len() + 1) as f64
                }
                CoefDiffMethod::FirmBootstrap => {
                    let below = valid.iter().filter(|&&t| t <= 0.0).count();
                    let above = valid.iter().filter(|&&t| t >= 0.0).count();
                    (2.0 * (below.min(above) + 1) as f64 / (valid.len() + 1) as f64).min(1.0)
                }
            };
            if failed > 0 {
                log::warn!("{failed} of {b} replications failed to estimate and were excluded");
            }
            CoefDiffPoint {
                replications: b,
                p_value,
                failed,
            }
        })
        .collect();

    Ok(CoefDiffReport {
        focal: focal.into(),
        labels: [labels[0].into(), labels[1].into()],
        coefficient: [c1, c2],
        difference: observed,
        method,
        seed,
        points,
    })
}

fn resample_firms(
    panel: &PanelDataset,
    firm_rows: &BTreeMap<&str, Vec<usize>>,
    picks: &[&str],
) -> PanelDataset {
    let keys = panel.keys();
    let industries = panel.industries();
    let mut rows = Vec::new();
    let mut source = Vec::new();
    for (k, f) in picks.iter().enumerate() {
        for &i in &firm_rows[f] {
            rows.push((format!("{f}#{k}"), keys[i].1, industries[i].clone()));
            source.push(i);
        }
    }
    // PanelDataset sorts rows; rebuild the source index in that order
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| (&rows[a].0, rows[a].1).cmp(&(&rows[b].0, rows[b].1)));
    let mut out = PanelDataset::new(rows);
    let names: Vec<String> = panel.variable_names().map(String::from).collect();
    for name in names {
        let col = panel.column(&name).expect("listed");
        out.insert_column(&name, order.iter().map(|&o| col[source[o]]).collect())
            .expect("same length");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.001), "***");
        assert_eq!(stars(0.01), "**");
        assert_eq!(stars(0.049), "**");
        assert_eq!(stars(0.05), "*");
        assert_eq!(stars(0.0999), "*");
        assert_eq!(stars(0.1), "");
        assert_eq!(stars(0.2), "");
    }

    #[test]
    fn summary_examples() {
        let s = summarize("x", &[4.0, 2.0, 5.0, 1.0, 3.0]);
        assert_eq!(
            (s.n, s.median, s.p25, s.p75, s.min, s.max),
            (5, 3.0, 2.0, 4.0, 1.0, 5.0)
        );
        let c = summarize("c", &[0.7; 6]);
        assert_eq!(c.sd, 0.0);
        assert!([c.min, c.p25, c.median, c.p75, c.max]
            .iter()
            .all(|&v| v == 0.7));
    }

    #[test]
    fn f_test_frozen_value() {
        // independent scipy f.cdf computation, also the closed form
        // I_x(3/2, 3/2) = (2/π)(θ − sin 4θ / 4), θ = asin √x, x = 0.8
        let t = variance_homogeneity_test(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert!((t.statistic - 4.0).abs() < 1e-14);
        assert!((t.sd_ratio - 2.0).abs() < 1e-14);
        let theta = 0.8f64.sqrt().asin();
        let closed = 2.0 * (1.0 - 2.0 / std::f64::consts::PI * (theta - (4.0 * theta).sin() / 4.0));
        assert!((closed - 0.284_756_979_865_294).abs() < 1e-14);
        assert!((t.p_value - 0.284_756_979_865_294).abs() < 1e-10);
    }

    #[test]
    fn identical_groups_variance() {
        let g = [1.0, 3.0, 2.5, 7.0];
        let t = variance_homogeneity_test(&g, &g).unwrap();
        assert_eq!(t.sd_ratio, 1.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_group_rejected() {
        assert_eq!(
            variance_homogeneity_test(&[2.0, 2.0, 2.0], &[1.0, 2.0]),
            Err(InferenceError::ZeroVariance("group1".into()))
        );
    }

    #[test]
    fn levene_identical_groups() {
        let g = [1.0, 3.0, 2.5, 7.0];
        let t = variance_test(&g, &g, VarianceMethod::Levene).unwrap();
        assert!((t.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_identical_groups() {
        let g: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let t = median_difference_test(&g, &g, 200, 7).unwrap();
        assert_eq!(t.median_diff, 0.0);
        assert!(t.p_value >= 0.5);
    }

    #[test]
    fn median_shift_detected() {
        let g2: Vec<f64> = (0..50)
            .map(|i| 0.1 * (i as f64 * 0.61).sin().abs())
            .collect();
        let g1: Vec<f64> = g2.iter().map(|v| v + 1.0).collect();
        let t = median_difference_test(&g1, &g2, 500, 1).unwrap();
        assert!((t.median_diff - 1.0).abs() < 1e-12);
        assert!(t.p_value <= 0.01);
        assert_eq!(t.p_value, 1.0 / 501.0);
    }

    #[test]
    fn median_exhaustive_oracle_small() {
        // n=3 per group: enumerate all 20 splits for the exact p-value
        let g1 = [10.0, 11.0, 12.0];
        let g2 = [0.0, 1.0, 2.0];
        let pooled: Vec<f64> = g1.iter().chain(&g2).copied().collect();
        let obs = median_of(&g1) - median_of(&g2);
        let mut extreme = 0;
        let mut total = 0;
        for mask in 0u32..64 {
            if mask.count_ones() != 3 {
                continue;
            }
            let a: Vec<f64> = (0..6)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| pooled[i])
                .collect();
            let b: Vec<f64> = (0..6)
                .filter(|i| mask >> i & 1 == 0)
                .map(|i| pooled[i])
                .collect();
            total += 1;
            extreme += as_extreme(median_of(&a) - median_of(&b), obs) as usize;
        }
        let exact = extreme as f64 / total as f64;
        assert_eq!(total, 20);
        let t = median_difference_test(&g1, &g2, 4000, 3).unwrap();
        assert!((t.p_value - exact).abs() < 0.02, "{}", t.p_value);
    }

    #[test]
    fn median_deterministic_and_order_free() {
        let g1: Vec<f64> = (0..15).map(|i| (i as f64 * 1.3).cos()).collect();
        let g2: Vec<f64> = (0..12).map(|i| (i as f64 * 0.9).sin() + 0.2).collect();
        let a = median_difference_test(&g1, &g2, 300, 42).unwrap();
        let b = median_difference_test(&g1, &g2, 300, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let mut r1 = g1.clone();
        r1.reverse();
        let c = median_difference_test(&r1, &g2, 300, 42).unwrap();
        assert_eq!(a.p_value, c.p_value);
    }

    #[test]
    fn too_few_replications() {
        assert_eq!(
            median_difference_test(&[1.0], &[2.0], 50, 0),
            Err(InferenceError::TooFewReplications(50))
        );
    }

    #[test]
    fn mood_test_separated_groups() {
        let g1: Vec<f64> = (0..30).map(|i| 10.0 + i as f64).collect();
        let g2: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let t = median_test(&g1, &g2, 0, 0, MedianMethod::Mood).unwrap();
        assert!(t.p_value < 1e-6);
    }

    fn split_panel(beta1: f64, beta2: f64, n_firms: usize) -> (PanelDataset, Vec<Option<bool>>) {
        let mut rows = Vec::new();
        for f in 0..n_firms {
            for y in 0..5 {
                rows.push((format!("F{f:03}"), 2015 + y, format!("I{}", f % 6)));
            }
        }
        let mut p = PanelDataset::new(rows);
        let mut x = Vec::new();
        let mut yv = Vec::new();
        let mut g = Vec::new();
        for f in 0..n_firms {
            let grp = f % 2 == 0;
            for t in 0..5 {
                let xi = ((f * 37 + t * 11) % 19) as f64 / 19.0 - 0.5;
                let e = ((f * 53 + t * 29) % 23) as f64 / 230.0 - 0.05;
                let b = if grp { beta1 } else { beta2 };
                x.push(Some(xi));
                yv.push(Some(b * xi + 0.1 * f as f64 + 0.05 * t as f64 + e));
                g.push(Some(grp));
            }
        }
        p.insert_column("x", x).unwrap();
        p.insert_column("y", yv).unwrap();
        (p, g)
    }

    #[test]
    fn coefficient_difference_strong_signal() {
        let (p, g) = split_panel(0.0, 2.0, 40);
        let spec = Specification::new("y", &["x"]);
        let r = coefficient_difference_test(
            &p,
            &spec,
            "x",
            &g,
            ["A", "B"],
            &[500],
            5,
            CoefDiffMethod::FirmPermutation,
        )
        .unwrap();
        assert!((r.difference + 2.0).abs() < 0.2);
        assert!(r.points[0].p_value < 0.05);
        assert_eq!(r.points[0].failed, 0);
    }

    #[test]
    fn coefficient_difference_deterministic_prefixes() {
        let (p, g) = split_panel(1.0, 1.0, 20);
        let spec = Specification::new("y", &["x"]);
        let a = coefficient_difference_test(
            &p,
            &spec,
            "x",
            &g,
            ["A", "B"],
            &[100, 200],
            9,
            CoefDiffMethod::FirmPermutation,
        )
        .unwrap();
        let b = coefficient_difference_test(
            &p,
            &spec,
            "x",
            &g,
            ["A", "B"],
            &[100],
            9,
            CoefDiffMethod::FirmPermutation,
        )
        .unwrap();
        assert_eq!(a.points[0], b.points[0]);
        assert_eq!(a.seed, 9);
        assert!(a
            .points
            .iter()
            .all(|pt| pt.p_value >= 1.0 / 201.0 && pt.p_value <= 1.0));
    }

    #[test]
    fn bootstrap_variant_runs() {
        let (p, g) = split_panel(0.0, 2.0, 24);
        let spec = Specification::new("y", &["x"]);
        let r = coefficient_difference_test(
            &p,
            &spec,
            "x",
            &g,
            ["A", "B"],
            &[100],
            2,
            CoefDiffMethod::FirmBootstrap,
        )
        .unwrap();
        assert!(r.points[0].p_value < 0.05);
    }

    #[test]
    fn incomparable_samples() {
        let (mut p, g) = split_panel(1.0, 1.0, 20);
        // z is firm-constant in group A only: absorbed there, estimable in B
        let z: Vec<Option<f64>> = (0..100)
            .map(|i| {
                let f = i / 5;
                Some(if f % 2 == 0 {
                    f as f64
                } else {
                    ((i * i * 7 + 3) % 11) as f64
                })
            })
            .collect();
        p.insert_column("z", z).unwrap();
        let spec = Specification::new("y", &["x", "z"]);
        let err = coefficient_difference_test(
            &p,
            &spec,
            "x",
            &g,
            ["A", "B"],
            &[100],
            0,
            CoefDiffMethod::FirmPermutation,
        )
        .unwrap_err();
        assert_eq!(err, InferenceError::IncomparableSamples("z".into()));
    }

    proptest! {
        #[test]
        fn variance_test_swaps_reciprocally(
            g1 in proptest::collection::vec(-10.0f64..10.0, 3..20),
            g2 in proptest::collection::vec(-10.0f64..10.0, 3..20),
        ) {
            prop_assume!(stats::variance(&g1) > 1e-6 && stats::variance(&g2) > 1e-6);
            let a = variance_homogeneity_test(&g1, &g2).unwrap();
            let b = variance_homogeneity_test(&g2, &g1).unwrap();
            prop_assert!((a.sd_ratio * b.sd_ratio - 1.0).abs() < 1e-12);
            prop_assert!((a.p_value - b.p_value).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }

        #[test]
        fn permutation_p_in_range(
            g1 in proptest::collection::vec(-1.0f64..1.0, 1..12),
            g2 in proptest::collection::vec(-1.0f64..1.0, 1..12),
            seed in any::<u64>(),
        ) {
            let t = median_difference_test(&g1, &g2, 100, seed).unwrap();
            prop_assert!(t.p_value >= 1.0 / 101.0 && t.p_value <= 1.0);
        }
    }
}
