//! Stock price crash risk from weekly returns.
//!
//! For each firm-year, weekly returns are regressed on the market return with
//! `lags` lags and `leads` leads (two each by default):
//!
//! ```text
//! r_{i,t} = a + b_{-2} r_{m,t-2} + b_{-1} r_{m,t-1} + b_0 r_{m,t} + b_1 r_{m,t+1} + b_2 r_{m,t+2} + e_{i,t}
//! ```
//!
//! The firm-specific weekly return is `w = ln(1 + e)`, and crash risk is the
//! negative coefficient of skewness of the demeaned `w`:
//!
//! ```text
//! NCSKEW = -[n (n-1)^{3/2} Σ w³] / [(n-1)(n-2) (Σ w²)^{3/2}]
//! ```
//!
//! This is run three times with different market returns: float-cap weighted
//! (`spcr`), equally weighted (`spcr1`), and total-cap weighted (`spcr2`).
//! Cap weights use each firm's prior-week cap, falling back to the same week
//! when no prior week is on file.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{fmt_opt, WeeklyReturnRecord};
use crate::regression::{fit_ols, RegressionError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrashError {
    #[error("no cap data for week {week} under {weighting:?} weighting")]
    NoCapData { week: i64, weighting: Weighting },
    #[error("({firm}, {year}): {usable} usable weeks, {required} required")]
    InsufficientWeeks {
        firm: String,
        year: i32,
        usable: usize,
        required: usize,
    },
    #[error("({firm}, {year}): market regressors are collinear")]
    SingularDesign { firm: String, year: i32 },
    #[error("NCSKEW needs at least 3 weeks, got {0}")]
    TooFewWeeks(usize),
    #[error("firm-specific returns have zero dispersion")]
    ZeroDispersion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Float-market-cap weighted.
    CurrentPrice,
    Equal,
    /// Total-market-cap weighted.
    TotalPrice,
}

impl Weighting {
    pub const ALL: [Weighting; 3] = [
        Weighting::CurrentPrice,
        Weighting::Equal,
        Weighting::TotalPrice,
    ];

    fn cap(self, rec: &WeeklyReturnRecord) -> Option<f64> {
        match self {
            Weighting::CurrentPrice => rec.float_market_cap,
            Weighting::TotalPrice => rec.total_market_cap,
            Weighting::Equal => Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrashConfig {
    pub min_weeks: usize,
    pub leads: usize,
    pub lags: usize,
    pub weightings: Vec<Weighting>,
}

impl Default for CrashConfig {
    fn default() -> Self {
        Self {
            min_weeks: 30,
            leads: 2,
            lags: 2,
            weightings: Weighting::ALL.to_vec(),
        }
    }
}

/// A non-fatal problem encountered while building crash measures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub firm_id: Option<String>,
    pub year: Option<i32>,
    pub week: Option<i64>,
    pub weighting: Option<Weighting>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketReturnSeries {
    pub weighting: Weighting,
    pub values: BTreeMap<i64, f64>,
}

/// Firm weights for one week, sorted by firm.
pub type WeekWeights = Vec<(String, f64)>;

/// Per-week market weights, keyed by week, as `(firm_id, weight)` sorted by firm.
pub fn market_weights(
    weekly: &[WeeklyReturnRecord],
    weighting: Weighting,
) -> (BTreeMap<i64, WeekWeights>, Vec<Diagnostic>) {
    let by_key: HashMap<(&str, i64), &WeeklyReturnRecord> = weekly
        .iter()
        .map(|r| ((r.firm_id.as_str(), r.week_index), r))
        .collect();
    let mut by_week: BTreeMap<i64, Vec<&WeeklyReturnRecord>> = BTreeMap::new();
    for r in weekly {
        by_week.entry(r.week_index).or_default().push(r);
    }

    let mut out = BTreeMap::new();
    let mut diags = Vec::new();
    for (week, mut recs) in by_week {
        recs.sort_by(|a, b| a.firm_id.cmp(&b.firm_id));
        let caps: Vec<(String, f64)> = recs
            .iter()
            .filter_map(|r| {
                let prior = by_key
                    .get(&(r.firm_id.as_str(), week - 1))
                    .and_then(|p| weighting.cap(p));
                prior
                    .or_else(|| weighting.cap(r))
                    .filter(|c| c.is_finite() && *c >= 0.0)
                    .map(|c| (r.firm_id.clone(), c))
            })
            .collect();
        let total: f64 = caps.iter().map(|(_, c)| c).sum();
        if caps.is_empty() || total <= 0.0 {
            diags.push(Diagnostic {
                firm_id: None,
                year: None,
                week: Some(week),
                weighting: Some(weighting),
                message: CrashError::NoCapData { week, weighting }.to_string(),
            });
            continue;
        }
        out.insert(
            week,
            caps.into_iter().map(|(f, c)| (f, c / total)).collect(),
        );
    }
    (out, diags)
}

/// Weekly market return under the given weighting.
pub fn compute_market_returns(
    weekly: &[WeeklyReturnRecord],
    weighting: Weighting,
) -> (MarketReturnSeries, Vec<Diagnostic>) {
    let returns: HashMap<(&str, i64), f64> = weekly
        .iter()
        .map(|r| ((r.firm_id.as_str(), r.week_index), r.ret))
        .collect();
    let (weights, diags) = market_weights(weekly, weighting);
    let values = weights
        .into_iter()
        .map(|(week, ws)| {
            let m = ws
                .iter()
                .map(|(f, w)| w * returns[&(f.as_str(), week)])
                .sum();
            (week, m)
        })
        .collect();
    (MarketReturnSeries { weighting, values }, diags)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirmWeekResidual {
    pub firm_id: String,
    pub week_index: i64,
    pub epsilon: f64,
    /// `ln(1 + epsilon)`.
    pub w: f64,
}

#[derive(Debug, Clone)]
pub struct MarketModelFit {
    /// Intercept, then market betas from lag `lags` through lead `leads`.
    pub coefficients: Vec<f64>,
    pub residuals: Vec<FirmWeekResidual>,
    /// Weeks dropped because `1 + epsilon <= 0`.
    pub dropped: usize,
}

/// OLS of weekly firm returns on lagged, contemporaneous, and lead market
/// returns. Only weeks with every required market return are used.
#[allow(clippy::too_many_arguments)]
pub fn fit_expanded_market_model(
    firm_id: &str,
    year: i32,
    firm_weeks: &[(i64, f64)],
    market: &MarketReturnSeries,
    leads: usize,
    lags: usize,
    min_weeks: usize,
) -> Result<MarketModelFit, CrashError> {
    let offsets: Vec<i64> = (-(lags as i64)..=leads as i64).collect();
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    let mut weeks = Vec::new();
    for &(week, ret) in firm_weeks {
        let row: Option<Vec<f64>> = offsets
            .iter()
            .map(|o| market.values.get(&(week + o)).copied())
            .collect();
        if let Some(row) = row {
            ys.push(ret);
            xs.extend(row);
            weeks.push(week);
        }
    }
    let n = ys.len();
    let required = min_weeks.max(offsets.len() + 2);
    if n < required {
        return Err(CrashError::InsufficientWeeks {
            firm: firm_id.into(),
            year,
            usable: n,
            required,
        });
    }
    let x = DMatrix::from_row_slice(n, offsets.len(), &xs);
    let y = DVector::from_vec(ys);
    let names: Vec<String> = offsets.iter().map(|o| format!("rm{o:+}")).collect();
    let fit = fit_ols(&y, &x, &names, true).map_err(|e| match e {
        RegressionError::RankDeficient(_) | RegressionError::TooFewObservations { .. } => {
            CrashError::SingularDesign {
                firm: firm_id.into(),
                year,
            }
        }
        _ => CrashError::SingularDesign {
            firm: firm_id.into(),
            year,
        },
    })?;

    let mut residuals = Vec::with_capacity(n);
    let mut dropped = 0;
    for (k, &week) in weeks.iter().enumerate() {
        let e = fit.residuals[k];
        if 1.0 + e <= 0.0 {
            dropped += 1;
            log::warn!("({firm_id}, {year}) week {week}: residual {e} <= -1, week dropped");
            continue;
        }
        residuals.push(FirmWeekResidual {
            firm_id: firm_id.into(),
            week_index: week,
            epsilon: e,
            w: e.ln_1p(),
        });
    }
    Ok(MarketModelFit {
        coefficients: fit.coefficients.iter().copied().collect(),
        residuals,
        dropped,
    })
}

/// Negative coefficient of skewness of `w` (demeaned internally).
pub fn compute_ncskew(w: &[f64]) -> Result<f64, CrashError> {
    let n = w.len();
    if n < 3 {
        return Err(CrashError::TooFewWeeks(n));
    }
    if w.iter().all(|&v| v == w[0]) {
        return Err(CrashError::ZeroDispersion);
    }
    let mean = w.iter().sum::<f64>() / n as f64;
    let (mut s2, mut s3) = (0.0, 0.0);
    for &v in w {
        let d = v - mean;
        s2 += d * d;
        s3 += d * d * d;
    }
    if s2 == 0.0 || !s2.is_finite() {
        return Err(CrashError::ZeroDispersion);
    }
    let nf = n as f64;
    let num = nf * (nf - 1.0).powf(1.5) * s3;
    let den = (nf - 1.0) * (nf - 2.0) * (s2 * s2.sqrt());
    Ok(-(num / den))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRiskRecord {
    pub firm_id: String,
    pub year: i32,
    /// Float-cap weighted market.
    pub spcr: Option<f64>,
    /// Equal-weighted market.
    pub spcr1: Option<f64>,
    /// Total-cap weighted market.
    pub spcr2: Option<f64>,
    pub n_weeks: usize,
}

/// Runs market series → market model → NCSKEW for every configured
/// weighting. Failures leave the measure missing; a firm-year with no
/// successful measure is omitted. Output sorted by `(firm_id, year)`.
pub fn assemble_spcr(
    weekly: &[WeeklyReturnRecord],
    cfg: &CrashConfig,
) -> (Vec<CrashRiskRecord>, Vec<Diagnostic>) {
    let mut firm_years: BTreeMap<(&str, i32), Vec<(i64, f64)>> = BTreeMap::new();
    for r in weekly {
        firm_years
            .entry((r.firm_id.as_str(), r.year))
            .or_default()
            .push((r.week_index, r.ret));
    }
    for weeks in firm_years.values_mut() {
        weeks.sort_by_key(|(w, _)| *w);
    }
    let keys: Vec<(&str, i32)> = firm_years.keys().copied().collect();

    let mut diagnostics = Vec::new();
    // (value, n_weeks) per firm-year per weighting
    type PerWeighting = BTreeMap<Weighting, (f64, usize)>;
    let mut measures: BTreeMap<(&str, i32), PerWeighting> = BTreeMap::new();
    for &weighting in &cfg.weightings {
        let (market, diags) = compute_market_returns(weekly, weighting);
        diagnostics.extend(diags);
        let results: Vec<Result<(f64, usize), CrashError>> = keys
            .par_iter()
            .map(|&(firm, year)| {
                let fit = fit_expanded_market_model(
                    firm,
                    year,
                    &firm_years[&(firm, year)],
                    &market,
                    cfg.leads,
                    cfg.lags,
                    cfg.min_weeks,
                )?;
                let w: Vec<f64> = fit.residuals.iter().map(|r| r.w).collect();
                if w.len() < cfg.min_weeks {
                    return Err(CrashError::InsufficientWeeks {
                        firm: firm.into(),
                        year,
                        usable: w.len(),
                        required: cfg.min_weeks,
                    });
                }
                Ok((compute_ncskew(&w)?, w.len()))
            })
            .collect();
        for (&(firm, year), res) in keys.iter().zip(results) {
            match res {
                Ok(v) => {
                    measures
                        .entry((firm, year))
                        .or_default()
                        .insert(weighting, v);
                }
                Err(e) => diagnostics.push(Diagnostic {
                    firm_id: Some(firm.into()),
                    year: Some(year),
                    week: None,
                    weighting: Some(weighting),
                    message: e.to_string(),
                }),
            }
        }
    }

    let records = measures
        .into_iter()
        .map(|((firm, year), m)| {
            let get = |w: Weighting| m.get(&w).map(|v| v.0);
            let n_weeks = Weighting::ALL
                .iter()
                .find_map(|w| m.get(w).map(|v| v.1))
                .unwrap_or(0);
            CrashRiskRecord {
                firm_id: firm.into(),
                year,
                spcr: get(Weighting::CurrentPrice),
                spcr1: get(Weighting::Equal),
                spcr2: get(Weighting::TotalPrice),
                n_weeks,
            }
        })
        .collect();
    (records, diagnostics)
}

pub const CRASH_COLUMNS: [&str; 6] = ["firm_id", "year", "spcr", "spcr1", "spcr2", "n_weeks"];

pub fn write_crash_risk<W: Write>(out: W, records: &[CrashRiskRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CRASH_COLUMNS)?;
    for r in records {
        w.write_record([
            r.firm_id.clone(),
            r.year.to_string(),
            fmt_opt(r.spcr),
            fmt_opt(r.spcr1),
            fmt_opt(r.spcr2),
            r.n_weeks.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics<W: Write>(out: W, diags: &[Diagnostic]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["firm_id", "year", "week", "weighting", "message"])?;
    for d in diags {
        w.write_record([
            d.firm_id.clone().unwrap_or_default(),
            d.year.map(|y| y.to_string()).unwrap_or_default(),
            d.week.map(|y| y.to_string()).unwrap_or_default(),
            d.weighting
                .map(|w| {
                    serde_json::to_value(w)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default()
                })
                .unwrap_or_default(),
            d.message.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_crash_risk(path: &Path) -> Result<Vec<CrashRiskRecord>, csv::Error> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    let bad =
        |msg: String| csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, msg));
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let opt = |k: usize| -> Result<Option<f64>, csv::Error> {
            let s = row.get(k).unwrap_or("").trim();
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| {
                    bad(format!(
                        "{}: line {line}: malformed `{}`",
                        path.display(),
                        CRASH_COLUMNS[k]
                    ))
                })
            }
        };
        out.push(CrashRiskRecord {
            firm_id: row.get(0).unwrap_or("").to_string(),
            year: row
                .get(1)
                .unwrap_or("")
                .parse()
                .map_err(|_| bad(format!("{}: line {line}: malformed year", path.display())))?,
            spcr: opt(2)?,
            spcr1: opt(3)?,
            spcr2: opt(4)?,
            n_weeks: row.get(5).unwrap_or("0").parse().unwrap_or(0),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(firm: &str, week: i64, ret: f64, cap: f64) -> WeeklyReturnRecord {
        WeeklyReturnRecord {
            firm_id: firm.into(),
            year: 2015,
            week_index: week,
            ret,
            float_market_cap: Some(cap),
            total_market_cap: Some(cap * 2.0),
        }
    }

    #[test]
    fn single_firm_market_is_its_return() {
        let w = [rec("A", 1, 0.03, 5.0), rec("A", 2, -0.01, 6.0)];
        for weighting in Weighting::ALL {
            let (m, _) = compute_market_returns(&w, weighting);
            assert_eq!(m.values[&1], 0.03);
            assert_eq!(m.values[&2], -0.01);
        }
    }

    #[test]
    fn equal_caps_make_weightings_coincide() {
        let w = [rec("A", 1, 0.03, 5.0), rec("B", 1, -0.01, 5.0)];
        let (eq, _) = compute_market_returns(&w, Weighting::Equal);
        let (cp, _) = compute_market_returns(&w, Weighting::CurrentPrice);
        assert!((eq.values[&1] - cp.values[&1]).abs() < 1e-15);
    }

    #[test]
    fn cap_weighted_example() {
        let w = [rec("A", 1, 0.1, 1.0), rec("B", 1, -0.1, 3.0)];
        let (eq, _) = compute_market_returns(&w, Weighting::Equal);
        let (cp, _) = compute_market_returns(&w, Weighting::CurrentPrice);
        assert!(eq.values[&1].abs() < 1e-15);
        assert!((cp.values[&1] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn prior_week_caps_are_used() {
        // week 2 caps flip, but weights come from week 1 caps (1, 3)
        let w = [
            rec("A", 1, 0.0, 1.0),
            rec("B", 1, 0.0, 3.0),
            rec("A", 2, 0.1, 3.0),
            rec("B", 2, -0.1, 1.0),
        ];
        let (cp, _) = compute_market_returns(&w, Weighting::CurrentPrice);
        assert!((cp.values[&2] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn missing_caps_drop_week_with_diagnostic() {
        let mut a = rec("A", 1, 0.1, 1.0);
        a.float_market_cap = None;
        let (cp, diags) = compute_market_returns(&[a.clone()], Weighting::CurrentPrice);
        assert!(cp.values.is_empty());
        assert_eq!(diags.len(), 1);
        let (eq, _) = compute_market_returns(&[a], Weighting::Equal);
        assert_eq!(eq.values.len(), 1);
    }

    fn market(n: i64) -> MarketReturnSeries {
        MarketReturnSeries {
            weighting: Weighting::Equal,
            values: (0..n)
                .map(|t| (t, 0.02 * ((t as f64) * 1.3).sin() + 0.001 * t as f64 % 0.01))
                .collect(),
        }
    }

    #[test]
    fn identical_to_market_fits_perfectly() {
        let m = market(60);
        let weeks: Vec<(i64, f64)> = m.values.iter().map(|(&t, &r)| (t, r)).collect();
        let fit = fit_expanded_market_model("A", 2015, &weeks, &m, 2, 2, 30).unwrap();
        assert_eq!(fit.residuals.len(), 56);
        assert!(fit
            .residuals
            .iter()
            .all(|r| r.epsilon.abs() < 1e-12 && r.w.abs() < 1e-12));
    }

    #[test]
    fn intercept_absorbs_constant() {
        let m = market(60);
        let weeks: Vec<(i64, f64)> = m.values.iter().map(|(&t, &r)| (t, r + 0.004)).collect();
        let fit = fit_expanded_market_model("A", 2015, &weeks, &m, 2, 2, 30).unwrap();
        assert!(fit.residuals.iter().all(|r| r.epsilon.abs() < 1e-12));
        assert!((fit.coefficients[0] - 0.004).abs() < 1e-12);
    }

    #[test]
    fn too_few_weeks() {
        let m = market(14);
        let weeks: Vec<(i64, f64)> = m.values.iter().map(|(&t, &r)| (t, r)).collect();
        let err = fit_expanded_market_model("A", 2015, &weeks, &m, 2, 2, 30).unwrap_err();
        assert!(matches!(
            err,
            CrashError::InsufficientWeeks { usable: 10, .. }
        ));
    }

    #[test]
    fn constant_market_is_singular() {
        let m = MarketReturnSeries {
            weighting: Weighting::Equal,
            values: (0..60).map(|t| (t, 0.01)).collect(),
        };
        let weeks: Vec<(i64, f64)> = (0..60).map(|t| (t, 0.01 * (t % 3) as f64)).collect();
        assert!(matches!(
            fit_expanded_market_model("A", 2015, &weeks, &m, 2, 2, 30),
            Err(CrashError::SingularDesign { .. })
        ));
    }

    #[test]
    fn ncskew_symmetric_is_zero() {
        assert_eq!(compute_ncskew(&[-0.2, 0.0, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn ncskew_frozen_value() {
        // independent numpy/scipy computation: -skew(w, bias=False)
        let v = compute_ncskew(&[0.01, -0.02, 0.03, -0.04, 0.05]).unwrap();
        assert!((v - 0.136_071_281_237_095_22).abs() < 1e-12 * 0.136);
    }

    #[test]
    fn negative_shock_raises_ncskew() {
        let sym = [-0.03, -0.01, 0.0, 0.01, 0.03];
        let base = compute_ncskew(&sym).unwrap();
        let mut shocked = sym;
        shocked[2] = -0.3;
        assert!(compute_ncskew(&shocked).unwrap() > base);
    }

    #[test]
    fn ncskew_errors() {
        assert_eq!(compute_ncskew(&[0.1, 0.2]), Err(CrashError::TooFewWeeks(2)));
        assert_eq!(compute_ncskew(&[0.1; 6]), Err(CrashError::ZeroDispersion));
    }

    #[test]
    fn too_short_firm_year_is_absent() {
        let mut weekly = Vec::new();
        for t in 0..60 {
            let m = 0.02 * ((t as f64) * 0.7).sin();
            weekly.push(rec("A", t, m + 0.01 * ((t * 7 % 5) as f64 - 2.0), 10.0));
            weekly.push(rec("B", t, m - 0.004 * ((t * 3 % 7) as f64 - 3.0), 20.0));
            if t < 10 {
                let mut c = rec("C", t, m, 5.0);
                c.year = 2014;
                weekly.push(c);
            }
        }
        let (records, diags) = assemble_spcr(&weekly, &CrashConfig::default());
        assert!(records.iter().all(|r| r.firm_id != "C"));
        assert!(diags.iter().any(|d| d.firm_id.as_deref() == Some("C")));
        assert_eq!(records.len(), 2);
        assert!(records.iter().all(|r| r.n_weeks >= 30));
    }

    proptest! {
        #[test]
        fn cap_weights_sum_to_one(caps in proptest::collection::vec(0.01f64..1e6, 1..20)) {
            let weekly: Vec<WeeklyReturnRecord> = caps.iter().enumerate()
                .flat_map(|(i, &c)| [rec(&format!("F{i}"), 1, 0.01, c), rec(&format!("F{i}"), 2, 0.02, c * 1.1)])
                .collect();
            for weighting in Weighting::ALL {
                let (w, _) = market_weights(&weekly, weighting);
                for ws in w.values() {
                    let s: f64 = ws.iter().map(|(_, x)| x).sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
