//! Gap between digital-transformation words and deeds.
//!
//! `DTD` is the digital share of intangible assets. Next year's `DTD` is
//! predicted from this year's text features,
//!
//! ```text
//! DTD_{i,t+1} = a + b DTW_{i,t} + c Sentiment_{i,t} + d ln(TotalWords_{i,t}) + δ_i + φ_{t+1} + e
//! ```
//!
//! and `GDT = DTDhat − DTD` (positive when words ran ahead of deeds). Two
//! simpler variants are `GDT1 = DTW − DTD` and `GDT2 = 1[DTW > DTD]`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{fmt_opt, FirmYearRecord};
use crate::panel::PanelDataset;
use crate::regression::{
    fit_fixed_effects, FixedEffectsSpec, RegressionError, RegressionResult, SmallSampleCorrection,
};
use crate::stats;

#[derive(Debug, Error)]
pub enum GdtError {
    #[error("DTD undefined: intangible assets missing or not positive")]
    UndefinedDtd,
    #[error("{pairs} consecutive-year pairs across {firms} firms; need at least 2 pairs per firm and more pairs than parameters")]
    InsufficientPairs { pairs: usize, firms: usize },
    #[error("missing panel variable `{0}`")]
    MissingVariable(String),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Digital intangible assets over intangible assets, clamped to `[0, 1]`.
pub fn compute_dtd(rec: &FirmYearRecord) -> Result<f64, GdtError> {
    let intangible = rec
        .intangible_assets
        .filter(|v| *v > 0.0)
        .ok_or(GdtError::UndefinedDtd)?;
    let digital = rec
        .digital_intangible_assets
        .ok_or(GdtError::UndefinedDtd)?;
    let ratio = digital / intangible;
    if !(0.0..=1.0).contains(&ratio) {
        log::warn!(
            "({}, {}): DTD {ratio} outside [0, 1], clamped",
            rec.firm_id,
            rec.year
        );
    }
    Ok(ratio.clamp(0.0, 1.0))
}

/// Year a pair's gap is recorded under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapYear {
    /// The predicted year `t+1`.
    #[default]
    Target,
    /// The feature year `t`.
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdtOptions {
    pub assign_to: GapYear,
    pub fe: FixedEffectsSpec,
    /// Cluster variable for the prediction regression.
    pub cluster: String,
    /// Adds a standardized `gdt1_z` column.
    pub zscore_gdt1: bool,
}

impl Default for GdtOptions {
    fn default() -> Self {
        Self {
            assign_to: GapYear::Target,
            fe: FixedEffectsSpec::TWO_WAY,
            cluster: "firm".into(),
            zscore_gdt1: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdtRecord {
    pub firm_id: String,
    pub year: i32,
    pub dtw: Option<f64>,
    pub dtd: Option<f64>,
    pub dtd_hat: Option<f64>,
    pub gdt: Option<f64>,
    pub gdt1: Option<f64>,
    pub gdt2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gdt1_z: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GdtEstimate {
    /// One record per panel row, sorted by `(firm_id, year)`.
    pub records: Vec<GdtRecord>,
    pub regression: RegressionResult,
    pub n_pairs: usize,
}

pub const PREDICTORS: [&str; 3] = ["DTW", "Sentiment", "lnTotalWords"];

/// Fits the next-year DTD prediction and fills `dtd_hat` and `gdt` for
/// every firm-year in the estimation sample. Other rows keep them missing.
pub fn estimate_gdt(panel: &PanelDataset, opts: &GdtOptions) -> Result<GdtEstimate, GdtError> {
    let col = |name: &str| {
        panel
            .column(name)
            .ok_or_else(|| GdtError::MissingVariable(name.into()))
    };
    let dtd = col("DTD")?;
    let dtw = col("DTW")?;
    let features: Vec<&[Option<f64>]> = PREDICTORS
        .iter()
        .map(|n| col(n))
        .collect::<Result<_, _>>()?;
    let cluster_labels = panel
        .labels(&opts.cluster)
        .map_err(|_| GdtError::MissingVariable(opts.cluster.clone()))?;
    let keys = panel.keys();

    // (feature row, target row)
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, (firm, year)) in keys.iter().enumerate() {
        let Some(j) = panel.position(firm, year + 1) else {
            continue;
        };
        let ok = dtd[j].is_some_and(f64::is_finite)
            && features.iter().all(|c| c[i].is_some_and(f64::is_finite));
        if ok && !cluster_labels[i].is_empty() {
            pairs.push((i, j));
        }
    }
    let mut per_firm = std::collections::HashMap::new();
    for &(i, _) in &pairs {
        *per_firm.entry(keys[i].0.as_str()).or_insert(0usize) += 1;
    }
    pairs.retain(|(i, _)| per_firm[keys[*i].0.as_str()] >= 2);
    let n_firms = per_firm.values().filter(|&&c| c >= 2).count();
    if pairs.len() <= PREDICTORS.len() + 1 || n_firms < 2 {
        return Err(GdtError::InsufficientPairs {
            pairs: pairs.len(),
            firms: n_firms,
        });
    }

    let y: Vec<f64> = pairs.iter().map(|&(_, j)| dtd[j].unwrap()).collect();
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|c| pairs.iter().map(|&(i, _)| c[i].unwrap()).collect())
        .collect();
    let firms: Vec<&str> = pairs.iter().map(|&(i, _)| keys[i].0.as_str()).collect();
    let years: Vec<i32> = pairs.iter().map(|&(_, j)| keys[j].1).collect();
    let clusters: Vec<&str> = pairs
        .iter()
        .map(|&(i, _)| cluster_labels[i].as_str())
        .collect();
    let names: Vec<String> = PREDICTORS.iter().map(|s| s.to_string()).collect();
    let mut regression = fit_fixed_effects(
        &y,
        &x,
        &names,
        &firms,
        &years,
        &clusters,
        opts.fe,
        SmallSampleCorrection::Standard,
    )?;
    regression.dependent = "DTD(t+1)".into();
    regression.cluster_variable = opts.cluster.clone();

    let mut records: Vec<GdtRecord> = keys
        .iter()
        .enumerate()
        .map(|(i, (firm, year))| GdtRecord {
            firm_id: firm.clone(),
            year: *year,
            dtw: dtw[i],
            dtd: dtd[i],
            dtd_hat: None,
            gdt: None,
            gdt1: None,
            gdt2: None,
            gdt1_z: None,
        })
        .collect();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let row = match opts.assign_to {
            GapYear::Target => j,
            GapYear::Feature => i,
        };
        records[row].dtd_hat = Some(regression.fitted[k]);
        records[row].gdt = Some(-regression.residuals[k]);
    }
    regression.rows = pairs.iter().map(|&(_, j)| j).collect();
    compute_variants(&mut records, opts.zscore_gdt1);
    Ok(GdtEstimate {
        records,
        regression,
        n_pairs: pairs.len(),
    })
}

/// Fills `gdt1 = dtw − dtd` and `gdt2 = 1[dtw > dtd]`; with `zscore`, also
/// the standardized `gdt1_z`.
pub fn compute_variants(records: &mut [GdtRecord], zscore: bool) {
    for r in records.iter_mut() {
        let (g1, g2) = match (r.dtw, r.dtd) {
            (Some(w), Some(d)) => (Some(w - d), Some(if w > d { 1.0 } else { 0.0 })),
            _ => (None, None),
        };
        r.gdt1 = g1;
        r.gdt2 = g2;
        r.gdt1_z = None;
    }
    if zscore {
        let vals: Vec<f64> = records.iter().filter_map(|r| r.gdt1).collect();
        let (m, sd) = (stats::mean(&vals), stats::std_dev(&vals));
        if sd > 0.0 && sd.is_finite() {
            for r in records.iter_mut() {
                r.gdt1_z = r.gdt1.map(|v| (v - m) / sd);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKey {
    GdtSign,
    Soe,
}

/// Row indices of the two groups. For `gdt_sign` Group1 has `GDT > 0` and
/// Group2 `GDT < 0` (zeros excluded); for `soe` Group1 is state-owned.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSplit {
    pub key: SplitKey,
    pub labels: [&'static str; 2],
    pub group1: Vec<usize>,
    pub group2: Vec<usize>,
    pub excluded: usize,
    pub warnings: Vec<String>,
}

pub fn split_groups(panel: &PanelDataset, key: SplitKey) -> Result<GroupSplit, GdtError> {
    let (var, labels) = match key {
        SplitKey::GdtSign => ("GDT", ["Group1", "Group2"]),
        SplitKey::Soe => ("SOE", ["SOE", "Non-SOE"]),
    };
    let values = panel
        .column(var)
        .ok_or_else(|| GdtError::MissingVariable(var.into()))?;
    split_values(values, key, labels)
}

fn split_values(
    values: &[Option<f64>],
    key: SplitKey,
    labels: [&'static str; 2],
) -> Result<GroupSplit, GdtError> {
    let mut split = GroupSplit {
        key,
        labels,
        group1: Vec::new(),
        group2: Vec::new(),
        excluded: 0,
        warnings: Vec::new(),
    };
    for (i, v) in values.iter().enumerate() {
        match (key, v) {
            (SplitKey::GdtSign, Some(g)) if *g > 0.0 => split.group1.push(i),
            (SplitKey::GdtSign, Some(g)) if *g < 0.0 => split.group2.push(i),
            (SplitKey::Soe, Some(s)) if *s == 1.0 => split.group1.push(i),
            (SplitKey::Soe, Some(s)) if *s == 0.0 => split.group2.push(i),
            _ => split.excluded += 1,
        }
    }
    for (g, label) in [(&split.group1, labels[0]), (&split.group2, labels[1])] {
        if g.is_empty() {
            let msg = format!("group `{label}` is empty");
            log::warn!("{msg}");
            split.warnings.push(msg);
        }
    }
    Ok(split)
}

pub const GDT_COLUMNS: [&str; 8] = [
    "firm_id", "year", "dtw", "dtd", "dtd_hat", "gdt", "gdt1", "gdt2",
];

pub fn write_gdt<W: Write>(out: W, records: &[GdtRecord]) -> Result<(), csv::Error> {
    let with_z = records.iter().any(|r| r.gdt1_z.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = GDT_COLUMNS.to_vec();
    if with_z {
        header.push("gdt1_z");
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.firm_id.clone(),
            r.year.to_string(),
            fmt_opt(r.dtw),
            fmt_opt(r.dtd),
            fmt_opt(r.dtd_hat),
            fmt_opt(r.gdt),
            fmt_opt(r.gdt1),
            fmt_opt(r.gdt2),
        ];
        if with_z {
            row.push(fmt_opt(r.gdt1_z));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gdt(path: &Path) -> Result<Vec<GdtRecord>, csv::Error> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let idx = |name: &str| headers.iter().position(|h| h == name);
    let bad =
        |msg: String| csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, msg));
    let cols: Vec<Option<usize>> = GDT_COLUMNS.iter().map(|c| idx(c)).collect();
    if let Some(k) = cols.iter().position(Option::is_none) {
        return Err(bad(format!(
            "{}: missing column `{}`",
            path.display(),
            GDT_COLUMNS[k]
        )));
    }
    let z = idx("gdt1_z");
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let line = n + 2;
        let opt = |k: Option<usize>| -> Result<Option<f64>, csv::Error> {
            let Some(k) = k else { return Ok(None) };
            let s = row.get(k).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| {
                bad(format!(
                    "{}: line {line}: malformed `{}`",
                    path.display(),
                    &headers[k]
                ))
            })
        };
        out.push(GdtRecord {
            firm_id: row[cols[0].unwrap()].to_string(),
            year: row[cols[1].unwrap()]
                .parse()
                .map_err(|_| bad(format!("{}: line {line}: malformed year", path.display())))?,
            dtw: opt(cols[2])?,
            dtd: opt(cols[3])?,
            dtd_hat: opt(cols[4])?,
            gdt: opt(cols[5])?,
            gdt1: opt(cols[6])?,
            gdt2: opt(cols[7])?,
            gdt1_z: opt(z)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::tests::record;
    use std::collections::BTreeMap;

    #[test]
    fn dtd_examples() {
        let mut r = record("A", 2015);
        r.intangible_assets = Some(100.0);
        r.digital_intangible_assets = Some(0.0);
        assert_eq!(compute_dtd(&r).unwrap(), 0.0);
        r.digital_intangible_assets = Some(25.0);
        assert_eq!(compute_dtd(&r).unwrap(), 0.25);
        r.digital_intangible_assets = Some(130.0);
        assert_eq!(compute_dtd(&r).unwrap(), 1.0);
        r.intangible_assets = Some(0.0);
        assert!(matches!(compute_dtd(&r), Err(GdtError::UndefinedDtd)));
    }

    fn gdt_record(dtw: f64, dtd: f64) -> GdtRecord {
        GdtRecord {
            firm_id: "A".into(),
            year: 2015,
            dtw: Some(dtw),
            dtd: Some(dtd),
            dtd_hat: None,
            gdt: None,
            gdt1: None,
            gdt2: None,
            gdt1_z: None,
        }
    }

    #[test]
    fn variant_examples() {
        let mut recs = vec![
            gdt_record(0.05, 0.02),
            gdt_record(0.3, 0.3),
            gdt_record(0.01, 0.50),
        ];
        compute_variants(&mut recs, false);
        assert!((recs[0].gdt1.unwrap() - 0.03).abs() < 1e-15);
        assert_eq!(recs[0].gdt2, Some(1.0));
        assert_eq!(recs[1].gdt1, Some(0.0));
        assert_eq!(recs[1].gdt2, Some(0.0));
        assert!((recs[2].gdt1.unwrap() + 0.49).abs() < 1e-15);
        assert_eq!(recs[2].gdt2, Some(0.0));
        assert!(recs.iter().all(|r| r.gdt1_z.is_none()));
        compute_variants(&mut recs, true);
        let z: Vec<f64> = recs.iter().map(|r| r.gdt1_z.unwrap()).collect();
        assert!(stats::mean(&z).abs() < 1e-12);
    }

    #[test]
    fn split_examples() {
        let s = split_values(
            &[Some(0.1), Some(-0.2), Some(0.0)],
            SplitKey::GdtSign,
            ["Group1", "Group2"],
        )
        .unwrap();
        assert_eq!((s.group1.len(), s.group2.len(), s.excluded), (1, 1, 1));
        let s = split_values(&[Some(1.0), Some(1.0)], SplitKey::Soe, ["SOE", "Non-SOE"]).unwrap();
        assert!(s.group2.is_empty());
        assert_eq!(s.warnings.len(), 1);
    }

    /// `n_firms` × `n_years` panel with DTD_{t+1} = f(features_t) + extra.
    fn panel_with(
        n_firms: usize,
        n_years: i32,
        dtd_next: impl Fn(f64, f64, f64) -> f64,
        extra: &BTreeMap<(usize, i32), f64>,
    ) -> PanelDataset {
        let mut rows = Vec::new();
        for f in 0..n_firms {
            for y in 0..n_years {
                rows.push((format!("F{f:02}"), 2011 + y, format!("C{}", f % 3)));
            }
        }
        let mut p = PanelDataset::new(rows);
        let feat = |f: usize, y: i32, k: usize| {
            (((f * 31 + y as usize * 17 + k * 7) % 23) as f64) / 23.0 + 0.01 * k as f64
        };
        let mut dtw = Vec::new();
        let mut sent = Vec::new();
        let mut lnw = Vec::new();
        let mut dtd = Vec::new();
        for f in 0..n_firms {
            for y in 0..n_years {
                let (a, b, c) = (
                    feat(f, y, 0) * 0.1,
                    feat(f, y, 1) - 0.5,
                    7.0 + feat(f, y, 2),
                );
                dtw.push(Some(a));
                sent.push(Some(b));
                lnw.push(Some(c));
                let d = if y == 0 {
                    0.3
                } else {
                    let (pa, pb, pc) = (
                        feat(f, y - 1, 0) * 0.1,
                        feat(f, y - 1, 1) - 0.5,
                        7.0 + feat(f, y - 1, 2),
                    );
                    dtd_next(pa, pb, pc) + extra.get(&(f, 2011 + y)).copied().unwrap_or(0.0)
                };
                dtd.push(Some(d));
            }
        }
        p.insert_column("DTW", dtw).unwrap();
        p.insert_column("Sentiment", sent).unwrap();
        p.insert_column("lnTotalWords", lnw).unwrap();
        p.insert_column("DTD", dtd).unwrap();
        p
    }

    #[test]
    fn exact_affine_prediction_has_no_gap() {
        let p = panel_with(
            6,
            5,
            |a, b, c| 0.2 + 1.5 * a - 0.03 * b + 0.01 * c,
            &BTreeMap::new(),
        );
        let est = estimate_gdt(&p, &GdtOptions::default()).unwrap();
        let gaps: Vec<f64> = est.records.iter().filter_map(|r| r.gdt).collect();
        assert_eq!(gaps.len(), 6 * 4);
        assert!(gaps.iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn injected_contrast_shows_up_with_opposite_sign() {
        // +0.1 on (F00, 2013) balanced by a 2x2 contrast so the shock is
        // orthogonal to both effect sets; feature columns are orthogonal to
        // it by construction of the base DGP being exact.
        let base = |a: f64, b: f64, c: f64| 0.2 + 1.5 * a - 0.03 * b + 0.01 * c;
        let clean = panel_with(6, 5, base, &BTreeMap::new());
        let shock: BTreeMap<(usize, i32), f64> = [
            ((0, 2013), 0.1),
            ((0, 2014), -0.1),
            ((1, 2013), -0.1),
            ((1, 2014), 0.1),
        ]
        .into();
        let p = panel_with(6, 5, base, &shock);

        // project the contrast on the within-transformed features to get the
        // exact expected residual
        let est_clean = estimate_gdt(&clean, &GdtOptions::default()).unwrap();
        let est = estimate_gdt(&p, &GdtOptions::default()).unwrap();
        let pos = p.position("F00", 2013).unwrap();
        let g = est.records[pos].gdt.unwrap();
        assert!(est_clean.records[pos].gdt.unwrap().abs() < 1e-10);
        assert!(
            g < 0.0,
            "realized DTD above prediction gives a negative gap, got {g}"
        );

        // with the contrast orthogonal to the features as well, the gap is exact
        let q = orthogonal_contrast_panel();
        let est = estimate_gdt(&q, &GdtOptions::default()).unwrap();
        let pos = q.position("F00", 2013).unwrap();
        assert!((est.records[pos].gdt.unwrap() + 0.1).abs() < 1e-10);
    }

    /// Features chosen so the 2x2 shock contrast has zero inner product with
    /// each feature column.
    fn orthogonal_contrast_panel() -> PanelDataset {
        let n_firms = 5;
        let n_years = 5;
        let mut rows = Vec::new();
        for f in 0..n_firms {
            for y in 0..n_years {
                rows.push((format!("F{f:02}"), 2011 + y, "C1".to_string()));
            }
        }
        let mut p = PanelDataset::new(rows);
        let idx = |f: usize, y: i32| f * n_years as usize + (y - 2011) as usize;
        let mut feats: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                (0..n_firms * n_years as usize)
                    .map(|i| (((i * 13 + k * 5) % 17) as f64) / 17.0 + k as f64)
                    .collect()
            })
            .collect();
        // shock lands on targets (F00, 2013/2014) and (F01, 2013/2014), whose
        // features sit one year earlier
        for col in feats.iter_mut() {
            let s = col[idx(0, 2012)] - col[idx(0, 2013)] - col[idx(1, 2012)];
            col[idx(1, 2013)] = -s;
        }
        let beta = [1.5, -0.03, 0.01];
        let shock: BTreeMap<(usize, i32), f64> = [
            ((0, 2013), 0.1),
            ((0, 2014), -0.1),
            ((1, 2013), -0.1),
            ((1, 2014), 0.1),
        ]
        .into();
        let mut dtd = vec![Some(0.3); n_firms * n_years as usize];
        for f in 0..n_firms {
            for y in 2012..2011 + n_years {
                let prev = idx(f, y - 1);
                let v: f64 = 0.2 + (0..3).map(|k| beta[k] * feats[k][prev]).sum::<f64>();
                dtd[idx(f, y)] = Some(v + shock.get(&(f, y)).copied().unwrap_or(0.0));
            }
        }
        for (name, col) in PREDICTORS.iter().zip(feats) {
            p.insert_column(name, col.into_iter().map(Some).collect())
                .unwrap();
        }
        p.insert_column("DTD", dtd).unwrap();
        p
    }

    #[test]
    fn residual_identities() {
        let noise: BTreeMap<(usize, i32), f64> = (0..6)
            .flat_map(|f| {
                (2012..2016).map(move |y| {
                    (
                        (f, y),
                        (((f * 7 + y as usize * 3) % 11) as f64 - 5.0) * 0.01,
                    )
                })
            })
            .collect();
        let p = panel_with(6, 5, |a, b, c| 0.2 + 1.5 * a - 0.03 * b + 0.01 * c, &noise);
        let est = estimate_gdt(&p, &GdtOptions::default()).unwrap();
        let with_gap: Vec<&GdtRecord> = est.records.iter().filter(|r| r.gdt.is_some()).collect();
        let total: f64 = with_gap.iter().map(|r| r.gdt.unwrap()).sum();
        assert!(total.abs() < 1e-8);
        let mut by_firm: BTreeMap<&str, f64> = BTreeMap::new();
        let mut by_year: BTreeMap<i32, f64> = BTreeMap::new();
        for r in &with_gap {
            *by_firm.entry(&r.firm_id).or_default() += r.gdt.unwrap();
            *by_year.entry(r.year).or_default() += r.gdt.unwrap();
        }
        assert!(by_firm
            .values()
            .chain(by_year.values())
            .all(|s| s.abs() < 1e-8));
        for r in &est.records {
            assert_eq!(r.gdt2, r.gdt1.map(|g| if g > 0.0 { 1.0 } else { 0.0 }));
        }
    }

    #[test]
    fn dtw_rescaling_leaves_gap_unchanged() {
        let noise: BTreeMap<(usize, i32), f64> = [((2, 2013), 0.05), ((3, 2014), -0.02)].into();
        let p = panel_with(6, 5, |a, b, c| 0.2 + 1.5 * a - 0.03 * b + 0.01 * c, &noise);
        let mut q = p.clone();
        let scaled: Vec<Option<f64>> = p
            .column("DTW")
            .unwrap()
            .iter()
            .map(|v| v.map(|x| x * 40.0))
            .collect();
        q.insert_column("DTW", scaled).unwrap();
        let a = estimate_gdt(&p, &GdtOptions::default()).unwrap();
        let b = estimate_gdt(&q, &GdtOptions::default()).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            match (x.gdt, y.gdt) {
                (Some(u), Some(v)) => assert!((u - v).abs() < 1e-10),
                (None, None) => {}
                _ => panic!("estimation samples differ"),
            }
        }
    }

    #[test]
    fn feature_year_assignment() {
        let noise: BTreeMap<(usize, i32), f64> = [((2, 2013), 0.05)].into();
        let p = panel_with(6, 5, |a, b, c| 0.2 + 1.5 * a - 0.03 * b + 0.01 * c, &noise);
        let opts = GdtOptions {
            assign_to: GapYear::Feature,
            ..GdtOptions::default()
        };
        let est = estimate_gdt(&p, &opts).unwrap();
        assert!(est
            .records
            .iter()
            .filter(|r| r.year == 2015)
            .all(|r| r.gdt.is_none()));
        assert!(est
            .records
            .iter()
            .filter(|r| r.year == 2011)
            .all(|r| r.gdt.is_some()));
    }

    #[test]
    fn too_few_pairs() {
        let p = panel_with(3, 2, |a, _, _| a, &BTreeMap::new());
        assert!(matches!(
            estimate_gdt(&p, &GdtOptions::default()),
            Err(GdtError::InsufficientPairs { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut recs = vec![gdt_record(0.05, 0.02), gdt_record(0.3, 0.3)];
        recs[1].year = 2016;
        recs[0].gdt = Some(-0.125);
        compute_variants(&mut recs, false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gdt.csv");
        write_gdt(std::fs::File::create(&path).unwrap(), &recs).unwrap();
        assert_eq!(read_gdt(&path).unwrap(), recs);
    }
}
