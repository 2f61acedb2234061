//! Firm-year panel: a sorted key list plus named numeric columns with
//! missingness.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::crash::CrashRiskRecord;
use crate::gdt::{compute_dtd, GdtRecord};
use crate::ingest::{derive_controls, fmt_opt, winsorize, FirmYearRecord, IngestError};
use crate::stats::QuantileMethod;
use crate::text::TextMetricsRecord;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("no (firm_id, year) keys are shared by all inputs")]
    EmptyJoin,
    #[error("column `{name}` has length {got}, panel has {expected} observations")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// 0/1 indicators; never winsorized.
pub const DUMMY_VARIABLES: [&str; 6] = ["Audit", "Big4", "Dual", "Loss", "SOE", "GDT2"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelDataset {
    keys: Vec<(String, i32)>,
    industries: Vec<String>,
    columns: BTreeMap<String, Vec<Option<f64>>>,
}

impl PanelDataset {
    /// Builds an empty-column panel; rows are sorted by `(firm_id, year)`.
    pub fn new(mut rows: Vec<(String, i32, String)>) -> Self {
        rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        rows.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        let (keys, industries) = rows.into_iter().map(|(f, y, i)| ((f, y), i)).unzip();
        Self {
            keys,
            industries,
            columns: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[(String, i32)] {
        &self.keys
    }

    pub fn industries(&self) -> &[String] {
        &self.industries
    }

    pub fn position(&self, firm: &str, year: i32) -> Option<usize> {
        self.keys
            .binary_search_by(|(f, y)| (f.as_str(), *y).cmp(&(firm, year)))
            .ok()
    }

    pub fn insert_column(
        &mut self,
        name: &str,
        values: Vec<Option<f64>>,
    ) -> Result<(), PanelError> {
        if values.len() != self.len() {
            return Err(PanelError::LengthMismatch {
                name: name.into(),
                got: values.len(),
                expected: self.len(),
            });
        }
        self.columns.insert(name.into(), values);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn require(&self, name: &str) -> Result<&[Option<f64>], PanelError> {
        self.column(name)
            .ok_or_else(|| PanelError::UnknownVariable(name.into()))
    }

    pub fn variable_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Categorical labels usable for clustering or grouping: `industry`,
    /// `firm` (alias `firm_id`), `year`, or any numeric column (by value).
    pub fn labels(&self, name: &str) -> Result<Vec<String>, PanelError> {
        match name {
            "industry" | "industry_code" => Ok(self.industries.clone()),
            "firm" | "firm_id" => Ok(self.keys.iter().map(|(f, _)| f.clone()).collect()),
            "year" => Ok(self.keys.iter().map(|(_, y)| y.to_string()).collect()),
            other => Ok(self
                .require(other)?
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect()),
        }
    }

    /// Subset of rows where `mask` is true, preserving order.
    pub fn filter(&self, mask: &[bool]) -> PanelDataset {
        let pick = |i: &usize| mask.get(*i).copied().unwrap_or(false);
        let idx: Vec<usize> = (0..self.len()).filter(pick).collect();
        PanelDataset {
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            industries: idx.iter().map(|&i| self.industries[i].clone()).collect(),
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), idx.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    /// Winsorizes every non-dummy column in place. Columns with fewer than
    /// two non-missing values are left as they are and returned.
    pub fn winsorize_continuous(
        &mut self,
        fraction: f64,
        method: QuantileMethod,
    ) -> Result<Vec<String>, PanelError> {
        let mut skipped = Vec::new();
        if fraction == 0.0 {
            return Ok(skipped);
        }
        for (name, col) in self.columns.iter_mut() {
            if DUMMY_VARIABLES.contains(&name.as_str()) {
                continue;
            }
            match winsorize(col, fraction, method) {
                Ok(w) => *col = w,
                Err(IngestError::DegenerateColumn) => skipped.push(name.clone()),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(skipped)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PanelError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["firm_id".to_string(), "year".into(), "industry".into()];
        header.extend(self.columns.keys().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![
                self.keys[i].0.clone(),
                self.keys[i].1.to_string(),
                self.industries[i].clone(),
            ];
            row.extend(self.columns.values().map(|c| fmt_opt(c[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inner-joins the stage outputs on `(firm_id, year)` and registers every
/// variable. Optional sources that are `None` do not restrict the join.
pub fn build_panel(
    firm_years: &[FirmYearRecord],
    text_metrics: &[TextMetricsRecord],
    crash: Option<&[CrashRiskRecord]>,
    gdt: Option<&[GdtRecord]>,
) -> Result<PanelDataset, PanelError> {
    let fy: BTreeMap<(&str, i32), &FirmYearRecord> = firm_years
        .iter()
        .map(|r| ((r.firm_id.as_str(), r.year), r))
        .collect();
    let tm: BTreeMap<(&str, i32), &TextMetricsRecord> = text_metrics
        .iter()
        .map(|r| ((r.firm_id.as_str(), r.year), r))
        .collect();
    let cr: Option<BTreeMap<(&str, i32), &CrashRiskRecord>> = crash.map(|c| {
        c.iter()
            .map(|r| ((r.firm_id.as_str(), r.year), r))
            .collect()
    });
    let gd: Option<BTreeMap<(&str, i32), &GdtRecord>> = gdt.map(|g| {
        g.iter()
            .map(|r| ((r.firm_id.as_str(), r.year), r))
            .collect()
    });

    let keys: BTreeSet<(&str, i32)> = fy
        .keys()
        .filter(|k| tm.contains_key(k))
        .filter(|k| cr.as_ref().is_none_or(|m| m.contains_key(k)))
        .filter(|k| gd.as_ref().is_none_or(|m| m.contains_key(k)))
        .copied()
        .collect();
    if keys.is_empty() {
        return Err(PanelError::EmptyJoin);
    }

    let mut panel = PanelDataset::new(
        keys.iter()
            .map(|k| (k.0.to_string(), k.1, fy[k].industry_code.clone()))
            .collect(),
    );

    let mut cols: BTreeMap<&'static str, Vec<Option<f64>>> = BTreeMap::new();
    let mut push = |name: &'static str, v: Option<f64>| cols.entry(name).or_default().push(v);
    for k in &keys {
        let rec = fy[k];
        let (controls, _) = derive_controls(rec);
        for (name, v) in controls.named() {
            push(name, v);
        }
        push("DTD", compute_dtd(rec).ok());

        let t = tm[k];
        push("DTW", Some(t.dtw));
        push("FEPU", Some(t.fepu));
        push("Sentiment", Some(t.sentiment));
        push("TotalWords", Some(t.total_words as f64));
        push("lnTotalWords", Some((t.total_words as f64).ln()));

        if let Some(m) = &cr {
            let c = m[k];
            push("SPCR", c.spcr);
            push("SPCR1", c.spcr1);
            push("SPCR2", c.spcr2);
        }
        if let Some(m) = &gd {
            let g = m[k];
            push("DTDhat", g.dtd_hat);
            push("GDT", g.gdt);
            push("GDT1", g.gdt1);
            push("GDT2", g.gdt2);
        }
    }
    for (name, values) in cols {
        panel.insert_column(name, values)?;
    }
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Status;

    fn fy(firm: &str, year: i32) -> FirmYearRecord {
        FirmYearRecord {
            firm_id: firm.into(),
            year,
            industry_code: "C39".into(),
            founding_year: 1995,
            listing_year: 2005,
            status: Status::Normal,
            total_assets: Some(1000.0),
            total_liabilities: Some(400.0),
            net_profit: Some(50.0),
            book_value: Some(600.0),
            market_value: Some(900.0),
            replacement_cost: Some(800.0),
            revenue: Some(500.0),
            prior_revenue: Some(450.0),
            cash_equivalents: Some(80.0),
            intangible_assets: Some(100.0),
            digital_intangible_assets: Some(20.0),
            audit_unqualified: true,
            big4: false,
            dual: false,
            soe: true,
        }
    }

    fn tm(firm: &str, year: i32) -> TextMetricsRecord {
        TextMetricsRecord {
            firm_id: firm.into(),
            year,
            total_words: 100,
            dt_hits: 2,
            dtw: 0.02,
            epu_hits: 1,
            fepu: 0.01,
            pos_hits: 1,
            neg_hits: 0,
            sentiment: 1.0,
        }
    }

    fn cr(firm: &str, year: i32) -> CrashRiskRecord {
        CrashRiskRecord {
            firm_id: firm.into(),
            year,
            spcr: Some(0.1),
            spcr1: Some(0.2),
            spcr2: None,
            n_weeks: 50,
        }
    }

    #[test]
    fn join_keeps_shared_keys_only() {
        let f = [fy("A", 2015), fy("A", 2016), fy("B", 2015)];
        let t = [tm("A", 2015), tm("A", 2016), tm("C", 2015)];
        let c = [cr("A", 2016), cr("A", 2015), cr("B", 2015)];
        let p = build_panel(&f, &t, Some(&c), None).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.keys()[0], ("A".to_string(), 2015));
        assert_eq!(p.column("SPCR2").unwrap(), &[None, None]);
        assert_eq!(p.column("DTD").unwrap(), &[Some(0.2), Some(0.2)]);
    }

    #[test]
    fn disjoint_keys_fail() {
        let f = [fy("A", 2015)];
        let t = [tm("B", 2015)];
        assert!(matches!(
            build_panel(&f, &t, None, None),
            Err(PanelError::EmptyJoin)
        ));
    }

    #[test]
    fn build_is_deterministic_and_order_free() {
        let f = vec![fy("B", 2016), fy("A", 2015), fy("A", 2016), fy("B", 2015)];
        let t = vec![tm("A", 2016), tm("B", 2015), tm("A", 2015), tm("B", 2016)];
        let p1 = build_panel(&f, &t, None, None).unwrap();
        let mut f2 = f.clone();
        f2.reverse();
        let p2 = build_panel(&f2, &t, None, None).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        p1.write_csv(&mut a).unwrap();
        p2.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(p1, p2);
    }

    #[test]
    fn insert_rejects_wrong_length() {
        let mut p = PanelDataset::new(vec![("A".into(), 2015, "C".into())]);
        assert!(p.insert_column("x", vec![Some(1.0), None]).is_err());
    }

    #[test]
    fn winsorization_skips_dummies() {
        let mut p = PanelDataset::new(
            (0..100)
                .map(|i| (format!("F{i:03}"), 2015, "C".into()))
                .collect(),
        );
        p.insert_column("x", (0..100).map(|i| Some(i as f64)).collect())
            .unwrap();
        p.insert_column("Loss", (0..100).map(|i| Some((i % 2) as f64)).collect())
            .unwrap();
        p.insert_column(
            "sparse",
            (0..100).map(|i| (i == 0).then_some(1.0)).collect(),
        )
        .unwrap();
        let skipped = p
            .winsorize_continuous(0.05, QuantileMethod::Linear)
            .unwrap();
        assert_eq!(skipped, vec!["sparse".to_string()]);
        assert_eq!(p.column("x").unwrap()[0], Some(4.95));
        assert_eq!(p.column("Loss").unwrap()[0], Some(0.0));
    }
}
