//! Loading, validation, sample filtering, and winsorization of the raw inputs.
//!
//! Three datasets feed the pipeline: firm-year financials, weekly stock
//! returns, and the MD&A corpus. Loaders never abort on a malformed cell; the
//! offending row goes into a rejects list with its line number and reason.
//! Structural problems (missing columns, duplicate keys) are hard errors.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{quantile_sorted, sorted_finite, QuantileMethod};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("duplicate key ({firm}, {key})")]
    DuplicateKey { firm: String, key: i64 },
    #[error("column has fewer than 2 non-missing values")]
    DegenerateColumn,
    #[error("invalid sample policy: {0}")]
    InvalidPolicy(String),
    #[error("unrecognised corpus file name `{0}` (expected {{firm_id}}_{{year}}.txt)")]
    CorpusFileName(String),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Trading status of a firm-year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "normal")]
    Normal,
    #[serde(rename = "ST")]
    St,
    #[serde(rename = "starST")]
    StarSt,
    #[serde(rename = "delisted")]
    Delisted,
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "" => Ok(Status::Normal),
            "st" => Ok(Status::St),
            "*st" | "starst" | "star_st" => Ok(Status::StarSt),
            "delisted" => Ok(Status::Delisted),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Normal => "normal",
            Status::St => "ST",
            Status::StarSt => "starST",
            Status::Delisted => "delisted",
        })
    }
}

/// One firm-year of financial statement data, flags, and identifiers.
///
/// Monetary fields are optional: an empty cell means "not reported".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmYearRecord {
    pub firm_id: String,
    pub year: i32,
    /// CSRC-style code; the first character is the sector letter.
    pub industry_code: String,
    pub founding_year: i32,
    pub listing_year: i32,
    pub status: Status,
    pub total_assets: Option<f64>,
    pub total_liabilities: Option<f64>,
    pub net_profit: Option<f64>,
    pub book_value: Option<f64>,
    pub market_value: Option<f64>,
    pub replacement_cost: Option<f64>,
    pub revenue: Option<f64>,
    pub prior_revenue: Option<f64>,
    pub cash_equivalents: Option<f64>,
    pub intangible_assets: Option<f64>,
    pub digital_intangible_assets: Option<f64>,
    pub audit_unqualified: bool,
    pub big4: bool,
    pub dual: bool,
    pub soe: bool,
}

pub const FIRM_YEAR_COLUMNS: [&str; 21] = [
    "firm_id",
    "year",
    "industry_code",
    "founding_year",
    "listing_year",
    "status",
    "total_assets",
    "total_liabilities",
    "net_profit",
    "book_value",
    "market_value",
    "replacement_cost",
    "revenue",
    "prior_revenue",
    "cash_equivalents",
    "intangible_assets",
    "digital_intangible_assets",
    "audit_unqualified",
    "big4",
    "dual",
    "soe",
];

/// Mapping from logical field names to CSV header names. Fields not listed
/// are looked up under their own name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnMap(pub BTreeMap<String, String>);

impl ColumnMap {
    pub fn header_for<'a>(&'a self, field: &'a str) -> &'a str {
        self.0.get(field).map(String::as_str).unwrap_or(field)
    }
}

/// A row that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub firm_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub rejects: Vec<Reject>,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

fn parse_opt_f64(field: &str, raw: &str) -> std::result::Result<Option<f64>, String> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format!("malformed numeric value `{t}` in `{field}`")),
    }
}

fn parse_f64(field: &str, raw: &str) -> std::result::Result<f64, String> {
    parse_opt_f64(field, raw)?.ok_or_else(|| format!("missing value in `{field}`"))
}

fn parse_int<T: FromStr>(field: &str, raw: &str) -> std::result::Result<T, String> {
    raw.trim()
        .parse::<T>()
        .map_err(|_| format!("malformed integer `{}` in `{field}`", raw.trim()))
}

fn parse_bool(field: &str, raw: &str) -> std::result::Result<bool, String> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Ok(true),
        "0" | "false" | "no" | "n" => Ok(false),
        other => Err(format!("malformed boolean `{other}` in `{field}`")),
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

/// Loads `firm_years.csv`. Duplicate `(firm_id, year)` keys abort the load.
pub fn load_firm_years(path: &Path, schema: &ColumnMap) -> Result<Loaded<FirmYearRecord>> {
    let mut rdr = open(path)?;
    read_firm_years(&mut rdr, schema)
}

pub fn read_firm_years<R: Read>(
    rdr: &mut csv::Reader<R>,
    schema: &ColumnMap,
) -> Result<Loaded<FirmYearRecord>> {
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = FIRM_YEAR_COLUMNS
        .iter()
        .map(|f| column_index(&headers, schema.header_for(f)))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (row_no, row) in rdr.records().enumerate() {
        let line = row_no as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject {
                    line,
                    firm_id: None,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let cell = |k: usize| row.get(idx[k]).unwrap_or("");
        let firm_id = cell(0).trim().to_string();
        let parsed = parse_firm_year_row(&cell);
        match parsed {
            Ok(rec) => {
                if !seen.insert((rec.firm_id.clone(), rec.year)) {
                    return Err(IngestError::DuplicateKey {
                        firm: rec.firm_id,
                        key: rec.year as i64,
                    });
                }
                records.push(rec);
            }
            Err(reason) => {
                log::warn!("firm_years line {line}: {reason}");
                rejects.push(Reject {
                    line,
                    firm_id: (!firm_id.is_empty()).then_some(firm_id),
                    reason,
                });
            }
        }
    }
    Ok(Loaded { records, rejects })
}

fn parse_firm_year_row<'a>(
    cell: &dyn Fn(usize) -> &'a str,
) -> std::result::Result<FirmYearRecord, String> {
    let c = FIRM_YEAR_COLUMNS;
    let firm_id = cell(0).trim().to_string();
    if firm_id.is_empty() {
        return Err("empty firm_id".into());
    }
    let industry_code = cell(2).trim().to_string();
    if industry_code.is_empty() {
        return Err("empty industry_code".into());
    }
    let num = |k: usize| parse_opt_f64(c[k], cell(k));
    Ok(FirmYearRecord {
        firm_id,
        year: parse_int(c[1], cell(1))?,
        industry_code,
        founding_year: parse_int(c[3], cell(3))?,
        listing_year: parse_int(c[4], cell(4))?,
        status: cell(5).parse()?,
        total_assets: num(6)?,
        total_liabilities: num(7)?,
        net_profit: num(8)?,
        book_value: num(9)?,
        market_value: num(10)?,
        replacement_cost: num(11)?,
        revenue: num(12)?,
        prior_revenue: num(13)?,
        cash_equivalents: num(14)?,
        intangible_assets: num(15)?,
        digital_intangible_assets: num(16)?,
        audit_unqualified: parse_bool(c[17], cell(17))?,
        big4: parse_bool(c[18], cell(18))?,
        dual: parse_bool(c[19], cell(19))?,
        soe: parse_bool(c[20], cell(20))?,
    })
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_firm_years<W: Write>(out: W, records: &[FirmYearRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIRM_YEAR_COLUMNS)?;
    for r in records {
        w.write_record([
            r.firm_id.clone(),
            r.year.to_string(),
            r.industry_code.clone(),
            r.founding_year.to_string(),
            r.listing_year.to_string(),
            r.status.to_string(),
            fmt_opt(r.total_assets),
            fmt_opt(r.total_liabilities),
            fmt_opt(r.net_profit),
            fmt_opt(r.book_value),
            fmt_opt(r.market_value),
            fmt_opt(r.replacement_cost),
            fmt_opt(r.revenue),
            fmt_opt(r.prior_revenue),
            fmt_opt(r.cash_equivalents),
            fmt_opt(r.intangible_assets),
            fmt_opt(r.digital_intangible_assets),
            fmt_bool(r.audit_unqualified).into(),
            fmt_bool(r.big4).into(),
            fmt_bool(r.dual).into(),
            fmt_bool(r.soe).into(),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_rejects<W: Write>(out: W, rejects: &[Reject]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["line", "firm_id", "reason"])?;
    for r in rejects {
        w.write_record([
            r.line.to_string(),
            r.firm_id.clone().unwrap_or_default(),
            r.reason.clone(),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

/// One firm-week observation. `year` is the fiscal year the week is
/// attributed to; `week_index` is a serial that runs across years so that
/// leads and lags can cross year boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyReturnRecord {
    pub firm_id: String,
    pub year: i32,
    pub week_index: i64,
    pub ret: f64,
    pub float_market_cap: Option<f64>,
    pub total_market_cap: Option<f64>,
}

pub const WEEKLY_COLUMNS: [&str; 6] = [
    "firm_id",
    "year",
    "week_index",
    "ret",
    "float_market_cap",
    "total_market_cap",
];

pub fn load_weekly_returns(path: &Path) -> Result<Loaded<WeeklyReturnRecord>> {
    let mut rdr = open(path)?;
    read_weekly_returns(&mut rdr)
}

pub fn read_weekly_returns<R: Read>(
    rdr: &mut csv::Reader<R>,
) -> Result<Loaded<WeeklyReturnRecord>> {
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = WEEKLY_COLUMNS
        .iter()
        .map(|f| column_index(&headers, f))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (row_no, row) in rdr.records().enumerate() {
        let line = row_no as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject {
                    line,
                    firm_id: None,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let cell = |k: usize| row.get(idx[k]).unwrap_or("");
        let firm_id = cell(0).trim().to_string();
        let parsed = (|| -> std::result::Result<WeeklyReturnRecord, String> {
            if firm_id.is_empty() {
                return Err("empty firm_id".into());
            }
            let ret = parse_f64("ret", cell(3))?;
            if ret <= -1.0 {
                return Err(format!("return {ret} at or below -100%"));
            }
            let float_market_cap = parse_opt_f64("float_market_cap", cell(4))?;
            let total_market_cap = parse_opt_f64("total_market_cap", cell(5))?;
            if float_market_cap.is_some_and(|c| c < 0.0)
                || total_market_cap.is_some_and(|c| c < 0.0)
            {
                return Err("negative market cap".into());
            }
            Ok(WeeklyReturnRecord {
                firm_id: firm_id.clone(),
                year: parse_int("year", cell(1))?,
                week_index: parse_int("week_index", cell(2))?,
                ret,
                float_market_cap,
                total_market_cap,
            })
        })();
        match parsed {
            Ok(rec) => {
                if !seen.insert((rec.firm_id.clone(), rec.week_index)) {
                    return Err(IngestError::DuplicateKey {
                        firm: rec.firm_id,
                        key: rec.week_index,
                    });
                }
                records.push(rec);
            }
            Err(reason) => {
                rejects.push(Reject {
                    line,
                    firm_id: (!firm_id.is_empty()).then_some(firm_id),
                    reason,
                });
            }
        }
    }
    Ok(Loaded { records, rejects })
}

pub fn write_weekly_returns<W: Write>(out: W, records: &[WeeklyReturnRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WEEKLY_COLUMNS)?;
    for r in records {
        w.write_record([
            r.firm_id.clone(),
            r.year.to_string(),
            r.week_index.to_string(),
            r.ret.to_string(),
            fmt_opt(r.float_market_cap),
            fmt_opt(r.total_market_cap),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

/// MD&A section body for one firm-year.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdaDocument {
    pub firm_id: String,
    pub year: i32,
    pub text: String,
}

/// Loads the MD&A corpus from either a CSV file with `firm_id,year,text`
/// columns or a directory of `{firm_id}_{year}.txt` files.
///
/// Documents that are empty after whitespace normalization are rejected.
/// Output is sorted by `(firm_id, year)`.
pub fn load_mda_corpus(path: &Path) -> Result<Loaded<MdaDocument>> {
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)
            .map_err(io_err(path))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(io_err(path))?;
        entries.sort_by_key(|e| e.file_name());
        for (i, entry) in entries.iter().enumerate() {
            let p = entry.path();
            if p.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let (firm, year) = stem
                .rsplit_once('_')
                .and_then(|(f, y)| Some((f.to_string(), y.parse::<i32>().ok()?)))
                .filter(|(f, _)| !f.is_empty())
                .ok_or_else(|| IngestError::CorpusFileName(stem.to_string()))?;
            let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
            records.push((
                i as u64 + 1,
                MdaDocument {
                    firm_id: firm,
                    year,
                    text,
                },
            ));
        }
    } else {
        let mut rdr = open(path)?;
        let headers = rdr.headers()?.clone();
        let fi = column_index(&headers, "firm_id")?;
        let yi = column_index(&headers, "year")?;
        let ti = column_index(&headers, "text")?;
        for (row_no, row) in rdr.records().enumerate() {
            let line = row_no as u64 + 2;
            let row = match row {
                Ok(r) => r,
                Err(e) => {
                    rejects.push(Reject {
                        line,
                        firm_id: None,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let firm_id = row.get(fi).unwrap_or("").trim().to_string();
            match parse_int::<i32>("year", row.get(yi).unwrap_or("")) {
                Ok(year) if !firm_id.is_empty() => records.push((
                    line,
                    MdaDocument {
                        firm_id,
                        year,
                        text: row.get(ti).unwrap_or("").to_string(),
                    },
                )),
                Ok(_) => rejects.push(Reject {
                    line,
                    firm_id: None,
                    reason: "empty firm_id".into(),
                }),
                Err(reason) => rejects.push(Reject {
                    line,
                    firm_id: Some(firm_id),
                    reason,
                }),
            }
        }
    }

    let mut seen = HashSet::new();
    let mut docs = Vec::with_capacity(records.len());
    for (line, doc) in records {
        if doc.text.split_whitespace().next().is_none() {
            rejects.push(Reject {
                line,
                firm_id: Some(doc.firm_id),
                reason: "empty document".into(),
            });
            continue;
        }
        if !seen.insert((doc.firm_id.clone(), doc.year)) {
            return Err(IngestError::DuplicateKey {
                firm: doc.firm_id,
                key: doc.year as i64,
            });
        }
        docs.push(doc);
    }
    docs.sort_by(|a, b| (&a.firm_id, a.year).cmp(&(&b.firm_id, b.year)));
    Ok(Loaded {
        records: docs,
        rejects,
    })
}

pub fn write_mda_csv<W: Write>(out: W, docs: &[MdaDocument]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["firm_id", "year", "text"])?;
    for d in docs {
        w.write_record([d.firm_id.as_str(), &d.year.to_string(), d.text.as_str()])?;
    }
    w.flush().map_err(|e| IngestError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

/// Sample construction rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplePolicy {
    pub exclude_industry_prefix: Vec<String>,
    pub exclude_statuses: BTreeSet<Status>,
    pub exclude_ipo_within_window: bool,
    pub window: [i32; 2],
    pub winsor_fraction: f64,
    pub quantile_method: QuantileMethod,
}

impl Default for SamplePolicy {
    fn default() -> Self {
        Self {
            exclude_industry_prefix: vec!["J".into()],
            exclude_statuses: [Status::St, Status::StarSt, Status::Delisted]
                .into_iter()
                .collect(),
            exclude_ipo_within_window: true,
            window: [2010, 2021],
            winsor_fraction: 0.01,
            quantile_method: QuantileMethod::Linear,
        }
    }
}

impl SamplePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.winsor_fraction) {
            return Err(IngestError::InvalidPolicy(format!(
                "winsor_fraction {} outside [0, 0.5)",
                self.winsor_fraction
            )));
        }
        if self.window[0] > self.window[1] {
            return Err(IngestError::InvalidPolicy(format!(
                "window start {} after end {}",
                self.window[0], self.window[1]
            )));
        }
        Ok(())
    }

    fn in_window(&self, year: i32) -> bool {
        (self.window[0]..=self.window[1]).contains(&year)
    }
}

/// Sample rule that removed a record. Rules are checked in declaration order
/// and a record is attributed to the first rule it fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionRule {
    OutsideWindow,
    IndustryPrefix,
    Status,
    IpoWithinWindow,
}

impl ExclusionRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionRule::OutsideWindow => "outside_window",
            ExclusionRule::IndustryPrefix => "industry_prefix",
            ExclusionRule::Status => "status",
            ExclusionRule::IpoWithinWindow => "ipo_within_window",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExclusionLedger {
    pub entries: Vec<(String, i32, ExclusionRule)>,
    pub counts: BTreeMap<ExclusionRule, usize>,
}

impl ExclusionLedger {
    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn count(&self, rule: ExclusionRule) -> usize {
        self.counts.get(&rule).copied().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["firm_id", "year", "rule"])?;
        for (firm, year, rule) in &self.entries {
            w.write_record([firm.as_str(), &year.to_string(), rule.as_str()])?;
        }
        w.flush().map_err(|e| IngestError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

fn exclusion_for(rec: &FirmYearRecord, policy: &SamplePolicy) -> Option<ExclusionRule> {
    if !policy.in_window(rec.year) {
        return Some(ExclusionRule::OutsideWindow);
    }
    if policy
        .exclude_industry_prefix
        .iter()
        .any(|p| !p.is_empty() && rec.industry_code.trim().starts_with(p.as_str()))
    {
        return Some(ExclusionRule::IndustryPrefix);
    }
    if policy.exclude_statuses.contains(&rec.status) {
        return Some(ExclusionRule::Status);
    }
    if policy.exclude_ipo_within_window && policy.in_window(rec.listing_year) {
        return Some(ExclusionRule::IpoWithinWindow);
    }
    None
}

/// Applies the sample rules. Never fails; an empty result is allowed.
pub fn apply_sample_filters(
    records: Vec<FirmYearRecord>,
    policy: &SamplePolicy,
) -> (Vec<FirmYearRecord>, ExclusionLedger) {
    let mut ledger = ExclusionLedger::default();
    let mut kept = Vec::with_capacity(records.len());
    for rec in records {
        match exclusion_for(&rec, policy) {
            Some(rule) => {
                *ledger.counts.entry(rule).or_default() += 1;
                ledger.entries.push((rec.firm_id, rec.year, rule));
            }
            None => kept.push(rec),
        }
    }
    (kept, ledger)
}

/// Clamps values below the `fraction` quantile and above the `1 - fraction`
/// quantile. Missing (and non-finite) entries pass through untouched.
pub fn winsorize(
    column: &[Option<f64>],
    fraction: f64,
    method: QuantileMethod,
) -> Result<Vec<Option<f64>>> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(IngestError::InvalidPolicy(format!(
            "winsor fraction {fraction} outside [0, 0.5)"
        )));
    }
    let sorted = sorted_finite(column.iter().flatten().copied());
    if sorted.len() < 2 {
        return Err(IngestError::DegenerateColumn);
    }
    let lo = quantile_sorted(&sorted, fraction, method);
    let hi = quantile_sorted(&sorted, 1.0 - fraction, method);
    Ok(column
        .iter()
        .map(|v| match v {
            Some(x) if x.is_finite() => Some(x.clamp(lo, hi)),
            other => *other,
        })
        .collect())
}

/// Control variables derived from one firm-year record.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Controls {
    pub bm: Option<f64>,
    pub age: Option<f64>,
    pub lev: Option<f64>,
    pub roa: Option<f64>,
    pub size: Option<f64>,
    pub growth: Option<f64>,
    pub tobin_q: Option<f64>,
    pub cashflow: Option<f64>,
    pub audit: Option<f64>,
    pub big4: Option<f64>,
    pub dual: Option<f64>,
    pub loss: Option<f64>,
    pub soe: Option<f64>,
}

/// Names under which the derived controls are registered in a panel.
pub const CONTROL_NAMES: [&str; 13] = [
    "BM", "Age", "Lev", "ROA", "Size", "Growth", "TobinQ", "Cashflow", "Audit", "Big4", "Dual",
    "Loss", "SOE",
];

/// The regression control vector (Loss and SOE are used separately).
pub const REGRESSION_CONTROLS: [&str; 11] = [
    "BM", "Age", "Lev", "ROA", "Size", "Growth", "TobinQ", "Cashflow", "Audit", "Big4", "Dual",
];

impl Controls {
    pub fn named(&self) -> [(&'static str, Option<f64>); 13] {
        [
            ("BM", self.bm),
            ("Age", self.age),
            ("Lev", self.lev),
            ("ROA", self.roa),
            ("Size", self.size),
            ("Growth", self.growth),
            ("TobinQ", self.tobin_q),
            ("Cashflow", self.cashflow),
            ("Audit", self.audit),
            ("Big4", self.big4),
            ("Dual", self.dual),
            ("Loss", self.loss),
            ("SOE", self.soe),
        ]
    }
}

/// A ratio that could not be formed; the corresponding control is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("undefined ratio for `{0}`")]
pub struct UndefinedRatio(pub &'static str);

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(n), Some(d)) if d > 0.0 => Some(n / d),
        _ => None,
    }
}

/// Derives the control vector. Undefined ratios are reported but do not abort.
pub fn derive_controls(rec: &FirmYearRecord) -> (Controls, Vec<UndefinedRatio>) {
    let dummy = |b: bool| Some(if b { 1.0 } else { 0.0 });
    let age_years = rec.year - rec.founding_year;
    let c = Controls {
        bm: ratio(rec.book_value, rec.market_value),
        age: (age_years > 0).then(|| f64::from(age_years).ln()),
        lev: ratio(rec.total_liabilities, rec.total_assets),
        roa: ratio(rec.net_profit, rec.total_assets),
        size: rec.total_assets.filter(|a| *a > 0.0).map(f64::ln),
        growth: ratio(rec.revenue, rec.prior_revenue).map(|g| g - 1.0),
        tobin_q: ratio(rec.market_value, rec.replacement_cost),
        cashflow: ratio(rec.cash_equivalents, rec.total_assets),
        audit: dummy(rec.audit_unqualified),
        big4: dummy(rec.big4),
        dual: dummy(rec.dual),
        loss: rec.net_profit.map(|p| if p < 0.0 { 1.0 } else { 0.0 }),
        soe: dummy(rec.soe),
    };
    let issues = c
        .named()
        .iter()
        .filter(|(_, v)| v.is_none())
        .map(|(name, _)| UndefinedRatio(name))
        .collect();
    (c, issues)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "firm_id,year,industry_code,founding_year,listing_year,status,total_assets,total_liabilities,net_profit,book_value,market_value,replacement_cost,revenue,prior_revenue,cash_equivalents,intangible_assets,digital_intangible_assets,audit_unqualified,big4,dual,soe\n";

    fn reader(body: &str) -> csv::Reader<&[u8]> {
        csv::Reader::from_reader(body.as_bytes())
    }

    pub(crate) fn record(firm: &str, year: i32) -> FirmYearRecord {
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

    #[test]
    fn loads_two_valid_rows() {
        let body = format!(
            "{HEADER}A,2015,C39,1995,2005,normal,1000,400,50,600,900,800,500,450,80,100,20,1,0,0,1\n\
             B,2015,C27,1990,2001,normal,2000,800,-5,900,1000,950,700,650,90,50,0,1,1,1,0\n"
        );
        let out = read_firm_years(&mut reader(&body), &ColumnMap::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(out.rejects.is_empty());
        assert_eq!(out.records[1].net_profit, Some(-5.0));
    }

    #[test]
    fn malformed_cell_goes_to_rejects() {
        let body = format!(
            "{HEADER}A,2015,C39,1995,2005,normal,abc,400,50,600,900,800,500,450,80,100,20,1,0,0,1\n\
             B,2015,C27,1990,2001,normal,2000,800,-5,900,1000,950,700,650,90,50,0,1,1,1,0\n"
        );
        let out = read_firm_years(&mut reader(&body), &ColumnMap::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejects.len(), 1);
        assert_eq!(out.rejects[0].line, 2);
        assert!(out.rejects[0].reason.contains("total_assets"));
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let row = "A,2015,C39,1995,2005,normal,1000,400,50,600,900,800,500,450,80,100,20,1,0,0,1\n";
        let body = format!("{HEADER}{row}{row}");
        let err = read_firm_years(&mut reader(&body), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateKey { ref firm, key: 2015 } if firm == "A"));
    }

    #[test]
    fn missing_column_is_named() {
        let body = "firm_id,year\nA,2015\n";
        let err = read_firm_years(&mut reader(body), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn(ref c) if c == "industry_code"));
    }

    #[test]
    fn column_map_renames_headers() {
        let body = HEADER.replace("total_assets", "TA")
            + "A,2015,C39,1995,2005,normal,1000,400,50,600,900,800,500,450,80,100,20,1,0,0,1\n";
        let mut map = ColumnMap::default();
        map.0.insert("total_assets".into(), "TA".into());
        let out = read_firm_years(&mut reader(&body), &map).unwrap();
        assert_eq!(out.records[0].total_assets, Some(1000.0));
    }

    #[test]
    fn weekly_return_at_minus_one_is_rejected() {
        let body = "firm_id,year,week_index,ret,float_market_cap,total_market_cap\nA,2015,1,-1.0,10,20\nA,2015,2,0.01,10,20\n";
        let out = read_weekly_returns(&mut reader(body)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejects.len(), 1);
    }

    #[test]
    fn duplicate_firm_week_is_an_error() {
        let body = "firm_id,year,week_index,ret,float_market_cap,total_market_cap\nA,2015,1,0.0,10,20\nA,2015,1,0.01,10,20\n";
        assert!(matches!(
            read_weekly_returns(&mut reader(body)),
            Err(IngestError::DuplicateKey { key: 1, .. })
        ));
    }

    #[test]
    fn financial_industry_is_excluded() {
        let mut r = record("A", 2015);
        r.industry_code = "J66".into();
        let (kept, ledger) = apply_sample_filters(vec![r], &SamplePolicy::default());
        assert!(kept.is_empty());
        assert_eq!(ledger.count(ExclusionRule::IndustryPrefix), 1);
    }

    #[test]
    fn ipo_inside_window_is_excluded() {
        let mut r = record("A", 2016);
        r.listing_year = 2015;
        let (kept, ledger) = apply_sample_filters(vec![r], &SamplePolicy::default());
        assert!(kept.is_empty());
        assert_eq!(ledger.count(ExclusionRule::IpoWithinWindow), 1);
    }

    #[test]
    fn st_status_is_excluded() {
        let mut r = record("A", 2016);
        r.status = Status::StarSt;
        let (_, ledger) = apply_sample_filters(vec![r], &SamplePolicy::default());
        assert_eq!(ledger.count(ExclusionRule::Status), 1);
    }

    #[test]
    fn normal_manufacturer_listed_2005_is_retained() {
        let (kept, ledger) =
            apply_sample_filters(vec![record("A", 2016)], &SamplePolicy::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(ledger.total(), 0);
    }

    #[test]
    fn policy_validation() {
        let mut p = SamplePolicy {
            winsor_fraction: 0.5,
            ..SamplePolicy::default()
        };
        assert!(p.validate().is_err());
        p.winsor_fraction = 0.01;
        p.window = [2022, 2010];
        assert!(p.validate().is_err());
    }

    #[test]
    fn winsorize_constant_column_unchanged() {
        let col = vec![Some(3.0); 10];
        assert_eq!(winsorize(&col, 0.01, QuantileMethod::Linear).unwrap(), col);
    }

    #[test]
    fn winsorize_one_to_hundred() {
        let col: Vec<Option<f64>> = (1..=100).map(|i| Some(f64::from(i))).collect();
        let out = winsorize(&col, 0.01, QuantileMethod::Linear).unwrap();
        assert!((out[0].unwrap() - 1.99).abs() < 1e-12);
        assert!((out[99].unwrap() - 99.01).abs() < 1e-12);
        assert_eq!(out[50], Some(51.0));
    }

    #[test]
    fn winsorize_leaves_missing_alone() {
        let mut col: Vec<Option<f64>> = (1..=100).map(|i| Some(f64::from(i))).collect();
        col[10] = None;
        let out = winsorize(&col, 0.05, QuantileMethod::Linear).unwrap();
        assert_eq!(out[10], None);
    }

    #[test]
    fn winsorize_degenerate() {
        assert!(matches!(
            winsorize(&[Some(1.0), None], 0.01, QuantileMethod::Linear),
            Err(IngestError::DegenerateColumn)
        ));
    }

    #[test]
    fn winsorize_idempotent_when_quantile_positions_are_integral() {
        // n = 101, p = 0.01: type-7 positions are exactly order statistics 2 and 100.
        let col: Vec<Option<f64>> = (0..101)
            .map(|i| Some((i as f64 * 0.37).sin() * 10.0))
            .collect();
        let once = winsorize(&col, 0.01, QuantileMethod::Linear).unwrap();
        let twice = winsorize(&once, 0.01, QuantileMethod::Linear).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn derive_controls_identity_arithmetic() {
        let mut r = record("A", 2015);
        r.book_value = Some(1.0);
        r.market_value = Some(1.0);
        r.total_assets = Some(22f64.exp());
        r.total_liabilities = Some(0.5 * 22f64.exp());
        let (c, issues) = derive_controls(&r);
        assert!(issues.is_empty());
        assert_eq!(c.bm, Some(1.0));
        assert!((c.size.unwrap() - 22.0).abs() < 1e-12);
        assert!((c.lev.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loss_dummy_follows_profit_sign() {
        let mut r = record("A", 2015);
        r.net_profit = Some(-5.0);
        assert_eq!(derive_controls(&r).0.loss, Some(1.0));
        r.net_profit = Some(5.0);
        assert_eq!(derive_controls(&r).0.loss, Some(0.0));
    }

    #[test]
    fn founding_year_equal_to_year_leaves_age_missing() {
        let mut r = record("A", 2015);
        r.founding_year = 2015;
        let (c, issues) = derive_controls(&r);
        assert_eq!(c.age, None);
        assert_eq!(issues, vec![UndefinedRatio("Age")]);
    }

    #[test]
    fn zero_denominator_marks_missing() {
        let mut r = record("A", 2015);
        r.prior_revenue = Some(0.0);
        r.replacement_cost = Some(-1.0);
        let (c, issues) = derive_controls(&r);
        assert_eq!(c.growth, None);
        assert_eq!(c.tobin_q, None);
        assert_eq!(issues.len(), 2);
    }

    proptest! {
        #[test]
        fn winsorize_inverted_cdf_is_idempotent(xs in proptest::collection::vec(-1e3f64..1e3, 2..200), f in 0.0f64..0.2) {
            let col: Vec<Option<f64>> = xs.into_iter().map(Some).collect();
            let once = winsorize(&col, f, QuantileMethod::InvertedCdf).unwrap();
            let twice = winsorize(&once, f, QuantileMethod::InvertedCdf).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn winsorize_preserves_rank_order(xs in proptest::collection::vec(-1e3f64..1e3, 2..200), f in 0.0f64..0.2) {
            let col: Vec<Option<f64>> = xs.iter().copied().map(Some).collect();
            let out = winsorize(&col, f, QuantileMethod::Linear).unwrap();
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    if xs[i] <= xs[j] {
                        prop_assert!(out[i].unwrap() <= out[j].unwrap());
                    }
                }
            }
            let sorted = sorted_finite(xs.iter().copied());
            let lo = quantile_sorted(&sorted, f, QuantileMethod::Linear);
            let hi = quantile_sorted(&sorted, 1.0 - f, QuantileMethod::Linear);
            let min = out.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let max = out.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            if sorted[0] < lo { prop_assert_eq!(min, lo); }
            if sorted[sorted.len() - 1] > hi { prop_assert_eq!(max, hi); }
        }

        #[test]
        fn tightening_policy_never_adds_records(
            years in proptest::collection::vec(2005i32..2025, 1..40),
            listing in proptest::collection::vec(1990i32..2022, 40),
        ) {
            let recs: Vec<FirmYearRecord> = years.iter().enumerate().map(|(i, y)| {
                let mut r = record(&format!("F{i}"), *y);
                r.listing_year = listing[i];
                if i % 5 == 0 { r.industry_code = "J66".into(); }
                if i % 7 == 0 { r.status = Status::St; }
                r
            }).collect();
            let loose = SamplePolicy {
                exclude_industry_prefix: vec![],
                exclude_statuses: BTreeSet::new(),
                exclude_ipo_within_window: false,
                ..SamplePolicy::default()
            };
            let (a, _) = apply_sample_filters(recs.clone(), &loose);
            let (b, _) = apply_sample_filters(recs, &SamplePolicy::default());
            prop_assert!(b.len() <= a.len());
            for r in &b { prop_assert!(a.contains(r)); }
        }
    }
}
