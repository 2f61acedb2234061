//! Dictionary scanning of MD&A text.
//!
//! Matching is plain substring (or regex, for `re:` terms) over
//! whitespace-normalized text; there is no word segmentation, so a Chinese
//! term matches wherever its characters appear contiguously. Length is counted
//! in Unicode scalar values, excluding whitespace and control characters.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::Serialize;
use thiserror::Error;

use crate::ingest::MdaDocument;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("invalid regex term `{term}` in dictionary `{dictionary}`: {reason}")]
    InvalidRegex {
        dictionary: String,
        term: String,
        reason: String,
    },
    #[error("literal term `{term}` in dictionary `{dictionary}` contains regex metacharacters; prefix it with `re:`")]
    UnflaggedMetacharacters { dictionary: String, term: String },
    #[error("dictionary `{0}` has no terms")]
    EmptyDictionary(String),
    #[error("document ({firm_id}, {year}) has no countable characters")]
    EmptyDocument { firm_id: String, year: i32 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub enum Term {
    /// Stored with ASCII letters lowercased.
    Literal(String),
    Pattern(Regex),
}

impl Term {
    fn count_in(&self, lowered: &str) -> usize {
        match self {
            Term::Literal(t) => lowered.matches(t.as_str()).count(),
            Term::Pattern(re) => re.find_iter(lowered).count(),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Term::Literal(t) => t,
            Term::Pattern(re) => re.as_str(),
        }
    }
}

/// A named, deduplicated list of terms.
#[derive(Debug, Clone)]
pub struct TermDictionary {
    name: String,
    terms: Vec<Term>,
}

const METACHARACTERS: &[char] = &[
    '\\', '.', '+', '*', '?', '(', ')', '|', '[', ']', '{', '}', '^', '$',
];

impl TermDictionary {
    /// Builds a dictionary from raw term lines. A leading `re:` marks a regex.
    pub fn new<S: AsRef<str>>(
        name: &str,
        lines: impl IntoIterator<Item = S>,
    ) -> Result<Self, TextError> {
        let mut seen = HashSet::new();
        let mut terms = Vec::new();
        for line in lines {
            let line = line.as_ref().trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen.insert(line.to_string()) {
                continue;
            }
            let term = if let Some(pat) = line.strip_prefix("re:") {
                let re = RegexBuilder::new(pat)
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| TextError::InvalidRegex {
                        dictionary: name.into(),
                        term: pat.into(),
                        reason: e.to_string(),
                    })?;
                if re.is_match("") {
                    return Err(TextError::InvalidRegex {
                        dictionary: name.into(),
                        term: pat.into(),
                        reason: "pattern matches the empty string".into(),
                    });
                }
                Term::Pattern(re)
            } else {
                if line.contains(METACHARACTERS) {
                    return Err(TextError::UnflaggedMetacharacters {
                        dictionary: name.into(),
                        term: line.into(),
                    });
                }
                Term::Literal(normalize_text(line).to_ascii_lowercase())
            };
            terms.push(term);
        }
        if terms.is_empty() {
            return Err(TextError::EmptyDictionary(name.into()));
        }
        Ok(Self {
            name: name.into(),
            terms,
        })
    }

    /// Parses the newline-delimited file format (`#` comments, `re:` regexes).
    pub fn parse(name: &str, contents: &str) -> Result<Self, TextError> {
        Self::new(name, contents.lines())
    }

    pub fn load(name: &str, path: &Path) -> Result<Self, TextError> {
        let contents = std::fs::read_to_string(path).map_err(|source| TextError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(name, &contents)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Literal terms only, in dictionary order.
    pub fn literals(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().filter_map(|t| match t {
            Term::Literal(s) => Some(s.as_str()),
            Term::Pattern(_) => None,
        })
    }
}

/// The four dictionaries used per document.
#[derive(Debug, Clone)]
pub struct DictionarySet {
    pub digital: TermDictionary,
    pub epu: TermDictionary,
    pub positive: TermDictionary,
    pub negative: TermDictionary,
}

const DEFAULT_DIGITAL: &str = include_str!("../dictionaries/digital_transformation.txt");
const DEFAULT_EPU: &str = include_str!("../dictionaries/policy_uncertainty.txt");
const DEFAULT_POSITIVE: &str = include_str!("../dictionaries/positive.txt");
const DEFAULT_NEGATIVE: &str = include_str!("../dictionaries/negative.txt");

impl DictionarySet {
    /// The small illustrative dictionaries shipped with the crate. They are
    /// not a canonical research dictionary; supply your own for real work.
    pub fn builtin() -> Self {
        Self {
            digital: TermDictionary::parse("digital", DEFAULT_DIGITAL).expect("builtin dictionary"),
            epu: TermDictionary::parse("epu", DEFAULT_EPU).expect("builtin dictionary"),
            positive: TermDictionary::parse("positive", DEFAULT_POSITIVE)
                .expect("builtin dictionary"),
            negative: TermDictionary::parse("negative", DEFAULT_NEGATIVE)
                .expect("builtin dictionary"),
        }
    }

    pub fn all(&self) -> [&TermDictionary; 4] {
        [&self.digital, &self.epu, &self.positive, &self.negative]
    }
}

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Sum over terms of non-overlapping leftmost occurrences. ASCII letters
/// match case-insensitively.
pub fn count_term_hits(text: &str, dict: &TermDictionary) -> usize {
    let lowered = normalize_text(text).to_ascii_lowercase();
    count_normalized(&lowered, dict)
}

fn count_normalized(lowered: &str, dict: &TermDictionary) -> usize {
    dict.terms.iter().map(|t| t.count_in(lowered)).sum()
}

/// Number of Unicode scalar values that are neither whitespace nor control.
pub fn measure_length(text: &str) -> usize {
    text.chars()
        .filter(|c| !c.is_whitespace() && !c.is_control())
        .count()
}

/// Per firm-year text measures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextMetricsRecord {
    pub firm_id: String,
    pub year: i32,
    pub total_words: usize,
    pub dt_hits: usize,
    pub dtw: f64,
    pub epu_hits: usize,
    pub fepu: f64,
    pub pos_hits: usize,
    pub neg_hits: usize,
    pub sentiment: f64,
}

/// Net tone: `(pos - neg) / (pos + neg)`, zero when both counts are zero.
pub fn net_tone(pos: usize, neg: usize) -> f64 {
    if pos + neg == 0 {
        0.0
    } else {
        (pos as f64 - neg as f64) / (pos + neg) as f64
    }
}

pub fn compute_text_metrics(
    doc: &MdaDocument,
    dicts: &DictionarySet,
) -> Result<TextMetricsRecord, TextError> {
    let total_words = measure_length(&doc.text);
    if total_words == 0 {
        return Err(TextError::EmptyDocument {
            firm_id: doc.firm_id.clone(),
            year: doc.year,
        });
    }
    let lowered = normalize_text(&doc.text).to_ascii_lowercase();
    let dt_hits = count_normalized(&lowered, &dicts.digital);
    let epu_hits = count_normalized(&lowered, &dicts.epu);
    let pos_hits = count_normalized(&lowered, &dicts.positive);
    let neg_hits = count_normalized(&lowered, &dicts.negative);
    let len = total_words as f64;
    Ok(TextMetricsRecord {
        firm_id: doc.firm_id.clone(),
        year: doc.year,
        total_words,
        dt_hits,
        dtw: dt_hits as f64 / len,
        epu_hits,
        fepu: epu_hits as f64 / len,
        pos_hits,
        neg_hits,
        sentiment: net_tone(pos_hits, neg_hits),
    })
}

/// Scores a corpus; empty documents are skipped with a warning. Output is
/// sorted by `(firm_id, year)`.
pub fn score_corpus(docs: &[MdaDocument], dicts: &DictionarySet) -> Vec<TextMetricsRecord> {
    use rayon::prelude::*;
    let mut out: Vec<TextMetricsRecord> = docs
        .par_iter()
        .filter_map(|d| match compute_text_metrics(d, dicts) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("{e}");
                None
            }
        })
        .collect();
    out.sort_by(|a, b| (&a.firm_id, a.year).cmp(&(&b.firm_id, b.year)));
    out
}

pub const TEXT_METRICS_COLUMNS: [&str; 10] = [
    "firm_id",
    "year",
    "total_words",
    "dt_hits",
    "dtw",
    "epu_hits",
    "fepu",
    "pos_hits",
    "neg_hits",
    "sentiment",
];

pub fn write_text_metrics<W: Write>(
    out: W,
    records: &[TextMetricsRecord],
) -> Result<(), TextError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TEXT_METRICS_COLUMNS)?;
    for r in records {
        w.write_record([
            r.firm_id.clone(),
            r.year.to_string(),
            r.total_words.to_string(),
            r.dt_hits.to_string(),
            r.dtw.to_string(),
            r.epu_hits.to_string(),
            r.fepu.to_string(),
            r.pos_hits.to_string(),
            r.neg_hits.to_string(),
            r.sentiment.to_string(),
        ])?;
    }
    w.flush().map_err(|source| TextError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn read_text_metrics(path: &Path) -> Result<Vec<TextMetricsRecord>, TextError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let idx = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            TextError::Csv(csv::Error::from(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("missing column `{name}` in {}", path.display()),
            )))
        })
    };
    let cols: Vec<usize> = TEXT_METRICS_COLUMNS
        .iter()
        .map(|c| idx(c))
        .collect::<Result<_, _>>()?;
    let bad = |line: usize, what: &str| {
        TextError::Csv(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{}: line {line}: malformed `{what}`", path.display()),
        )))
    };
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let get = |k: usize| row.get(cols[k]).unwrap_or("");
        let int = |k: usize| {
            get(k)
                .parse::<usize>()
                .map_err(|_| bad(line, TEXT_METRICS_COLUMNS[k]))
        };
        let flt = |k: usize| {
            get(k)
                .parse::<f64>()
                .map_err(|_| bad(line, TEXT_METRICS_COLUMNS[k]))
        };
        out.push(TextMetricsRecord {
            firm_id: get(0).to_string(),
            year: get(1).parse().map_err(|_| bad(line, "year"))?,
            total_words: int(2)?,
            dt_hits: int(3)?,
            dtw: flt(4)?,
            epu_hits: int(5)?,
            fepu: flt(6)?,
            pos_hits: int(7)?,
            neg_hits: int(8)?,
            sentiment: flt(9)?,
        });
    }
    Ok(out)
}
