//! Seeded synthetic data with a known data-generating process.
//!
//! Latent crash risk follows
//!
//! ```text
//! SPCR_{i,t} = α + β GDT_{i,t} + γ'controls_{i,t} + δ_i + φ_t + u_{i,t}
//! ```
//!
//! Observable outputs (firm-years, weekly returns, MD&A documents) use the
//! same CSV formats the ingest stage reads. Each firm draws from its own
//! ChaCha8 stream, and crash shocks come from a separate stream, so toggling
//! a firm's shocks leaves every other draw unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    derive_controls, write_firm_years, write_mda_csv, write_weekly_returns, FirmYearRecord,
    IngestError, MdaDocument, Status, WeeklyReturnRecord, REGRESSION_CONTROLS,
};
use crate::panel::PanelDataset;
use crate::text::{DictionarySet, Term};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("dictionary `{0}` has no term that can be planted exactly")]
    NoPlantableTerms(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n_firms: usize,
    /// Inclusive first and last year.
    pub years: [i32; 2],
    pub seed: u64,
    pub true_beta_gdt_on_spcr: f64,
    pub alpha: f64,
    pub control_coefficients: BTreeMap<String, f64>,
    pub firm_effect_sd: f64,
    pub year_effect_sd: f64,
    pub noise_sd: f64,
    pub gdt_sd: f64,
    pub n_industries: usize,
    /// Share of firms placed in the financial sector (industry prefix `J`).
    pub financial_share: f64,
    /// Probability that a firm-year carries ST status.
    pub st_rate: f64,
    pub soe_share: f64,

    pub weeks_per_year: usize,
    pub market_mean: f64,
    pub market_sd: f64,
    pub beta_sd: f64,
    pub idio_sd: f64,
    /// Probability that a firm-year receives negative return shocks.
    pub crash_shock_rate: f64,
    /// Firms that receive shocks in every year.
    pub crash_firms: Vec<String>,
    pub crash_weeks: usize,
    /// Size of each shock, subtracted from the weekly return.
    pub crash_shock_size: f64,

    /// Mean characters per MD&A document.
    pub doc_length: usize,
    /// Document lengths are uniform on `doc_length · (1 ± spread)`.
    pub doc_length_spread: f64,
    /// Expected digital-transformation hits per 1000 characters.
    pub dt_rate: f64,
    /// Expected policy-uncertainty hits per 1000 characters.
    pub epu_rate: f64,
    /// Expected tone hits (each of positive, negative) per 1000 characters.
    pub tone_rate: f64,
    /// DTD response to last year's DTW.
    pub dtd_slope: f64,
}

pub fn default_control_coefficients() -> BTreeMap<String, f64> {
    [
        ("BM", 0.013),
        ("Age", 0.034),
        ("Lev", 0.012),
        ("ROA", 0.286),
        ("Size", -0.045),
        ("Growth", -0.011),
        ("TobinQ", -0.009),
        ("Cashflow", -0.028),
        ("Audit", 0.016),
        ("Big4", 0.016),
        ("Dual", -0.003),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_firms: 100,
            years: [2010, 2021],
            seed: 42,
            true_beta_gdt_on_spcr: 0.075,
            alpha: 0.9,
            control_coefficients: default_control_coefficients(),
            firm_effect_sd: 0.3,
            year_effect_sd: 0.1,
            noise_sd: 0.5,
            gdt_sd: 0.1,
            n_industries: 20,
            financial_share: 0.05,
            st_rate: 0.02,
            soe_share: 0.5,
            weeks_per_year: 52,
            market_mean: 0.001,
            market_sd: 0.03,
            beta_sd: 0.3,
            idio_sd: 0.04,
            crash_shock_rate: 0.1,
            crash_firms: Vec::new(),
            crash_weeks: 2,
            crash_shock_size: 0.2,
            doc_length: 600,
            doc_length_spread: 0.3,
            dt_rate: 6.0,
            epu_rate: 3.0,
            tone_rate: 4.0,
            dtd_slope: 5.0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_firms < 2 {
            return bad(format!("n_firms {} < 2", self.n_firms));
        }
        if self.years[1] - self.years[0] + 1 < 3 {
            return bad(format!("window {:?} shorter than 3 years", self.years));
        }
        for (name, v) in [
            ("firm_effect_sd", self.firm_effect_sd),
            ("year_effect_sd", self.year_effect_sd),
            ("noise_sd", self.noise_sd),
            ("gdt_sd", self.gdt_sd),
            ("market_sd", self.market_sd),
            ("beta_sd", self.beta_sd),
            ("idio_sd", self.idio_sd),
            ("dt_rate", self.dt_rate),
            ("epu_rate", self.epu_rate),
            ("tone_rate", self.tone_rate),
            ("crash_shock_size", self.crash_shock_size),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("financial_share", self.financial_share),
            ("st_rate", self.st_rate),
            ("soe_share", self.soe_share),
            ("crash_shock_rate", self.crash_shock_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.n_industries == 0 || self.n_industries > 90 {
            return bad(format!("n_industries {} outside 1..=90", self.n_industries));
        }
        if self.weeks_per_year < 10 || self.crash_weeks + 2 * SHOCK_EDGE > self.weeks_per_year {
            return bad("weeks_per_year must be >= 10 and leave room for crash_weeks away from the sample edges".into());
        }
        if self.doc_length == 0 {
            return bad("doc_length must be positive".into());
        }
        if !(0.0..1.0).contains(&self.doc_length_spread) {
            return bad(format!(
                "doc_length_spread {} outside [0, 1)",
                self.doc_length_spread
            ));
        }
        if let Some(k) = self
            .control_coefficients
            .keys()
            .find(|k| !REGRESSION_CONTROLS.contains(&k.as_str()))
        {
            return bad(format!("unknown control `{k}`"));
        }
        Ok(())
    }

    fn n_years(&self) -> usize {
        (self.years[1] - self.years[0] + 1) as usize
    }

    pub fn firm_ids(&self) -> Vec<String> {
        let width = self.n_firms.to_string().len().max(4);
        (1..=self.n_firms)
            .map(|i| format!("F{i:0width$}"))
            .collect()
    }
}

// stream families, offset so per-firm streams never collide
const PANEL: u64 = 0;
const WEEKLY: u64 = 1;
const SHOCKS: u64 = 2;
const TEXT: u64 = 3;
const GLOBAL: u64 = 4;

fn stream(seed: u64, family: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((family << 40) | index as u64);
    rng
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated sd")
}

/// Hits planted in one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedCounts {
    pub firm_id: String,
    pub year: i32,
    /// Document length in characters.
    pub length: usize,
    pub dt: usize,
    pub epu: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Per-document planted counts; a pure function of the config.
pub fn planted_counts(cfg: &DgpConfig) -> Vec<PlantedCounts> {
    let poisson = |rng: &mut ChaCha8Rng, mean: f64| -> usize {
        if mean <= 0.0 {
            0
        } else {
            Poisson::new(mean).expect("positive mean").sample(rng) as usize
        }
    };
    let mut out = Vec::with_capacity(cfg.n_firms * cfg.n_years());
    for (f, firm) in cfg.firm_ids().into_iter().enumerate() {
        let mut rng = stream(cfg.seed, TEXT, f);
        let intensity: f64 = rng.random_range(0.5..1.5);
        for (k, year) in (cfg.years[0]..=cfg.years[1]).enumerate() {
            let trend = 1.0 + 0.05 * k as f64;
            let spread = cfg.doc_length_spread;
            let stretch = if spread > 0.0 {
                rng.random_range(1.0 - spread..1.0 + spread)
            } else {
                1.0
            };
            let length = ((cfg.doc_length as f64 * stretch).round() as usize).max(1);
            let scale = length as f64 / 1000.0;
            out.push(PlantedCounts {
                firm_id: firm.clone(),
                year,
                length,
                dt: poisson(&mut rng, cfg.dt_rate * scale * intensity * trend),
                epu: poisson(&mut rng, cfg.epu_rate * scale),
                pos: poisson(&mut rng, cfg.tone_rate * scale),
                neg: poisson(&mut rng, cfg.tone_rate * scale),
            });
        }
    }
    out
}

/// Unobserved quantities behind one firm-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub firm_id: String,
    pub year: i32,
    pub gdt: f64,
    pub spcr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLedger {
    pub seed: u64,
    pub alpha: f64,
    pub beta_gdt: f64,
    pub control_coefficients: BTreeMap<String, f64>,
    pub firm_effects: BTreeMap<String, f64>,
    pub year_effects: BTreeMap<i32, f64>,
    pub noise_sd: f64,
    pub gdt_sd: f64,
    pub dtd_slope: f64,
    /// Firm-years whose weekly returns carry injected shocks.
    pub shocked_firm_years: Vec<(String, i32)>,
    pub planted: Vec<PlantedCounts>,
}

#[derive(Debug, Clone)]
pub struct SynthPanel {
    pub firm_years: Vec<FirmYearRecord>,
    pub latent: Vec<LatentRecord>,
    pub truth: TruthLedger,
}

fn industry_codes(n: usize) -> Vec<String> {
    // manufacturing-style codes plus a few other sectors, never `J`
    const LETTERS: [char; 6] = ['C', 'D', 'F', 'G', 'I', 'K'];
    (0..n)
        .map(|i| format!("{}{}", LETTERS[i % LETTERS.len()], 10 + i / LETTERS.len()))
        .collect()
}

/// Draws firm-year financials and latent GDT/SPCR.
pub fn generate_panel(cfg: &DgpConfig) -> Result<SynthPanel, SynthError> {
    cfg.validate()?;
    let firms = cfg.firm_ids();
    let industries = industry_codes(cfg.n_industries);
    let counts = planted_counts(cfg);
    let dtw: BTreeMap<(&str, i32), f64> = counts
        .iter()
        .map(|c| ((c.firm_id.as_str(), c.year), c.dt as f64 / c.length as f64))
        .collect();

    let mut global = stream(cfg.seed, GLOBAL, 0);
    let year_dist = normal(0.0, cfg.year_effect_sd);
    let year_effects: BTreeMap<i32, f64> = (cfg.years[0]..=cfg.years[1])
        .map(|y| (y, year_dist.sample(&mut global)))
        .collect();
    let dtd_year: BTreeMap<i32, f64> = (cfg.years[0]..=cfg.years[1])
        .map(|y| (y, global.random_range(-0.03..0.03)))
        .collect();

    let mut firm_years = Vec::new();
    let mut latent = Vec::new();
    let mut firm_effects = BTreeMap::new();
    for (f, firm) in firms.iter().enumerate() {
        let mut rng = stream(cfg.seed, PANEL, f);
        let firm_effect = normal(0.0, cfg.firm_effect_sd).sample(&mut rng);
        firm_effects.insert(firm.clone(), firm_effect);
        let financial = rng.random::<f64>() < cfg.financial_share;
        let industry = if financial {
            "J66".to_string()
        } else {
            industries
                .choose(&mut rng)
                .expect("n_industries > 0")
                .clone()
        };
        let listing_year = rng.random_range(1995..cfg.years[0].min(2010));
        let founding_year = listing_year - rng.random_range(3..15);
        let soe = rng.random::<f64>() < cfg.soe_share;
        let big4_p = if rng.random::<f64>() < 0.15 {
            0.8
        } else {
            0.03
        };
        let mut dual = rng.random::<f64>() < 0.25;
        let size_mean = normal(22.0, 1.0).sample(&mut rng);
        let lev_mean: f64 = rng.random_range(0.2..0.7);
        let roa_mean = normal(0.04, 0.03).sample(&mut rng);
        let bm_mean = normal(0.0, 0.4).sample(&mut rng);
        let dtd_base: f64 = rng.random_range(0.0..0.1);
        let mut revenue_prev = size_mean.exp() * rng.random_range(0.3..1.0);

        for year in cfg.years[0]..=cfg.years[1] {
            let size = size_mean + normal(0.0, 0.1).sample(&mut rng);
            let assets = size.exp();
            let lev = (lev_mean + normal(0.0, 0.03).sample(&mut rng)).clamp(0.05, 0.95);
            let roa = roa_mean + normal(0.0, 0.03).sample(&mut rng);
            let book = assets * (1.0 - lev);
            let bm = LogNormal::new(bm_mean, 0.2)
                .expect("sd > 0")
                .sample(&mut rng);
            let market = book / bm;
            let growth = normal(0.1, 0.2).sample(&mut rng).max(-0.8);
            let revenue = revenue_prev * (1.0 + growth);
            let intangible = assets * rng.random_range(0.02..0.1);
            let gdt = normal(0.0, cfg.gdt_sd).sample(&mut rng);
            let prev_dtw = dtw
                .get(&(firm.as_str(), year - 1))
                .or_else(|| dtw.get(&(firm.as_str(), year)))
                .copied()
                .unwrap_or(0.0);
            let dtd = (dtd_base + dtd_year[&year] + cfg.dtd_slope * prev_dtw - gdt).clamp(0.0, 1.0);
            let st = rng.random::<f64>() < cfg.st_rate;
            if rng.random::<f64>() < 0.15 {
                dual = !dual;
            }

            let rec = FirmYearRecord {
                firm_id: firm.clone(),
                year,
                industry_code: industry.clone(),
                founding_year,
                listing_year,
                status: if st { Status::St } else { Status::Normal },
                total_assets: Some(assets),
                total_liabilities: Some(assets * lev),
                net_profit: Some(assets * roa),
                book_value: Some(book),
                market_value: Some(market),
                replacement_cost: Some(assets * rng.random_range(0.8..1.2)),
                revenue: Some(revenue),
                prior_revenue: Some(revenue_prev),
                cash_equivalents: Some(assets * rng.random_range(0.01..0.2)),
                intangible_assets: Some(intangible),
                digital_intangible_assets: Some(intangible * dtd),
                audit_unqualified: rng.random::<f64>() < 0.95,
                big4: rng.random::<f64>() < big4_p,
                dual,
                soe,
            };
            revenue_prev = revenue;

            let (controls, _) = derive_controls(&rec);
            let named: BTreeMap<&str, Option<f64>> = controls.named().into_iter().collect();
            let gamma: f64 = cfg
                .control_coefficients
                .iter()
                .map(|(k, c)| c * named[k.as_str()].expect("generated controls are defined"))
                .sum();
            let noise = normal(0.0, cfg.noise_sd).sample(&mut rng);
            let spcr = cfg.alpha
                + cfg.true_beta_gdt_on_spcr * gdt
                + gamma
                + firm_effect
                + year_effects[&year]
                + noise;
            latent.push(LatentRecord {
                firm_id: firm.clone(),
                year,
                gdt,
                spcr,
            });
            firm_years.push(rec);
        }
    }

    Ok(SynthPanel {
        firm_years,
        latent,
        truth: TruthLedger {
            seed: cfg.seed,
            alpha: cfg.alpha,
            beta_gdt: cfg.true_beta_gdt_on_spcr,
            control_coefficients: cfg.control_coefficients.clone(),
            firm_effects,
            year_effects,
            noise_sd: cfg.noise_sd,
            gdt_sd: cfg.gdt_sd,
            dtd_slope: cfg.dtd_slope,
            shocked_firm_years: Vec::new(),
            planted: counts,
        },
    })
}

/// Panel of derived controls with the latent `GDT` and `SPCR` columns.
pub fn latent_panel(synth: &SynthPanel) -> PanelDataset {
    let mut panel = PanelDataset::new(
        synth
            .firm_years
            .iter()
            .map(|r| (r.firm_id.clone(), r.year, r.industry_code.clone()))
            .collect(),
    );
    // generator output is already sorted by (firm, year)
    let mut cols: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
    for (rec, lat) in synth.firm_years.iter().zip(&synth.latent) {
        let (controls, _) = derive_controls(rec);
        for (name, v) in controls.named() {
            cols.entry(name).or_default().push(v);
        }
        cols.entry("GDT").or_default().push(Some(lat.gdt));
        cols.entry("SPCR").or_default().push(Some(lat.spcr));
    }
    for (name, values) in cols {
        panel
            .insert_column(name, values)
            .expect("one value per row");
    }
    panel
}

/// Week index of week `w` (0-based) of `year`.
pub fn week_index(cfg: &DgpConfig, year: i32, w: usize) -> i64 {
    (year - cfg.years[0]) as i64 * cfg.weeks_per_year as i64 + w as i64
}

const SHOCK_EDGE: usize = 2;

type FirmYear = (String, i32);

/// Market factor plus firm beta plus idiosyncratic noise, with optional
/// negative shocks. Returns the records and the shocked firm-years.
pub fn generate_weekly_returns(
    cfg: &DgpConfig,
) -> Result<(Vec<WeeklyReturnRecord>, Vec<FirmYear>), SynthError> {
    cfg.validate()?;
    let n_weeks = cfg.n_years() * cfg.weeks_per_year;
    let mut global = stream(cfg.seed, GLOBAL, 1);
    let mdist = normal(cfg.market_mean, cfg.market_sd);
    let market: Vec<f64> = (0..n_weeks).map(|_| mdist.sample(&mut global)).collect();
    let designated: BTreeSet<&str> = cfg.crash_firms.iter().map(String::as_str).collect();

    let mut records = Vec::with_capacity(cfg.n_firms * n_weeks);
    let mut shocked = Vec::new();
    for (f, firm) in cfg.firm_ids().into_iter().enumerate() {
        let mut rng = stream(cfg.seed, WEEKLY, f);
        let mut shock_rng = stream(cfg.seed, SHOCKS, f);
        let beta = normal(1.0, cfg.beta_sd).sample(&mut rng);
        let idio = normal(0.0, cfg.idio_sd);
        let mut float_cap = LogNormal::new(21.0, 1.0).expect("sd > 0").sample(&mut rng);
        let float_share: f64 = rng.random_range(0.3..1.0);
        for (k, year) in (cfg.years[0]..=cfg.years[1]).enumerate() {
            // always consume the same shock draws so pairing holds
            let u: f64 = shock_rng.random();
            // keep shocks clear of the sample edges, where weeks lack market lags or leads
            let lo = if k == 0 { SHOCK_EDGE } else { 0 };
            let hi = cfg.weeks_per_year - if year == cfg.years[1] { SHOCK_EDGE } else { 0 };
            let weeks: Vec<usize> =
                rand::seq::index::sample(&mut shock_rng, hi - lo, cfg.crash_weeks)
                    .into_iter()
                    .map(|w| w + lo)
                    .collect();
            let inject = designated.contains(firm.as_str()) || u < cfg.crash_shock_rate;
            if inject && cfg.crash_weeks > 0 && cfg.crash_shock_size > 0.0 {
                shocked.push((firm.clone(), year));
            }
            for w in 0..cfg.weeks_per_year {
                let t = k * cfg.weeks_per_year + w;
                let mut ret = beta * market[t] + idio.sample(&mut rng);
                if inject && weeks.contains(&w) {
                    ret -= cfg.crash_shock_size;
                }
                let ret = ret.max(-0.95);
                records.push(WeeklyReturnRecord {
                    firm_id: firm.clone(),
                    year,
                    week_index: t as i64,
                    ret,
                    float_market_cap: Some(float_cap),
                    total_market_cap: Some(float_cap / float_share),
                });
                float_cap *= 1.0 + ret;
            }
        }
    }
    Ok((records, shocked))
}

/// Literal terms that can be planted with exact counts: no other literal of
/// any dictionary occurs inside them and no pattern term matches them.
fn plantable(dicts: &DictionarySet, which: &crate::text::TermDictionary) -> Vec<String> {
    let all: Vec<&str> = dicts.all().iter().flat_map(|d| d.literals()).collect();
    let patterns: Vec<&regex::Regex> = dicts
        .all()
        .iter()
        .flat_map(|d| d.terms())
        .filter_map(|t| match t {
            Term::Pattern(r) => Some(r),
            Term::Literal(_) => None,
        })
        .collect();
    which
        .literals()
        .filter(|t| all.iter().all(|o| o == t || !t.contains(o)))
        .filter(|t| patterns.iter().all(|p| !p.is_match(t)))
        .filter(|t| !t.chars().any(char::is_whitespace) || t.split_whitespace().count() > 1)
        .map(String::from)
        .collect()
}

const FILLER_POOL: &str = "的一是在了有和人这我以要他时来们生到作地于出就分对成会可主年同也能过子说种面而方后多定行学所民得经十三之进着等部度家力里如水高自二起小物现实加量都两体当使点从本去把性好应开它合还因其些然前外天那社事形相全表间样与关各心你明看又么比或但质气第向道命此条只没结解问意建月公无系军很情者最立代想已通并题程五果料象员位入常文总次品式活设及特件头基边流路级少图山统接知较将组见计别她手角根论运农指几九区放决西被做必战先回则任取处府";

/// Renders one document per firm-year with exactly the planted counts.
/// Filler characters share no character with any dictionary literal, and
/// planted terms are separated by filler, so no match can span two terms.
pub fn generate_mda(
    cfg: &DgpConfig,
    dicts: &DictionarySet,
) -> Result<(Vec<MdaDocument>, Vec<PlantedCounts>), SynthError> {
    cfg.validate()?;
    let counts = planted_counts(cfg);
    render_documents(cfg, dicts, &counts).map(|docs| (docs, counts))
}

pub fn render_documents(
    cfg: &DgpConfig,
    dicts: &DictionarySet,
    counts: &[PlantedCounts],
) -> Result<Vec<MdaDocument>, SynthError> {
    let used: BTreeSet<char> = dicts
        .all()
        .iter()
        .flat_map(|d| d.literals())
        .flat_map(|t| t.chars().collect::<Vec<_>>())
        .collect();
    let filler: Vec<char> = FILLER_POOL.chars().filter(|c| !used.contains(c)).collect();
    if filler.len() < 10 {
        return Err(SynthError::InvalidConfig(
            "dictionaries leave too few filler characters".into(),
        ));
    }
    let pools = [
        (&dicts.digital, plantable(dicts, &dicts.digital)),
        (&dicts.epu, plantable(dicts, &dicts.epu)),
        (&dicts.positive, plantable(dicts, &dicts.positive)),
        (&dicts.negative, plantable(dicts, &dicts.negative)),
    ];

    let mut docs = Vec::with_capacity(counts.len());
    let mut by_firm: BTreeMap<&str, usize> = BTreeMap::new();
    for c in counts {
        let next = by_firm.len();
        let f = *by_firm.entry(c.firm_id.as_str()).or_insert(next);
        // one stream per firm-year, derived from the firm's text stream
        let mut rng = stream(
            cfg.seed ^ (c.year as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            TEXT,
            f,
        );
        let mut terms: Vec<&str> = Vec::new();
        for ((dict, pool), n) in pools.iter().zip([c.dt, c.epu, c.pos, c.neg]) {
            if n > 0 && pool.is_empty() {
                return Err(SynthError::NoPlantableTerms(dict.name().to_string()));
            }
            for _ in 0..n {
                terms.push(pool.choose(&mut rng).expect("non-empty"));
            }
        }
        // shuffle placement order
        for i in (1..terms.len()).rev() {
            let j = rng.random_range(0..=i);
            terms.swap(i, j);
        }
        let term_len: usize = terms.iter().map(|t| crate::text::measure_length(t)).sum();
        let gaps = terms.len() + 1;
        let filler_total = c.length.saturating_sub(term_len).max(gaps);
        // random composition of filler_total into `gaps` parts, each >= 1
        let mut cuts: Vec<usize> = rand::seq::index::sample(&mut rng, filler_total - 1, gaps - 1)
            .into_iter()
            .map(|c| c + 1)
            .collect();
        cuts.sort_unstable();
        let mut sizes = Vec::with_capacity(gaps);
        let mut prev = 0;
        for c in cuts.into_iter().chain([filler_total]) {
            sizes.push(c - prev);
            prev = c;
        }
        let mut text = String::new();
        for (k, size) in sizes.into_iter().enumerate() {
            for _ in 0..size {
                text.push(*filler.choose(&mut rng).expect("non-empty"));
            }
            if let Some(t) = terms.get(k) {
                text.push_str(t);
            }
        }
        docs.push(MdaDocument {
            firm_id: c.firm_id.clone(),
            year: c.year,
            text,
        });
    }
    Ok(docs)
}

/// File names written by [`write_bundle`].
pub const BUNDLE_FILES: [&str; 5] = [
    "firm_years.csv",
    "weekly_returns.csv",
    "mda.csv",
    "truth.json",
    "latent.csv",
];

/// Generates everything and writes it under `dir`.
pub fn write_bundle(
    cfg: &DgpConfig,
    dicts: &DictionarySet,
    dir: &Path,
) -> Result<TruthLedger, SynthError> {
    std::fs::create_dir_all(dir)?;
    let mut synth = generate_panel(cfg)?;
    let (weekly, shocked) = generate_weekly_returns(cfg)?;
    let docs = render_documents(cfg, dicts, &synth.truth.planted)?;
    synth.truth.shocked_firm_years = shocked;

    let create = |name: &str| -> Result<BufWriter<File>, SynthError> {
        Ok(BufWriter::new(File::create(dir.join(name))?))
    };
    write_firm_years(create(BUNDLE_FILES[0])?, &synth.firm_years)?;
    write_weekly_returns(create(BUNDLE_FILES[1])?, &weekly)?;
    write_mda_csv(create(BUNDLE_FILES[2])?, &docs)?;
    let mut tj = create(BUNDLE_FILES[3])?;
    serde_json::to_writer_pretty(&mut tj, &synth.truth)?;
    writeln!(tj)?;
    tj.flush()?;
    let mut w = csv::Writer::from_writer(create(BUNDLE_FILES[4])?);
    w.write_record(["firm_id", "year", "gdt", "spcr"])
        .map_err(IngestError::from)?;
    for l in &synth.latent {
        w.write_record([
            l.firm_id.clone(),
            l.year.to_string(),
            format!("{}", l.gdt),
            format!("{}", l.spcr),
        ])
        .map_err(IngestError::from)?;
    }
    w.flush()?;
    Ok(synth.truth)
}
