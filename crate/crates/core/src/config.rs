//! Declarative run configuration, loaded from JSON.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crash::CrashConfig;
use crate::gdt::GdtOptions;
use crate::inference::{CoefDiffMethod, MedianMethod, VarianceMethod, MIN_REPLICATIONS};
use crate::ingest::{ColumnMap, SamplePolicy, REGRESSION_CONTROLS};
use crate::report::OutputFormat;
use crate::synth::DgpConfig;
use crate::text::{DictionarySet, TermDictionary, TextError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryPaths {
    pub digital: Option<PathBuf>,
    pub epu: Option<PathBuf>,
    pub positive: Option<PathBuf>,
    pub negative: Option<PathBuf>,
}

/// Input files. A missing entry falls back to the synthetic bundle when a
/// `synth` section is present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub firm_years: Option<PathBuf>,
    pub weekly_returns: Option<PathBuf>,
    /// CSV with `firm_id,year,text` or a directory of `{firm_id}_{year}.txt`.
    pub mda: Option<PathBuf>,
    pub dictionaries: DictionaryPaths,
    /// Header names for `firm_years` fields that differ from the defaults.
    pub firm_year_columns: ColumnMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableId {
    T4,
    T5,
    T6,
    T7,
    T8,
}

impl TableId {
    pub const ALL: [TableId; 5] = [
        TableId::T4,
        TableId::T5,
        TableId::T6,
        TableId::T7,
        TableId::T8,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TableId::T4 => "t4",
            TableId::T5 => "t5",
            TableId::T6 => "t6",
            TableId::T7 => "t7",
            TableId::T8 => "t8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionMenu {
    pub tables: BTreeSet<TableId>,
    pub controls: Vec<String>,
    /// Regression columns are fitted in parallel.
    pub parallel: bool,
}

impl Default for RegressionMenu {
    fn default() -> Self {
        Self {
            tables: TableId::ALL.into_iter().collect(),
            controls: REGRESSION_CONTROLS.iter().map(|s| s.to_string()).collect(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceOptions {
    /// Replication counts for the subgroup coefficient-difference test.
    pub b_list: Vec<usize>,
    /// Replications for the median-difference permutation test.
    pub median_replications: usize,
    pub seed: Option<u64>,
    pub variance_method: VarianceMethod,
    pub median_method: MedianMethod,
    pub coef_diff_method: CoefDiffMethod,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            b_list: vec![500, 1000],
            median_replications: 1000,
            seed: None,
            variance_method: VarianceMethod::FRatio,
            median_method: MedianMethod::Permutation,
            coef_diff_method: CoefDiffMethod::FirmPermutation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputPaths,
    pub sample: SamplePolicy,
    pub crash: CrashConfig,
    pub gdt: GdtOptions,
    pub regression: RegressionMenu,
    pub inference: InferenceOptions,
    pub out_dir: PathBuf,
    pub formats: BTreeSet<OutputFormat>,
    /// Also write `yearly_means.csv`.
    pub yearly_means: bool,
    pub synth: Option<DgpConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: InputPaths::default(),
            sample: SamplePolicy::default(),
            crash: CrashConfig::default(),
            gdt: GdtOptions::default(),
            regression: RegressionMenu::default(),
            inference: InferenceOptions::default(),
            out_dir: PathBuf::from("out"),
            formats: [OutputFormat::Csv, OutputFormat::Markdown]
                .into_iter()
                .collect(),
            yearly_means: true,
            synth: None,
        }
    }
}

/// Which input a path refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    FirmYears,
    WeeklyReturns,
    Mda,
}

impl RunConfig {
    /// Reads a config file. Relative input paths and `out_dir` are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.inputs.firm_years,
            &mut self.inputs.weekly_returns,
            &mut self.inputs.mda,
            &mut self.inputs.dictionaries.digital,
            &mut self.inputs.dictionaries.epu,
            &mut self.inputs.dictionaries.positive,
            &mut self.inputs.dictionaries.negative,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out_dir);
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.out_dir.join("synth")
    }

    /// Configured path, or the synthetic bundle's file when a `synth`
    /// section is present.
    pub fn input_path(&self, which: Input) -> Option<PathBuf> {
        let (explicit, bundled) = match which {
            Input::FirmYears => (&self.inputs.firm_years, "firm_years.csv"),
            Input::WeeklyReturns => (&self.inputs.weekly_returns, "weekly_returns.csv"),
            Input::Mda => (&self.inputs.mda, "mda.csv"),
        };
        explicit
            .clone()
            .or_else(|| self.synth.as_ref().map(|_| self.synth_dir().join(bundled)))
    }

    pub fn resampling_enabled(&self) -> bool {
        self.inference.median_method == MedianMethod::Permutation
            || self.regression.tables.contains(&TableId::T8)
    }

    /// Checks everything that can be checked before any stage runs.
    /// Input files produced by the synth stage are not required to exist yet.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sample
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        if let Some(s) = &self.synth {
            s.validate().map_err(|e| ConfigError(e.to_string()))?;
        }
        if self.resampling_enabled() && self.inference.seed.is_none() {
            return Err(ConfigError(
                "inference.seed is required when resampling tests are enabled".into(),
            ));
        }
        if let Some(&b) = self
            .inference
            .b_list
            .iter()
            .find(|&&b| b < MIN_REPLICATIONS)
        {
            return Err(ConfigError(format!(
                "b_list entry {b} is below the minimum of {MIN_REPLICATIONS}"
            )));
        }
        if self.regression.tables.contains(&TableId::T8) && self.inference.b_list.is_empty() {
            return Err(ConfigError("b_list is empty".into()));
        }
        if self.inference.median_method == MedianMethod::Permutation
            && self.inference.median_replications < MIN_REPLICATIONS
        {
            return Err(ConfigError(format!(
                "median_replications {} is below the minimum of {MIN_REPLICATIONS}",
                self.inference.median_replications
            )));
        }
        if self.crash.weightings.is_empty() {
            return Err(ConfigError("crash.weightings is empty".into()));
        }
        if self.formats.is_empty() {
            return Err(ConfigError("formats is empty".into()));
        }
        for (name, input) in [
            ("firm_years", Input::FirmYears),
            ("weekly_returns", Input::WeeklyReturns),
            ("mda", Input::Mda),
        ] {
            match (self.input_path(input), &self.synth) {
                (None, _) => {
                    return Err(ConfigError(format!(
                        "inputs.{name} is not set and there is no synth section"
                    )))
                }
                (Some(p), None) if !p.exists() => {
                    return Err(ConfigError(format!(
                        "inputs.{name}: {} does not exist",
                        p.display()
                    )))
                }
                _ => {}
            }
        }
        let d = &self.inputs.dictionaries;
        for (name, p) in [
            ("digital", &d.digital),
            ("epu", &d.epu),
            ("positive", &d.positive),
            ("negative", &d.negative),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError(format!(
                        "inputs.dictionaries.{name}: {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Configured dictionaries, with the built-in ones filling any gaps.
    pub fn dictionaries(&self) -> Result<DictionarySet, TextError> {
        let mut set = DictionarySet::builtin();
        let d = &self.inputs.dictionaries;
        for (slot, name, path) in [
            (&mut set.digital, "digital", &d.digital),
            (&mut set.epu, "epu", &d.epu),
            (&mut set.positive, "positive", &d.positive),
            (&mut set.negative, "negative", &d.negative),
        ] {
            if let Some(p) = path {
                *slot = TermDictionary::load(name, p)?;
            }
        }
        Ok(set)
    }
}
