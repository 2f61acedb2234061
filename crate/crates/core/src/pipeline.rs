//! Stage orchestration. Every stage reads the previous stages' files under
//! the output directory and writes its own subdirectory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, Input, RunConfig, TableId};
use crate::crash::{assemble_spcr, read_crash_risk, write_crash_risk, write_diagnostics};
use crate::gdt::{estimate_gdt, read_gdt, split_groups, write_gdt, GdtError, SplitKey};
use crate::inference::{
    coefficient_difference_test, group_test_report, summary_statistics, CoefDiffReport,
    GroupTestReport, InferenceError, SummaryRow,
};
use crate::ingest::{
    apply_sample_filters, load_firm_years, load_mda_corpus, load_weekly_returns, write_firm_years,
    write_mda_csv, write_rejects, write_weekly_returns, ColumnMap, IngestError,
};
use crate::panel::{build_panel, PanelDataset, PanelError};
use crate::regression::{run_specification, RegressionError, RegressionResult, Specification};
use crate::report::{
    render_group_test_table, render_summary_table, OutputFormat, RegressionTable, TValuePlacement,
};
use crate::synth::{write_bundle, SynthError};
use crate::text::{read_text_metrics, score_corpus, write_text_metrics, TextError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Synth,
    Ingest,
    Text,
    Crash,
    Gdt,
    Regress,
    Tests,
    Report,
    RunAll,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Text => "text",
            Stage::Crash => "crash",
            Stage::Gdt => "gdt",
            Stage::Regress => "regress",
            Stage::Tests => "tests",
            Stage::Report => "report",
            Stage::RunAll => "run-all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Estimation,
}

#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[error("{stage:?} stage: {message}")]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub stage: Stage,
    pub message: String,
    /// The offending variable, when one is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
}

impl PipelineError {
    fn new(kind: ErrorKind, stage: Stage, message: impl Into<String>) -> Self {
        Self {
            kind,
            stage,
            message: message.into(),
            variable: None,
        }
    }

    fn validation(stage: Stage, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, stage, message)
    }

    fn estimation(stage: Stage, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Estimation, stage, message)
    }

    fn unknown_variable(stage: Stage, name: &str) -> Self {
        Self {
            variable: Some(name.into()),
            ..Self::validation(stage, format!("unknown variable `{name}`"))
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 1,
            ErrorKind::Estimation => 2,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }

    fn regression(stage: Stage, e: RegressionError) -> Self {
        match e {
            RegressionError::UnknownVariable(v) => Self::unknown_variable(stage, &v),
            other => Self::estimation(stage, other.to_string()),
        }
    }

    fn gdt(stage: Stage, e: GdtError) -> Self {
        match e {
            GdtError::MissingVariable(v) => Self::unknown_variable(stage, &v),
            GdtError::Regression(r) => Self::regression(stage, r),
            GdtError::Csv(c) => Self::validation(stage, c.to_string()),
            other => Self::estimation(stage, other.to_string()),
        }
    }

    fn inference(stage: Stage, e: InferenceError) -> Self {
        match e {
            InferenceError::UnknownVariable(v) | InferenceError::UnknownFocal(v) => {
                Self::unknown_variable(stage, &v)
            }
            InferenceError::TooFewReplications(_) => Self::validation(stage, e.to_string()),
            InferenceError::Regression(r) => Self::regression(stage, r),
            other => Self::estimation(stage, other.to_string()),
        }
    }

    fn panel(stage: Stage, e: PanelError) -> Self {
        match e {
            PanelError::UnknownVariable(v) => Self::unknown_variable(stage, &v),
            PanelError::EmptyJoin | PanelError::LengthMismatch { .. } => {
                Self::estimation(stage, e.to_string())
            }
            other => Self::validation(stage, other.to_string()),
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        Self::validation(Stage::RunAll, e.0)
    }
}

/// What a stage wrote, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

type StageResult<T> = Result<T, PipelineError>;

struct Ctx<'a> {
    cfg: &'a RunConfig,
    stage: Stage,
    report: StageReport,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a RunConfig, stage: Stage) -> Self {
        Self {
            cfg,
            stage,
            report: StageReport {
                stage,
                outputs: Vec::new(),
                warnings: Vec::new(),
            },
        }
    }

    /// A prior stage's output, which must exist.
    fn input(&self, rel: &str) -> StageResult<PathBuf> {
        let p = self.cfg.out_dir.join(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::validation(
                self.stage,
                format!("missing input {rel}; run the stage that produces it first"),
            ))
        }
    }

    fn create(&mut self, rel: &str) -> StageResult<BufWriter<File>> {
        let p = self.cfg.out_dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| self.io(&p, e))?;
        }
        let f = File::create(&p).map_err(|e| self.io(&p, e))?;
        self.report.outputs.push(rel.to_string());
        Ok(BufWriter::new(f))
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> StageResult<()> {
        let mut w = self.create(rel)?;
        serde_json::to_writer_pretty(&mut w, value)
            .map_err(|e| PipelineError::validation(self.stage, e.to_string()))?;
        writeln!(w)
            .and_then(|_| w.flush())
            .map_err(|e| self.io(Path::new(rel), e))
    }

    fn write_text(&mut self, rel: &str, text: &str) -> StageResult<()> {
        let mut w = self.create(rel)?;
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| self.io(Path::new(rel), e))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> StageResult<T> {
        let p = self.input(rel)?;
        let raw = std::fs::read_to_string(&p).map_err(|e| self.io(&p, e))?;
        serde_json::from_str(&raw)
            .map_err(|e| PipelineError::validation(self.stage, format!("{rel}: {e}")))
    }

    fn io(&self, p: &Path, e: std::io::Error) -> PipelineError {
        PipelineError::validation(self.stage, format!("{}: {e}", p.display()))
    }

    fn ingest_err(&self, e: IngestError) -> PipelineError {
        PipelineError::validation(self.stage, e.to_string())
    }

    fn csv_err(&self, e: csv::Error) -> PipelineError {
        PipelineError::validation(self.stage, e.to_string())
    }

    fn text_err(&self, e: TextError) -> PipelineError {
        PipelineError::validation(self.stage, e.to_string())
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.report.warnings.push(msg);
    }
}

/// Runs one stage after validating the configuration.
pub fn run_stage(cfg: &RunConfig, stage: Stage) -> StageResult<Vec<StageReport>> {
    cfg.validate()
        .map_err(|e| PipelineError::validation(stage, e.0))?;
    if stage == Stage::RunAll {
        return run_all(cfg);
    }
    Ok(vec![dispatch(cfg, stage)?])
}

fn dispatch(cfg: &RunConfig, stage: Stage) -> StageResult<StageReport> {
    log::info!("stage {}", stage.as_str());
    let mut ctx = Ctx::new(cfg, stage);
    match stage {
        Stage::Synth => synth_stage(&mut ctx)?,
        Stage::Ingest => ingest_stage(&mut ctx)?,
        Stage::Text => text_stage(&mut ctx)?,
        Stage::Crash => crash_stage(&mut ctx)?,
        Stage::Gdt => gdt_stage(&mut ctx)?,
        Stage::Regress => regress_stage(&mut ctx)?,
        Stage::Tests => tests_stage(&mut ctx)?,
        Stage::Report => report_stage(&mut ctx)?,
        Stage::RunAll => unreachable!("run-all is not a single stage"),
    }
    Ok(ctx.report)
}

/// Runs every stage in order; `synth` only when configured.
pub fn run_all(cfg: &RunConfig) -> StageResult<Vec<StageReport>> {
    cfg.validate()
        .map_err(|e| PipelineError::validation(Stage::RunAll, e.0))?;
    let mut stages = Vec::new();
    if cfg.synth.is_some() {
        stages.push(Stage::Synth);
    }
    stages.extend([
        Stage::Ingest,
        Stage::Text,
        Stage::Crash,
        Stage::Gdt,
        Stage::Regress,
        Stage::Tests,
        Stage::Report,
    ]);
    stages.into_iter().map(|s| dispatch(cfg, s)).collect()
}

fn synth_stage(ctx: &mut Ctx) -> StageResult<()> {
    let Some(dgp) = &ctx.cfg.synth else {
        return Err(PipelineError::validation(
            ctx.stage,
            "no synth section in config",
        ));
    };
    let dicts = ctx.cfg.dictionaries().map_err(|e| ctx.text_err(e))?;
    let dir = ctx.cfg.synth_dir();
    write_bundle(dgp, &dicts, &dir)
        .map_err(|e: SynthError| PipelineError::validation(Stage::Synth, e.to_string()))?;
    for f in crate::synth::BUNDLE_FILES {
        ctx.report.outputs.push(format!("synth/{f}"));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    firm_years_loaded: usize,
    firm_years_rejected: usize,
    firm_years_excluded: BTreeMap<String, usize>,
    firm_years_kept: usize,
    weekly_loaded: usize,
    weekly_rejected: usize,
    mda_loaded: usize,
    mda_rejected: usize,
}

fn source(ctx: &Ctx, which: Input, name: &str) -> StageResult<PathBuf> {
    match ctx.cfg.input_path(which) {
        Some(p) if p.exists() => Ok(p),
        Some(p) => Err(PipelineError::validation(
            ctx.stage,
            format!("inputs.{name}: {} does not exist", p.display()),
        )),
        None => Err(PipelineError::validation(
            ctx.stage,
            format!("inputs.{name} is not set"),
        )),
    }
}

fn ingest_stage(ctx: &mut Ctx) -> StageResult<()> {
    let cfg = ctx.cfg;
    let fy = load_firm_years(
        &source(ctx, Input::FirmYears, "firm_years")?,
        &cfg.inputs.firm_year_columns,
    )
    .map_err(|e| ctx.ingest_err(e))?;
    let weekly = load_weekly_returns(&source(ctx, Input::WeeklyReturns, "weekly_returns")?)
        .map_err(|e| ctx.ingest_err(e))?;
    let mda = load_mda_corpus(&source(ctx, Input::Mda, "mda")?).map_err(|e| ctx.ingest_err(e))?;

    let loaded = fy.records.len();
    let (kept, ledger) = apply_sample_filters(fy.records, &cfg.sample);
    if kept.is_empty() {
        return Err(PipelineError::estimation(
            ctx.stage,
            "no firm-years survive the sample filters",
        ));
    }
    for (n, what) in [
        (fy.rejects.len(), "firm-year"),
        (weekly.rejects.len(), "weekly return"),
        (mda.rejects.len(), "MD&A"),
    ] {
        if n > 0 {
            ctx.warn(format!("{n} {what} rows rejected"));
        }
    }

    let summary = IngestSummary {
        firm_years_loaded: loaded + fy.rejects.len(),
        firm_years_rejected: fy.rejects.len(),
        firm_years_excluded: ledger
            .counts
            .iter()
            .map(|(r, c)| (r.as_str().to_string(), *c))
            .collect(),
        firm_years_kept: kept.len(),
        weekly_loaded: weekly.records.len(),
        weekly_rejected: weekly.rejects.len(),
        mda_loaded: mda.records.len(),
        mda_rejected: mda.rejects.len(),
    };

    let w = ctx.create("ingest/firm_years.csv")?;
    write_firm_years(w, &kept).map_err(|e| ctx.ingest_err(e))?;
    let w = ctx.create("ingest/weekly_returns.csv")?;
    write_weekly_returns(w, &weekly.records).map_err(|e| ctx.ingest_err(e))?;
    let w = ctx.create("ingest/mda.csv")?;
    write_mda_csv(w, &mda.records).map_err(|e| ctx.ingest_err(e))?;
    for (rel, rejects) in [
        ("ingest/rejects_firm_years.csv", &fy.rejects),
        ("ingest/rejects_weekly_returns.csv", &weekly.rejects),
        ("ingest/rejects_mda.csv", &mda.rejects),
    ] {
        let w = ctx.create(rel)?;
        write_rejects(w, rejects).map_err(|e| ctx.ingest_err(e))?;
    }
    let w = ctx.create("ingest/exclusions.csv")?;
    ledger.write_csv(w).map_err(|e| ctx.ingest_err(e))?;
    ctx.write_json("ingest/summary.json", &summary)
}

fn text_stage(ctx: &mut Ctx) -> StageResult<()> {
    let docs = load_mda_corpus(&ctx.input("ingest/mda.csv")?).map_err(|e| ctx.ingest_err(e))?;
    let dicts = ctx.cfg.dictionaries().map_err(|e| ctx.text_err(e))?;
    let metrics = score_corpus(&docs.records, &dicts);
    if metrics.len() < docs.records.len() {
        ctx.warn(format!(
            "{} documents could not be scored",
            docs.records.len() - metrics.len()
        ));
    }
    let w = ctx.create("text/text_metrics.csv")?;
    write_text_metrics(w, &metrics).map_err(|e| ctx.text_err(e))
}

fn crash_stage(ctx: &mut Ctx) -> StageResult<()> {
    let weekly = load_weekly_returns(&ctx.input("ingest/weekly_returns.csv")?)
        .map_err(|e| ctx.ingest_err(e))?;
    let (records, diags) = assemble_spcr(&weekly.records, &ctx.cfg.crash);
    if records.is_empty() {
        return Err(PipelineError::estimation(
            ctx.stage,
            "no firm-year has enough weeks for a crash-risk measure",
        ));
    }
    if !diags.is_empty() {
        ctx.warn(format!(
            "{} crash-risk diagnostics; see crash/diagnostics.csv",
            diags.len()
        ));
    }
    let w = ctx.create("crash/crash_risk.csv")?;
    write_crash_risk(w, &records).map_err(|e| ctx.csv_err(e))?;
    let w = ctx.create("crash/diagnostics.csv")?;
    write_diagnostics(w, &diags).map_err(|e| ctx.csv_err(e))
}

fn load_stage_inputs(
    ctx: &Ctx,
) -> StageResult<(
    Vec<crate::ingest::FirmYearRecord>,
    Vec<crate::text::TextMetricsRecord>,
)> {
    let fy = load_firm_years(&ctx.input("ingest/firm_years.csv")?, &ColumnMap::default())
        .map_err(|e| ctx.ingest_err(e))?;
    let tm =
        read_text_metrics(&ctx.input("text/text_metrics.csv")?).map_err(|e| ctx.text_err(e))?;
    Ok((fy.records, tm))
}

fn winsorized(ctx: &mut Ctx, mut panel: PanelDataset) -> StageResult<PanelDataset> {
    let skipped = panel
        .winsorize_continuous(
            ctx.cfg.sample.winsor_fraction,
            ctx.cfg.sample.quantile_method,
        )
        .map_err(|e| PipelineError::panel(ctx.stage, e))?;
    for name in skipped {
        ctx.warn(format!(
            "`{name}` has fewer than 2 values and was not winsorized"
        ));
    }
    Ok(panel)
}

fn gdt_stage(ctx: &mut Ctx) -> StageResult<()> {
    let (fy, tm) = load_stage_inputs(ctx)?;
    let panel =
        build_panel(&fy, &tm, None, None).map_err(|e| PipelineError::panel(ctx.stage, e))?;
    let panel = winsorized(ctx, panel)?;
    let est = estimate_gdt(&panel, &ctx.cfg.gdt).map_err(|e| PipelineError::gdt(ctx.stage, e))?;
    ctx.report
        .warnings
        .extend(est.regression.warnings.iter().cloned());
    let w = ctx.create("gdt/gdt.csv")?;
    write_gdt(w, &est.records).map_err(|e| ctx.csv_err(e))?;
    ctx.write_json("gdt/regression.json", &est.regression)
}

/// The estimation panel: firm-years, text metrics, crash risk, and GDT,
/// winsorized under the sample policy.
fn final_panel(ctx: &mut Ctx) -> StageResult<PanelDataset> {
    let (fy, tm) = load_stage_inputs(ctx)?;
    let crash = read_crash_risk(&ctx.input("crash/crash_risk.csv")?).map_err(|e| ctx.csv_err(e))?;
    let gdt = read_gdt(&ctx.input("gdt/gdt.csv")?).map_err(|e| ctx.csv_err(e))?;
    let panel = build_panel(&fy, &tm, Some(&crash), Some(&gdt))
        .map_err(|e| PipelineError::panel(ctx.stage, e))?;
    winsorized(ctx, panel)
}

/// One regression column: the specification and an optional subsample.
struct Column {
    spec: Specification,
    subsample: Option<bool>,
}

struct TableDef {
    title: &'static str,
    placement: TValuePlacement,
    show: Option<Vec<String>>,
    labels: Vec<String>,
    columns: Vec<Column>,
}

fn with_controls(dep: &str, head: &[&str], controls: &[String]) -> Specification {
    let mut regs: Vec<&str> = head.to_vec();
    regs.extend(controls.iter().map(String::as_str));
    Specification::new(dep, &regs)
}

fn plain(spec: Specification) -> Column {
    Column {
        spec,
        subsample: None,
    }
}

/// Specification used for the subgroup columns and their difference test.
pub fn subgroup_spec(controls: &[String]) -> Specification {
    with_controls("SPCR", &["GDT"], controls)
}

fn table_def(id: TableId, controls: &[String]) -> TableDef {
    let none = TableDef {
        title: "",
        placement: TValuePlacement::Inline,
        show: None,
        labels: Vec::new(),
        columns: Vec::new(),
    };
    match id {
        TableId::T4 => TableDef {
            title: "Baseline regression of GDT on SPCR",
            columns: vec![
                plain(Specification::new("SPCR", &["GDT"])),
                plain(with_controls("SPCR", &["GDT"], controls)),
            ],
            ..none
        },
        TableId::T5 => TableDef {
            title: "Alternative crash-risk measures",
            columns: ["SPCR1", "SPCR2"]
                .iter()
                .map(|d| plain(with_controls(d, &["GDT"], controls)))
                .collect(),
            ..none
        },
        TableId::T6 => TableDef {
            title: "Alternative gap measures",
            columns: ["GDT1", "GDT2"]
                .iter()
                .flat_map(|g| {
                    ["SPCR", "SPCR1", "SPCR2"].map(|d| plain(with_controls(d, &[g], controls)))
                })
                .collect(),
            ..none
        },
        TableId::T7 => TableDef {
            title: "Policy uncertainty, losses, and GDT",
            show: Some(vec!["FEPU".into(), "Loss".into(), "FEPU:Loss".into()]),
            columns: vec![
                plain(Specification::new("GDT", &["FEPU"])),
                plain(with_controls("GDT", &["FEPU"], controls)),
                plain(
                    with_controls("GDT", &["FEPU", "Loss"], controls)
                        .with_interaction("FEPU", "Loss"),
                ),
            ],
            ..none
        },
        TableId::T8 => TableDef {
            title: "Subgroup analysis by ownership",
            placement: TValuePlacement::Below,
            show: Some(vec!["GDT".into()]),
            labels: vec!["SOE".into(), "Non-SOE".into()],
            columns: [true, false]
                .into_iter()
                .map(|g| Column {
                    spec: subgroup_spec(controls),
                    subsample: Some(g),
                })
                .collect(),
        },
    }
}

fn soe_mask(panel: &PanelDataset, stage: Stage) -> StageResult<Vec<Option<bool>>> {
    let split = split_groups(panel, SplitKey::Soe).map_err(|e| PipelineError::gdt(stage, e))?;
    let mut mask = vec![None; panel.len()];
    for &i in &split.group1 {
        mask[i] = Some(true);
    }
    for &i in &split.group2 {
        mask[i] = Some(false);
    }
    Ok(mask)
}

fn fit_column(
    panel: &PanelDataset,
    soe: Option<&[Option<bool>]>,
    col: &Column,
) -> Result<(RegressionResult, Option<f64>), RegressionError> {
    match (col.subsample, soe) {
        (Some(g), Some(mask)) => {
            let keep: Vec<bool> = mask.iter().map(|m| *m == Some(g)).collect();
            let sub = panel.filter(&keep);
            let r = run_specification(&sub, &col.spec)?;
            let gdt = sub.require("GDT")?;
            let vals: Vec<f64> = r.rows.iter().filter_map(|&i| gdt[i]).collect();
            Ok((r, Some(crate::stats::mean(&vals))))
        }
        _ => Ok((run_specification(panel, &col.spec)?, None)),
    }
}

fn regress_stage(ctx: &mut Ctx) -> StageResult<()> {
    let panel = final_panel(ctx)?;
    let w = ctx.create("regress/panel.csv")?;
    panel
        .write_csv(w)
        .map_err(|e| PipelineError::panel(Stage::Regress, e))?;
    let controls = ctx.cfg.regression.controls.clone();
    let soe = if ctx.cfg.regression.tables.contains(&TableId::T8) {
        Some(soe_mask(&panel, ctx.stage)?)
    } else {
        None
    };

    for &id in &ctx.cfg.regression.tables {
        let def = table_def(id, &controls);
        let fits: Vec<_> = if ctx.cfg.regression.parallel {
            def.columns
                .par_iter()
                .map(|c| fit_column(&panel, soe.as_deref(), c))
                .collect()
        } else {
            def.columns
                .iter()
                .map(|c| fit_column(&panel, soe.as_deref(), c))
                .collect()
        };
        let mut results = Vec::new();
        let mut means = Vec::new();
        for f in fits {
            let (r, m) = f.map_err(|e| PipelineError::regression(Stage::Regress, e))?;
            for w in &r.warnings {
                ctx.warn(format!("{} ({}): {w}", id.as_str(), r.dependent));
            }
            results.push(r);
            means.extend(m);
        }
        let table = RegressionTable {
            id: id.as_str().to_uppercase(),
            title: def.title.into(),
            placement: def.placement,
            show: def.show,
            column_labels: def.labels,
            results,
            extra_means: if means.is_empty() {
                Vec::new()
            } else {
                vec![("GDT (mean)".into(), means)]
            },
        };
        ctx.write_json(&format!("regress/{}.json", id.as_str()), &table)?;
    }

    if ctx.cfg.yearly_means {
        let csv = yearly_means(&panel, &["DTW", "DTD", "GDT", "SPCR"]);
        ctx.write_text("regress/yearly_means.csv", &csv)?;
    }
    Ok(())
}

/// Per-year means of the named columns over non-missing values.
pub fn yearly_means(panel: &PanelDataset, names: &[&str]) -> String {
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, (_, y)) in panel.keys().iter().enumerate() {
        by_year.entry(*y).or_default().push(i);
    }
    let present: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| panel.column(n).is_some())
        .collect();
    let mut out = format!("year,n,{}\n", present.join(","));
    for (year, rows) in by_year {
        let mut line = format!("{year},{}", rows.len());
        for n in &present {
            let col = panel.column(n).expect("checked");
            let vals: Vec<f64> = rows.iter().filter_map(|&i| col[i]).collect();
            line.push(',');
            if !vals.is_empty() {
                line.push_str(&format!("{}", crate::stats::mean(&vals)));
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

fn tests_stage(ctx: &mut Ctx) -> StageResult<()> {
    let panel = final_panel(ctx)?;
    let cfg = ctx.cfg;
    let inf = &cfg.inference;
    let seed = inf.seed.unwrap_or(0);

    let mut vars: Vec<&str> = vec!["SPCR", "GDT"];
    vars.extend(cfg.regression.controls.iter().map(String::as_str));
    let summary: Vec<SummaryRow> =
        summary_statistics(&panel, &vars).map_err(|e| PipelineError::inference(Stage::Tests, e))?;
    ctx.write_json("tests/t2_summary.json", &summary)?;

    let split =
        split_groups(&panel, SplitKey::GdtSign).map_err(|e| PipelineError::gdt(Stage::Tests, e))?;
    let spcr = panel
        .require("SPCR")
        .map_err(|e| PipelineError::panel(Stage::Tests, e))?;
    let pick = |rows: &[usize]| -> Vec<f64> { rows.iter().filter_map(|&i| spcr[i]).collect() };
    let report: GroupTestReport = group_test_report(
        "SPCR",
        split.labels,
        &pick(&split.group1),
        &pick(&split.group2),
        inf.median_replications,
        seed,
        inf.variance_method,
        inf.median_method,
    )
    .map_err(|e| PipelineError::inference(Stage::Tests, e))?;
    ctx.write_json("tests/t3_group_test.json", &report)?;

    if cfg.regression.tables.contains(&TableId::T8) {
        let mask = soe_mask(&panel, Stage::Tests)?;
        let diff: CoefDiffReport = coefficient_difference_test(
            &panel,
            &subgroup_spec(&cfg.regression.controls),
            "GDT",
            &mask,
            ["SOE", "Non-SOE"],
            &inf.b_list,
            seed,
            inf.coef_diff_method,
        )
        .map_err(|e| PipelineError::inference(Stage::Tests, e))?;
        for p in &diff.points {
            if p.failed > 0 {
                ctx.warn(format!(
                    "{} of {} replications failed to estimate",
                    p.failed, p.replications
                ));
            }
        }
        ctx.write_json("tests/t8_coef_diff.json", &diff)?;
    }
    Ok(())
}

fn report_stage(ctx: &mut Ctx) -> StageResult<()> {
    let summary: Vec<SummaryRow> = ctx.read_json("tests/t2_summary.json")?;
    let group: GroupTestReport = ctx.read_json("tests/t3_group_test.json")?;
    let mut tables = vec![
        (
            "t2",
            render_summary_table("T2", "Summary statistics", &summary),
        ),
        (
            "t3",
            render_group_test_table("T3", "Between-group difference test", &group),
        ),
    ];
    for &id in &ctx.cfg.regression.tables {
        let stored: RegressionTable = ctx.read_json(&format!("regress/{}.json", id.as_str()))?;
        let diff: Option<CoefDiffReport> = if id == TableId::T8 {
            Some(ctx.read_json("tests/t8_coef_diff.json")?)
        } else {
            None
        };
        tables.push((id.as_str(), stored.render(diff.as_ref())));
    }
    let formats: Vec<OutputFormat> = ctx.cfg.formats.iter().copied().collect();
    for (name, table) in &tables {
        for &f in &formats {
            ctx.write_text(
                &format!("tables/{name}.{}", f.extension()),
                &table.render(f),
            )?;
        }
    }
    if ctx.cfg.yearly_means {
        let src = ctx.input("regress/yearly_means.csv")?;
        let text = std::fs::read_to_string(&src).map_err(|e| ctx.io(&src, e))?;
        ctx.write_text("tables/yearly_means.csv", &text)?;
    }
    Ok(())
}
