//! Publication-style tables rendered from stored results.
//!
//! Rendering never recomputes statistics: stars come from stored p-values and
//! every number is formatted once into a cell string, which the markdown,
//! CSV, and LaTeX writers then share.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::inference::{stars, CoefDiffReport, GroupTestReport, SummaryRow};
use crate::regression::RegressionResult;

pub const STAR_NOTE: &str =
    "Note: *, **, and *** indicate statistical significance at the 10%, 5%, and 1% levels, respectively.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Markdown,
    Latex,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Markdown => "md",
            OutputFormat::Latex => "tex",
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            "latex" | "tex" => Ok(OutputFormat::Latex),
            other => Err(format!("unknown format `{other}` (csv, markdown, latex)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedTable {
    pub id: String,
    pub title: String,
    /// Header row; the first entry labels the row-name column.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub note: String,
}

/// Fixed-point with `digits` decimals; never prints `-0.000`.
pub fn fmt_num(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return String::new();
    }
    let s = format!("{v:.digits$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TValuePlacement {
    /// `0.075*** (3.25)` in one cell.
    #[default]
    Inline,
    /// t-value on its own row beneath the coefficient.
    Below,
}

/// Coefficient cell: 3-decimal estimate with stars, 2-decimal t-value.
pub fn coefficient_cell(estimate: f64, t_value: f64, p_value: f64) -> (String, String) {
    (
        format!("{}{}", fmt_num(estimate, 3), stars(p_value)),
        format!("({})", fmt_num(t_value, 2)),
    )
}

pub fn display_name(name: &str) -> String {
    name.replace(':', " × ")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionLayout {
    pub placement: TValuePlacement,
    /// Coefficients to display, in order; the rest are folded into a
    /// `Controls` row. `None` shows all.
    pub show: Option<Vec<String>>,
    /// Column headings after the `(k)` index, e.g. `SOE`.
    pub column_labels: Vec<String>,
    /// Rows appended after the footer.
    pub extra_rows: Vec<(String, Vec<String>)>,
}

pub fn render_regression_table(
    id: &str,
    title: &str,
    results: &[RegressionResult],
    layout: &RegressionLayout,
) -> RenderedTable {
    let k = results.len();
    let mut columns = vec![String::new()];
    for i in 0..k {
        match layout.column_labels.get(i) {
            Some(l) if !l.is_empty() => columns.push(format!("({}) {l}", i + 1)),
            _ => columns.push(format!("({})", i + 1)),
        }
    }
    let mut rows = vec![std::iter::once(String::new())
        .chain(results.iter().map(|r| r.dependent.clone()))
        .collect::<Vec<_>>()];

    let mut names: Vec<String> = Vec::new();
    for r in results {
        for c in &r.coefficients {
            if c.name != "_cons" && !names.contains(&c.name) {
                names.push(c.name.clone());
            }
        }
    }
    let shown: Vec<String> = match &layout.show {
        Some(s) => s.iter().filter(|n| names.contains(n)).cloned().collect(),
        None => names.clone(),
    };
    let hidden = |r: &RegressionResult| {
        r.coefficients
            .iter()
            .any(|c| c.name != "_cons" && !shown.contains(&c.name))
    };

    for name in shown.iter().map(String::as_str).chain(["_cons"]) {
        let mut est_row = vec![display_name(name)];
        let mut t_row = vec![String::new()];
        for r in results {
            match r.coef(name) {
                Some(c) => {
                    let (e, t) = coefficient_cell(c.estimate, c.t_value, c.p_value);
                    match layout.placement {
                        TValuePlacement::Inline => est_row.push(format!("{e} {t}")),
                        TValuePlacement::Below => {
                            est_row.push(e);
                            t_row.push(t);
                        }
                    }
                }
                None => {
                    est_row.push(String::new());
                    t_row.push(String::new());
                }
            }
        }
        rows.push(est_row);
        if layout.placement == TValuePlacement::Below {
            rows.push(t_row);
        }
    }
    let yes_no = |b: bool| if b { "Yes" } else { "No" }.to_string();
    if layout.show.is_some() {
        rows.push(
            std::iter::once("Controls".to_string())
                .chain(results.iter().map(|r| yes_no(hidden(r))))
                .collect(),
        );
    }
    rows.push(
        std::iter::once("Firm".to_string())
            .chain(results.iter().map(|r| yes_no(r.fe.absorb_firm)))
            .collect(),
    );
    rows.push(
        std::iter::once("Year".to_string())
            .chain(results.iter().map(|r| yes_no(r.fe.absorb_year)))
            .collect(),
    );
    rows.push(
        std::iter::once("N".to_string())
            .chain(results.iter().map(|r| r.n_obs.to_string()))
            .collect(),
    );
    rows.push(
        std::iter::once("adj. R²".to_string())
            .chain(results.iter().map(|r| fmt_num(r.adj_r2, 3)))
            .collect(),
    );
    for (label, cells) in &layout.extra_rows {
        let mut row = vec![label.clone()];
        if cells.len() > k {
            row.push(cells.join(", "));
        } else {
            row.extend(cells.iter().cloned());
        }
        row.resize(k + 1, String::new());
        rows.push(row);
    }

    let cluster = results
        .first()
        .map(|r| r.cluster_variable.as_str())
        .unwrap_or("industry");
    RenderedTable {
        id: id.into(),
        title: title.into(),
        columns,
        rows,
        note: format!("{STAR_NOTE} The t-values are in parentheses (clustering standard errors at the {cluster} level)."),
    }
}

/// A set of regression columns as stored by the regress stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTable {
    pub id: String,
    pub title: String,
    pub placement: TValuePlacement,
    pub show: Option<Vec<String>>,
    pub column_labels: Vec<String>,
    pub results: Vec<RegressionResult>,
    /// Footer rows of per-column numbers, e.g. a subgroup mean.
    pub extra_means: Vec<(String, Vec<f64>)>,
}

impl RegressionTable {
    /// Renders the table; a coefficient-difference report adds a
    /// `Between-group differences` row of `B/p` cells.
    pub fn render(&self, coef_diff: Option<&CoefDiffReport>) -> RenderedTable {
        let mut extra_rows: Vec<(String, Vec<String>)> = self
            .extra_means
            .iter()
            .map(|(label, v)| (label.clone(), v.iter().map(|x| fmt_num(*x, 3)).collect()))
            .collect();
        if let Some(d) = coef_diff {
            extra_rows.push(("Between-group differences".into(), coef_diff_cells(d)));
        }
        let layout = RegressionLayout {
            placement: self.placement,
            show: self.show.clone(),
            column_labels: self.column_labels.clone(),
            extra_rows,
        };
        render_regression_table(&self.id, &self.title, &self.results, &layout)
    }
}

pub fn render_summary_table(id: &str, title: &str, rows: &[SummaryRow]) -> RenderedTable {
    let columns = [
        "Variables",
        "N",
        "Mean",
        "Std. Dev.",
        "Min",
        "P25",
        "Median",
        "P75",
        "Max",
    ]
    .map(String::from)
    .to_vec();
    let body = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.variable.clone(), r.n.to_string()];
            row.extend(
                [r.mean, r.sd, r.min, r.p25, r.median, r.p75, r.max]
                    .iter()
                    .map(|v| fmt_num(*v, 3)),
            );
            row
        })
        .collect();
    RenderedTable {
        id: id.into(),
        title: title.into(),
        columns,
        rows: body,
        note: String::new(),
    }
}

pub fn render_group_test_table(id: &str, title: &str, r: &GroupTestReport) -> RenderedTable {
    let v = &r.variable;
    let columns = vec![
        "Group".to_string(),
        "N".into(),
        format!("Mean of {v}"),
        format!("Median of {v}"),
        "Homogeneity of variance".into(),
        "Median difference".into(),
    ];
    let rows = vec![
        vec![
            r.labels[0].clone(),
            r.n[0].to_string(),
            fmt_num(r.mean[0], 3),
            fmt_num(r.median[0], 3),
            format!(
                "SD({})/SD({}) = {}",
                r.labels[1],
                r.labels[0],
                fmt_num(r.sd_ratio, 3)
            ),
            format!("{}{}", fmt_num(r.median_diff, 3), r.median_stars),
        ],
        vec![
            r.labels[1].clone(),
            r.n[1].to_string(),
            fmt_num(r.mean[1], 3),
            fmt_num(r.median[1], 3),
            format!("P = {}", fmt_num(r.variance_p, 3)),
            format!("P = {}", fmt_num(r.median_diff_p, 3)),
        ],
    ];
    let mut note = STAR_NOTE.to_string();
    if r.replications > 0 {
        let _ = write!(
            note,
            " Median-difference p-value from {} permutations (seed {}), two-sided.",
            r.replications, r.seed
        );
    }
    RenderedTable {
        id: id.into(),
        title: title.into(),
        columns,
        rows,
        note,
    }
}

/// `B/p` cells for a coefficient-difference report, one per replication count.
pub fn coef_diff_cells(r: &CoefDiffReport) -> Vec<String> {
    r.points
        .iter()
        .map(|p| format!("{}/{}", p.replications, fmt_num(p.p_value, 3)))
        .collect()
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

fn latex_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '_' | '%' | '&' | '#' | '$' | '{' | '}' => {
                out.push('\\');
                out.push(c);
            }
            '²' => out.push_str("$^2$"),
            '×' => out.push_str("$\\times$"),
            _ => out.push(c),
        }
    }
    out
}

impl RenderedTable {
    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Markdown => self.to_markdown(),
            OutputFormat::Latex => self.to_latex(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("**{}. {}**\n\n", self.id, md_escape(&self.title));
        let line = |cells: &[String]| {
            format!(
                "| {} |\n",
                cells
                    .iter()
                    .map(|c| md_escape(c))
                    .collect::<Vec<_>>()
                    .join(" | ")
            )
        };
        s.push_str(&line(&self.columns));
        s.push_str(&format!("|{}\n", "---|".repeat(self.columns.len())));
        for r in &self.rows {
            s.push_str(&line(r));
        }
        if !self.note.is_empty() {
            s.push('\n');
            s.push_str(&md_escape(&self.note));
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        if !self.note.is_empty() {
            let mut note = vec![self.note.clone()];
            note.resize(self.columns.len(), String::new());
            w.write_record(&note).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 cells")
    }

    pub fn to_latex(&self) -> String {
        let n = self.columns.len();
        let mut s = String::new();
        s.push_str("\\begin{table}[htbp]\n\\centering\n");
        let _ = writeln!(s, "\\caption{{{}}}", latex_escape(&self.title));
        let _ = writeln!(s, "\\begin{{tabular}}{{l{}}}", "c".repeat(n - 1));
        s.push_str("\\hline\n");
        let line = |cells: &[String]| {
            format!(
                "{} \\\\\n",
                cells
                    .iter()
                    .map(|c| latex_escape(c))
                    .collect::<Vec<_>>()
                    .join(" & ")
            )
        };
        s.push_str(&line(&self.columns));
        s.push_str("\\hline\n");
        for r in &self.rows {
            s.push_str(&line(r));
        }
        s.push_str("\\hline\n\\end{tabular}\n");
        if !self.note.is_empty() {
            let _ = writeln!(s, "\\par\\footnotesize {}", latex_escape(&self.note));
        }
        s.push_str("\\end{table}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{CoefficientEstimate, FeSummary};

    pub(crate) fn stored_result(
        coefs: &[(&str, f64, f64, f64)],
        n: usize,
        adj: f64,
    ) -> RegressionResult {
        RegressionResult {
            dependent: "SPCR".into(),
            coefficients: coefs
                .iter()
                .map(|&(name, estimate, t_value, p_value)| CoefficientEstimate {
                    name: name.into(),
                    estimate,
                    std_error: estimate / t_value,
                    t_value,
                    p_value,
                })
                .collect(),
            n_obs: n,
            n_clusters: 20,
            cluster_variable: "industry".into(),
            n_params: 0,
            r2: 0.0,
            adj_r2: adj,
            fe: FeSummary {
                absorb_firm: true,
                absorb_year: true,
                firm_levels: 0,
                year_levels: 0,
                absorbed_dof: 0,
                sweeps: 0,
                singletons_dropped: 0,
            },
            warnings: vec![],
            residuals: vec![],
            fitted: vec![],
            rows: vec![],
        }
    }

    #[test]
    fn headline_cell() {
        let (e, t) = coefficient_cell(0.075, 3.25, 0.004);
        assert_eq!(format!("{e} {t}"), "0.075*** (3.25)");
        let (e, _) = coefficient_cell(0.03, 1.1, 0.2);
        assert_eq!(e, "0.030");
    }

    #[test]
    fn negative_zero_is_not_printed() {
        assert_eq!(fmt_num(-0.0001, 3), "0.000");
        assert_eq!(fmt_num(-0.0005, 3), "-0.001");
        assert_eq!(fmt_num(-4.93, 2), "-4.93");
    }

    #[test]
    fn two_column_layout() {
        let a = stored_result(
            &[("GDT", 0.075, 3.06, 0.005), ("_cons", 0.036, 39.75, 0.0)],
            10338,
            0.853,
        );
        let b = stored_result(
            &[
                ("GDT", 0.075, 3.25, 0.003),
                ("BM", 0.013, 2.48, 0.02),
                ("_cons", 0.927, 3.12, 0.004),
            ],
            10176,
            0.858,
        );
        let t =
            render_regression_table("Table 4", "Baseline", &[a, b], &RegressionLayout::default());
        assert_eq!(t.columns, vec!["", "(1)", "(2)"]);
        assert_eq!(t.rows[1], vec!["GDT", "0.075*** (3.06)", "0.075*** (3.25)"]);
        assert_eq!(t.rows[2], vec!["BM", "", "0.013** (2.48)"]);
        assert_eq!(
            t.rows[3],
            vec!["_cons", "0.036*** (39.75)", "0.927*** (3.12)"]
        );
        assert_eq!(t.rows.last().unwrap(), &vec!["adj. R²", "0.853", "0.858"]);
        assert!(t
            .note
            .starts_with("Note: *, **, and *** indicate statistical significance"));
    }

    #[test]
    fn below_placement_aligns_t_rows() {
        let a = stored_result(
            &[
                ("GDT", 0.038, 1.03, 0.3),
                ("BM", 0.01, 1.0, 0.3),
                ("_cons", 0.525, 1.26, 0.2),
            ],
            6713,
            0.874,
        );
        let layout = RegressionLayout {
            placement: TValuePlacement::Below,
            show: Some(vec!["GDT".into()]),
            column_labels: vec!["SOE".into()],
            extra_rows: vec![("Between-group differences".into(), vec!["500/0.056".into()])],
        };
        let t = render_regression_table("Table 8", "Subgroups", &[a], &layout);
        assert_eq!(t.columns[1], "(1) SOE");
        assert_eq!(t.rows[1], vec!["GDT", "0.038"]);
        assert_eq!(t.rows[2], vec!["", "(1.03)"]);
        assert_eq!(t.rows[5], vec!["Controls", "Yes"]);
        assert_eq!(t.rows.last().unwrap()[1], "500/0.056");
    }

    #[test]
    fn formats_share_numeric_content() {
        let a = stored_result(
            &[
                ("FEPU:Loss", -0.0204, -1.83, 0.07),
                ("_cons", -0.018, -2.23, 0.03),
            ],
            100,
            0.5,
        );
        let t = render_regression_table("Table 7", "FEPU", &[a], &RegressionLayout::default());
        let nums = |s: &str| {
            let re = regex::Regex::new(r"-?\d+\.\d+").unwrap();
            re.find_iter(s)
                .map(|m| m.as_str().to_string())
                .collect::<Vec<_>>()
        };
        let md = nums(&t.to_markdown());
        assert_eq!(md, nums(&t.to_csv()));
        assert_eq!(md, nums(&t.to_latex()));
        assert!(t.to_latex().contains("FEPU $\\times$ Loss"));
        assert!(t.to_latex().contains("\\_cons"));
    }
}
