//! Bundle artifacts: the run manifest, machine-readable model records, and
//! the derived report files (human summary, histogram tables, fitted lines).
//!
//! Report files are a pure function of the machine files in the bundle
//! directory, so regenerating them is always byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use firtree::io::read_composites_csv;
use serde::{Deserialize, Serialize};

use crate::schema::{CovariateDecl, CovariateSchema};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub lib_version: String,
    pub cli_version: String,
    /// Seed of the simulated input, when known; echoed for reproducibility.
    pub seed: Option<u64>,
    pub config: ConfigEcho,
    pub data: DataCounts,
    pub warnings: WarningCounts,
    pub cronbach_alpha: Option<f64>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub ratings: String,
    pub times: String,
    pub covariates: String,
    pub schema_path: String,
    pub schema: CovariateSchema,
    pub tree: String,
    pub tree_text: String,
    pub trim: bool,
    pub w_ones: bool,
    pub alpha_level: f64,
    pub models: Vec<String>,
    pub covariance: String,
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataCounts {
    pub n_raters_input: usize,
    pub n_raters_used: usize,
    pub n_items: usize,
    pub n_regression: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarningCounts {
    pub bad_rating_cells: usize,
    pub bad_time_cells: usize,
    pub bad_covariate_values: usize,
    pub cells_trimmed: usize,
    pub ratings_masked: usize,
    pub raters_dropped_no_data: usize,
    pub raters_dropped_incomplete: usize,
    pub irtree_converged: bool,
    pub irtree_ridge: bool,
    /// Model kinds that did not converge or fell back.
    pub models_with_warnings: Vec<String>,
}

impl WarningCounts {
    /// Convergence warnings decide the exit code (input problems do not).
    pub fn convergence_warnings(&self) -> u32 {
        u32::from(!self.irtree_converged) + self.models_with_warnings.len() as u32
    }
}

/// Full-precision record of one fitted model; mirrors the regression result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord {
    pub kind: String,
    pub labels: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub sigma2: f64,
    pub pseudo_r2: f64,
    pub residual_quartiles: [f64; 3],
    pub objective_at_optimum: f64,
    pub n: usize,
    pub alpha_level: f64,
    pub exp_beta: Option<Vec<f64>>,
    pub exp_se: Option<Vec<f64>>,
    pub converged: bool,
    pub numeric_fallback: bool,
}

impl From<&firtree::RegressionFit> for ModelRecord {
    fn from(fit: &firtree::RegressionFit) -> Self {
        ModelRecord {
            kind: fit.kind.label().to_string(),
            labels: fit.labels.clone(),
            beta: fit.beta.clone(),
            se: fit.se.clone(),
            ci_low: fit.ci.iter().map(|c| c.0).collect(),
            ci_high: fit.ci.iter().map(|c| c.1).collect(),
            sigma2: fit.sigma2,
            pseudo_r2: fit.pseudo_r2,
            residual_quartiles: [
                fit.residual_quartiles.0,
                fit.residual_quartiles.1,
                fit.residual_quartiles.2,
            ],
            objective_at_optimum: fit.objective_at_optimum,
            n: fit.n,
            alpha_level: fit.alpha_level,
            exp_beta: fit.exp_beta.clone(),
            exp_se: fit.exp_se.clone(),
            converged: fit.converged,
            numeric_fallback: fit.numeric_fallback,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Three-decimal rendering for human tables; negative zero normalized.
pub fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

fn write_tsv(path: &Path, rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        wtr.write_record(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Coefficient table in the report layout, three decimals. Summary rows
/// (variance, fit index, residual quartiles) follow the coefficients.
pub fn write_model_table(dir: &Path, record: &ModelRecord) -> anyhow::Result<String> {
    let name = format!("model_{}.tsv", record.kind);
    let mut header = vec!["term", "estimate", "se", "ci_low", "ci_high"];
    let lognormal = record.exp_beta.is_some();
    if lognormal {
        header.push("exp_estimate");
        header.push("exp_se");
    }
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for k in 0..record.beta.len() {
        let mut row = vec![
            record.labels[k].clone(),
            fmt3(record.beta[k]),
            fmt3(record.se[k]),
            fmt3(record.ci_low[k]),
            fmt3(record.ci_high[k]),
        ];
        if lognormal {
            row.push(fmt3(record.exp_beta.as_ref().unwrap()[k]));
            row.push(fmt3(record.exp_se.as_ref().unwrap()[k]));
        }
        rows.push(row);
    }
    let width = rows[0].len();
    let mut summary = |label: &str, value: String| {
        let mut row = vec![label.to_string(), value];
        row.resize(width, String::new());
        rows.push(row);
    };
    summary("sigma2", fmt3(record.sigma2));
    summary("pseudo_r2", fmt3(record.pseudo_r2));
    summary("residual_q1", fmt3(record.residual_quartiles[0]));
    summary("residual_q2", fmt3(record.residual_quartiles[1]));
    summary("residual_q3", fmt3(record.residual_quartiles[2]));
    summary("n", record.n.to_string());
    summary("converged", if record.converged { "yes" } else { "no" }.to_string());
    write_tsv(&dir.join(&name), &rows)?;
    Ok(name)
}

/// Fixed-width histogram with 10 to 15 bins (square-root rule, clamped); a
/// zero-range sample collapses to one unit-width bin.
pub fn histogram(values: &[f64]) -> Vec<(f64, f64, usize)> {
    if values.is_empty() {
        return Vec::new();
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return vec![(min - 0.5, min + 0.5, values.len())];
    }
    let bins = ((values.len() as f64).sqrt().ceil() as usize).clamp(10, 15);
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - min) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    (0..bins)
        .map(|k| (min + k as f64 * width, min + (k + 1) as f64 * width, counts[k]))
        .collect()
}

fn write_histogram(path: &Path, values: &[f64]) -> anyhow::Result<()> {
    let mut rows = vec![vec!["bin_left".to_string(), "bin_right".to_string(), "count".to_string()]];
    for (left, right, count) in histogram(values) {
        rows.push(vec![left.to_string(), right.to_string(), count.to_string()]);
    }
    write_tsv(path, &rows)
}

/// Reference band for the intensification exponent, as reported.
pub const OMEGA_REFERENCE: (f64, f64) = (0.95, 1.05);

pub struct OmegaStats {
    pub n_cells: usize,
    pub n_within: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

pub fn omega_stats(cell_omegas: &[f64]) -> Option<OmegaStats> {
    if cell_omegas.is_empty() {
        return None;
    }
    let n_within = cell_omegas
        .iter()
        .filter(|w| OMEGA_REFERENCE.0 <= **w && **w <= OMEGA_REFERENCE.1)
        .count();
    Some(OmegaStats {
        n_cells: cell_omegas.len(),
        n_within,
        min: cell_omegas.iter().copied().fold(f64::INFINITY, f64::min),
        median: firtree::stats::median_type7(cell_omegas),
        max: cell_omegas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

impl OmegaStats {
    pub fn fraction_within(&self) -> f64 {
        self.n_within as f64 / self.n_cells as f64
    }
}

/// One fitted line per categorical cell: the first continuous covariate spans
/// its observed range, other continuous covariates sit at their sample mean.
pub struct LineGroup {
    pub label: String,
    /// (covariate name, level) pairs fixing this cell.
    pub levels: Vec<(String, String)>,
}

pub fn line_groups(schema: &CovariateSchema) -> Vec<LineGroup> {
    let mut groups = vec![LineGroup { label: String::new(), levels: Vec::new() }];
    for decl in &schema.covariates {
        if let CovariateDecl::Categorical { name, levels, .. } = decl {
            let mut next = Vec::with_capacity(groups.len() * levels.len());
            for g in &groups {
                for level in levels {
                    let mut lv = g.levels.clone();
                    lv.push((name.clone(), level.clone()));
                    let label = lv
                        .iter()
                        .map(|(n, l)| format!("{n}={l}"))
                        .collect::<Vec<_>>()
                        .join("|");
                    next.push(LineGroup { label, levels: lv });
                }
            }
            groups = next;
        }
    }
    if groups.len() == 1 && groups[0].levels.is_empty() {
        groups[0].label = "all".to_string();
    }
    groups
}

const LINE_POINTS: usize = 50;

fn fitted_value(
    record: &ModelRecord,
    x_name: &str,
    x: f64,
    group: &LineGroup,
    cont_means: &BTreeMap<String, f64>,
) -> anyhow::Result<f64> {
    let mut total = 0.0;
    for (k, label) in record.labels.iter().enumerate() {
        let value = if label == "(intercept)" {
            1.0
        } else if let Some((name, level)) = label.split_once('=') {
            let fixed = group
                .levels
                .iter()
                .find(|(n, _)| n == name)
                .with_context(|| format!("no level fixed for {name}"))?;
            f64::from(u8::from(fixed.1 == level))
        } else if label == x_name {
            x
        } else {
            *cont_means
                .get(label)
                .with_context(|| format!("no sample mean for covariate {label}"))?
        };
        total += record.beta[k] * value;
    }
    Ok(total)
}

/// Everything the line emitter needs about the regression sample.
pub struct SampleColumns {
    /// Covariate name -> raw values over the regression sample.
    pub columns: BTreeMap<String, Vec<String>>,
}

pub fn emit_lines(
    dir: &Path,
    schema: &CovariateSchema,
    sample: &SampleColumns,
    records: &[ModelRecord],
) -> anyhow::Result<Vec<String>> {
    let first_cont = schema.covariates.iter().find_map(|d| match d {
        CovariateDecl::Continuous { name } => Some(name.clone()),
        CovariateDecl::Categorical { .. } => None,
    });
    let Some(x_name) = first_cont else {
        return Ok(Vec::new()); // no continuous axis, no lines
    };
    let mut cont_means = BTreeMap::new();
    let mut x_values = Vec::new();
    for decl in &schema.covariates {
        if let CovariateDecl::Continuous { name } = decl {
            let values: Vec<f64> = sample
                .columns
                .get(name)
                .with_context(|| format!("sample is missing covariate {name}"))?
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| anyhow::anyhow!("bad value {v:?} in {name}")))
                .collect::<anyhow::Result<_>>()?;
            if values.is_empty() {
                bail!("empty regression sample");
            }
            cont_means.insert(name.clone(), firtree::stats::mean(&values));
            if *name == x_name {
                x_values = values;
            }
        }
    }
    let min = x_values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid: Vec<f64> = if max <= min {
        vec![min]
    } else {
        (0..LINE_POINTS)
            .map(|k| min + (max - min) * k as f64 / (LINE_POINTS - 1) as f64)
            .collect()
    };
    let groups = line_groups(schema);
    let mut written = Vec::new();
    for record in records {
        let name = format!("lines_{}.tsv", record.kind);
        let mut rows =
            vec![vec!["group".to_string(), x_name.clone(), "fitted".to_string()]];
        for group in &groups {
            for &x in &grid {
                let y = fitted_value(record, &x_name, x, group, &cont_means)?;
                rows.push(vec![group.label.clone(), x.to_string(), y.to_string()]);
            }
        }
        write_tsv(&dir.join(&name), &rows)?;
        written.push(name);
    }
    Ok(written)
}

/// Reads the per-cell fuzzy table back into parameter vectors (NA skipped).
fn read_cell_parameters(path: &Path) -> anyhow::Result<BTreeMap<char, Vec<f64>>> {
    let (header, rows) = firtree::io::read_table_csv(path)?;
    let mut out: BTreeMap<char, Vec<f64>> = BTreeMap::new();
    for suffix in ['l', 'c', 'r', 'w'] {
        out.insert(suffix, Vec::new());
    }
    for row in &rows {
        for (k, field) in row.iter().enumerate().skip(1) {
            if field.is_empty() || field.eq_ignore_ascii_case("na") {
                continue;
            }
            let Some(suffix) = header[k].chars().last() else { continue };
            if let Some(bucket) = out.get_mut(&suffix) {
                let v: f64 = field
                    .parse()
                    .with_context(|| format!("bad cell value {field:?} in {}", path.display()))?;
                bucket.push(v);
            }
        }
    }
    Ok(out)
}

/// Regenerates report.txt, the histogram tables, fitted-line tables, and the
/// intensification summary from the machine files in `dir`.
pub fn emit_report_files(dir: &Path) -> anyhow::Result<Vec<String>> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let records: Vec<ModelRecord> = read_json(&dir.join("models.json"))?;
    let cells = read_cell_parameters(&dir.join("fuzzy_cells.csv"))?;
    let (_, composites) = read_composites_csv(&dir.join("fuzzy_composites.csv"))?;
    let sample = read_sample_columns(&dir.join("regression_sample.csv"))?;

    let mut written = Vec::new();

    // Cell-level parameter histograms; spreads use the c-l / r-c convention.
    let centers = cells.get(&'c').cloned().unwrap_or_default();
    let lefts: Vec<f64> = cells
        .get(&'c')
        .unwrap()
        .iter()
        .zip(cells.get(&'l').unwrap())
        .map(|(c, l)| c - l)
        .collect();
    let rights: Vec<f64> = cells
        .get(&'r')
        .unwrap()
        .iter()
        .zip(cells.get(&'c').unwrap())
        .map(|(r, c)| r - c)
        .collect();
    let omegas = cells.get(&'w').cloned().unwrap_or_default();
    for (name, values) in [
        ("hist_center.tsv", &centers),
        ("hist_left_spread.tsv", &lefts),
        ("hist_right_spread.tsv", &rights),
        ("hist_omega.tsv", &omegas),
    ] {
        write_histogram(&dir.join(name), values)?;
        written.push(name.to_string());
    }

    let stats = omega_stats(&omegas);
    {
        let mut rows = vec![vec!["statistic".to_string(), "value".to_string()]];
        if let Some(s) = &stats {
            rows.push(vec!["n_cells".into(), s.n_cells.to_string()]);
            rows.push(vec!["n_within_reference".into(), s.n_within.to_string()]);
            rows.push(vec!["fraction_within_reference".into(), s.fraction_within().to_string()]);
            rows.push(vec!["reference_low".into(), OMEGA_REFERENCE.0.to_string()]);
            rows.push(vec!["reference_high".into(), OMEGA_REFERENCE.1.to_string()]);
            rows.push(vec!["omega_min".into(), s.min.to_string()]);
            rows.push(vec!["omega_median".into(), s.median.to_string()]);
            rows.push(vec!["omega_max".into(), s.max.to_string()]);
        }
        write_tsv(&dir.join("omega_stats.tsv"), &rows)?;
        written.push("omega_stats.tsv".to_string());
    }

    written.extend(emit_lines(dir, &manifest.config.schema, &sample, &records)?);

    let report = render_report(&manifest, &records, &composites, stats.as_ref());
    std::fs::write(dir.join("report.txt"), report)?;
    written.push("report.txt".to_string());
    Ok(written)
}

pub fn read_sample_columns(path: &Path) -> anyhow::Result<SampleColumns> {
    let (header, rows) = firtree::io::read_table_csv(path)?;
    let mut columns: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (k, name) in header.iter().enumerate().skip(1) {
        columns.insert(
            name.clone(),
            rows.iter().map(|r| r[k].clone()).collect(),
        );
    }
    Ok(SampleColumns { columns })
}

fn render_report(
    manifest: &Manifest,
    records: &[ModelRecord],
    composites: &[Option<firtree::FuzzyNumber>],
    omega: Option<&OmegaStats>,
) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let w = &manifest.warnings;
    writeln!(out, "Fuzzy rating-scale analysis report").unwrap();
    writeln!(out, "==================================").unwrap();
    writeln!(out).unwrap();
    writeln!(out, "Data").unwrap();
    writeln!(
        out,
        "  raters: {} read, {} used, {} in the regression sample",
        manifest.data.n_raters_input, manifest.data.n_raters_used, manifest.data.n_regression
    )
    .unwrap();
    writeln!(out, "  items: {}", manifest.data.n_items).unwrap();
    writeln!(out, "  tree: {}", manifest.config.tree).unwrap();
    writeln!(
        out,
        "  response-time trimming: {} ({} cells trimmed)",
        if manifest.config.trim { "on" } else { "off" },
        w.cells_trimmed
    )
    .unwrap();
    writeln!(
        out,
        "  intensification: {}",
        if manifest.config.w_ones { "forced to 1" } else { "response-time rank rule" }
    )
    .unwrap();
    match manifest.cronbach_alpha {
        Some(a) => writeln!(out, "  Cronbach alpha (complete cases): {}", fmt3(a)).unwrap(),
        None => writeln!(out, "  Cronbach alpha: undefined").unwrap(),
    }
    writeln!(out).unwrap();
    writeln!(out, "Tree model").unwrap();
    writeln!(out, "  converged: {}", if w.irtree_converged { "yes" } else { "no" }).unwrap();
    writeln!(out, "  ridge applied: {}", if w.irtree_ridge { "yes" } else { "no" }).unwrap();
    writeln!(out).unwrap();

    let with_data: Vec<&firtree::FuzzyNumber> = composites.iter().flatten().collect();
    writeln!(out, "Composite fuzzy ratings (n = {})", with_data.len()).unwrap();
    if !with_data.is_empty() {
        let centers: Vec<f64> = with_data.iter().map(|f| f.c()).collect();
        let min = centers.iter().copied().fold(f64::INFINITY, f64::min);
        let max = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(
            out,
            "  center: min {}, median {}, max {}",
            fmt3(min),
            fmt3(firtree::stats::median_type7(&centers)),
            fmt3(max)
        )
        .unwrap();
    }
    if let Some(s) = omega {
        writeln!(
            out,
            "  omega in [{}, {}]: {:.2}% of {} cells",
            OMEGA_REFERENCE.0,
            OMEGA_REFERENCE.1,
            100.0 * s.fraction_within(),
            s.n_cells
        )
        .unwrap();
    }

    for record in records {
        writeln!(out).unwrap();
        writeln!(out, "Model: {} (n = {})", record.kind, record.n).unwrap();
        let term_width = record
            .labels
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(4)
            .max("term".len());
        let ci_header = format!("{}% CI", 100.0 * (1.0 - record.alpha_level));
        writeln!(
            out,
            "  {:<term_width$}  {:>9}  {:>8}  {:>21}",
            "term", "estimate", "se", ci_header,
        )
        .unwrap();
        for k in 0..record.beta.len() {
            writeln!(
                out,
                "  {:<term_width$}  {:>9}  {:>8}  [{:>8}, {:>8}]",
                record.labels[k],
                fmt3(record.beta[k]),
                fmt3(record.se[k]),
                fmt3(record.ci_low[k]),
                fmt3(record.ci_high[k]),
            )
            .unwrap();
        }
        if let (Some(eb), Some(es)) = (&record.exp_beta, &record.exp_se) {
            writeln!(out, "  multiplicative effects (exp scale):").unwrap();
            for k in 0..eb.len() {
                writeln!(
                    out,
                    "  {:<term_width$}  {:>9}  {:>8}",
                    record.labels[k],
                    fmt3(eb[k]),
                    fmt3(es[k]),
                )
                .unwrap();
            }
        }
        writeln!(out, "  sigma2: {}", fmt3(record.sigma2)).unwrap();
        writeln!(out, "  pseudo R2: {}", fmt3(record.pseudo_r2)).unwrap();
        writeln!(
            out,
            "  residual quartiles: {} / {} / {}",
            fmt3(record.residual_quartiles[0]),
            fmt3(record.residual_quartiles[1]),
            fmt3(record.residual_quartiles[2]),
        )
        .unwrap();
        if !record.converged {
            writeln!(out, "  warning: did not converge").unwrap();
        }
        if record.numeric_fallback {
            writeln!(out, "  warning: numeric path fell back to the closed form").unwrap();
        }
    }
    out
}

/// Bundle-relative output names, sorted and deduplicated, for the manifest.
pub fn sorted_outputs(names: &[String]) -> Vec<String> {
    let mut all: Vec<String> = names.to_vec();
    all.sort();
    all.dedup();
    all
}
