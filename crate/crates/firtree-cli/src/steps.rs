//! One function per subcommand, plus the shared pipeline pieces.
//!
//! Each command returns the number of convergence warnings it raised; the
//! caller turns a nonzero count into exit status 3. Input problems are
//! errors, not warnings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use firtree::io::{self, BadCell};
use firtree::regress::FuzzyFitMethod;
use firtree::{
    fuzzify_all, trim_times, CovarianceStructure, FitOptions, FuzzyDataset, FuzzyNumber,
    IrtreeFit, RatingMatrix, ResponseTimeMatrix, TreeSpec, WMode,
};
use nalgebra::DMatrix;

use crate::bundle::{
    self, ConfigEcho, DataCounts, Manifest, ModelRecord, WarningCounts,
};
use crate::schema::{self, CovariateSchema};

/// Resolves `--tree`: a built-in name, or a path to a mapping-matrix file.
pub fn resolve_tree(arg: &str) -> anyhow::Result<(TreeSpec, String)> {
    if let Some(tree) = TreeSpec::by_name(arg) {
        return Ok((tree, arg.to_string()));
    }
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading tree file {arg}"))?;
        let tree = TreeSpec::parse(&text)?;
        return Ok((tree, arg.to_string()));
    }
    bail!("--tree {arg:?} is neither a built-in tree name nor an existing file");
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
}

fn node_names(n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("node_{k}")).collect()
}

// ---------------------------------------------------------------- simulate

/// Generate a synthetic dataset (ratings, response times, covariates).
#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// Built-in tree name or path to a mapping-matrix file
    #[arg(long, default_value = "fig3-linear")]
    pub tree: String,
    /// Number of raters
    #[arg(long, default_value_t = 300)]
    pub raters: usize,
    /// Number of items
    #[arg(long, default_value_t = 10)]
    pub items: usize,
    /// RNG seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Mean of log response times
    #[arg(long, default_value_t = 7.0)]
    pub rt_log_mean: f64,
    /// Standard deviation of log response times
    #[arg(long, default_value_t = 0.3)]
    pub rt_log_sd: f64,
    /// Extra log-time for mid-scale answers
    #[arg(long, default_value_t = 0.4)]
    pub rt_boost: f64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

/// Default item easiness: evenly spaced over [-1.2, 1.2] across the
/// flattened item-node grid, so items differ but stay deterministic.
fn default_alpha(n_items: usize, n_nodes: usize) -> DMatrix<f64> {
    let total = n_items * n_nodes;
    DMatrix::from_fn(n_items, n_nodes, |j, n| {
        if total <= 1 {
            0.0
        } else {
            let idx = j * n_nodes + n;
            -1.2 + 2.4 * idx as f64 / (total - 1) as f64
        }
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> anyhow::Result<u32> {
    let (tree, _) = resolve_tree(&args.tree)?;
    ensure_dir(&args.out)?;
    let cfg = firtree::SimConfig {
        n_raters: args.raters,
        n_items: args.items,
        tree: tree.clone(),
        alpha_true: default_alpha(args.items, tree.n_nodes()),
        sigma_eta_true: DMatrix::identity(tree.n_nodes(), tree.n_nodes()),
        rt_log_mean: args.rt_log_mean,
        rt_log_sd: args.rt_log_sd,
        rt_midscale_boost: args.rt_boost,
        seed: args.seed,
    };
    let (ratings, times, truth) = firtree::simulate(&cfg)?;

    let rater_ids: Vec<String> = (1..=args.raters).map(|i| format!("r{i:04}")).collect();
    let item_names: Vec<String> = (1..=args.items).map(|j| format!("item_{j}")).collect();
    let nodes = node_names(tree.n_nodes());

    io::write_ratings_csv(&args.out.join("ratings.csv"), &rater_ids, &item_names, &ratings)?;
    io::write_times_csv(&args.out.join("times.csv"), &rater_ids, &item_names, &times)?;
    io::write_matrix_csv(&args.out.join("eta_true.csv"), "rater_id", &rater_ids, &nodes, &truth.eta)?;
    io::write_matrix_csv(
        &args.out.join("alpha_true.csv"),
        "item_id",
        &item_names,
        &nodes,
        &cfg.alpha_true,
    )?;
    io::write_matrix_csv(
        &args.out.join("sigma_true.csv"),
        "node",
        &nodes,
        &nodes,
        &cfg.sigma_eta_true,
    )?;

    // Exogenous demo covariates, deterministic in the rater index: a normal
    // grid for the continuous one, alternation for the categorical one.
    let mut wtr = csv::Writer::from_path(args.out.join("covariates.csv"))?;
    wtr.write_record(["rater_id", "x", "group"])?;
    for (i, id) in rater_ids.iter().enumerate() {
        let p = (i as f64 + 0.5) / args.raters as f64;
        let x = firtree::stats::norm_ppf(p);
        let group = if i % 2 == 1 { "yes" } else { "no" };
        wtr.write_record([id.as_str(), &x.to_string(), group])?;
    }
    wtr.flush()?;
    let schema = CovariateSchema {
        covariates: vec![
            crate::schema::CovariateDecl::Continuous { name: "x".to_string() },
            crate::schema::CovariateDecl::Categorical {
                name: "group".to_string(),
                levels: vec!["no".to_string(), "yes".to_string()],
                reference: "no".to_string(),
            },
        ],
    };
    bundle::write_json(&args.out.join("covariates_schema.json"), &schema)?;
    println!(
        "simulated {} raters x {} items into {}",
        args.raters,
        args.items,
        args.out.display()
    );
    Ok(0)
}

// -------------------------------------------------------------------- trim

/// Remove per-item response-time outliers and mask the matching ratings.
#[derive(Debug, clap::Args)]
pub struct TrimArgs {
    /// Response-time matrix (CSV)
    #[arg(long)]
    pub times: PathBuf,
    /// Rating matrix to mask at removed cells (CSV)
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_trim(args: &TrimArgs) -> anyhow::Result<u32> {
    ensure_dir(&args.out)?;
    let table = io::read_times_csv(&args.times, BadCell::TreatAsNa)?;
    let trimmed = trim_times(&table.times);
    let n_trimmed = count_newly_missing(&table.times, &trimmed);
    io::write_times_csv(
        &args.out.join("times_trimmed.csv"),
        &table.rater_ids,
        &table.item_names,
        &trimmed,
    )?;
    println!("trimmed {n_trimmed} response-time cells");
    if let Some(ratings_path) = &args.ratings {
        let rt = io::read_ratings_csv(ratings_path, BadCell::TreatAsNa)?;
        if rt.rater_ids != table.rater_ids || rt.item_names != table.item_names {
            bail!("ratings and times label mismatch; the files must share rows and columns");
        }
        let (masked, n_masked) = mask_ratings(&rt.ratings, &trimmed);
        io::write_ratings_csv(
            &args.out.join("ratings_masked.csv"),
            &rt.rater_ids,
            &rt.item_names,
            &masked,
        )?;
        let crisp = crisp_responses(&rt.rater_ids, &masked, &trimmed);
        write_crisp_csv(&args.out.join("crisp_responses.csv"), &crisp)?;
        println!("masked {n_masked} rating cells without a kept response time");
    }
    Ok(0)
}

fn count_newly_missing(before: &ResponseTimeMatrix, after: &ResponseTimeMatrix) -> usize {
    let mut n = 0;
    for i in 0..before.n_raters() {
        for j in 0..before.n_items() {
            if before.get(i, j).is_some() && after.get(i, j).is_none() {
                n += 1;
            }
        }
    }
    n
}

/// Masks every rating whose response time is missing, so the tree model is
/// fitted on exactly the cells that will be fuzzified.
fn mask_ratings(ratings: &RatingMatrix, times: &ResponseTimeMatrix) -> (RatingMatrix, usize) {
    let mut out = ratings.clone();
    let mut masked = 0;
    for i in 0..ratings.n_raters() {
        for j in 0..ratings.n_items() {
            if times.get(i, j).is_none() && ratings.get(i, j).is_some() {
                out.set_na(i, j);
                masked += 1;
            }
        }
    }
    (out, masked)
}

// -------------------------------------------------------------- fit-irtree

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CovarianceArg {
    Diagonal,
    Full,
    Identity,
}

impl CovarianceArg {
    pub fn label(&self) -> &'static str {
        match self {
            CovarianceArg::Diagonal => "diagonal",
            CovarianceArg::Full => "full",
            CovarianceArg::Identity => "identity",
        }
    }

    fn to_structure(self, n_nodes: usize) -> CovarianceStructure {
        match self {
            CovarianceArg::Diagonal => CovarianceStructure::Diagonal,
            CovarianceArg::Full => CovarianceStructure::Full,
            CovarianceArg::Identity => {
                CovarianceStructure::Fixed(DMatrix::identity(n_nodes, n_nodes))
            }
        }
    }
}

/// Fit the item response tree model to a rating matrix.
#[derive(Debug, clap::Args)]
pub struct FitIrtreeArgs {
    /// Built-in tree name or path to a mapping-matrix file
    #[arg(long, default_value = "fig3-linear")]
    pub tree: String,
    /// Rating matrix (CSV)
    #[arg(long)]
    pub ratings: PathBuf,
    /// Structure of the trait covariance matrix
    #[arg(long, value_enum, default_value_t = CovarianceArg::Diagonal)]
    pub covariance: CovarianceArg,
    /// Outer-loop iteration cap
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct IrtreeFitSummary {
    tree: String,
    n_categories: usize,
    n_nodes: usize,
    n_raters: usize,
    n_items: usize,
    covariance: String,
    log_marginal_likelihood: f64,
    converged: bool,
    ridge_applied: bool,
}

fn fit_tree_model(
    tree: &TreeSpec,
    ratings: &RatingMatrix,
    covariance: CovarianceArg,
    max_iter: usize,
) -> anyhow::Result<IrtreeFit> {
    let options = FitOptions {
        covariance: covariance.to_structure(tree.n_nodes()),
        max_iter,
        ..FitOptions::default()
    };
    Ok(firtree::fit(tree, ratings, &options)?)
}

fn check_rating_range(tree: &TreeSpec, ratings: &RatingMatrix) -> anyhow::Result<()> {
    if let Some(max) = ratings.max_category() {
        if usize::from(max) > tree.n_categories() {
            bail!(
                "ratings go up to {max} but the tree has {} categories",
                tree.n_categories()
            );
        }
    }
    Ok(())
}

fn write_irtree_outputs(
    out: &Path,
    fit: &IrtreeFit,
    tree_echo: &str,
    covariance: CovarianceArg,
    rater_ids: &[String],
    item_names: &[String],
) -> anyhow::Result<()> {
    let nodes = node_names(fit.tree.n_nodes());
    io::write_matrix_csv(&out.join("alpha_hat.csv"), "item_id", item_names, &nodes, &fit.alpha)?;
    io::write_matrix_csv(&out.join("sigma_hat.csv"), "node", &nodes, &nodes, &fit.sigma_eta)?;
    io::write_matrix_csv(&out.join("eta_hat.csv"), "rater_id", rater_ids, &nodes, &fit.eta_hat)?;
    bundle::write_json(
        &out.join("irtree_fit.json"),
        &IrtreeFitSummary {
            tree: tree_echo.to_string(),
            n_categories: fit.tree.n_categories(),
            n_nodes: fit.tree.n_nodes(),
            n_raters: fit.eta_hat.nrows(),
            n_items: fit.alpha.nrows(),
            covariance: covariance.label().to_string(),
            log_marginal_likelihood: fit.log_marginal_likelihood,
            converged: fit.converged,
            ridge_applied: fit.ridge_applied,
        },
    )?;
    Ok(())
}

pub fn cmd_fit_irtree(args: &FitIrtreeArgs) -> anyhow::Result<u32> {
    let (tree, tree_echo) = resolve_tree(&args.tree)?;
    ensure_dir(&args.out)?;
    let table = io::read_ratings_csv(&args.ratings, BadCell::TreatAsNa)?;
    check_rating_range(&tree, &table.ratings)?;
    let fit = fit_tree_model(&tree, &table.ratings, args.covariance, args.max_iter)?;
    write_irtree_outputs(
        &args.out,
        &fit,
        &tree_echo,
        args.covariance,
        &table.rater_ids,
        &table.item_names,
    )?;
    println!(
        "tree model: log marginal likelihood {:.3}, converged: {}",
        fit.log_marginal_likelihood,
        if fit.converged { "yes" } else { "no" }
    );
    if fit.ridge_applied {
        log::warn!("item-parameter separation detected; ridge penalty applied");
    }
    Ok(u32::from(!fit.converged))
}

// ----------------------------------------------------------------- fuzzify

/// Turn fitted tree parameters plus response times into fuzzy cells.
#[derive(Debug, clap::Args)]
pub struct FuzzifyArgs {
    /// Built-in tree name or path to a mapping-matrix file
    #[arg(long, default_value = "fig3-linear")]
    pub tree: String,
    /// Response-time matrix (CSV)
    #[arg(long)]
    pub times: PathBuf,
    /// Fitted item parameters, items x nodes (CSV)
    #[arg(long)]
    pub alpha: PathBuf,
    /// Predicted rater traits, raters x nodes (CSV)
    #[arg(long)]
    pub eta: PathBuf,
    /// Force every intensification exponent to one
    #[arg(long)]
    pub w_ones: bool,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_fuzzify(args: &FuzzifyArgs) -> anyhow::Result<u32> {
    let (tree, _) = resolve_tree(&args.tree)?;
    ensure_dir(&args.out)?;
    let table = io::read_times_csv(&args.times, BadCell::TreatAsNa)?;
    let (item_ids, alpha_cols, alpha) = io::read_matrix_csv(&args.alpha)?;
    let (rater_ids, eta_cols, eta) = io::read_matrix_csv(&args.eta)?;
    if item_ids != table.item_names {
        bail!("item labels in {} do not match the time matrix", args.alpha.display());
    }
    if rater_ids != table.rater_ids {
        bail!("rater labels in {} do not match the time matrix", args.eta.display());
    }
    if alpha_cols.len() != tree.n_nodes() || eta_cols.len() != tree.n_nodes() {
        bail!("node counts in the parameter files do not match the tree");
    }
    let fit = IrtreeFit {
        tree: tree.clone(),
        alpha,
        sigma_eta: DMatrix::identity(tree.n_nodes(), tree.n_nodes()),
        eta_hat: eta,
        log_marginal_likelihood: f64::NAN,
        converged: true,
        ridge_applied: false,
    };
    let w_mode = if args.w_ones { WMode::AllOnes } else { WMode::EcdfMedian };
    let cells = fuzzify_all(&fit, &tree, &table.times, w_mode)?;
    write_fuzzify_outputs(&args.out, &table.rater_ids, &table.item_names, &cells)?;
    println!(
        "fuzzified {} cells for {} raters",
        count_cells(&cells),
        table.rater_ids.len()
    );
    Ok(0)
}

fn count_cells(cells: &FuzzyDataset) -> usize {
    let mut n = 0;
    for i in 0..cells.n_raters() {
        for j in 0..cells.n_items() {
            if cells.w(i, j).is_some() {
                n += 1;
            }
        }
    }
    n
}

fn write_fuzzify_outputs(
    out: &Path,
    rater_ids: &[String],
    item_names: &[String],
    cells: &FuzzyDataset,
) -> anyhow::Result<()> {
    io::write_fuzzy_cells_csv(&out.join("fuzzy_cells.csv"), rater_ids, item_names, cells)?;
    io::write_composites_csv(&out.join("fuzzy_composites.csv"), rater_ids, cells.composites())?;
    Ok(())
}

// ----------------------------------------------------------------- regress

/// Fit the regression models to composites, crisp responses, and covariates.
#[derive(Debug, clap::Args)]
pub struct RegressArgs {
    /// Per-rater fuzzy composites (CSV)
    #[arg(long)]
    pub composites: PathBuf,
    /// Per-rater crisp responses (CSV: rater_id,rating_mean,time_mean)
    #[arg(long)]
    pub crisp: PathBuf,
    /// Covariate table (CSV)
    #[arg(long)]
    pub covariates: PathBuf,
    /// Covariate schema (JSON)
    #[arg(long)]
    pub schema: PathBuf,
    /// Comma-separated model list: normal, lognormal, fuzzy-normal
    #[arg(long, default_value = "normal,lognormal,fuzzy-normal")]
    pub models: String,
    /// Significance level for the confidence intervals
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha_level)]
    pub alpha_level: f64,
    /// Fit the fuzzy model by numeric optimization instead of closed form
    #[arg(long)]
    pub numeric: bool,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_alpha_level(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err("the significance level must lie strictly between 0 and 1".to_string())
    }
}

pub fn parse_model_list(arg: &str) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    for part in arg.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "normal" | "lognormal" | "fuzzy-normal" => {
                if !out.contains(&part.to_string()) {
                    out.push(part.to_string());
                }
            }
            other => bail!(
                "unknown model {other:?}; choose from normal, lognormal, fuzzy-normal"
            ),
        }
    }
    Ok(out)
}

/// Per-rater crisp responses: the mean observed rating and mean observed
/// response time.
pub struct CrispResponses {
    pub rater_ids: Vec<String>,
    pub rating_mean: Vec<Option<f64>>,
    pub time_mean: Vec<Option<f64>>,
}

pub fn crisp_responses(
    rater_ids: &[String],
    ratings: &RatingMatrix,
    times: &ResponseTimeMatrix,
) -> CrispResponses {
    let mut rating_mean = Vec::with_capacity(rater_ids.len());
    let mut time_mean = Vec::with_capacity(rater_ids.len());
    for i in 0..rater_ids.len() {
        let rs: Vec<f64> =
            (0..ratings.n_items()).filter_map(|j| ratings.get(i, j)).map(f64::from).collect();
        let ts: Vec<f64> = (0..times.n_items()).filter_map(|j| times.get(i, j)).collect();
        rating_mean.push((!rs.is_empty()).then(|| firtree::stats::mean(&rs)));
        time_mean.push((!ts.is_empty()).then(|| firtree::stats::mean(&ts)));
    }
    CrispResponses { rater_ids: rater_ids.to_vec(), rating_mean, time_mean }
}

pub fn write_crisp_csv(path: &Path, crisp: &CrispResponses) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["rater_id", "rating_mean", "time_mean"])?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
    for (i, id) in crisp.rater_ids.iter().enumerate() {
        wtr.write_record([id.clone(), fmt(crisp.rating_mean[i]), fmt(crisp.time_mean[i])])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_crisp_csv(path: &Path) -> anyhow::Result<CrispResponses> {
    let (header, rows) = io::read_table_csv(path)?;
    if header != ["rater_id", "rating_mean", "time_mean"] {
        bail!("{}: expected columns rater_id,rating_mean,time_mean", path.display());
    }
    let parse = |field: &str| -> anyhow::Result<Option<f64>> {
        if field.is_empty() || field.eq_ignore_ascii_case("na") {
            Ok(None)
        } else {
            Ok(Some(field.parse::<f64>().map_err(|_| {
                anyhow::anyhow!("{}: bad number {field:?}", path.display())
            })?))
        }
    };
    let mut crisp = CrispResponses {
        rater_ids: Vec::new(),
        rating_mean: Vec::new(),
        time_mean: Vec::new(),
    };
    for row in &rows {
        crisp.rater_ids.push(row[0].clone());
        crisp.rating_mean.push(parse(&row[1])?);
        crisp.time_mean.push(parse(&row[2])?);
    }
    Ok(crisp)
}

/// The complete-case regression sample plus everything needed to fit.
pub struct RegressionInputs {
    pub rater_ids: Vec<String>,
    pub fuzzy: Vec<FuzzyNumber>,
    pub rating_mean: Vec<f64>,
    pub time_mean: Vec<f64>,
    pub design: firtree::DesignMatrix,
    /// Raw covariate values per schema column, over the sample.
    pub sample_columns: Vec<(String, Vec<String>)>,
    pub n_dropped: usize,
}

pub fn build_regression_inputs(
    rater_ids: &[String],
    composites: &[Option<FuzzyNumber>],
    crisp: &CrispResponses,
    cov_schema: &CovariateSchema,
    cov_table: &schema::CovariateTable,
) -> anyhow::Result<RegressionInputs> {
    if crisp.rater_ids != rater_ids {
        bail!("crisp-response rater ids do not match the composites");
    }
    let mut keep = Vec::new();
    for (i, id) in rater_ids.iter().enumerate() {
        let complete = composites[i].is_some()
            && crisp.rating_mean[i].is_some()
            && crisp.time_mean[i].is_some()
            && schema::has_complete_row(cov_table, id);
        if complete {
            keep.push(i);
        }
    }
    let n_dropped = rater_ids.len() - keep.len();
    if n_dropped > 0 {
        log::warn!("{n_dropped} raters dropped from the regression sample (incomplete data)");
    }
    let ids: Vec<String> = keep.iter().map(|&i| rater_ids[i].clone()).collect();
    if ids.len() < 3 {
        bail!("regression sample has only {} complete raters", ids.len());
    }
    let columns = schema::columns_for(cov_schema, cov_table, &ids)?;
    let design = firtree::build_design(&columns, ids.len())?;
    let mut sample_columns = Vec::new();
    for (k, decl) in cov_schema.covariates.iter().enumerate() {
        let mut vals = Vec::with_capacity(ids.len());
        for id in &ids {
            vals.push(cov_table.rows[id][k].clone().expect("complete case"));
        }
        sample_columns.push((decl.name().to_string(), vals));
    }
    Ok(RegressionInputs {
        fuzzy: keep.iter().map(|&i| composites[i].unwrap()).collect(),
        rating_mean: keep.iter().map(|&i| crisp.rating_mean[i].unwrap()).collect(),
        time_mean: keep.iter().map(|&i| crisp.time_mean[i].unwrap()).collect(),
        rater_ids: ids,
        design,
        sample_columns,
        n_dropped,
    })
}

pub fn write_sample_csv(path: &Path, inputs: &RegressionInputs) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["rater_id".to_string()];
    header.extend(inputs.sample_columns.iter().map(|(name, _)| name.clone()));
    wtr.write_record(&header)?;
    for (i, id) in inputs.rater_ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(inputs.sample_columns.iter().map(|(_, vals)| vals[i].clone()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Fits the requested models on the complete-case sample. Returns the records
/// in request order plus the kinds that raised convergence warnings.
pub fn fit_models(
    inputs: &RegressionInputs,
    models: &[String],
    alpha_level: f64,
    fuzzy_method: FuzzyFitMethod,
) -> anyhow::Result<(Vec<ModelRecord>, Vec<String>)> {
    let mut records = Vec::new();
    let mut warned = Vec::new();
    for kind in models {
        let fit = match kind.as_str() {
            "normal" => firtree::fit_normal(&inputs.rating_mean, &inputs.design, alpha_level)?,
            "lognormal" => firtree::fit_lognormal(&inputs.time_mean, &inputs.design, alpha_level)?,
            "fuzzy-normal" => {
                firtree::fit_fuzzy_normal(&inputs.fuzzy, &inputs.design, alpha_level, fuzzy_method)?
            }
            other => bail!("unknown model {other:?}"),
        };
        if !fit.converged || fit.numeric_fallback {
            warned.push(kind.clone());
        }
        records.push(ModelRecord::from(&fit));
    }
    Ok((records, warned))
}

pub fn cmd_regress(args: &RegressArgs) -> anyhow::Result<u32> {
    ensure_dir(&args.out)?;
    let (rater_ids, composites) = io::read_composites_csv(&args.composites)?;
    let crisp = read_crisp_csv(&args.crisp)?;
    let cov_schema = CovariateSchema::load(&args.schema)?;
    let cov_table = schema::load_covariates(&args.covariates, &cov_schema)?;
    let inputs =
        build_regression_inputs(&rater_ids, &composites, &crisp, &cov_schema, &cov_table)?;
    let models = parse_model_list(&args.models)?;
    let method =
        if args.numeric { FuzzyFitMethod::Numeric } else { FuzzyFitMethod::ClosedForm };
    let (records, warned) = fit_models(&inputs, &models, args.alpha_level, method)?;
    bundle::write_json(&args.out.join("models.json"), &records)?;
    write_sample_csv(&args.out.join("regression_sample.csv"), &inputs)?;
    for record in &records {
        bundle::write_model_table(&args.out, record)?;
    }
    for record in &records {
        println!(
            "{}: n = {}, sigma2 = {:.3}, pseudo R2 = {:.3}",
            record.kind, record.n, record.sigma2, record.pseudo_r2
        );
    }
    for kind in &warned {
        log::warn!("model {kind} raised a convergence warning");
    }
    Ok(warned.len() as u32)
}

// --------------------------------------------------------------------- run

/// Run the whole pipeline and write a result bundle.
#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Built-in tree name or path to a mapping-matrix file
    #[arg(long, default_value = "fig3-linear")]
    pub tree: String,
    /// Rating matrix (CSV)
    #[arg(long)]
    pub ratings: PathBuf,
    /// Response-time matrix (CSV)
    #[arg(long)]
    pub times: PathBuf,
    /// Covariate table (CSV)
    #[arg(long)]
    pub covariates: PathBuf,
    /// Covariate schema (JSON)
    #[arg(long)]
    pub schema: PathBuf,
    /// Skip response-time outlier trimming
    #[arg(long)]
    pub no_trim: bool,
    /// Force every intensification exponent to one
    #[arg(long)]
    pub w_ones: bool,
    /// Significance level for the confidence intervals
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha_level)]
    pub alpha_level: f64,
    /// Comma-separated model list: normal, lognormal, fuzzy-normal
    #[arg(long, default_value = "normal,lognormal,fuzzy-normal")]
    pub models: String,
    /// Structure of the trait covariance matrix
    #[arg(long, value_enum, default_value_t = CovarianceArg::Diagonal)]
    pub covariance: CovarianceArg,
    /// Outer-loop iteration cap for the tree model
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Fit the fuzzy model by numeric optimization instead of closed form
    #[arg(long)]
    pub numeric: bool,
    /// Seed that produced the input data, echoed into the manifest
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the bundle
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_run(args: &RunArgs) -> anyhow::Result<u32> {
    let (tree, tree_echo) = resolve_tree(&args.tree)?;
    ensure_dir(&args.out)?;
    let cov_schema = CovariateSchema::load(&args.schema)?;

    // Ingest: lenient cells, aligned labels.
    let ratings_in = io::read_ratings_csv(&args.ratings, BadCell::TreatAsNa)?;
    let times_in = io::read_times_csv(&args.times, BadCell::TreatAsNa)?;
    if ratings_in.rater_ids != times_in.rater_ids || ratings_in.item_names != times_in.item_names {
        bail!("ratings and times label mismatch; the files must share rows and columns");
    }
    check_rating_range(&tree, &ratings_in.ratings)?;
    let cov_table = schema::load_covariates(&args.covariates, &cov_schema)?;

    // Trim response times, then mask ratings without a kept time so every
    // stage sees the same cell set.
    let times_used =
        if args.no_trim { times_in.times.clone() } else { trim_times(&times_in.times) };
    let cells_trimmed = count_newly_missing(&times_in.times, &times_used);
    let (ratings_masked, ratings_masked_count) = mask_ratings(&ratings_in.ratings, &times_used);

    // Drop raters with no observed cells at all; they carry no information.
    let has_data: Vec<usize> = (0..ratings_masked.n_raters())
        .filter(|&i| (0..ratings_masked.n_items()).any(|j| ratings_masked.get(i, j).is_some()))
        .collect();
    let raters_dropped_no_data = ratings_masked.n_raters() - has_data.len();
    if raters_dropped_no_data > 0 {
        log::warn!("{raters_dropped_no_data} raters dropped: no usable cells after trimming");
    }
    let rater_ids: Vec<String> =
        has_data.iter().map(|&i| ratings_in.rater_ids[i].clone()).collect();
    let item_names = ratings_in.item_names.clone();
    let n_items = item_names.len();
    let ratings_used = RatingMatrix::new(
        rater_ids.len(),
        n_items,
        has_data
            .iter()
            .flat_map(|&i| (0..n_items).map(move |j| (i, j)))
            .map(|(i, j)| ratings_masked.get(i, j))
            .collect(),
    )?;
    let times_used = ResponseTimeMatrix::new(
        rater_ids.len(),
        n_items,
        has_data
            .iter()
            .flat_map(|&i| (0..n_items).map(move |j| (i, j)))
            .map(|(i, j)| times_used.get(i, j))
            .collect(),
    )?;
    io::write_ratings_csv(&args.out.join("ratings_used.csv"), &rater_ids, &item_names, &ratings_used)?;
    io::write_times_csv(&args.out.join("times_used.csv"), &rater_ids, &item_names, &times_used)?;

    // Stage 2: tree model.
    let fit = fit_tree_model(&tree, &ratings_used, args.covariance, args.max_iter)?;
    write_irtree_outputs(&args.out, &fit, &tree_echo, args.covariance, &rater_ids, &item_names)?;
    if fit.ridge_applied {
        log::warn!("item-parameter separation detected; ridge penalty applied");
    }

    // Stage 3: fuzzification.
    let w_mode = if args.w_ones { WMode::AllOnes } else { WMode::EcdfMedian };
    let cells = fuzzify_all(&fit, &tree, &times_used, w_mode)?;
    write_fuzzify_outputs(&args.out, &rater_ids, &item_names, &cells)?;

    // Stage 4: crisp responses and regression models.
    let crisp = crisp_responses(&rater_ids, &ratings_used, &times_used);
    write_crisp_csv(&args.out.join("crisp_responses.csv"), &crisp)?;
    let inputs = build_regression_inputs(
        &rater_ids,
        cells.composites(),
        &crisp,
        &cov_schema,
        &cov_table,
    )?;
    let models = parse_model_list(&args.models)?;
    let method =
        if args.numeric { FuzzyFitMethod::Numeric } else { FuzzyFitMethod::ClosedForm };
    let (records, warned) = fit_models(&inputs, &models, args.alpha_level, method)?;
    bundle::write_json(&args.out.join("models.json"), &records)?;
    write_sample_csv(&args.out.join("regression_sample.csv"), &inputs)?;
    let mut outputs: Vec<String> = vec![
        "manifest.json".into(),
        "ratings_used.csv".into(),
        "times_used.csv".into(),
        "alpha_hat.csv".into(),
        "sigma_hat.csv".into(),
        "eta_hat.csv".into(),
        "irtree_fit.json".into(),
        "fuzzy_cells.csv".into(),
        "fuzzy_composites.csv".into(),
        "crisp_responses.csv".into(),
        "regression_sample.csv".into(),
        "models.json".into(),
    ];
    for record in &records {
        outputs.push(bundle::write_model_table(&args.out, record)?);
    }

    // Reliability of the crisp ratings, complete cases only.
    let cronbach = cronbach_complete_cases(&ratings_used);

    let manifest = Manifest {
        tool: "firtree".to_string(),
        lib_version: firtree_version(),
        cli_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: args.seed,
        config: ConfigEcho {
            ratings: args.ratings.display().to_string(),
            times: args.times.display().to_string(),
            covariates: args.covariates.display().to_string(),
            schema_path: args.schema.display().to_string(),
            schema: cov_schema.clone(),
            tree: tree_echo,
            tree_text: tree.to_text(),
            trim: !args.no_trim,
            w_ones: args.w_ones,
            alpha_level: args.alpha_level,
            models: models.clone(),
            covariance: args.covariance.label().to_string(),
            out: args.out.display().to_string(),
        },
        data: DataCounts {
            n_raters_input: ratings_in.rater_ids.len(),
            n_raters_used: rater_ids.len(),
            n_items,
            n_regression: inputs.rater_ids.len(),
        },
        warnings: WarningCounts {
            bad_rating_cells: ratings_in.n_bad_cells,
            bad_time_cells: times_in.n_bad_cells,
            bad_covariate_values: cov_table.n_bad_values,
            cells_trimmed,
            ratings_masked: ratings_masked_count,
            raters_dropped_no_data,
            raters_dropped_incomplete: inputs.n_dropped,
            irtree_converged: fit.converged,
            irtree_ridge: fit.ridge_applied,
            models_with_warnings: warned.clone(),
        },
        cronbach_alpha: cronbach,
        outputs: Vec::new(),
    };
    // First write with an empty output list so report generation can read the
    // manifest, then finalize the list.
    bundle::write_json(&args.out.join("manifest.json"), &manifest)?;
    let report_files = bundle::emit_report_files(&args.out)?;
    outputs.extend(report_files);
    let manifest = Manifest { outputs: bundle::sorted_outputs(&outputs), ..manifest };
    bundle::write_json(&args.out.join("manifest.json"), &manifest)?;

    let warnings = manifest.warnings.convergence_warnings();
    println!(
        "pipeline complete: {} raters, {} models, {} convergence warnings -> {}",
        rater_ids.len(),
        records.len(),
        warnings,
        args.out.display()
    );
    Ok(warnings)
}

fn firtree_version() -> String {
    // The library version travels with the CLI build.
    env!("CARGO_PKG_VERSION").to_string()
}

fn cronbach_complete_cases(ratings: &RatingMatrix) -> Option<f64> {
    let complete: Vec<usize> = (0..ratings.n_raters())
        .filter(|&i| (0..ratings.n_items()).all(|j| ratings.get(i, j).is_some()))
        .collect();
    if complete.len() < 2 {
        return None;
    }
    let items = DMatrix::from_fn(complete.len(), ratings.n_items(), |i, j| {
        f64::from(ratings.get(complete[i], j).unwrap())
    });
    match firtree::cronbach_alpha(&items) {
        Ok(a) => Some(a),
        Err(e) => {
            log::warn!("Cronbach alpha not computed: {e}");
            None
        }
    }
}

// ------------------------------------------------------------------ report

/// Regenerate the human-readable report files inside an existing bundle.
#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Bundle directory containing manifest.json
    pub dir: PathBuf,
}

pub fn cmd_report(args: &ReportArgs) -> anyhow::Result<u32> {
    if !args.dir.join("manifest.json").exists() {
        bail!("{} does not contain a manifest.json", args.dir.display());
    }
    let files = bundle::emit_report_files(&args.dir)?;
    println!("regenerated {} report files in {}", files.len(), args.dir.display());
    Ok(0)
}
