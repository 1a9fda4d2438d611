//! Crisp and fuzzy normal linear models.
//!
//! The fuzzy model treats each response as a standardized membership curve
//! and minimizes the expected negative log-density (the inaccuracy) of a
//! normal regression under that curve. Two routes are implemented: the
//! closed form (least squares on membership means, variance inflated by the
//! membership variances) and a direct quasi-Newton minimization of the
//! quadrature-evaluated objective. They must agree; disagreement signals a
//! defect in one of them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fuzzy::FuzzyNumber;
use crate::optim::{self, OptimOptions};
use crate::quad;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Normal,
    LogNormal,
    FuzzyNormal,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Normal => "normal",
            ModelKind::LogNormal => "lognormal",
            ModelKind::FuzzyNormal => "fuzzy-normal",
        }
    }
}

/// Design matrix with an intercept in the first column and full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != x.ncols() {
            return Err(Error::Input(format!(
                "{} labels for {} design columns",
                labels.len(),
                x.ncols()
            )));
        }
        if x.nrows() < x.ncols() {
            return Err(Error::Input(format!(
                "design has more columns ({}) than rows ({})",
                x.ncols(),
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("design matrix contains non-finite values".into()));
        }
        if (0..x.nrows()).any(|i| x[(i, 0)] != 1.0) {
            return Err(Error::Input("first design column must be the all-ones intercept".into()));
        }
        // Modified Gram-Schmidt rank check; a column swallowed by its
        // predecessors is reported by name.
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut collinear = Vec::new();
        for k in 0..x.ncols() {
            let mut v = x.column(k).clone_owned();
            let original = v.norm();
            for b in &basis {
                let proj = b.dot(&v);
                v -= b * proj;
            }
            if v.norm() <= 1e-10 * original.max(1.0) {
                collinear.push(labels[k].clone());
            } else {
                let n = v.norm();
                basis.push(v / n);
            }
        }
        if !collinear.is_empty() {
            return Err(Error::Input(format!(
                "design matrix is rank deficient; collinear columns: {}",
                collinear.join(", ")
            )));
        }
        Ok(DesignMatrix { x, labels })
    }

    /// Intercept-only design with the same number of rows.
    pub fn intercept_only(n: usize) -> Self {
        DesignMatrix {
            x: DMatrix::from_element(n, 1, 1.0),
            labels: vec!["(intercept)".to_string()],
        }
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// One predictor column before design expansion.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateColumn {
    Continuous { name: String, values: Vec<f64> },
    Categorical {
        name: String,
        values: Vec<String>,
        /// Declared level order; the first dummy corresponds to levels[1].
        levels: Vec<String>,
        reference: String,
    },
}

/// Expands covariates into an intercept + slopes design. Categorical columns
/// become 0/1 dummies for every non-reference level, in declared order.
pub fn build_design(columns: &[CovariateColumn], n: usize) -> Result<DesignMatrix> {
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut labels = vec!["(intercept)".to_string()];
    for col in columns {
        match col {
            CovariateColumn::Continuous { name, values } => {
                if values.len() != n {
                    return Err(Error::Input(format!(
                        "covariate {name} has {} rows, expected {n}",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Input(format!("covariate {name} has non-finite values")));
                }
                cols.push(values.clone());
                labels.push(name.clone());
            }
            CovariateColumn::Categorical { name, values, levels, reference } => {
                if values.len() != n {
                    return Err(Error::Input(format!(
                        "covariate {name} has {} rows, expected {n}",
                        values.len()
                    )));
                }
                if !levels.contains(reference) {
                    return Err(Error::Input(format!(
                        "reference level {reference:?} of {name} is not among its levels"
                    )));
                }
                for v in values {
                    if !levels.contains(v) {
                        return Err(Error::Input(format!(
                            "covariate {name} has undeclared level {v:?}"
                        )));
                    }
                }
                for level in levels.iter().filter(|l| *l != reference) {
                    cols.push(values.iter().map(|v| f64::from(u8::from(v == level))).collect());
                    labels.push(format!("{name}={level}"));
                }
            }
        }
    }
    let p = cols.len();
    let x = DMatrix::from_fn(n, p, |i, j| cols[j][i]);
    DesignMatrix::new(x, labels)
}

#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub kind: ModelKind,
    pub labels: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    /// Wald intervals beta +- z_{1 - alpha/2} * se.
    pub ci: Vec<(f64, f64)>,
    pub sigma2: f64,
    pub pseudo_r2: f64,
    pub residual_quartiles: (f64, f64, f64),
    /// Minimized objective: negative log-likelihood for the crisp models,
    /// total inaccuracy for the fuzzy model.
    pub objective_at_optimum: f64,
    pub n: usize,
    pub alpha_level: f64,
    /// exp(beta) and exp(se) for the log-scale model, as multiplicative effects.
    pub exp_beta: Option<Vec<f64>>,
    pub exp_se: Option<Vec<f64>>,
    pub converged: bool,
    /// True when the numeric fuzzy path failed and the closed form was
    /// returned in its place.
    pub numeric_fallback: bool,
}

impl RegressionFit {
    pub fn log_likelihood(&self) -> f64 {
        -self.objective_at_optimum
    }
}

/// Least squares via thin QR; returns beta and (X'X)^-1.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Input("design matrix is numerically singular".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Input("design matrix is numerically singular".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    Ok((beta, xtx_inv))
}

fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    (
        stats::quantile_type7(values, 0.25),
        stats::quantile_type7(values, 0.5),
        stats::quantile_type7(values, 0.75),
    )
}

fn wald_ci(beta: &[f64], se: &[f64], alpha_level: f64) -> Vec<(f64, f64)> {
    let z = stats::norm_ppf(1.0 - alpha_level / 2.0);
    beta.iter().zip(se).map(|(b, s)| (b - z * s, b + z * s)).collect()
}

fn check_alpha_level(alpha_level: f64) -> Result<()> {
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(Error::Input(format!("alpha level must be in (0, 1), got {alpha_level}")));
    }
    Ok(())
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Cox-Snell style likelihood ratio index, clipped to [0, 1].
fn r2_from_loglik(l_full: f64, l_null: f64, n: usize) -> f64 {
    (1.0 - (-(2.0 / n as f64) * (l_full - l_null)).exp()).clamp(0.0, 1.0)
}

/// Maximum-likelihood normal linear model: beta by least squares,
/// sigma2 = RSS / n, z-based Wald intervals.
pub fn fit_normal(y: &[f64], design: &DesignMatrix, alpha_level: f64) -> Result<RegressionFit> {
    check_alpha_level(alpha_level)?;
    let n = design.n();
    if y.len() != n {
        return Err(Error::Input(format!("{} responses for {} design rows", y.len(), n)));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("responses must be finite".into()));
    }
    if n <= design.p() {
        return Err(Error::Input(format!(
            "need more rows ({n}) than coefficients ({}) to estimate a variance",
            design.p()
        )));
    }
    let yv = DVector::from_column_slice(y);
    let (beta, xtx_inv) = ols(design.x(), &yv)?;
    let fitted = design.x() * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let sigma2 = rss / n as f64;
    let se: Vec<f64> = (0..design.p()).map(|k| (sigma2 * xtx_inv[(k, k)]).sqrt()).collect();
    let loglik = -0.5 * n as f64 * ((TWO_PI * sigma2).ln() + 1.0);

    let sigma2_null = stats::sample_var(y) * (n - 1) as f64 / n as f64;
    let loglik_null = -0.5 * n as f64 * ((TWO_PI * sigma2_null).ln() + 1.0);
    let pseudo_r2 = if design.p() == 1 { 0.0 } else { r2_from_loglik(loglik, loglik_null, n) };

    Ok(RegressionFit {
        kind: ModelKind::Normal,
        labels: design.labels().to_vec(),
        beta: beta.iter().copied().collect(),
        ci: wald_ci(beta.as_slice(), &se, alpha_level),
        se,
        sigma2,
        pseudo_r2,
        residual_quartiles: quartiles(&residuals),
        objective_at_optimum: -loglik,
        n,
        alpha_level,
        exp_beta: None,
        exp_se: None,
        converged: true,
        numeric_fallback: false,
    })
}

/// Normal model on log response times; coefficients are also reported as
/// multiplicative effects exp(beta). Residuals and the stored likelihood stay
/// on the log scale (the log-response Jacobian cancels in full-vs-null
/// differences, so the pseudo-R2 is unaffected).
pub fn fit_lognormal(t: &[f64], design: &DesignMatrix, alpha_level: f64) -> Result<RegressionFit> {
    if t.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("log-scale model requires strictly positive responses".into()));
    }
    let log_t: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let mut fit = fit_normal(&log_t, design, alpha_level)?;
    fit.kind = ModelKind::LogNormal;
    fit.exp_beta = Some(fit.beta.iter().map(|b| b.exp()).collect());
    fit.exp_se = Some(fit.se.iter().map(|s| s.exp()).collect());
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuzzyFitMethod {
    /// Least squares on membership means, variance inflated by membership
    /// variances.
    ClosedForm,
    /// Quasi-Newton on (beta, ln sigma2) with the quadrature-evaluated
    /// inaccuracy objective.
    Numeric,
}

struct FuzzySummaries {
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn membership_summaries(ydata: &[FuzzyNumber]) -> FuzzySummaries {
    let mut mean = Vec::with_capacity(ydata.len());
    let mut var = Vec::with_capacity(ydata.len());
    for f in ydata {
        let m = f.moments();
        mean.push(m.mean);
        var.push(m.variance);
    }
    FuzzySummaries { mean, var }
}

/// Total inaccuracy at (beta, sigma2) from the membership summaries.
fn inaccuracy_total(sums: &FuzzySummaries, design: &DesignMatrix, beta: &DVector<f64>, sigma2: f64) -> f64 {
    let n = sums.mean.len();
    let mu = design.x() * beta;
    let mut quad_term = 0.0;
    for i in 0..n {
        let d = sums.mean[i] - mu[i];
        quad_term += d * d + sums.var[i];
    }
    0.5 * n as f64 * (TWO_PI * sigma2).ln() + quad_term / (2.0 * sigma2)
}

/// Per-observation quadrature grid against the standardized membership:
/// pairs (y_k, w_k) with sum w_k = 1.
fn membership_grid(f: &FuzzyNumber) -> Vec<(f64, f64)> {
    if f.is_degenerate() {
        return vec![(f.c(), 1.0)];
    }
    let mut nodes = quad::graded_nodes(f.l(), f.c());
    nodes.extend(quad::graded_nodes(f.c(), f.r()));
    let mut total = 0.0;
    for (y, w) in nodes.iter_mut() {
        *w *= f.membership(*y).expect("quadrature nodes are finite");
        total += *w;
    }
    for (_, w) in nodes.iter_mut() {
        *w /= total;
    }
    nodes
}

/// Fuzzy normal regression by the minimum inaccuracy principle.
pub fn fit_fuzzy_normal(
    ydata: &[FuzzyNumber],
    design: &DesignMatrix,
    alpha_level: f64,
    method: FuzzyFitMethod,
) -> Result<RegressionFit> {
    check_alpha_level(alpha_level)?;
    let n = design.n();
    let p = design.p();
    if ydata.len() != n {
        return Err(Error::Input(format!("{} responses for {n} design rows", ydata.len())));
    }
    if n <= p {
        return Err(Error::Input(format!(
            "need more rows ({n}) than coefficients ({p}) to estimate a variance"
        )));
    }
    let sums = membership_summaries(ydata);

    let closed = {
        let mv = DVector::from_column_slice(&sums.mean);
        let (beta, xtx_inv) = ols(design.x(), &mv)?;
        let fitted = design.x() * &beta;
        let mse: f64 =
            (0..n).map(|i| (sums.mean[i] - fitted[i]).powi(2)).sum::<f64>() / n as f64;
        let sigma2 = mse + stats::mean(&sums.var);
        (beta, xtx_inv, sigma2)
    };

    let (beta, xtx_inv, sigma2, converged, numeric_fallback) = match method {
        FuzzyFitMethod::ClosedForm => (closed.0, closed.1, closed.2, true, false),
        FuzzyFitMethod::Numeric => {
            let grids: Vec<Vec<(f64, f64)>> = ydata.iter().map(membership_grid).collect();
            let x = design.x().clone();
            let objective = |theta: &[f64]| -> f64 {
                let sigma2 = theta[p].exp();
                if !sigma2.is_finite() || sigma2 <= 0.0 {
                    return f64::INFINITY;
                }
                let log_norm = 0.5 * (TWO_PI * sigma2).ln();
                let mut total = 0.0;
                for (i, grid) in grids.iter().enumerate() {
                    let mut mu = 0.0;
                    for k in 0..p {
                        mu += x[(i, k)] * theta[k];
                    }
                    for (y, w) in grid {
                        let d = y - mu;
                        total += w * (log_norm + d * d / (2.0 * sigma2));
                    }
                }
                total
            };
            // Crude but method-independent start: intercept at the mean core,
            // variance from the core spread.
            let cores: Vec<f64> = ydata.iter().map(|f| f.c()).collect();
            let mut theta0 = vec![0.0; p + 1];
            theta0[0] = stats::mean(&cores);
            theta0[p] = stats::sample_var(&cores).max(1e-3).ln();
            let res = optim::minimize(
                objective,
                &theta0,
                &OptimOptions { max_iter: 1000, grad_tol: 1e-8, step_tol: 1e-10, ..OptimOptions::default() },
            );
            if res.converged {
                let beta = DVector::from_column_slice(&res.x[..p]);
                let sigma2 = res.x[p].exp();
                (beta, closed.1.clone(), sigma2, true, false)
            } else {
                log::warn!("numeric inaccuracy path did not converge; returning the closed form");
                (closed.0, closed.1, closed.2, false, true)
            }
        }
    };

    // The inaccuracy Hessian's beta block is X'X / sigma2 and the cross terms
    // vanish at the optimum, so the Wald form matches the crisp normal model.
    let se: Vec<f64> = (0..p).map(|k| (sigma2 * xtx_inv[(k, k)]).sqrt()).collect();
    let objective_at_optimum = inaccuracy_total(&sums, design, &beta, sigma2);

    let fitted = design.x() * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| sums.mean[i] - fitted[i]).collect();

    // Intercept-only null of the same kind, closed form.
    let null_mean = stats::mean(&sums.mean);
    let null_sigma2 = sums
        .mean
        .iter()
        .zip(&sums.var)
        .map(|(m, v)| (m - null_mean).powi(2) + v)
        .sum::<f64>()
        / n as f64;
    let null_beta = DVector::from_element(1, null_mean);
    let null_design = DesignMatrix::intercept_only(n);
    let null_objective = inaccuracy_total(&sums, &null_design, &null_beta, null_sigma2);
    let pseudo_r2 =
        if p == 1 { 0.0 } else { r2_from_loglik(-objective_at_optimum, -null_objective, n) };

    Ok(RegressionFit {
        kind: ModelKind::FuzzyNormal,
        labels: design.labels().to_vec(),
        beta: beta.iter().copied().collect(),
        ci: wald_ci(beta.as_slice(), &se, alpha_level),
        se,
        sigma2,
        pseudo_r2,
        residual_quartiles: quartiles(&residuals),
        objective_at_optimum,
        n,
        alpha_level,
        exp_beta: None,
        exp_se: None,
        converged,
        numeric_fallback,
    })
}

/// Likelihood-ratio pseudo R2 between a fitted model and its intercept-only
/// null of the same kind on the same data.
pub fn pseudo_r2(full: &RegressionFit, null: &RegressionFit) -> Result<f64> {
    if full.kind != null.kind {
        return Err(Error::Input(format!(
            "pseudo R2 needs models of the same kind, got {} and {}",
            full.kind.label(),
            null.kind.label()
        )));
    }
    if full.n != null.n {
        return Err(Error::Input("pseudo R2 needs models fitted on the same data".into()));
    }
    if null.beta.len() != 1 {
        return Err(Error::Input("null model must be intercept-only".into()));
    }
    Ok(r2_from_loglik(full.log_likelihood(), null.log_likelihood(), full.n))
}

/// Cronbach's alpha over an n x J item matrix (sample variances, n-1).
pub fn cronbach_alpha(items: &DMatrix<f64>) -> Result<f64> {
    let (n, j) = items.shape();
    if j < 2 {
        return Err(Error::Input("alpha needs at least two items".into()));
    }
    if n < 2 {
        return Err(Error::Input("alpha needs at least two raters".into()));
    }
    if items.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("item matrix contains non-finite values".into()));
    }
    let mut item_var_sum = 0.0;
    for col in 0..j {
        let column: Vec<f64> = (0..n).map(|i| items[(i, col)]).collect();
        item_var_sum += stats::sample_var(&column);
    }
    let rowsums: Vec<f64> = (0..n).map(|i| items.row(i).sum()).collect();
    let total_var = stats::sample_var(&rowsums);
    if total_var <= f64::EPSILON {
        return Err(Error::Undefined("total score variance is zero".into()));
    }
    Ok(j as f64 / (j - 1) as f64 * (1.0 - item_var_sum / total_var))
}

/// Alpha-weighted composite: alpha * rowsum + (1 - alpha) * grand mean of rowsums.
pub fn alpha_composite(items: &DMatrix<f64>, alpha: f64) -> Vec<f64> {
    let n = items.nrows();
    let rowsums: Vec<f64> = (0..n).map(|i| items.row(i).sum()).collect();
    let grand = stats::mean(&rowsums);
    rowsums.iter().map(|s| alpha * s + (1.0 - alpha) * grand).collect()
}
