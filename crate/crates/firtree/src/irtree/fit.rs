//! Marginal maximum likelihood for the tree model.
//!
//! Per-rater node traits eta_i ~ N(0, Sigma) are integrated out with a Laplace
//! approximation around the per-rater posterior mode (found by damped Newton;
//! the inner objective is strictly concave). The outer problem optimizes item
//! easiness values and a log-Cholesky parametrization of Sigma by quasi-Newton
//! with central finite-difference gradients, so every evaluation is
//! deterministic and order-stable.

use std::cell::RefCell;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{dendrify, PseudoObs, RatingMatrix};
use crate::error::{Error, Result};
use crate::optim::{self, OptimOptions};
use crate::tree::TreeSpec;

const INNER_GRAD_TOL: f64 = 1e-10;
const INNER_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceStructure {
    /// Independent node traits, free variances.
    Diagonal,
    /// Free positive-definite covariance.
    Full,
    /// Covariance held constant (not optimized).
    Fixed(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub covariance: CovarianceStructure,
    pub max_iter: usize,
    pub step_tol: f64,
    pub grad_tol: f64,
    /// Penalty weight on ||alpha||^2, applied only when a node-item cell is
    /// empty or shows complete separation.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            covariance: CovarianceStructure::Diagonal,
            max_iter: 500,
            step_tol: 1e-6,
            grad_tol: 1e-6,
            ridge: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IrtreeFit {
    pub tree: TreeSpec,
    /// Item easiness, one row per item, one column per node.
    pub alpha: DMatrix<f64>,
    pub sigma_eta: DMatrix<f64>,
    /// Posterior-mode traits of the training raters, one row per rater.
    pub eta_hat: DMatrix<f64>,
    pub log_marginal_likelihood: f64,
    pub converged: bool,
    pub ridge_applied: bool,
}

/// Per-rater pseudo-observations: (item, node, z).
type RaterRows = Vec<(usize, usize, u8)>;

fn group_by_rater(rows: &[PseudoObs], n_raters: usize) -> Vec<RaterRows> {
    let mut groups = vec![Vec::new(); n_raters];
    for r in rows {
        groups[r.rater].push((r.item, r.node, r.z));
    }
    groups
}

fn n_sigma_params(structure: &CovarianceStructure, n_nodes: usize) -> usize {
    match structure {
        CovarianceStructure::Diagonal => n_nodes,
        CovarianceStructure::Full => n_nodes * (n_nodes + 1) / 2,
        CovarianceStructure::Fixed(_) => 0,
    }
}

fn sigma_from_params(
    structure: &CovarianceStructure,
    n_nodes: usize,
    params: &[f64],
) -> Option<DMatrix<f64>> {
    let sigma = match structure {
        CovarianceStructure::Diagonal => {
            DMatrix::from_diagonal(&DVector::from_iterator(
                n_nodes,
                params.iter().map(|p| (2.0 * p).exp()),
            ))
        }
        CovarianceStructure::Full => {
            let mut l = DMatrix::zeros(n_nodes, n_nodes);
            let mut idx = 0;
            for col in 0..n_nodes {
                l[(col, col)] = params[idx].exp();
                idx += 1;
                for row in (col + 1)..n_nodes {
                    l[(row, col)] = params[idx];
                    idx += 1;
                }
            }
            &l * l.transpose()
        }
        CovarianceStructure::Fixed(s) => s.clone(),
    };
    if sigma.iter().all(|v| v.is_finite()) {
        Some(sigma)
    } else {
        None
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inner objective g(eta) = sum[z s - softplus(s)] - eta' Sigma^-1 eta / 2,
/// returning the value, gradient, and per-node curvature diagonal.
fn eval_inner(
    rows: &RaterRows,
    alpha_flat: &[f64],
    n_nodes: usize,
    sigma_inv: &DMatrix<f64>,
    eta: &DVector<f64>,
) -> (f64, DVector<f64>, DVector<f64>) {
    let mut value = 0.0;
    let mut score = DVector::zeros(n_nodes);
    let mut curv = DVector::zeros(n_nodes);
    for &(item, node, z) in rows {
        let s = eta[node] + alpha_flat[item * n_nodes + node];
        let pi = super::node_probability(0.0, s);
        value += f64::from(z) * s - softplus(s);
        score[node] += f64::from(z) - pi;
        curv[node] += pi * (1.0 - pi);
    }
    let si_eta = sigma_inv * eta;
    value -= 0.5 * eta.dot(&si_eta);
    let grad = score - si_eta;
    (value, grad, curv)
}

fn cholesky_with_jitter(mut m: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    for attempt in 0..4 {
        match Cholesky::new(m.clone()) {
            Some(c) => return Some(c),
            None => {
                let jitter = 1e-8 * 10f64.powi(attempt);
                for k in 0..m.nrows() {
                    m[(k, k)] += jitter;
                }
                log::warn!("covariance iterate not positive definite, retrying with jitter {jitter}");
            }
        }
    }
    None
}

/// Damped Newton ascent to the posterior mode. Returns the mode, the inner
/// objective there, its curvature diagonal, and the final gradient norm.
fn inner_mode(
    rows: &RaterRows,
    alpha_flat: &[f64],
    n_nodes: usize,
    sigma_inv: &DMatrix<f64>,
    start: &[f64],
) -> (DVector<f64>, f64, DVector<f64>, f64) {
    let mut eta = DVector::from_column_slice(start);
    let (mut value, mut grad, mut curv) =
        eval_inner(rows, alpha_flat, n_nodes, sigma_inv, &eta);
    for _ in 0..INNER_MAX_ITER {
        if grad.norm() <= INNER_GRAD_TOL {
            break;
        }
        let mut h = sigma_inv.clone();
        for k in 0..n_nodes {
            h[(k, k)] += curv[k];
        }
        let Some(chol) = cholesky_with_jitter(h) else { break };
        let delta = chol.solve(&grad);
        let slope = grad.dot(&delta);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let eta_try = &eta + t * &delta;
            let (v_try, g_try, c_try) =
                eval_inner(rows, alpha_flat, n_nodes, sigma_inv, &eta_try);
            if v_try.is_finite() && v_try >= value + 1e-4 * t * slope {
                eta = eta_try;
                value = v_try;
                grad = g_try;
                curv = c_try;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let gnorm = grad.norm();
    (eta, value, curv, gnorm)
}

/// Sum over raters of the Laplace-approximated log marginal contribution.
fn marginal_total(
    groups: &[RaterRows],
    alpha_flat: &[f64],
    n_nodes: usize,
    sigma: &DMatrix<f64>,
    starts: &mut [Vec<f64>],
) -> Option<f64> {
    let chol_sigma = Cholesky::new(sigma.clone())?;
    let sigma_inv = chol_sigma.inverse();
    let logdet_sigma: f64 = 2.0 * chol_sigma.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut total = 0.0;
    for (i, rows) in groups.iter().enumerate() {
        if rows.is_empty() {
            // No data: the marginal contribution integrates to one.
            continue;
        }
        let (mode, g_value, curv, _) =
            inner_mode(rows, alpha_flat, n_nodes, &sigma_inv, &starts[i]);
        let mut h = sigma_inv.clone();
        for k in 0..n_nodes {
            h[(k, k)] += curv[k];
        }
        let chol_h = cholesky_with_jitter(h)?;
        let logdet_h: f64 = 2.0 * chol_h.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        total += g_value - 0.5 * logdet_sigma - 0.5 * logdet_h;
        starts[i].copy_from_slice(mode.as_slice());
    }
    total.is_finite().then_some(total)
}

/// Empirical-logit starting values for the item easiness matrix (J x N),
/// clamped to [-3, 3]; cells with no observations start at zero.
pub fn initial_alpha(tree: &TreeSpec, ratings: &RatingMatrix) -> Result<DMatrix<f64>> {
    let rows = dendrify(tree, ratings)?;
    let n_nodes = tree.n_nodes();
    let n_items = ratings.n_items();
    let mut ones = vec![0usize; n_items * n_nodes];
    let mut counts = vec![0usize; n_items * n_nodes];
    for r in &rows {
        let cell = r.item * n_nodes + r.node;
        counts[cell] += 1;
        ones[cell] += usize::from(r.z);
    }
    let mut alpha = DMatrix::zeros(n_items, n_nodes);
    for j in 0..n_items {
        for n in 0..n_nodes {
            let cell = j * n_nodes + n;
            if counts[cell] > 0 {
                let p = ones[cell] as f64 / counts[cell] as f64;
                let logit = (p / (1.0 - p)).ln();
                alpha[(j, n)] = logit.clamp(-3.0, 3.0);
            }
        }
    }
    Ok(alpha)
}

/// Log marginal likelihood at given parameters (no penalty), using the same
/// Laplace approximation as `fit`.
pub fn log_marginal_likelihood(
    tree: &TreeSpec,
    ratings: &RatingMatrix,
    alpha: &DMatrix<f64>,
    sigma_eta: &DMatrix<f64>,
) -> Result<f64> {
    let n_nodes = tree.n_nodes();
    if alpha.nrows() != ratings.n_items() || alpha.ncols() != n_nodes {
        return Err(Error::Input("alpha shape does not match items x nodes".into()));
    }
    if sigma_eta.nrows() != n_nodes || sigma_eta.ncols() != n_nodes {
        return Err(Error::Input("sigma_eta shape does not match node count".into()));
    }
    let groups = group_by_rater(&dendrify(tree, ratings)?, ratings.n_raters());
    let alpha_flat = flatten_alpha(alpha);
    let mut starts = vec![vec![0.0; n_nodes]; groups.len()];
    marginal_total(&groups, &alpha_flat, n_nodes, sigma_eta, &mut starts)
        .ok_or_else(|| Error::Domain("sigma_eta must be positive definite".into()))
}

fn flatten_alpha(alpha: &DMatrix<f64>) -> Vec<f64> {
    let (n_items, n_nodes) = alpha.shape();
    let mut flat = vec![0.0; n_items * n_nodes];
    for j in 0..n_items {
        for n in 0..n_nodes {
            flat[j * n_nodes + n] = alpha[(j, n)];
        }
    }
    flat
}

/// Detects empty or completely separated item-node cells.
fn needs_ridge(rows: &[PseudoObs], n_items: usize, n_nodes: usize) -> bool {
    let mut ones = vec![0usize; n_items * n_nodes];
    let mut counts = vec![0usize; n_items * n_nodes];
    for r in rows {
        let cell = r.item * n_nodes + r.node;
        counts[cell] += 1;
        ones[cell] += usize::from(r.z);
    }
    for cell in 0..counts.len() {
        if counts[cell] == 0 || ones[cell] == 0 || ones[cell] == counts[cell] {
            return true;
        }
    }
    false
}

pub fn fit(tree: &TreeSpec, ratings: &RatingMatrix, options: &FitOptions) -> Result<IrtreeFit> {
    let rows = dendrify(tree, ratings)?;
    if rows.is_empty() {
        return Err(Error::Input("no observed ratings to fit".into()));
    }
    let n_nodes = tree.n_nodes();
    let n_items = ratings.n_items();
    if let CovarianceStructure::Fixed(s) = &options.covariance {
        if s.nrows() != n_nodes || s.ncols() != n_nodes {
            return Err(Error::Input("fixed covariance shape does not match node count".into()));
        }
        if Cholesky::new(s.clone()).is_none() {
            return Err(Error::Domain("fixed covariance must be positive definite".into()));
        }
    }

    let ridge_applied = needs_ridge(&rows, n_items, n_nodes);
    if ridge_applied {
        log::warn!(
            "empty or separated item-node cells detected; applying ridge {} on easiness values",
            options.ridge
        );
    }

    let groups = group_by_rater(&rows, ratings.n_raters());
    let alpha0 = initial_alpha(tree, ratings)?;
    let n_alpha = n_items * n_nodes;
    let mut theta0 = flatten_alpha(&alpha0);
    theta0.extend(std::iter::repeat(0.0).take(n_sigma_params(&options.covariance, n_nodes)));

    let cache = RefCell::new(vec![vec![0.0; n_nodes]; groups.len()]);
    let ridge = if ridge_applied { options.ridge } else { 0.0 };
    let structure = options.covariance.clone();
    let objective = |theta: &[f64]| -> f64 {
        let Some(sigma) = sigma_from_params(&structure, n_nodes, &theta[n_alpha..]) else {
            return f64::INFINITY;
        };
        let mut starts = cache.borrow_mut();
        match marginal_total(&groups, &theta[..n_alpha], n_nodes, &sigma, &mut starts) {
            Some(total) => {
                let pen: f64 = theta[..n_alpha].iter().map(|a| a * a).sum();
                -total + ridge * pen
            }
            None => f64::INFINITY,
        }
    };

    let opt = optim::minimize(
        objective,
        &theta0,
        &OptimOptions {
            max_iter: options.max_iter,
            grad_tol: options.grad_tol,
            step_tol: options.step_tol,
            ..OptimOptions::default()
        },
    );

    let alpha = DMatrix::from_fn(n_items, n_nodes, |j, n| opt.x[j * n_nodes + n]);
    let sigma_eta = sigma_from_params(&structure, n_nodes, &opt.x[n_alpha..])
        .ok_or_else(|| Error::Domain("final covariance parameters are not finite".into()))?;
    let alpha_flat = &opt.x[..n_alpha];
    let mut starts = vec![vec![0.0; n_nodes]; groups.len()];
    let log_marginal = marginal_total(&groups, alpha_flat, n_nodes, &sigma_eta, &mut starts)
        .ok_or_else(|| Error::Domain("final covariance is not positive definite".into()))?;
    let eta_hat = posterior_modes(&groups, alpha_flat, n_nodes, &sigma_eta)?;

    Ok(IrtreeFit {
        tree: tree.clone(),
        alpha,
        sigma_eta,
        eta_hat,
        log_marginal_likelihood: log_marginal,
        converged: opt.converged,
        ridge_applied,
    })
}

fn posterior_modes(
    groups: &[RaterRows],
    alpha_flat: &[f64],
    n_nodes: usize,
    sigma: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::Domain("sigma_eta must be positive definite".into()))?;
    let sigma_inv = chol.inverse();
    let mut eta_hat = DMatrix::zeros(groups.len(), n_nodes);
    for (i, rows) in groups.iter().enumerate() {
        if rows.is_empty() {
            continue; // prior mode: zeros
        }
        let (mode, _, _, gnorm) =
            inner_mode(rows, alpha_flat, n_nodes, &sigma_inv, &vec![0.0; n_nodes]);
        // The damped Newton loop bottoms out at the value-function float
        // plateau, around sqrt(eps * scale) in gradient norm.
        debug_assert!(gnorm <= 1e-6, "inner solver left gradient norm {gnorm}");
        for k in 0..n_nodes {
            eta_hat[(i, k)] = mode[k];
        }
    }
    Ok(eta_hat)
}

/// Posterior-mode traits for (possibly new) raters under a fitted model.
pub fn predict_eta(fit: &IrtreeFit, ratings: &RatingMatrix) -> Result<DMatrix<f64>> {
    if ratings.n_items() != fit.alpha.nrows() {
        return Err(Error::Input(format!(
            "ratings have {} items but the fit was for {}",
            ratings.n_items(),
            fit.alpha.nrows()
        )));
    }
    let rows = dendrify(&fit.tree, ratings)?;
    let groups = group_by_rater(&rows, ratings.n_raters());
    posterior_modes(&groups, &flatten_alpha(&fit.alpha), fit.tree.n_nodes(), &fit.sigma_eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Two categories, one node: category 2 takes branch 1.
    fn single_node_tree() -> TreeSpec {
        TreeSpec::new(2, 1, vec![Some(0), Some(1)]).unwrap()
    }

    #[test]
    fn single_node_no_variance_recovers_empirical_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n_raters = 400;
        let probs = [0.7, 0.35];
        let mut values = Vec::with_capacity(n_raters * probs.len());
        for _ in 0..n_raters {
            for p in probs {
                values.push(Some(if rng.gen_bool(p) { 2 } else { 1 }));
            }
        }
        let ratings = RatingMatrix::new(n_raters, probs.len(), values).unwrap();
        let tree = single_node_tree();
        let opts = FitOptions {
            covariance: CovarianceStructure::Fixed(DMatrix::from_element(1, 1, 1e-8)),
            ..FitOptions::default()
        };
        let fit = fit(&tree, &ratings, &opts).unwrap();
        assert!(fit.converged);
        for j in 0..probs.len() {
            let mut ones = 0usize;
            for i in 0..n_raters {
                if ratings.get(i, j) == Some(2) {
                    ones += 1;
                }
            }
            let p_hat = ones as f64 / n_raters as f64;
            let logit = (p_hat / (1.0 - p_hat)).ln();
            assert_relative_eq!(fit.alpha[(j, 0)], logit, epsilon = 1e-4);
        }
    }

    #[test]
    fn relabeled_categories_negate_easiness() {
        // Reversing the scale and flipping every branch must mirror the fit.
        let tree = TreeSpec::fig3_linear();
        let flipped = TreeSpec::new(
            4,
            3,
            vec![
                Some(0), Some(0), Some(0),
                Some(0), Some(0), Some(1),
                Some(0), Some(1), None,
                Some(1), None, None,
            ],
        )
        .unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n_raters = 80;
        let n_items = 3;
        let values: Vec<Option<u8>> = (0..n_raters * n_items)
            .map(|_| Some(rng.gen_range(1..=4) as u8))
            .collect();
        let ratings = RatingMatrix::new(n_raters, n_items, values.clone()).unwrap();
        let reversed: Vec<Option<u8>> = values.iter().map(|v| v.map(|y| 5 - y)).collect();
        let ratings_rev = RatingMatrix::new(n_raters, n_items, reversed).unwrap();

        let opts = FitOptions { grad_tol: 1e-7, ..FitOptions::default() };
        let a = fit(&tree, &ratings, &opts).unwrap();
        let b = fit(&flipped, &ratings_rev, &opts).unwrap();
        for j in 0..n_items {
            for n in 0..3 {
                assert_relative_eq!(a.alpha[(j, n)], -b.alpha[(j, n)], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn optimum_improves_on_starting_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tree = TreeSpec::fig2a();
        let values: Vec<Option<u8>> =
            (0..60 * 4).map(|_| Some(rng.gen_range(1..=3) as u8)).collect();
        let ratings = RatingMatrix::new(60, 4, values).unwrap();
        let fit = fit(&tree, &ratings, &FitOptions::default()).unwrap();
        let alpha0 = initial_alpha(&tree, &ratings).unwrap();
        let at_start =
            log_marginal_likelihood(&tree, &ratings, &alpha0, &DMatrix::identity(2, 2)).unwrap();
        assert!(fit.log_marginal_likelihood >= at_start - 1e-9);
    }

    #[test]
    fn posterior_mode_gradient_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let tree = TreeSpec::fig3_linear();
        let values: Vec<Option<u8>> =
            (0..50 * 5).map(|_| Some(rng.gen_range(1..=4) as u8)).collect();
        let ratings = RatingMatrix::new(50, 5, values).unwrap();
        let fit = fit(&tree, &ratings, &FitOptions::default()).unwrap();

        // Recompute the inner gradient at each returned mode.
        let rows = dendrify(&tree, &ratings).unwrap();
        let groups = group_by_rater(&rows, 50);
        let sigma_inv = Cholesky::new(fit.sigma_eta.clone()).unwrap().inverse();
        let alpha_flat = flatten_alpha(&fit.alpha);
        for (i, rows) in groups.iter().enumerate() {
            let eta = DVector::from_iterator(3, (0..3).map(|k| fit.eta_hat[(i, k)]));
            let (_, grad, _) = eval_inner(rows, &alpha_flat, 3, &sigma_inv, &eta);
            assert!(grad.norm() <= 1e-6, "rater {i}: |grad| = {}", grad.norm());
        }
    }

    #[test]
    fn predict_eta_signs_and_empty_rows() {
        let tree = TreeSpec::fig3_linear();
        // Rater 0 answers the top category everywhere, rater 1 the bottom,
        // rater 2 nothing at all.
        let values = vec![
            Some(4), Some(4), Some(4), Some(4),
            Some(1), Some(1), Some(1), Some(1),
            None, None, None, None,
        ];
        let ratings = RatingMatrix::new(3, 4, values).unwrap();
        let fit = IrtreeFit {
            tree: tree.clone(),
            alpha: DMatrix::zeros(4, 3),
            sigma_eta: DMatrix::identity(3, 3),
            eta_hat: DMatrix::zeros(3, 3),
            log_marginal_likelihood: 0.0,
            converged: true,
            ridge_applied: false,
        };
        let eta = predict_eta(&fit, &ratings).unwrap();
        for k in 0..3 {
            assert!(eta[(0, k)] > 0.0);
            assert!(eta[(2, k)] == 0.0);
        }
        // All-bottom raters only visit the first node with branch 0.
        assert!(eta[(1, 0)] < 0.0);
        assert_eq!(eta[(1, 1)], 0.0);
        assert_eq!(eta[(1, 2)], 0.0);
    }

    #[test]
    fn ridge_flags_separated_cells() {
        // Every rater gives the same answer on item 0: complete separation.
        let values = vec![
            Some(4), Some(2),
            Some(4), Some(3),
            Some(4), Some(1),
            Some(4), Some(2),
            Some(4), Some(3),
            Some(4), Some(2),
        ];
        let ratings = RatingMatrix::new(6, 2, values).unwrap();
        let tree = TreeSpec::fig3_linear();
        let fit = fit(&tree, &ratings, &FitOptions::default()).unwrap();
        assert!(fit.ridge_applied);
        assert!(fit.alpha.iter().all(|a| a.is_finite()));
    }

    #[test]
    fn fixed_covariance_must_be_positive_definite() {
        let tree = single_node_tree();
        let ratings = RatingMatrix::new(2, 1, vec![Some(1), Some(2)]).unwrap();
        let opts = FitOptions {
            covariance: CovarianceStructure::Fixed(DMatrix::from_element(1, 1, -1.0)),
            ..FitOptions::default()
        };
        assert!(fit(&tree, &ratings, &opts).is_err());
    }
}
