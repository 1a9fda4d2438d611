//! Synthetic raters for model checking: Bernoulli branch walks down a tree
//! with Gaussian node traits, plus log-normal response times whose location
//! rises for mid-scale answers (an inverted-U speed profile).

use nalgebra::{Cholesky, DMatrix};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fuzzify::ResponseTimeMatrix;
use crate::irtree::{node_probability, RatingMatrix};
use crate::tree::TreeSpec;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_raters: usize,
    pub n_items: usize,
    pub tree: TreeSpec,
    /// Item easiness, n_items x n_nodes.
    pub alpha_true: DMatrix<f64>,
    /// Trait covariance, n_nodes x n_nodes, positive definite.
    pub sigma_eta_true: DMatrix<f64>,
    /// Location of log response time.
    pub rt_log_mean: f64,
    /// Scale of log response time, > 0.
    pub rt_log_sd: f64,
    /// Added to the log location in proportion to mid-scale closeness.
    pub rt_midscale_boost: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SimTruth {
    /// Drawn traits, n_raters x n_nodes.
    pub eta: DMatrix<f64>,
}

fn validate(cfg: &SimConfig) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if cfg.n_raters == 0 || cfg.n_items == 0 {
        return Err(Error::Input("simulation needs at least one rater and one item".into()));
    }
    let n = cfg.tree.n_nodes();
    if cfg.alpha_true.nrows() != cfg.n_items || cfg.alpha_true.ncols() != n {
        return Err(Error::Input(format!(
            "alpha_true must be {} x {}, got {} x {}",
            cfg.n_items,
            n,
            cfg.alpha_true.nrows(),
            cfg.alpha_true.ncols()
        )));
    }
    if cfg.sigma_eta_true.nrows() != n || cfg.sigma_eta_true.ncols() != n {
        return Err(Error::Input("sigma_eta_true shape must match the node count".into()));
    }
    if !(cfg.rt_log_sd > 0.0) {
        return Err(Error::Input("rt_log_sd must be positive".into()));
    }
    Cholesky::new(cfg.sigma_eta_true.clone())
        .ok_or_else(|| Error::Domain("sigma_eta_true must be positive definite".into()))
}

/// Draws traits, ratings, and response times. The same seed always produces
/// the same output on every platform.
pub fn simulate(cfg: &SimConfig) -> Result<(RatingMatrix, ResponseTimeMatrix, SimTruth)> {
    let chol = validate(cfg)?;
    let n_nodes = cfg.tree.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eta = DMatrix::zeros(cfg.n_raters, n_nodes);
    for i in 0..cfg.n_raters {
        let z = nalgebra::DVector::from_iterator(
            n_nodes,
            (0..n_nodes).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        let row = chol.l() * z;
        for k in 0..n_nodes {
            eta[(i, k)] = row[k];
        }
    }
    let (ratings, times) = walk_with_rng(cfg, &eta, &mut rng)?;
    Ok((ratings, times, SimTruth { eta }))
}

/// Same generative walk with caller-supplied traits; used to check node-level
/// branch frequencies against their probabilities.
pub fn simulate_with_eta(
    cfg: &SimConfig,
    eta: &DMatrix<f64>,
) -> Result<(RatingMatrix, ResponseTimeMatrix)> {
    validate(cfg)?;
    if eta.nrows() != cfg.n_raters || eta.ncols() != cfg.tree.n_nodes() {
        return Err(Error::Input("eta shape must be n_raters x n_nodes".into()));
    }
    // Skip the trait draws so the walk consumes the same stream layout.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.n_raters * cfg.tree.n_nodes() {
        let _: f64 = rng.sample(StandardNormal);
    }
    walk_with_rng(cfg, eta, &mut rng)
}

fn walk_with_rng(
    cfg: &SimConfig,
    eta: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(RatingMatrix, ResponseTimeMatrix)> {
    let n_nodes = cfg.tree.n_nodes();
    let n_cats = cfg.tree.n_categories();
    let mut ratings = Vec::with_capacity(cfg.n_raters * cfg.n_items);
    let mut times = Vec::with_capacity(cfg.n_raters * cfg.n_items);
    let mut path = vec![0u8; n_nodes];
    for i in 0..cfg.n_raters {
        for j in 0..cfg.n_items {
            // Draw every branch; unvisited draws are simply ignored by the
            // category lookup, which keeps the stream layout fixed.
            for (n, slot) in path.iter_mut().enumerate() {
                let pi = node_probability(eta[(i, n)], cfg.alpha_true[(j, n)]);
                *slot = u8::from(rng.gen_bool(pi));
            }
            let cat = cfg.tree.category_for_path(&path).ok_or_else(|| {
                Error::Tree("tree does not map every branch pattern to a category".into())
            })?;
            ratings.push(Some(cat as u8 + 1));

            let unit = cat as f64 / (n_cats - 1) as f64;
            let mid_closeness = 1.0 - (2.0 * unit - 1.0).abs();
            let eps: f64 = rng.sample(StandardNormal);
            let log_t =
                cfg.rt_log_mean + cfg.rt_midscale_boost * mid_closeness + cfg.rt_log_sd * eps;
            times.push(Some(log_t.exp()));
        }
    }
    Ok((
        RatingMatrix::new(cfg.n_raters, cfg.n_items, ratings)?,
        ResponseTimeMatrix::new(cfg.n_raters, cfg.n_items, times)?,
    ))
}
