//! Item-response tree models: rating categories are reached through a chain
//! of binary branch decisions, each governed by a logistic probability with a
//! per-rater trait and a per-item easiness on the linear predictor.

mod fit;

pub use fit::{
    fit, log_marginal_likelihood, predict_eta, CovarianceStructure, FitOptions, IrtreeFit,
};

use crate::error::{Error, Result};
use crate::tree::TreeSpec;

/// Crisp ratings, one row per rater, entries in {1..M} or NA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    n_raters: usize,
    n_items: usize,
    values: Vec<Option<u8>>,
}

impl RatingMatrix {
    pub fn new(n_raters: usize, n_items: usize, values: Vec<Option<u8>>) -> Result<Self> {
        if values.len() != n_raters * n_items {
            return Err(Error::Input(format!(
                "rating matrix has {} entries, expected {} x {}",
                values.len(),
                n_raters,
                n_items
            )));
        }
        if values.iter().flatten().any(|v| *v == 0) {
            return Err(Error::Input("rating categories are 1-based; found 0".into()));
        }
        Ok(RatingMatrix { n_raters, n_items, values })
    }

    pub fn n_raters(&self) -> usize {
        self.n_raters
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn get(&self, rater: usize, item: usize) -> Option<u8> {
        self.values[rater * self.n_items + item]
    }

    pub fn set_na(&mut self, rater: usize, item: usize) {
        self.values[rater * self.n_items + item] = None;
    }

    /// Largest category present, ignoring NA cells.
    pub fn max_category(&self) -> Option<u8> {
        self.values.iter().flatten().copied().max()
    }
}

/// One binary pseudo-observation produced by expanding a rating along its
/// branch path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoObs {
    pub rater: usize,
    pub item: usize,
    pub node: usize,
    pub z: u8,
}

/// Expands each non-NA rating into one row per visited node. Row order is
/// rater-major, then item, then node.
pub fn dendrify(tree: &TreeSpec, ratings: &RatingMatrix) -> Result<Vec<PseudoObs>> {
    let mut out = Vec::new();
    for i in 0..ratings.n_raters() {
        for j in 0..ratings.n_items() {
            let Some(y) = ratings.get(i, j) else { continue };
            let cat = y as usize - 1;
            if cat >= tree.n_categories() {
                return Err(Error::Input(format!(
                    "rating {y} at ({i}, {j}) exceeds the tree's {} categories",
                    tree.n_categories()
                )));
            }
            let before = out.len();
            for n in 0..tree.n_nodes() {
                if let Some(z) = tree.entry(cat, n) {
                    out.push(PseudoObs { rater: i, item: j, node: n, z });
                }
            }
            if out.len() == before {
                return Err(Error::Tree(format!("category {y} has an all-NA mapping row")));
            }
        }
    }
    Ok(out)
}

/// Overflow-safe logistic of (eta + alpha).
pub fn node_probability(eta: f64, alpha: f64) -> f64 {
    let x = eta + alpha;
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability of each category given per-node traits and easiness values:
/// the product over visited nodes of pi^z (1-pi)^(1-z).
pub fn category_distribution(tree: &TreeSpec, eta: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
    if eta.len() != tree.n_nodes() || alpha.len() != tree.n_nodes() {
        return Err(Error::Input(format!(
            "expected {} node parameters, got eta[{}], alpha[{}]",
            tree.n_nodes(),
            eta.len(),
            alpha.len()
        )));
    }
    let pi: Vec<f64> = (0..tree.n_nodes())
        .map(|n| node_probability(eta[n], alpha[n]))
        .collect();
    let mut probs = Vec::with_capacity(tree.n_categories());
    for m in 0..tree.n_categories() {
        let mut p = 1.0;
        for n in 0..tree.n_nodes() {
            match tree.entry(m, n) {
                Some(1) => p *= pi[n],
                Some(_) => p *= 1.0 - pi[n],
                None => {}
            }
        }
        probs.push(p);
    }
    Ok(probs)
}
