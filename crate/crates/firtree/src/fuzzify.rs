//! From fitted tree models to fuzzy ratings.
//!
//! Each rater-item cell gets a model-implied category distribution; its mode
//! location and spread determine a triangular fuzzy number on the unit
//! interval, which is mapped back to the 1..M rating scale. Response times
//! set the intensification exponent through their within-item ECDF rank:
//! faster-than-median answers sharpen the number, slower ones flatten it.

use crate::error::{Error, Result};
use crate::fuzzy::FuzzyNumber;
use crate::irtree::{category_distribution, IrtreeFit};
use crate::stats::{self, Ecdf};
use crate::tree::TreeSpec;

/// Response times in positive time units, one row per rater, NA allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTimeMatrix {
    n_raters: usize,
    n_items: usize,
    values: Vec<Option<f64>>,
}

impl ResponseTimeMatrix {
    pub fn new(n_raters: usize, n_items: usize, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != n_raters * n_items {
            return Err(Error::Input(format!(
                "time matrix has {} entries, expected {} x {}",
                values.len(),
                n_raters,
                n_items
            )));
        }
        for v in values.iter().flatten() {
            if !v.is_finite() || *v <= 0.0 {
                return Err(Error::Input(format!("response times must be positive, got {v}")));
            }
        }
        Ok(ResponseTimeMatrix { n_raters, n_items, values })
    }

    pub fn n_raters(&self) -> usize {
        self.n_raters
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn get(&self, rater: usize, item: usize) -> Option<f64> {
        self.values[rater * self.n_items + item]
    }

    pub fn set_na(&mut self, rater: usize, item: usize) {
        self.values[rater * self.n_items + item] = None;
    }

    pub fn column(&self, item: usize) -> Vec<Option<f64>> {
        (0..self.n_raters).map(|i| self.get(i, item)).collect()
    }
}

/// Core location and spread of a category distribution on the unit interval:
/// categories sit at knots 0, 1/(M-1), ..., 1.
pub fn mode_and_precision(probs: &[f64]) -> Result<(f64, f64)> {
    if probs.len() < 2 {
        return Err(Error::Input("need at least two category probabilities".into()));
    }
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > 1e-8 {
        return Err(Error::Input("category probabilities must be nonnegative and sum to 1".into()));
    }
    let m = probs.len();
    let knot = |k: usize| k as f64 / (m - 1) as f64;
    let c: f64 = probs.iter().enumerate().map(|(k, p)| knot(k) * p).sum();
    let s: f64 = probs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let d = knot(k) - c;
            d * d * p
        })
        .sum();
    Ok((c, s))
}

/// Mean of the implied membership curve, computed before the support bounds.
pub fn membership_mean(c: f64, s: f64) -> f64 {
    (1.0 + c * s) / (2.0 + s)
}

/// Unit-interval support bounds around a core, with the fallback and clipping
/// rules for degenerate or out-of-range configurations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitBounds {
    pub l: f64,
    pub c: f64,
    pub r: f64,
    /// True when the primary width formula failed and the symmetric 0.01
    /// half-width fallback was used.
    pub fell_back: bool,
}

pub fn bounds(c: f64, s: f64, mu: f64) -> UnitBounds {
    let radicand = 3.5 * s - 3.0 * (c - mu) * (c - mu);
    let mut fell_back = true;
    let (mut l, mut r) = (c - 0.01, c + 0.01);
    if radicand >= 1e-10 {
        let h1 = radicand.sqrt();
        let h2 = 0.5 * (h1 + 3.0 * c - 3.0 * mu);
        let (cl, cr) = (c - h2, c - h2 + h1);
        // Keep the primary solution only when it brackets the core strictly.
        if cl < c && c < cr {
            l = cl;
            r = cr;
            fell_back = false;
        }
    }
    l = l.max(0.0);
    r = r.min(1.0);
    // Clipping may land the core on a bound; only then nudge it one tenth of
    // the width inward so l < c < r survives.
    let tick = 0.1 * (r - l);
    let c_adj = if c <= l {
        l + tick
    } else if c >= r {
        r - tick
    } else {
        c
    };
    UnitBounds { l, c: c_adj, r, fell_back }
}

/// Intensification exponents for one item from its response times:
/// omega = F(median) - F(t) + 1 under the item's right-continuous ECDF.
/// NA times get omega = 1; so does everyone when fewer than two times exist.
pub fn intensification(times: &[Option<f64>]) -> Vec<f64> {
    let observed: Vec<f64> = times.iter().flatten().copied().collect();
    if observed.len() < 2 {
        log::warn!(
            "fewer than two response times for an item; intensification defaults to 1"
        );
        return vec![1.0; times.len()];
    }
    let ecdf = Ecdf::new(&observed);
    let at_median = ecdf.eval(stats::median_type7(&observed));
    times
        .iter()
        .map(|t| match t {
            Some(t) => at_median - ecdf.eval(*t) + 1.0,
            None => 1.0,
        })
        .collect()
}

/// Marks response times further than two standard deviations from their
/// item's mean as NA. One pass; the mean and sd come from the input.
pub fn trim_times(times: &ResponseTimeMatrix) -> ResponseTimeMatrix {
    let mut out = times.clone();
    for j in 0..times.n_items() {
        let observed: Vec<f64> = times.column(j).into_iter().flatten().collect();
        if observed.len() < 2 {
            continue;
        }
        let m = stats::mean(&observed);
        let sd = stats::sample_sd(&observed);
        for i in 0..times.n_raters() {
            if let Some(t) = times.get(i, j) {
                if (t - m).abs() > 2.0 * sd {
                    out.set_na(i, j);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WMode {
    /// Exponents from the response-time ECDF rule.
    EcdfMedian,
    /// Sensitivity switch: every exponent forced to one.
    AllOnes,
}

/// Fuzzy ratings for every cell with an observed response time, plus the
/// per-rater parameterwise mean composite.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyDataset {
    n_raters: usize,
    n_items: usize,
    l: Vec<Option<f64>>,
    c: Vec<Option<f64>>,
    r: Vec<Option<f64>>,
    w: Vec<Option<f64>>,
    composite: Vec<Option<FuzzyNumber>>,
}

impl FuzzyDataset {
    pub fn n_raters(&self) -> usize {
        self.n_raters
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn l(&self, rater: usize, item: usize) -> Option<f64> {
        self.l[rater * self.n_items + item]
    }

    pub fn c(&self, rater: usize, item: usize) -> Option<f64> {
        self.c[rater * self.n_items + item]
    }

    pub fn r(&self, rater: usize, item: usize) -> Option<f64> {
        self.r[rater * self.n_items + item]
    }

    pub fn w(&self, rater: usize, item: usize) -> Option<f64> {
        self.w[rater * self.n_items + item]
    }

    pub fn cell(&self, rater: usize, item: usize) -> Option<FuzzyNumber> {
        let idx = rater * self.n_items + item;
        match (self.l[idx], self.c[idx], self.r[idx], self.w[idx]) {
            (Some(l), Some(c), Some(r), Some(w)) => {
                Some(FuzzyNumber::new(l, c, r, w).expect("stored cell is valid"))
            }
            _ => None,
        }
    }

    pub fn composite(&self, rater: usize) -> Option<FuzzyNumber> {
        self.composite[rater]
    }

    pub fn composites(&self) -> &[Option<FuzzyNumber>] {
        &self.composite
    }
}

/// Builds the fuzzy dataset from a fitted tree model and response times. The
/// time matrix's NA pattern decides which cells exist.
pub fn fuzzify_all(
    fit: &IrtreeFit,
    tree: &TreeSpec,
    times: &ResponseTimeMatrix,
    w_mode: WMode,
) -> Result<FuzzyDataset> {
    let n_raters = times.n_raters();
    let n_items = times.n_items();
    if fit.eta_hat.nrows() != n_raters {
        return Err(Error::Input(format!(
            "fit covers {} raters but times have {}",
            fit.eta_hat.nrows(),
            n_raters
        )));
    }
    if fit.alpha.nrows() != n_items {
        return Err(Error::Input(format!(
            "fit covers {} items but times have {}",
            fit.alpha.nrows(),
            n_items
        )));
    }
    if tree.n_nodes() != fit.alpha.ncols() {
        return Err(Error::Input("tree node count does not match the fit".into()));
    }
    let m = tree.n_categories();
    let scale = (m - 1) as f64;

    let mut cells = FuzzyDataset {
        n_raters,
        n_items,
        l: vec![None; n_raters * n_items],
        c: vec![None; n_raters * n_items],
        r: vec![None; n_raters * n_items],
        w: vec![None; n_raters * n_items],
        composite: vec![None; n_raters],
    };

    for j in 0..n_items {
        let omega = match w_mode {
            WMode::AllOnes => vec![1.0; n_raters],
            WMode::EcdfMedian => intensification(&times.column(j)),
        };
        let alpha: Vec<f64> = (0..tree.n_nodes()).map(|n| fit.alpha[(j, n)]).collect();
        for i in 0..n_raters {
            if times.get(i, j).is_none() {
                continue;
            }
            let eta: Vec<f64> = (0..tree.n_nodes()).map(|n| fit.eta_hat[(i, n)]).collect();
            let probs = category_distribution(tree, &eta, &alpha)?;
            let (c, s) = mode_and_precision(&probs)?;
            let mu = membership_mean(c, s);
            let b = bounds(c, s, mu);
            let idx = i * n_items + j;
            cells.l[idx] = Some(1.0 + scale * b.l);
            cells.c[idx] = Some(1.0 + scale * b.c);
            cells.r[idx] = Some(1.0 + scale * b.r);
            cells.w[idx] = Some(omega[i]);
        }
    }

    for i in 0..n_raters {
        let mut acc = [0.0; 4];
        let mut count = 0usize;
        for j in 0..n_items {
            let idx = i * n_items + j;
            if let (Some(l), Some(c), Some(r), Some(w)) =
                (cells.l[idx], cells.c[idx], cells.r[idx], cells.w[idx])
            {
                acc[0] += l;
                acc[1] += c;
                acc[2] += r;
                acc[3] += w;
                count += 1;
            }
        }
        if count > 0 {
            let k = count as f64;
            cells.composite[i] =
                Some(FuzzyNumber::new(acc[0] / k, acc[1] / k, acc[2] / k, acc[3] / k)?);
        }
    }

    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_four_categories_mode_and_precision() {
        let (c, s) = mode_and_precision(&[0.25; 4]).unwrap();
        assert_relative_eq!(c, 0.5, epsilon = 1e-15);
        assert_relative_eq!(s, 5.0 / 36.0, epsilon = 1e-15);
    }

    #[test]
    fn mode_is_probability_weighted_knot_mean() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        let (c, _) = mode_and_precision(&probs).unwrap();
        let brute: f64 = probs
            .iter()
            .enumerate()
            .map(|(k, p)| p * k as f64 / 3.0)
            .sum();
        assert_relative_eq!(c, brute, epsilon = 1e-12);
        assert!(mode_and_precision(&[0.5, 0.6]).is_err());
        assert!(mode_and_precision(&[1.0]).is_err());
    }

    #[test]
    fn membership_mean_examples() {
        assert_relative_eq!(membership_mean(0.5, 5.0 / 36.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(membership_mean(0.5, 0.42), 0.5, epsilon = 1e-15);
        assert_relative_eq!(membership_mean(0.0, 0.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn bounds_regular_case() {
        let b = bounds(0.5, 5.0 / 36.0, 0.5);
        assert!(!b.fell_back);
        assert_relative_eq!(b.l, 0.15139, epsilon = 1e-4);
        assert_relative_eq!(b.r, 0.84861, epsilon = 1e-4);
        assert_relative_eq!(b.c, 0.5, epsilon = 1e-15);
        assert_relative_eq!(b.r - b.l, (3.5 * 5.0 / 36.0f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn bounds_zero_spread_falls_back() {
        let b = bounds(0.5, 0.0, 0.5);
        assert!(b.fell_back);
        assert_relative_eq!(b.l, 0.49, epsilon = 1e-12);
        assert_relative_eq!(b.r, 0.51, epsilon = 1e-12);
        assert_relative_eq!(b.c, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn bounds_clip_and_nudge_at_the_edge() {
        // Radicand 3.5*0 - 3*0.25 < 0: fallback around c = 0, clipped to [0, 0.01].
        let b = bounds(0.0, 0.0, 0.5);
        assert!(b.fell_back);
        assert_relative_eq!(b.l, 0.0, epsilon = 1e-15);
        assert_relative_eq!(b.r, 0.01, epsilon = 1e-12);
        assert!(b.l < b.c && b.c < b.r);
    }

    #[test]
    fn bounds_always_bracket_core() {
        for &(c, s, mu) in &[
            (0.5, 5.0 / 36.0, 0.5),
            (0.9, 0.01, 0.85),
            (0.05, 0.2, 0.4),
            (1.0, 0.0, 0.5),
            (0.0, 0.25, 0.5),
            (0.97, 0.22, 0.5),
        ] {
            let b = bounds(c, s, mu);
            assert!(b.l < b.c && b.c < b.r, "failed for ({c}, {s}, {mu}): {b:?}");
            assert!(b.l >= 0.0 && b.r <= 1.0);
        }
    }

    #[test]
    fn intensification_rank_rule() {
        let times: Vec<Option<f64>> = [5.0, 1.0, 3.0, 2.0, 4.0].iter().map(|t| Some(*t)).collect();
        let w = intensification(&times);
        // K = 5, median 3.0: F(median) = 3/5.
        assert_eq!(w[2], 1.0); // the median rater, exactly
        assert_relative_eq!(w[0], 0.6 - 1.0 + 1.0, epsilon = 1e-15); // slowest: F = 1
        assert_relative_eq!(w[1], 0.6 - 0.2 + 1.0, epsilon = 1e-15); // fastest: F = 1/K
        assert!(w.iter().all(|v| 0.0 < *v && *v < 2.0));
    }

    #[test]
    fn intensification_handles_na_and_short_input() {
        let times = vec![Some(1.0), None, Some(3.0), Some(2.0)];
        let w = intensification(&times);
        assert_eq!(w[1], 1.0);
        assert_eq!(w.len(), 4);

        let w = intensification(&[Some(1.0), None]);
        assert_eq!(w, vec![1.0, 1.0]);
        let w = intensification(&[None, None]);
        assert_eq!(w, vec![1.0, 1.0]);
    }

    #[test]
    fn intensification_nonincreasing_in_time() {
        let times: Vec<Option<f64>> =
            [3.2, 1.1, 9.0, 2.5, 2.5, 7.7, 0.4, 5.0].iter().map(|t| Some(*t)).collect();
        let w = intensification(&times);
        let mut pairs: Vec<(f64, f64)> = times
            .iter()
            .zip(&w)
            .map(|(t, w)| (t.unwrap(), *w))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for win in pairs.windows(2) {
            assert!(win[1].1 <= win[0].1 + 1e-12);
            if win[1].0 == win[0].0 {
                assert_eq!(win[1].1, win[0].1); // ties share a rank
            }
        }
    }

    #[test]
    fn trim_drops_only_outliers() {
        // A single extreme point can only exceed 2 sd once n is large enough:
        // its deviation is capped at (n-1)/sqrt(n) sample sds.
        let mut values: Vec<Option<f64>> =
            [95.0, 98.0, 100.0, 102.0, 105.0, 97.0, 103.0, 99.0, 101.0]
                .iter()
                .map(|t| Some(*t))
                .collect();
        values.push(Some(5000.0));
        let times = ResponseTimeMatrix::new(10, 1, values).unwrap();
        let trimmed = trim_times(&times);
        assert_eq!(trimmed.get(9, 0), None);
        for i in 0..9 {
            assert!(trimmed.get(i, 0).is_some());
        }
    }

    #[test]
    fn trim_keeps_constant_and_tiny_columns() {
        let times = ResponseTimeMatrix::new(
            3,
            2,
            vec![Some(7.0), Some(1.0), Some(7.0), None, Some(7.0), None],
        )
        .unwrap();
        let trimmed = trim_times(&times);
        for i in 0..3 {
            assert_eq!(trimmed.get(i, 0), Some(7.0));
        }
        assert_eq!(trimmed.get(0, 1), Some(1.0));
    }

    #[test]
    fn time_matrix_rejects_nonpositive() {
        assert!(ResponseTimeMatrix::new(1, 2, vec![Some(1.0), Some(0.0)]).is_err());
        assert!(ResponseTimeMatrix::new(1, 2, vec![Some(-1.0), Some(1.0)]).is_err());
        assert!(ResponseTimeMatrix::new(1, 2, vec![Some(f64::NAN), Some(1.0)]).is_err());
        assert!(ResponseTimeMatrix::new(2, 2, vec![Some(1.0); 3]).is_err());
    }
}
