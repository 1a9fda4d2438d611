//! Parameter-recovery check for the tree model on simulated data: with a
//! known generating process, the fitted item parameters must land near the
//! truth and the predicted traits must track the simulated ones.

use firtree::{fit, CovarianceStructure, FitOptions, SimConfig, TreeSpec};
use nalgebra::DMatrix;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn item_and_trait_recovery_on_simulated_data() {
    let tree = TreeSpec::by_name("fig3-linear").unwrap();
    let n_nodes = tree.n_nodes();
    let (n_raters, n_items) = (200, 10);

    // Item parameters spread over [-1.5, 1.5], deterministic in the seed.
    let alpha_true = DMatrix::from_fn(n_items, n_nodes, |j, k| {
        let idx = (j * n_nodes + k) as f64;
        -1.5 + 3.0 * idx / (n_items * n_nodes - 1) as f64
    });

    let cfg = SimConfig {
        n_raters,
        n_items,
        tree: tree.clone(),
        alpha_true: alpha_true.clone(),
        sigma_eta_true: DMatrix::identity(n_nodes, n_nodes),
        rt_log_mean: 7.0,
        rt_log_sd: 0.3,
        rt_midscale_boost: 0.4,
        seed: 20240817,
    };
    let (ratings, _times, truth) = firtree::simulate(&cfg).unwrap();

    let options = FitOptions {
        covariance: CovarianceStructure::Diagonal,
        ..FitOptions::default()
    };
    let fit = fit(&tree, &ratings, &options).unwrap();
    assert!(fit.converged, "tree fit did not converge");

    let mae: f64 = (0..n_items)
        .flat_map(|j| (0..n_nodes).map(move |k| (j, k)))
        .map(|(j, k)| (fit.alpha[(j, k)] - alpha_true[(j, k)]).abs())
        .sum::<f64>()
        / (n_items * n_nodes) as f64;
    assert!(mae < 0.3, "item parameter MAE too large: {mae:.3}");

    for k in 0..n_nodes {
        let est: Vec<f64> = (0..n_raters).map(|i| fit.eta_hat[(i, k)]).collect();
        let tru: Vec<f64> = (0..n_raters).map(|i| truth.eta[(i, k)]).collect();
        let r = pearson(&est, &tru);
        assert!(r > 0.5, "trait recovery too weak on node {k}: r = {r:.3}");
    }
}
