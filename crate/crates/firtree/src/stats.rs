//! Small statistical helpers: moments, type-7 quantiles, a right-continuous
//! empirical CDF, and the inverse normal CDF.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n-1 denominator; 0 for fewer than two points.
pub fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_var(xs).sqrt()
}

/// Type-7 quantile (linear interpolation of order statistics) on sorted data.
pub fn quantile_type7_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

pub fn quantile_type7(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_type7_sorted(&v, p)
}

pub fn median_type7(xs: &[f64]) -> f64 {
    quantile_type7(xs, 0.5)
}

/// Right-continuous empirical CDF: F(t) = #{x_k <= t} / n.
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(xs: &[f64]) -> Self {
        let mut sorted = xs.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ecdf { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        // partition_point gives the count of elements <= t on sorted data.
        let count = self.sorted.partition_point(|x| *x <= t);
        count as f64 / self.sorted.len() as f64
    }
}

/// Inverse standard normal CDF (Acklam's rational approximation, |error| < 1.2e-9).
pub fn norm_ppf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "norm_ppf requires p in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -norm_ppf(1.0 - p)
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn type7_median_odd_and_even() {
        assert_relative_eq!(median_type7(&[3.0, 1.0, 2.0]), 2.0);
        assert_relative_eq!(median_type7(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn type7_quartiles_match_reference() {
        // Reference values from the standard interpolation definition.
        let xs: Vec<f64> = (1..=5).map(|i| i as f64).collect();
        assert_relative_eq!(quantile_type7(&xs, 0.25), 2.0);
        assert_relative_eq!(quantile_type7(&xs, 0.75), 4.0);
        let ys = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile_type7(&ys, 0.25), 1.75);
    }

    #[test]
    fn ecdf_is_right_continuous() {
        let f = Ecdf::new(&[1.0, 2.0, 2.0, 3.0]);
        assert_relative_eq!(f.eval(0.5), 0.0);
        assert_relative_eq!(f.eval(1.0), 0.25);
        assert_relative_eq!(f.eval(2.0), 0.75);
        assert_relative_eq!(f.eval(1.9999), 0.25);
        assert_relative_eq!(f.eval(3.0), 1.0);
        assert_relative_eq!(f.eval(99.0), 1.0);
    }

    #[test]
    fn norm_ppf_reference_points() {
        assert_relative_eq!(norm_ppf(0.975), 1.959963984540054, epsilon = 1e-8);
        assert_relative_eq!(norm_ppf(0.5), 0.0, epsilon = 1e-9);
        assert_relative_eq!(norm_ppf(0.025), -1.959963984540054, epsilon = 1e-8);
        assert_relative_eq!(norm_ppf(0.995), 2.575829303548901, epsilon = 1e-8);
        assert_relative_eq!(norm_ppf(0.0001), -3.719016485455709, epsilon = 1e-7);
    }

    #[test]
    fn pearson_of_linear_data_is_one() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 7.0).collect();
        assert_relative_eq!(pearson(&x, &y), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sample_sd_constant_is_zero() {
        assert_relative_eq!(sample_sd(&[5.0, 5.0, 5.0]), 0.0);
    }
}
