//! Four-parameter triangular fuzzy numbers.
//!
//! A value is described by support bounds l < c < r, a core c where the
//! membership peaks at 1, and an intensification exponent omega that bends the
//! two limbs: omega = 1 gives the classic piecewise-linear triangle, omega > 1
//! concentrates membership around the core, omega < 1 flattens it toward the
//! support ends.

use crate::error::{Error, Result};
use crate::quad;

/// Supports narrower than twice this are treated as crisp points.
pub const EPS_SUPPORT: f64 = 1e-6;
pub const OMEGA_MIN: f64 = 1e-3;
pub const OMEGA_MAX: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyNumber {
    l: f64,
    c: f64,
    r: f64,
    omega: f64,
    degenerate: bool,
}

/// Moments of the membership curve normalized to unit mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipMoments {
    /// Raw (unnormalized) integral of the membership over the support.
    pub mass: f64,
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    pub degenerate: bool,
}

impl FuzzyNumber {
    /// Builds a fuzzy number, clamping omega into [OMEGA_MIN, OMEGA_MAX] (with
    /// a warning) and flagging near-zero supports as degenerate.
    pub fn new(l: f64, c: f64, r: f64, omega: f64) -> Result<Self> {
        for (name, v) in [("l", l), ("c", c), ("r", r), ("omega", omega)] {
            if !v.is_finite() {
                return Err(Error::Domain(format!("fuzzy number parameter {name} is not finite")));
            }
        }
        if omega <= 0.0 {
            return Err(Error::Domain(format!("omega must be positive, got {omega}")));
        }
        let clamped = omega.clamp(OMEGA_MIN, OMEGA_MAX);
        if clamped != omega {
            log::warn!("omega {omega} outside [{OMEGA_MIN}, {OMEGA_MAX}], clamped to {clamped}");
        }
        let degenerate = r - l <= 2.0 * EPS_SUPPORT;
        if degenerate {
            if !(l <= c && c <= r) {
                return Err(Error::Domain(format!(
                    "degenerate support requires l <= c <= r, got ({l}, {c}, {r})"
                )));
            }
        } else if !(l < c && c < r) {
            return Err(Error::Domain(format!(
                "support must satisfy l < c < r, got ({l}, {c}, {r})"
            )));
        }
        Ok(FuzzyNumber { l, c, r, omega: clamped, degenerate })
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Membership grade at `y`. Zero outside [l, r], one at the core; the
    /// support endpoints take their limit value zero.
    pub fn membership(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::Domain(format!("membership argument must be finite, got {y}")));
        }
        Ok(self.grade(y))
    }

    fn grade(&self, y: f64) -> f64 {
        if self.degenerate {
            // Crisp point: full grade on the collapsed support.
            return if y >= self.l && y <= self.r { 1.0 } else { 0.0 };
        }
        if y < self.l || y > self.r {
            0.0
        } else if y == self.c {
            1.0
        } else if y < self.c {
            if y == self.l {
                return 0.0;
            }
            let ratio = (self.c - y) / (y - self.l);
            1.0 / (1.0 + ratio.powf(self.omega))
        } else {
            // (r - y) = 0 gives ratio 0, 0^(-omega) = inf, grade 0: the right
            // endpoint needs no special case.
            let ratio = (self.r - y) / (y - self.c);
            1.0 / (1.0 + ratio.powf(-self.omega))
        }
    }

    /// Mass, mean, and variance of the standardized (unit-mass) membership,
    /// integrated limb by limb so the kink at the core never sits inside a
    /// quadrature panel.
    pub fn moments(&self) -> MembershipMoments {
        if self.degenerate {
            return MembershipMoments {
                mass: EPS_SUPPORT,
                mean: self.c,
                second_moment: self.c * self.c,
                variance: 0.0,
                degenerate: true,
            };
        }
        let left = quad::integrate_moments(self.l, self.c, |y| self.grade(y));
        let right = quad::integrate_moments(self.c, self.r, |y| self.grade(y));
        let mass = left[0] + right[0];
        let mean = (left[1] + right[1]) / mass;
        let second = (left[2] + right[2]) / mass;
        MembershipMoments {
            mass,
            mean,
            second_moment: second,
            variance: (second - mean * mean).max(0.0),
            degenerate: false,
        }
    }

    /// Maps the number through y -> a + b*y (b > 0); omega is unchanged.
    pub fn scale_affine(&self, a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Domain("affine coefficients must be finite".into()));
        }
        if b <= 0.0 {
            return Err(Error::Domain(format!("affine slope must be positive, got {b}")));
        }
        FuzzyNumber::new(a + b * self.l, a + b * self.c, a + b * self.r, self.omega)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tri(l: f64, c: f64, r: f64, omega: f64) -> FuzzyNumber {
        FuzzyNumber::new(l, c, r, omega).unwrap()
    }

    /// Brute-force trapezoid moments on a 100k grid.
    fn trapezoid_moments(f: &FuzzyNumber, n: usize) -> (f64, f64, f64) {
        let (a, b) = (f.l(), f.r());
        let h = (b - a) / n as f64;
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for k in 0..=n {
            let y = a + h * k as f64;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let g = w * f.membership(y).unwrap();
            s0 += g;
            s1 += g * y;
            s2 += g * y * y;
        }
        (s0 * h, s1 * h / (s0 * h), s2 * h / (s0 * h))
    }

    #[test]
    fn core_and_endpoints() {
        let f = tri(0.0, 1.0, 2.0, 1.0);
        assert_eq!(f.membership(1.0).unwrap(), 1.0);
        assert_eq!(f.membership(0.0).unwrap(), 0.0);
        assert_eq!(f.membership(2.0).unwrap(), 0.0);
        assert_eq!(f.membership(-3.0).unwrap(), 0.0);
        assert_eq!(f.membership(2.5).unwrap(), 0.0);
    }

    #[test]
    fn linear_case_matches_triangle() {
        let f = tri(0.0, 1.0, 2.0, 1.0);
        assert_relative_eq!(f.membership(0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(f.membership(1.5).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(f.membership(0.25).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn sharpened_limb_value() {
        // ratio (1-0.25)/(0.25-0) = 3, grade = 1/(1+9).
        let f = tri(0.0, 1.0, 2.0, 2.0);
        assert_relative_eq!(f.membership(0.25).unwrap(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_argument_is_domain_error() {
        let f = tri(0.0, 1.0, 2.0, 1.0);
        assert!(f.membership(f64::NAN).is_err());
        assert!(f.membership(f64::INFINITY).is_err());
    }

    #[test]
    fn invalid_support_rejected() {
        assert!(FuzzyNumber::new(1.0, 0.5, 2.0, 1.0).is_err());
        assert!(FuzzyNumber::new(0.0, 2.0, 1.0, 1.0).is_err());
        assert!(FuzzyNumber::new(0.0, 1.0, 2.0, -1.0).is_err());
        assert!(FuzzyNumber::new(f64::NAN, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn omega_is_clamped() {
        let f = tri(0.0, 1.0, 2.0, 1e9);
        assert_eq!(f.omega(), OMEGA_MAX);
        let f = tri(0.0, 1.0, 2.0, 1e-9);
        assert_eq!(f.omega(), OMEGA_MIN);
    }

    #[test]
    fn degenerate_support_is_point_mass() {
        let f = tri(1.0, 1.0, 1.0 + 1e-7, 1.0);
        assert!(f.is_degenerate());
        assert_eq!(f.membership(1.0).unwrap(), 1.0);
        assert_eq!(f.membership(1.1).unwrap(), 0.0);
        let m = f.moments();
        assert!(m.degenerate);
        assert_relative_eq!(m.mean, 1.0);
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.mass, EPS_SUPPORT);
    }

    #[test]
    fn triangle_moments_closed_form() {
        // omega = 1: mass = (r-l)/2, mean = (l+c+r)/3.
        let m = tri(0.0, 1.0, 2.0, 1.0).moments();
        assert_relative_eq!(m.mass, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.mean, 1.0, epsilon = 1e-12);

        let m = tri(0.0, 1.0, 3.0, 1.0).moments();
        assert_relative_eq!(m.mass, 1.5, epsilon = 1e-12);
        assert_relative_eq!(m.mean, 4.0 / 3.0, epsilon = 1e-12);
        // Triangle variance: (l^2+c^2+r^2 - lc - lr - cr)/18.
        assert_relative_eq!(m.variance, 7.0 / 18.0, epsilon = 1e-10);
    }

    #[test]
    fn symmetric_mean_for_any_omega() {
        let m = tri(0.0, 1.0, 2.0, 0.5).moments();
        assert_relative_eq!(m.mean, 1.0, epsilon = 1e-10);
        let m = tri(0.0, 1.0, 2.0, 1.7).moments();
        assert_relative_eq!(m.mean, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn moments_match_brute_force() {
        let cases = [
            tri(0.0, 1.0, 2.0, 1.0),
            tri(0.0, 1.0, 3.0, 0.5),
            tri(-2.0, 0.3, 0.9, 1.6),
            tri(1.0, 2.5, 4.0, 0.25),
            tri(1.0, 1.2, 4.0, 1.9),
        ];
        for f in cases {
            let m = f.moments();
            let (mass, mean, second) = trapezoid_moments(&f, 100_000);
            assert_relative_eq!(m.mass, mass, max_relative = 1e-6);
            assert_relative_eq!(m.mean, mean, max_relative = 1e-6);
            assert_relative_eq!(m.second_moment, second, max_relative = 1e-6);
        }
    }

    #[test]
    fn scale_affine_maps_parameters() {
        let f = tri(0.1514, 0.5, 0.8486, 1.0).scale_affine(1.0, 3.0).unwrap();
        assert_relative_eq!(f.l(), 1.4542, epsilon = 1e-12);
        assert_relative_eq!(f.c(), 2.5, epsilon = 1e-12);
        assert_relative_eq!(f.r(), 3.5458, epsilon = 1e-12);
        assert_eq!(f.omega(), 1.0);
        assert!(tri(0.0, 1.0, 2.0, 1.0).scale_affine(1.0, 0.0).is_err());
        assert!(tri(0.0, 1.0, 2.0, 1.0).scale_affine(1.0, -2.0).is_err());
    }

    #[test]
    fn affine_commutes_with_moments() {
        let f = tri(0.2, 0.9, 1.4, 0.8);
        let m = f.moments();
        let g = f.scale_affine(2.0, 3.0).unwrap().moments();
        assert_relative_eq!(g.mean, 2.0 + 3.0 * m.mean, epsilon = 1e-10);
        assert_relative_eq!(g.variance, 9.0 * m.variance, max_relative = 1e-8);
    }

    proptest! {
        #[test]
        fn membership_stays_in_unit_interval(
            l in -5.0..5.0f64,
            dc in 0.01..4.0f64,
            dr in 0.01..4.0f64,
            omega in 0.25..2.0f64,
            t in 0.0..1.0f64,
        ) {
            let f = tri(l, l + dc, l + dc + dr, omega);
            let y = f.l() + t * (f.r() - f.l());
            let g = f.membership(y).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
        }

        #[test]
        fn membership_monotone_up_then_down(
            l in -5.0..5.0f64,
            dc in 0.05..4.0f64,
            dr in 0.05..4.0f64,
            omega in 0.25..2.0f64,
        ) {
            let f = tri(l, l + dc, l + dc + dr, omega);
            let grid = 200;
            let mut prev = 0.0;
            for k in 0..=grid {
                let y = f.l() + (f.c() - f.l()) * k as f64 / grid as f64;
                let g = f.membership(y).unwrap();
                prop_assert!(g + 1e-12 >= prev);
                prev = g;
            }
            prev = 1.0;
            for k in 0..=grid {
                let y = f.c() + (f.r() - f.c()) * k as f64 / grid as f64;
                let g = f.membership(y).unwrap();
                prop_assert!(g <= prev + 1e-12);
                prev = g;
            }
        }

        #[test]
        fn unit_omega_equals_linear_triangle(
            l in -5.0..5.0f64,
            dc in 0.01..4.0f64,
            dr in 0.01..4.0f64,
            t in 0.0..1.0f64,
        ) {
            let f = tri(l, l + dc, l + dc + dr, 1.0);
            let y = f.l() + t * (f.r() - f.l());
            let linear = if y <= f.c() {
                (y - f.l()) / (f.c() - f.l())
            } else {
                (f.r() - y) / (f.r() - f.c())
            };
            prop_assert!((f.membership(y).unwrap() - linear).abs() < 1e-12);
        }
    }
}
