//! The metric cone over the base space and the entropy-transport costs.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A point `[x, r]` of the cone; every point of radius zero is the vertex.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConePoint {
    pub base: Vec<f64>,
    pub radius: f64,
}

impl ConePoint {
    pub fn new(base: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(invalid("radius", format!("{radius} must be >= 0")));
        }
        Ok(Self { base, radius })
    }

    pub fn vertex(dim: usize) -> Self {
        Self { base: vec![0.0; dim], radius: 0.0 }
    }

    pub fn is_vertex(&self) -> bool {
        self.radius == 0.0
    }
}

impl PartialEq for ConePoint {
    fn eq(&self, other: &Self) -> bool {
        (self.is_vertex() && other.is_vertex()) || (self.radius == other.radius && self.base == other.base)
    }
}

/// Cone distance `sqrt(r^2 + s^2 - 2 r s cos(d ∧ a))` with angular cap `a`.
pub fn cone_dist_radii(a: f64, r: f64, s: f64, base_dist: f64) -> Result<f64> {
    if !(a > 0.0 && a <= PI) {
        return Err(invalid("a", format!("{a} not in (0, pi]")));
    }
    if !(base_dist >= 0.0) {
        return Err(invalid("base_dist", format!("{base_dist} must be >= 0")));
    }
    let c = base_dist.min(a).cos();
    Ok((r * r + s * s - 2.0 * r * s * c).max(0.0).sqrt())
}

pub fn cone_dist(a: f64, p0: &ConePoint, p1: &ConePoint, base_dist: f64) -> Result<f64> {
    cone_dist_radii(a, p0.radius, p1.radius, base_dist)
}

/// `g(z) = arccos(exp(-z^2/2))`, the base-distance transform behind GHK.
pub fn g_transform(z: f64) -> f64 {
    (-0.5 * z * z).exp().clamp(-1.0, 1.0).acos()
}

/// Which entropy-transport cost to build from a base distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LetKind {
    /// Gaussian Hellinger-Kantorovich: cost `d^2`.
    Ghk,
    /// Hellinger-Kantorovich: cost `-log cos^2(d ∧ pi/2)`, infinite from `pi/2` on.
    Hk,
}

pub fn let_cost(kind: LetKind, base_dist: f64) -> f64 {
    match kind {
        LetKind::Ghk => base_dist * base_dist,
        LetKind::Hk => {
            if base_dist >= FRAC_PI_2 {
                f64::INFINITY
            } else {
                let c = base_dist.cos();
                if c <= 0.0 {
                    f64::INFINITY
                } else {
                    -2.0 * c.ln()
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cone_examples() {
        let p = ConePoint::new(vec![0.0], 1.3).unwrap();
        assert_eq!(cone_dist(PI, &p, &p, 0.0).unwrap(), 0.0);
        assert!((cone_dist_radii(PI, 1.0, 1.0, 4.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((cone_dist(PI, &p, &ConePoint::vertex(1), 0.7).unwrap() - 1.3).abs() < 1e-15);
        assert!(cone_dist_radii(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(cone_dist_radii(4.0, 1.0, 1.0, 1.0).is_err());
        assert_eq!(ConePoint::new(vec![1.0], 0.0).unwrap(), ConePoint::vertex(1));
    }

    #[test]
    fn g_examples() {
        assert_eq!(g_transform(0.0), 0.0);
        assert!((g_transform(40.0) - FRAC_PI_2).abs() < 1e-15);
        assert!((-(g_transform(1.0).cos().powi(2)).ln() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cost_examples() {
        assert_eq!(let_cost(LetKind::Ghk, 0.0), 0.0);
        assert_eq!(let_cost(LetKind::Ghk, 3.0), 9.0);
        assert_eq!(let_cost(LetKind::Hk, FRAC_PI_2), f64::INFINITY);
        assert_eq!(let_cost(LetKind::Hk, 5.0), f64::INFINITY);
        assert_eq!(let_cost(LetKind::Hk, 0.0), 0.0);
        for k in 0..=400 {
            let z = k as f64 * 0.01;
            let v = let_cost(LetKind::Hk, g_transform(z));
            if z < 5.0 {
                assert!((v - z * z).abs() <= 1e-12 * (1.0 + z * z) * 1e3, "z={z}: {v}");
            }
        }
    }

    #[test]
    fn hk_cost_monotone() {
        let mut prev = 0.0;
        for k in 1..1570 {
            let v = let_cost(LetKind::Hk, k as f64 * 1e-3);
            assert!(v > prev);
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn cone_triangle_inequality(
            base in prop::array::uniform3(prop::collection::vec(-3.0f64..3.0, 2)),
            radii in prop::array::uniform3(0.0f64..3.0),
        ) {
            let d = |i: usize, j: usize| crate::measure::dist(&base[i], &base[j]);
            let c = |i: usize, j: usize| cone_dist_radii(PI, radii[i], radii[j], d(i, j)).unwrap();
            prop_assert!(c(0, 2) <= c(0, 1) + c(1, 2) + 1e-10);
            prop_assert!(c(0, 1) <= c(0, 2) + c(2, 1) + 1e-10);
        }

        #[test]
        fn hk_cost_inverts_g(z in 0.0f64..4.0) {
            let v = let_cost(LetKind::Hk, g_transform(z));
            prop_assert!((v - z * z).abs() <= 1e-12 * (1.0 + z * z) * 16.0);
        }
    }
}
