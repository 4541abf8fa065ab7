//! Finite nonnegative measures with finitely many atoms in R^d.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Bit-level key of a point; `-0.0` and `0.0` map to the same key.
pub(crate) fn point_key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|&v| if v == 0.0 { 0u64 } else { v.to_bits() }).collect()
}

/// A finite nonnegative measure `sum_i w_i delta_{x_i}` on R^d.
///
/// Atoms sharing identical coordinates are merged on construction, so the atom
/// mass `mu_x` at a support point is always the weight stored there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<RawMeasure> for DiscreteMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        DiscreteMeasure::new(raw.dim, raw.points, raw.weights)
    }
}

impl From<DiscreteMeasure> for RawMeasure {
    fn from(m: DiscreteMeasure) -> Self {
        RawMeasure { dim: m.dim, points: m.points, weights: m.weights }
    }
}

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dim must be positive".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!("{} points but {} weights", points.len(), weights.len())));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidMeasure(format!("point {i} has {} coordinates, expected {dim}", p.len())));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMeasure(format!("point {i} is not finite")));
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidMeasure(format!("weight {i} = {w} is not a finite nonnegative number")));
            }
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(points.len());
        let mut merged_points: Vec<Vec<f64>> = Vec::with_capacity(points.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(points.len());
        for (p, w) in points.into_iter().zip(weights) {
            match index.get(&point_key(&p)) {
                Some(&k) => merged_weights[k] += w,
                None => {
                    index.insert(point_key(&p), merged_points.len());
                    merged_points.push(p);
                    merged_weights.push(w);
                }
            }
        }
        Ok(Self { dim, points: merged_points, weights: merged_weights })
    }

    /// The zero measure on R^dim.
    pub fn zero(dim: usize) -> Self {
        Self { dim: dim.max(1), points: Vec::new(), weights: Vec::new() }
    }

    /// `mass * delta_point`.
    pub fn dirac(point: Vec<f64>, mass: f64) -> Result<Self> {
        Self::new(point.len(), vec![point], vec![mass])
    }

    /// Atoms on the real line.
    pub fn on_line(xs: &[f64], weights: &[f64]) -> Result<Self> {
        Self::new(1, xs.iter().map(|&x| vec![x]).collect(), weights.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(Vec::as_slice).zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Mass of the atom sitting exactly at `x` (zero off the support).
    pub fn atom_mass(&self, x: &[f64]) -> f64 {
        let key = point_key(x);
        self.points.iter().position(|p| point_key(p) == key).map_or(0.0, |i| self.weights[i])
    }

    /// Copy without zero-weight atoms.
    pub fn without_null_atoms(&self) -> Self {
        let (points, weights) = self.atoms().filter(|&(_, w)| w > 0.0).map(|(p, w)| (p.to_vec(), w)).unzip();
        Self { dim: self.dim, points, weights }
    }

    /// `c * mu`.
    pub fn scale(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(invalid("c", format!("scale factor {c} must be >= 0")));
        }
        Ok(Self { dim: self.dim, points: self.points.clone(), weights: self.weights.iter().map(|w| w * c).collect() })
    }

    /// Replaces the weights, keeping the support.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, self.points.clone(), weights)
    }

    /// Sum of two measures on the same space.
    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        let mut points = self.points.clone();
        points.extend(other.points.iter().cloned());
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        Self::new(self.dim, points, weights)
    }

    /// `int f dmu`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.atoms().map(|(p, w)| w * f(p)).sum()
    }

    /// Image of the measure under the dilation `x -> lambda x`.
    pub fn dilate(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("{lambda} must be > 0")));
        }
        Ok(Self {
            dim: self.dim,
            points: self.points.iter().map(|p| p.iter().map(|v| v * lambda).collect()).collect(),
            weights: self.weights.clone(),
        })
    }

    /// Image measure `map_# mu`; colliding atoms are merged.
    pub fn pushforward(&self, map: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let points: Vec<Vec<f64>> = self.points.iter().map(|p| map(p)).collect();
        let dim = points.first().map_or(self.dim, Vec::len);
        Self::new(dim, points, self.weights.clone())
    }

    /// Splits `mu` into its normalized shape and total mass.
    pub fn decompose(&self) -> MassDecomposition {
        let mass = self.total_mass();
        if mass == 0.0 {
            return MassDecomposition { shape: None, mass: 0.0, dim: self.dim };
        }
        let shape = Self {
            dim: self.dim,
            points: self.points.clone(),
            weights: self.weights.iter().map(|w| w / mass).collect(),
        };
        MassDecomposition { shape: Some(shape), mass, dim: self.dim }
    }

    /// First moment `int x dmu(x)`.
    pub fn first_moment(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (p, w) in self.atoms() {
            for (acc, v) in m.iter_mut().zip(p) {
                *acc += w * v;
            }
        }
        m
    }
}

/// Pair `(N(mu), mu(M))`; `shape` is `None` exactly for the zero measure.
#[derive(Debug, Clone, PartialEq)]
pub struct MassDecomposition {
    pub shape: Option<DiscreteMeasure>,
    pub mass: f64,
    dim: usize,
}

impl MassDecomposition {
    pub fn is_zero(&self) -> bool {
        self.shape.is_none()
    }

    /// Reassembles `mass * shape`.
    ///
    /// The original weights are recovered from the shape; for weights that are
    /// exact binary fractions of the mass this is bit-exact.
    pub fn recompose(&self) -> DiscreteMeasure {
        match &self.shape {
            None => DiscreteMeasure::zero(self.dim),
            Some(s) => DiscreteMeasure {
                dim: s.dim,
                points: s.points.clone(),
                weights: s.weights.iter().map(|w| w * self.mass).collect(),
            },
        }
    }
}

pub(crate) fn check_dims(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(a.dim, b.dim));
    }
    Ok(())
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

pub fn total_mass(mu: &DiscreteMeasure) -> f64 {
    mu.total_mass()
}

/// Squared Hellinger distance `sum_x (sqrt(w0(x)) - sqrt(w1(x)))^2` over the
/// union of the supports.
pub fn hellinger_sq(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<f64> {
    check_dims(mu0, mu1)?;
    let mut other: HashMap<Vec<u64>, f64> = mu1.atoms().map(|(p, w)| (point_key(p), w)).collect();
    let mut acc = 0.0;
    for (p, w0) in mu0.atoms() {
        let w1 = other.remove(&point_key(p)).unwrap_or(0.0);
        let d = w0.sqrt() - w1.sqrt();
        acc += d * d;
    }
    acc += other.values().sum::<f64>();
    Ok(acc)
}

/// Pairwise Euclidean distances between the supports.
pub fn distance_matrix(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Vec<Vec<f64>> {
    mu0.points().iter().map(|x| mu1.points().iter().map(|y| dist(x, y)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_mass_basics() {
        assert_eq!(DiscreteMeasure::zero(2).total_mass(), 0.0);
        assert_eq!(DiscreteMeasure::dirac(vec![1.0], 3.0).unwrap().total_mass(), 3.0);
        let m = DiscreteMeasure::on_line(&[0.5, 0.5], &[1.0, 2.0]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.total_mass(), 3.0);
    }

    #[test]
    fn negative_zero_merges_with_zero() {
        let m = DiscreteMeasure::on_line(&[0.0, -0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.atom_mass(&[0.0]), 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(DiscreteMeasure::new(1, vec![vec![0.0]], vec![-1.0]).is_err());
        assert!(DiscreteMeasure::new(2, vec![vec![0.0]], vec![1.0]).is_err());
        assert!(DiscreteMeasure::new(1, vec![vec![0.0]], vec![]).is_err());
        assert!(DiscreteMeasure::new(1, vec![vec![f64::NAN]], vec![1.0]).is_err());
    }

    #[test]
    fn hellinger_examples() {
        let x = DiscreteMeasure::dirac(vec![0.0, 1.0], 2.5).unwrap();
        assert_eq!(hellinger_sq(&x, &x).unwrap(), 0.0);
        let a = DiscreteMeasure::dirac(vec![0.0], 4.0).unwrap();
        let b = DiscreteMeasure::dirac(vec![0.0], 1.0).unwrap();
        assert_eq!(hellinger_sq(&a, &b).unwrap(), 1.0);
        let c = DiscreteMeasure::dirac(vec![1.0], 1.5).unwrap();
        assert!((hellinger_sq(&a, &c).unwrap() - 5.5).abs() < 1e-15);
        let d2 = DiscreteMeasure::dirac(vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(hellinger_sq(&a, &d2), Err(Error::DimensionMismatch(1, 2))));
    }

    #[test]
    fn dilate_and_pushforward() {
        let m = DiscreteMeasure::on_line(&[1.0, -2.0], &[0.5, 1.5]).unwrap();
        let d = m.dilate(3.0).unwrap();
        assert_eq!(d.points(), &[vec![3.0], vec![-6.0]]);
        assert_eq!(d.total_mass(), m.total_mass());
        assert!(m.dilate(0.0).is_err());
        assert_eq!(m.pushforward(|x| x.to_vec()).unwrap(), m);
        let c = m.pushforward(|_| vec![7.0]).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.total_mass(), 2.0);
    }

    #[test]
    fn decomposition() {
        let m = DiscreteMeasure::dirac(vec![1.0, 2.0], 3.0).unwrap();
        let dec = m.decompose();
        assert_eq!(dec.mass, 3.0);
        assert_eq!(dec.shape.as_ref().unwrap().weights(), &[1.0]);
        assert_eq!(dec.recompose(), m);
        let z = DiscreteMeasure::zero(2).decompose();
        assert!(z.is_zero());
        assert_eq!(z.mass, 0.0);
        assert_eq!(z.recompose(), DiscreteMeasure::zero(2));
    }

    #[test]
    fn json_roundtrip_merges_atoms() {
        let json = r#"{"dim":1,"points":[[0.0],[0.0],[1.0]],"weights":[1.0,2.0,0.5]}"#;
        let m: DiscreteMeasure = serde_json::from_str(json).unwrap();
        assert_eq!(m.len(), 2);
        let back: DiscreteMeasure = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"dim":1,"points":[[0.0]],"weights":[-1.0]}"#;
        assert!(serde_json::from_str::<DiscreteMeasure>(bad).is_err());
    }
}
