//! Legendre-conjugate potential pairs for `GHK^2(ν, T_ε μ)`.
//!
//! With GHK dual potentials `(φ_0, φ_1)` one sets `φ = ½|x|^2 - φ_0` on the
//! support of `ν` and `ψ = ½|y|^2 - φ_1`; the optimal pair is then a pair of
//! convex conjugates, `φ(x) = sup_y ⟨x,y⟩ - ψ(y)` and
//! `ψ(y) = sup_{x ∈ B(0,R)} ⟨x,y⟩ - φ(x)`, and
//!
//! ```text
//! GHK^2 = Σ_ν (1 - e^{-|x|^2 + 2φ(x)}) + Σ_μ (1 - e^{-|y|^2 + 2ψ(y)})
//!       = Σ_μ (1 - e^{-|y|^2 + 2ψ})^2 + e^{-2|y|^2 + 4ψ} (e^{|y - ∇ψ(y)|^2} - 1).
//! ```
//!
//! The conjugate of a function on finitely many nodes is a finite maximum, so
//! `ψ` is evaluable everywhere and is `R`-Lipschitz by construction. Note that
//! conjugacy yields the Fenchel–Young inequality `φ(x) + ψ(y) >= ⟨x,y⟩`, which
//! is the same statement as dual feasibility `φ_0 + φ_1 <= ½|x - y|^2`.

use serde::{Deserialize, Serialize};

use crate::cone::LetKind;
use crate::error::{invalid, Error, Result};
use crate::let_solver::{solve_let, LetProblem, LetSolution};
use crate::measure::{dist, DiscreteMeasure};
use crate::regularize::{mollify, Grid, MollifierConfig};

/// A grid measure on the closed ball `B(0, R)` with density bounded below.
#[derive(Debug, Clone)]
pub struct BallDensity {
    pub measure: DiscreteMeasure,
    pub radius: f64,
    /// Upper bound `B` on the total mass.
    pub mass_bound: f64,
    /// Lower bound `δ` on the density.
    pub density_floor: f64,
    pub spacing: f64,
}

impl BallDensity {
    /// Uniform density of total mass `mass` on the grid nodes inside `B(0, radius)`.
    pub fn uniform(dim: usize, radius: f64, spacing: f64, mass: f64) -> Result<Self> {
        Self::with_density(dim, radius, spacing, mass, |_| 1.0)
    }

    /// Grid density proportional to `profile`, rescaled to total mass `mass`.
    pub fn with_density(
        dim: usize,
        radius: f64,
        spacing: f64,
        mass: f64,
        profile: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(invalid("mass", "must be > 0"));
        }
        let grid = Grid::centered(dim, radius, spacing)?;
        let mut points = Vec::new();
        let mut raw = Vec::new();
        let total_nodes: usize = grid.extents.iter().product();
        for flat in 0..total_nodes {
            let mut rem = flat;
            let idx: Vec<i64> = grid
                .extents
                .iter()
                .map(|&n| {
                    let k = rem % n;
                    rem /= n;
                    k as i64
                })
                .collect();
            let x = grid.node(&idx);
            if x.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius * (1.0 + 1e-12) {
                let p = profile(&x);
                if !(p > 0.0 && p.is_finite()) {
                    return Err(invalid("profile", "must be positive on the ball"));
                }
                raw.push(p);
                points.push(x);
            }
        }
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|p| p * mass / total).collect();
        let cell = spacing.powi(dim as i32);
        let floor = weights.iter().copied().fold(f64::INFINITY, f64::min) / cell;
        Ok(Self {
            measure: DiscreteMeasure::new(dim, points, weights)?,
            radius,
            mass_bound: mass,
            density_floor: floor,
            spacing,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialPair {
    /// Nodes of `ν` and `φ` on them.
    pub x: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    /// Atoms of `T_ε μ` and `ψ` on them.
    pub y: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub radius: f64,
    /// Measured bound `max(ψ(0), sup|q|, Lip q)`, `q(y) = (1 - e^{-|y|^2 + 2ψ(y)})/2`.
    pub k_bound: f64,
    pub psi_at_zero: f64,
    pub q_sup: f64,
    pub q_lip: f64,
    /// Largest on-grid difference quotient of `ψ`.
    pub psi_lip: f64,
    /// Value of the `ν`/`μ` exponential representation.
    pub duality_value: f64,
    /// The LET value of the same discrete problem.
    pub let_value: f64,
    pub conjugation_rounds: usize,
}

impl PotentialPair {
    /// `ψ(y) = max_x ⟨x,y⟩ - φ(x)` at an arbitrary point.
    pub fn psi_at(&self, y: &[f64]) -> f64 {
        conjugate_at(&self.x, &self.phi, y)
    }

    /// Minimum over grid pairs of `φ(x) + ψ(y) - ⟨x,y⟩`; nonnegative for a conjugate pair.
    pub fn fenchel_young_slack(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for (x, &p) in self.x.iter().zip(&self.phi) {
            for (y, &q) in self.y.iter().zip(&self.psi) {
                worst = worst.min(p + q - dot(x, y));
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conjugate_at(nodes: &[Vec<f64>], values: &[f64], y: &[f64]) -> f64 {
    nodes.iter().zip(values).map(|(x, v)| dot(x, y) - v).fold(f64::NEG_INFINITY, f64::max)
}

fn conjugate(nodes: &[Vec<f64>], values: &[f64], at: &[Vec<f64>]) -> Vec<f64> {
    at.iter().map(|y| conjugate_at(nodes, values, y)).collect()
}

fn exp_term(z: &[f64], potential: f64) -> f64 {
    (-z.iter().map(|v| v * v).sum::<f64>() + 2.0 * potential).exp()
}

fn exponential_value(nu: &DiscreteMeasure, phi: &[f64], tmu: &DiscreteMeasure, psi: &[f64]) -> f64 {
    let a: f64 = nu.atoms().zip(phi).map(|((x, w), &p)| w * (1.0 - exp_term(x, p))).sum();
    let b: f64 = tmu.atoms().zip(psi).map(|((y, w), &p)| w * (1.0 - exp_term(y, p))).sum();
    a + b
}

/// Conjugate pair from a converged LET solution on `(ν, T)`.
fn pair_from_solution(
    nu: &BallDensity,
    tmu: &DiscreteMeasure,
    sol: &LetSolution,
    tol: f64,
    max_rounds: usize,
) -> Result<PotentialPair> {
    let x = nu.measure.points().to_vec();
    let y = tmu.points().to_vec();
    let mut psi: Vec<f64> =
        y.iter().zip(&sol.phi1).map(|(p, &f)| 0.5 * p.iter().map(|v| v * v).sum::<f64>() - f).collect();
    let mut phi = conjugate(&y, &psi, &x);
    let mut value = exponential_value(&nu.measure, &phi, tmu, &psi);
    let mut rounds = 0;
    loop {
        rounds += 1;
        let new_psi = conjugate(&x, &phi, &y);
        let new_phi = conjugate(&y, &new_psi, &x);
        let new_value = exponential_value(&nu.measure, &new_phi, tmu, &new_psi);
        let change = (new_value - value).abs();
        psi = new_psi;
        phi = new_phi;
        value = new_value;
        if change <= tol * (1.0 + value.abs()) {
            break;
        }
        if rounds >= max_rounds {
            return Err(Error::NonConvergence { iterations: rounds, gap: change, solution: None });
        }
    }
    let q: Vec<f64> = y.iter().zip(&psi).map(|(p, &s)| 0.5 * (1.0 - exp_term(p, s))).collect();
    let mut q_lip: f64 = 0.0;
    let mut psi_lip: f64 = 0.0;
    for i in 0..y.len() {
        for j in i + 1..y.len() {
            let d = dist(&y[i], &y[j]);
            if d > 0.0 {
                q_lip = q_lip.max((q[i] - q[j]).abs() / d);
                psi_lip = psi_lip.max((psi[i] - psi[j]).abs() / d);
            }
        }
    }
    let q_sup = q.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let psi_at_zero = conjugate_at(&x, &phi, &vec![0.0; tmu.dim()]);
    Ok(PotentialPair {
        k_bound: psi_at_zero.max(q_sup).max(q_lip),
        x,
        phi,
        y,
        psi,
        radius: nu.radius,
        psi_at_zero,
        q_sup,
        q_lip,
        psi_lip,
        duality_value: value,
        let_value: sol.primal_value,
        conjugation_rounds: rounds,
    })
}

/// Optimal conjugate pair for `GHK(ν, T_ε μ)`, together with the measured bound `K`.
pub fn legendre_pair(nu: &BallDensity, mu: &DiscreteMeasure, cfg: &MollifierConfig, tol: f64) -> Result<PotentialPair> {
    if nu.measure.dim() != mu.dim() {
        return Err(Error::DimensionMismatch(nu.measure.dim(), mu.dim()));
    }
    let tmu = mollify(mu, cfg)?;
    let p = LetProblem::euclidean(&nu.measure, &tmu, LetKind::Ghk, 1.0)?;
    let sol = solve_let(&p, tol)?;
    pair_from_solution(nu, &tmu, &sol, tol, 100)
}

/// The gradient representation summed against `T_ε μ`, with `∇ψ` by
/// central differences of step `h`.
///
/// Returns `(value, excluded_mass)`; `ψ` is defined on all of `R^d`, so no
/// mass is ever excluded.
pub fn gradient_duality_value(pp: &PotentialPair, tmu: &DiscreteMeasure, h: f64) -> Result<(f64, f64)> {
    if tmu.len() != pp.y.len() {
        return Err(invalid("tmu", "atoms do not match the potential pair"));
    }
    if !(h > 0.0) {
        return Err(invalid("h", "must be > 0"));
    }
    let dim = tmu.dim();
    let mut total = 0.0;
    for ((y, w), &psi) in tmu.atoms().zip(&pp.psi) {
        let mut grad = vec![0.0; dim];
        let mut yp = y.to_vec();
        for k in 0..dim {
            yp[k] = y[k] + h;
            let up = pp.psi_at(&yp);
            yp[k] = y[k] - h;
            let down = pp.psi_at(&yp);
            yp[k] = y[k];
            grad[k] = (up - down) / (2.0 * h);
        }
        let e = exp_term(y, psi);
        let disp: f64 = y.iter().zip(&grad).map(|(a, b)| (a - b) * (a - b)).sum();
        total += w * ((1.0 - e).powi(2) + e * e * disp.exp_m1());
    }
    Ok((total, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_density_mass_and_floor() {
        let nu = BallDensity::uniform(1, 1.0, 0.1, 2.0).unwrap();
        assert_eq!(nu.measure.len(), 21);
        assert!((nu.measure.total_mass() - 2.0).abs() < 1e-12);
        assert!((nu.density_floor - 2.0 / 21.0 / 0.1).abs() < 1e-12);
    }

    #[test]
    fn conjugate_pair_on_small_instance() {
        let nu = BallDensity::uniform(1, 1.0, 0.05, 1.0).unwrap();
        let mu = DiscreteMeasure::on_line(&[0.4, -0.8], &[0.5, 0.3]).unwrap();
        let cfg = MollifierConfig::auto(0.4, 1, Some(0.05)).unwrap();
        let pp = legendre_pair(&nu, &mu, &cfg, 1e-8).unwrap();
        assert!(pp.fenchel_young_slack() >= -1e-9);
        assert!(pp.psi_lip <= pp.radius + 1e-9);
        assert!((pp.duality_value - pp.let_value).abs() <= 1e-6 * (1.0 + pp.let_value));
        let tmu = mollify(&mu, &cfg).unwrap();
        let (grad_value, excluded) = gradient_duality_value(&pp, &tmu, 0.05).unwrap();
        assert_eq!(excluded, 0.0);
        assert!((grad_value - pp.let_value).abs() < 0.05 * pp.let_value, "{grad_value} vs {}", pp.let_value);
    }
}
