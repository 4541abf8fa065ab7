//! Mollification `T_ε(μ) = ((f_ε)_♯ μ + ε δ_0) ∗ κ_ε` of discrete measures onto a regular grid.
//!
//! `κ` is the standard bump `c_d exp(-1/(1 - |x|^2))` on the unit ball and
//! `f(x) = x ρ(|x|)/|x|` is a smooth radial retraction with
//!
//! ```text
//! ρ(r) = r                      on [0, 1]
//! ρ'(r) = 1 - 3s^2 + 2s^3       on [1, 2], s = r - 1
//! ρ(r) = 3/2                    for r >= 2
//! ```
//!
//! so `ρ` is C^1, nondecreasing, 1-Lipschitz and bounded by 3/2. The scaled
//! maps are `κ_ε(x) = ε^{-d} κ(x/ε)` and `f_ε(x) = f(εx)/ε`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{invalid, Error, Result};
use crate::measure::DiscreteMeasure;

pub const MAX_GRID_DIM: usize = 3;

/// Radial profile of the retraction.
pub fn retraction_profile(r: f64) -> f64 {
    if r <= 1.0 {
        r
    } else if r >= 2.0 {
        1.5
    } else {
        let s = r - 1.0;
        1.0 + s - s.powi(3) + 0.5 * s.powi(4)
    }
}

/// `f_ε(x) = f(εx)/ε`; the identity on `B(0, 1/ε)`.
pub fn retraction(x: &[f64], eps: f64) -> Vec<f64> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r * eps <= 1.0 {
        return x.to_vec();
    }
    let factor = retraction_profile(eps * r) / (eps * r);
    x.iter().map(|v| v * factor).collect()
}

/// Unnormalized bump `exp(-1/(1 - |x|^2))` on the open unit ball.
fn bump_raw(x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

/// `∫_{B(0,1)} exp(-1/(1 - |x|^2)) dx` via radial Simpson quadrature.
fn bump_integral(dim: usize) -> f64 {
    let sphere = match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => f64::NAN,
    };
    let n = 4000;
    let h = 1.0 / n as f64;
    let f = |r: f64| {
        if r >= 1.0 {
            0.0
        } else {
            r.powi(dim as i32 - 1) * (-1.0 / (1.0 - r * r)).exp()
        }
    };
    let mut s = f(0.0) + f(1.0);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    sphere * s * h / 3.0
}

/// Mollifier `κ` with unit mass.
pub fn bump(x: &[f64]) -> f64 {
    static NORMS: OnceLock<[f64; MAX_GRID_DIM]> = OnceLock::new();
    let norms = NORMS.get_or_init(|| [bump_integral(1), bump_integral(2), bump_integral(3)]);
    match x.len() {
        d @ 1..=MAX_GRID_DIM => bump_raw(x) / norms[d - 1],
        d => bump_raw(x) / bump_integral(d),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub origin: Vec<f64>,
    pub spacing: f64,
    /// Number of nodes per axis.
    pub extents: Vec<usize>,
}

impl Grid {
    /// Cubic grid centred at the origin covering `[-radius, radius]^d`.
    pub fn centered(dim: usize, radius: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && radius > 0.0) {
            return Err(Error::Grid(format!("radius {radius} and spacing {spacing} must be > 0")));
        }
        let half = (radius / spacing).ceil() as usize;
        Ok(Self { origin: vec![-(half as f64) * spacing; dim], spacing, extents: vec![2 * half + 1; dim] })
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn node(&self, index: &[i64]) -> Vec<f64> {
        self.origin.iter().zip(index).map(|(o, &k)| o + k as f64 * self.spacing).collect()
    }

    fn covers_ball(&self, radius: f64) -> bool {
        self.origin
            .iter()
            .zip(&self.extents)
            .all(|(&o, &n)| o <= -radius && o + (n.saturating_sub(1)) as f64 * self.spacing >= radius)
    }

    fn contains(&self, index: &[i64]) -> bool {
        index.iter().zip(&self.extents).all(|(&k, &n)| k >= 0 && (k as usize) < n)
    }
}

#[derive(Debug, Clone)]
pub struct MollifierConfig {
    pub eps: f64,
    pub grid: Grid,
}

impl MollifierConfig {
    pub fn new(eps: f64, grid: Grid) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid("eps", format!("{eps} not in (0, 1)")));
        }
        let dim = grid.dim();
        if dim == 0 || dim > MAX_GRID_DIM {
            return Err(Error::Grid(format!("dimension {dim} not in 1..={MAX_GRID_DIM}")));
        }
        if grid.extents.len() != dim {
            return Err(Error::Grid("extents and origin disagree in length".into()));
        }
        if grid.spacing > eps / 4.0 * (1.0 + 1e-12) {
            return Err(Error::Grid(format!(
                "spacing {} does not resolve the kernel (need <= eps/4 = {})",
                grid.spacing,
                eps / 4.0
            )));
        }
        let radius = support_radius(eps);
        if !grid.covers_ball(radius) {
            return Err(Error::Grid(format!("grid does not cover the ball of radius {radius}")));
        }
        Ok(Self { eps, grid })
    }

    /// Centred grid with the given spacing (default `eps/4`).
    pub fn auto(eps: f64, dim: usize, spacing: Option<f64>) -> Result<Self> {
        let h = spacing.unwrap_or(eps / 4.0);
        let grid = Grid::centered(dim, support_radius(eps) + h, h)?;
        Self::new(eps, grid)
    }
}

/// Radius `2/ε + ε` of the ball containing every mollified measure.
pub fn support_radius(eps: f64) -> f64 {
    2.0 / eps + eps
}

/// Sampled `κ_ε` on grid offsets, normalized to sum one.
fn kernel_stencil(dim: usize, eps: f64, h: f64) -> Vec<(Vec<i64>, f64)> {
    let reach = (eps / h).ceil() as i64;
    let mut stencil = Vec::new();
    let mut idx = vec![-reach; dim];
    loop {
        let z: Vec<f64> = idx.iter().map(|&k| k as f64 * h / eps).collect();
        let v = bump_raw(&z);
        if v > 0.0 {
            stencil.push((idx.clone(), v));
        }
        let mut axis = 0;
        loop {
            if axis == dim {
                let total: f64 = stencil.iter().map(|s| s.1).sum();
                for s in &mut stencil {
                    s.1 /= total;
                }
                return stencil;
            }
            idx[axis] += 1;
            if idx[axis] <= reach {
                break;
            }
            idx[axis] = -reach;
            axis += 1;
        }
    }
}

/// Multilinear (cloud-in-cell) deposit of a weighted point onto grid nodes.
fn deposit(grid: &Grid, y: &[f64], w: f64, out: &mut BTreeMap<Vec<i64>, f64>) -> Result<()> {
    let dim = grid.dim();
    let mut base = Vec::with_capacity(dim);
    let mut frac = Vec::with_capacity(dim);
    for (k, &v) in y.iter().enumerate() {
        let u = (v - grid.origin[k]) / grid.spacing;
        let f = u.floor();
        base.push(f as i64);
        frac.push(u - f);
    }
    for corner in 0..(1usize << dim) {
        let mut idx = base.clone();
        let mut weight = w;
        for k in 0..dim {
            if corner >> k & 1 == 1 {
                idx[k] += 1;
                weight *= frac[k];
            } else {
                weight *= 1.0 - frac[k];
            }
        }
        if weight == 0.0 {
            continue;
        }
        if !grid.contains(&idx) {
            return Err(Error::Grid(format!("point {y:?} falls outside the grid")));
        }
        *out.entry(idx).or_insert(0.0) += weight;
    }
    Ok(())
}

/// `T_ε(μ)` as a measure on grid nodes. Total mass is `μM + ε` up to rounding.
pub fn mollify(mu: &DiscreteMeasure, cfg: &MollifierConfig) -> Result<DiscreteMeasure> {
    let dim = cfg.grid.dim();
    if mu.dim() != dim {
        return Err(Error::DimensionMismatch(mu.dim(), dim));
    }
    let mut binned = BTreeMap::new();
    for (x, w) in mu.atoms() {
        if w > 0.0 {
            deposit(&cfg.grid, &retraction(x, cfg.eps), w, &mut binned)?;
        }
    }
    deposit(&cfg.grid, &vec![0.0; dim], cfg.eps, &mut binned)?;
    let stencil = kernel_stencil(dim, cfg.eps, cfg.grid.spacing);
    let mut out: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for (idx, w) in &binned {
        for (off, k) in &stencil {
            let target: Vec<i64> = idx.iter().zip(off).map(|(a, b)| a + b).collect();
            if !cfg.grid.contains(&target) {
                return Err(Error::Grid("kernel stencil leaves the grid".into()));
            }
            *out.entry(target).or_insert(0.0) += w * k;
        }
    }
    let (points, weights): (Vec<_>, Vec<_>) =
        out.into_iter().filter(|(_, w)| *w > 0.0).map(|(idx, w)| (cfg.grid.node(&idx), w)).unzip();
    DiscreteMeasure::new(dim, points, weights)
}

pub type TestFunction<'a> = &'a dyn Fn(&[f64]) -> f64;

/// `|∫ φ dT_ε(μ) - ∫ φ dμ|` for each test function.
pub fn weak_error(mu: &DiscreteMeasure, cfg: &MollifierConfig, tests: &[TestFunction]) -> Result<Vec<f64>> {
    let t = mollify(mu, cfg)?;
    Ok(tests.iter().map(|phi| (t.integrate(phi) - mu.integrate(phi)).abs()).collect())
}
