//! Cylinder functions `u(μ) = F(f̂_1⋆μ, ..., f̂_k⋆μ)` on discrete measures and
//! their horizontal/vertical gradients.
//!
//! For kernels `f̂(s, x)` that may depend on the atom mass `s = μ_x`,
//! `f̂⋆μ = Σ_i f̂(w_i, x_i) w_i` and, at atom `x_i`,
//!
//! ```text
//! hor_i = Σ_n ∂_n F · ∇_x f̂_n(w_i, x_i)
//! ver_i = Σ_n ∂_n F · (w_i ∂_s f̂_n(w_i, x_i) + f̂_n(w_i, x_i))
//! ```
//!
//! Along `μ_t = exp(t T1)_♯((1 + t T2)^2 μ)` the derivative of `u` at `t = 0`
//! is `Σ_i w_i (hor_i · T1_i + 2 ver_i T2_i)` and the HK speed is
//! `(Σ_i w_i (|T1_i|^2 + T2_i^2))^{1/2}`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expr::{Expr, CUTOFF_SLOPE};
use crate::let_solver::hk_sq;
use crate::measure::{hellinger_sq, DiscreteMeasure};
use crate::transport::wasserstein_sq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalarField {
    Constant(f64),
    /// `a · x + b`
    Linear {
        a: Vec<f64>,
        b: f64,
    },
    /// `amp · exp(-|x - center|^2 / (2 width^2))`
    GaussianBump {
        center: Vec<f64>,
        width: f64,
        amp: f64,
    },
    /// `amp · (1 - |x - center|^2 / radius^2)^3` inside the ball, 0 outside
    SplineBump {
        center: Vec<f64>,
        radius: f64,
        amp: f64,
    },
    /// `amp · sin(freq · x + phase)`
    Sine {
        freq: Vec<f64>,
        phase: f64,
        amp: f64,
    },
    /// `a + b · x + c |x|^2`
    Quadratic {
        a: f64,
        b: Vec<f64>,
        c: f64,
    },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn diff_sq(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

impl ScalarField {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Linear { a, b } => dot(a, x) + b,
            ScalarField::GaussianBump { center, width, amp } => {
                amp * (-diff_sq(x, center) / (2.0 * width * width)).exp()
            }
            ScalarField::SplineBump { center, radius, amp } => {
                let u = diff_sq(x, center) / (radius * radius);
                if u >= 1.0 {
                    0.0
                } else {
                    amp * (1.0 - u).powi(3)
                }
            }
            ScalarField::Sine { freq, phase, amp } => amp * (dot(freq, x) + phase).sin(),
            ScalarField::Quadratic { a, b, c } => a + dot(b, x) + c * dot(x, x),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ScalarField::Constant(_) => vec![0.0; x.len()],
            ScalarField::Linear { a, .. } => a.clone(),
            ScalarField::GaussianBump { center, width, .. } => {
                let v = self.value(x);
                x.iter().zip(center).map(|(a, c)| -(a - c) / (width * width) * v).collect()
            }
            ScalarField::SplineBump { center, radius, amp } => {
                let r2 = radius * radius;
                let u = diff_sq(x, center) / r2;
                if u >= 1.0 {
                    return vec![0.0; x.len()];
                }
                let d = -6.0 * amp * (1.0 - u).powi(2) / r2;
                x.iter().zip(center).map(|(a, c)| d * (a - c)).collect()
            }
            ScalarField::Sine { freq, phase, amp } => {
                let c = amp * (dot(freq, x) + phase).cos();
                freq.iter().map(|k| c * k).collect()
            }
            ScalarField::Quadratic { b, c, .. } => b.iter().zip(x).map(|(bi, xi)| bi + 2.0 * c * xi).collect(),
        }
    }

    /// `sup |f|`, when bounded.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            ScalarField::Constant(c) => Some(c.abs()),
            ScalarField::Linear { a, b } => a.iter().all(|&v| v == 0.0).then(|| b.abs()),
            ScalarField::GaussianBump { amp, .. }
            | ScalarField::SplineBump { amp, .. }
            | ScalarField::Sine { amp, .. } => Some(amp.abs()),
            ScalarField::Quadratic { a, b, c } => (*c == 0.0 && b.iter().all(|&v| v == 0.0)).then(|| a.abs()),
        }
    }

    /// Global Lipschitz constant.
    pub fn lip_bound(&self) -> Option<f64> {
        match self {
            ScalarField::Constant(_) => Some(0.0),
            ScalarField::Linear { a, .. } => Some(dot(a, a).sqrt()),
            ScalarField::GaussianBump { width, amp, .. } => Some(amp.abs() / width * (-0.5f64).exp()),
            ScalarField::SplineBump { radius, amp, .. } => Some(96.0 * amp.abs() / (25.0 * 5f64.sqrt() * radius)),
            ScalarField::Sine { freq, amp, .. } => Some(amp.abs() * dot(freq, freq).sqrt()),
            ScalarField::Quadratic { b, c, .. } => (*c == 0.0).then(|| dot(b, b).sqrt()),
        }
    }

    /// Dimension fixed by the parameters, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ScalarField::Constant(_) => None,
            ScalarField::Linear { a, .. } => Some(a.len()),
            ScalarField::GaussianBump { center, .. } | ScalarField::SplineBump { center, .. } => Some(center.len()),
            ScalarField::Sine { freq, .. } => Some(freq.len()),
            ScalarField::Quadratic { b, .. } => Some(b.len()),
        }
    }

    /// Parses `const(c)`, `linear(a.., b)`, `gauss(center.., width, amp)`,
    /// `spline(center.., radius, amp)`, `sine(freq.., phase, amp)` or
    /// `quad(a, b.., c)`.
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        let (name, args) = split_call(src)?;
        let need = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!("{name} expects {n} arguments in dimension {dim}, got {}", args.len())))
            }
        };
        let field = match name {
            "const" => {
                need(1)?;
                ScalarField::Constant(args[0])
            }
            "linear" => {
                need(dim + 1)?;
                ScalarField::Linear { a: args[..dim].to_vec(), b: args[dim] }
            }
            "gauss" => {
                need(dim + 2)?;
                ScalarField::GaussianBump { center: args[..dim].to_vec(), width: args[dim], amp: args[dim + 1] }
            }
            "spline" => {
                need(dim + 2)?;
                ScalarField::SplineBump { center: args[..dim].to_vec(), radius: args[dim], amp: args[dim + 1] }
            }
            "sine" => {
                need(dim + 2)?;
                ScalarField::Sine { freq: args[..dim].to_vec(), phase: args[dim], amp: args[dim + 1] }
            }
            "quad" => {
                need(dim + 2)?;
                ScalarField::Quadratic { a: args[0], b: args[1..=dim].to_vec(), c: args[dim + 1] }
            }
            other => return Err(Error::Parse(format!("unknown field {other:?}"))),
        };
        match &field {
            ScalarField::GaussianBump { width: r, .. } | ScalarField::SplineBump { radius: r, .. } if !(*r > 0.0) => {
                Err(Error::Parse(format!("{name}: width must be > 0")))
            }
            _ => Ok(field),
        }
    }
}

fn split_call(src: &str) -> Result<(&str, Vec<f64>)> {
    let src = src.trim();
    let open = src.find('(').ok_or_else(|| Error::Parse(format!("expected name(args) in {src:?}")))?;
    let inner = src[open + 1..].strip_suffix(')').ok_or_else(|| Error::Parse(format!("missing ')' in {src:?}")))?;
    let args = inner
        .split(',')
        .map(|a| a.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number {a:?} in {src:?}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((src[..open].trim(), args))
}

/// Kernel `f̂(s, x)` integrated against `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    /// `f(x)`
    Plain(ScalarField),
    /// `s · h(x)`
    MassTimes(ScalarField),
    /// `(1 - e^{-s}) · h(x)`
    Saturating(ScalarField),
}

impl Kernel {
    pub fn mass() -> Self {
        Kernel::Plain(ScalarField::Constant(1.0))
    }

    fn field(&self) -> &ScalarField {
        match self {
            Kernel::Plain(f) | Kernel::MassTimes(f) | Kernel::Saturating(f) => f,
        }
    }

    fn mass_factor(&self, s: f64) -> (f64, f64) {
        match self {
            Kernel::Plain(_) => (1.0, 0.0),
            Kernel::MassTimes(_) => (s, 1.0),
            Kernel::Saturating(_) => (-(-s).exp_m1(), (-s).exp()),
        }
    }

    pub fn value(&self, s: f64, x: &[f64]) -> f64 {
        self.mass_factor(s).0 * self.field().value(x)
    }

    /// `∂_s f̂(s, x)`
    pub fn mass_deriv(&self, s: f64, x: &[f64]) -> f64 {
        self.mass_factor(s).1 * self.field().value(x)
    }

    /// `∇_x f̂(s, x)`
    pub fn grad(&self, s: f64, x: &[f64]) -> Vec<f64> {
        let m = self.mass_factor(s).0;
        self.field().grad(x).into_iter().map(|g| g * m).collect()
    }

    pub fn is_plain(&self) -> bool {
        matches!(self, Kernel::Plain(_))
    }

    /// `mass(F)`, `sat(F)` or a bare field.
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        let src = src.trim();
        for (prefix, wrap) in [
            ("mass(", Kernel::MassTimes as fn(ScalarField) -> Kernel),
            ("sat(", Kernel::Saturating as fn(ScalarField) -> Kernel),
        ] {
            if let Some(rest) = src.strip_prefix(prefix) {
                let inner = rest.strip_suffix(')').ok_or_else(|| Error::Parse(format!("missing ')' in {src:?}")))?;
                return Ok(wrap(ScalarField::parse(inner, dim)?));
            }
        }
        Ok(Kernel::Plain(ScalarField::parse(src, dim)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderFunction {
    pub outer: Expr,
    pub kernels: Vec<Kernel>,
}

/// Horizontal (vector) and vertical (scalar) gradient components per atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub hor: Vec<Vec<f64>>,
    pub ver: Vec<f64>,
}

impl CylinderFunction {
    pub fn new(outer: Expr, kernels: Vec<Kernel>) -> Result<Self> {
        if outer.arity() > kernels.len() {
            return Err(invalid(
                "outer",
                format!("uses {} variables but only {} kernels are given", outer.arity(), kernels.len()),
            ));
        }
        let dims: Vec<usize> = kernels.iter().filter_map(|k| k.field().dim()).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(invalid("kernels", "kernels disagree in dimension"));
        }
        Ok(Self { outer, kernels })
    }

    /// `f⋆`
    pub fn linear(f: ScalarField) -> Self {
        Self { outer: Expr::Var(0), kernels: vec![Kernel::Plain(f)] }
    }

    /// `μ ↦ ς(μM / k)`: 1 for mass at most `k`, 0 for mass at least `2k`.
    pub fn truncation(k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(invalid("k", "must be > 0"));
        }
        Ok(Self { outer: Expr::Cutoff(Box::new(Expr::Var(0)), k), kernels: vec![Kernel::mass()] })
    }

    pub fn is_plain(&self) -> bool {
        self.kernels.iter().all(Kernel::is_plain)
    }

    pub fn product(&self, other: &Self) -> Self {
        let mut kernels = self.kernels.clone();
        kernels.extend(other.kernels.iter().cloned());
        Self {
            outer: Expr::Mul(Box::new(self.outer.clone()), Box::new(other.outer.shifted(self.kernels.len()))),
            kernels,
        }
    }

    pub fn tanh(&self) -> Self {
        Self { outer: Expr::Tanh(Box::new(self.outer.clone())), kernels: self.kernels.clone() }
    }

    /// Kernel integrals `f̂_n⋆μ`.
    pub fn integrals(&self, mu: &DiscreteMeasure) -> Vec<f64> {
        self.kernels.iter().map(|k| mu.atoms().map(|(x, w)| w * k.value(w, x)).sum()).collect()
    }

    pub fn eval(&self, mu: &DiscreteMeasure) -> f64 {
        self.outer.eval(&self.integrals(mu))
    }

    pub fn gradient(&self, mu: &DiscreteMeasure) -> Gradient {
        let (_, dfdv) = self.outer.eval_grad(&self.integrals(mu));
        let dim = mu.dim();
        let mut hor = Vec::with_capacity(mu.len());
        let mut ver = Vec::with_capacity(mu.len());
        for (x, w) in mu.atoms() {
            let mut h = vec![0.0; dim];
            let mut v = 0.0;
            for (k, &d) in self.kernels.iter().zip(&dfdv) {
                if d == 0.0 {
                    continue;
                }
                for (hi, g) in h.iter_mut().zip(k.grad(w, x)) {
                    *hi += d * g;
                }
                v += d * (w * k.mass_deriv(w, x) + k.value(w, x));
            }
            hor.push(h);
            ver.push(v);
        }
        Gradient { hor, ver }
    }
}

fn check_aligned(mu: &DiscreteMeasure, n1: usize, n2: usize) -> Result<()> {
    if n1 != mu.len() || n2 != mu.len() {
        return Err(invalid("gradient", format!("arrays of length {n1}/{n2} for {} atoms", mu.len())));
    }
    Ok(())
}

/// `(Σ_i w_i (|hor_i|^2 + 4 ver_i^2))^{1/2}`
pub fn tangent_norm_14(grad: &Gradient, mu: &DiscreteMeasure) -> Result<f64> {
    check_aligned(mu, grad.hor.len(), grad.ver.len())?;
    Ok(mu
        .weights()
        .iter()
        .zip(&grad.hor)
        .zip(&grad.ver)
        .map(|((w, h), v)| w * (dot(h, h) + 4.0 * v * v))
        .sum::<f64>()
        .sqrt())
}

/// `2 (Σ_i w_i ver_i^2)^{1/2}`: the slope for the Hellinger distance.
pub fn vertical_norm(grad: &Gradient, mu: &DiscreteMeasure) -> Result<f64> {
    check_aligned(mu, grad.hor.len(), grad.ver.len())?;
    Ok(2.0 * mu.weights().iter().zip(&grad.ver).map(|(w, v)| w * v * v).sum::<f64>().sqrt())
}

/// `(Σ_i w_i |hor_i|^2)^{1/2}`: the slope for the Wasserstein distance.
pub fn horizontal_norm(grad: &Gradient, mu: &DiscreteMeasure) -> Result<f64> {
    check_aligned(mu, grad.hor.len(), grad.ver.len())?;
    Ok(mu.weights().iter().zip(&grad.hor).map(|(w, h)| w * dot(h, h)).sum::<f64>().sqrt())
}

/// `Σ_i w_i (hor_i · T1_i + 2 ver_i T2_i)`
pub fn analytic_pairing(grad: &Gradient, mu: &DiscreteMeasure, t1: &[Vec<f64>], t2: &[f64]) -> Result<f64> {
    check_aligned(mu, grad.hor.len(), grad.ver.len())?;
    check_aligned(mu, t1.len(), t2.len())?;
    Ok(mu.weights().iter().enumerate().map(|(i, w)| w * (dot(&grad.hor[i], &t1[i]) + 2.0 * grad.ver[i] * t2[i])).sum())
}

/// `exp(t T1)_♯((1 + t T2)^2 μ)` with translations as the exponential map.
pub fn perturb(mu: &DiscreteMeasure, t1: &[Vec<f64>], t2: &[f64], t: f64) -> Result<DiscreteMeasure> {
    check_aligned(mu, t1.len(), t2.len())?;
    let points = mu.points().iter().zip(t1).map(|(x, v)| x.iter().zip(v).map(|(a, b)| a + t * b).collect()).collect();
    let weights = mu.weights().iter().zip(t2).map(|(w, s)| w * (1.0 + t * s).powi(2)).collect();
    DiscreteMeasure::new(mu.dim(), points, weights)
}

/// Richardson-extrapolated central difference of `t ↦ u(μ_t)` at 0.
///
/// `hs` must be decreasing with a constant ratio.
pub fn perturbation_derivative(
    u: &CylinderFunction,
    mu: &DiscreteMeasure,
    t1: &[Vec<f64>],
    t2: &[f64],
    hs: &[f64],
) -> Result<f64> {
    if hs.is_empty() || hs.iter().any(|&h| !(h > 0.0)) {
        return Err(invalid("h_grid", "needs positive step sizes"));
    }
    let ratio = if hs.len() > 1 { hs[0] / hs[1] } else { 2.0 };
    let mut table: Vec<f64> = hs
        .iter()
        .map(|&h| Ok((u.eval(&perturb(mu, t1, t2, h)?) - u.eval(&perturb(mu, t1, t2, -h)?)) / (2.0 * h)))
        .collect::<Result<_>>()?;
    let mut order = 2;
    while table.len() > 1 {
        let q = ratio.powi(order);
        table = table.windows(2).map(|w| (q * w[1] - w[0]) / (q - 1.0)).collect();
        order += 2;
    }
    Ok(table[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMetric {
    Hk,
    He,
    W,
}

/// Radii at which perturbed measures are compared; each is half the previous.
pub const PROBE_RADII: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

/// Richardson extrapolation to `r = 0` of values at halving radii, assuming
/// an expansion in powers of `r`.
fn extrapolate_halving(mut table: Vec<f64>) -> f64 {
    let mut q = 2.0;
    while table.len() > 1 {
        table = table.windows(2).map(|w| (q * w[1] - w[0]) / (q - 1.0)).collect();
        q *= 2.0;
    }
    table[0]
}

fn metric_dist(metric: ProbeMetric, a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    Ok(match metric {
        ProbeMetric::Hk => hk_sq(a, b, 1e-10)?,
        ProbeMetric::He => hellinger_sq(a, b)?,
        ProbeMetric::W => wasserstein_sq(a, b)?,
    }
    .max(0.0)
    .sqrt())
}

/// Largest directional slope over random directions, each estimated from the
/// signed quotients `(u(μ_r) - u(μ)) / dist(μ_r, μ)` at the radii in
/// [`PROBE_RADII`], extrapolated to `r = 0`.
///
/// HK perturbations combine translations and reweightings, He uses
/// reweightings only, W translations only. With `include_optimal` the
/// gradient direction `(hor, 2 ver)` (restricted to the metric's tangent
/// part) is probed as well.
pub fn slope_probe<R: Rng + ?Sized>(
    u: &CylinderFunction,
    mu: &DiscreteMeasure,
    metric: ProbeMetric,
    n_samples: usize,
    include_optimal: bool,
    rng: &mut R,
) -> Result<f64> {
    let n = mu.len();
    let dim = mu.dim();
    let mut directions = Vec::new();
    if include_optimal {
        let g = u.gradient(mu);
        let t1 = if metric == ProbeMetric::He { vec![vec![0.0; dim]; n] } else { g.hor.clone() };
        let t2 = if metric == ProbeMetric::W { vec![0.0; n] } else { g.ver.iter().map(|v| 2.0 * v).collect() };
        directions.push((t1, t2));
    }
    for _ in 0..n_samples {
        let t1 = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| if metric == ProbeMetric::He { 0.0 } else { rng.sample::<f64, _>(StandardNormal) })
                    .collect()
            })
            .collect();
        let t2 =
            (0..n).map(|_| if metric == ProbeMetric::W { 0.0 } else { rng.sample::<f64, _>(StandardNormal) }).collect();
        directions.push((t1, t2));
    }
    let base = u.eval(mu);
    let mut best: f64 = 0.0;
    for (t1, t2) in &directions {
        let speed: f64 =
            mu.weights().iter().zip(t1).zip(t2).map(|((w, a), b)| w * (dot(a, a) + b * b)).sum::<f64>().sqrt();
        if speed == 0.0 {
            continue;
        }
        let mut quotients = Vec::with_capacity(PROBE_RADII.len());
        for &r in &PROBE_RADII {
            let moved = perturb(mu, t1, t2, r / speed)?;
            if metric == ProbeMetric::W && (moved.total_mass() - mu.total_mass()).abs() > 1e-12 * mu.total_mass() {
                return Err(invalid("direction", "W perturbation changed the mass"));
            }
            let d = metric_dist(metric, mu, &moved)?;
            if d > 0.0 {
                quotients.push((u.eval(&moved) - base) / d);
            }
        }
        if quotients.len() == PROBE_RADII.len() {
            best = best.max(extrapolate_halving(quotients).abs());
        } else {
            best = best.max(quotients.iter().fold(0.0, |m, q| m.max(q.abs())));
        }
    }
    Ok(best)
}

/// Upper bound `2 √(8 + 2π^2) / √k` on the slope of the truncation `u_k`.
pub fn truncation_slope_bound(k: f64) -> f64 {
    2.0 * (8.0 + 2.0 * std::f64::consts::PI.powi(2)).sqrt() / k.sqrt()
}

/// Exact slope `2 |ς'(M/k)| √M / k` of the truncation at a measure of mass `M`.
pub fn truncation_slope(k: f64, mass: f64) -> f64 {
    2.0 * crate::expr::cutoff_profile_deriv(mass / k).abs() * mass.sqrt() / k
}

/// `sup_M truncation_slope(k, M) = 2 · (3/2) · √(2k) / k` bound from `|ς'| ≤ 3/2`, `M ≤ 2k`.
pub fn truncation_slope_crude(k: f64) -> f64 {
    2.0 * CUTOFF_SLOPE * (2.0 * k).sqrt() / k
}

/// `(|f⋆μ0 - f⋆μ1|, (Lip f ∨ sup|f|) √(2 + π^2/2) (μ0M + μ1M)^{1/2} HK(μ0, μ1))`
pub fn linear_lip_bound(f: &ScalarField, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, tol: f64) -> Result<(f64, f64)> {
    let (Some(lip), Some(sup)) = (f.lip_bound(), f.sup_bound()) else {
        return Err(invalid("f", "needs finite Lipschitz and sup bounds"));
    };
    let lhs = (mu0.integrate(|x| f.value(x)) - mu1.integrate(|x| f.value(x))).abs();
    let hk = hk_sq(mu0, mu1, tol)?.max(0.0).sqrt();
    let c = (2.0 + std::f64::consts::PI.powi(2) / 2.0).sqrt();
    Ok((lhs, lip.max(sup) * c * (mu0.total_mass() + mu1.total_mass()).sqrt() * hk))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_mu() -> DiscreteMeasure {
        DiscreteMeasure::new(2, vec![vec![0.1, 0.2], vec![-0.5, 0.4], vec![0.9, -0.3]], vec![0.7, 1.2, 0.4]).unwrap()
    }

    fn gauss() -> ScalarField {
        ScalarField::GaussianBump { center: vec![0.2, 0.1], width: 0.8, amp: 1.5 }
    }

    #[test]
    fn linear_functional_and_gradient() {
        let mu = sample_mu();
        let u = CylinderFunction::linear(gauss());
        let expect: f64 = mu.atoms().map(|(x, w)| w * gauss().value(x)).sum();
        assert!((u.eval(&mu) - expect).abs() < 1e-15);
        let g = u.gradient(&mu);
        for (i, (x, _)) in mu.atoms().enumerate() {
            assert_eq!(g.hor[i], gauss().grad(x));
            assert_eq!(g.ver[i], gauss().value(x));
        }
    }

    #[test]
    fn extended_mass_kernel() {
        let mu = sample_mu();
        let u = CylinderFunction::new(Expr::Var(0), vec![Kernel::MassTimes(ScalarField::Constant(1.0))]).unwrap();
        let sq: f64 = mu.weights().iter().map(|w| w * w).sum();
        assert!((u.eval(&mu) - sq).abs() < 1e-15);
        let h = gauss();
        let v = CylinderFunction::new(Expr::Var(0), vec![Kernel::MassTimes(h.clone())]).unwrap();
        let g = v.gradient(&mu);
        for (i, (x, w)) in mu.atoms().enumerate() {
            assert!((g.ver[i] - 2.0 * w * h.value(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn truncation_values_and_gradient() {
        let u = CylinderFunction::truncation(2.0).unwrap();
        let half = DiscreteMeasure::on_line(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
        assert_eq!(u.eval(&half), 1.0);
        let big = DiscreteMeasure::on_line(&[0.0, 1.0], &[3.0, 3.0]).unwrap();
        assert_eq!(u.eval(&big), 0.0);
        let mid = DiscreteMeasure::on_line(&[0.0, 1.0], &[1.5, 1.5]).unwrap();
        let g = u.gradient(&mid);
        let chi_prime = crate::expr::cutoff_profile_deriv(1.5) / 2.0;
        assert!(g.hor.iter().flatten().all(|&h| h == 0.0));
        assert!(g.ver.iter().all(|&v| (v - chi_prime).abs() < 1e-15));
        let norm = tangent_norm_14(&g, &mid).unwrap();
        assert!((norm * norm - 4.0 * chi_prime * chi_prime * 3.0).abs() < 1e-12);
        assert!((norm - truncation_slope(2.0, 3.0)).abs() < 1e-12);
    }

    #[test]
    fn mass_derivative_along_reweighting() {
        let mu = sample_mu();
        let u = CylinderFunction::new(Expr::Var(0), vec![Kernel::mass()]).unwrap();
        let t1 = vec![vec![0.0; 2]; 3];
        let t2 = vec![0.3; 3];
        let d = perturbation_derivative(&u, &mu, &t1, &t2, &[1e-2, 5e-3, 2.5e-3]).unwrap();
        assert!((d - 2.0 * 0.3 * mu.total_mass()).abs() < 1e-10);
    }

    #[test]
    fn leibniz_and_chain_rules() {
        let mu = sample_mu();
        let u = CylinderFunction::linear(gauss());
        let v = CylinderFunction::new(
            Expr::parse("sin(v0) + v1^2").unwrap(),
            vec![Kernel::Saturating(ScalarField::Sine { freq: vec![1.0, -2.0], phase: 0.3, amp: 0.5 }), Kernel::mass()],
        )
        .unwrap();
        let (gu, gv, guv) = (u.gradient(&mu), v.gradient(&mu), u.product(&v).gradient(&mu));
        let (uu, vv) = (u.eval(&mu), v.eval(&mu));
        for i in 0..mu.len() {
            assert!((guv.ver[i] - (uu * gv.ver[i] + vv * gu.ver[i])).abs() < 1e-12);
            for k in 0..2 {
                assert!((guv.hor[i][k] - (uu * gv.hor[i][k] + vv * gu.hor[i][k])).abs() < 1e-12);
            }
        }
        let gt = v.tanh().gradient(&mu);
        let d = 1.0 - vv.tanh().powi(2);
        for i in 0..mu.len() {
            assert!((gt.ver[i] - d * gv.ver[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn field_parsing() {
        assert_eq!(
            ScalarField::parse("gauss(0.5, 0.3, 2)", 1).unwrap(),
            ScalarField::GaussianBump { center: vec![0.5], width: 0.3, amp: 2.0 }
        );
        assert!(matches!(Kernel::parse("mass(spline(0, 0, 1, 1))", 2).unwrap(), Kernel::MassTimes(_)));
        assert!(ScalarField::parse("gauss(0.5, 2)", 1).is_err());
        assert!(ScalarField::parse("gauss(0.5, 0, 2)", 1).is_err());
        assert!(ScalarField::parse("wave(1)", 1).is_err());
    }

    #[test]
    fn field_gradients_and_lipschitz_bounds() {
        let fields = [
            gauss(),
            ScalarField::SplineBump { center: vec![0.0, 0.1], radius: 1.3, amp: -0.7 },
            ScalarField::Sine { freq: vec![1.5, 0.5], phase: 0.2, amp: 0.8 },
            ScalarField::Linear { a: vec![0.3, -1.0], b: 2.0 },
            ScalarField::Quadratic { a: 0.5, b: vec![0.3, -1.0], c: 0.0 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for f in &fields {
            let lip = f.lip_bound().unwrap();
            for _ in 0..200 {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
                let g = f.grad(&x);
                assert!(dot(&g, &g).sqrt() <= lip * (1.0 + 1e-12));
                for k in 0..2 {
                    let mut up = x.clone();
                    let mut down = x.clone();
                    up[k] += 1e-6;
                    down[k] -= 1e-6;
                    let fd = (f.value(&up) - f.value(&down)) / 2e-6;
                    assert!((fd - g[k]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn w_probe_ignores_mass_functions() {
        let mu = sample_mu();
        let u = CylinderFunction::new(Expr::parse("cutoff(v0, 1.5)").unwrap(), vec![Kernel::mass()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(slope_probe(&u, &mu, ProbeMetric::W, 5, true, &mut rng).unwrap() < 1e-12);
    }
}
