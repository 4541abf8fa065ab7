//! The squared-Bessel radial process `dx = √(2x⁺) dW + θ dt`, its Dirichlet
//! form `E^θ(f, g) = ∫ t f'(t) g'(t) dλ_θ(t)`, and Monte-Carlo checks that the
//! measure-space form restricted to radial functions reduces to it.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::cylinder::{CylinderFunction, Kernel, ScalarField};
use crate::error::{invalid, Error, Result};
use crate::expr::Expr;
use crate::measure::DiscreteMeasure;
use crate::quad::integrate;
use crate::random_measures::{
    check_window, lambda_measure, par_estimate, sample_mlp, substream, Estimate, IntensityParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FullTruncationEuler,
    ExactTransition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselPath {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub theta: f64,
    pub scheme: Scheme,
    /// Steps whose Euler update went negative and was set to 0.
    pub clipped_steps: usize,
}

impl BesselPath {
    pub fn terminal(&self) -> f64 {
        *self.x.last().expect("paths are never empty")
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(invalid("theta", "must be finite and >= 0"));
    }
    Ok(())
}

fn check_grid(x0: f64, horizon: f64, dt: f64) -> Result<usize> {
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(invalid("x0", "must be finite and >= 0"));
    }
    if !(horizon > 0.0 && horizon.is_finite() && dt > 0.0 && dt <= horizon / 10.0) {
        return Err(invalid("dt", format!("need 0 < dt <= T/10, got dt = {dt}, T = {horizon}")));
    }
    Ok((horizon / dt).round() as usize)
}

#[inline]
fn euler_step(x: f64, theta: f64, dt: f64, z: f64) -> f64 {
    x + (2.0 * x.max(0.0) * dt).sqrt() * z + theta * dt
}

/// Full-truncation Euler path on `round(T/dt)` equal steps ending at `T`.
pub fn simulate_besq<R: Rng + ?Sized>(theta: f64, x0: f64, horizon: f64, dt: f64, rng: &mut R) -> Result<BesselPath> {
    check_theta(theta)?;
    let steps = check_grid(x0, horizon, dt)?;
    let h = horizon / steps as f64;
    let mut t = Vec::with_capacity(steps + 1);
    let mut x = Vec::with_capacity(steps + 1);
    t.push(0.0);
    x.push(x0);
    let mut clipped_steps = 0;
    let mut cur = x0;
    for k in 1..=steps {
        cur = euler_step(cur, theta, h, rng.sample(StandardNormal));
        if cur < 0.0 {
            cur = 0.0;
            clipped_steps += 1;
        }
        t.push(if k == steps { horizon } else { k as f64 * h });
        x.push(cur);
    }
    Ok(BesselPath { t, x, theta, scheme: Scheme::FullTruncationEuler, clipped_steps })
}

/// One exact draw of `x_t` given `x_0`: `t · Gamma(θ + N, 1)` with
/// `N ~ Poisson(x_0 / t)`.
pub fn besq_transition<R: Rng + ?Sized>(theta: f64, x0: f64, t: f64, rng: &mut R) -> Result<f64> {
    check_theta(theta)?;
    if !(x0 >= 0.0 && x0.is_finite() && t > 0.0) {
        return Err(invalid("x0", "need x0 >= 0 and t > 0"));
    }
    let n = if x0 > 0.0 { Poisson::new(x0 / t).map_err(|e| invalid("x0", e.to_string()))?.sample(rng) } else { 0.0 };
    let shape = theta + n;
    if shape == 0.0 {
        return Ok(0.0);
    }
    Ok(t * Gamma::new(shape, 1.0).map_err(|e| invalid("theta", e.to_string()))?.sample(rng))
}

/// Exact-transition path on the same grid as [`simulate_besq`].
pub fn simulate_besq_exact<R: Rng + ?Sized>(
    theta: f64,
    x0: f64,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<BesselPath> {
    check_theta(theta)?;
    let steps = check_grid(x0, horizon, dt)?;
    let h = horizon / steps as f64;
    let mut t = vec![0.0];
    let mut x = vec![x0];
    for k in 1..=steps {
        let next = besq_transition(theta, *x.last().expect("non-empty"), h, rng)?;
        t.push(if k == steps { horizon } else { k as f64 * h });
        x.push(next);
    }
    Ok(BesselPath { t, x, theta, scheme: Scheme::ExactTransition, clipped_steps: 0 })
}

/// `n` paths on substreams `0..n` of `seed`; identical for any thread count.
pub fn simulate_ensemble(
    theta: f64,
    x0: f64,
    horizon: f64,
    dt: f64,
    scheme: Scheme,
    n: usize,
    seed: u64,
) -> Result<Vec<BesselPath>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            match scheme {
                Scheme::FullTruncationEuler => simulate_besq(theta, x0, horizon, dt, &mut rng),
                Scheme::ExactTransition => simulate_besq_exact(theta, x0, horizon, dt, &mut rng),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean: Estimate,
    pub var: Estimate,
    pub exact_mean: f64,
    pub exact_var: f64,
    pub clipped_fraction: f64,
    /// Both moments within 3 SE.
    pub passed: bool,
}

/// Terminal mean and variance over `n` paths against `x0 + θT` and `2 x0 T + θT²`.
pub fn moment_check(
    theta: f64,
    x0: f64,
    horizon: f64,
    dt: f64,
    scheme: Scheme,
    n: usize,
    seed: u64,
) -> Result<MomentReport> {
    if n < 2 {
        return Err(invalid("n", "need at least 2 paths"));
    }
    let paths = simulate_ensemble(theta, x0, horizon, dt, scheme, n, seed)?;
    let ends: Vec<f64> = paths.iter().map(BesselPath::terminal).collect();
    let mean = Estimate::from_samples(&ends);
    let sq: Vec<f64> = ends.iter().map(|x| (x - mean.mean).powi(2)).collect();
    let var = Estimate::from_samples(&sq).scaled(n as f64 / (n - 1) as f64);
    let steps: usize = paths.iter().map(|p| p.x.len() - 1).sum();
    let clipped: usize = paths.iter().map(|p| p.clipped_steps).sum();
    let exact_mean = x0 + theta * horizon;
    let exact_var = 2.0 * x0 * horizon + theta * horizon * horizon;
    Ok(MomentReport {
        passed: mean.agrees_with(exact_mean, 3.0) && var.agrees_with(exact_var, 3.0),
        mean,
        var,
        exact_mean,
        exact_var,
        clipped_fraction: clipped as f64 / steps as f64,
    })
}

fn scale_fn(theta: f64, t: f64) -> f64 {
    if (theta - 1.0).abs() < 1e-12 {
        t.ln()
    } else {
        t.powf(1.0 - theta) / (1.0 - theta)
    }
}

/// `P_x(hit a before b)` from the scale function; `b = ∞` is allowed.
pub fn hitting_prob(theta: f64, a: f64, x: f64, b: f64) -> Result<f64> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(invalid("theta", "must be finite and > 0"));
    }
    if !(0.0 < a && a < x && x < b) {
        return Err(invalid("bracket", format!("need 0 < a < x < b, got {a}, {x}, {b}")));
    }
    if b.is_infinite() {
        return Ok(if theta <= 1.0 { 1.0 } else { (x / a).powf(1.0 - theta) });
    }
    let (sa, sx, sb) = (scale_fn(theta, a), scale_fn(theta, x), scale_fn(theta, b));
    Ok(((sb - sx) / (sb - sa)).clamp(0.0, 1.0))
}

/// Whether an Euler path started at `x` leaves `(a, b)` through `a`, with a
/// Brownian-bridge test for excursions between grid points.
fn exits_low<R: Rng + ?Sized>(
    theta: f64,
    a: f64,
    x: f64,
    b: f64,
    dt: f64,
    max_steps: usize,
    rng: &mut R,
) -> Result<bool> {
    let mut cur = x;
    for _ in 0..max_steps {
        let next = euler_step(cur, theta, dt, rng.sample(StandardNormal)).max(0.0);
        if next <= a {
            return Ok(true);
        }
        if next >= b {
            return Ok(false);
        }
        let var = 2.0 * cur * dt;
        let u: f64 = rng.random();
        let p_low = (-2.0 * (cur - a) * (next - a) / var).exp();
        let p_high = (-2.0 * (b - cur) * (b - next) / var).exp();
        if u < p_low {
            return Ok(true);
        }
        if u < p_low + p_high {
            return Ok(false);
        }
        cur = next;
    }
    Err(invalid("dt", format!("path did not leave ({a}, {b}) within {max_steps} steps")))
}

/// Monte-Carlo frequency of hitting `a` before `b`, `n` Euler paths.
pub fn hitting_frequency(theta: f64, a: f64, x: f64, b: f64, dt: f64, n: usize, seed: u64) -> Result<Estimate> {
    hitting_prob(theta, a, x, b)?;
    if !b.is_finite() || !(dt > 0.0) {
        return Err(invalid("bracket", "needs finite b and dt > 0"));
    }
    let max_steps = (1e4 / dt) as usize;
    par_estimate(n, seed, |rng| Ok(exits_low(theta, a, x, b, dt, max_steps, rng)? as u8 as f64))
}

/// Substitution `t = lo + (hi - lo) v^p` (or `lo + (v / (1 - v))^p` for `hi = ∞`)
/// used for the integration variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadGrid {
    pub power: f64,
}

impl Default for QuadGrid {
    fn default() -> Self {
        Self { power: 1.0 }
    }
}

const QUAD_REL_TOL: f64 = 1e-12;

fn integrate_mapped(f: impl Fn(f64) -> f64, lo: f64, hi: f64, grid: QuadGrid) -> Result<f64> {
    let p = grid.power;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(invalid("grid", "power must be >= 1"));
    }
    if !(lo >= 0.0 && hi > lo) {
        return Err(invalid("domain", format!("need 0 <= lo < hi, got [{lo}, {hi}]")));
    }
    let (value, _) = if hi.is_infinite() {
        integrate(
            |v| {
                let r = v / (1.0 - v);
                let jac = p * r.powf(p - 1.0) / ((1.0 - v) * (1.0 - v));
                let y = f(lo + r.powf(p)) * jac;
                if jac.is_finite() {
                    y
                } else {
                    0.0
                }
            },
            0.0,
            1.0,
            QUAD_REL_TOL,
            1e-300,
        )
    } else {
        let w = hi - lo;
        integrate(|v| f(lo + w * v.powf(p)) * w * p * v.powf(p - 1.0), 0.0, 1.0, QUAD_REL_TOL, 1e-300)
    };
    if !value.is_finite() {
        return Err(invalid("integrand", "quadrature did not produce a finite value"));
    }
    Ok(value)
}

/// Density of `λ_θ` at `t`.
fn lambda_density(theta: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ((theta - 1.0) * t.ln() - ln_gamma(theta)).exp()
}

fn check_profile(chi: &Expr) -> Result<()> {
    if chi.arity() > 1 {
        return Err(invalid("chi", "must be a function of v0 only"));
    }
    Ok(())
}

fn deriv(e: &Expr, t: f64) -> f64 {
    e.eval_grad(&[t]).1[0]
}

/// Richardson-extrapolated central difference of the exact first derivative.
fn second_deriv(e: &Expr, t: f64) -> f64 {
    let h = 1e-3 * t.abs().max(1.0);
    let d = |h: f64| (deriv(e, t + h) - deriv(e, t - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// `E^θ(χ, χ) = ∫_0^cap t χ'(t)^2 dλ_θ(t)`.
pub fn quadrature_e(theta: f64, chi: &Expr, cap: f64) -> Result<f64> {
    quadrature_e_on(theta, chi, (0.0, cap), QuadGrid::default())
}

/// `∫_lo^hi t χ'(t)^2 dλ_θ(t)` under the given substitution.
pub fn quadrature_e_on(theta: f64, chi: &Expr, domain: (f64, f64), grid: QuadGrid) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(invalid("theta", "must be > 0"));
    }
    check_profile(chi)?;
    integrate_mapped(|t| t * deriv(chi, t).powi(2) * lambda_density(theta, t), domain.0, domain.1, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// `E^θ(f, g)`
    pub energy: f64,
    /// `∫ f L^θ g dλ_θ`
    pub pairing: f64,
    pub residual: f64,
    /// `max(1, |energy|, ∫ |f L^θ g| dλ_θ)`
    pub scale: f64,
}

/// Integration by parts `E^θ(f, g) = -∫ f (t g'' + θ g') dλ_θ` over `domain`,
/// which must contain both supports.
pub fn generator_symmetry(theta: f64, f: &Expr, g: &Expr, domain: (f64, f64)) -> Result<SymmetryReport> {
    if !(theta > 0.0) {
        return Err(invalid("theta", "must be > 0"));
    }
    check_profile(f)?;
    check_profile(g)?;
    let (lo, hi) = domain;
    if !(lo > 0.0 && hi.is_finite()) {
        return Err(invalid("domain", "supports must stay away from 0 and infinity"));
    }
    let grid = QuadGrid::default();
    let lg = |t: f64| t * second_deriv(g, t) + theta * deriv(g, t);
    let energy = integrate_mapped(|t| t * deriv(f, t) * deriv(g, t) * lambda_density(theta, t), lo, hi, grid)?;
    let pairing = integrate_mapped(|t| f.eval(&[t]) * lg(t) * lambda_density(theta, t), lo, hi, grid)?;
    let abs = integrate_mapped(|t| (f.eval(&[t]) * lg(t)).abs() * lambda_density(theta, t), lo, hi, grid)?;
    Ok(SymmetryReport { energy, pairing, residual: (energy + pairing).abs(), scale: 1f64.max(energy.abs()).max(abs) })
}

/// Coefficients `c_k = 1 / (Γ(b + k) k!)` of `Σ_k c_k z^k`, starting at the
/// first `k` with `b + k` not a pole, up to where `|c_k z^k|` drops below `tol`
/// relative to the partial sum.
fn regularized_series(b: f64, z: f64, tol: f64) -> Result<Vec<(f64, f64)>> {
    let k0 = if b <= 0.0 && b.fract() == 0.0 { (1.0 - b) as u32 } else { 0 };
    let fact: f64 = (1..=k0).map(f64::from).product();
    let mut coef = 1.0 / (gamma(b + k0 as f64) * fact);
    if !coef.is_finite() {
        return Err(invalid("a", format!("series start is not finite for a = {b}")));
    }
    let mut out = Vec::new();
    let mut sum = 0.0f64;
    let mut k = k0 as f64;
    loop {
        let term = coef * z.powf(k);
        out.push((k, coef));
        sum += term;
        coef /= (b + k) * (k + 1.0);
        k += 1.0;
        let next = coef * z.powf(k);
        if (next.abs() <= tol * sum.abs() && k > z.abs()) || next == 0.0 {
            return Ok(out);
        }
        if k > 10_000.0 {
            return Err(invalid("z", "series did not converge in 10000 terms"));
        }
    }
}

/// `₀F₁(;a;z) = Σ z^k / ((a)_k k!)`.
pub fn hyp0f1(a: f64, z: f64, tol: f64) -> Result<f64> {
    if a <= 0.0 && a.fract() == 0.0 {
        return Err(invalid("a", format!("{a} is a pole of 0F1")));
    }
    let mut term = 1.0;
    let mut sum = 1.0f64;
    let mut k = 0.0;
    loop {
        term *= z / ((a + k) * (k + 1.0));
        sum += term;
        k += 1.0;
        if term.abs() <= tol * sum.abs() && k > z.abs() {
            return Ok(sum);
        }
        if k > 10_000.0 {
            return Err(invalid("z", "series did not converge in 10000 terms"));
        }
    }
}

/// Regularized `₀F̃₁(;b;z) = ₀F₁(;b;z) / Γ(b)`, defined for every real `b`.
pub fn hyp0f1_regularized(b: f64, z: f64, tol: f64) -> Result<f64> {
    Ok(regularized_series(b, z, tol)?.iter().map(|(k, c)| c * z.powf(*k)).sum())
}

/// Relative residual `|t f'' + θ f' - f| / (|t f''| + |θ f'| + |f|)` of
/// `f = t^s Σ c_k t^k` from termwise differentiation.
fn series_residual(theta: f64, t: f64, shift: f64, terms: &[(f64, f64)]) -> f64 {
    let (mut f, mut f1, mut f2) = (0.0, 0.0, 0.0);
    for &(k, c) in terms {
        let p = k + shift;
        f += c * t.powf(p);
        f1 += c * p * t.powf(p - 1.0);
        f2 += c * p * (p - 1.0) * t.powf(p - 2.0);
    }
    let (a, b) = (t * f2, theta * f1);
    (a + b - f).abs() / (a.abs() + b.abs() + f.abs())
}

/// Residuals of `t f'' + θ f' = f` for `f₀ = ₀F₁(;θ;t)` and
/// `f₁ = t^{1-θ} ₀F̃₁(;2-θ;t)`.
pub fn eigen_residuals(theta: f64, t: f64) -> Result<(f64, f64)> {
    if !(theta > 0.0 && t > 0.0) {
        return Err(invalid("theta", "need theta > 0 and t > 0"));
    }
    let tol = 1e-17;
    let f0 = regularized_series(theta, t, tol)?;
    let f1 = regularized_series(2.0 - theta, t, tol)?;
    Ok((series_residual(theta, t, 0.0, &f0), series_residual(theta, t, 1.0 - theta, &f1)))
}

/// `Σ_i w_i (|hor_i|^2 + 4 ver_i^2)`
fn form_integrand(u: &CylinderFunction, mu: &DiscreteMeasure) -> f64 {
    let g = u.gradient(mu);
    mu.weights()
        .iter()
        .zip(&g.hor)
        .zip(&g.ver)
        .map(|((w, h), v)| w * (h.iter().map(|x| x * x).sum::<f64>() + 4.0 * v * v))
        .sum()
}

/// `∫_{μM ∈ window} Σ_i w_i (|hor_i|^2 + 4 ver_i^2) dL_{θ,ν}(μ)` from `n`
/// windowed samples, scaled by `λ_θ(window)`.
pub fn dirichlet_form_mc(
    u: &CylinderFunction,
    params: &IntensityParams,
    window: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<Estimate> {
    check_window(window)?;
    let z = lambda_measure(params.theta, window.0, window.1);
    Ok(par_estimate(n, seed, |rng| Ok(form_integrand(u, &sample_mlp(params, window, rng)?)))?.scaled(z))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialFormReport {
    /// `¼` of the Monte-Carlo form of `χ(μM)`
    pub mc: Estimate,
    pub quad: f64,
    /// Largest horizontal gradient entry seen over the samples.
    pub max_horizontal: f64,
    pub verdict: bool,
}

fn radial(chi: &Expr) -> CylinderFunction {
    CylinderFunction { outer: chi.clone(), kernels: vec![Kernel::mass()] }
}

fn check_support_in_window(chi: &Expr, window: (f64, f64)) -> Result<()> {
    let (a, b) = window;
    let outside = (0..=200).map(|k| a * k as f64 / 200.0).chain((0..=200).map(|k| b + 3.0 * b * k as f64 / 200.0));
    for t in outside {
        if deriv(chi, t).abs() > 1e-12 {
            return Err(invalid("window", format!("chi' is nonzero at t = {t}, outside [{a}, {b}]")));
        }
    }
    Ok(())
}

/// `¼ E(χ∘mass)` by Monte Carlo against `E^θ(χ, χ)` by quadrature.
pub fn radial_form_mc(
    chi: &Expr,
    params: &IntensityParams,
    window: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<RadialFormReport> {
    check_window(window)?;
    check_profile(chi)?;
    check_support_in_window(chi, window)?;
    let u = radial(chi);
    let z = lambda_measure(params.theta, window.0, window.1);
    let samples = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mu = sample_mlp(params, window, &mut substream(seed, i))?;
            let g = u.gradient(&mu);
            let hor = g.hor.iter().flatten().fold(0.0f64, |m, h| m.max(h.abs()));
            Ok((form_integrand(&u, &mu), hor))
        })
        .collect::<Result<Vec<_>>>()?;
    let vals: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let mc = Estimate::from_samples(&vals).scaled(z / 4.0);
    let quad = quadrature_e_on(params.theta, chi, window, QuadGrid::default())?;
    Ok(RadialFormReport {
        verdict: mc.agrees_with(quad, 3.0),
        mc,
        quad,
        max_horizontal: samples.iter().fold(0.0, |m, s| m.max(s.1)),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionReport {
    pub form_u: Estimate,
    pub form_rad: Estimate,
    /// Paired estimate of `E(u) - E(u^rad)`.
    pub difference: Estimate,
    /// `difference >= -3 SE`
    pub holds: bool,
}

/// `∫ f dν` for polynomial fields of degree at most 2.
fn base_integral(f: &ScalarField, params: &IntensityParams) -> Result<f64> {
    let mean = params.base.mean();
    let dot = |b: &[f64]| b.iter().zip(&mean).map(|(x, y)| x * y).sum::<f64>();
    match f {
        ScalarField::Constant(c) => Ok(*c),
        ScalarField::Linear { a, b } => Ok(dot(a) + b),
        ScalarField::Quadratic { a, b, c } => Ok(a + dot(b) + c * params.base.second_moment()),
        _ => Err(invalid("f", "radialization needs a constant, linear or quadratic field")),
    }
}

/// `u = χ(μM) · f⋆μ` against its radialization `u^rad = χ(μM) · μM · ν(f)`,
/// both evaluated on the same windowed samples.
pub fn radial_contraction(
    chi: &Expr,
    f: &ScalarField,
    params: &IntensityParams,
    window: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<ContractionReport> {
    check_window(window)?;
    check_profile(chi)?;
    if f.dim().is_some_and(|d| d != params.base.dim()) {
        return Err(Error::DimensionMismatch(params.base.dim(), f.dim().unwrap_or(0)));
    }
    let nu_f = base_integral(f, params)?;
    let u = CylinderFunction::new(
        Expr::Mul(Box::new(chi.clone()), Box::new(Expr::Var(1))),
        vec![Kernel::mass(), Kernel::Plain(f.clone())],
    )?;
    let u_rad = radial(&Expr::Mul(
        Box::new(chi.clone()),
        Box::new(Expr::Mul(Box::new(Expr::Var(0)), Box::new(Expr::Const(nu_f)))),
    ));
    let z = lambda_measure(params.theta, window.0, window.1);
    let pairs = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mu = sample_mlp(params, window, &mut substream(seed, i))?;
            Ok((form_integrand(&u, &mu), form_integrand(&u_rad, &mu)))
        })
        .collect::<Result<Vec<_>>>()?;
    let est =
        |f: &dyn Fn(&(f64, f64)) -> f64| Estimate::from_samples(&pairs.iter().map(f).collect::<Vec<_>>()).scaled(z);
    let difference = est(&|p| p.0 - p.1);
    Ok(ContractionReport {
        form_u: est(&|p| p.0),
        form_rad: est(&|p| p.1),
        holds: difference.mean >= -3.0 * difference.se,
        difference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_measures::BaseMeasure;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(src: &str) -> Expr {
        Expr::parse(src).unwrap()
    }

    #[test]
    fn absorbing_zero_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = simulate_besq(0.0, 0.0, 1.0, 0.01, &mut rng).unwrap();
        assert!(p.x.iter().all(|&x| x == 0.0));
        assert_eq!(p.t.len(), 101);
        assert_eq!(*p.t.last().unwrap(), 1.0);
        assert!(simulate_besq(1.0, 1.0, 1.0, 0.2, &mut rng).is_err());
    }

    #[test]
    fn exact_and_euler_moments_agree() {
        let euler = moment_check(1.5, 0.7, 1.0, 1e-2, Scheme::FullTruncationEuler, 4000, 11).unwrap();
        let exact = moment_check(1.5, 0.7, 1.0, 1e-1, Scheme::ExactTransition, 4000, 12).unwrap();
        assert!(euler.passed && exact.passed, "{euler:?} {exact:?}");
        assert_eq!(exact.clipped_fraction, 0.0);
    }

    #[test]
    fn clipping_vanishes_as_dt_shrinks() {
        let coarse = moment_check(1.0, 0.05, 1.0, 0.05, Scheme::FullTruncationEuler, 2000, 5).unwrap();
        let fine = moment_check(1.0, 0.05, 1.0, 0.001, Scheme::FullTruncationEuler, 2000, 5).unwrap();
        assert!(fine.clipped_fraction < coarse.clipped_fraction);
    }

    #[test]
    fn hitting_prob_oracles() {
        let (a, b) = (0.5, 8.0);
        assert!((hitting_prob(1.0, a, (a * b).sqrt(), b).unwrap() - 0.5).abs() < 1e-15);
        assert!(hitting_prob(0.7, 0.5, 1.0, 1e12).unwrap() > 0.99);
        assert_eq!(hitting_prob(0.7, 0.5, 1.0, f64::INFINITY).unwrap(), 1.0);
        let lim = 2f64.powf(-1.0);
        assert!((hitting_prob(2.0, 0.5, 1.0, 1e9).unwrap() - lim).abs() < 1e-8);
        assert!(hitting_prob(2.0, 1.0, 0.5, 2.0).is_err());
    }

    #[test]
    fn quadrature_closed_forms() {
        for theta in [0.5, 1.0, 2.5] {
            let q = quadrature_e(theta, &e("exp(-v0)"), f64::INFINITY).unwrap();
            let exact = theta / 2f64.powf(theta + 1.0);
            assert!((q - exact).abs() < 1e-10 * exact, "{theta}: {q} vs {exact}");
            let q2 = quadrature_e_on(theta, &e("exp(-v0)"), (0.0, f64::INFINITY), QuadGrid { power: 2.0 }).unwrap();
            assert!((q - q2).abs() < 1e-10 * exact);
        }
        assert_eq!(quadrature_e(1.0, &e("3"), 10.0).unwrap(), 0.0);
    }

    #[test]
    fn symmetry_special_cases() {
        let f = e("bump(v0, 0.5, 1.5)");
        let g = e("bump(v0, 2, 3)");
        let r = generator_symmetry(1.3, &f, &g, (0.5, 3.0)).unwrap();
        assert!(r.energy.abs() < 1e-15 && r.pairing.abs() < 1e-15);
        let r = generator_symmetry(0.8, &f, &f, (0.5, 1.5)).unwrap();
        assert!(r.residual <= 1e-9 * r.scale, "{r:?}");
    }

    #[test]
    fn hypergeometric_values() {
        assert_eq!(hyp0f1(1.7, 0.0, 1e-16).unwrap(), 1.0);
        // 0F1(;1/2; z^2/4) = cosh z
        let z: f64 = 1.3;
        assert!((hyp0f1(0.5, z * z / 4.0, 1e-16).unwrap() - z.cosh()).abs() < 1e-14);
        assert!(hyp0f1(-2.0, 1.0, 1e-16).is_err());
        // 0F~1(;-1;z) = z^2 0F~1(;3;z)
        let lhs = hyp0f1_regularized(-1.0, 0.8, 1e-17).unwrap();
        let rhs = 0.64 * hyp0f1_regularized(3.0, 0.8, 1e-17).unwrap();
        assert!((lhs - rhs).abs() < 1e-14 * rhs, "{lhs} {rhs}");
        for theta in [0.3, 1.0, 2.0, 3.5] {
            for t in [0.5, 1.0, 2.0] {
                let (r0, r1) = eigen_residuals(theta, t).unwrap();
                assert!(r0 < 1e-12 && r1 < 1e-12, "{theta} {t}: {r0} {r1}");
            }
        }
    }

    #[test]
    fn constant_profiles_give_zero_forms() {
        let params = IntensityParams::new(1.5, BaseMeasure::unit_ball(2)).unwrap();
        let r = radial_form_mc(&e("2"), &params, (1.0, 2.0), 50, 1).unwrap();
        assert_eq!(r.mc.mean, 0.0);
        assert_eq!(r.quad, 0.0);
        let u = CylinderFunction::new(e("5"), vec![Kernel::mass()]).unwrap();
        assert_eq!(dirichlet_form_mc(&u, &params, (1.0, 2.0), 50, 1).unwrap().mean, 0.0);
        assert!(radial_form_mc(&e("v0"), &params, (1.0, 2.0), 50, 1).is_err());
    }
}
