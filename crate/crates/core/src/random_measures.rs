//! Random measures: Dirichlet–Ferguson, Gamma, and the multiplicative
//! infinite-dimensional Lebesgue measure `L_{θ,ν}`, with Monte-Carlo checks
//! of their Mecke identities and invariance properties.
//!
//! `L_{θ,ν}` is σ-finite; its radial part is `dλ_θ(t) = t^{θ-1} dt / Γ(θ)`.
//! Expectations against it are computed either on a mass window (exact
//! restriction, normalizer `λ_θ([a,b])`) or by reweighting Gamma samples with
//! `dL = e^{μM} dG`, where `G` has `Gamma(θ, 1)` mass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::measure::DiscreteMeasure;

/// Diffuse probability measure `ν` on `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseMeasure {
    UniformBall { center: Vec<f64>, radius: f64 },
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl BaseMeasure {
    pub fn unit_ball(dim: usize) -> Self {
        BaseMeasure::UniformBall { center: vec![0.0; dim], radius: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseMeasure::UniformBall { center, .. } => center.len(),
            BaseMeasure::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            BaseMeasure::UniformBall { center, radius } => {
                let d = center.len();
                let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                center.iter().zip(&g).map(|(c, v)| c + r * v / norm).collect()
            }
            BaseMeasure::Gaussian { mean, std } => {
                mean.iter().map(|m| m + std * rng.sample::<f64, _>(StandardNormal)).collect()
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            BaseMeasure::UniformBall { center, .. } => center.clone(),
            BaseMeasure::Gaussian { mean, .. } => mean.clone(),
        }
    }

    /// `∫ |x|^2 dν`
    pub fn second_moment(&self) -> f64 {
        match self {
            BaseMeasure::UniformBall { center, radius } => {
                let d = center.len() as f64;
                center.iter().map(|c| c * c).sum::<f64>() + radius * radius * d / (d + 2.0)
            }
            BaseMeasure::Gaussian { mean, std } => {
                mean.iter().map(|m| m * m).sum::<f64>() + mean.len() as f64 * std * std
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (dim, scale) = match self {
            BaseMeasure::UniformBall { center, radius } => (center.len(), *radius),
            BaseMeasure::Gaussian { mean, std } => (mean.len(), *std),
        };
        if dim == 0 || !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("base", "needs dimension >= 1 and a positive scale"));
        }
        Ok(())
    }
}

/// Concentration of the simplicial (shape) part of `L_{θ,ν}` and of the Gamma measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concentration {
    /// Sticks `Beta(1, 1)`.
    Unit,
    /// Sticks `Beta(1, θ)`.
    Theta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityParams {
    pub theta: f64,
    pub base: BaseMeasure,
    pub concentration: Concentration,
    /// Stick-breaking stops once the unbroken stick is shorter than this.
    pub trunc_tol: f64,
}

impl IntensityParams {
    pub fn new(theta: f64, base: BaseMeasure) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(invalid("theta", format!("{theta} must be > 0")));
        }
        base.validate()?;
        Ok(Self { theta, base, concentration: Concentration::Theta, trunc_tol: 1e-10 })
    }

    pub fn with_concentration(mut self, c: Concentration) -> Self {
        self.concentration = c;
        self
    }

    fn stick_beta(&self) -> f64 {
        match self.concentration {
            Concentration::Unit => 1.0,
            Concentration::Theta => self.theta,
        }
    }
}

/// Independent, reproducible stream `index` of generator `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `Beta(1, β)` by inversion: `1 - U^{1/β}`.
fn beta_1(beta: f64, rng: &mut (impl Rng + ?Sized)) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    1.0 - u.powf(1.0 / beta)
}

/// Stick-breaking weights with `Beta(1, β)` sticks; the leftover stick (shorter
/// than `trunc_tol`) goes to one last atom.
fn stick_weights(beta: f64, trunc_tol: f64, rng: &mut (impl Rng + ?Sized)) -> Vec<f64> {
    let mut weights = Vec::new();
    let mut rest = 1.0;
    while rest >= trunc_tol {
        let w = rest * beta_1(beta, rng);
        if w > 0.0 {
            weights.push(w);
        }
        rest -= w;
    }
    if rest > 0.0 {
        weights.push(rest);
    }
    weights
}

/// A `DF_{βν}` sample.
pub fn sample_df<R: Rng + ?Sized>(
    base: &BaseMeasure,
    beta: f64,
    trunc_tol: f64,
    rng: &mut R,
) -> Result<DiscreteMeasure> {
    if !(beta > 0.0) {
        return Err(invalid("beta", format!("{beta} must be > 0")));
    }
    if !(trunc_tol > 0.0 && trunc_tol < 1.0) {
        return Err(invalid("trunc_tol", "must lie in (0, 1)"));
    }
    let weights = stick_weights(beta, trunc_tol, rng);
    let points = weights.iter().map(|_| base.sample(rng)).collect();
    DiscreteMeasure::new(base.dim(), points, weights)
}

/// `λ_θ([a, b]) = (b^θ - a^θ) / Γ(θ + 1)`.
pub fn lambda_measure(theta: f64, a: f64, b: f64) -> f64 {
    (b.powf(theta) - a.powf(theta)) / gamma(theta + 1.0)
}

pub(crate) fn check_window(window: (f64, f64)) -> Result<()> {
    let (a, b) = window;
    if !(a > 0.0 && b > a && b.is_finite()) {
        return Err(invalid("window", format!("need 0 < a < b, got [{a}, {b}]")));
    }
    Ok(())
}

/// A draw from `λ_θ` restricted and normalized to `[a, b]`.
pub fn sample_lambda_window<R: Rng + ?Sized>(theta: f64, window: (f64, f64), rng: &mut R) -> Result<f64> {
    check_window(window)?;
    let (a, b) = window;
    let (at, bt) = (a.powf(theta), b.powf(theta));
    let u: f64 = rng.random();
    Ok((at + u * (bt - at)).powf(1.0 / theta).clamp(a, b))
}

/// A draw from `L_{θ,ν}` restricted to masses in `window`, normalized by
/// `λ_θ(window)`.
pub fn sample_mlp<R: Rng + ?Sized>(
    params: &IntensityParams,
    window: (f64, f64),
    rng: &mut R,
) -> Result<DiscreteMeasure> {
    let m = sample_lambda_window(params.theta, window, rng)?;
    sample_df(&params.base, params.stick_beta(), params.trunc_tol, rng)?.scale(m)
}

/// A Gamma random measure: `Gamma(θ, 1)` mass times an independent shape.
pub fn sample_gamma_measure<R: Rng + ?Sized>(params: &IntensityParams, rng: &mut R) -> Result<DiscreteMeasure> {
    let g = Gamma::new(params.theta, 1.0).map_err(|e| invalid("theta", e.to_string()))?;
    let m = g.sample(rng);
    sample_df(&params.base, params.stick_beta(), params.trunc_tol, rng)?.scale(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Law {
    Df,
    Gamma,
    Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleBatch {
    pub measures: Vec<DiscreteMeasure>,
    /// Importance weights making the batch represent the target law.
    pub weights: Vec<f64>,
    pub law: Law,
    pub seed: u64,
    pub window: Option<(f64, f64)>,
}

/// `n` samples, sample `i` drawn from [`substream`]`(seed, i)`; identical for
/// any thread count.
///
/// For `Law::Gamma` the weights are `e^{μM}` so the batch represents `L_{θ,ν}`;
/// for `Law::Mlp` they are `λ_θ(window)`; `Law::Df` uses `β = θ` and unit weights.
pub fn sample_batch(
    params: &IntensityParams,
    law: Law,
    window: Option<(f64, f64)>,
    n: usize,
    seed: u64,
) -> Result<SampleBatch> {
    if law == Law::Mlp {
        check_window(window.ok_or_else(|| invalid("window", "required for mlp samples"))?)?;
    }
    let measures = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            match law {
                Law::Df => sample_df(&params.base, params.theta, params.trunc_tol, &mut rng),
                Law::Gamma => sample_gamma_measure(params, &mut rng),
                Law::Mlp => sample_mlp(params, window.unwrap(), &mut rng),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = match law {
        Law::Df => vec![1.0; n],
        Law::Gamma => measures.iter().map(|m| m.total_mass().exp()).collect(),
        Law::Mlp => {
            let (a, b) = window.unwrap();
            vec![lambda_measure(params.theta, a, b); n]
        }
    };
    Ok(SampleBatch { measures, weights, law, seed, window })
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { mean, se: (var / n as f64).sqrt(), n }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self { mean: self.mean * c, se: self.se * c.abs(), n: self.n }
    }

    /// `|mean - value| <= k · se`
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.se
    }
}

/// Two Monte-Carlo estimates of the two sides of an identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidatorReport {
    pub lhs: f64,
    pub rhs: f64,
    pub se_lhs: f64,
    pub se_rhs: f64,
    pub n: usize,
    /// `|lhs - rhs| <= 3 √(se_lhs² + se_rhs²)`
    pub verdict: bool,
}

impl ValidatorReport {
    pub fn new(lhs: Estimate, rhs: Estimate) -> Self {
        let tol = 3.0 * (lhs.se.powi(2) + rhs.se.powi(2)).sqrt();
        Self {
            lhs: lhs.mean,
            rhs: rhs.mean,
            se_lhs: lhs.se,
            se_rhs: rhs.se,
            n: lhs.n.min(rhs.n),
            verdict: (lhs.mean - rhs.mean).abs() <= tol,
        }
    }
}

pub(crate) fn par_estimate(n: usize, seed: u64, f: impl Fn(&mut ChaCha8Rng) -> Result<f64> + Sync) -> Result<Estimate> {
    let xs = (0..n as u64).into_par_iter().map(|i| f(&mut substream(seed, i))).collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&xs))
}

/// Seeds for the two sides of a check are split so the estimates are independent.
pub(crate) fn side_seeds(seed: u64) -> (u64, u64) {
    (seed, seed ^ 0x9E37_79B9_7F4A_7C15)
}

pub type DfIntegrand = dyn Fn(&DiscreteMeasure, &[f64], f64) -> f64 + Sync;

/// Both sides of the Mecke identity of `DF_{βν}`:
/// `E Σ_i w_i F(η, x_i, w_i)` against `E F((1-t)η + tδ_x, x, t)` with
/// `x ~ ν`, `t ~ Beta(1, β)`.
pub fn mecke_check_df(
    f: &DfIntegrand,
    beta: f64,
    params: &IntensityParams,
    n: usize,
    seed: u64,
) -> Result<ValidatorReport> {
    let (s0, s1) = side_seeds(seed);
    let lhs = par_estimate(n, s0, |rng| {
        let eta = sample_df(&params.base, beta, params.trunc_tol, rng)?;
        Ok(eta.atoms().map(|(x, w)| w * f(&eta, x, w)).sum())
    })?;
    let rhs = par_estimate(n, s1, |rng| {
        let eta = sample_df(&params.base, beta, params.trunc_tol, rng)?;
        let x = params.base.sample(rng);
        let t = beta_1(beta, rng);
        let shifted = eta.scale(1.0 - t)?.add(&DiscreteMeasure::dirac(x.clone(), t)?)?;
        Ok(f(&shifted, &x, t))
    })?;
    Ok(ValidatorReport::new(lhs, rhs))
}

pub type MlpIntegrand = dyn Fn(f64, &[f64]) -> f64 + Sync;

/// `∫_0^cap e^{-2s} h(s, x) ds` by adaptive Gauss–Kronrod.
pub fn damped_stick_integral(h: &MlpIntegrand, x: &[f64], cap: f64) -> f64 {
    crate::quad::integrate(|s| (-2.0 * s).exp() * h(s, x), 0.0, cap, 1e-11, 1e-14).0
}

/// Both sides of the Mecke identity of `L_{θ,ν}` for `F(μ, s, x) = e^{-2μM} h(s, x)`,
/// estimated over Gamma samples via `dL = e^{μM} dG`:
///
/// ```text
/// lhs = E_G[e^{-μM} Σ_i w_i h(w_i, x_i)]
/// rhs = θ E_G[e^{-μM} ∫_0^cap e^{-2s} h(s, x) ds],   x ~ ν
/// ```
///
/// `h` must vanish for `s > cap`.
pub fn mecke_check_mlp(
    h: &MlpIntegrand,
    cap: f64,
    params: &IntensityParams,
    n: usize,
    seed: u64,
) -> Result<ValidatorReport> {
    if !(cap > 0.0) {
        return Err(invalid("cap", "must be > 0"));
    }
    let (s0, s1) = side_seeds(seed);
    let lhs = par_estimate(n, s0, |rng| {
        let mu = sample_gamma_measure(params, rng)?;
        let damp = (-mu.total_mass()).exp();
        Ok(damp * mu.atoms().map(|(x, w)| w * h(w, x)).sum::<f64>())
    })?;
    let rhs = par_estimate(n, s1, |rng| {
        let mu = sample_gamma_measure(params, rng)?;
        let x = params.base.sample(rng);
        Ok(params.theta * (-mu.total_mass()).exp() * damped_stick_integral(h, &x, cap))
    })?;
    Ok(ValidatorReport::new(lhs, rhs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// Largest relative defect of `λ_θ([0, r/c]) = c^{-θ} λ_θ([0, r])` over the tested `(c, r)`.
    pub homogeneity_defect: f64,
    /// `∫ u(e^a μ) dL` against `e^{-θ ∫ a dν} ∫ u dL` for a traceless `a`.
    pub multiplier_traceless: ValidatorReport,
    /// Same with a shifted `a`; the prefactor is then `e^{-θ · shift}`.
    pub multiplier_shifted: ValidatorReport,
    pub shifted_prefactor: f64,
    /// Damped moment of `(μ + μ')M` for `μ ~ L_θ`, `μ' ~ L_τ` against `∫ e^{-2t} dλ_{θ+τ}`.
    pub convolution: ValidatorReport,
    pub convolution_exact: f64,
    pub tau: f64,
}

fn mass_cutoff(mass: f64, r: f64) -> f64 {
    crate::expr::cutoff_profile(2.0 * mass / r)
}

/// Runs the homogeneity, multiplier and convolution checks on Gamma-reweighted samples.
///
/// The test function is `u(μ) = ς(2μM/r) e^{-∫|x|^2 dμ}`, supported in `{μM <= r}`;
/// the multipliers are `k = e^a` with `a(x) = 0.5 x_1` (traceless for a centred
/// symmetric `ν`) and `a + 0.3`.
pub fn invariance_checks(params: &IntensityParams, tau: f64, n: usize, seed: u64) -> Result<InvarianceReport> {
    if !(tau > 0.0) {
        return Err(invalid("tau", "must be > 0"));
    }
    let theta = params.theta;
    let mut defect: f64 = 0.0;
    for &c in &[0.5, 2.0, 3.7] {
        for &r in &[0.3, 1.0, 5.0] {
            let lhs = lambda_measure(theta, 0.0, r / c);
            let rhs = c.powf(-theta) * lambda_measure(theta, 0.0, r);
            defect = defect.max((lhs - rhs).abs() / rhs);
        }
    }
    let r = 3.0;
    let u = |mu: &DiscreteMeasure| {
        mass_cutoff(mu.total_mass(), r) * (-mu.integrate(|x| x.iter().map(|v| v * v).sum())).exp()
    };
    let mean_a = |shift: f64| shift + 0.5 * params.base.mean()[0];
    let multiplier = |shift: f64, seed: u64| -> Result<ValidatorReport> {
        let (s0, s1) = side_seeds(seed);
        let lhs = par_estimate(n, s0, |rng| {
            let mu = sample_gamma_measure(params, rng)?;
            let weights = mu.atoms().map(|(x, w)| w * (shift + 0.5 * x[0]).exp()).collect();
            Ok(mu.total_mass().exp() * u(&mu.with_weights(weights)?))
        })?;
        let rhs = par_estimate(n, s1, |rng| {
            let mu = sample_gamma_measure(params, rng)?;
            Ok(mu.total_mass().exp() * u(&mu))
        })?;
        Ok(ValidatorReport::new(lhs, rhs.scaled((-theta * mean_a(shift)).exp())))
    };
    let multiplier_traceless = multiplier(0.0, seed)?;
    let multiplier_shifted = multiplier(0.3, seed.wrapping_add(1))?;
    let other = IntensityParams { theta: tau, ..params.clone() };
    let (s0, s1) = side_seeds(seed.wrapping_add(2));
    let conv = par_estimate(n, s0, |rng| {
        let mu = sample_gamma_measure(params, rng)?;
        let nu = sample_gamma_measure(&other, rng)?;
        let sum = mu.add(&nu)?;
        // weight e^{(μ+μ')M} times the damped integrand e^{-2(μ+μ')M}
        Ok((-sum.total_mass()).exp())
    })?;
    let summed = IntensityParams { theta: theta + tau, ..params.clone() };
    let direct = par_estimate(n, s1, |rng| {
        let mu = sample_gamma_measure(&summed, rng)?;
        Ok((-mu.total_mass()).exp())
    })?;
    Ok(InvarianceReport {
        homogeneity_defect: defect,
        multiplier_traceless,
        multiplier_shifted,
        shifted_prefactor: (-theta * mean_a(0.3)).exp(),
        convolution: ValidatorReport::new(conv, direct),
        convolution_exact: 2f64.powf(-(theta + tau)),
        tau,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntensityEstimate {
    /// `∫ μM e^{-μM} dQ`
    pub theta_hat: f64,
    pub theta_se: f64,
    /// `k_1 = ∫ e^{-μM} dQ`
    pub k1_hat: f64,
    pub k1_se: f64,
    /// `∫ (∫ x dμ) e^{-μM} dQ / theta_hat`: the mean of the normalized intensity.
    pub nu_mean: Vec<f64>,
    pub nu_mean_se: Vec<f64>,
    pub effective_sample_size: f64,
    /// Set when every sample is the zero measure.
    pub degenerate: bool,
}

/// Recovers `(θ, ν)` of a projectively invariant law from an importance-weighted batch.
pub fn estimate_intensity(batch: &SampleBatch) -> Result<IntensityEstimate> {
    let n = batch.measures.len();
    let wsum: f64 = batch.weights.iter().sum();
    let w2sum: f64 = batch.weights.iter().map(|w| w * w).sum();
    if n == 0 || !(wsum > 0.0) || batch.weights.len() != n {
        return Err(Error::ZeroEffectiveSampleSize);
    }
    let ess = wsum * wsum / w2sum;
    let masses: Vec<f64> = batch.measures.iter().map(DiscreteMeasure::total_mass).collect();
    let theta_terms: Vec<f64> = masses.iter().zip(&batch.weights).map(|(m, w)| w * m * (-m).exp()).collect();
    let k1_terms: Vec<f64> = masses.iter().zip(&batch.weights).map(|(m, w)| w * (-m).exp()).collect();
    let theta = Estimate::from_samples(&theta_terms);
    let k1 = Estimate::from_samples(&k1_terms);
    let degenerate = masses.iter().all(|&m| m == 0.0);
    let dim = batch.measures[0].dim();
    let mut nu_mean = vec![0.0; dim];
    let mut nu_mean_se = vec![0.0; dim];
    if !degenerate {
        for k in 0..dim {
            let terms: Vec<f64> = batch
                .measures
                .iter()
                .zip(&batch.weights)
                .map(|(mu, w)| w * (-mu.total_mass()).exp() * mu.integrate(|x| x[k]))
                .collect();
            let e = Estimate::from_samples(&terms);
            nu_mean[k] = e.mean / theta.mean;
            nu_mean_se[k] = e.se / theta.mean;
        }
    }
    Ok(IntensityEstimate {
        theta_hat: theta.mean,
        theta_se: theta.se,
        k1_hat: k1.mean,
        k1_se: k1.se,
        nu_mean,
        nu_mean_se,
        effective_sample_size: ess,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(theta: f64) -> IntensityParams {
        IntensityParams::new(theta, BaseMeasure::unit_ball(2)).unwrap()
    }

    #[test]
    fn df_samples_are_probabilities_in_the_ball() {
        let mut rng = substream(1, 0);
        for _ in 0..100 {
            let eta = sample_df(&BaseMeasure::unit_ball(2), 2.0, 1e-10, &mut rng).unwrap();
            assert!((eta.total_mass() - 1.0).abs() < 1e-12);
            assert!(eta.points().iter().all(|x| x.iter().map(|v| v * v).sum::<f64>() <= 1.0));
            assert!(eta.weights().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn stick_residual_is_below_tolerance() {
        let mut rng = substream(2, 0);
        for _ in 0..100 {
            let w = stick_weights(3.0, 1e-6, &mut rng);
            assert!(*w.last().unwrap() < 1e-6 || w.len() == 1);
        }
    }

    #[test]
    fn lambda_window_law() {
        let mut rng = substream(3, 0);
        let (a, b, theta) = (0.5, 3.0, 2.5);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_lambda_window(theta, (a, b), &mut rng).unwrap()).collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |t: f64| (t.powf(theta) - a.powf(theta)) / (b.powf(theta) - a.powf(theta));
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (cdf(x) - i as f64 / n as f64).abs().max((cdf(x) - (i + 1) as f64 / n as f64).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / (n as f64).sqrt(), "KS = {ks}");
        assert!(sample_lambda_window(1.0, (2.0, 1.0), &mut rng).is_err());
    }

    #[test]
    fn lambda_measure_closed_form() {
        assert!((lambda_measure(1.0, 1.0, 3.0) - 2.0).abs() < 1e-14);
        assert!((lambda_measure(2.0, 0.0, 2.0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn batches_are_reproducible() {
        let p = params(1.5);
        let a = sample_batch(&p, Law::Mlp, Some((1.0, 4.0)), 50, 9).unwrap();
        let b = sample_batch(&p, Law::Mlp, Some((1.0, 4.0)), 50, 9).unwrap();
        assert_eq!(a.measures, b.measures);
        assert!(a.measures.iter().all(|m| (1.0..=4.0).contains(&m.total_mass())));
    }

    #[test]
    fn mecke_df_trivial_integrand() {
        let rep = mecke_check_df(&|_, _, _| 1.0, 2.0, &params(2.0), 2000, 4).unwrap();
        assert!((rep.lhs - 1.0).abs() < 1e-12 && (rep.rhs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mecke_mlp_zero_integrand() {
        let rep = mecke_check_mlp(&|_, _| 0.0, 1.0, &params(2.0), 100, 4).unwrap();
        assert_eq!((rep.lhs, rep.rhs), (0.0, 0.0));
        assert!(rep.verdict);
    }

    #[test]
    fn damped_integral_closed_form() {
        let cap = 1.3;
        let h = move |s: f64, _: &[f64]| if s <= cap { s } else { 0.0 };
        let exact = 0.25 - (-2.0 * cap).exp() * (2.0 * cap + 1.0) / 4.0;
        assert!((damped_stick_integral(&h, &[0.0], cap) - exact).abs() < 1e-12);
    }

    #[test]
    fn zero_measure_batch_is_degenerate() {
        let batch = SampleBatch {
            measures: vec![DiscreteMeasure::zero(1); 10],
            weights: vec![1.0; 10],
            law: Law::Gamma,
            seed: 0,
            window: None,
        };
        let est = estimate_intensity(&batch).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.theta_hat, 0.0);
        let empty = SampleBatch { measures: vec![], weights: vec![], ..batch };
        assert!(matches!(estimate_intensity(&empty), Err(Error::ZeroEffectiveSampleSize)));
    }
}
