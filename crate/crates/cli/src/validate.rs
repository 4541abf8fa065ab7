//! `validate <suite>`: each suite runs a set of checks and reports value,
//! tolerance and verdict for every one.

use anyhow::Result;
use clap::ValueEnum;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use hkgeom::bessel::{
    eigen_residuals, generator_symmetry, hitting_frequency, hitting_prob, moment_check, radial_contraction,
    radial_form_mc, Scheme,
};
use hkgeom::cylinder::{
    analytic_pairing, horizontal_norm, perturbation_derivative, slope_probe, tangent_norm_14, truncation_slope,
    truncation_slope_bound, vertical_norm, CylinderFunction, Kernel, ProbeMetric, ScalarField,
};
use hkgeom::expr::Expr;
use hkgeom::io::{json_f64, measure_from_json};
use hkgeom::let_solver::{lift_to_cone, verify_optimality};
use hkgeom::random_measures::{
    estimate_intensity, invariance_checks, mecke_check_df, mecke_check_mlp, sample_batch, substream, BaseMeasure,
    IntensityParams, Law, ValidatorReport,
};
use hkgeom::{solve_let, DiscreteMeasure, LetKind, LetProblem};

use crate::commands::{emit, limits_report};
use crate::config::Settings;
use crate::Outcome;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Suite {
    Duality,
    MeckeDf,
    MeckeMlp,
    Invariance,
    Gradient,
    Slope,
    Bessel,
    RadialIso,
    Limits,
}

#[derive(Default)]
struct Report {
    checks: Vec<Value>,
}

impl Report {
    fn push(&mut self, name: &str, value: f64, tolerance: f64, pass: bool, detail: Value) {
        let mut c = json!({
            "name": name,
            "value": json_f64(value),
            "tolerance": json_f64(tolerance),
            "pass": pass,
        });
        if !detail.is_null() {
            c["detail"] = detail;
        }
        self.checks.push(c);
    }

    /// Passes when `value <= tolerance`.
    fn at_most(&mut self, name: &str, value: f64, tolerance: f64) {
        self.push(name, value, tolerance, value <= tolerance, Value::Null);
    }

    /// Two-sided Monte-Carlo agreement within three combined standard errors.
    fn agree(&mut self, name: &str, r: &ValidatorReport) {
        let tol = 3.0 * (r.se_lhs.powi(2) + r.se_rhs.powi(2)).sqrt();
        let detail = json!({ "lhs": r.lhs, "rhs": r.rhs, "se_lhs": r.se_lhs, "se_rhs": r.se_rhs, "n": r.n });
        self.push(name, (r.lhs - r.rhs).abs(), tol, r.verdict, detail);
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c["pass"] == json!(true))
    }
}

pub fn run(s: &Settings, suite: Suite) -> Result<Outcome> {
    let mut r = Report::default();
    match suite {
        Suite::Duality => duality(s, &mut r)?,
        Suite::MeckeDf => mecke_df(s, &mut r)?,
        Suite::MeckeMlp => mecke_mlp(s, &mut r)?,
        Suite::Invariance => invariance(s, &mut r)?,
        Suite::Gradient => gradient(s, &mut r)?,
        Suite::Slope => slope(s, &mut r)?,
        Suite::Bessel => bessel(s, &mut r)?,
        Suite::RadialIso => radial_iso(s, &mut r)?,
        Suite::Limits => limits(s, &mut r)?,
    }
    let passed = r.passed();
    let name = suite.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    let report = json!({
        "suite": name,
        "passed": passed,
        "checks": r.checks,
        "config": s.resolved(),
    });
    emit(s, &serde_json::to_string_pretty(&report)?)?;
    Ok(if passed { Outcome::Ok } else { Outcome::ChecksFailed })
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn random_measure(rng: &mut ChaCha8Rng, dim: usize, max_atoms: usize, spread: f64) -> Result<DiscreteMeasure> {
    let n = rng.random_range(1..=max_atoms);
    let points = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-spread..spread)).collect()).collect();
    let weights = (0..n).map(|_| log_uniform(rng, 0.1, 3.0)).collect();
    Ok(DiscreteMeasure::new(dim, points, weights)?)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn duality(s: &Settings, r: &mut Report) -> Result<()> {
    let n = s.count("n", 20)?;
    let dim = s.count("dim", 2)?;
    let tol = s.positive("tol", 1e-6)?;
    let seed = s.seed()?;
    let (mut gap, mut cond, mut marg) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        let mut rng = substream(seed, i as u64);
        let mu0 = random_measure(&mut rng, dim, 10, 1.5)?;
        let mu1 = random_measure(&mut rng, dim, 10, 1.5)?;
        let kind = if i % 2 == 0 { LetKind::Ghk } else { LetKind::Hk };
        let p = LetProblem::euclidean(&mu0, &mu1, kind, 1.0)?;
        let sol = solve_let(&p, tol.min(1e-9))?;
        gap = gap.max(sol.gap / (1.0 + sol.primal_value.abs()));
        let cert = verify_optimality(&p, &sol, tol);
        cond = cond.max(cert.lower_bound_violation).max(cert.support_violation);
        let (m0, m1) = lift_to_cone(&p, &sol)?.homogeneous_marginals(mu0.len(), mu1.len());
        for (got, want) in m0.iter().zip(mu0.weights()).chain(m1.iter().zip(mu1.weights())) {
            marg = marg.max((got - want).abs());
        }
    }
    r.at_most("relative duality gap", gap, tol);
    r.at_most("sigma conditions", cond, tol);
    r.at_most("cone marginals", marg, 1e-8);
    Ok(())
}

fn mecke_df(s: &Settings, r: &mut Report) -> Result<()> {
    let beta = s.positive("beta", 1.0)?;
    let dim = s.count("dim", 2)?;
    let n = s.count("n", 100_000)?;
    let seed = s.seed()?;
    let params = IntensityParams::new(beta, BaseMeasure::unit_ball(dim))?;
    let rep = mecke_check_df(&|_, _, t| t, beta, &params, n, seed)?;
    let exact = 1.0 / (1.0 + beta);
    r.push(
        "E sum w_i^2 = 1/(1+beta)",
        (rep.lhs - exact).abs(),
        3.0 * rep.se_lhs,
        (rep.lhs - exact).abs() <= 3.0 * rep.se_lhs,
        json!({ "estimate": rep.lhs, "se": rep.se_lhs, "exact": exact }),
    );
    r.agree("two-sided identity", &rep);
    Ok(())
}

fn mecke_mlp(s: &Settings, r: &mut Report) -> Result<()> {
    let theta = s.positive("theta", 2.0)?;
    let dim = s.count("dim", 2)?;
    let n = s.count("n", 100_000)?;
    let seed = s.seed()?;
    let params = IntensityParams::new(theta, BaseMeasure::unit_ball(dim))?;
    let h1 = |w: f64, x: &[f64]| if w <= 2.0 { w * (1.0 + x[0]) } else { 0.0 };
    let h2 = |w: f64, x: &[f64]| if w <= 1.0 { w * w * (-x.iter().map(|v| v * v).sum::<f64>()).exp() } else { 0.0 };
    r.agree("h = s(1+x1) on s <= 2", &mecke_check_mlp(&h1, 2.0, &params, n, seed)?);
    r.agree("h = s^2 exp(-|x|^2) on s <= 1", &mecke_check_mlp(&h2, 1.0, &params, n, seed.wrapping_add(1))?);
    Ok(())
}

fn invariance(s: &Settings, r: &mut Report) -> Result<()> {
    let theta = s.positive("theta", 1.5)?;
    let dim = s.count("dim", 2)?;
    let n = s.count("n", 60_000)?;
    let seed = s.seed()?;
    let params = IntensityParams::new(theta, BaseMeasure::unit_ball(dim))?;
    let rep = invariance_checks(&params, 0.7, n, seed)?;
    r.at_most("lambda_theta homogeneity", rep.homogeneity_defect, 1e-12);
    r.agree("traceless multiplier", &rep.multiplier_traceless);
    r.agree("shifted multiplier", &rep.multiplier_shifted);
    r.agree("convolution", &rep.convolution);
    let est = estimate_intensity(&sample_batch(&params, Law::Gamma, None, n / 3, seed.wrapping_add(7))?)?;
    r.push(
        "intensity estimate",
        (est.theta_hat - theta).abs(),
        3.0 * est.theta_se,
        (est.theta_hat - theta).abs() <= 3.0 * est.theta_se,
        json!({ "theta_hat": est.theta_hat, "se": est.theta_se }),
    );
    Ok(())
}

fn random_field(rng: &mut ChaCha8Rng) -> ScalarField {
    let v = |rng: &mut ChaCha8Rng| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    match rng.random_range(0..4) {
        0 => ScalarField::Linear { a: v(rng), b: rng.random_range(-1.0..1.0) },
        1 => ScalarField::GaussianBump {
            center: v(rng),
            width: rng.random_range(0.5..1.5),
            amp: rng.random_range(0.5..2.0),
        },
        2 => ScalarField::SplineBump {
            center: v(rng),
            radius: rng.random_range(1.5..3.0),
            amp: rng.random_range(0.5..2.0),
        },
        _ => ScalarField::Sine { freq: v(rng), phase: rng.random_range(0.0..3.0), amp: rng.random_range(0.5..2.0) },
    }
}

fn random_cylinder(rng: &mut ChaCha8Rng) -> Result<CylinderFunction> {
    let mut kernel = || {
        let f = random_field(rng);
        match rng.random_range(0..3) {
            0 => Kernel::Plain(f),
            1 => Kernel::MassTimes(f),
            _ => Kernel::Saturating(f),
        }
    };
    let a = CylinderFunction::new(Expr::Var(0), vec![kernel()])?;
    let b = CylinderFunction::new(Expr::Var(0), vec![kernel()])?;
    let u = match rng.random_range(0..3) {
        0 => a.product(&b),
        1 => a.product(&b).tanh(),
        _ => a.tanh().product(&b),
    };
    Ok(if rng.random_bool(0.5) { u.product(&CylinderFunction::truncation(rng.random_range(2.0..6.0))?) } else { u })
}

fn gradient(s: &Settings, r: &mut Report) -> Result<()> {
    let n = s.count("n", 50)?;
    let tol = s.positive("tol", 1e-4)?;
    let seed = s.seed()?;
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut rng = substream(seed, i as u64);
        let u = random_cylinder(&mut rng)?;
        let mu = random_measure(&mut rng, 2, 6, 1.5)?;
        let t1: Vec<Vec<f64>> =
            (0..mu.len()).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let t2: Vec<f64> = (0..mu.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact = analytic_pairing(&u.gradient(&mu), &mu, &t1, &t2)?;
        let fd = perturbation_derivative(&u, &mu, &t1, &t2, &[1e-3, 5e-4, 2.5e-4])?;
        worst = worst.max(rel(fd, exact));
    }
    r.at_most("gradient vs extrapolated finite differences", worst, tol);
    Ok(())
}

fn slope(s: &Settings, r: &mut Report) -> Result<()> {
    let n = s.count("n", 12)?;
    let seed = s.seed()?;
    let (mut upper, mut lower) = (0.0f64, f64::INFINITY);
    for i in 0..n {
        let mut rng = substream(seed, i as u64);
        let u = random_cylinder(&mut rng)?;
        let mu = random_measure(&mut rng, 2, 4, 1.0)?;
        let g = u.gradient(&mu);
        let metric = [ProbeMetric::Hk, ProbeMetric::He, ProbeMetric::W][i % 3];
        let norm = match metric {
            ProbeMetric::Hk => tangent_norm_14(&g, &mu)?,
            ProbeMetric::He => vertical_norm(&g, &mu)?,
            ProbeMetric::W => horizontal_norm(&g, &mu)?,
        };
        if norm < 1e-6 {
            continue;
        }
        let random = slope_probe(&u, &mu, metric, 20, false, &mut rng)?;
        let optimal = slope_probe(&u, &mu, metric, 0, true, &mut rng)?;
        upper = upper.max(random.max(optimal) / norm);
        lower = lower.min(optimal / norm);
    }
    r.at_most("max probe / tangent norm", upper, 1.05);
    r.push("optimal probe / tangent norm", lower, 0.90, lower >= 0.90, json!("lower bound"));
    let mut rng = substream(seed, n as u64);
    for k in [1.0, 4.0, 16.0] {
        let bound = truncation_slope_bound(k);
        let sup = (0..=4000).map(|j| truncation_slope(k, 2.0 * k * j as f64 / 4000.0)).fold(0.0, f64::max);
        let mu = DiscreteMeasure::new(2, vec![vec![0.0, 0.0], vec![0.7, -0.2]], vec![0.9 * k, 0.6 * k])?;
        let probe = slope_probe(&CylinderFunction::truncation(k)?, &mu, ProbeMetric::Hk, 10, true, &mut rng)?;
        r.at_most(&format!("truncation slope, k = {k}"), sup.max(probe), bound);
    }
    Ok(())
}

fn bessel(s: &Settings, r: &mut Report) -> Result<()> {
    let theta = s.positive("theta", 1.0)?;
    let x0 = s.positive("x0", 1.0)?;
    let horizon = s.positive("T", 1.0)?;
    let dt = s.f64_in("dt", 1e-3, |v| v > 0.0 && v <= horizon / 10.0, "0 < dt <= T/10")?;
    let paths = s.count("paths", 10_000)?;
    let seed = s.seed()?;
    let m = moment_check(theta, x0, horizon, dt, Scheme::FullTruncationEuler, paths, seed)?;
    for (name, est, exact) in [("mean", m.mean, m.exact_mean), ("variance", m.var, m.exact_var)] {
        let d = (est.mean - exact).abs();
        r.push(
            &format!("terminal {name}"),
            d,
            3.0 * est.se,
            d <= 3.0 * est.se,
            json!({ "estimate": est.mean, "exact": exact }),
        );
    }
    r.push("clipped step fraction", m.clipped_fraction, f64::INFINITY, true, json!("reported only"));
    let (a, b) = (x0 / 2.0, 2.0 * x0);
    let est = hitting_frequency(theta, a, x0, b, dt, paths, seed.wrapping_add(1))?;
    let p = hitting_prob(theta, a, x0, b)?;
    r.push(
        "hitting frequency vs scale function",
        (est.mean - p).abs(),
        3.0 * est.se,
        (est.mean - p).abs() <= 3.0 * est.se,
        json!({ "frequency": est.mean, "exact": p, "bracket": [a, x0, b] }),
    );
    let f = Expr::parse("bump(v0, 0.5, 2.5)")?;
    let g = Expr::parse("bump(v0, 1, 3) * (1 + v0)")?;
    let mut worst = 0.0f64;
    for (u, v) in [(&f, &f), (&f, &g), (&g, &f)] {
        let sym = generator_symmetry(theta, u, v, (0.5, 3.0))?;
        worst = worst.max(sym.residual / sym.scale);
    }
    r.at_most("generator symmetry", worst, 1e-7);
    let mut eig = 0.0f64;
    for t in [0.5, 1.0, 2.0] {
        let (r0, r1) = eigen_residuals(theta, t)?;
        eig = eig.max(r0).max(r1);
    }
    r.at_most("0F1 eigenfunction residual", eig, 1e-8);
    Ok(())
}

fn radial_iso(s: &Settings, r: &mut Report) -> Result<()> {
    let theta = s.positive("theta", 1.5)?;
    let window = s.window((1.0, 2.0))?;
    let dim = s.count("dim", 2)?;
    let n = s.count("n", 100_000)?;
    let seed = s.seed()?;
    let params = IntensityParams::new(theta, BaseMeasure::unit_ball(dim))?;
    let chi = Expr::parse(&format!("bump(v0, {}, {})", window.0, window.1))?;
    let rep = radial_form_mc(&chi, &params, window, n, seed)?;
    let d = (rep.mc.mean - rep.quad).abs();
    r.push(
        "quarter Monte-Carlo form vs quadrature",
        d,
        3.0 * rep.mc.se,
        rep.verdict,
        json!({ "mc": rep.mc.mean, "se": rep.mc.se, "quadrature": rep.quad }),
    );
    r.at_most("horizontal gradient of a radial function", rep.max_horizontal, 0.0);
    let mut rng = substream(seed, u64::MAX);
    let width = window.1 - window.0;
    for i in 0..5u64 {
        let lo = window.0 + rng.random_range(0.0..0.3) * width;
        let hi = window.1 - rng.random_range(0.0..0.3) * width;
        let chi = Expr::parse(&format!("bump(v0, {lo}, {hi})"))?;
        let f = ScalarField::Quadratic {
            a: rng.random_range(-1.0..1.0),
            b: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            c: rng.random_range(-1.0..1.0),
        };
        let c = radial_contraction(&chi, &f, &params, (lo, hi), (n / 5).max(1), seed.wrapping_add(i + 1))?;
        r.push(
            &format!("radial projection contracts, u #{i}"),
            -c.difference.mean,
            3.0 * c.difference.se,
            c.holds,
            json!({ "form_u": c.form_u.mean, "form_rad": c.form_rad.mean }),
        );
    }
    Ok(())
}

const FIXTURE_A: &str = include_str!("../fixtures/limits_a.json");
const FIXTURE_B: &str = include_str!("../fixtures/limits_b.json");

fn limits(s: &Settings, r: &mut Report) -> Result<()> {
    let tol = s.positive("tol", 1e-10)?;
    let (a, b) = (measure_from_json(FIXTURE_A)?, measure_from_json(FIXTURE_B)?);
    let t = limits_report(&a, &b, tol)?;
    let rows = t["rows"].as_array().cloned().unwrap_or_default();
    let last = rows.last().cloned().unwrap_or(Value::Null);
    let he = t["hellinger_sq"].as_f64().unwrap_or(f64::NAN);
    let w = t["wasserstein_sq"].as_f64().unwrap_or(f64::NAN);
    let dilated = last["hk_dilated_sq"].as_f64().unwrap_or(f64::NAN);
    let contracted = last["hk_contracted_sq"].as_f64().unwrap_or(f64::NAN);
    let worst_drop = |key: &str| {
        let vals: Vec<f64> = rows.iter().filter_map(|row| row[key].as_f64()).collect();
        vals.windows(2).map(|w| (w[0] - w[1]) / (1.0 + w[0].abs())).fold(0.0, f64::max)
    };
    r.at_most("HK_(lambda d) largest relative decrease", worst_drop("hk_dilated_sq"), 1e-8);
    r.at_most("lambda^2 HK_(d/lambda) largest relative decrease", worst_drop("hk_contracted_sq"), 1e-8);
    r.at_most("HK_(64 d) vs He, relative", rel(dilated, he), 0.02);
    r.at_most("64^2 HK_(d/64) vs W, relative", rel(contracted, w), 0.02);
    r.checks.push(json!({ "name": "ladder", "pass": true, "detail": t }));
    Ok(())
}
