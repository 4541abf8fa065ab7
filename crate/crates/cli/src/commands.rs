use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use hkgeom::bessel::{simulate_ensemble, Scheme};
use hkgeom::io::{batch_to_jsonl, json_f64, paths_to_csv, potentials_to_csv, read_measure, write_measure};
use hkgeom::let_solver::limit_diagnostics;
use hkgeom::measure::hellinger_sq;
use hkgeom::potentials::{legendre_pair, BallDensity};
use hkgeom::random_measures::{sample_batch, BaseMeasure, IntensityParams, Law};
use hkgeom::regularize::{mollify as mollify_measure, MollifierConfig};
use hkgeom::transport::wasserstein_sq;
use hkgeom::{solve_let, DiscreteMeasure, Error, LetKind, LetProblem};

use crate::config::Settings;
use crate::Outcome;

pub fn read(path: &Path) -> Result<DiscreteMeasure> {
    read_measure(path).with_context(|| format!("reading measure {}", path.display()))
}

/// `println!` that treats a closed pipe as success.
pub fn print(text: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

/// Writes `text` to `--out`, or stdout.
pub fn emit(s: &Settings, text: &str) -> Result<()> {
    match s.out() {
        Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {p}")),
        None => print(text),
    }
}

fn emit_json(s: &Settings, v: &Value) -> Result<()> {
    emit(s, &serde_json::to_string_pretty(v)?)
}

/// Streams into `--out` or stdout.
fn with_writer(s: &Settings, f: impl FnOnce(&mut dyn Write) -> hkgeom::Result<()>) -> Result<()> {
    match s.out() {
        Some(p) => {
            let mut w = BufWriter::new(File::create(&p).with_context(|| format!("creating {p}"))?);
            f(&mut w)?;
            w.flush()?;
        }
        None => f(&mut std::io::stdout().lock())?,
    }
    Ok(())
}

fn tol(s: &Settings) -> Result<f64> {
    s.positive("tol", 1e-9)
}

pub fn dist(s: &Settings, a: &Path, b: &Path) -> Result<Outcome> {
    let metric = s.choice("metric", &["ghk", "hk", "he", "w2"])?;
    let tol = tol(s)?;
    let (mu0, mu1) = (read(a)?, read(b)?);
    let start = Instant::now();
    let mut outcome = Outcome::Ok;
    let (value, gap) = match metric {
        "he" => (hellinger_sq(&mu0, &mu1)?, None),
        "w2" => (wasserstein_sq(&mu0, &mu1)?, None),
        _ => {
            let kind = if metric == "ghk" { LetKind::Ghk } else { LetKind::Hk };
            match solve_let(&LetProblem::euclidean(&mu0, &mu1, kind, 1.0)?, tol) {
                Ok(sol) => (sol.primal_value, Some(sol.gap)),
                Err(Error::NonConvergence { solution: Some(sol), gap, .. }) => {
                    outcome = Outcome::NonConvergence;
                    (sol.primal_value, Some(gap))
                }
                Err(e) => return Err(e.into()),
            }
        }
    };
    let mut report = json!({
        "metric": metric,
        "value": json_f64(value),
        "runtime_ms": start.elapsed().as_secs_f64() * 1e3,
    });
    if let Some(g) = gap {
        report["gap"] = json_f64(g);
    }
    report["config"] = s.resolved();
    emit_json(s, &report)?;
    Ok(outcome)
}

fn default_spacing(dim: usize) -> f64 {
    if dim == 1 {
        0.01
    } else {
        0.1
    }
}

pub fn potentials(s: &Settings, mu_path: &Path) -> Result<Outcome> {
    let mu = read(mu_path)?;
    let dim = mu.dim();
    let eps = s.positive("eps", 0.2)?;
    let spacing = s.positive("spacing", default_spacing(dim))?;
    let radius = s.positive("radius", 1.0)?;
    let mass = s.positive("mass", 1.0)?;
    let tol = tol(s)?;
    let nu = BallDensity::uniform(dim, radius, spacing, mass)?;
    let cfg = MollifierConfig::auto(eps, dim, Some(spacing))?;
    let pp = match legendre_pair(&nu, &mu, &cfg, tol) {
        Ok(pp) => pp,
        Err(e @ Error::NonConvergence { .. }) => {
            eprintln!("error: {e}");
            return Ok(Outcome::NonConvergence);
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(p) = s.out() {
        let file = File::create(&p).with_context(|| format!("creating {p}"))?;
        potentials_to_csv(&pp, BufWriter::new(file))?;
    }
    let report = json!({
        "k_bound": pp.k_bound,
        "psi_at_zero": pp.psi_at_zero,
        "q_sup": pp.q_sup,
        "q_lip": pp.q_lip,
        "psi_lip": pp.psi_lip,
        "duality_value": pp.duality_value,
        "let_value": pp.let_value,
        "fenchel_young_slack": json_f64(pp.fenchel_young_slack()),
        "conjugation_rounds": pp.conjugation_rounds,
        "config": s.resolved(),
    });
    print(&serde_json::to_string_pretty(&report)?)?;
    Ok(Outcome::Ok)
}

pub fn mollify(s: &Settings, mu_path: &Path) -> Result<Outcome> {
    let mu = read(mu_path)?;
    let eps = s.positive("eps", 0.2)?;
    let spacing = s.positive("spacing", default_spacing(mu.dim()))?;
    let tmu = mollify_measure(&mu, &MollifierConfig::auto(eps, mu.dim(), Some(spacing))?)?;
    match s.out() {
        Some(p) => write_measure(Path::new(&p), &tmu).with_context(|| format!("writing {p}"))?,
        None => print(&serde_json::to_string(&tmu)?)?,
    }
    Ok(Outcome::Ok)
}

pub fn simulate_besq(s: &Settings) -> Result<Outcome> {
    let theta = s.f64_in("theta", 1.0, |v| v >= 0.0 && v.is_finite(), ">= 0")?;
    let x0 = s.f64_in("x0", 1.0, |v| v >= 0.0 && v.is_finite(), ">= 0")?;
    let horizon = s.positive("T", 1.0)?;
    let dt = s.positive("dt", 1e-3)?;
    let paths = s.count("paths", 100)?;
    let scheme = match s.choice("scheme", &["euler", "exact"])? {
        "euler" => Scheme::FullTruncationEuler,
        _ => Scheme::ExactTransition,
    };
    let seed = s.seed()?;
    let ensemble = simulate_ensemble(theta, x0, horizon, dt, scheme, paths, seed)?;
    with_writer(s, |w| paths_to_csv(&ensemble, w))?;
    Ok(Outcome::Ok)
}

pub fn sample(s: &Settings, law: Law) -> Result<Outcome> {
    let dim = s.count("dim", 1)?;
    let theta = match law {
        Law::Df => s.positive("beta", 1.0)?,
        _ => s.positive("theta", 1.0)?,
    };
    let window = match law {
        Law::Mlp => Some(s.window((1.0, 2.0))?),
        _ => None,
    };
    let n = s.count("n", 100)?;
    let seed = s.seed()?;
    let params = IntensityParams::new(theta, BaseMeasure::unit_ball(dim))?;
    let batch = sample_batch(&params, law, window, n, seed)?;
    with_writer(s, |w| batch_to_jsonl(&batch, w))?;
    Ok(Outcome::Ok)
}

pub fn limits(s: &Settings, a: &Path, b: &Path) -> Result<Outcome> {
    let (mu0, mu1) = (read(a)?, read(b)?);
    let tol = tol(s)?;
    let report = limits_report(&mu0, &mu1, tol)?;
    emit_json(s, &json!({ "table": report, "config": s.resolved() }))?;
    Ok(Outcome::Ok)
}

pub const LAMBDAS: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

pub fn limits_report(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, tol: f64) -> Result<Value> {
    let t = limit_diagnostics(mu0, mu1, &LAMBDAS, tol)?;
    let rows: Vec<Value> = t
        .rows
        .iter()
        .map(
            |r| json!({ "lambda": r.lambda, "hk_dilated_sq": r.hk_dilated_sq, "hk_contracted_sq": r.hk_contracted_sq }),
        )
        .collect();
    Ok(json!({
        "rows": rows,
        "hellinger_sq": t.hellinger_sq,
        "wasserstein_sq": json_f64(t.wasserstein_sq),
        "dilated_monotone": t.dilated_monotone,
        "contracted_monotone": t.contracted_monotone,
    }))
}
