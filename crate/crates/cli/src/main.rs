//! `hkgeom` command line.
//!
//! Exit codes: 0 success, 1 malformed input or config, 2 solver
//! non-convergence (the value is still printed), 3 a validation check failed.

mod commands;
mod config;
mod validate;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::Settings;

#[derive(Parser)]
#[command(name = "hkgeom", version, about = "Hellinger-Kantorovich geometry on discrete measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

/// Every option may also be set as `key = value` in the `--config` file.
#[derive(Args, Default)]
struct Opts {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// ghk, hk, he or w2
    #[arg(long, global = true)]
    metric: Option<String>,
    #[arg(long, global = true)]
    theta: Option<String>,
    #[arg(long, global = true)]
    beta: Option<String>,
    #[arg(long, global = true)]
    eps: Option<String>,
    #[arg(long, global = true)]
    tol: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    n: Option<String>,
    /// Mass window `a,b`
    #[arg(long, global = true)]
    window: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    x0: Option<String>,
    /// Time horizon
    #[arg(long = "T", global = true)]
    horizon: Option<String>,
    #[arg(long, global = true)]
    dt: Option<String>,
    #[arg(long, global = true)]
    paths: Option<String>,
    /// euler or exact
    #[arg(long, global = true)]
    scheme: Option<String>,
    #[arg(long, global = true)]
    dim: Option<String>,
    /// Radius of the reference ball for `potentials`
    #[arg(long, global = true)]
    radius: Option<String>,
    /// Grid spacing for `potentials` and `mollify`
    #[arg(long, global = true)]
    spacing: Option<String>,
    /// Mass of the reference measure for `potentials`
    #[arg(long, global = true)]
    mass: Option<String>,
}

impl Opts {
    fn flags(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("metric", &self.metric),
            ("theta", &self.theta),
            ("beta", &self.beta),
            ("eps", &self.eps),
            ("tol", &self.tol),
            ("seed", &self.seed),
            ("n", &self.n),
            ("window", &self.window),
            ("out", &self.out),
            ("x0", &self.x0),
            ("T", &self.horizon),
            ("dt", &self.dt),
            ("paths", &self.paths),
            ("scheme", &self.scheme),
            ("dim", &self.dim),
            ("radius", &self.radius),
            ("spacing", &self.spacing),
            ("mass", &self.mass),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Squared distance between two measure files (JSON or CSV)
    Dist { a: PathBuf, b: PathBuf },
    /// Legendre potentials of GHK(ν, T_ε μ) with ν uniform on a ball
    Potentials { mu: PathBuf },
    /// The mollified measure T_ε μ
    Mollify { mu: PathBuf },
    /// Run a validation suite and print a JSON report
    Validate { suite: validate::Suite },
    /// Simulate a process
    Simulate {
        #[command(subcommand)]
        process: Process,
    },
    /// Sample random measures as JSON lines
    Sample { law: SampleLaw },
    /// Scaling ladders HK_{λd} and λ²HK_{d/λ} for λ = 1, 2, .., 64
    Limits { a: PathBuf, b: PathBuf },
}

#[derive(Subcommand)]
enum Process {
    /// Squared Bessel paths as CSV
    Besq,
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleLaw {
    Df,
    Gamma,
    Mlp,
}

/// What a successful run reports back to the shell.
pub enum Outcome {
    Ok,
    NonConvergence,
    ChecksFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NonConvergence) => ExitCode::from(2),
        Ok(Outcome::ChecksFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let file = match &cli.opts.config {
        Some(p) => config::load_config(p)?,
        None => BTreeMap::new(),
    };
    let s = Settings::new(file, cli.opts.flags());
    match cli.command {
        Command::Dist { a, b } => commands::dist(&s, &a, &b),
        Command::Potentials { mu } => commands::potentials(&s, &mu),
        Command::Mollify { mu } => commands::mollify(&s, &mu),
        Command::Validate { suite } => validate::run(&s, suite),
        Command::Simulate { process: Process::Besq } => commands::simulate_besq(&s),
        Command::Sample { law } => commands::sample(
            &s,
            match law {
                SampleLaw::Df => hkgeom::random_measures::Law::Df,
                SampleLaw::Gamma => hkgeom::random_measures::Law::Gamma,
                SampleLaw::Mlp => hkgeom::random_measures::Law::Mlp,
            },
        ),
        Command::Limits { a, b } => commands::limits(&s, &a, &b),
    }
}
