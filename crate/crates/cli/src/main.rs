//! `matweight` command-line driver.
//!
//! Exit codes: 0 all checks pass, 2 a numeric check failed, 3 bad config.

mod commands;
mod config;
mod expr;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{CharArgs, Output, SolveArgs};
use config::{pick, settings, Common, FamilyArgs, FileConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
}

impl From<matweight::Error> for CliError {
    fn from(e: matweight::Error) -> Self {
        use matweight::Error as E;
        match e {
            E::InvalidGrid(_) | E::Exponent(_) | E::InvalidConstant(_) | E::Dimension(_) | E::UnknownFamily(_) | E::Parameter(_) | E::Parse(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numeric(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "matweight", version, about = "Matrix weights, degenerate Sobolev spaces and mappings of finite distortion")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Characteristic constant of a weight family with its refinement trace.
    Characteristic {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
        /// ap, a1, rh, a-inf, doubling, a-star (ladder above --p) or
        /// matrix-ap (default: matrix-ap for matrix families, ap otherwise).
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        s: Option<f64>,
        /// Which scalar of the induced pair: w or v.
        #[arg(long)]
        weight: Option<String>,
        #[arg(long)]
        shifted: bool,
        /// finite or diverging; exit 2 on mismatch.
        #[arg(long)]
        expect: Option<String>,
    },
    /// Balance-condition scan of the pair induced by a family.
    Balance {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
        /// holds or fails; exit 2 on mismatch.
        #[arg(long)]
        expect: Option<String>,
    },
    /// Pair maximal function, continuity set and weak-type check.
    Maximal {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        radius_start: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Distortion analysis and continuity pipeline of a mapping.
    Mfd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        s: Option<f64>,
        /// analytic or finite-difference.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        radius_start: Option<f64>,
    },
    /// Dirichlet problem for the degenerate p-Laplacian.
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        p: Option<f64>,
        /// Boundary data in x, y (z), e.g. "x^2 - y^2".
        #[arg(long, allow_hyphen_values = true)]
        boundary: Option<String>,
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Run the check bundle of a registered example.
    VerifyExample {
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.cmd {
        Cmd::Characteristic { common, family, kind, p, s, weight, shifted, expect } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let set = settings(&common, &family, &file, 128)?;
            let args = CharArgs {
                kind: kind.or(file.kind.clone()),
                p: pick(&p, &file.p, 2.0),
                s: pick(&s, &file.s, 2.0),
                weight: pick(&weight, &file.weight, "v".into()),
                shifted,
                expect: expect.or(file.expect.clone()),
            };
            commands::characteristic(&set, &args, &Output { dir: common.out.as_deref() })
        }
        Cmd::Balance { common, family, p, q, expect } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let set = settings(&common, &family, &file, 256)?;
            let p = pick(&p, &file.p, 2.0);
            let q = pick(&q, &file.q, 2.0 * p);
            commands::balance(&set, p, q, &expect.or(file.expect.clone()), &Output { dir: common.out.as_deref() })
        }
        Cmd::Maximal { common, family, radius_start, tolerance } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let set = settings(&common, &family, &file, 128)?;
            let r = pick(&radius_start, &file.radius_start, 0.5);
            let tol = commands::defaults_tol(&file.tolerance, &tolerance);
            commands::maximal(&set, r, tol, &Output { dir: common.out.as_deref() })
        }
        Cmd::Mfd { common, family, t, s, mode, radius_start } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let set = settings(&common, &family, &file, 128)?;
            let mode = commands::mode(&pick(&mode, &file.mode, "analytic".into()))?;
            let r = pick(&radius_start, &file.radius_start, 0.5);
            commands::mfd(&set, pick(&t, &file.t, 1.5), pick(&s, &file.s, 2.0), mode, r, &Output { dir: common.out.as_deref() })
        }
        Cmd::Solve { common, family, p, boundary, epsilons, max_iter } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let set = settings(&common, &family, &file, 64)?;
            let args = SolveArgs {
                p: pick(&p, &file.p, 2.0),
                boundary: pick(&boundary, &file.boundary, "x".into()),
                epsilons: epsilons.or(file.epsilons.clone()),
                max_iter: max_iter.or(file.max_iter),
            };
            commands::run_solve(&set, &args, &Output { dir: common.out.as_deref() })
        }
        Cmd::VerifyExample { name, seed, out } => {
            let checks = verify::run(&name, seed.unwrap_or(0))?;
            for c in &checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let ok = checks.iter().all(|c| c.pass);
            if let Some(d) = out {
                matweight::io::write_json(&d.join("report.json"), &json!({ "command": "verify-example", "example": name, "checks": checks, "pass": ok }))?;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(3)
        }
        Err(CliError::Numeric(m)) => {
            eprintln!("numeric failure: {m}");
            ExitCode::from(2)
        }
    }
}
