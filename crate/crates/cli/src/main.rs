use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;
use swlab_cli::report::{self, FieldKind, IdentityRequest, MultiplierKind, Quantity};
use swlab_cli::run::{self, MANIFEST};
use swlab_cli::{error_json, exit_code, RunConfig, EXIT_MISMATCH};
use swlab_core::{Error, Result};

#[derive(Parser)]
#[command(name = "swlab", version, about = "Semilinear waves on the Schwarzschild exterior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one configuration into its output directory.
    Evolve {
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every point of the configuration's sweep grid.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker cap; SWLAB_WORKERS is used when absent.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Halve h repeatedly and report the observed order.
    Converge {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The exponent threshold p₀ of the Morawetz multiplier.
    MorawetzThreshold {
        #[arg(long, default_value_t = 1.0)]
        m: f64,
    },
    /// Exponent certificate for a nonlinearity power p.
    Exponents {
        #[arg(long)]
        p: f64,
    },
    /// Finite-difference check of a divergence identity.
    VerifyIdentity {
        #[arg(long, value_enum, default_value_t = Mult::Ta)]
        multiplier: Mult,
        #[arg(long, value_enum, default_value_t = Field::Gaussian)]
        field: Field,
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        #[arg(long, default_value_t = 3.0)]
        p: f64,
        /// Coefficient of the nonlinear potential in the current (0 or 1).
        #[arg(long, default_value_t = 1)]
        k: u8,
        #[arg(long, default_value_t = 1.5)]
        gamma: f64,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[arg(long, default_value_t = 60)]
        points: usize,
        #[arg(long, default_value_t = 1000)]
        closed_form_points: usize,
    },
    /// Power-law fit of a recorded quantity (phi@<r>, flux@<gamma>, energy@<name>).
    Fit {
        run_dir: PathBuf,
        quantity: String,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [200.0, 2000.0])]
        window: Vec<f64>,
    },
    /// Re-execute a manifest and compare CSV checksums.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mult {
    Killing,
    Ta,
    Rpw,
}

#[derive(Clone, Copy, ValueEnum)]
enum Field {
    Gaussian,
    PolyBump,
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    println!("{s}");
    Ok(())
}

fn load(config: &PathBuf, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(o) = out {
        cfg.output = o;
    }
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Evolve { config, out } => {
            let man = run::run_evolution(&load(&config, out)?)?;
            print(&serde_json::json!({ "output": man.config.output, "summary": man.summary, "files": man.files }))?;
        }
        Command::Sweep { config, out, workers } => {
            let cfg = load(&config, out)?;
            let rows = run::sweep(&cfg, run::worker_count(workers))?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            print(&serde_json::json!({ "summary": cfg.output.join("summary.csv"), "rows": rows.len(), "failed": failed }))?;
        }
        Command::Converge { config, levels, out } => print(&run::converge(&load(&config, out)?, levels)?)?,
        Command::MorawetzThreshold { m } => print(&report::threshold(m)?)?,
        Command::Exponents { p } => print(&report::exponents(p)?)?,
        Command::VerifyIdentity { multiplier, field, m, p, k, gamma, h, points, closed_form_points } => {
            let req = IdentityRequest {
                multiplier: match multiplier {
                    Mult::Killing => MultiplierKind::Killing,
                    Mult::Ta => MultiplierKind::Ta,
                    Mult::Rpw => MultiplierKind::Rpw,
                },
                field: match field {
                    Field::Gaussian => FieldKind::Gaussian,
                    Field::PolyBump => FieldKind::PolyBump,
                },
                m,
                p,
                k,
                gamma,
                h,
                points,
                closed_form_points,
            };
            print(&report::verify_identity(&req)?)?;
        }
        Command::Fit { run_dir, quantity, window } => {
            let q: Quantity = quantity.parse()?;
            print(&report::fit(&run_dir, &q, (window[0], window[1]))?)?;
        }
        Command::Rerun { manifest, out } => {
            let out = match out {
                Some(o) => o,
                None => manifest.parent().map(|d| d.join("rerun")).unwrap_or_else(|| PathBuf::from("rerun")),
            };
            let manifest = if manifest.is_dir() { manifest.join(MANIFEST) } else { manifest };
            let rep = run::rerun(&manifest, &out)?;
            print(&rep)?;
            if !rep.identical {
                return Ok(EXIT_MISMATCH);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
