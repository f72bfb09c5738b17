//! Batch front end: `solve` and `verify` runs driven by a JSON config,
//! and `barrier` profile tabulation. Exit codes are the cross-process
//! contract: 0 success, 2 config or argument error, 3 acausal boundary
//! data, 4 nonconvergence, 5 probe failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use maxgraph::barrier::{self, BarrierParams};
use maxgraph::config::{self, RunConfig};
use maxgraph::Error;

#[derive(Parser)]
#[command(name = "maxgraph", version, about = "Dirichlet solver for spacelike maximal graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Dirichlet problem described by a config file
    Solve(ConfigArgs),
    /// Solve, then run the verification probe suite from the config
    Verify(ConfigArgs),
    /// Tabulate a barrier profile and its shape spectrum as CSV
    Barrier(BarrierArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct BarrierArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long = "K")]
    k: f64,
    #[arg(long = "Lambda", allow_hyphen_values = true)]
    lambda: f64,
    #[arg(long)]
    samples: usize,
    /// table cap; defaults to 10 K for Lambda = 0 and the admissible
    /// radius otherwise
    #[arg(long = "r-max")]
    r_max: Option<f64>,
}

fn main() -> ExitCode {
    config::init_threads();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Barrier(args) => cmd_barrier(&args),
    };
    ExitCode::from(code)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => 2,
        Error::Acausal { .. } => 3,
        Error::Nonconvergence { .. } => 4,
        _ => 1,
    }
}

fn report_error(err: &Error) -> u8 {
    match err {
        Error::Acausal { mu0 } => eprintln!("error: boundary data is not acausal (mu0 = {mu0})"),
        Error::Nonconvergence { last_t, .. } => {
            eprintln!("error: {err} (last good t = {last_t})")
        }
        _ => eprintln!("error: {err}"),
    }
    exit_code_for(err)
}

fn cmd_solve(args: &ConfigArgs) -> u8 {
    let cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    match config::run_solve(&cfg) {
        Ok(art) => {
            println!(
                "solved: t = {}, residual_inf = {:.3e}, min_margin = {:.3e}",
                art.state.t, art.state.residual_inf, art.state.min_margin
            );
            0
        }
        Err(e) => report_error(&e),
    }
}

fn cmd_verify(args: &ConfigArgs) -> u8 {
    let cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    match config::run_verify(&cfg) {
        Ok((_, outcomes, all_passed)) => {
            for o in &outcomes {
                println!(
                    "{}",
                    serde_json::json!({
                        "probe": o.name,
                        "passed": o.passed,
                        "detail": o.detail,
                    })
                );
            }
            if all_passed {
                0
            } else {
                5
            }
        }
        Err(e) => report_error(&e),
    }
}

fn cmd_barrier(args: &BarrierArgs) -> u8 {
    if args.samples < 2 {
        eprintln!("error: need at least 2 samples");
        return 2;
    }
    let params = match BarrierParams::new(
        args.n,
        args.k,
        args.lambda,
        vec![0.0; args.n],
        vec![0.0; args.m.max(1)],
    ) {
        Ok(p) => p,
        Err(e) => return report_error(&e),
    };
    let r_end = match args.r_max {
        Some(r) => {
            if r <= 0.0 || r >= params.r_max {
                eprintln!(
                    "error: --r-max must lie in (0, {}) for these parameters",
                    params.r_max
                );
                return 2;
            }
            r
        }
        None => {
            if params.r_max.is_finite() {
                params.r_max * (1.0 - 1e-9)
            } else {
                10.0 * args.k
            }
        }
    };
    println!("r,f,f_prime,c1,c2,c3");
    for i in 0..args.samples {
        let r = r_end * i as f64 / (args.samples - 1) as f64;
        if r == 0.0 {
            // apex limits: f(0) = 0; the slope tends to 1 for n >= 2 and to
            // K/sqrt(1+K^2) for n = 1; the sphere values blow up
            let fp0 = if args.n >= 2 {
                1.0
            } else {
                args.k / (1.0 + args.k * args.k).sqrt()
            };
            let c3 = if args.n == 1 {
                -args.lambda
            } else {
                f64::INFINITY
            };
            println!(
                "{:.16e},{:.16e},{:.16e},{},{},{}",
                0.0,
                0.0,
                fp0,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
                c3
            );
            continue;
        }
        let f = barrier::f_eval(&params, r).expect("admissible radius");
        let fp = barrier::f_prime(&params, r).expect("admissible radius");
        let spec = barrier::shape_spectrum(&params, r).expect("admissible radius");
        println!(
            "{r:.16e},{f:.16e},{fp:.16e},{:.16e},{:.16e},{:.16e}",
            spec.c1, spec.c2, spec.c3
        );
    }
    0
}
