use std::error::Error as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ellpar_cli::{cmd_greedy, cmd_optimize, cmd_solve, CliError, ExperimentConfig};
use ellpar_core::Parameter;

#[derive(Parser)]
#[command(name = "ellpar", version, about = "Reduced-basis parameter estimation for a coupled elliptic-parabolic system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a certified reduced model with the weak greedy and test it on random parameters.
    Greedy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recover the parameter from synthetic data with the full-order and trust-region optimizers.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve once at a given parameter and dump the states.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated `mu1,mu2,mu3,mu4`.
        #[arg(long, value_parser = parse_mu)]
        mu: Parameter,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mu(s: &str) -> Result<Parameter, String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}"))).collect::<Result<_, _>>()?;
    let arr: [f64; 4] = v.try_into().map_err(|v: Vec<f64>| format!("expected 4 components, got {}", v.len()))?;
    Ok(Parameter(arr))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Greedy { config, out, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output.dir.clone());
            let r = cmd_greedy(&cfg, &out, seed.unwrap_or(cfg.seed))?;
            let rom = &r.result.rom;
            println!(
                "greedy: {} iterations, l = ({}, {}), m = ({}, {}), l_f = {}, sigma = ({:.3}, {:.3}){}",
                r.result.history.len(),
                rom.l_y(),
                rom.l_q(),
                rom.m_y(),
                rom.m_q(),
                rom.deim.len(),
                r.result.calibration.sigma_y,
                r.result.calibration.sigma_q,
                if r.result.capped { ", capped" } else { "" }
            );
            if let Some(s) = r.summary {
                println!("test set ({}): max errors ({:.3e}, {:.3e}), max efficiencies ({:.3}, {:.3})", s.count, s.max_e_y, s.max_e_q, s.max_eta_y, s.max_eta_q);
            }
            print_files(&r.files);
        }
        Command::Optimize { config, out, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output.dir.clone());
            let r = cmd_optimize(&cfg, &out, seed.unwrap_or(cfg.seed))?;
            for (name, res) in r.reference.iter().map(|x| ("FO", x)).chain(std::iter::once(("TR-RB", &r.tr.result))) {
                println!(
                    "{name:>6}: mu = {}, iterations {}, FOM evaluations {}, e_rel {}, {:.2} s",
                    res.mu_opt,
                    res.iterations,
                    res.fom_evaluations,
                    res.e_rel.map(|e| format!("{e:.4}")).unwrap_or_else(|| "-".into()),
                    res.elapsed.as_secs_f64()
                );
            }
            print_files(&r.files);
        }
        Command::Solve { config, mu, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output.dir.clone());
            let r = cmd_solve(&cfg, &mu, &out)?;
            println!("solve at {mu}: {} Newton iterations, y in [{:.6}, {:.6}]", r.fom_newton_iterations, r.min_y, r.max_y);
            if let Some((ey, eq)) = r.rom_errors {
                println!("reduced model errors: y {ey:.3e}, q {eq:.3e}");
            }
            print_files(&r.files);
        }
    }
    Ok(())
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("  wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = e.source();
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
