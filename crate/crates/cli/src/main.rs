use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mdx_core::experiment::{run_eval, run_flops, run_gradcheck, run_train, ExperimentConfig};
use mdx_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NON_FINITE: u8 = 3;
const EXIT_CHECKPOINT: u8 = 4;
const EXIT_GRADCHECK: u8 = 5;

#[derive(Parser)]
#[command(name = "mdx", version, about = "Train and evaluate the learned MU-MIMO receiver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the receiver; writes loss.csv and checkpoint.mdxc.
    Train(Common),
    /// Evaluate receivers over the SNR sweep; writes eval_<receiver>.csv.
    Eval(Common),
    /// Parameter and multiplication counts; writes flops.json and flops.csv.
    Flops(Common),
    /// Finite-difference gradient checks of every operation and the model.
    Gradcheck(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::NonFinite { .. } => EXIT_NON_FINITE,
        Error::Format(_) => EXIT_CHECKPOINT,
        _ => EXIT_USAGE,
    }
}

fn load(c: &Common) -> Result<(ExperimentConfig, u64), Error> {
    let cfg = ExperimentConfig::load(&c.config)?;
    let seed = c.seed.unwrap_or(cfg.seed);
    Ok((cfg, seed))
}

fn show(out: &Path, name: &str) -> String {
    out.join(name).display().to_string()
}

fn run(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Train(c) => {
            let (cfg, seed) = load(&c)?;
            let res = run_train(&cfg, seed, &c.out)?;
            if let Some(last) = res.records.last() {
                println!("iteration {} loss {:.6}", last.iteration, last.loss);
            }
            println!("wrote {} and {}", res.loss_csv.display(), res.checkpoint.display());
        }
        Command::Eval(c) => {
            let (cfg, seed) = load(&c)?;
            for f in run_eval(&cfg, seed, &c.out)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Flops(c) => {
            let (cfg, seed) = load(&c)?;
            let r = run_flops(&cfg, seed, &c.out)?;
            println!("param_count {}", r.param_count);
            for k in &r.configurations {
                println!(
                    "{}x{} {:?} {} PRB: {:.4} G mults ({:.4} G mul-add)",
                    k.n_rx,
                    k.n_tx,
                    k.modulation,
                    k.prbs,
                    k.total_mults as f64 * 1e-9,
                    k.total_mul_add as f64 * 1e-9
                );
            }
            println!("wrote {}", show(&c.out, "flops.csv"));
        }
        Command::Gradcheck(c) => {
            let (cfg, seed) = load(&c)?;
            let results = run_gradcheck(&cfg, seed)?;
            let mut failed = Vec::new();
            for r in &results {
                let ok = r.passed();
                println!(
                    "{:<28} max rel err {:.3e} (tol {:.0e}) {}",
                    r.name,
                    r.rel_error,
                    r.tolerance,
                    if ok { "ok" } else { "FAIL" }
                );
                if !ok {
                    failed.push(r.name.clone());
                }
            }
            if !failed.is_empty() {
                eprintln!("gradient check failed: {}", failed.join(", "));
                return Ok(EXIT_GRADCHECK);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
