use std::path::PathBuf;
use std::process::ExitCode;

use acc_cli::config::{self, Mode};
use acc_cli::error::RunError;
use acc_cli::output;
use acc_cli::runner::{self, RunOptions};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acc", version, about = "Atomistic/continuum coupling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem with one method; writes solution and error tables.
    Solve(Common),
    /// Run a ladder of chain lengths and fit convergence rates.
    Converge(Common),
    /// Trace the crack equilibrium branches and their stability.
    Bifurcate(Common),
    /// Run several methods on one problem; writes a joined error table.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for independent (method, chain length) cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Seed for random initial states (`solver.initial_guess = "random"`).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(command: Command) -> Result<(), RunError> {
    let (mode, args) = match command {
        Command::Solve(a) => (Mode::Solve, a),
        Command::Converge(a) => (Mode::Converge, a),
        Command::Bifurcate(a) => (Mode::Bifurcate, a),
        Command::Compare(a) => (Mode::Compare, a),
    };
    let lc = config::load(&args.config)?;
    let opts = RunOptions { jobs: args.jobs, seed: args.seed };
    let name = lc.name.clone();
    let written = match mode {
        Mode::Solve => {
            let (_, cells) = runner::run_methods(&lc, mode, &opts)?;
            let a1 = if lc.config.output.a1_row_norms { Some(runner::a1_row_norms(&lc)?) } else { None };
            println!("{}", output::summary_line(&cells[0]));
            output::solve_files(&args.out, &name, &cells[0], &lc.config.output, a1.as_deref())?
        }
        Mode::Compare => {
            let (reference, cells) = runner::run_methods(&lc, mode, &opts)?;
            for c in &cells {
                println!("{}", output::summary_line(c));
            }
            output::compare_files(&args.out, &name, &reference, &cells)?
        }
        Mode::Converge => {
            let studies = runner::run_study(&lc, &opts)?;
            for s in &studies {
                for c in &s.cells {
                    println!("{}", output::summary_line(c));
                }
                match &s.fit {
                    Some(f) => {
                        let (r1, r2, r3) = f.rates();
                        let (_, _, p3) = f.prefactors();
                        println!("{:<22} rates w11={r1:.3} h1={r2:.3} w1inf={r3:.3} w1inf_prefactor={p3:.3e}", s.tag);
                    }
                    None => println!("{:<22} rates unavailable (errors at machine precision)", s.tag),
                }
            }
            vec![output::study_file(&args.out, &name, &studies)?]
        }
        Mode::Bifurcate => {
            let diagrams = runner::run_sweep(&lc, &opts)?;
            let n = lc.config.chain.atoms.expect("validated");
            let tip = lc.config.crack.as_ref().expect("validated").tip().resolve(n) as usize;
            for d in &diagrams {
                let folds: Vec<String> = d.folds.iter().map(|f| format!("{:?} P={:.6e}", f.kind, f.load)).collect();
                println!("{:<22} points={} folds=[{}]", d.method_tag, d.points.len(), folds.join(", "));
                if let Some(p) = d.branch_lost {
                    eprintln!("{}: branch lost near P={p:.6e}; trace stopped", d.method_tag);
                }
            }
            output::bifurcation_files(&args.out, &name, &diagrams, tip)?
        }
    };
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::new().filter_level(log::LevelFilter::Warn).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
