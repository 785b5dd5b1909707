use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hwmimo_cli::{load, run, CliError, Mode, Overrides};

#[derive(Parser)]
#[command(name = "hwmimo", version, about = "Sum-rate experiments for massive MIMO with hardware imperfections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON file.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Master seed, replacing `scenario.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Monte Carlo trials per drop, replacing `mc.trials`.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Worker threads; all cores when absent.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, out, seed, trials, mode, threads } => {
            let mut cfg = load(&config)?;
            cfg.apply(&Overrides { seed, trials, mode });
            let go = || run(&cfg, &out);
            let report = match threads {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::Validation(format!("--threads {n}: {e}")))?
                    .install(go)?,
                None => go()?,
            };
            println!("wrote {} rows to {}", report.rows.len(), report.curves.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
