use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use confit::error::Error;
use confit::experiment::{self, CommandError, ExperimentConfig, HistoryFile, Split};

/// Constrained regression by iterative target adjustment.
#[derive(Parser)]
#[command(name = "confit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, alpha, fold) of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: `output.dir` of the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the final metrics of two histories.
    Compare {
        history_a: PathBuf,
        history_m: PathBuf,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-iteration mean and std of R² and C from one history.
    Plotdata {
        history: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Parse and check a config, including its dataset columns.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CommandError> {
    let mut cfg = ExperimentConfig::load(path).map_err(CommandError::Config)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CommandError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|source| CommandError::Runtime(Error::Io { path: p.display().to_string(), source })),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_history(path: &Path) -> Result<HistoryFile, CommandError> {
    HistoryFile::load(path).map_err(|e| match e {
        Error::Mismatch(_) => CommandError::Runtime(e),
        _ => CommandError::Config(e),
    })
}

fn dispatch(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Run { config, out, jobs, seed } => {
            let cfg = load_config(&config, seed)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            let result = experiment::cmd_run(&cfg, &dir, jobs.unwrap_or(0))?;
            eprintln!("wrote {} setting(s) to {}", result.histories.len(), dir.display());
            Ok(())
        }
        Command::Compare { history_a, history_m, out } => {
            let (a, m) = (load_history(&history_a)?, load_history(&history_m)?);
            let rows = experiment::compare(&a, &m).map_err(CommandError::Runtime)?;
            emit(&experiment::comparison_csv(&rows), out.as_deref())
        }
        Command::Plotdata { history, out, split } => {
            let h = load_history(&history)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let text = experiment::plotdata(&h, split).map_err(CommandError::Runtime)?;
            emit(&text, out.as_deref())
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(&config, None)?;
            let prepared = experiment::prepare(&cfg).map_err(CommandError::Config)?;
            experiment::fold_data(&cfg, &prepared).map_err(CommandError::Config)?;
            eprintln!("ok: {} rows, {} columns", prepared.table.n_rows(), prepared.table.n_cols());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONFIT_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
