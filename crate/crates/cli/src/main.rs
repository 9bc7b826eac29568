use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use zeno_cli::commands::{self, AnalyzeOptions, DEFAULT_STEP_HZ};
use zeno_cli::{CliError, ExperimentConfig, Result, TrajectoryFile};
use zeno_core::statistics::FreeFidelity;
use zeno_core::Mode;

#[derive(Parser)]
#[command(name = "zeno", version, about = "Single-ion quantum Zeno simulator")]
struct Cli {
    /// Worker threads for batch generation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate measurement trajectories.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        run: RunOverrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run-length table of stored trajectories, optionally with a model fit.
    Analyze {
        files: Vec<PathBuf>,
        #[arg(long)]
        fit: bool,
        #[arg(long, value_enum, default_value_t = FreeArg::F1)]
        free: FreeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Same as `analyze --fit`.
    Fit {
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = FreeArg::F1)]
        free: FreeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Excitation probability versus drive detuning.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        min_hz: f64,
        #[arg(long, allow_hyphen_values = true)]
        max_hz: f64,
        #[arg(long, default_value_t = DEFAULT_STEP_HZ, allow_hyphen_values = true)]
        step_hz: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transition probability when a total nutation is split into N measured pulses.
    Scaling {
        #[arg(long, default_value_t = std::f64::consts::PI)]
        theta_total: f64,
        /// Comma-separated pulse counts.
        #[arg(long, default_value = "1,10,100,1000")]
        n_list: String,
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunOverrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Markov,
    FullQuantum,
}

#[derive(Clone, Copy, ValueEnum)]
enum FreeArg {
    None,
    F0,
    F1,
}

impl From<FreeArg> for FreeFidelity {
    fn from(a: FreeArg) -> Self {
        match a {
            FreeArg::None => FreeFidelity::None,
            FreeArg::F0 => FreeFidelity::F0,
            FreeArg::F1 => FreeFidelity::F1,
        }
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_all(files: &[PathBuf]) -> Result<Vec<TrajectoryFile>> {
    if files.is_empty() {
        return Err(CliError::Usage("no trajectory files given".into()));
    }
    files.iter().map(|p| TrajectoryFile::load(p)).collect()
}

fn analyze(files: &[PathBuf], opts: AnalyzeOptions, out: Option<&Path>) -> Result<()> {
    let files = load_all(files)?;
    let mut w = open_out(out)?;
    let result = commands::analyze(&files, opts, &mut w);
    w.flush()?;
    result.map(|_| ())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate { config, run, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = run.seed {
                cfg.run.seed = seed;
            }
            if let Some(mode) = run.mode {
                cfg.run.mode = match mode {
                    ModeArg::Markov => Mode::Markov,
                    ModeArg::FullQuantum => Mode::FullQuantum,
                };
            }
            let file = commands::simulate(&cfg)?;
            let mut w = open_out(out.as_deref())?;
            w.write_all(file.serialize().as_bytes())?;
            w.flush()?;
        }
        Command::Analyze { files, fit, free, out } => {
            analyze(&files, AnalyzeOptions { fit, free: free.into() }, out.as_deref())?;
        }
        Command::Fit { files, free, out } => {
            analyze(&files, AnalyzeOptions { fit: true, free: free.into() }, out.as_deref())?;
        }
        Command::Spectrum { config, min_hz, max_hz, step_hz, samples, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.run.seed = seed;
            }
            let mut w = open_out(out.as_deref())?;
            commands::spectrum(&cfg, min_hz, max_hz, step_hz, samples, &mut w)?;
            w.flush()?;
        }
        Command::Scaling { theta_total, n_list, samples, seed, out } => {
            let n_values = commands::parse_n_list(&n_list)?;
            let mut w = open_out(out.as_deref())?;
            commands::scaling(theta_total, &n_values, samples, seed, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zeno: {e}");
            ExitCode::FAILURE
        }
    }
}
