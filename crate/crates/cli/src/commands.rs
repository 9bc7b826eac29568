//! The `simulate`, `analyze`, `spectrum` and `scaling` commands.
//!
//! Each command writes a table to the given writer: a `#`-prefixed header line
//! naming the tab-separated columns, then one row per line. Floats use Rust's
//! shortest round-trip formatting, so output is byte-stable for a fixed seed.

use std::f64::consts::TAU;
use std::io::Write;

use zeno_core::protocol::{detuning_grid, spectrum_at, zeno_scan, Outcome, TrajectoryGenerator};
use zeno_core::statistics::{expected_run_counts, fit_survival, FitOptions, FitResult, FreeFidelity, KnownDrive};
use zeno_core::RunHistogram;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::trajfile::TrajectoryFile;

/// Default detuning step of the spectrum scan.
pub const DEFAULT_STEP_HZ: f64 = 20_000.0;

pub fn simulate(config: &ExperimentConfig) -> Result<TrajectoryFile> {
    config.validate()?;
    let gen = TrajectoryGenerator::new(
        config.drive()?,
        config.fidelities()?,
        config.run.n_measurements,
        config.run.mode,
    )?;
    let trajectories = gen.generate_batch(config.run.seed, config.run.n_trajectories);
    Ok(TrajectoryFile::from_trajectories(config.clone(), &trajectories))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeOptions {
    pub fit: bool,
    pub free: FreeFidelity,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions { fit: false, free: FreeFidelity::F1 }
    }
}

/// Pools the runs of every trajectory in `files`.
pub fn histogram(files: &[TrajectoryFile]) -> Result<RunHistogram> {
    let mut hist = RunHistogram::default();
    for f in files {
        for t in &f.trajectories {
            hist.add_outcomes(t)?;
        }
    }
    Ok(hist)
}

/// Writes the run-length table for `files` and, if requested, the fit block.
///
/// The model columns are the finite-length expectation of `U(q)/U(1)` at the
/// fitted stay probabilities, or at those implied by the first file's header
/// when no fit is requested. A failed fit is returned as an error after the
/// table has been written.
pub fn analyze<W: Write>(files: &[TrajectoryFile], opts: AnalyzeOptions, out: &mut W) -> Result<Option<FitResult>> {
    let first = files
        .first()
        .ok_or_else(|| CliError::Usage("analyze needs at least one trajectory file".into()))?;
    let hist = histogram(files)?;
    let drive = first.config.drive()?;
    let fidelities = first.config.fidelities()?;

    let fit = if opts.fit {
        let fit_opts = FitOptions {
            f0: fidelities.f0,
            f1: fidelities.f1,
            free: opts.free,
            ..FitOptions::default()
        };
        Some(fit_survival(&hist, &KnownDrive::from_drive(&drive), &fit_opts))
    } else {
        None
    };

    let (p0, p1) = match &fit {
        Some(Ok(f)) => (f.p0_hat, f.p1_hat),
        _ => TrajectoryGenerator::new(drive, fidelities, hist.trajectory_length, zeno_core::Mode::FullQuantum)?
            .stay_probabilities(),
    };
    let model = expected_run_counts(p0, p1, hist.trajectory_length, 1.0)?;

    writeln!(out, "# q\tU_on\tU_off\tV_on\tV_off\tmodel_on\tmodel_off")?;
    let ratio = |symbol: Outcome, q: usize| {
        let u1 = hist.count(symbol, 1);
        if u1 == 0 {
            f64::NAN
        } else {
            hist.count(symbol, q) as f64 / u1 as f64
        }
    };
    for q in 1..=hist.max_run() {
        writeln!(
            out,
            "{q}\t{}\t{}\t{}\t{}\t{}\t{}",
            hist.count(Outcome::On, q),
            hist.count(Outcome::Off, q),
            ratio(Outcome::On, q),
            ratio(Outcome::Off, q),
            model.ratio(Outcome::On, q),
            model.ratio(Outcome::Off, q),
        )?;
    }

    match fit {
        None => Ok(None),
        Some(Ok(f)) => {
            writeln!(
                out,
                "# fit\ttheta_hat={}\ttheta_se={}\tf0_hat={}\tf0_se={}\tf1_hat={}\tf1_se={}\tp0_hat={}\tp1_hat={}\tnll={}\titerations={}",
                f.theta_hat,
                f.theta_stderr(),
                f.f0_hat,
                f.f0_stderr(),
                f.f1_hat,
                f.f1_stderr(),
                f.p0_hat,
                f.p1_hat,
                f.objective,
                f.iterations
            )?;
            Ok(Some(f))
        }
        Some(Err(e)) => Err(e.into()),
    }
}

/// Excitation spectrum; detunings in Hz relative to the configured drive.
pub fn spectrum<W: Write>(
    config: &ExperimentConfig,
    min_hz: f64,
    max_hz: f64,
    step_hz: f64,
    samples: u64,
    out: &mut W,
) -> Result<()> {
    let base = config.drive()?;
    // grid in Hz so that ±Δ pairs convert to exact negatives
    let grid_hz = detuning_grid(min_hz, max_hz, step_hz)?;
    let deltas: Vec<f64> = grid_hz.iter().map(|hz| TAU * hz).collect();
    let rows = spectrum_at(&base, &deltas, samples, config.run.seed)?;
    writeln!(out, "# detuning_hz\tP_analytic\tP_montecarlo\tstderr")?;
    for (detuning_hz, row) in grid_hz.iter().zip(&rows) {
        writeln!(
            out,
            "{detuning_hz}\t{}\t{}\t{}",
            row.analytic, row.monte_carlo.mean, row.monte_carlo.stderr
        )?;
    }
    Ok(())
}

/// Zeno-scaling table for a total nutation split into `N` measured pulses.
pub fn scaling<W: Write>(theta_total: f64, n_values: &[u32], samples: u64, seed: u64, out: &mut W) -> Result<()> {
    let rows = zeno_scan(theta_total, n_values, samples, seed)?;
    writeln!(out, "# N\tP_analytic\tP_montecarlo\tstderr\tP_small_angle")?;
    for row in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            row.n, row.analytic, row.monte_carlo.mean, row.monte_carlo.stderr, row.small_angle
        )?;
    }
    Ok(())
}

pub fn parse_n_list(text: &str) -> Result<Vec<u32>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            match s.parse::<u32>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(CliError::Usage(format!("invalid N `{s}`: expected an integer >= 1"))),
            }
        })
        .collect()
}
