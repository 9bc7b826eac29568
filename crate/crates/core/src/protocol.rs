//! Drive/probe measurement protocol.
//!
//! A measurement is one drive pulse followed by an instantaneous projective
//! probe. The probe reports ON (fluorescence, state 0) or OFF (no signal,
//! state 1) and leaves the atom in the corresponding eigenstate.
//!
//! Randomness comes from ChaCha8 substreams: the master seed selects the key
//! and the trajectory (or scan point) index selects the stream, so batch
//! results never depend on how work is scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    bloch_propagate, excitation_probability, survival_model, BlochState, DriveConfig,
};
use crate::error::{Result, ZenoError};
use crate::statistics::transition_counts;

/// Trajectory length used in the experiment.
pub const DEFAULT_MEASUREMENTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    /// Resonance fluorescence observed: projected onto state 0.
    On,
    /// Null signal: projected onto state 1.
    Off,
}

impl Outcome {
    pub fn other(self) -> Outcome {
        match self {
            Outcome::On => Outcome::Off,
            Outcome::Off => Outcome::On,
        }
    }

    pub fn projected_state(self) -> BlochState {
        match self {
            Outcome::On => BlochState::GROUND,
            Outcome::Off => BlochState::EXCITED,
        }
    }

    /// Record symbol: '1' for ON, '0' for OFF.
    pub fn symbol(self) -> char {
        match self {
            Outcome::On => '1',
            Outcome::Off => '0',
        }
    }

    pub fn from_symbol(c: char) -> Option<Outcome> {
        match c {
            '1' => Some(Outcome::On),
            '0' => Some(Outcome::Off),
            _ => None,
        }
    }

    fn index(self) -> usize {
        match self {
            Outcome::On => 0,
            Outcome::Off => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Two-state chain with stay probabilities from the survival model.
    #[default]
    Markov,
    /// Explicit Bloch propagation of each pulse followed by projection.
    FullQuantum,
}

/// Detection/redistribution fidelities: a transition out of state `i` is
/// registered with probability `f_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelities {
    pub f0: f64,
    pub f1: f64,
}

impl Fidelities {
    pub const PERFECT: Fidelities = Fidelities { f0: 1.0, f1: 1.0 };

    pub fn new(f0: f64, f1: f64) -> Result<Self> {
        let fid = Fidelities { f0, f1 };
        fid.validate()?;
        Ok(fid)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("f0", self.f0), ("f1", self.f1)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ZenoError::invalid(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        Ok(())
    }

    fn of(&self, state: Outcome) -> f64 {
        match state {
            Outcome::On => self.f0,
            Outcome::Off => self.f1,
        }
    }
}

impl Default for Fidelities {
    fn default() -> Self {
        Fidelities::PERFECT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub outcomes: Vec<Outcome>,
    /// Master seed.
    pub seed: u64,
    /// Substream index within the master seed.
    pub stream: u64,
    pub drive: DriveConfig,
    pub fidelities: Fidelities,
    pub mode: Mode,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn symbols(&self) -> String {
        self.outcomes.iter().map(|o| o.symbol()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub trajectory: Trajectory,
    /// ON→OFF pairs (excitations).
    pub transitions_up: usize,
    /// OFF→ON pairs (deexcitations).
    pub transitions_down: usize,
}

impl MeasurementRecord {
    pub fn new(trajectory: Trajectory) -> Self {
        let (up, down) = transition_counts(&trajectory.outcomes);
        MeasurementRecord {
            trajectory,
            transitions_up: up,
            transitions_down: down,
        }
    }
}

/// RNG for substream `stream` of master seed `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Projective probe: ON with probability `(1 − w)/2`.
pub fn measure_once<R: Rng + ?Sized>(state: &BlochState, rng: &mut R) -> (Outcome, BlochState) {
    let outcome = if rng.gen::<f64>() < state.ground_population() {
        Outcome::On
    } else {
        Outcome::Off
    };
    (outcome, outcome.projected_state())
}

#[derive(Debug, Clone)]
enum Stepper {
    /// Stay probabilities indexed by [`Outcome::index`].
    Markov { stay: [f64; 2] },
    /// Post-pulse Bloch vectors for each projected start state.
    Quantum { after_pulse: [BlochState; 2] },
}

/// Generates trajectories for a fixed configuration.
///
/// Everything deterministic about a pulse (stay probabilities or the
/// propagated Bloch vectors of the two eigenstates) is computed once here.
#[derive(Debug, Clone)]
pub struct TrajectoryGenerator {
    drive: DriveConfig,
    fidelities: Fidelities,
    n: usize,
    mode: Mode,
    stepper: Stepper,
}

impl TrajectoryGenerator {
    pub fn new(drive: DriveConfig, fidelities: Fidelities, n: usize, mode: Mode) -> Result<Self> {
        drive.validate()?;
        fidelities.validate()?;
        if n < 1 {
            return Err(ZenoError::invalid("trajectory length must be at least 1"));
        }
        let stepper = match mode {
            Mode::Markov => {
                if drive.delta != 0.0 {
                    return Err(ZenoError::invalid(
                        "markov mode uses the resonant survival model; use full-quantum mode for a detuned drive",
                    ));
                }
                let model = survival_model(&drive, fidelities.f0, fidelities.f1)?;
                Stepper::Markov { stay: [model.p0, model.p1] }
            }
            Mode::FullQuantum => Stepper::Quantum {
                after_pulse: [
                    bloch_propagate(&BlochState::GROUND, &drive, drive.tau)?,
                    bloch_propagate(&BlochState::EXCITED, &drive, drive.tau)?,
                ],
            },
        };
        Ok(TrajectoryGenerator { drive, fidelities, n, mode, stepper })
    }

    /// Per-measurement stay probabilities `(p0, p1)` realized by this generator.
    pub fn stay_probabilities(&self) -> (f64, f64) {
        match &self.stepper {
            Stepper::Markov { stay } => (stay[0], stay[1]),
            Stepper::Quantum { after_pulse } => (
                1.0 - self.fidelities.f0 * after_pulse[0].excited_population(),
                1.0 - self.fidelities.f1 * after_pulse[1].ground_population(),
            ),
        }
    }

    /// Trajectory for substream `stream` of `seed`.
    ///
    /// The first record reads out the prepared ground state, so it is always
    /// ON; every later record follows one drive pulse.
    pub fn generate(&self, seed: u64, stream: u64) -> Trajectory {
        let mut rng = substream(seed, stream);
        let mut outcomes = Vec::with_capacity(self.n);
        let mut state = Outcome::On;
        outcomes.push(state);
        for _ in 1..self.n {
            state = self.step(state, &mut rng);
            outcomes.push(state);
        }
        Trajectory {
            outcomes,
            seed,
            stream,
            drive: self.drive,
            fidelities: self.fidelities,
            mode: self.mode,
        }
    }

    /// `count` trajectories on substreams `0..count`, generated in parallel.
    pub fn generate_batch(&self, seed: u64, count: usize) -> Vec<Trajectory> {
        (0..count as u64)
            .into_par_iter()
            .map(|stream| self.generate(seed, stream))
            .collect()
    }

    fn step(&self, state: Outcome, rng: &mut ChaCha8Rng) -> Outcome {
        match &self.stepper {
            Stepper::Markov { stay } => {
                if rng.gen::<f64>() < stay[state.index()] {
                    state
                } else {
                    state.other()
                }
            }
            Stepper::Quantum { after_pulse } => {
                let (outcome, _) = measure_once(&after_pulse[state.index()], rng);
                let f = self.fidelities.of(state);
                // an unregistered transition leaves the atom in its old state
                if outcome != state && f < 1.0 && rng.gen::<f64>() >= f {
                    state
                } else {
                    outcome
                }
            }
        }
    }
}

/// Single trajectory on substream 0 of `seed`.
pub fn generate_trajectory(
    drive: &DriveConfig,
    fidelities: Fidelities,
    n: usize,
    seed: u64,
    mode: Mode,
) -> Result<Trajectory> {
    Ok(TrajectoryGenerator::new(*drive, fidelities, n, mode)?.generate(seed, 0))
}

/// One coherent evolution of `q` back-to-back pulses from state 0, then a probe.
pub fn evolve_unobserved(drive: &DriveConfig, q: u32, seed: u64) -> Result<Outcome> {
    let state = bloch_propagate(&BlochState::GROUND, drive, q as f64 * drive.tau)?;
    Ok(measure_once(&state, &mut substream(seed, 0)).0)
}

/// Monte Carlo estimate of a probability with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub hits: u64,
    pub samples: u64,
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_counts(hits: u64, samples: u64) -> Self {
        let mean = if samples == 0 { 0.0 } else { hits as f64 / samples as f64 };
        let stderr = if samples == 0 { 0.0 } else { (mean * (1.0 - mean) / samples as f64).sqrt() };
        Estimate { hits, samples, mean, stderr }
    }
}

/// Estimates the unobserved survival `V_coh(q)` as the ON frequency over
/// `samples` independent runs of [`evolve_unobserved`]'s protocol.
pub fn unobserved_survival(drive: &DriveConfig, q: u32, samples: u64, seed: u64) -> Result<Estimate> {
    let state = bloch_propagate(&BlochState::GROUND, drive, q as f64 * drive.tau)?;
    let mut rng = substream(seed, q as u64);
    let hits = (0..samples)
        .filter(|_| measure_once(&state, &mut rng).0 == Outcome::On)
        .count() as u64;
    Ok(Estimate::from_counts(hits, samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZenoRow {
    pub n: u32,
    /// 1 − cos^{2N}(θ/2N).
    pub analytic: f64,
    pub monte_carlo: Estimate,
    /// Small-angle law N·(θ/2N)² = θ²/4N.
    pub small_angle: f64,
}

/// Splits a total nutation angle into `N` pulses, each followed by a probe,
/// and reports the probability that at least one OFF is recorded.
pub fn zeno_scan(theta_total: f64, n_values: &[u32], samples: u64, seed: u64) -> Result<Vec<ZenoRow>> {
    if !(theta_total.is_finite() && theta_total > 0.0) {
        return Err(ZenoError::invalid(format!("theta_total must be positive, got {theta_total}")));
    }
    if let Some(bad) = n_values.iter().find(|&&n| n < 1) {
        return Err(ZenoError::invalid(format!("number of pulses must be at least 1, got {bad}")));
    }
    n_values
        .par_iter()
        .enumerate()
        .map(|(idx, &n)| {
            let step_angle = theta_total / n as f64;
            let drive = DriveConfig::resonant(step_angle, 1.0)?;
            let after_pulse = bloch_propagate(&BlochState::GROUND, &drive, drive.tau)?;
            let mut rng = substream(seed, idx as u64);
            let mut flipped = 0u64;
            for _ in 0..samples {
                if (0..n).any(|_| measure_once(&after_pulse, &mut rng).0 == Outcome::Off) {
                    flipped += 1;
                }
            }
            Ok(ZenoRow {
                n,
                analytic: 1.0 - (step_angle / 2.0).cos().powi(2 * n as i32),
                monte_carlo: Estimate::from_counts(flipped, samples),
                small_angle: theta_total * theta_total / (4.0 * n as f64),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    /// Detuning Δ in rad/s.
    pub delta: f64,
    pub analytic: f64,
    pub monte_carlo: Estimate,
}

/// Detuning grid `delta_min + k·step` up to `delta_max` (inclusive within
/// rounding).
pub fn detuning_grid(delta_min: f64, delta_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(ZenoError::invalid(format!("step must be positive, got {step}")));
    }
    if !(delta_min.is_finite() && delta_max.is_finite() && delta_min < delta_max) {
        return Err(ZenoError::invalid(format!(
            "scan range must satisfy min < max, got [{delta_min}, {delta_max}]"
        )));
    }
    let count = ((delta_max - delta_min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| delta_min + k as f64 * step).collect())
}

/// Per-pulse excitation probability across a detuning scan.
///
/// Each point runs `samples` single pulses from state 0 and counts OFF
/// results. The analytic column is [`excitation_probability`].
pub fn spectrum_scan(
    base: &DriveConfig,
    delta_min: f64,
    delta_max: f64,
    step: f64,
    samples: u64,
    seed: u64,
) -> Result<Vec<SpectrumRow>> {
    spectrum_at(base, &detuning_grid(delta_min, delta_max, step)?, samples, seed)
}

/// [`spectrum_scan`] over an explicit list of detunings (rad/s). Point `k`
/// uses substream `k`.
pub fn spectrum_at(base: &DriveConfig, deltas: &[f64], samples: u64, seed: u64) -> Result<Vec<SpectrumRow>> {
    base.validate()?;
    deltas
        .par_iter()
        .enumerate()
        .map(|(idx, &delta)| {
            let drive = base.with_delta(delta);
            let after_pulse = bloch_propagate(&BlochState::GROUND, &drive, drive.tau)?;
            let mut rng = substream(seed, idx as u64);
            let hits = (0..samples)
                .filter(|_| measure_once(&after_pulse, &mut rng).0 == Outcome::Off)
                .count() as u64;
            Ok(SpectrumRow {
                delta,
                analytic: excitation_probability(&drive)?,
                monte_carlo: Estimate::from_counts(hits, samples),
            })
        })
        .collect()
}
