//! Run-length statistics of measurement trajectories.
//!
//! A run is a maximal stretch of equal outcomes. `U(q)` counts runs of length
//! `q`, separately for ON and OFF, and `U(q)/U(1)` estimates the survival
//! `V(q − 1)`. Runs touching either end of a trajectory are included; the
//! exact finite-length expectation in [`expected_run_counts`] accounts for
//! them.

mod fit;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZenoError};
use crate::protocol::{Outcome, Trajectory};

pub use fit::{fit_survival, geometric_stay_estimate, FitOptions, FitResult, FreeFidelity, KnownDrive};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHistogram {
    pub counts_on: BTreeMap<usize, u64>,
    pub counts_off: BTreeMap<usize, u64>,
    pub trajectory_length: usize,
    pub n_trajectories: usize,
}

impl RunHistogram {
    pub fn counts(&self, symbol: Outcome) -> &BTreeMap<usize, u64> {
        match symbol {
            Outcome::On => &self.counts_on,
            Outcome::Off => &self.counts_off,
        }
    }

    fn counts_mut(&mut self, symbol: Outcome) -> &mut BTreeMap<usize, u64> {
        match symbol {
            Outcome::On => &mut self.counts_on,
            Outcome::Off => &mut self.counts_off,
        }
    }

    /// `U_symbol(q)`, zero when absent.
    pub fn count(&self, symbol: Outcome, q: usize) -> u64 {
        self.counts(symbol).get(&q).copied().unwrap_or(0)
    }

    pub fn total_runs(&self, symbol: Outcome) -> u64 {
        self.counts(symbol).values().sum()
    }

    pub fn max_run(&self) -> usize {
        let last = |m: &BTreeMap<usize, u64>| m.keys().next_back().copied().unwrap_or(0);
        last(&self.counts_on).max(last(&self.counts_off))
    }

    /// Σ q·(U_on(q) + U_off(q)).
    pub fn covered_length(&self) -> u64 {
        [&self.counts_on, &self.counts_off]
            .iter()
            .flat_map(|m| m.iter())
            .map(|(&q, &n)| q as u64 * n)
            .sum()
    }

    /// Adds the runs of one outcome sequence.
    pub fn add_outcomes(&mut self, outcomes: &[Outcome]) -> Result<()> {
        if outcomes.is_empty() {
            return Err(ZenoError::invalid("empty trajectory has no runs"));
        }
        if self.n_trajectories == 0 {
            self.trajectory_length = outcomes.len();
        } else if self.trajectory_length != outcomes.len() {
            return Err(ZenoError::invalid(format!(
                "trajectory length {} differs from histogram length {}",
                outcomes.len(),
                self.trajectory_length
            )));
        }
        for (symbol, len) in runs(outcomes) {
            *self.counts_mut(symbol).entry(len).or_insert(0) += 1;
        }
        self.n_trajectories += 1;
        Ok(())
    }

    /// Merges another histogram of equally long trajectories.
    pub fn merge(&mut self, other: &RunHistogram) -> Result<()> {
        if other.n_trajectories == 0 {
            return Ok(());
        }
        if self.n_trajectories == 0 {
            self.trajectory_length = other.trajectory_length;
        } else if self.trajectory_length != other.trajectory_length {
            return Err(ZenoError::invalid(format!(
                "cannot merge histograms of trajectory lengths {} and {}",
                self.trajectory_length, other.trajectory_length
            )));
        }
        for symbol in [Outcome::On, Outcome::Off] {
            for (&q, &n) in other.counts(symbol) {
                *self.counts_mut(symbol).entry(q).or_insert(0) += n;
            }
        }
        self.n_trajectories += other.n_trajectories;
        Ok(())
    }

    pub fn from_trajectories<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self> {
        let mut hist = RunHistogram::default();
        for t in trajectories {
            hist.add_outcomes(&t.outcomes)?;
        }
        Ok(hist)
    }
}

/// Maximal runs as `(symbol, length)` in order of appearance.
pub fn runs(outcomes: &[Outcome]) -> Vec<(Outcome, usize)> {
    outcomes
        .chunk_by(|a, b| a == b)
        .map(|chunk| (chunk[0], chunk.len()))
        .collect()
}

pub fn run_lengths(trajectory: &Trajectory) -> Result<RunHistogram> {
    let mut hist = RunHistogram::default();
    hist.add_outcomes(&trajectory.outcomes)?;
    Ok(hist)
}

/// `U_symbol(q) / U_symbol(1)`, the empirical estimate of `V(q − 1)`.
pub fn v_obs(hist: &RunHistogram, symbol: Outcome, q: usize) -> Result<f64> {
    let u1 = hist.count(symbol, 1);
    if u1 == 0 {
        return Err(ZenoError::UndefinedEstimator(symbol));
    }
    Ok(hist.count(symbol, q) as f64 / u1 as f64)
}

/// [`v_obs`] with its delta-method standard error `R·√(1/U(q) + 1/U(1))`.
///
/// Zero counts give an infinite error.
pub fn v_obs_with_error(hist: &RunHistogram, symbol: Outcome, q: usize) -> Result<(f64, f64)> {
    let ratio = v_obs(hist, symbol, q)?;
    if q == 1 {
        return Ok((1.0, 0.0));
    }
    let uq = hist.count(symbol, q);
    let u1 = hist.count(symbol, 1);
    let err = if uq == 0 {
        f64::INFINITY
    } else {
        ratio * (1.0 / uq as f64 + 1.0 / u1 as f64).sqrt()
    };
    Ok((ratio, err))
}

/// ON→OFF and OFF→ON adjacent pairs.
pub fn transition_counts(outcomes: &[Outcome]) -> (usize, usize) {
    outcomes.windows(2).fold((0, 0), |(up, down), pair| match (pair[0], pair[1]) {
        (Outcome::On, Outcome::Off) => (up + 1, down),
        (Outcome::Off, Outcome::On) => (up, down + 1),
        _ => (up, down),
    })
}

/// Expected maximal-run counts for one trajectory of a two-state chain.
///
/// Indexed by run length; entry 0 is unused and always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRuns {
    pub on: Vec<f64>,
    pub off: Vec<f64>,
}

impl ExpectedRuns {
    pub fn get(&self, symbol: Outcome, q: usize) -> f64 {
        let v = match symbol {
            Outcome::On => &self.on,
            Outcome::Off => &self.off,
        };
        v.get(q).copied().unwrap_or(0.0)
    }

    pub fn length(&self) -> usize {
        self.on.len() - 1
    }

    /// Finite-length model of `U(q)/U(1)`.
    pub fn ratio(&self, symbol: Outcome, q: usize) -> f64 {
        self.get(symbol, q) / self.get(symbol, 1)
    }
}

/// Exact expected number of maximal runs of each symbol and length in a
/// length-`length` chain with stay probabilities `p0` (ON) and `p1` (OFF),
/// whose first symbol is ON with probability `initial_on`.
///
/// A run of symbol `s` starting at position `t` and lasting `q` steps has
/// probability `start_t(s) · p_s^(q−1) · end`, where `start_t(s)` is the
/// probability that a run of `s` begins at `t` and `end` is `1 − p_s` unless
/// the run reaches the last position.
pub fn expected_run_counts(p0: f64, p1: f64, length: usize, initial_on: f64) -> Result<ExpectedRuns> {
    for (name, p) in [("p0", p0), ("p1", p1), ("initial_on", initial_on)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(ZenoError::invalid(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    if length < 1 {
        return Err(ZenoError::invalid("length must be at least 1"));
    }

    // run-start probabilities per position
    let mut start_on = Vec::with_capacity(length);
    let mut start_off = Vec::with_capacity(length);
    let mut m_on = initial_on;
    let mut m_off = 1.0 - initial_on;
    start_on.push(m_on);
    start_off.push(m_off);
    for _ in 1..length {
        start_on.push(m_off * (1.0 - p1));
        start_off.push(m_on * (1.0 - p0));
        let next_on = m_on * p0 + m_off * (1.0 - p1);
        let next_off = m_off * p1 + m_on * (1.0 - p0);
        m_on = next_on;
        m_off = next_off;
    }

    let counts = |start: &[f64], p: f64| -> Vec<f64> {
        // prefix[k] = Σ_{t<k} start[t]
        let mut prefix = vec![0.0; length + 1];
        for t in 0..length {
            prefix[t + 1] = prefix[t] + start[t];
        }
        let mut out = vec![0.0; length + 1];
        let mut power = 1.0;
        for (q, slot) in out.iter_mut().enumerate().skip(1) {
            let last_start = length - q;
            *slot = power * ((1.0 - p) * prefix[last_start] + start[last_start]);
            power *= p;
        }
        out
    };

    Ok(ExpectedRuns {
        on: counts(&start_on, p0),
        off: counts(&start_off, p1),
    })
}
