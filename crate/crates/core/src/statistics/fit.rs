//! Maximum-likelihood fit of the relaxation model to run-length histograms.
//!
//! The run statistics of a two-state chain depend on the stay probabilities
//! `(p0, p1)` only, so at most two of `(θ, f0, f1)` can be estimated. The fit
//! always frees θ and optionally one fidelity; the other fidelity is held at
//! its given value.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{expected_run_counts, RunHistogram};
use crate::dynamics::{survival_model_with, DampingForm, DriveConfig};
use crate::error::{Result, ZenoError};
use crate::protocol::Outcome;

/// Smallest expected count kept as its own bin; the tail beyond is merged.
const MIN_EXPECTED_PER_BIN: f64 = 5.0;
const THETA_MIN: f64 = 1e-6;
const THETA_MAX: f64 = std::f64::consts::PI;
const FIDELITY_MIN: f64 = 1e-3;
/// Fidelities may overshoot 1 during the search; the result is projected back.
const FIDELITY_MAX: f64 = 1.5;

/// Drive parameters treated as known during a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownDrive {
    pub tau: f64,
    pub gamma_ph: f64,
    pub decay: f64,
}

impl KnownDrive {
    pub fn from_drive(drive: &DriveConfig) -> Self {
        KnownDrive { tau: drive.tau, gamma_ph: drive.gamma_ph, decay: drive.decay }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreeFidelity {
    None,
    F0,
    #[default]
    F1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Value of f0, or its starting point when free.
    pub f0: f64,
    pub f1: f64,
    pub free: FreeFidelity,
    /// Probability that a trajectory's first record is ON.
    pub initial_on: f64,
    pub max_iterations: usize,
    pub form: DampingForm,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            f0: 1.0,
            f1: 1.0,
            free: FreeFidelity::F1,
            initial_on: 1.0,
            max_iterations: 100,
            form: DampingForm::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: f64,
    pub f0_hat: f64,
    pub f1_hat: f64,
    pub p0_hat: f64,
    pub p1_hat: f64,
    /// Negative multinomial log-likelihood at the optimum (constant dropped).
    pub objective: f64,
    /// Inverse observed information in `(θ, f0, f1)` order; rows and columns
    /// of fixed parameters are zero.
    pub covariance: [[f64; 3]; 3],
    pub iterations: usize,
    pub bins: usize,
}

impl FitResult {
    pub fn theta_stderr(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn f0_stderr(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    pub fn f1_stderr(&self) -> f64 {
        self.covariance[2][2].sqrt()
    }

    /// Normal-approximation interval `θ̂ ± z·σ_θ`.
    pub fn theta_interval(&self, z: f64) -> (f64, f64) {
        let half = z * self.theta_stderr();
        (self.theta_hat - half, self.theta_hat + half)
    }
}

/// Geometric maximum-likelihood stay probability `(Σq − m)/Σq` over the `m`
/// runs in `counts`. `None` if there are no runs.
pub fn geometric_stay_estimate(counts: &BTreeMap<usize, u64>) -> Option<f64> {
    let runs: u64 = counts.values().sum();
    let total: u64 = counts.iter().map(|(&q, &n)| q as u64 * n).sum();
    (total > 0).then(|| (total - runs) as f64 / total as f64)
}

#[derive(Debug, Clone)]
struct Bin {
    symbol: Outcome,
    /// Inclusive range of run lengths.
    lo: usize,
    hi: usize,
    observed: f64,
}

struct Problem<'a> {
    known: KnownDrive,
    opts: &'a FitOptions,
    length: usize,
    bins: Vec<Bin>,
}

impl Problem<'_> {
    /// Free-parameter vector → (θ, f0, f1).
    fn unpack(&self, x: &[f64]) -> (f64, f64, f64) {
        match self.opts.free {
            FreeFidelity::None => (x[0], self.opts.f0, self.opts.f1),
            FreeFidelity::F0 => (x[0], x[1], self.opts.f1),
            FreeFidelity::F1 => (x[0], self.opts.f0, x[1]),
        }
    }

    fn in_bounds(&self, x: &[f64]) -> bool {
        (THETA_MIN..=THETA_MAX).contains(&x[0])
            && x[1..].iter().all(|f| (FIDELITY_MIN..=FIDELITY_MAX).contains(f))
    }

    fn stay_probabilities(&self, theta: f64, f0: f64, f1: f64) -> Result<(f64, f64)> {
        let drive = DriveConfig::new(theta / self.known.tau, 0.0, self.known.tau, self.known.gamma_ph, self.known.decay)?;
        // flips at unit fidelity, scaled here so f may exceed 1 mid-search
        let model = survival_model_with(&drive, 1.0, 1.0, self.opts.form)?;
        let p0 = (1.0 - f0 * (1.0 - model.p0)).clamp(0.0, 1.0);
        let p1 = (1.0 - f1 * (1.0 - model.p1)).clamp(0.0, 1.0);
        Ok((p0, p1))
    }

    fn nll(&self, x: &[f64]) -> f64 {
        let (theta, f0, f1) = self.unpack(x);
        let Ok((p0, p1)) = self.stay_probabilities(theta, f0, f1) else {
            return f64::INFINITY;
        };
        let Ok(expected) = expected_run_counts(p0, p1, self.length, self.opts.initial_on) else {
            return f64::INFINITY;
        };
        let masses: Vec<f64> = self
            .bins
            .iter()
            .map(|b| (b.lo..=b.hi).map(|q| expected.get(b.symbol, q)).sum())
            .collect();
        let total: f64 = masses.iter().sum();
        let mut nll = 0.0;
        for (bin, mass) in self.bins.iter().zip(&masses) {
            if bin.observed > 0.0 {
                if *mass <= 0.0 {
                    return f64::INFINITY;
                }
                nll -= bin.observed * (mass / total).ln();
            }
        }
        nll
    }

    fn step_sizes(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| 1e-4 * v.abs().max(0.1)).collect()
    }

    /// Central-difference gradient and Hessian.
    fn derivatives(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let h = self.step_sizes(x);
        let f0 = self.nll(x);
        let shifted = |moves: &[(usize, f64)]| {
            let mut y = x.to_vec();
            for &(i, d) in moves {
                y[i] += d;
            }
            self.nll(&y)
        };
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let fp = shifted(&[(i, h[i])]);
            let fm = shifted(&[(i, -h[i])]);
            grad[i] = (fp - fm) / (2.0 * h[i]);
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
            for j in 0..i {
                let fpp = shifted(&[(i, h[i]), (j, h[j])]);
                let fpm = shifted(&[(i, h[i]), (j, -h[j])]);
                let fmp = shifted(&[(i, -h[i]), (j, h[j])]);
                let fmm = shifted(&[(i, -h[i]), (j, -h[j])]);
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        (grad, hess)
    }

    /// Damped Newton with backtracking; falls back to scaled gradient steps
    /// where the Hessian is not positive definite.
    fn minimize(&self, mut x: Vec<f64>) -> Result<(Vec<f64>, f64, usize)> {
        let mut value = self.nll(&x);
        if !value.is_finite() {
            return Err(ZenoError::FitFailure {
                reason: "likelihood is zero at the warm start".into(),
                iterations: 0,
                objective: value,
            });
        }
        for iter in 1..=self.opts.max_iterations {
            let (grad, hess) = self.derivatives(&x);
            let direction = match hess.clone().cholesky() {
                Some(chol) => -chol.solve(&grad),
                None => {
                    let scale = hess.diagonal().map(|d| d.abs().max(1.0));
                    -grad.component_div(&scale)
                }
            };
            let slope = grad.dot(&direction);
            let mut t = 1.0;
            let mut accepted = None;
            while t > 1e-12 {
                let trial: Vec<f64> = x.iter().zip(direction.iter()).map(|(a, d)| a + t * d).collect();
                if self.in_bounds(&trial) {
                    let v = self.nll(&trial);
                    if v <= value + 1e-4 * t * slope.min(0.0) {
                        accepted = Some((trial, v));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((next, next_value)) = accepted else {
                // no descent possible from here: converged to numerical precision
                return Ok((x, value, iter));
            };
            let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let improvement = value - next_value;
            x = next;
            value = next_value;
            if moved < 1e-10 || improvement.abs() <= 1e-12 * value.abs().max(1.0) {
                return Ok((x, value, iter));
            }
        }
        Err(ZenoError::FitFailure {
            reason: format!("no convergence within {} iterations", self.opts.max_iterations),
            iterations: self.opts.max_iterations,
            objective: value,
        })
    }
}

fn build_bins(hist: &RunHistogram, expected: &super::ExpectedRuns) -> Vec<Bin> {
    let scale = hist.n_trajectories as f64;
    let mut bins = Vec::new();
    for symbol in [Outcome::On, Outcome::Off] {
        let length = hist.trajectory_length;
        let cut = (1..=length)
            .take_while(|&q| scale * expected.get(symbol, q) >= MIN_EXPECTED_PER_BIN)
            .last()
            .unwrap_or(1);
        for q in 1..=cut {
            bins.push(Bin { symbol, lo: q, hi: q, observed: hist.count(symbol, q) as f64 });
        }
        if cut < length {
            let observed = hist.counts(symbol).range(cut + 1..).map(|(_, &n)| n).sum::<u64>() as f64;
            bins.push(Bin { symbol, lo: cut + 1, hi: length, observed });
        }
    }
    bins
}

/// Fits θ (and optionally one fidelity) to a run-length histogram by
/// maximizing the multinomial likelihood of the binned run counts against
/// [`expected_run_counts`]. Tail bins with expected count below 5 are merged.
///
/// The warm start inverts the geometric estimate of the stay probabilities
/// through the lossless relation `1 − p = f·sin²(θ/2)`.
pub fn fit_survival(hist: &RunHistogram, known: &KnownDrive, opts: &FitOptions) -> Result<FitResult> {
    DriveConfig::new(0.0, 0.0, known.tau, known.gamma_ph, known.decay)?;
    for (name, f) in [("f0", opts.f0), ("f1", opts.f1)] {
        if !(f > 0.0 && f <= 1.0) {
            return Err(ZenoError::invalid(format!("{name} must lie in (0, 1], got {f}")));
        }
    }
    if hist.n_trajectories == 0 || hist.trajectory_length == 0 {
        return Err(ZenoError::invalid("histogram is empty"));
    }
    for symbol in [Outcome::On, Outcome::Off] {
        let distinct = hist.counts(symbol).values().filter(|&&n| n > 0).count();
        if distinct < 2 {
            return Err(ZenoError::FitFailure {
                reason: format!(
                    "unidentifiable: {symbol:?} runs take {distinct} distinct length(s), need at least 2"
                ),
                iterations: 0,
                objective: f64::NAN,
            });
        }
    }

    let p_on = geometric_stay_estimate(&hist.counts_on).unwrap_or(0.5);
    let p_off = geometric_stay_estimate(&hist.counts_off).unwrap_or(0.5);
    let invert = |p: f64, f: f64| 2.0 * ((1.0 - p) / f).clamp(0.0, 1.0).sqrt().asin();
    let theta0 = match opts.free {
        FreeFidelity::F0 => invert(p_off, opts.f1),
        _ => invert(p_on, opts.f0),
    }
    .clamp(0.05, THETA_MAX - 0.05);
    let flip0 = (theta0 / 2.0).sin().powi(2);
    let fid_start = |p: f64| ((1.0 - p) / flip0).clamp(0.05, 1.0);
    let x0 = match opts.free {
        FreeFidelity::None => vec![theta0],
        FreeFidelity::F0 => vec![theta0, fid_start(p_on)],
        FreeFidelity::F1 => vec![theta0, fid_start(p_off)],
    };

    let mut problem = Problem { known: *known, opts, length: hist.trajectory_length, bins: Vec::new() };
    let (start_theta, start_f0, start_f1) = problem.unpack(&x0);
    let (sp0, sp1) = problem.stay_probabilities(start_theta, start_f0, start_f1)?;
    let expected = expected_run_counts(sp0, sp1, hist.trajectory_length, opts.initial_on)?;
    problem.bins = build_bins(hist, &expected);

    let (mut x, mut value, mut iterations) = problem.minimize(x0)?;

    // constrained optimum on the f = 1 face
    if x.len() == 2 && x[1] > 1.0 {
        let fixed = match opts.free {
            FreeFidelity::F0 => FitOptions { f0: 1.0, free: FreeFidelity::None, ..*opts },
            _ => FitOptions { f1: 1.0, free: FreeFidelity::None, ..*opts },
        };
        let reduced = Problem { known: *known, opts: &fixed, length: problem.length, bins: problem.bins.clone() };
        let (xr, vr, it) = reduced.minimize(vec![x[0]])?;
        let mut cov = [[0.0; 3]; 3];
        cov[0][0] = covariance(&reduced, &xr, vr, iterations + it)?[(0, 0)];
        let (theta, f0, f1) = reduced.unpack(&xr);
        let (p0, p1) = reduced.stay_probabilities(theta, f0, f1)?;
        return Ok(FitResult {
            theta_hat: theta,
            f0_hat: f0,
            f1_hat: f1,
            p0_hat: p0,
            p1_hat: p1,
            objective: vr,
            covariance: cov,
            iterations: iterations + it,
            bins: reduced.bins.len(),
        });
    }

    // a fit pinned to the θ bounds is not a stationary point
    if x[0] <= THETA_MIN * 1.001 || x[0] >= THETA_MAX * 0.999_999 {
        // retry from the mirrored angle before giving up
        let mut retry = x.clone();
        retry[0] = (THETA_MAX - x[0]).clamp(0.05, THETA_MAX - 0.05);
        let (xr, vr, it) = problem.minimize(retry)?;
        iterations += it;
        if vr < value {
            x = xr;
            value = vr;
        }
    }

    let inv = covariance(&problem, &x, value, iterations)?;
    let mut cov = [[0.0; 3]; 3];
    let slots: &[usize] = match opts.free {
        FreeFidelity::None => &[0],
        FreeFidelity::F0 => &[0, 1],
        FreeFidelity::F1 => &[0, 2],
    };
    for (i, &si) in slots.iter().enumerate() {
        for (j, &sj) in slots.iter().enumerate() {
            cov[si][sj] = inv[(i, j)];
        }
    }
    let (theta, f0, f1) = problem.unpack(&x);
    let (p0, p1) = problem.stay_probabilities(theta, f0, f1)?;
    Ok(FitResult {
        theta_hat: theta,
        f0_hat: f0,
        f1_hat: f1,
        p0_hat: p0,
        p1_hat: p1,
        objective: value,
        covariance: cov,
        iterations,
        bins: problem.bins.len(),
    })
}

fn covariance(problem: &Problem, x: &[f64], value: f64, iterations: usize) -> Result<DMatrix<f64>> {
    let (_, hess) = problem.derivatives(x);
    hess.cholesky().map(|c| c.inverse()).ok_or_else(|| ZenoError::FitFailure {
        reason: "observed information is not positive definite; parameters unidentifiable".into(),
        iterations,
        objective: value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Fidelities, Mode, TrajectoryGenerator};

    fn synthetic(theta: f64, gamma_ph: f64, decay: f64, f1: f64, seed: u64) -> (RunHistogram, KnownDrive) {
        let drive = DriveConfig::new(theta, 0.0, 1.0, gamma_ph, decay).unwrap();
        let gen = TrajectoryGenerator::new(drive, Fidelities::new(1.0, f1).unwrap(), 500, Mode::Markov).unwrap();
        let hist = RunHistogram::from_trajectories(&gen.generate_batch(seed, 2000)).unwrap();
        (hist, KnownDrive::from_drive(&drive))
    }

    #[test]
    fn geometric_warm_start_formula() {
        let counts = BTreeMap::from([(3, 1), (2, 2)]);
        let p = geometric_stay_estimate(&counts).unwrap();
        assert!((p - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(geometric_stay_estimate(&BTreeMap::new()), None);
    }

    #[test]
    fn single_run_is_unidentifiable() {
        let mut hist = RunHistogram::default();
        hist.add_outcomes(&[Outcome::On; 50]).unwrap();
        let known = KnownDrive { tau: 1.0, gamma_ph: 0.0, decay: 0.0 };
        let err = fit_survival(&hist, &known, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, ZenoError::FitFailure { .. }), "{err}");
    }

    #[test]
    fn alternating_is_unidentifiable() {
        let mut hist = RunHistogram::default();
        let seq: Vec<Outcome> = (0..40).map(|i| if i % 2 == 0 { Outcome::On } else { Outcome::Off }).collect();
        hist.add_outcomes(&seq).unwrap();
        let known = KnownDrive { tau: 1.0, gamma_ph: 0.0, decay: 0.0 };
        let err = fit_survival(&hist, &known, &FitOptions::default()).unwrap_err();
        assert!(err.to_string().contains("unidentifiable"), "{err}");
    }

    #[test]
    fn empty_histogram_is_invalid() {
        let known = KnownDrive { tau: 1.0, gamma_ph: 0.0, decay: 0.0 };
        let err = fit_survival(&RunHistogram::default(), &known, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, ZenoError::InvalidInput(_)));
    }

    #[test]
    fn recovers_lossless_theta() {
        let (hist, known) = synthetic(2.0, 0.0, 0.0, 1.0, 11);
        let opts = FitOptions { free: FreeFidelity::None, ..FitOptions::default() };
        let fit = fit_survival(&hist, &known, &opts).unwrap();
        let sigma = fit.theta_stderr();
        assert!(sigma > 0.0 && sigma < 0.01, "sigma {sigma}");
        assert!((fit.theta_hat - 2.0).abs() < 3.0 * sigma, "{fit:?}");
        assert_eq!(fit.f0_hat, 1.0);
        assert_eq!(fit.covariance[2][2], 0.0);
    }

    #[test]
    fn recovers_theta_and_f1_with_relaxation() {
        let (hist, known) = synthetic(2.0, 0.1, 0.05, 0.9, 5);
        let fit = fit_survival(&hist, &known, &FitOptions::default()).unwrap();
        assert!((fit.theta_hat - 2.0).abs() < 4.0 * fit.theta_stderr(), "{fit:?}");
        assert!((fit.f1_hat - 0.9).abs() < 4.0 * fit.f1_stderr(), "{fit:?}");
        assert!(fit.covariance[0][2] == fit.covariance[2][0]);
    }
}
