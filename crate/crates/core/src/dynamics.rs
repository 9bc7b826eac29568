//! Two-level atom dynamics.
//!
//! The atom is described by its Bloch vector `(u, v, w)` in the frame rotating
//! with the drive. `w = -1` is state 0 (the ground level, which scatters probe
//! light) and `w = +1` is state 1 (the metastable level, dark to the probe).
//!
//! [`bloch_propagate`] integrates the optical Bloch equations numerically and
//! serves as the reference against which the closed forms in this module are
//! checked.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZenoError};

/// Slack allowed on `|r| <= 1` for numerically propagated states.
pub const BLOCH_NORM_TOLERANCE: f64 = 1e-9;

/// Largest phase advance per RK4 step, in radians of the fastest rate.
const MAX_PHASE_PER_STEP: f64 = 2e-3;
const MIN_STEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl BlochState {
    pub const GROUND: BlochState = BlochState { u: 0.0, v: 0.0, w: -1.0 };
    pub const EXCITED: BlochState = BlochState { u: 0.0, v: 0.0, w: 1.0 };

    pub fn new(u: f64, v: f64, w: f64) -> Result<Self> {
        let s = BlochState { u, v, w };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u.is_finite() && self.v.is_finite() && self.w.is_finite()) {
            return Err(ZenoError::invalid(format!("non-finite Bloch vector {self:?}")));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        (self.u * self.u + self.v * self.v + self.w * self.w).sqrt()
    }

    /// Population of state 1, `(1 + w) / 2`, clamped to `[0, 1]`.
    pub fn excited_population(&self) -> f64 {
        ((1.0 + self.w) / 2.0).clamp(0.0, 1.0)
    }

    pub fn ground_population(&self) -> f64 {
        ((1.0 - self.w) / 2.0).clamp(0.0, 1.0)
    }

    fn axpy(&self, k: f64, d: &BlochState) -> BlochState {
        BlochState {
            u: self.u + k * d.u,
            v: self.v + k * d.v,
            w: self.w + k * d.w,
        }
    }
}

/// Physical parameters of one drive pulse. All frequencies in rad/s, rates in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    /// Rabi frequency Ω.
    pub omega: f64,
    /// Detuning Δ = ω − ω₀.
    pub delta: f64,
    /// Drive pulse length τ in seconds.
    pub tau: f64,
    /// Phase diffusion rate of the drive light.
    pub gamma_ph: f64,
    /// Decay rate Γ of the inversion.
    pub decay: f64,
}

impl DriveConfig {
    pub fn new(omega: f64, delta: f64, tau: f64, gamma_ph: f64, decay: f64) -> Result<Self> {
        let cfg = DriveConfig { omega, delta, tau, gamma_ph, decay };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Lossless resonant pulse with nutation angle `theta` and length `tau`.
    pub fn resonant(theta: f64, tau: f64) -> Result<Self> {
        DriveConfig::new(theta / tau, 0.0, tau, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("omega", self.omega),
            ("delta", self.delta),
            ("tau", self.tau),
            ("gamma_ph", self.gamma_ph),
            ("decay", self.decay),
        ];
        for (name, value) in named {
            if !value.is_finite() {
                return Err(ZenoError::invalid(format!("{name} must be finite, got {value}")));
            }
        }
        for (name, value) in [("omega", self.omega), ("gamma_ph", self.gamma_ph), ("decay", self.decay)] {
            if value < 0.0 {
                return Err(ZenoError::invalid(format!("{name} must be non-negative, got {value}")));
            }
        }
        if self.tau <= 0.0 {
            return Err(ZenoError::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// Transverse relaxation rate γ = γ_ph + Γ/2.
    pub fn transverse_rate(&self) -> f64 {
        self.gamma_ph + self.decay / 2.0
    }

    /// Nutation angle Ωτ.
    pub fn theta(&self) -> f64 {
        self.omega * self.tau
    }

    pub fn is_lossless(&self) -> bool {
        self.gamma_ph == 0.0 && self.decay == 0.0
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        DriveConfig { delta, ..*self }
    }

    fn derivative(&self, s: &BlochState) -> BlochState {
        let gamma = self.transverse_rate();
        BlochState {
            u: self.delta * s.v - gamma * s.u,
            v: -self.delta * s.u + self.omega * s.w - gamma * s.v,
            w: -self.omega * s.v - self.decay * (s.w + 1.0),
        }
    }
}

/// Evolves `state` under the drive for `duration` seconds.
///
/// Fixed-step classical RK4. The step count keeps the phase advance of the
/// fastest rate in the system below 2 mrad per step, which puts the global
/// error well under 1e-9 per radian of nutation.
pub fn bloch_propagate(state: &BlochState, cfg: &DriveConfig, duration: f64) -> Result<BlochState> {
    state.validate()?;
    cfg.validate()?;
    if !duration.is_finite() || duration < 0.0 {
        return Err(ZenoError::invalid(format!(
            "duration must be finite and non-negative, got {duration}"
        )));
    }
    if duration == 0.0 {
        return Ok(*state);
    }
    let rate = cfg.omega.hypot(cfg.delta) + cfg.transverse_rate() + cfg.decay;
    let steps = ((rate * duration / MAX_PHASE_PER_STEP).ceil() as usize).max(MIN_STEPS);
    let h = duration / steps as f64;

    let mut s = *state;
    for _ in 0..steps {
        let k1 = cfg.derivative(&s);
        let k2 = cfg.derivative(&s.axpy(h / 2.0, &k1));
        let k3 = cfg.derivative(&s.axpy(h / 2.0, &k2));
        let k4 = cfg.derivative(&s.axpy(h, &k3));
        s = BlochState {
            u: s.u + h / 6.0 * (k1.u + 2.0 * k2.u + 2.0 * k3.u + k4.u),
            v: s.v + h / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
            w: s.w + h / 6.0 * (k1.w + 2.0 * k2.w + 2.0 * k3.w + k4.w),
        };
    }
    Ok(s)
}

/// Generalized nutation angle √(Ω² + Δ²)·τ.
pub fn effective_theta(cfg: &DriveConfig) -> f64 {
    cfg.omega.hypot(cfg.delta) * cfg.tau
}

/// Probability that one drive pulse takes the atom from state 0 to state 1.
///
/// Uses `(Ω²/(Ω²+Δ²))·sin²(θ_eff/2)` for a lossless drive and falls back to
/// [`bloch_propagate`] when any relaxation is present.
pub fn excitation_probability(cfg: &DriveConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.is_lossless() {
        let rabi_sq = cfg.omega * cfg.omega + cfg.delta * cfg.delta;
        if rabi_sq == 0.0 {
            return Ok(0.0);
        }
        let half = effective_theta(cfg) / 2.0;
        Ok(cfg.omega * cfg.omega / rabi_sq * half.sin().powi(2))
    } else {
        Ok(bloch_propagate(&BlochState::GROUND, cfg, cfg.tau)?.excited_population())
    }
}

/// Survival of the initial state after `q` unobserved pulses: cos²(qθ/2).
pub fn survival_coherent(q: u32, theta: f64) -> f64 {
    (q as f64 * theta / 2.0).cos().powi(2)
}

/// Survival after `q` pulses each followed by a projective measurement:
/// (cos²(θ/2))^q.
pub fn survival_measured_ideal(q: u32, theta: f64) -> f64 {
    let p = (theta / 2.0).cos().powi(2);
    p.powi(q as i32)
}

/// How the damped nutation enters the per-pulse flip probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DampingForm {
    /// Complete resonant damped-Rabi solution, including the `sin θ` term.
    /// Exact for Δ = 0.
    #[default]
    Full,
    /// Envelope-only form `B_i (1 − e^{−(a+b)} cos θ)`.
    Envelope,
}

/// Per-measurement stay probabilities of the relaxing two-level model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalModel {
    pub p0: f64,
    pub p1: f64,
    pub b0: f64,
    pub b1: f64,
    /// γτ/2.
    pub a: f64,
    /// Γτ/2.
    pub b: f64,
    /// |θ| of the damped nutation; imaginary in the overdamped branch.
    pub theta_damped: f64,
    /// `(a − b)² > (Ωτ)²`: cos θ was replaced by cosh |θ|.
    pub overdamped: bool,
    pub f0: f64,
    pub f1: f64,
    pub form: DampingForm,
}

impl SurvivalModel {
    pub fn stay_probability(&self, state_excited: bool) -> f64 {
        if state_excited {
            self.p1
        } else {
            self.p0
        }
    }
}

/// [`survival_model_with`] using [`DampingForm::Full`].
pub fn survival_model(cfg: &DriveConfig, f0: f64, f1: f64) -> Result<SurvivalModel> {
    survival_model_with(cfg, f0, f1, DampingForm::Full)
}

/// Stay probabilities `p_i = 1 − f_i · P_flip,i` for a resonant drive with relaxation.
///
/// `P_flip,i` is the probability that one pulse starting in state `i` ends in
/// the other state; it saturates at `B_i` for long pulses. Detuning is ignored.
pub fn survival_model_with(cfg: &DriveConfig, f0: f64, f1: f64, form: DampingForm) -> Result<SurvivalModel> {
    cfg.validate()?;
    for (name, f) in [("f0", f0), ("f1", f1)] {
        if !(f > 0.0 && f <= 1.0) {
            return Err(ZenoError::invalid(format!("{name} must lie in (0, 1], got {f}")));
        }
    }
    let omega_sq = cfg.omega * cfg.omega;
    let gamma = cfg.transverse_rate();
    let denom = omega_sq + cfg.decay * gamma;
    let b0 = if denom > 0.0 { (omega_sq / 2.0) / denom } else { 0.5 };
    let b1 = 1.0 - b0;
    let a = gamma * cfg.tau / 2.0;
    let b = cfg.decay * cfg.tau / 2.0;
    let theta = cfg.theta();

    let disc = theta * theta - (a - b) * (a - b);
    let overdamped = disc < 0.0;
    let theta_damped = disc.abs().sqrt();
    // cos θ and sin θ / θ, continued to imaginary θ
    let (cos_t, sinc_t) = if theta_damped == 0.0 {
        (1.0, 1.0)
    } else if overdamped {
        (theta_damped.cosh(), theta_damped.sinh() / theta_damped)
    } else {
        (theta_damped.cos(), theta_damped.sin() / theta_damped)
    };
    let envelope = (-(a + b)).exp();

    let (p0, p1) = if cfg.is_lossless() {
        // Lossless: P_flip = sin²(θ/2) for either state.
        let stay = |f: f64| {
            if f == 1.0 {
                (theta / 2.0).cos().powi(2)
            } else {
                1.0 - f * (theta / 2.0).sin().powi(2)
            }
        };
        (stay(f0), stay(f1))
    } else {
        let (flip0, flip1) = match form {
            DampingForm::Full => (
                b0 * (1.0 - envelope * (cos_t + (a + b) * sinc_t)),
                b1 * (1.0 - envelope * (cos_t + (a + b) * sinc_t)) + 2.0 * b * envelope * sinc_t,
            ),
            DampingForm::Envelope => (b0 * (1.0 - envelope * cos_t), b1 * (1.0 - envelope * cos_t)),
        };
        (clamp_probability("p0", 1.0 - f0 * flip0), clamp_probability("p1", 1.0 - f1 * flip1))
    };

    Ok(SurvivalModel {
        p0,
        p1,
        b0,
        b1,
        a,
        b,
        theta_damped,
        overdamped,
        f0,
        f1,
        form,
    })
}

fn clamp_probability(name: &str, p: f64) -> f64 {
    if (0.0..=1.0).contains(&p) {
        p
    } else {
        log::warn!("{name} = {p} outside [0, 1], clamped");
        p.clamp(0.0, 1.0)
    }
}
