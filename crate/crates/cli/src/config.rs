//! Experiment configuration file.
//!
//! A TOML document with `[drive]`, `[fidelity]` and `[run]` tables. Drive
//! frequencies are given in Hz (`*_hz`) or rad/s (`*_rad_s`) and converted to
//! rad/s once, in [`ExperimentConfig::drive`]. Relaxation rates are plain
//! rates in 1/s. Unknown keys are rejected.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use zeno_core::protocol::{Fidelities, Mode, DEFAULT_MEASUREMENTS};
use zeno_core::DriveConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub drive: DriveSection,
    #[serde(default)]
    pub fidelity: FidelitySection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    /// Rabi frequency Ω/2π.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi_rad_s: Option<f64>,
    /// Nutation angle Ωτ; alternative to giving the Rabi frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Detuning Δ/2π.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detuning_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detuning_rad_s: Option<f64>,
    pub tau_s: f64,
    #[serde(default)]
    pub dephasing_rate: f64,
    #[serde(default)]
    pub decay_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelitySection {
    #[serde(default = "one")]
    pub f0: f64,
    #[serde(default = "one")]
    pub f1: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for FidelitySection {
    fn default() -> Self {
        FidelitySection { f0: 1.0, f1: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_measurements")]
    pub n_measurements: usize,
    #[serde(default = "default_trajectories")]
    pub n_trajectories: usize,
    #[serde(default, serialize_with = "ser_seed", deserialize_with = "de_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
}

fn default_measurements() -> usize {
    DEFAULT_MEASUREMENTS
}

fn default_trajectories() -> usize {
    1
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            n_measurements: DEFAULT_MEASUREMENTS,
            n_trajectories: 1,
            seed: 0,
            mode: Mode::Markov,
        }
    }
}

// TOML integers are signed 64-bit; seeds above i64::MAX are written as strings.
fn ser_seed<S: Serializer>(seed: &u64, s: S) -> std::result::Result<S::Ok, S::Error> {
    match i64::try_from(*seed) {
        Ok(v) => s.serialize_i64(v),
        Err(_) => s.serialize_str(&seed.to_string()),
    }
}

fn de_seed<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Int(v) => u64::try_from(v).map_err(|_| serde::de::Error::custom(format!("seed must be non-negative, got {v}"))),
        Raw::Str(s) => s.parse().map_err(|_| serde::de::Error::custom(format!("seed `{s}` is not a 64-bit unsigned integer"))),
    }
}

fn exactly_one(field: &str, options: &[(&str, Option<f64>)]) -> Result<Option<(usize, f64)>> {
    let given: Vec<(usize, f64)> = options
        .iter()
        .enumerate()
        .filter_map(|(i, (_, v))| v.map(|v| (i, v)))
        .collect();
    match given.as_slice() {
        [] => Ok(None),
        [one] => Ok(Some(*one)),
        _ => Err(CliError::Config(format!(
            "drive.{field}: give only one of {}",
            options.iter().map(|(n, _)| format!("`{n}`")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.drive()?;
        self.fidelities()?;
        if self.run.n_measurements < 1 {
            return Err(CliError::Config("run.n_measurements must be at least 1".into()));
        }
        if self.run.n_trajectories < 1 {
            return Err(CliError::Config("run.n_trajectories must be at least 1".into()));
        }
        Ok(())
    }

    /// Drive in internal units (rad/s).
    pub fn drive(&self) -> Result<DriveConfig> {
        let d = &self.drive;
        if !(d.tau_s.is_finite() && d.tau_s > 0.0) {
            return Err(CliError::Config(format!("drive.tau_s must be positive, got {}", d.tau_s)));
        }
        let omega = match exactly_one("rabi", &[("rabi_hz", d.rabi_hz), ("rabi_rad_s", d.rabi_rad_s), ("theta", d.theta)])? {
            Some((0, hz)) => TAU * hz,
            Some((1, rad)) => rad,
            Some((_, theta)) => theta / d.tau_s,
            None => return Err(CliError::Config("drive: one of `rabi_hz`, `rabi_rad_s`, `theta` is required".into())),
        };
        let delta = match exactly_one("detuning", &[("detuning_hz", d.detuning_hz), ("detuning_rad_s", d.detuning_rad_s)])? {
            Some((0, hz)) => TAU * hz,
            Some((_, rad)) => rad,
            None => 0.0,
        };
        DriveConfig::new(omega, delta, d.tau_s, d.dephasing_rate, d.decay_rate)
            .map_err(|e| CliError::Config(format!("drive: {e}")))
    }

    pub fn fidelities(&self) -> Result<Fidelities> {
        Fidelities::new(self.fidelity.f0, self.fidelity.f1).map_err(|e| CliError::Config(format!("fidelity: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[drive]
theta = 2.0
tau_s = 1e-5
dephasing_rate = 1000.0

[fidelity]
f1 = 0.9

[run]
n_trajectories = 4
seed = 17
mode = "full-quantum"
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::parse(BASIC).unwrap();
        assert_eq!(cfg.run.n_measurements, 500);
        assert_eq!(cfg.fidelity.f0, 1.0);
        assert_eq!(cfg.run.mode, Mode::FullQuantum);
        let drive = cfg.drive().unwrap();
        assert!((drive.theta() - 2.0).abs() < 1e-12);
        assert_eq!(drive.decay, 0.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = BASIC.replace("dephasing_rate", "dephasing_rat");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("dephasing_rat"), "{err}");
        let text = format!("{BASIC}\n[extra]\nx = 1\n");
        assert!(ExperimentConfig::parse(&text).unwrap_err().to_string().contains("extra"));
    }

    #[test]
    fn conflicting_and_missing_rabi() {
        let text = BASIC.replace("theta = 2.0", "theta = 2.0\nrabi_hz = 1000.0");
        assert!(ExperimentConfig::parse(&text).unwrap_err().to_string().contains("only one"));
        let text = BASIC.replace("theta = 2.0", "");
        assert!(ExperimentConfig::parse(&text).unwrap_err().to_string().contains("required"));
    }

    #[test]
    fn bad_values_name_their_field() {
        let err = ExperimentConfig::parse(&BASIC.replace("f1 = 0.9", "f1 = 1.5")).unwrap_err().to_string();
        assert!(err.contains("f1"), "{err}");
        let err = ExperimentConfig::parse(&BASIC.replace("tau_s = 1e-5", "tau_s = -1.0")).unwrap_err().to_string();
        assert!(err.contains("tau"), "{err}");
        let err = ExperimentConfig::parse(&BASIC.replace("n_trajectories = 4", "n_trajectories = 0")).unwrap_err().to_string();
        assert!(err.contains("n_trajectories"), "{err}");
    }

    #[test]
    fn hz_converts_once() {
        let hz = ExperimentConfig::parse("[drive]\nrabi_hz = 5000.0\ndetuning_hz = -300.0\ntau_s = 1e-4\n").unwrap();
        let rad = ExperimentConfig::parse(&format!(
            "[drive]\nrabi_rad_s = {}\ndetuning_rad_s = {}\ntau_s = 1e-4\n",
            TAU * 5000.0,
            TAU * -300.0
        ))
        .unwrap();
        assert_eq!(hz.drive().unwrap(), rad.drive().unwrap());
    }

    #[test]
    fn large_seed_round_trips() {
        let mut cfg = ExperimentConfig::parse(BASIC).unwrap();
        cfg.run.seed = u64::MAX;
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert!(ExperimentConfig::parse(&BASIC.replace("seed = 17", "seed = -3")).is_err());
    }
}
