//! Trajectory file format.
//!
//! ```text
//! # zeno-trajectories v1
//! # [drive]
//! # theta = 2.0
//! # ...
//! 1110010001111...
//! 1101111100011...
//! ```
//!
//! The first line is the magic line. Following `#` lines carry the
//! [`ExperimentConfig`] as TOML, one line each with the `# ` prefix stripped.
//! Every remaining line is one trajectory in substream order, one character
//! per measurement: `1` for ON, `0` for OFF.

use std::fmt::Write as _;
use std::path::Path;

use zeno_core::protocol::{Outcome, Trajectory};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const MAGIC: &str = "# zeno-trajectories v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub config: ExperimentConfig,
    pub trajectories: Vec<Vec<Outcome>>,
}

impl TrajectoryFile {
    pub fn from_trajectories(config: ExperimentConfig, trajectories: &[Trajectory]) -> Self {
        TrajectoryFile {
            config,
            trajectories: trajectories.iter().map(|t| t.outcomes.clone()).collect(),
        }
    }

    /// Rebuilds [`Trajectory`] values, taking provenance from the header.
    pub fn to_trajectories(&self) -> Result<Vec<Trajectory>> {
        let drive = self.config.drive()?;
        let fidelities = self.config.fidelities()?;
        Ok(self
            .trajectories
            .iter()
            .enumerate()
            .map(|(i, outcomes)| Trajectory {
                outcomes: outcomes.clone(),
                seed: self.config.run.seed,
                stream: i as u64,
                drive,
                fidelities,
                mode: self.config.run.mode,
            })
            .collect())
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for line in self.config.to_toml().lines() {
            if line.is_empty() {
                out.push_str("#\n");
            } else {
                let _ = writeln!(out, "# {line}");
            }
        }
        for t in &self.trajectories {
            out.extend(t.iter().map(|o| o.symbol()));
            out.push('\n');
        }
        out
    }

    /// Parses a file; `source` names it in error messages.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, message: String| CliError::Format { path: source.to_string(), line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(err(1, format!("expected magic line `{MAGIC}`"))),
        }

        let mut header = String::new();
        let mut body = Vec::new();
        let mut header_end = 1;
        for (n, line) in lines.by_ref() {
            if let Some(rest) = line.strip_prefix('#') {
                header.push_str(rest.strip_prefix(' ').unwrap_or(rest));
                header.push('\n');
                header_end = n;
            } else {
                body.push((n, line));
                break;
            }
        }
        body.extend(lines);

        let config = ExperimentConfig::parse(&header).map_err(|e| err(header_end, format!("header: {e}")))?;

        let mut trajectories = Vec::with_capacity(body.len());
        for (n, line) in body {
            let mut outcomes = Vec::with_capacity(line.len());
            for (col, c) in line.chars().enumerate() {
                let o = Outcome::from_symbol(c)
                    .ok_or_else(|| err(n, format!("column {}: invalid record {c:?}, expected '0' or '1'", col + 1)))?;
                outcomes.push(o);
            }
            if outcomes.len() != config.run.n_measurements {
                return Err(err(
                    n,
                    format!("trajectory has {} records, header says {}", outcomes.len(), config.run.n_measurements),
                ));
            }
            trajectories.push(outcomes);
        }
        if trajectories.len() != config.run.n_trajectories {
            return Err(err(
                text.lines().count(),
                format!("found {} trajectories, header says {}", trajectories.len(), config.run.n_trajectories),
            ));
        }
        Ok(TrajectoryFile { config, trajectories })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}
