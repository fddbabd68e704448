//! TOML experiment configuration.
//!
//! ```toml
//! [model]
//! arrival_rate = 10.0
//! n_servers = 5
//! service_rate = 1.5
//! escalation_fee = 2.0
//! holding_coeff = 0.5
//! beta_shape = [2.0, 5.0]
//! cost_coeffs = [50.0, 100.0]
//! cost_exponent = 2.0
//! generator = [[-0.05, 0.05], [0.2, -0.2]]
//! ```
//!
//! The `solver`, `simulation`, `safety` and `sweep` sections are optional
//! and fall back to their defaults. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{DriftChain, Model, QueueEconomics, RiskModel, ScoreDistribution};
use crate::sim::{default_static_grid, SimConfig};
use crate::solver::SolverConfig;
use crate::stability::SafetySpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arrival_rate: f64,
    pub n_servers: usize,
    pub service_rate: f64,
    pub escalation_fee: f64,
    pub holding_coeff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_shape: Option<[f64; 2]>,
    /// `[score, probability]` pairs; alternative to `beta_shape`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_atoms: Option<Vec<[f64; 2]>>,
    pub cost_coeffs: Vec<f64>,
    pub cost_exponent: f64,
    pub generator: Vec<Vec<f64>>,
}

impl ModelSection {
    pub fn build(&self) -> Result<Model> {
        let distribution = match (&self.beta_shape, &self.score_atoms) {
            (Some([a, b]), None) => ScoreDistribution::beta(*a, *b)?,
            (None, Some(atoms)) => ScoreDistribution::discrete(
                atoms.iter().map(|p| (p[0], p[1])).collect(),
            )
            .map_err(|e| match e {
                Error::InvalidParameter { reason, .. } => {
                    Error::invalid("model.score_atoms", reason)
                }
                other => other,
            })?,
            _ => {
                return Err(Error::invalid(
                    "model.beta_shape",
                    "exactly one of `beta_shape` and `score_atoms` must be given",
                ))
            }
        };
        let economics = QueueEconomics {
            arrival_rate: self.arrival_rate,
            n_servers: self.n_servers,
            service_rate: self.service_rate,
            escalation_fee: self.escalation_fee,
            holding_coeff: self.holding_coeff,
        };
        let risk = RiskModel::new(distribution, self.cost_coeffs.clone(), self.cost_exponent)?;
        let drift = DriftChain::new(self.generator.clone())?;
        Model::new(economics, risk, drift)
    }
}

/// Either an explicit list or `count` evenly spaced points from `start` to
/// `stop` inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, stop, count } => match count {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n)
                    .map(|i| start + (stop - start) * i as f64 / (*n - 1) as f64)
                    .collect(),
            },
        }
    }

    fn check(&self, key: &str, lo: f64, hi: f64) -> Result<()> {
        let pts = self.points();
        if pts.is_empty() {
            return Err(Error::invalid(key, "grid must not be empty"));
        }
        if let Some(bad) = pts
            .iter()
            .find(|x| !(x.is_finite() && **x >= lo && **x <= hi))
        {
            return Err(Error::invalid(
                key,
                format!("grid value {bad} outside [{lo}, {hi}]"),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Arrival rates of the phase diagram.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_rates: Option<Grid>,
    /// Drift multipliers of the phase diagram.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_multipliers: Option<Grid>,
    /// Drift multipliers of the agility sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agility_multipliers: Option<Grid>,
    /// Candidates of the static grid search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_grid: Option<Grid>,
}

impl SweepSection {
    pub fn static_grid(&self) -> Vec<f64> {
        self.static_grid
            .as_ref()
            .map_or_else(default_static_grid, Grid::points)
    }

    pub fn phase_grids(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match (&self.arrival_rates, &self.drift_multipliers) {
            (Some(a), Some(d)) => Ok((a.points(), d.points())),
            (None, _) => Err(Error::invalid(
                "sweep.arrival_rates",
                "required by the phase command",
            )),
            (_, None) => Err(Error::invalid(
                "sweep.drift_multipliers",
                "required by the phase command",
            )),
        }
    }

    pub fn agility_grid(&self) -> Result<Vec<f64>> {
        self.agility_multipliers
            .as_ref()
            .map(Grid::points)
            .ok_or_else(|| {
                Error::invalid(
                    "sweep.agility_multipliers",
                    "required by the agility command",
                )
            })
    }

    fn validate(&self) -> Result<()> {
        if let Some(g) = &self.arrival_rates {
            g.check("sweep.arrival_rates", 0.0, f64::MAX)?;
        }
        if let Some(g) = &self.drift_multipliers {
            g.check("sweep.drift_multipliers", f64::MIN_POSITIVE, f64::MAX)?;
        }
        if let Some(g) = &self.agility_multipliers {
            g.check("sweep.agility_multipliers", f64::MIN_POSITIVE, f64::MAX)?;
        }
        if let Some(g) = &self.static_grid {
            g.check("sweep.static_grid", 0.0, 1.0)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub safety: SafetySpec,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks every section; returns the built model.
    pub fn validate(&self) -> Result<Model> {
        let model = self.model.build()?;
        self.solver.validate(&model)?;
        self.simulation.validate()?;
        self.simulation
            .severe_cutoff
            .resolve(&model, &self.safety)?;
        SafetySpec::new(self.safety.epsilon)?;
        self.sweep.validate()?;
        Ok(model)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex_digest(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    /// Hash of the inputs that determine the solved policies.
    pub fn solve_hash(&self) -> String {
        hex_digest(
            serde_json::to_string(&(&self.model, &self.solver))
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
