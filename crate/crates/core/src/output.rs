//! CSV and JSON artifacts.
//!
//! Floats are written in their shortest round-trip form, so re-reading any
//! artifact recovers the in-memory values exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Threshold;
use crate::sim::{AgilityPoint, Comparison, Estimate, ReplicationMetrics, StaticSearch};
use crate::solver::{ThresholdTable, ValueTable};
use crate::stability::{PhaseDiagram, StabilityClass};

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// One row of the solved policy table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub q: usize,
    pub theta: usize,
    #[serde(rename = "V")]
    pub value: f64,
    /// Empty at the queue cap.
    #[serde(rename = "deltaV")]
    pub marginal: Option<f64>,
    #[serde(rename = "T")]
    pub threshold: Threshold,
}

pub fn policy_rows(values: &ValueTable, thresholds: &ThresholdTable) -> Vec<PolicyRow> {
    let mut rows = Vec::with_capacity(values.values.len());
    for q in 0..=values.queue_cap {
        for theta in 0..values.n_regimes {
            rows.push(PolicyRow {
                q,
                theta,
                value: values.value(q, theta),
                marginal: (q < values.queue_cap).then(|| values.marginal(q, theta)),
                threshold: thresholds.get(q, theta),
            });
        }
    }
    rows
}

/// Rebuilds the threshold table and the raw values from policy rows.
pub fn tables_from_rows(rows: &[PolicyRow]) -> Result<(ThresholdTable, Vec<f64>)> {
    let cap = rows
        .iter()
        .map(|r| r.q)
        .max()
        .ok_or_else(|| Error::Artifact("empty policy table".into()))?;
    let k = rows.iter().map(|r| r.theta).max().unwrap_or(0) + 1;
    if rows.len() != (cap + 1) * k {
        return Err(Error::Artifact(format!(
            "policy table has {} rows, expected {}",
            rows.len(),
            (cap + 1) * k
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.q != i / k || r.theta != i % k {
            return Err(Error::Artifact(format!(
                "policy table row {i} out of order"
            )));
        }
    }
    let table = ThresholdTable::new(cap, k, rows.iter().map(|r| r.threshold).collect())?;
    Ok((table, rows.iter().map(|r| r.value).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub arrival_rate: f64,
    pub drift_multiplier: f64,
    #[serde(rename = "pi_H")]
    pub pi_drift: f64,
    #[serde(rename = "Lambda_req")]
    pub required_capacity: f64,
    pub headroom: f64,
    pub class: String,
}

pub fn phase_rows(diagram: &PhaseDiagram) -> Vec<PhaseRow> {
    diagram
        .cells
        .iter()
        .map(|c| PhaseRow {
            arrival_rate: c.arrival_rate,
            drift_multiplier: c.drift_multiplier,
            pi_drift: c.pi_drift,
            required_capacity: c.required_capacity,
            headroom: c.headroom,
            class: c.class.label().to_string(),
        })
        .collect()
}

impl PhaseRow {
    pub fn class(&self) -> Result<StabilityClass> {
        StabilityClass::parse(&self.class)
            .ok_or_else(|| Error::Artifact(format!("bad class `{}`", self.class)))
    }
}

/// Per-replication metrics of one policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub policy: String,
    pub replication: usize,
    pub avg_total_cost: f64,
    pub holding_cost_rate: f64,
    pub decision_cost_rate: f64,
    pub avg_queue_length: f64,
    pub severe_error_rate: f64,
    pub escalation_fraction: f64,
    pub automation_fraction: f64,
    pub mean_sojourn: f64,
    pub back_half_slope: f64,
    pub arrivals: u64,
    pub escalations: u64,
    pub automations: u64,
    pub completions: u64,
    pub final_queue: u64,
}

impl MetricsRow {
    pub fn new(policy: &str, r: &ReplicationMetrics) -> Self {
        Self {
            policy: policy.to_string(),
            replication: r.replication,
            avg_total_cost: r.avg_total_cost,
            holding_cost_rate: r.holding_cost_rate,
            decision_cost_rate: r.decision_cost_rate,
            avg_queue_length: r.avg_queue_length,
            severe_error_rate: r.severe_error_rate,
            escalation_fraction: r.escalation_fraction,
            automation_fraction: r.automation_fraction,
            mean_sojourn: r.mean_sojourn,
            back_half_slope: r.back_half_slope,
            arrivals: r.counts.arrivals,
            escalations: r.counts.escalations,
            automations: r.counts.automations,
            completions: r.counts.completions,
            final_queue: r.counts.final_queue,
        }
    }
}

pub fn comparison_metric_rows(cmp: &Comparison) -> Vec<MetricsRow> {
    cmp.rows
        .iter()
        .flat_map(|row| {
            row.metrics
                .replications
                .iter()
                .map(|r| MetricsRow::new(&row.policy, r))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticCurveRow {
    pub threshold: f64,
    pub cost_mean: f64,
    pub cost_half_width: f64,
    pub queue_mean: f64,
    pub severe_mean: f64,
}

pub fn static_curve_rows(search: &StaticSearch) -> Vec<StaticCurveRow> {
    search
        .curve
        .iter()
        .map(|c| StaticCurveRow {
            threshold: c.threshold,
            cost_mean: c.avg_total_cost.mean,
            cost_half_width: c.avg_total_cost.half_width,
            queue_mean: c.avg_queue_length.mean,
            severe_mean: c.severe_error_rate.mean,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgilityRow {
    pub drift_multiplier: f64,
    #[serde(rename = "pi_H")]
    pub pi_drift: f64,
    pub static_threshold: f64,
    pub cost_st: f64,
    pub cost_st_half_width: f64,
    pub cost_db: f64,
    pub cost_db_half_width: f64,
    pub cost_odp: f64,
    pub cost_odp_half_width: f64,
    pub savings: f64,
    pub paired_savings: f64,
    pub paired_savings_half_width: f64,
}

pub fn agility_rows(points: &[AgilityPoint]) -> Vec<AgilityRow> {
    points
        .iter()
        .map(|p| AgilityRow {
            drift_multiplier: p.drift_multiplier,
            pi_drift: p.pi_drift,
            static_threshold: p.static_threshold,
            cost_st: p.cost_static.mean,
            cost_st_half_width: p.cost_static.half_width,
            cost_db: p.cost_drift_blind.mean,
            cost_db_half_width: p.cost_drift_blind.half_width,
            cost_odp: p.cost_optimal.mean,
            cost_odp_half_width: p.cost_optimal.half_width,
            savings: p.savings,
            paired_savings: p.paired_savings.mean,
            paired_savings_half_width: p.paired_savings.half_width,
        })
        .collect()
}

/// Table-shaped summary: one entry per policy with the headline metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub policy: String,
    pub avg_total_cost: Estimate,
    pub avg_queue_length: Estimate,
    pub severe_error_rate: Estimate,
    pub escalation_fraction: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub static_threshold: f64,
    pub policies: Vec<SummaryEntry>,
    pub savings_vs_static: f64,
    pub paired_savings_vs_static: Estimate,
    pub savings_drift_blind_vs_static: f64,
}

impl ComparisonSummary {
    pub fn new(cmp: &Comparison) -> Self {
        Self {
            static_threshold: cmp.static_search.best_threshold,
            policies: cmp
                .rows
                .iter()
                .map(|r| SummaryEntry {
                    policy: r.policy.clone(),
                    avg_total_cost: r.metrics.avg_total_cost,
                    avg_queue_length: r.metrics.avg_queue_length,
                    severe_error_rate: r.metrics.severe_error_rate,
                    escalation_fraction: r.metrics.escalation_fraction,
                })
                .collect(),
            savings_vs_static: cmp.savings_vs_static,
            paired_savings_vs_static: cmp.paired_savings_vs_static,
            savings_drift_blind_vs_static: cmp.savings_drift_blind_vs_static,
        }
    }
}

/// What a run produced, for humans and for cache bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{PhaseValidation, SimConfig};
    use crate::solver::SolverConfig;
    use crate::{Model, ScoreKernel};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("escalation-output-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn policy_table_round_trips() {
        let values = ValueTable::from_values(
            2,
            2,
            vec![0.1, 1.0 / 3.0, 2.5, 1e-17, 7.0, f64::MAX],
            10.0,
            0.01,
        )
        .unwrap();
        let thresholds = ThresholdTable::new(
            2,
            2,
            vec![
                Threshold::At(0.0),
                Threshold::At(0.123456789012345),
                Threshold::At(1.0),
                Threshold::At(2.0f64.sqrt() / 2.0),
                Threshold::Never,
                Threshold::Never,
            ],
        )
        .unwrap();
        let rows = policy_rows(&values, &thresholds);
        let path = tmp("policy.csv");
        write_csv(&path, &rows).unwrap();
        let back: Vec<PolicyRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
        let (t, v) = tables_from_rows(&back).unwrap();
        assert_eq!(t, thresholds);
        assert_eq!(v, values.values);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("q,theta,V,deltaV,T\n"));
    }

    #[test]
    fn phase_rows_round_trip() {
        let model = Model::moderation_scenario();
        let kernel = ScoreKernel::new(&model.risk, SolverConfig::default().s_grid_size);
        let diagram = crate::stability::phase_diagram(
            &[4.0, 9.5, 20.0],
            &[0.5, 1.0],
            &model,
            &Default::default(),
            &kernel,
        )
        .unwrap();
        let rows = phase_rows(&diagram);
        let path = tmp("phase.csv");
        write_csv(&path, &rows).unwrap();
        let back: Vec<PhaseRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
        for (r, c) in back.iter().zip(&diagram.cells) {
            assert_eq!(r.class().unwrap(), c.class);
        }
    }

    #[test]
    fn json_round_trips_exactly() {
        let est = Estimate {
            mean: 0.1 + 0.2,
            half_width: 1.0 / 3.0,
        };
        let path = tmp("est.json");
        write_json(&path, &est).unwrap();
        let back: Estimate = read_json(&path).unwrap();
        assert_eq!(back, est);
        let v = PhaseValidation::default();
        write_json(&path, &v).unwrap();
        assert_eq!(read_json::<PhaseValidation>(&path).unwrap(), v);
        let cfg = SimConfig::default();
        write_json(&path, &cfg).unwrap();
        assert_eq!(read_json::<SimConfig>(&path).unwrap(), cfg);
    }

    #[test]
    fn malformed_policy_rows_are_rejected() {
        let row = |q, theta| PolicyRow {
            q,
            theta,
            value: 0.0,
            marginal: None,
            threshold: Threshold::Never,
        };
        assert!(tables_from_rows(&[]).is_err());
        assert!(tables_from_rows(&[row(0, 0), row(1, 1)]).is_err());
        assert!(tables_from_rows(&[row(1, 0), row(0, 0)]).is_err());
    }
}
