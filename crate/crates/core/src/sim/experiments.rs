//! Benchmark experiments built on the simulator.

use serde::{Deserialize, Serialize};

use super::{simulate_many, EscalationPolicy, Estimate, SimConfig, SimMetrics};
use crate::error::{Error, Result};
use crate::model::{DriftChain, Model, RiskModel, Threshold};
use crate::quadrature::ScoreKernel;
use crate::solver::{solve, SolverConfig, ThresholdTable};
use crate::stability::{safety_thresholds, PhaseCell, PhaseDiagram, SafetySpec, StabilityClass};

/// One candidate of the static grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticCandidate {
    pub threshold: f64,
    pub avg_total_cost: Estimate,
    pub avg_queue_length: Estimate,
    pub severe_error_rate: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticSearch {
    pub best_threshold: f64,
    pub best_cost: Estimate,
    pub curve: Vec<StaticCandidate>,
}

/// Default static grid `0.00, 0.01, ..., 1.00`.
pub fn default_static_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Simulates every candidate on the same inputs and returns the one with
/// the lowest mean cost, preferring the larger threshold on ties.
pub fn grid_search_static(
    model: &Model,
    config: &SimConfig,
    safety: &SafetySpec,
    grid: &[f64],
) -> Result<StaticSearch> {
    if grid.is_empty() {
        return Err(Error::invalid("sweep.static_grid", "must not be empty"));
    }
    if let Some(bad) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid(
            "sweep.static_grid",
            format!("threshold {bad} outside [0,1]"),
        ));
    }
    let policies: Vec<EscalationPolicy> = grid
        .iter()
        .map(|&t| EscalationPolicy::Static(Threshold::At(t)))
        .collect();
    let results = simulate_many(&policies, model, config, safety)?;
    let curve: Vec<StaticCandidate> = grid
        .iter()
        .zip(&results)
        .map(|(&threshold, m)| StaticCandidate {
            threshold,
            avg_total_cost: m.avg_total_cost,
            avg_queue_length: m.avg_queue_length,
            severe_error_rate: m.severe_error_rate,
        })
        .collect();
    let best = curve
        .iter()
        .reduce(|best, c| {
            let (a, b) = (c.avg_total_cost.mean, best.avg_total_cost.mean);
            if a < b || (a == b && c.threshold > best.threshold) {
                c
            } else {
                best
            }
        })
        .expect("non-empty grid");
    Ok(StaticSearch {
        best_threshold: best.threshold,
        best_cost: best.avg_total_cost,
        curve: curve.clone(),
    })
}

/// Single-regime model whose cost coefficient is the stationary average of
/// the per-regime coefficients.
pub fn averaged_model(model: &Model) -> Result<Model> {
    let pi = model.drift.stationary_distribution()?;
    let coeff: f64 = pi
        .iter()
        .zip(&model.risk.cost_coeffs)
        .map(|(p, a)| p * a)
        .sum();
    let risk = RiskModel::new(
        model.risk.distribution.clone(),
        vec![coeff],
        model.risk.cost_exponent,
    )?;
    Model::new(model.economics.clone(), risk, DriftChain::single())
}

/// Per-q thresholds of the averaged single-regime model.
pub fn build_drift_blind(model: &Model, solver: &SolverConfig) -> Result<Vec<Threshold>> {
    let (_, table) = solve(&averaged_model(model)?, solver)?;
    Ok(table.curve(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy: String,
    pub metrics: SimMetrics,
}

/// Static, drift-blind and optimal policies simulated on paired inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub static_search: StaticSearch,
    /// Rows in the order ST, DB, ODP.
    pub rows: Vec<PolicyRow>,
    /// `(cost_ST - cost_ODP) / cost_ST` from the mean costs.
    pub savings_vs_static: f64,
    /// Per-replication paired savings.
    pub paired_savings_vs_static: Estimate,
    pub savings_drift_blind_vs_static: f64,
}

impl Comparison {
    pub fn row(&self, policy: &str) -> Option<&SimMetrics> {
        self.rows
            .iter()
            .find(|r| r.policy == policy)
            .map(|r| &r.metrics)
    }
}

/// Comparison with the optimal table and the drift-blind curve supplied by
/// the caller.
pub fn compare_with_policies(
    model: &Model,
    optimal: &ThresholdTable,
    drift_blind: &[Threshold],
    config: &SimConfig,
    safety: &SafetySpec,
    static_grid: &[f64],
) -> Result<Comparison> {
    let static_search = grid_search_static(model, config, safety, static_grid)?;
    let policies = vec![
        EscalationPolicy::Static(Threshold::At(static_search.best_threshold)),
        EscalationPolicy::DriftBlind(drift_blind.to_vec()),
        EscalationPolicy::Optimal(optimal.clone()),
    ];
    let results = simulate_many(&policies, model, config, safety)?;
    let savings = |base: &SimMetrics, other: &SimMetrics| {
        let b = base.avg_total_cost.mean;
        if b > 0.0 {
            (b - other.avg_total_cost.mean) / b
        } else {
            0.0
        }
    };
    let (st, db, odp) = (&results[0], &results[1], &results[2]);
    let paired: Vec<f64> = st
        .replications
        .iter()
        .zip(&odp.replications)
        .map(|(s, o)| {
            if s.avg_total_cost > 0.0 {
                (s.avg_total_cost - o.avg_total_cost) / s.avg_total_cost
            } else {
                0.0
            }
        })
        .collect();
    Ok(Comparison {
        savings_vs_static: savings(st, odp),
        paired_savings_vs_static: Estimate::from_samples(&paired),
        savings_drift_blind_vs_static: savings(st, db),
        static_search,
        rows: results
            .into_iter()
            .map(|m| PolicyRow {
                policy: m.policy.clone(),
                metrics: m,
            })
            .collect(),
    })
}

/// Solves the optimal and drift-blind policies, then compares them with the
/// best static threshold.
pub fn compare_policies(
    model: &Model,
    solver: &SolverConfig,
    config: &SimConfig,
    safety: &SafetySpec,
    static_grid: &[f64],
) -> Result<Comparison> {
    solver.validate(model)?;
    let (_, optimal) = solve(model, solver)?;
    let drift_blind = build_drift_blind(model, solver)?;
    compare_with_policies(model, &optimal, &drift_blind, config, safety, static_grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgilityPoint {
    pub drift_multiplier: f64,
    /// Stationary probability of the most degraded regime.
    pub pi_drift: f64,
    pub static_threshold: f64,
    pub cost_static: Estimate,
    pub cost_drift_blind: Estimate,
    pub cost_optimal: Estimate,
    pub savings: f64,
    pub paired_savings: Estimate,
}

/// Relative savings of the optimal policy over the best static one as the
/// into-drift rates are scaled. `solve_policies` returns the optimal table
/// and drift-blind curve for a model, which lets callers cache solves.
pub fn value_of_agility_sweep<F>(
    drift_grid: &[f64],
    model: &Model,
    config: &SimConfig,
    safety: &SafetySpec,
    static_grid: &[f64],
    mut solve_policies: F,
) -> Result<Vec<AgilityPoint>>
where
    F: FnMut(&Model) -> Result<(ThresholdTable, Vec<Threshold>)>,
{
    if drift_grid.is_empty() {
        return Err(Error::invalid(
            "sweep.agility_multipliers",
            "must not be empty",
        ));
    }
    drift_grid
        .iter()
        .map(|&mult| {
            let scaled = model.with_drift_multiplier(mult)?;
            let (optimal, drift_blind) = solve_policies(&scaled)?;
            let cmp = compare_with_policies(
                &scaled,
                &optimal,
                &drift_blind,
                config,
                safety,
                static_grid,
            )?;
            let pi = scaled.drift.stationary_distribution()?;
            let cost = |p: &str| cmp.row(p).map(|m| m.avg_total_cost).unwrap_or_default();
            Ok(AgilityPoint {
                drift_multiplier: mult,
                pi_drift: *pi.last().expect("at least one regime"),
                static_threshold: cmp.static_search.best_threshold,
                cost_static: cost("ST"),
                cost_drift_blind: cost("DB"),
                cost_optimal: cost("ODP"),
                savings: cmp.savings_vs_static,
                paired_savings: cmp.paired_savings_vs_static,
            })
        })
        .collect()
}

/// Minimum `|headroom| / (m mu)` of a cell eligible for validation.
pub const VALIDATION_MARGIN: f64 = 0.1;
/// Allowed relative error of the simulated growth rate against the fluid
/// prediction in unstable cells.
pub const FLUID_TOLERANCE: f64 = 0.25;

/// Simulated check of one phase-diagram cell under the policy that always
/// uses the safe thresholds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseValidation {
    pub arrival_rate: f64,
    pub drift_multiplier: f64,
    pub predicted: Option<StabilityClass>,
    /// `Lambda_req - m mu`.
    pub fluid_slope: f64,
    pub slope: Estimate,
    pub avg_queue_length: Estimate,
    /// Stable when the slope interval covers zero, unstable when it lies
    /// above zero.
    pub empirical: Option<StabilityClass>,
    /// For unstable cells, whether the slope is within the fluid tolerance.
    pub within_fluid_band: bool,
    pub agrees: bool,
}

/// Picks up to `n` evenly spaced cells of `class` whose headroom is at
/// least [`VALIDATION_MARGIN`] of capacity.
pub fn sample_cells(diagram: &PhaseDiagram, class: StabilityClass, n: usize) -> Vec<PhaseCell> {
    let eligible: Vec<&PhaseCell> = diagram
        .cells
        .iter()
        .filter(|c| c.class == class && c.headroom.abs() >= VALIDATION_MARGIN * diagram.capacity)
        .collect();
    if n == 0 || eligible.is_empty() {
        return Vec::new();
    }
    let n = n.min(eligible.len());
    (0..n)
        .map(|i| eligible[(2 * i + 1) * eligible.len() / (2 * n)].clone())
        .collect()
}

/// Simulates the safe-threshold policy in `n` stable and `n` unstable
/// cells of `diagram`.
pub fn validate_phase_cells(
    diagram: &PhaseDiagram,
    base: &Model,
    config: &SimConfig,
    safety: &SafetySpec,
    kernel: &ScoreKernel,
    n: usize,
) -> Result<Vec<PhaseValidation>> {
    let policy = EscalationPolicy::FixedSafety(
        safety_thresholds(safety, kernel)
            .into_iter()
            .map(Threshold::At)
            .collect(),
    );
    let mut cells = sample_cells(diagram, StabilityClass::Stable, n);
    cells.extend(sample_cells(diagram, StabilityClass::Unstable, n));
    cells
        .iter()
        .map(|cell| {
            let model = base
                .with_drift_multiplier(cell.drift_multiplier)?
                .with_arrival_rate(cell.arrival_rate)?;
            let metrics =
                simulate_many(std::slice::from_ref(&policy), &model, config, safety)?.remove(0);
            let slope = metrics.back_half_slope;
            let fluid_slope = -cell.headroom;
            let empirical = if slope.lower() > 0.0 {
                Some(StabilityClass::Unstable)
            } else if slope.contains(0.0) {
                Some(StabilityClass::Stable)
            } else {
                None
            };
            let within_fluid_band =
                (slope.mean - fluid_slope).abs() <= FLUID_TOLERANCE * fluid_slope.abs();
            let agrees = empirical == Some(cell.class)
                && (cell.class != StabilityClass::Unstable || within_fluid_band);
            Ok(PhaseValidation {
                arrival_rate: cell.arrival_rate,
                drift_multiplier: cell.drift_multiplier,
                predicted: Some(cell.class),
                fluid_slope,
                slope,
                avg_queue_length: metrics.avg_queue_length,
                empirical,
                within_fluid_band,
                agrees,
            })
        })
        .collect()
}
