//! Numerical certificates for the structural properties of a solved
//! instance: convexity of `V` in `q`, thresholds rising in `q`, thresholds
//! falling in the drift regime, and insensitivity to the queue cap.
//!
//! Each check tolerates errors of order `10 * convergence_tol`, pushed
//! through the inverse cost where thresholds are compared.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Model, Threshold};

use super::{solve, SolverConfig, ThresholdTable, ValueTable};

const MAX_LISTED: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityViolation {
    pub q: usize,
    pub theta: usize,
    pub second_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub passed: bool,
    pub slack: f64,
    pub min_second_difference: f64,
    pub violation_count: usize,
    pub violations: Vec<ConvexityViolation>,
}

/// `Delta V(q+1) >= Delta V(q) - 10 tol` for every `q < Q_max - 1`.
pub fn verify_convexity(table: &ValueTable) -> ConvexityReport {
    let slack = if table.convergence_tol.is_finite() {
        10.0 * table.convergence_tol
    } else {
        0.0
    };
    let mut min_second = f64::INFINITY;
    let mut violations = Vec::new();
    let mut count = 0;
    for theta in 0..table.n_regimes {
        for q in 0..table.queue_cap.saturating_sub(1) {
            let second = table.marginal(q + 1, theta) - table.marginal(q, theta);
            min_second = min_second.min(second);
            if second < -slack {
                count += 1;
                if violations.len() < MAX_LISTED {
                    violations.push(ConvexityViolation {
                        q,
                        theta,
                        second_difference: second,
                    });
                }
            }
        }
    }
    ConvexityReport {
        passed: count == 0,
        slack,
        min_second_difference: if min_second.is_finite() {
            min_second
        } else {
            0.0
        },
        violation_count: count,
        violations,
    }
}

/// A pair of thresholds that breaks the expected ordering by more than
/// the numerical slack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub q_first: usize,
    pub q_second: usize,
    pub theta_first: usize,
    pub theta_second: usize,
    pub threshold_first: Threshold,
    pub threshold_second: Threshold,
    pub shortfall: f64,
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueMonotonicityReport {
    pub passed: bool,
    pub max_shortfall: f64,
    pub violation_count: usize,
    pub violations: Vec<MonotonicityViolation>,
}

/// Slack on a threshold comparison: the fixed-point tolerance mapped
/// through the inverse cost at the flatter of the two thresholds.
fn threshold_slack(model: &Model, tol: f64, a: (Threshold, usize), b: (Threshold, usize)) -> f64 {
    let slope = |(t, theta): (Threshold, usize)| match t {
        Threshold::At(x) => model.risk.cost_slope(x, theta).unwrap_or(0.0),
        Threshold::Never => f64::INFINITY,
    };
    let s = slope(a).min(slope(b));
    if s > 0.0 {
        10.0 * tol / s
    } else {
        f64::INFINITY
    }
}

/// `T(q2, theta) >= T(q1, theta) - eps` for all `q2 > q1`.
pub fn verify_congestion_shedding(
    thresholds: &ThresholdTable,
    model: &Model,
    tol: f64,
) -> QueueMonotonicityReport {
    let mut violations = Vec::new();
    let mut count = 0;
    let mut max_shortfall: f64 = 0.0;
    for theta in 0..thresholds.n_regimes {
        let curve = thresholds.curve(theta);
        for (q1, &t1) in curve.iter().enumerate() {
            for (q2, &t2) in curve.iter().enumerate().skip(q1 + 1) {
                let shortfall = t1.value() - t2.value();
                if !(shortfall > 0.0) {
                    continue;
                }
                let slack = threshold_slack(model, tol, (t1, theta), (t2, theta));
                max_shortfall = max_shortfall.max(shortfall.min(f64::MAX));
                if shortfall > slack {
                    count += 1;
                    if violations.len() < MAX_LISTED {
                        violations.push(MonotonicityViolation {
                            q_first: q1,
                            q_second: q2,
                            theta_first: theta,
                            theta_second: theta,
                            threshold_first: t1,
                            threshold_second: t2,
                            shortfall,
                            slack,
                        });
                    }
                }
            }
        }
    }
    QueueMonotonicityReport {
        passed: count == 0,
        max_shortfall,
        violation_count: count,
        violations,
    }
}

/// Empirical drift-dominance check for one regime pair:
/// `inf_s [c(s, hi) - c(s, lo)]` against `sup_q [Delta V(q, hi) - Delta V(q, lo)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionGap {
    pub theta_low: usize,
    pub theta_high: usize,
    pub cost_gap_inf: f64,
    pub marginal_gap_sup: f64,
    /// `cost_gap_inf - marginal_gap_sup`; non-negative when dominance holds.
    pub margin: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftMonotonicityReport {
    pub assumption: Vec<AssumptionGap>,
    pub assumption_holds: bool,
    /// Ordering `T(q, hi) <= T(q, lo) + eps` at every `q`.
    pub passed: bool,
    /// "guaranteed" when the dominance check passed, otherwise
    /// "not guaranteed by theory".
    pub status: String,
    pub violation_count: usize,
    pub violations: Vec<MonotonicityViolation>,
}

/// Two-part drift check: the dominance condition measured on the solved
/// `V` (scanned on `grid_size` scores), then the threshold ordering across
/// regimes.
pub fn verify_drift_monotonicity(
    thresholds: &ThresholdTable,
    table: &ValueTable,
    model: &Model,
    grid_size: usize,
) -> DriftMonotonicityReport {
    let k = thresholds.n_regimes;
    let tol = table.convergence_tol;
    let grid_size = grid_size.max(2);
    let mut assumption = Vec::new();
    for lo in 0..k {
        for hi in lo + 1..k {
            let cost_gap_inf = (0..grid_size)
                .map(|i| {
                    let s = i as f64 / (grid_size - 1) as f64;
                    model.risk.cost_auto(s, hi).unwrap_or(f64::NAN)
                        - model.risk.cost_auto(s, lo).unwrap_or(f64::NAN)
                })
                .fold(f64::INFINITY, f64::min);
            let marginal_gap_sup = (0..table.queue_cap)
                .map(|q| table.marginal(q, hi) - table.marginal(q, lo))
                .fold(f64::NEG_INFINITY, f64::max);
            let margin = cost_gap_inf - marginal_gap_sup;
            assumption.push(AssumptionGap {
                theta_low: lo,
                theta_high: hi,
                cost_gap_inf,
                marginal_gap_sup,
                margin,
                holds: margin >= -10.0 * tol,
            });
        }
    }
    let assumption_holds = assumption.iter().all(|g| g.holds);

    let mut violations = Vec::new();
    let mut count = 0;
    for q in 0..=thresholds.queue_cap {
        for lo in 0..k {
            for hi in lo + 1..k {
                let (t_lo, t_hi) = (thresholds.get(q, lo), thresholds.get(q, hi));
                if t_hi.is_never() && t_lo.is_never() {
                    continue;
                }
                let shortfall = t_hi.value() - t_lo.value();
                if !(shortfall > 0.0) {
                    continue;
                }
                let slack = threshold_slack(model, tol, (t_lo, lo), (t_hi, hi));
                if shortfall > slack {
                    count += 1;
                    if violations.len() < MAX_LISTED {
                        violations.push(MonotonicityViolation {
                            q_first: q,
                            q_second: q,
                            theta_first: lo,
                            theta_second: hi,
                            threshold_first: t_lo,
                            threshold_second: t_hi,
                            shortfall,
                            slack,
                        });
                    }
                }
            }
        }
    }
    DriftMonotonicityReport {
        assumption,
        assumption_holds,
        passed: count == 0,
        status: if assumption_holds {
            "guaranteed".into()
        } else {
            "not guaranteed by theory".into()
        },
        violation_count: count,
        violations,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub passed: bool,
    pub queue_cap: usize,
    pub extended_cap: usize,
    /// Compared range `0..=compared_up_to`.
    pub compared_up_to: usize,
    pub max_threshold_gap: f64,
    pub max_marginal_gap: f64,
    pub mismatches: usize,
}

/// Compare thresholds on the lower half of the grid against a solve at
/// twice the cap.
pub fn truncation_check(
    model: &Model,
    config: &SolverConfig,
    base: &ThresholdTable,
    base_values: &ValueTable,
) -> Result<TruncationReport> {
    let extended = SolverConfig {
        queue_cap: 2 * config.queue_cap,
        ..config.clone()
    };
    let (ext_values, ext_thresholds) = solve(model, &extended)?;
    Ok(compare_truncations(
        model,
        config,
        base,
        base_values,
        &ext_thresholds,
        &ext_values,
    ))
}

pub(crate) fn compare_truncations(
    model: &Model,
    config: &SolverConfig,
    base: &ThresholdTable,
    base_values: &ValueTable,
    ext: &ThresholdTable,
    ext_values: &ValueTable,
) -> TruncationReport {
    let upto = config.queue_cap / 2;
    let tol = config.convergence_tol;
    let mut max_gap: f64 = 0.0;
    let mut max_marginal_gap: f64 = 0.0;
    let mut mismatches = 0;
    for q in 0..=upto {
        for theta in 0..base.n_regimes {
            let (a, b) = (base.get(q, theta), ext.get(q, theta));
            if q < base_values.queue_cap {
                max_marginal_gap = max_marginal_gap
                    .max((base_values.marginal(q, theta) - ext_values.marginal(q, theta)).abs());
            }
            let gap = match (a, b) {
                (Threshold::Never, Threshold::Never) => 0.0,
                _ => (a.value() - b.value()).abs(),
            };
            max_gap = max_gap.max(gap.min(f64::MAX));
            if gap > threshold_slack(model, tol, (a, theta), (b, theta)) {
                mismatches += 1;
            }
        }
    }
    TruncationReport {
        passed: mismatches == 0,
        queue_cap: base.queue_cap,
        extended_cap: ext.queue_cap,
        compared_up_to: upto,
        max_threshold_gap: max_gap,
        max_marginal_gap,
        mismatches,
    }
}

/// All three structural certificates for one solved instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationBundle {
    pub convexity: ConvexityReport,
    pub congestion_shedding: QueueMonotonicityReport,
    pub drift_monotonicity: DriftMonotonicityReport,
}

pub fn certify_all(
    table: &ValueTable,
    thresholds: &ThresholdTable,
    model: &Model,
) -> CertificationBundle {
    CertificationBundle {
        convexity: verify_convexity(table),
        congestion_shedding: verify_congestion_shedding(thresholds, model, table.convergence_tol),
        drift_monotonicity: verify_drift_monotonicity(thresholds, table, model, 101),
    }
}
