//! Safety-constrained capacity analysis.
//!
//! For an error budget `eps`, `T_bar(theta)` is the largest cutoff whose
//! automated cost mass `E[c_auto(S, theta) 1{S < tau}]` stays within `eps`.
//! Everything above it must go to humans, giving a mandatory load
//! `lambda_min(theta)`; its stationary average `Lambda_req` against the
//! service capacity `m mu` separates stable from unstable systems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DriftChain, Model};
use crate::quadrature::ScoreKernel;

/// Bisection resolution for `T_bar`.
pub const SAFETY_RESOLUTION: f64 = 1e-10;
/// Relative half-width of the band around `m mu` labelled "boundary".
pub const BOUNDARY_BAND: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetySpec {
    pub epsilon: f64,
}

impl Default for SafetySpec {
    fn default() -> Self {
        Self { epsilon: 1.0 }
    }
}

impl SafetySpec {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(
                "safety.epsilon",
                "must be a non-negative finite number",
            ));
        }
        Ok(Self { epsilon })
    }
}

/// `sup { tau in [0,1] : E[c_auto(S, theta) 1{S < tau}] <= eps }`.
pub fn safety_threshold(theta: usize, spec: &SafetySpec, kernel: &ScoreKernel) -> f64 {
    if kernel.cost_below(1.0, theta) <= spec.epsilon {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > SAFETY_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if kernel.cost_below(mid, theta) <= spec.epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn safety_thresholds(spec: &SafetySpec, kernel: &ScoreKernel) -> Vec<f64> {
    (0..kernel.n_regimes())
        .map(|theta| safety_threshold(theta, spec, kernel))
        .collect()
}

/// `lambda * P(S >= T_bar)`.
pub fn min_arrival_rate(arrival_rate: f64, safe_threshold: f64, kernel: &ScoreKernel) -> f64 {
    (arrival_rate * (1.0 - kernel.prob_below(safe_threshold))).clamp(0.0, arrival_rate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityBreakdown {
    pub stationary: Vec<f64>,
    pub safe_thresholds: Vec<f64>,
    pub min_rates: Vec<f64>,
    pub required_capacity: f64,
}

/// `Lambda_req = sum_theta pi_theta lambda_min(theta)`.
pub fn required_capacity(
    chain: &DriftChain,
    arrival_rate: f64,
    spec: &SafetySpec,
    kernel: &ScoreKernel,
) -> Result<CapacityBreakdown> {
    if chain.n_states() != kernel.n_regimes() {
        return Err(Error::Domain(
            "drift chain and cost model disagree on the regime count".into(),
        ));
    }
    let stationary = chain.stationary_distribution()?;
    let safe_thresholds = safety_thresholds(spec, kernel);
    let min_rates: Vec<f64> = safe_thresholds
        .iter()
        .map(|&t| min_arrival_rate(arrival_rate, t, kernel))
        .collect();
    let required_capacity = stationary.iter().zip(&min_rates).map(|(p, r)| p * r).sum();
    Ok(CapacityBreakdown {
        stationary,
        safe_thresholds,
        min_rates,
        required_capacity,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityClass {
    Stable,
    Unstable,
    Boundary,
}

impl StabilityClass {
    pub fn label(self) -> &'static str {
        match self {
            StabilityClass::Stable => "stable",
            StabilityClass::Unstable => "unstable",
            StabilityClass::Boundary => "boundary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stable" => Some(StabilityClass::Stable),
            "unstable" => Some(StabilityClass::Unstable),
            "boundary" => Some(StabilityClass::Boundary),
            _ => None,
        }
    }
}

pub fn classify_stability(required: f64, n_servers: usize, service_rate: f64) -> StabilityClass {
    let capacity = n_servers as f64 * service_rate;
    let band = BOUNDARY_BAND * capacity;
    if required < capacity - band {
        StabilityClass::Stable
    } else if required > capacity + band {
        StabilityClass::Unstable
    } else {
        StabilityClass::Boundary
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub arrival_rate: f64,
    pub drift_multiplier: f64,
    /// Stationary mass of the most degraded regime.
    pub pi_drift: f64,
    pub required_capacity: f64,
    pub headroom: f64,
    pub class: StabilityClass,
}

/// Point where the headroom crosses zero along one arrival-rate slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub drift_multiplier: f64,
    pub arrival_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub arrival_rates: Vec<f64>,
    pub drift_multipliers: Vec<f64>,
    pub capacity: f64,
    /// Drift-major: `cells[d * arrival_rates.len() + i]`.
    pub cells: Vec<PhaseCell>,
    pub boundary: Vec<BoundaryPoint>,
}

impl PhaseDiagram {
    pub fn cell(&self, drift_index: usize, arrival_index: usize) -> &PhaseCell {
        &self.cells[drift_index * self.arrival_rates.len() + arrival_index]
    }
}

/// Sweep arrival rate x drift multiplier. The multiplier scales every
/// into-drift rate of the base chain.
pub fn phase_diagram(
    arrival_rates: &[f64],
    drift_multipliers: &[f64],
    base: &Model,
    spec: &SafetySpec,
    kernel: &ScoreKernel,
) -> Result<PhaseDiagram> {
    if arrival_rates.is_empty() || drift_multipliers.is_empty() {
        return Err(Error::Config(
            "phase diagram needs non-empty arrival and drift grids".into(),
        ));
    }
    let econ = &base.economics;
    let capacity = econ.max_service();
    let safe = safety_thresholds(spec, kernel);
    let mut cells = Vec::with_capacity(arrival_rates.len() * drift_multipliers.len());
    let mut boundary = Vec::new();
    for &mult in drift_multipliers {
        let chain = base.drift.scale_drift(mult)?;
        let pi = chain.stationary_distribution()?;
        let pi_drift = *pi.last().expect("non-empty chain");
        let mut previous: Option<(f64, f64)> = None;
        for &rate in arrival_rates {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::invalid(
                    "sweep.arrival_rates",
                    format!("bad rate {rate}"),
                ));
            }
            let required: f64 = pi
                .iter()
                .zip(&safe)
                .map(|(p, &t)| p * min_arrival_rate(rate, t, kernel))
                .sum();
            let headroom = capacity - required;
            if let Some((prev_rate, prev_headroom)) = previous {
                if (prev_headroom > 0.0) != (headroom > 0.0) && prev_headroom != headroom {
                    let w = prev_headroom / (prev_headroom - headroom);
                    boundary.push(BoundaryPoint {
                        drift_multiplier: mult,
                        arrival_rate: prev_rate + w * (rate - prev_rate),
                    });
                }
            }
            previous = Some((rate, headroom));
            cells.push(PhaseCell {
                arrival_rate: rate,
                drift_multiplier: mult,
                pi_drift,
                required_capacity: required,
                headroom,
                class: classify_stability(required, econ.n_servers, econ.service_rate),
            });
        }
    }
    Ok(PhaseDiagram {
        arrival_rates: arrival_rates.to_vec(),
        drift_multipliers: drift_multipliers.to_vec(),
        capacity,
        cells,
        boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RiskModel, ScoreDistribution};

    fn kernel() -> ScoreKernel {
        let risk = RiskModel::new(
            ScoreDistribution::beta(2.0, 5.0).unwrap(),
            vec![50.0, 100.0],
            2.0,
        )
        .unwrap();
        ScoreKernel::new(&risk, 2000)
    }

    #[test]
    fn zero_budget_forces_zero_threshold() {
        let k = kernel();
        assert!(safety_threshold(0, &SafetySpec::new(0.0).unwrap(), &k) <= SAFETY_RESOLUTION);
    }

    #[test]
    fn generous_budget_allows_full_automation() {
        let k = kernel();
        assert_eq!(
            safety_threshold(0, &SafetySpec::new(50.0 * 6.0 / 56.0 + 1e-5).unwrap(), &k),
            1.0
        );
        assert_eq!(
            safety_threshold(1, &SafetySpec::new(1000.0).unwrap(), &k),
            1.0
        );
    }

    #[test]
    fn unit_budget_against_riemann_oracle() {
        let k = kernel();
        let t = safety_threshold(0, &SafetySpec::new(1.0).unwrap(), &k);
        // independent 1e6-cell Riemann sum of 50 s^2 * 30 s (1-s)^4
        let n = 1_000_000;
        let g = |tau: f64| {
            let h = tau / n as f64;
            (0..n)
                .map(|i| {
                    let s = (i as f64 + 0.5) * h;
                    50.0 * s * s * 30.0 * s * (1.0 - s).powi(4) * h
                })
                .sum::<f64>()
        };
        assert!((g(t) - 1.0).abs() < 1e-5, "G(T_bar) = {}", g(t));
        assert!(g(t + 1e-4) > 1.0);
        assert!(t > 0.2 && t < 0.5);
    }

    #[test]
    fn safety_threshold_falls_with_cost() {
        let k = kernel();
        let spec = SafetySpec::new(1.0).unwrap();
        assert!(safety_threshold(1, &spec, &k) < safety_threshold(0, &spec, &k));
    }

    #[test]
    fn min_rate_examples() {
        let k = kernel();
        assert_eq!(min_arrival_rate(10.0, 1.0, &k), 0.0);
        assert_eq!(min_arrival_rate(10.0, 0.0, &k), 10.0);
        let closed = 10.0 * (6.0 * 0.2f64.powi(5) - 5.0 * 0.2f64.powi(6));
        assert!((min_arrival_rate(10.0, 0.8, &k) - closed).abs() < 1e-12);
        assert!((min_arrival_rate(10.0, 0.8, &k) - 0.016).abs() < 1e-5);
    }

    #[test]
    fn required_capacity_weighting() {
        let k = kernel();
        let spec = SafetySpec::new(1.0).unwrap();
        let chain = DriftChain::two_state(0.05, 0.2).unwrap();
        let b = required_capacity(&chain, 10.0, &spec, &k).unwrap();
        let expected = 0.8 * b.min_rates[0] + 0.2 * b.min_rates[1];
        assert!((b.required_capacity - expected).abs() < 1e-12);
        assert!(b.min_rates[1] >= b.min_rates[0]);

        let single_risk =
            RiskModel::new(ScoreDistribution::beta(2.0, 5.0).unwrap(), vec![50.0], 2.0).unwrap();
        let k1 = ScoreKernel::new(&single_risk, 2000);
        let b1 = required_capacity(&DriftChain::single(), 10.0, &spec, &k1).unwrap();
        assert_eq!(b1.required_capacity, b1.min_rates[0]);

        let lax = SafetySpec::new(1e6).unwrap();
        assert_eq!(
            required_capacity(&chain, 10.0, &lax, &k)
                .unwrap()
                .required_capacity,
            0.0
        );
    }

    #[test]
    fn classification() {
        assert_eq!(classify_stability(0.0, 5, 1.5), StabilityClass::Stable);
        assert_eq!(classify_stability(15.0, 5, 1.5), StabilityClass::Unstable);
        assert_eq!(classify_stability(7.5, 5, 1.5), StabilityClass::Boundary);
        assert_eq!(
            classify_stability(7.5 - 1e-6, 5, 1.5),
            StabilityClass::Stable
        );
        assert_eq!(
            classify_stability(7.5 + 1e-6, 5, 1.5),
            StabilityClass::Unstable
        );
    }

    #[test]
    fn single_cell_diagram() {
        let model = Model::moderation_scenario();
        let d = phase_diagram(&[10.0], &[1.0], &model, &SafetySpec::default(), &kernel()).unwrap();
        assert_eq!(d.cells.len(), 1);
        assert!((d.cells[0].pi_drift - 0.2).abs() < 1e-12);
        assert!(phase_diagram(&[], &[1.0], &model, &SafetySpec::default(), &kernel()).is_err());
    }
}
