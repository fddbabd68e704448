//! Uniformized dynamic program for the escalation MDP.
//!
//! The continuous-time problem is uniformized at the tight rate
//! `Lambda = lambda + m mu + max_i |q_ii|` (optionally inflated), giving a
//! discrete-time operator with modulus `beta = Lambda / (Lambda + alpha)`.
//! Value iteration runs Jacobi sweeps from `V = 0` on `{0..=Q_max} x Theta`.
//! At `q = Q_max` escalation is unavailable and arriving tasks are
//! automated.

mod certify;

pub use certify::{
    certify_all, truncation_check, verify_congestion_shedding, verify_convexity,
    verify_drift_monotonicity, AssumptionGap, CertificationBundle, ConvexityReport,
    ConvexityViolation, DriftMonotonicityReport, MonotonicityViolation, QueueMonotonicityReport,
    TruncationReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, Threshold};
use crate::quadrature::ScoreKernel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Continuous discount rate alpha, per minute.
    pub discount_rate: f64,
    /// Largest queue length on the grid.
    pub queue_cap: usize,
    /// Number of quadrature cells for expectations over the score.
    pub s_grid_size: usize,
    /// Sup-norm residual at which value iteration stops.
    pub convergence_tol: f64,
    pub max_iterations: usize,
    /// Multiplier (>= 1) on the tight uniformization rate.
    pub uniformization_inflation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            discount_rate: 0.01,
            queue_cap: 500,
            s_grid_size: 2000,
            convergence_tol: 1e-8,
            max_iterations: 200_000,
            uniformization_inflation: 1.0,
        }
    }
}

impl SolverConfig {
    /// Checks that do not depend on the model. The solver itself accepts
    /// any `queue_cap >= 1` so tiny verification instances can be solved.
    pub fn check(&self) -> Result<()> {
        if !(self.discount_rate > 0.0 && self.discount_rate.is_finite()) {
            return Err(Error::invalid(
                "solver.discount_rate",
                "must be a positive finite number",
            ));
        }
        if self.queue_cap < 1 {
            return Err(Error::invalid("solver.queue_cap", "must be at least 1"));
        }
        if self.s_grid_size < 16 {
            return Err(Error::invalid("solver.s_grid_size", "must be at least 16"));
        }
        if !(self.convergence_tol > 0.0 && self.convergence_tol.is_finite()) {
            return Err(Error::invalid(
                "solver.convergence_tol",
                "must be a positive finite number",
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid(
                "solver.max_iterations",
                "must be at least 1",
            ));
        }
        if !(self.uniformization_inflation >= 1.0 && self.uniformization_inflation.is_finite()) {
            return Err(Error::invalid(
                "solver.uniformization_inflation",
                "must be a finite number >= 1",
            ));
        }
        Ok(())
    }

    /// Full validation for production runs: the queue must be truncated
    /// well beyond the server count.
    pub fn validate(&self, model: &Model) -> Result<()> {
        self.check()?;
        let min_cap = model.economics.n_servers + 10;
        if self.queue_cap < min_cap {
            return Err(Error::invalid(
                "solver.queue_cap",
                format!("must be at least n_servers + 10 = {min_cap}"),
            ));
        }
        Ok(())
    }
}

/// Solved (or intermediate) value function on the truncated grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub queue_cap: usize,
    pub n_regimes: usize,
    /// Row-major `(q, theta)`, length `(queue_cap + 1) * n_regimes`.
    pub values: Vec<f64>,
    /// `values[q+1][theta] - values[q][theta]`, length `queue_cap * n_regimes`.
    pub marginals: Vec<f64>,
    pub uniformization_rate: f64,
    pub discrete_discount: f64,
    pub iterations_used: usize,
    pub final_residual: f64,
    pub convergence_tol: f64,
    #[serde(skip)]
    pub residual_trace: Vec<f64>,
}

impl ValueTable {
    pub fn from_values(
        queue_cap: usize,
        n_regimes: usize,
        values: Vec<f64>,
        uniformization_rate: f64,
        discount_rate: f64,
    ) -> Result<Self> {
        if values.len() != (queue_cap + 1) * n_regimes {
            return Err(Error::Domain(format!(
                "value table needs {} entries, got {}",
                (queue_cap + 1) * n_regimes,
                values.len()
            )));
        }
        let mut table = Self {
            queue_cap,
            n_regimes,
            values,
            marginals: Vec::new(),
            uniformization_rate,
            discrete_discount: uniformization_rate / (uniformization_rate + discount_rate),
            iterations_used: 0,
            final_residual: f64::NAN,
            convergence_tol: f64::NAN,
            residual_trace: Vec::new(),
        };
        table.refresh_marginals();
        Ok(table)
    }

    /// Zero table shaped for `model` and `config`.
    pub fn zeros(model: &Model, config: &SolverConfig) -> Self {
        let rate = config.uniformization_inflation * uniformization_rate(model);
        Self::from_values(
            config.queue_cap,
            model.n_regimes(),
            vec![0.0; (config.queue_cap + 1) * model.n_regimes()],
            rate,
            config.discount_rate,
        )
        .expect("shape is consistent")
    }

    fn refresh_marginals(&mut self) {
        let k = self.n_regimes;
        self.marginals = (0..self.queue_cap * k)
            .map(|i| self.values[i + k] - self.values[i])
            .collect();
    }

    pub fn value(&self, q: usize, theta: usize) -> f64 {
        self.values[q * self.n_regimes + theta]
    }

    /// `Delta_q V(q, theta)`; requires `q < queue_cap`.
    pub fn marginal(&self, q: usize, theta: usize) -> f64 {
        self.marginals[q * self.n_regimes + theta]
    }

    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        sup_distance(&self.values, &other.values)
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Optimal escalation cutoffs `T*(q, theta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub queue_cap: usize,
    pub n_regimes: usize,
    /// Row-major `(q, theta)`.
    pub thresholds: Vec<Threshold>,
}

impl ThresholdTable {
    pub fn new(queue_cap: usize, n_regimes: usize, thresholds: Vec<Threshold>) -> Result<Self> {
        if thresholds.len() != (queue_cap + 1) * n_regimes {
            return Err(Error::Domain(format!(
                "threshold table needs {} entries, got {}",
                (queue_cap + 1) * n_regimes,
                thresholds.len()
            )));
        }
        for t in &thresholds {
            if let Threshold::At(x) = t {
                if !(0.0..=1.0).contains(x) {
                    return Err(Error::Domain(format!("threshold {x} outside [0,1]")));
                }
            }
        }
        Ok(Self {
            queue_cap,
            n_regimes,
            thresholds,
        })
    }

    pub fn get(&self, q: usize, theta: usize) -> Threshold {
        self.thresholds[q * self.n_regimes + theta]
    }

    /// Threshold curve over `q` for one regime.
    pub fn curve(&self, theta: usize) -> Vec<Threshold> {
        (0..=self.queue_cap).map(|q| self.get(q, theta)).collect()
    }
}

/// Tight uniformization rate `lambda + m mu + max_i |q_ii|`.
pub fn uniformization_rate(model: &Model) -> f64 {
    model.economics.arrival_rate + model.economics.max_service() + model.drift.max_exit_rate()
}

/// The uniformized Bellman operator with its quadrature precomputed.
pub struct BellmanOperator<'a> {
    model: &'a Model,
    kernel: ScoreKernel,
    rate: f64,
    discount_rate: f64,
    queue_cap: usize,
}

impl<'a> BellmanOperator<'a> {
    pub fn new(model: &'a Model, config: &SolverConfig) -> Result<Self> {
        config.check()?;
        Ok(Self {
            model,
            kernel: ScoreKernel::new(&model.risk, config.s_grid_size),
            rate: config.uniformization_inflation * uniformization_rate(model),
            discount_rate: config.discount_rate,
            queue_cap: config.queue_cap,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn discount(&self) -> f64 {
        self.rate / (self.rate + self.discount_rate)
    }

    pub fn kernel(&self) -> &ScoreKernel {
        &self.kernel
    }

    /// `E_S[ min{c_auto(S) + V(q), c_h + V(q+1)} ]` on a raw value slice.
    /// At the cap escalation is unavailable.
    fn intervention(&self, values: &[f64], q: usize, theta: usize) -> f64 {
        let k = self.model.n_regimes();
        let here = values[q * k + theta];
        if q >= self.queue_cap {
            return self.kernel.expected_cost(theta) + here;
        }
        let fee = self.model.economics.escalation_fee;
        let next = values[(q + 1) * k + theta];
        let cutoff = match self.kernel.cutoff(fee + next - here, theta) {
            Threshold::At(t) => t,
            Threshold::Never => f64::INFINITY,
        };
        let (below, moment) = self.kernel.truncated(cutoff);
        below * here + (1.0 - below) * (fee + next) + self.kernel.coeff(theta) * moment
    }

    /// One Jacobi sweep `out = T values`.
    pub fn apply_into(&self, values: &[f64], out: &mut [f64]) -> Result<()> {
        let k = self.model.n_regimes();
        let econ = &self.model.economics;
        let lambda = econ.arrival_rate;
        let norm = (self.rate + self.discount_rate).recip();
        for q in 0..=self.queue_cap {
            let service = econ.service_capacity(q);
            let below = q.saturating_sub(1);
            for theta in 0..k {
                let here = values[q * k + theta];
                let mut drift_terms = 0.0;
                let mut drift_out = 0.0;
                for other in 0..k {
                    if other != theta {
                        let r = self.model.drift.rate(theta, other);
                        drift_terms += r * values[q * k + other];
                        drift_out += r;
                    }
                }
                let arrivals = if lambda > 0.0 {
                    lambda * self.intervention(values, q, theta)
                } else {
                    0.0
                };
                let total = econ.holding_cost(q)
                    + arrivals
                    + service * values[below * k + theta]
                    + drift_terms
                    + (self.rate - lambda - service - drift_out) * here;
                let v = total * norm;
                if !v.is_finite() {
                    return Err(Error::NonFinite { q, theta });
                }
                out[q * k + theta] = v;
            }
        }
        Ok(())
    }
}

/// `E_S[M V(q, theta, S)]` for a table.
pub fn intervention_value(
    q: usize,
    theta: usize,
    table: &ValueTable,
    model: &Model,
    config: &SolverConfig,
) -> Result<f64> {
    check_shape(table, model, config)?;
    if q > config.queue_cap || theta >= model.n_regimes() {
        return Err(Error::Domain(format!(
            "state (q={q}, theta={theta}) outside the grid"
        )));
    }
    let op = BellmanOperator::new(model, config)?;
    Ok(op.intervention(&table.values, q, theta))
}

fn check_shape(table: &ValueTable, model: &Model, config: &SolverConfig) -> Result<()> {
    if table.queue_cap != config.queue_cap || table.n_regimes != model.n_regimes() {
        return Err(Error::Domain(format!(
            "table shape ({}, {}) does not match grid ({}, {})",
            table.queue_cap,
            table.n_regimes,
            config.queue_cap,
            model.n_regimes()
        )));
    }
    Ok(())
}

/// One application of the Bellman operator.
pub fn bellman_apply(
    table: &ValueTable,
    model: &Model,
    config: &SolverConfig,
) -> Result<ValueTable> {
    check_shape(table, model, config)?;
    let op = BellmanOperator::new(model, config)?;
    let mut out = vec![0.0; table.values.len()];
    op.apply_into(&table.values, &mut out)?;
    let residual = sup_distance(&out, &table.values);
    let mut next = ValueTable::from_values(
        config.queue_cap,
        model.n_regimes(),
        out,
        op.rate(),
        config.discount_rate,
    )?;
    next.iterations_used = table.iterations_used + 1;
    next.final_residual = residual;
    next.convergence_tol = config.convergence_tol;
    Ok(next)
}

/// Value iteration from `V = 0` until the sup-norm step falls to
/// `convergence_tol`.
pub fn value_iteration(model: &Model, config: &SolverConfig) -> Result<ValueTable> {
    let op = BellmanOperator::new(model, config)?;
    let n = (config.queue_cap + 1) * model.n_regimes();
    let mut current = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut trace = Vec::new();
    for iteration in 1..=config.max_iterations {
        op.apply_into(&current, &mut next)?;
        let residual = sup_distance(&next, &current);
        trace.push(residual);
        std::mem::swap(&mut current, &mut next);
        if residual <= config.convergence_tol {
            let mut table = ValueTable::from_values(
                config.queue_cap,
                model.n_regimes(),
                current,
                op.rate(),
                config.discount_rate,
            )?;
            table.iterations_used = iteration;
            table.final_residual = residual;
            table.convergence_tol = config.convergence_tol;
            table.residual_trace = trace;
            return Ok(table);
        }
    }
    Err(Error::NotConverged {
        iterations: config.max_iterations,
        residual: trace.last().copied().unwrap_or(f64::NAN),
        trace,
    })
}

/// `T*(q, theta) = c_auto^{-1}(c_h + Delta_q V(q, theta) | theta)`, with
/// `Never` at the cap.
pub fn extract_thresholds(table: &ValueTable, model: &Model) -> Result<ThresholdTable> {
    if table.n_regimes != model.n_regimes() {
        return Err(Error::Domain(
            "value table regimes do not match the model".into(),
        ));
    }
    let fee = model.economics.escalation_fee;
    let mut thresholds = Vec::with_capacity(table.values.len());
    for q in 0..=table.queue_cap {
        for theta in 0..table.n_regimes {
            let t = if q == table.queue_cap {
                Threshold::Never
            } else {
                let target = (fee + table.marginal(q, theta)).max(0.0);
                model.risk.invert_cost_auto(target, theta)?
            };
            thresholds.push(t);
        }
    }
    ThresholdTable::new(table.queue_cap, table.n_regimes, thresholds)
}

/// Solve and extract in one go.
pub fn solve(model: &Model, config: &SolverConfig) -> Result<(ValueTable, ThresholdTable)> {
    let values = value_iteration(model, config)?;
    let thresholds = extract_thresholds(&values, model)?;
    Ok((values, thresholds))
}
