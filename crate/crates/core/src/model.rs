//! Problem data: arrivals, the human queue, the drift chain, and the
//! regime-indexed automation cost.
//!
//! Everything here is immutable after construction. The primitive
//! evaluations (`cost_auto`, `invert_cost_auto`, `risk_cdf`,
//! `stationary_distribution`) are consumed by the solver, the stability
//! analysis and the simulator.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};

/// Escalation cutoff on the risk score. A task with score `s` is escalated
/// iff `s >= t`. `Never` means the escalation set is empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    At(f64),
    Never,
}

impl Threshold {
    /// Numeric view with `Never` mapped to +inf.
    pub fn value(self) -> f64 {
        match self {
            Threshold::At(t) => t,
            Threshold::Never => f64::INFINITY,
        }
    }

    pub fn escalates(self, score: f64) -> bool {
        match self {
            Threshold::At(t) => score >= t,
            Threshold::Never => false,
        }
    }

    pub fn is_never(self) -> bool {
        matches!(self, Threshold::Never)
    }
}

impl PartialOrd for Threshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

pub const NEVER_LABEL: &str = "NEVER";

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::At(t) => write!(f, "{t}"),
            Threshold::Never => f.write_str(NEVER_LABEL),
        }
    }
}

impl FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == NEVER_LABEL {
            return Ok(Threshold::Never);
        }
        s.parse::<f64>()
            .map(Threshold::At)
            .map_err(|_| Error::Artifact(format!("bad threshold `{s}`")))
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::At(t) => serializer.serialize_f64(*t),
            Threshold::Never => serializer.serialize_str(NEVER_LABEL),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Label(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(t) => Ok(Threshold::At(t)),
            Raw::Label(s) if s == NEVER_LABEL => Ok(Threshold::Never),
            Raw::Label(s) => Err(serde::de::Error::custom(format!("bad threshold `{s}`"))),
        }
    }
}

/// Law of the risk score of an arriving task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreDistribution {
    Beta {
        shape_a: f64,
        shape_b: f64,
    },
    /// Finitely many atoms `(score, probability)`. Used for exact
    /// verification on tiny instances.
    Discrete {
        atoms: Vec<(f64, f64)>,
    },
}

impl ScoreDistribution {
    pub fn beta(shape_a: f64, shape_b: f64) -> Result<Self> {
        if !(shape_a > 0.0 && shape_a.is_finite()) {
            return Err(Error::invalid(
                "model.beta_shape[0]",
                "must be a positive finite number",
            ));
        }
        if !(shape_b > 0.0 && shape_b.is_finite()) {
            return Err(Error::invalid(
                "model.beta_shape[1]",
                "must be a positive finite number",
            ));
        }
        Ok(ScoreDistribution::Beta { shape_a, shape_b })
    }

    pub fn discrete(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("atoms", "at least one atom required"));
        }
        for &(s, p) in &atoms {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid("atoms", format!("score {s} outside [0,1]")));
            }
            if !(p > 0.0) {
                return Err(Error::invalid(
                    "atoms",
                    format!("probability {p} must be positive"),
                ));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "atoms",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(ScoreDistribution::Discrete { atoms })
    }

    /// P(S <= s).
    pub fn cdf(&self, s: f64) -> f64 {
        match self {
            ScoreDistribution::Beta { shape_a, shape_b } => beta_cdf(*shape_a, *shape_b, s),
            ScoreDistribution::Discrete { atoms } => {
                atoms.iter().filter(|a| a.0 <= s).map(|a| a.1).sum()
            }
        }
    }

    /// P(S < s). Equal to `cdf` for the continuous family.
    pub fn prob_below(&self, s: f64) -> f64 {
        match self {
            ScoreDistribution::Beta { shape_a, shape_b } => beta_cdf(*shape_a, *shape_b, s),
            ScoreDistribution::Discrete { atoms } => {
                atoms.iter().filter(|a| a.0 < s).map(|a| a.1).sum()
            }
        }
    }
}

/// Regularized incomplete beta `I_x(a, b)`, clamped outside `[0, 1]`.
///
/// Integer shapes with a modest `a + b` use the finite binomial expansion,
/// which is exact and much cheaper than the continued fraction.
pub fn beta_cdf(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if a.fract() == 0.0 && b.fract() == 0.0 && a + b <= 60.0 {
        let (a, n) = (a as u32, (a + b) as u32 - 1);
        // I_x(a, b) = sum_{j=a}^{n} C(n, j) x^j (1-x)^(n-j)
        let y = 1.0 - x;
        let mut coeff = 1.0f64;
        for j in 0..a {
            coeff = coeff * f64::from(n - j) / f64::from(j + 1);
        }
        let mut term = coeff * x.powi(a as i32) * y.powi((n - a) as i32);
        let mut sum = term;
        for j in a..n {
            // C(n, j+1) x^(j+1) y^(n-j-1) from the previous term
            term *= f64::from(n - j) / f64::from(j + 1) * x / y;
            sum += term;
        }
        return sum.clamp(0.0, 1.0);
    }
    beta_reg(a, b, x)
}

pub fn beta_density(a: f64, b: f64, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)).exp()
}

/// Risk-score law plus the per-regime power-law automation cost
/// `c_auto(s, theta) = a_theta * s^p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub distribution: ScoreDistribution,
    pub cost_coeffs: Vec<f64>,
    pub cost_exponent: f64,
}

impl RiskModel {
    pub fn new(
        distribution: ScoreDistribution,
        cost_coeffs: Vec<f64>,
        cost_exponent: f64,
    ) -> Result<Self> {
        if cost_coeffs.is_empty() {
            return Err(Error::invalid(
                "model.cost_coeffs",
                "at least one regime required",
            ));
        }
        for (i, &a) in cost_coeffs.iter().enumerate() {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::invalid(
                    format!("model.cost_coeffs[{i}]"),
                    "must be a non-negative finite number",
                ));
            }
        }
        if !(cost_exponent >= 1.0 && cost_exponent.is_finite()) {
            return Err(Error::invalid(
                "model.cost_exponent",
                "must be a finite number >= 1",
            ));
        }
        Ok(Self {
            distribution,
            cost_coeffs,
            cost_exponent,
        })
    }

    pub fn n_regimes(&self) -> usize {
        self.cost_coeffs.len()
    }

    fn coeff(&self, theta: usize) -> Result<f64> {
        self.cost_coeffs.get(theta).copied().ok_or_else(|| {
            Error::Domain(format!(
                "unknown regime {theta} (model has {})",
                self.n_regimes()
            ))
        })
    }

    /// `c_auto(s, theta)`.
    pub fn cost_auto(&self, s: f64, theta: usize) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("risk score {s} outside [0,1]")));
        }
        Ok(self.coeff(theta)? * s.powf(self.cost_exponent))
    }

    /// `inf { s in [0,1] : c_auto(s, theta) >= target }`, or `Never` when
    /// even `c_auto(1, theta)` falls short of the target.
    pub fn invert_cost_auto(&self, target: f64, theta: usize) -> Result<Threshold> {
        if !(target >= 0.0) {
            return Err(Error::Domain(format!(
                "inversion target {target} must be non-negative"
            )));
        }
        Ok(invert_power(self.coeff(theta)?, self.cost_exponent, target))
    }

    /// `d c_auto / ds` at `s`.
    pub fn cost_slope(&self, s: f64, theta: usize) -> Result<f64> {
        let p = self.cost_exponent;
        Ok(self.coeff(theta)? * p * s.max(0.0).powf(p - 1.0))
    }

    pub fn risk_cdf(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("risk score {s} outside [0,1]")));
        }
        Ok(self.distribution.cdf(s))
    }

    /// Scan the increasing-differences inequality on a uniform grid of
    /// `grid_size` scores over every ordered regime pair.
    pub fn check_supermodularity(&self, grid_size: usize) -> Result<SupermodularityReport> {
        if grid_size < 2 {
            return Err(Error::Domain(format!(
                "grid_size {grid_size} must be at least 2"
            )));
        }
        let grid: Vec<f64> = (0..grid_size)
            .map(|i| i as f64 / (grid_size - 1) as f64)
            .collect();
        let k = self.n_regimes();
        let mut checked = 0usize;
        for lo in 0..k {
            for hi in lo + 1..k {
                for (i, &s) in grid.iter().enumerate() {
                    for &s_hi in &grid[i + 1..] {
                        checked += 1;
                        let upper = self.cost_auto(s_hi, hi)? - self.cost_auto(s, hi)?;
                        let lower = self.cost_auto(s_hi, lo)? - self.cost_auto(s, lo)?;
                        let tol = 1e-12 * upper.abs().max(lower.abs()).max(1.0);
                        if upper < lower - tol {
                            return Ok(SupermodularityReport {
                                passed: false,
                                grid_size,
                                checked_quadruples: checked,
                                witness: Some(SupermodularityWitness {
                                    s_low: s,
                                    s_high: s_hi,
                                    theta_low: lo,
                                    theta_high: hi,
                                    difference_high_regime: upper,
                                    difference_low_regime: lower,
                                }),
                            });
                        }
                    }
                }
            }
        }
        Ok(SupermodularityReport {
            passed: true,
            grid_size,
            checked_quadruples: checked,
            witness: None,
        })
    }
}

pub(crate) fn invert_power(coeff: f64, exponent: f64, target: f64) -> Threshold {
    if target <= 0.0 {
        return Threshold::At(0.0);
    }
    if coeff < target {
        return Threshold::Never;
    }
    let ratio = target / coeff;
    let s = if exponent == 2.0 {
        ratio.sqrt()
    } else if exponent == 1.0 {
        ratio
    } else {
        ratio.powf(exponent.recip())
    };
    Threshold::At(s.min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupermodularityWitness {
    pub s_low: f64,
    pub s_high: f64,
    pub theta_low: usize,
    pub theta_high: usize,
    pub difference_high_regime: f64,
    pub difference_low_regime: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupermodularityReport {
    pub passed: bool,
    pub grid_size: usize,
    pub checked_quadruples: usize,
    pub witness: Option<SupermodularityWitness>,
}

/// Continuous-time Markov chain over reliability regimes, ordered from
/// nominal (0) to most degraded (K-1). Rates are per minute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftChain {
    generator: Vec<Vec<f64>>,
}

impl DriftChain {
    pub fn new(generator: Vec<Vec<f64>>) -> Result<Self> {
        let k = generator.len();
        if k == 0 {
            return Err(Error::invalid(
                "model.generator",
                "must have at least one row",
            ));
        }
        for (i, row) in generator.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(
                    format!("model.generator[{i}]"),
                    format!("expected {k} entries, found {}", row.len()),
                ));
            }
            let mut off = 0.0;
            for (j, &r) in row.iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::invalid(
                        format!("model.generator[{i}][{j}]"),
                        "must be finite",
                    ));
                }
                if i != j {
                    if r < 0.0 {
                        return Err(Error::invalid(
                            format!("model.generator[{i}][{j}]"),
                            "off-diagonal rates must be non-negative",
                        ));
                    }
                    off += r;
                }
            }
            if (row[i] + off).abs() > 1e-12 * off.max(1.0) {
                return Err(Error::invalid(
                    format!("model.generator[{i}]"),
                    format!("row sums to {} instead of 0", row[i] + off),
                ));
            }
        }
        Ok(Self { generator })
    }

    /// Chain with a single regime and no transitions.
    pub fn single() -> Self {
        Self {
            generator: vec![vec![0.0]],
        }
    }

    /// Two-regime chain with `rate_up` from 0 to 1 and `rate_down` back.
    pub fn two_state(rate_up: f64, rate_down: f64) -> Result<Self> {
        Self::new(vec![vec![-rate_up, rate_up], vec![rate_down, -rate_down]])
    }

    pub fn n_states(&self) -> usize {
        self.generator.len()
    }

    pub fn generator(&self) -> &[Vec<f64>] {
        &self.generator
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.generator[from][to]
    }

    /// Total rate of leaving `state`, i.e. `|q_ii|`.
    pub fn exit_rate(&self, state: usize) -> f64 {
        -self.generator[state][state]
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n_states())
            .map(|i| self.exit_rate(i))
            .fold(0.0, f64::max)
    }

    /// Scale every rate into a more degraded regime (`j > i`) by
    /// `multiplier`, leaving recovery rates untouched.
    pub fn scale_drift(&self, multiplier: f64) -> Result<Self> {
        if !(multiplier >= 0.0 && multiplier.is_finite()) {
            return Err(Error::Domain(format!(
                "drift multiplier {multiplier} must be finite and >= 0"
            )));
        }
        let k = self.n_states();
        let mut g = self.generator.clone();
        for (i, row) in g.iter_mut().enumerate() {
            for r in row.iter_mut().skip(i + 1) {
                *r *= multiplier;
            }
            row[i] = 0.0;
            let off: f64 = (0..k).filter(|&j| j != i).map(|j| row[j]).sum();
            row[i] = -off;
        }
        Self::new(g)
    }

    /// Strongly connected components of the transition graph, in order of
    /// their smallest member.
    pub fn communicating_classes(&self) -> Vec<Vec<usize>> {
        let k = self.n_states();
        let mut reach = vec![vec![false; k]; k];
        for (i, row) in reach.iter_mut().enumerate() {
            let mut stack = vec![i];
            row[i] = true;
            while let Some(u) = stack.pop() {
                for v in 0..k {
                    if v != u && self.generator[u][v] > 0.0 && !row[v] {
                        row[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        let mut assigned = vec![false; k];
        let mut classes = Vec::new();
        for i in 0..k {
            if assigned[i] {
                continue;
            }
            let class: Vec<usize> = (0..k).filter(|&j| reach[i][j] && reach[j][i]).collect();
            for &j in &class {
                assigned[j] = true;
            }
            classes.push(class);
        }
        classes
    }

    /// Unique stationary law: solves `pi Q = 0` with one balance equation
    /// replaced by the normalization row.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        let classes = self.communicating_classes();
        if classes.len() > 1 {
            return Err(Error::Reducible { classes });
        }
        let k = self.n_states();
        // Rows of Q^T are the balance equations; the last one is replaced.
        let mut a: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| self.generator[j][i]).collect())
            .collect();
        let mut rhs = vec![0.0; k];
        a[k - 1] = vec![1.0; k];
        rhs[k - 1] = 1.0;
        let mut pi =
            solve_dense(a, rhs).ok_or_else(|| Error::Domain("singular balance system".into()))?;
        for p in pi.iter_mut() {
            if *p < 0.0 && *p > -1e-15 {
                *p = 0.0;
            }
        }
        Ok(pi)
    }

    /// `max_j |(pi Q)_j|`.
    pub fn balance_residual(&self, pi: &[f64]) -> f64 {
        let k = self.n_states();
        (0..k)
            .map(|j| {
                (0..k)
                    .map(|i| pi[i] * self.generator[i][j])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Gaussian elimination with partial pivoting. `None` on a singular matrix.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Arrival stream, server pool and the two escalation cost components.
/// `h(q) = holding_coeff * q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueEconomics {
    pub arrival_rate: f64,
    pub n_servers: usize,
    pub service_rate: f64,
    pub escalation_fee: f64,
    pub holding_coeff: f64,
}

impl QueueEconomics {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(
                    format!("model.{key}"),
                    format!("must be a non-negative finite number, got {v}"),
                ))
            }
        };
        nonneg("arrival_rate", self.arrival_rate)?;
        nonneg("escalation_fee", self.escalation_fee)?;
        nonneg("holding_coeff", self.holding_coeff)?;
        if !(self.service_rate > 0.0 && self.service_rate.is_finite()) {
            return Err(Error::invalid(
                "model.service_rate",
                format!(
                    "must be a positive finite number, got {}",
                    self.service_rate
                ),
            ));
        }
        if self.n_servers == 0 {
            return Err(Error::invalid("model.n_servers", "must be at least 1"));
        }
        Ok(())
    }

    pub fn holding_cost(&self, q: usize) -> f64 {
        self.holding_coeff * q as f64
    }

    /// `min(q, m) * mu`.
    pub fn service_capacity(&self, q: usize) -> f64 {
        q.min(self.n_servers) as f64 * self.service_rate
    }

    /// `m * mu`.
    pub fn max_service(&self) -> f64 {
        self.n_servers as f64 * self.service_rate
    }
}

/// Complete problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub economics: QueueEconomics,
    pub risk: RiskModel,
    pub drift: DriftChain,
}

impl Model {
    pub fn new(economics: QueueEconomics, risk: RiskModel, drift: DriftChain) -> Result<Self> {
        economics.validate()?;
        if risk.n_regimes() != drift.n_states() {
            return Err(Error::invalid(
                "model.cost_coeffs",
                format!(
                    "{} cost coefficients but the generator has {} regimes",
                    risk.n_regimes(),
                    drift.n_states()
                ),
            ));
        }
        Ok(Self {
            economics,
            risk,
            drift,
        })
    }

    pub fn n_regimes(&self) -> usize {
        self.drift.n_states()
    }

    /// Content-moderation scenario used throughout the experiments:
    /// 10 tasks/min, Beta(2,5) scores, five reviewers with joint capacity
    /// 7.5 tasks/min, costs 50 s^2 / 100 s^2, fee 2, holding 0.5 q.
    pub fn moderation_scenario() -> Self {
        Self::new(
            QueueEconomics {
                arrival_rate: 10.0,
                n_servers: 5,
                service_rate: 1.5,
                escalation_fee: 2.0,
                holding_coeff: 0.5,
            },
            RiskModel::new(
                ScoreDistribution::Beta {
                    shape_a: 2.0,
                    shape_b: 5.0,
                },
                vec![50.0, 100.0],
                2.0,
            )
            .expect("static parameters"),
            DriftChain::two_state(0.05, 0.2).expect("static parameters"),
        )
        .expect("static parameters")
    }

    /// Same instance with the into-drift rates scaled by `multiplier`.
    pub fn with_drift_multiplier(&self, multiplier: f64) -> Result<Self> {
        Ok(Self {
            drift: self.drift.scale_drift(multiplier)?,
            ..self.clone()
        })
    }

    pub fn with_arrival_rate(&self, rate: f64) -> Result<Self> {
        let mut m = self.clone();
        m.economics.arrival_rate = rate;
        m.economics.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn risk() -> RiskModel {
        RiskModel::new(
            ScoreDistribution::beta(2.0, 5.0).unwrap(),
            vec![50.0, 100.0],
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn cost_examples() {
        let r = risk();
        assert_eq!(r.cost_auto(0.0, 0).unwrap(), 0.0);
        assert_eq!(r.cost_auto(0.5, 0).unwrap(), 12.5);
        assert_eq!(r.cost_auto(0.5, 1).unwrap(), 25.0);
        assert!(r.cost_auto(1.5, 0).is_err());
        assert!(r.cost_auto(-0.1, 0).is_err());
        assert!(r.cost_auto(0.5, 2).is_err());
    }

    #[test]
    fn inversion_examples() {
        let r = risk();
        assert_eq!(r.invert_cost_auto(0.0, 0).unwrap(), Threshold::At(0.0));
        let t = r.invert_cost_auto(2.0, 0).unwrap().value();
        assert!((t - 0.2).abs() < 1e-15);
        // independent route: bisection on the forward map
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if r.cost_auto(mid, 0).unwrap() >= 2.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((t - hi).abs() < 1e-12);
        assert_eq!(r.invert_cost_auto(200.0, 1).unwrap(), Threshold::Never);
        assert_eq!(r.invert_cost_auto(100.0, 1).unwrap(), Threshold::At(1.0));
        assert!(r.invert_cost_auto(-1.0, 0).is_err());
    }

    #[test]
    fn zero_coefficient_inverts_to_never() {
        let r = RiskModel::new(ScoreDistribution::beta(2.0, 5.0).unwrap(), vec![0.0], 2.0).unwrap();
        assert_eq!(r.invert_cost_auto(0.0, 0).unwrap(), Threshold::At(0.0));
        assert_eq!(r.invert_cost_auto(1e-9, 0).unwrap(), Threshold::Never);
    }

    #[test]
    fn cdf_edges_and_closed_form() {
        let r = risk();
        assert_eq!(r.risk_cdf(0.0).unwrap(), 0.0);
        assert_eq!(r.risk_cdf(1.0).unwrap(), 1.0);
        let s = 0.8f64;
        let closed = 1.0 - 6.0 * (1.0 - s).powi(5) + 5.0 * (1.0 - s).powi(6);
        assert!((r.risk_cdf(s).unwrap() - closed).abs() < 1e-14);
        assert!((r.risk_cdf(s).unwrap() - 0.99840).abs() < 1e-6);
        assert!(r.risk_cdf(1.01).is_err());
    }

    #[test]
    fn binomial_cdf_matches_continued_fraction() {
        for &(a, b) in &[(2.0, 5.0), (1.0, 1.0), (3.0, 3.0), (7.0, 2.0)] {
            for i in 1..100 {
                let x = i as f64 / 100.0;
                assert!(
                    (beta_cdf(a, b, x) - beta_reg(a, b, x)).abs() < 1e-12,
                    "a={a} b={b} x={x}"
                );
            }
        }
    }

    #[test]
    fn cdf_matches_integrated_density() {
        // Simpson on each of 1000 cells, accumulated.
        let r = risk();
        let n = 1000;
        let mut acc = 0.0;
        for i in 0..n {
            let (lo, hi) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
            let f = |x: f64| 30.0 * x * (1.0 - x).powi(4);
            acc += (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + hi)) + f(hi));
            assert!((acc - r.risk_cdf(hi).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn stationary_examples() {
        assert_eq!(
            DriftChain::single().stationary_distribution().unwrap(),
            vec![1.0]
        );
        let sym = DriftChain::two_state(0.3, 0.3)
            .unwrap()
            .stationary_distribution()
            .unwrap();
        assert!((sym[0] - 0.5).abs() < 1e-15 && (sym[1] - 0.5).abs() < 1e-15);
        let chain = DriftChain::two_state(0.05, 0.2).unwrap();
        let pi = chain.stationary_distribution().unwrap();
        assert!((pi[0] - 0.8).abs() < 1e-12);
        assert!((pi[1] - 0.2).abs() < 1e-12);
        assert!(chain.balance_residual(&pi) <= 1e-12);
    }

    #[test]
    fn reducible_chain_reports_classes() {
        let chain = DriftChain::new(vec![
            vec![-1.0, 1.0, 0.0],
            vec![1.0, -1.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        match chain.stationary_distribution() {
            Err(Error::Reducible { classes }) => assert_eq!(classes, vec![vec![0, 1], vec![2]]),
            other => panic!("expected reducible error, got {other:?}"),
        }
    }

    #[test]
    fn generator_validation() {
        assert!(DriftChain::new(vec![vec![-1.0, 0.5], vec![0.2, -0.2]]).is_err());
        assert!(DriftChain::new(vec![vec![0.1, -0.1], vec![0.2, -0.2]]).is_err());
        assert!(DriftChain::new(vec![vec![-1.0, 1.0]]).is_err());
    }

    #[test]
    fn supermodularity_examples() {
        assert!(risk().check_supermodularity(101).unwrap().passed);
        let flat = RiskModel::new(
            ScoreDistribution::beta(2.0, 5.0).unwrap(),
            vec![50.0, 50.0],
            2.0,
        )
        .unwrap();
        assert!(flat.check_supermodularity(101).unwrap().passed);
        let bad = RiskModel::new(
            ScoreDistribution::beta(2.0, 5.0).unwrap(),
            vec![100.0, 50.0],
            2.0,
        )
        .unwrap();
        let report = bad.check_supermodularity(101).unwrap();
        assert!(!report.passed);
        let w = report.witness.unwrap();
        assert!(w.s_high > w.s_low);
        assert!(w.difference_high_regime < w.difference_low_regime);
        assert!(risk().check_supermodularity(1).is_err());
    }

    #[test]
    fn drift_scaling() {
        let chain = DriftChain::two_state(0.05, 0.2)
            .unwrap()
            .scale_drift(4.0)
            .unwrap();
        assert!((chain.rate(0, 1) - 0.2).abs() < 1e-15);
        assert_eq!(chain.rate(1, 0), 0.2);
        let pi = chain.stationary_distribution().unwrap();
        assert!((pi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn threshold_text_round_trip() {
        for t in [
            Threshold::At(0.123456789012345),
            Threshold::At(0.0),
            Threshold::Never,
        ] {
            assert_eq!(t.to_string().parse::<Threshold>().unwrap(), t);
        }
        assert!(Threshold::Never > Threshold::At(1.0));
    }
}
