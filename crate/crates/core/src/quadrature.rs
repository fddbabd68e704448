//! Truncated expectations over the risk score.
//!
//! The solver and the safety analysis both need, for a cutoff `t`,
//! `P(S < t)` and the partial cost moment `E[c_auto(S, theta) 1{S < t}]`.
//! For the Beta family the probability is exact and the moment is a
//! composite midpoint rule on uniform cells, with each cell weighted by its
//! exact probability mass. The cell containing `t` is split at `t`, so the
//! kink of the truncated integrand never sits inside a panel.

use crate::model::{beta_cdf, RiskModel, ScoreDistribution, Threshold};

#[derive(Clone, Debug)]
enum Law {
    Beta {
        shape_a: f64,
        shape_b: f64,
        /// `F` at the cell edges `i / n`.
        edge_cdf: Vec<f64>,
        /// `prefix[i] = sum_{j < i} mid_j^p * mass_j`.
        prefix: Vec<f64>,
    },
    Discrete {
        scores: Vec<f64>,
        probs: Vec<f64>,
    },
}

/// Precomputed truncated-expectation evaluator for one [`RiskModel`].
#[derive(Clone, Debug)]
pub struct ScoreKernel {
    law: Law,
    coeffs: Vec<f64>,
    exponent: f64,
    cells: usize,
    total_moment: f64,
}

impl ScoreKernel {
    /// `cells` is the number of uniform quadrature cells (ignored for
    /// discrete laws).
    pub fn new(risk: &RiskModel, cells: usize) -> Self {
        let cells = cells.max(1);
        let p = risk.cost_exponent;
        let (law, total_moment) = match &risk.distribution {
            ScoreDistribution::Beta { shape_a, shape_b } => {
                let edge_cdf: Vec<f64> = (0..=cells)
                    .map(|i| beta_cdf(*shape_a, *shape_b, i as f64 / cells as f64))
                    .collect();
                let mut prefix = Vec::with_capacity(cells + 1);
                prefix.push(0.0);
                let mut acc = 0.0;
                for i in 0..cells {
                    let mid = (i as f64 + 0.5) / cells as f64;
                    acc += mid.powf(p) * (edge_cdf[i + 1] - edge_cdf[i]);
                    prefix.push(acc);
                }
                (
                    Law::Beta {
                        shape_a: *shape_a,
                        shape_b: *shape_b,
                        edge_cdf,
                        prefix,
                    },
                    acc,
                )
            }
            ScoreDistribution::Discrete { atoms } => {
                let scores: Vec<f64> = atoms.iter().map(|a| a.0).collect();
                let probs: Vec<f64> = atoms.iter().map(|a| a.1).collect();
                let total = atoms.iter().map(|a| a.0.powf(p) * a.1).sum();
                (Law::Discrete { scores, probs }, total)
            }
        };
        Self {
            law,
            coeffs: risk.cost_coeffs.clone(),
            exponent: p,
            cells,
            total_moment,
        }
    }

    pub fn n_regimes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeff(&self, theta: usize) -> f64 {
        self.coeffs[theta]
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// `P(S < t)`.
    pub fn prob_below(&self, t: f64) -> f64 {
        match &self.law {
            Law::Beta {
                shape_a, shape_b, ..
            } => beta_cdf(*shape_a, *shape_b, t),
            Law::Discrete { scores, probs } => scores
                .iter()
                .zip(probs)
                .take_while(|(s, _)| **s < t)
                .map(|(_, p)| p)
                .sum(),
        }
    }

    /// `E[S^p 1{S < t}]`.
    pub fn moment_below(&self, t: f64) -> f64 {
        match &self.law {
            Law::Beta {
                shape_a,
                shape_b,
                edge_cdf,
                prefix,
            } => {
                if t <= 0.0 {
                    return 0.0;
                }
                if t >= 1.0 {
                    return self.total_moment;
                }
                let n = self.cells;
                let k = ((t * n as f64) as usize).min(n - 1);
                let lo = k as f64 / n as f64;
                let mass = beta_cdf(*shape_a, *shape_b, t) - edge_cdf[k];
                prefix[k] + (0.5 * (lo + t)).powf(self.exponent) * mass
            }
            Law::Discrete { scores, probs } => scores
                .iter()
                .zip(probs)
                .take_while(|(s, _)| **s < t)
                .map(|(s, p)| s.powf(self.exponent) * p)
                .sum(),
        }
    }

    /// Both truncated quantities at once, sharing the CDF evaluation.
    pub fn truncated(&self, t: f64) -> (f64, f64) {
        match &self.law {
            Law::Beta {
                shape_a,
                shape_b,
                edge_cdf,
                prefix,
            } => {
                if t <= 0.0 {
                    return (0.0, 0.0);
                }
                if t >= 1.0 {
                    return (1.0, self.total_moment);
                }
                let n = self.cells;
                let k = ((t * n as f64) as usize).min(n - 1);
                let lo = k as f64 / n as f64;
                let f = beta_cdf(*shape_a, *shape_b, t);
                let mid = 0.5 * (lo + t);
                let mid_p = if self.exponent == 2.0 {
                    mid * mid
                } else {
                    mid.powf(self.exponent)
                };
                (f, prefix[k] + mid_p * (f - edge_cdf[k]))
            }
            Law::Discrete { .. } => (self.prob_below(t), self.moment_below(t)),
        }
    }

    /// `E[S^p]`.
    pub fn total_moment(&self) -> f64 {
        self.total_moment
    }

    /// `E[c_auto(S, theta) 1{S < t}]`.
    pub fn cost_below(&self, t: f64, theta: usize) -> f64 {
        self.coeffs[theta] * self.moment_below(t)
    }

    /// `E[c_auto(S, theta)]`.
    pub fn expected_cost(&self, theta: usize) -> f64 {
        self.coeffs[theta] * self.total_moment
    }

    /// Cutoff implied by comparing `c_auto` against `target`; negative
    /// targets escalate everything.
    pub fn cutoff(&self, target: f64, theta: usize) -> Threshold {
        crate::model::invert_power(self.coeffs[theta], self.exponent, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(cells: usize) -> ScoreKernel {
        let risk = RiskModel::new(
            ScoreDistribution::beta(2.0, 5.0).unwrap(),
            vec![50.0, 100.0],
            2.0,
        )
        .unwrap();
        ScoreKernel::new(&risk, cells)
    }

    #[test]
    fn full_moment_matches_beta_moment() {
        // E[S^2] = a(a+1)/((a+b)(a+b+1)) = 6/56
        let k = kernel(2000);
        assert!((k.total_moment() - 6.0 / 56.0).abs() < 1e-7);
        assert!((k.expected_cost(0) - 50.0 * 6.0 / 56.0).abs() < 5e-6);
    }

    #[test]
    fn partial_moment_against_fine_riemann_sum() {
        let k = kernel(2000);
        for &t in &[0.05, 0.2, 0.33333, 0.5, 0.77, 0.999] {
            let n = 200_000;
            let h = t / n as f64;
            let oracle: f64 = (0..n)
                .map(|i| {
                    let s = (i as f64 + 0.5) * h;
                    s * s * 30.0 * s * (1.0 - s).powi(4) * h
                })
                .sum();
            assert!((k.moment_below(t) - oracle).abs() < 1e-7, "t={t}");
            let (f, m) = k.truncated(t);
            assert_eq!(m, k.moment_below(t));
            assert_eq!(f, k.prob_below(t));
        }
    }

    #[test]
    fn discrete_law_is_strict_below() {
        let risk = RiskModel::new(
            ScoreDistribution::discrete(vec![(0.1, 0.4), (0.3, 0.3), (0.6, 0.2), (0.9, 0.1)])
                .unwrap(),
            vec![10.0],
            1.0,
        )
        .unwrap();
        let k = ScoreKernel::new(&risk, 16);
        assert_eq!(k.prob_below(0.3), 0.4);
        assert!((k.prob_below(0.30001) - 0.7).abs() < 1e-15);
        assert!((k.cost_below(0.6, 0) - 10.0 * (0.04 + 0.09)).abs() < 1e-12);
        assert!((k.expected_cost(0) - 10.0 * (0.04 + 0.09 + 0.12 + 0.09)).abs() < 1e-12);
    }
}
