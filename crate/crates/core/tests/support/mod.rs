//! Tiny instance and an exhaustive policy-enumeration oracle.
//!
//! Every stationary deterministic threshold policy on the tiny instance is
//! evaluated by solving its continuous-time discounted value equations
//! `(alpha I - G_pi) V = r_pi` directly, with no uniformization. The optimal
//! value is the componentwise minimum over all policies.

#![allow(dead_code)]

use escalation_core::model::{DriftChain, Model, QueueEconomics, RiskModel, ScoreDistribution};
use escalation_core::SolverConfig;

pub const ATOMS: [(f64, f64); 4] = [(0.1, 0.4), (0.3, 0.3), (0.6, 0.2), (0.9, 0.1)];
pub const TINY_CAP: usize = 3;

pub fn tiny_model() -> Model {
    Model::new(
        QueueEconomics {
            arrival_rate: 2.0,
            n_servers: 1,
            service_rate: 1.5,
            escalation_fee: 0.8,
            holding_coeff: 0.3,
        },
        RiskModel::new(
            ScoreDistribution::discrete(ATOMS.to_vec()).unwrap(),
            vec![5.0, 12.0],
            2.0,
        )
        .unwrap(),
        DriftChain::new(vec![vec![-0.3, 0.3], vec![0.6, -0.6]]).unwrap(),
    )
    .unwrap()
}

pub fn tiny_solver() -> SolverConfig {
    SolverConfig {
        queue_cap: TINY_CAP,
        convergence_tol: 1e-13,
        max_iterations: 1_000_000,
        ..SolverConfig::default()
    }
}

/// Dense Gaussian elimination with partial pivoting.
pub fn linear_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Value of the policy that, in state `(q, theta)` with `q < cap`,
/// escalates exactly the atoms with index `>= cut[q * k + theta]`.
/// At `q = cap` every task is automated.
pub fn policy_value(model: &Model, alpha: f64, cap: usize, cut: &[usize]) -> Vec<f64> {
    let econ = &model.economics;
    let k = model.n_regimes();
    let n = (cap + 1) * k;
    let idx = |q: usize, t: usize| q * k + t;
    let mut a = vec![vec![0.0; n]; n];
    let mut r = vec![0.0; n];
    for q in 0..=cap {
        for t in 0..k {
            let i = idx(q, t);
            let c = if q == cap { ATOMS.len() } else { cut[i] };
            let mut immediate = 0.0;
            let mut p_escalate = 0.0;
            for (j, &(s, p)) in ATOMS.iter().enumerate() {
                if j >= c {
                    immediate += p * econ.escalation_fee;
                    p_escalate += p;
                } else {
                    immediate += p * model.risk.cost_coeffs[t] * s.powf(model.risk.cost_exponent);
                }
            }
            r[i] = econ.holding_coeff * q as f64 + econ.arrival_rate * immediate;
            // generator row: -(sum of out rates) on the diagonal
            let mut out = 0.0;
            if p_escalate > 0.0 {
                let rate = econ.arrival_rate * p_escalate;
                a[i][idx(q + 1, t)] -= rate;
                out += rate;
            }
            if q > 0 {
                let rate = q.min(econ.n_servers) as f64 * econ.service_rate;
                a[i][idx(q - 1, t)] -= rate;
                out += rate;
            }
            for u in 0..k {
                if u != t {
                    let rate = model.drift.generator()[t][u];
                    a[i][idx(q, u)] -= rate;
                    out += rate;
                }
            }
            a[i][i] += alpha + out;
        }
    }
    linear_solve(a, r)
}

/// Componentwise minimum over all `(atoms + 1)^(cap * k)` policies, and the
/// cutoff vector attaining the minimum at state 0.
pub fn enumerate_optimum(model: &Model, alpha: f64, cap: usize) -> (Vec<f64>, Vec<usize>) {
    let k = model.n_regimes();
    let choices = ATOMS.len() + 1;
    let free = cap * k;
    let total = choices.pow(free as u32);
    let mut best = vec![f64::INFINITY; (cap + 1) * k];
    let mut best_cut = Vec::new();
    let mut best_first = f64::INFINITY;
    let mut cut = vec![0usize; (cap + 1) * k];
    for code in 0..total {
        let mut c = code;
        for slot in cut.iter_mut().take(free) {
            *slot = c % choices;
            c /= choices;
        }
        let v = policy_value(model, alpha, cap, &cut);
        for (b, x) in best.iter_mut().zip(&v) {
            *b = b.min(*x);
        }
        if v[0] < best_first {
            best_first = v[0];
            best_cut = cut.clone();
        }
    }
    (best, best_cut)
}
