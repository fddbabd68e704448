//! Cross-check simulator on the uniformized event grid.
//!
//! Events occur at the points of a rate-`Lambda` Poisson process and each
//! is drawn as an arrival, a service completion, a regime switch or a
//! self-loop with probabilities proportional to the current rates. It
//! shares no event-loop code with the main simulator.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::{stream, EscalationPolicy, Estimate, ScoreSampler, SimConfig};
use crate::error::{Error, Result};
use crate::model::Model;

const GRID_STREAM: u64 = 4;
const SCORE_STREAM: u64 = 5;

/// Average queue length per replication, aggregated over
/// `config.n_replications`.
pub fn simulate_uniformized(
    policy: &EscalationPolicy,
    model: &Model,
    config: &SimConfig,
) -> Result<(Estimate, Vec<f64>)> {
    config.validate()?;
    let per_rep = (0..config.n_replications)
        .map(|r| run(policy, model, config, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((Estimate::from_samples(&per_rep), per_rep))
}

fn run(
    policy: &EscalationPolicy,
    model: &Model,
    config: &SimConfig,
    replication: usize,
) -> Result<f64> {
    let econ = &model.economics;
    let drift = &model.drift;
    let k = model.n_regimes();
    let lambda = econ.arrival_rate;
    let rate = lambda + econ.max_service() + drift.max_exit_rate();
    if rate <= 0.0 {
        return Ok(0.0);
    }
    let tick = Exp::new(rate).map_err(|e| Error::Domain(e.to_string()))?;
    let sampler = ScoreSampler::new(&model.risk.distribution)?;
    let mut grid = stream(config.seed, replication, GRID_STREAM);
    let mut scores = stream(config.seed, replication, SCORE_STREAM);

    let pi = drift.stationary_distribution()?;
    let u: f64 = grid.gen();
    let mut theta = k - 1;
    let mut acc = 0.0;
    for (i, p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            theta = i;
            break;
        }
    }

    let mut q = 0usize;
    let mut t = 0.0;
    let mut area = 0.0;
    loop {
        let next = t + tick.sample(&mut grid);
        let lo = t.max(config.warmup);
        let hi = next.min(config.horizon);
        if hi > lo {
            area += q as f64 * (hi - lo);
        }
        if next >= config.horizon {
            break;
        }
        t = next;
        let mut pick = grid.gen::<f64>() * rate;
        if pick < lambda {
            let s = sampler.sample(&mut scores);
            if policy.threshold(q, theta)?.escalates(s) {
                q += 1;
            }
            continue;
        }
        pick -= lambda;
        let service = econ.service_capacity(q);
        if pick < service {
            q -= 1;
            continue;
        }
        pick -= service;
        for j in 0..k {
            if j == theta {
                continue;
            }
            let r = drift.rate(theta, j);
            if pick < r {
                theta = j;
                break;
            }
            pick -= r;
        }
    }
    Ok(area / (config.horizon - config.warmup))
}
