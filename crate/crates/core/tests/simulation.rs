use escalation_core::model::{DriftChain, Model, RiskModel, Threshold};
use escalation_core::sim::{
    averaged_model, build_drift_blind, compare_policies, default_static_grid, simulate,
    simulate_traced, simulate_uniformized, value_of_agility_sweep, Action, EscalationPolicy,
    SimConfig, TraceKind,
};
use escalation_core::solver::solve;
use escalation_core::{SafetySpec, SolverConfig};

fn reps(n: usize, horizon: f64) -> SimConfig {
    SimConfig {
        horizon,
        warmup: horizon / 10.0,
        n_replications: n,
        ..SimConfig::default()
    }
}

#[test]
fn automating_everything_costs_rate_times_mean_error() {
    let model = Model::moderation_scenario();
    let m = simulate(
        &EscalationPolicy::Static(Threshold::At(1.0)),
        &model,
        &SimConfig::default(),
        &SafetySpec::default(),
    )
    .unwrap();
    // lambda * sum_theta pi_theta a_theta * E[S^2], E[S^2] = 6/56 for Beta(2,5)
    let expected = 10.0 * (0.8 * 50.0 + 0.2 * 100.0) * 6.0 / 56.0;
    assert!(
        m.avg_total_cost.contains(expected),
        "{:?} vs {expected}",
        m.avg_total_cost
    );
    assert_eq!(m.avg_queue_length.mean, 0.0);
    assert_eq!(m.escalation_fraction.mean, 0.0);
}

#[test]
fn escalating_everything_overloads_at_the_fluid_rate() {
    let model = Model::moderation_scenario();
    let m = simulate(
        &EscalationPolicy::Static(Threshold::At(0.0)),
        &model,
        &SimConfig::default(),
        &SafetySpec::default(),
    )
    .unwrap();
    let slope = m.back_half_slope.mean;
    assert!((slope - 2.5).abs() <= 0.25, "slope {slope}");
}

#[test]
fn event_loop_agrees_with_uniformized_chain() {
    let model = Model::moderation_scenario();
    let policy = EscalationPolicy::Static(Threshold::At(0.5));
    let cfg = reps(30, 3000.0);
    let a = simulate(&policy, &model, &cfg, &SafetySpec::default()).unwrap();
    let (b, _) = simulate_uniformized(&policy, &model, &cfg).unwrap();
    assert!(
        a.avg_queue_length.overlaps(&b),
        "{:?} vs {b:?}",
        a.avg_queue_length
    );
}

#[test]
fn drift_blind_lies_between_regime_thresholds() {
    let model = Model::moderation_scenario();
    let cfg = SolverConfig {
        queue_cap: 120,
        ..SolverConfig::default()
    };
    let (_, optimal) = solve(&model, &cfg).unwrap();
    let blind = build_drift_blind(&model, &cfg).unwrap();
    assert_eq!(averaged_model(&model).unwrap().risk.cost_coeffs, vec![60.0]);
    for q in 0..cfg.queue_cap {
        let (low, high, db) = (optimal.get(q, 0), optimal.get(q, 1), blind[q]);
        assert!(high < db && db < low, "q={q}: {high} < {db} < {low}");
    }
    assert!(blind.windows(2).all(|w| w[0] <= w[1]));
    assert!(blind[cfg.queue_cap].is_never());
}

#[test]
fn identical_regimes_make_drift_blind_optimal() {
    let base = Model::moderation_scenario();
    let risk = RiskModel::new(base.risk.distribution.clone(), vec![70.0, 70.0], 2.0).unwrap();
    let model = Model::new(base.economics.clone(), risk, base.drift.clone()).unwrap();
    let cfg = SolverConfig {
        queue_cap: 60,
        ..SolverConfig::default()
    };
    let (_, optimal) = solve(&model, &cfg).unwrap();
    let blind = build_drift_blind(&model, &cfg).unwrap();
    for q in 0..cfg.queue_cap {
        for theta in 0..2 {
            let gap = (optimal.get(q, theta).value() - blind[q].value()).abs();
            assert!(gap < 1e-6, "q={q} theta={theta} gap={gap}");
        }
    }
}

#[test]
fn single_regime_drift_blind_equals_optimal() {
    let base = Model::moderation_scenario();
    let risk = RiskModel::new(base.risk.distribution.clone(), vec![60.0], 2.0).unwrap();
    let model = Model::new(base.economics.clone(), risk, DriftChain::single()).unwrap();
    let cfg = SolverConfig {
        queue_cap: 60,
        ..SolverConfig::default()
    };
    let (_, optimal) = solve(&model, &cfg).unwrap();
    assert_eq!(build_drift_blind(&model, &cfg).unwrap(), optimal.curve(0));
}

#[test]
fn no_drift_ample_capacity_policies_tie() {
    let base = Model::moderation_scenario();
    let mut econ = base.economics.clone();
    econ.n_servers = 40;
    let risk = RiskModel::new(base.risk.distribution.clone(), vec![60.0], 2.0).unwrap();
    let model = Model::new(econ, risk, DriftChain::single()).unwrap();
    let solver = SolverConfig {
        queue_cap: 80,
        ..SolverConfig::default()
    };
    let cmp = compare_policies(
        &model,
        &solver,
        &reps(10, 2000.0),
        &SafetySpec::default(),
        &default_static_grid(),
    )
    .unwrap();
    let costs: Vec<_> = cmp.rows.iter().map(|r| r.metrics.avg_total_cost).collect();
    for a in &costs {
        for b in &costs {
            assert!(a.overlaps(b), "{costs:?}");
        }
    }
}

#[test]
fn escalation_probability_falls_with_queue_under_optimal_policy() {
    let model = Model::moderation_scenario();
    let solver = SolverConfig {
        queue_cap: 120,
        ..SolverConfig::default()
    };
    let (_, optimal) = solve(&model, &solver).unwrap();
    let cfg = SimConfig {
        horizon: 20_000.0,
        warmup: 500.0,
        n_replications: 1,
        ..SimConfig::default()
    };
    let (_, trace) = simulate_traced(
        &EscalationPolicy::Optimal(optimal),
        &model,
        &cfg,
        &SafetySpec::default(),
        0,
    )
    .unwrap();
    let mut arrivals = vec![0u64; 200];
    let mut escalations = vec![0u64; 200];
    for t in trace
        .iter()
        .filter(|t| t.kind == TraceKind::Arrival && t.q < 200)
    {
        arrivals[t.q] += 1;
        if t.action == Some(Action::Escalate) {
            escalations[t.q] += 1;
        }
    }
    let rates: Vec<(f64, f64)> = arrivals
        .iter()
        .zip(&escalations)
        .filter(|(n, _)| **n >= 2000)
        .map(|(&n, &e)| {
            let p = e as f64 / n as f64;
            (p, (p * (1.0 - p) / n as f64).sqrt())
        })
        .collect();
    assert!(rates.len() >= 5);
    for w in rates.windows(2) {
        let ((p0, s0), (p1, s1)) = (w[0], w[1]);
        assert!(p1 <= p0 + 3.0 * (s0 * s0 + s1 * s1).sqrt(), "{rates:?}");
    }
    assert!(rates.last().unwrap().0 < rates[0].0);
}

#[test]
fn savings_grow_with_drift_intensity() {
    let model = Model::moderation_scenario();
    let solver = SolverConfig {
        queue_cap: 150,
        ..SolverConfig::default()
    };
    let grid: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
    let points = value_of_agility_sweep(
        &[0.1, 4.0],
        &model,
        &reps(10, 4000.0),
        &SafetySpec::default(),
        &grid,
        |m| {
            let (_, t) = solve(m, &solver)?;
            Ok((t, build_drift_blind(m, &solver)?))
        },
    )
    .unwrap();
    assert_eq!(points.len(), 2);
    assert!(points[0].pi_drift < points[1].pi_drift);
    assert!(
        points[1].paired_savings.lower() > points[0].paired_savings.upper(),
        "{:?} vs {:?}",
        points[0].paired_savings,
        points[1].paired_savings
    );
}
