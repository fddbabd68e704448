//! Discrete-event simulation of the escalation system.
//!
//! Poisson arrivals, `m` exponential servers serving escalated tasks FIFO,
//! and the drift CTMC are simulated in continuous time. Every replication
//! draws its inputs (arrival epochs, scores, per-task service requirements
//! and the drift path) from dedicated streams that do not depend on the
//! policy, so policies compared on the same seed see identical inputs.

mod experiments;
mod uniformized;

pub use experiments::{
    averaged_model, build_drift_blind, compare_policies, compare_with_policies,
    default_static_grid, grid_search_static, sample_cells, validate_phase_cells,
    value_of_agility_sweep, AgilityPoint, Comparison, PhaseValidation, PolicyRow, StaticCandidate,
    StaticSearch, FLUID_TOLERANCE, VALIDATION_MARGIN,
};
pub use uniformized::simulate_uniformized;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ScoreDistribution, Threshold};
use crate::quadrature::ScoreKernel;
use crate::solver::{SolverConfig, ThresholdTable};
use crate::stability::{safety_thresholds, SafetySpec};

/// Escalation rule used by the simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EscalationPolicy {
    /// State-dependent table; beyond its cap every task is automated.
    Optimal(ThresholdTable),
    Static(Threshold),
    /// Per-queue-length thresholds ignoring the regime; automate beyond the
    /// end of the vector.
    DriftBlind(Vec<Threshold>),
    /// Per-regime thresholds ignoring the queue.
    FixedSafety(Vec<Threshold>),
}

impl EscalationPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            EscalationPolicy::Optimal(_) => "ODP",
            EscalationPolicy::Static(_) => "ST",
            EscalationPolicy::DriftBlind(_) => "DB",
            EscalationPolicy::FixedSafety(_) => "FS",
        }
    }

    pub fn threshold(&self, q: usize, theta: usize) -> Result<Threshold> {
        match self {
            EscalationPolicy::Optimal(table) => {
                if theta >= table.n_regimes {
                    Err(Error::PolicyUndefined { q, theta })
                } else if q > table.queue_cap {
                    Ok(Threshold::Never)
                } else {
                    Ok(table.get(q, theta))
                }
            }
            EscalationPolicy::Static(t) => Ok(*t),
            EscalationPolicy::DriftBlind(curve) => {
                Ok(curve.get(q).copied().unwrap_or(Threshold::Never))
            }
            EscalationPolicy::FixedSafety(per_regime) => per_regime
                .get(theta)
                .copied()
                .ok_or(Error::PolicyUndefined { q, theta }),
        }
    }
}

/// Score above which an automated task counts as a severe error.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SevereCutoff {
    /// The safe threshold `T_bar(theta)` of the safety budget in force.
    #[default]
    #[serde(with = "safety_keyword")]
    Safety,
    Fixed(f64),
    PerRegime(Vec<f64>),
}

mod safety_keyword {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("safety")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let text = String::deserialize(d)?;
        if text == "safety" {
            Ok(())
        } else {
            Err(D::Error::custom(format!(
                "expected \"safety\", a number or a list, found {text:?}"
            )))
        }
    }
}

impl SevereCutoff {
    /// Per-regime cutoffs for `model`.
    pub fn resolve(&self, model: &Model, safety: &SafetySpec) -> Result<Vec<f64>> {
        let k = model.n_regimes();
        match self {
            SevereCutoff::Safety => {
                let kernel = ScoreKernel::new(&model.risk, SolverConfig::default().s_grid_size);
                Ok(safety_thresholds(safety, &kernel))
            }
            SevereCutoff::Fixed(c) => Ok(vec![*c; k]),
            SevereCutoff::PerRegime(v) if v.len() == k => Ok(v.clone()),
            SevereCutoff::PerRegime(v) => Err(Error::invalid(
                "simulation.severe_cutoff",
                format!("has {} entries for {k} regimes", v.len()),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Minutes of simulated time per replication.
    pub horizon: f64,
    pub seed: u64,
    pub n_replications: usize,
    /// Minutes discarded before metrics are collected.
    pub warmup: f64,
    pub severe_cutoff: SevereCutoff,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 10_000.0,
            seed: 20_240_601,
            n_replications: 30,
            warmup: 1_000.0,
            severe_cutoff: SevereCutoff::Safety,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(
                "simulation.horizon",
                "must be a positive finite number",
            ));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(Error::invalid(
                "simulation.warmup",
                "must satisfy 0 <= warmup < horizon",
            ));
        }
        if self.n_replications == 0 {
            return Err(Error::invalid(
                "simulation.n_replications",
                "must be at least 1",
            ));
        }
        let check = |c: f64| (0.0..=1.0).contains(&c);
        let ok = match &self.severe_cutoff {
            SevereCutoff::Safety => true,
            SevereCutoff::Fixed(c) => check(*c),
            SevereCutoff::PerRegime(v) => v.iter().all(|&c| check(c)),
        };
        if !ok {
            return Err(Error::invalid(
                "simulation.severe_cutoff",
                "must lie in [0,1]",
            ));
        }
        Ok(())
    }

    fn window(&self) -> f64 {
        self.horizon - self.warmup
    }
}

/// Stream identifiers inside one replication.
const ARRIVAL_STREAM: u64 = 0;
const SCORE_STREAM: u64 = 1;
const SERVICE_STREAM: u64 = 2;
const DRIFT_STREAM: u64 = 3;
pub(crate) const STREAMS_PER_REPLICATION: u64 = 8;

pub(crate) fn stream(seed: u64, replication: usize, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64 * STREAMS_PER_REPLICATION + id);
    rng
}

pub(crate) enum ScoreSampler {
    Beta(Beta<f64>),
    Discrete {
        scores: Vec<f64>,
        cumulative: Vec<f64>,
    },
}

impl ScoreSampler {
    pub(crate) fn new(dist: &ScoreDistribution) -> Result<Self> {
        Ok(match dist {
            ScoreDistribution::Beta { shape_a, shape_b } => ScoreSampler::Beta(
                Beta::new(*shape_a, *shape_b)
                    .map_err(|e| Error::Domain(format!("beta sampler: {e}")))?,
            ),
            ScoreDistribution::Discrete { atoms } => {
                let mut acc = 0.0;
                let cumulative = atoms
                    .iter()
                    .map(|a| {
                        acc += a.1;
                        acc
                    })
                    .collect();
                ScoreSampler::Discrete {
                    scores: atoms.iter().map(|a| a.0).collect(),
                    cumulative,
                }
            }
        })
    }

    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ScoreSampler::Beta(b) => b.sample(rng),
            ScoreSampler::Discrete { scores, cumulative } => {
                let u: f64 = rng.gen();
                let i = cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(scores.len() - 1);
                scores[i]
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Task {
    time: f64,
    score: f64,
    service: f64,
}

/// Policy-independent randomness of one replication.
struct ReplicationInputs {
    tasks: Vec<Task>,
    initial_regime: usize,
    /// `(time, new regime)` in time order.
    switches: Vec<(f64, usize)>,
}

impl ReplicationInputs {
    fn generate(model: &Model, config: &SimConfig, replication: usize) -> Result<Self> {
        let econ = &model.economics;
        let sampler = ScoreSampler::new(&model.risk.distribution)?;
        let mut arrivals = stream(config.seed, replication, ARRIVAL_STREAM);
        let mut scores = stream(config.seed, replication, SCORE_STREAM);
        let mut services = stream(config.seed, replication, SERVICE_STREAM);
        let mut drift = stream(config.seed, replication, DRIFT_STREAM);

        let mut tasks = Vec::new();
        if econ.arrival_rate > 0.0 {
            let gap = Exp::new(econ.arrival_rate).map_err(|e| Error::Domain(e.to_string()))?;
            let work = Exp::new(econ.service_rate).map_err(|e| Error::Domain(e.to_string()))?;
            let mut t = 0.0;
            loop {
                t += gap.sample(&mut arrivals);
                if t >= config.horizon {
                    break;
                }
                tasks.push(Task {
                    time: t,
                    score: sampler.sample(&mut scores),
                    service: work.sample(&mut services),
                });
            }
        }

        let pi = model.drift.stationary_distribution()?;
        let u: f64 = drift.gen();
        let mut acc = 0.0;
        let mut regime = pi.len() - 1;
        for (i, p) in pi.iter().enumerate() {
            acc += p;
            if u < acc {
                regime = i;
                break;
            }
        }
        let initial_regime = regime;
        let mut switches = Vec::new();
        let mut t = 0.0;
        loop {
            let exit = model.drift.exit_rate(regime);
            if exit <= 0.0 {
                break;
            }
            let u: f64 = drift.gen();
            t += -(1.0 - u).ln() / exit;
            if t >= config.horizon {
                break;
            }
            let pick: f64 = drift.gen::<f64>() * exit;
            let mut acc = 0.0;
            let mut next = regime;
            for j in 0..model.n_regimes() {
                if j == regime {
                    continue;
                }
                acc += model.drift.rate(regime, j);
                next = j;
                if pick < acc {
                    break;
                }
            }
            regime = next;
            switches.push((t, regime));
        }
        Ok(Self {
            tasks,
            initial_regime,
            switches,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegimeMetrics {
    pub time_fraction: f64,
    pub arrivals: u64,
    pub escalation_fraction: f64,
    pub severe_error_rate: f64,
    pub avg_queue_length: f64,
    /// Cost per minute spent in this regime.
    pub cost_rate: f64,
}

/// Event counts over the whole replication, warmup included.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub arrivals: u64,
    pub escalations: u64,
    pub automations: u64,
    pub completions: u64,
    pub final_queue: u64,
}

/// Metrics of a single replication over `[warmup, horizon]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicationMetrics {
    pub replication: usize,
    pub avg_total_cost: f64,
    pub holding_cost_rate: f64,
    pub decision_cost_rate: f64,
    pub avg_queue_length: f64,
    pub severe_error_rate: f64,
    pub escalation_fraction: f64,
    pub automation_fraction: f64,
    /// Escalations per minute inside the window.
    pub escalation_rate: f64,
    /// Mean time in system of escalated tasks that finished in the window.
    pub mean_sojourn: f64,
    /// OLS slope of the sampled queue length over the back half of the
    /// horizon, tasks per minute.
    pub back_half_slope: f64,
    pub counts: EventCounts,
    pub per_regime: Vec<RegimeMetrics>,
}

/// Mean with a normal-approximation 95% half-width across replications.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self {
                mean,
                half_width: 0.0,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self {
            mean,
            half_width: 1.96 * (var / n as f64).sqrt(),
        }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower() <= x && x <= self.upper()
    }

    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.lower() <= other.upper() && other.lower() <= self.upper()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub time_fraction: Estimate,
    pub escalation_fraction: Estimate,
    pub severe_error_rate: Estimate,
    pub avg_queue_length: Estimate,
    pub cost_rate: Estimate,
}

/// Replication results plus their aggregates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub policy: String,
    pub avg_total_cost: Estimate,
    pub avg_queue_length: Estimate,
    pub severe_error_rate: Estimate,
    pub escalation_fraction: Estimate,
    pub automation_fraction: Estimate,
    pub back_half_slope: Estimate,
    pub per_regime: Vec<RegimeSummary>,
    pub replications: Vec<ReplicationMetrics>,
}

impl SimMetrics {
    pub fn aggregate(policy: &str, replications: Vec<ReplicationMetrics>) -> Self {
        let est = |f: &dyn Fn(&ReplicationMetrics) -> f64| {
            Estimate::from_samples(&replications.iter().map(f).collect::<Vec<_>>())
        };
        let k = replications.first().map_or(0, |r| r.per_regime.len());
        let per_regime = (0..k)
            .map(|i| RegimeSummary {
                time_fraction: est(&|r| r.per_regime[i].time_fraction),
                escalation_fraction: est(&|r| r.per_regime[i].escalation_fraction),
                severe_error_rate: est(&|r| r.per_regime[i].severe_error_rate),
                avg_queue_length: est(&|r| r.per_regime[i].avg_queue_length),
                cost_rate: est(&|r| r.per_regime[i].cost_rate),
            })
            .collect();
        Self {
            policy: policy.to_string(),
            avg_total_cost: est(&|r| r.avg_total_cost),
            avg_queue_length: est(&|r| r.avg_queue_length),
            severe_error_rate: est(&|r| r.severe_error_rate),
            escalation_fraction: est(&|r| r.escalation_fraction),
            automation_fraction: est(&|r| r.automation_fraction),
            back_half_slope: est(&|r| r.back_half_slope),
            per_regime,
            replications,
        }
    }
}

/// One line of the optional event trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: TraceKind,
    pub q: usize,
    pub theta: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Arrival,
    Completion,
    Drift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Automate,
    Escalate,
}

/// Number of equally spaced queue samples over the back half used for the
/// growth-slope regression.
const SLOPE_SAMPLES: usize = 2000;

/// Least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

fn run_replication(
    policy: &EscalationPolicy,
    model: &Model,
    config: &SimConfig,
    inputs: &ReplicationInputs,
    severe: &[f64],
    replication: usize,
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> Result<ReplicationMetrics> {
    let econ = &model.economics;
    let k = model.n_regimes();
    let m = econ.n_servers;
    let (warmup, horizon) = (config.warmup, config.horizon);
    let window = config.window();

    let mut q: usize = 0;
    let mut theta = inputs.initial_regime;
    let mut now = 0.0;
    let mut servers: Vec<Option<(f64, f64)>> = vec![None; m]; // (finish, arrival)
    let mut waiting: VecDeque<(f64, f64)> = VecDeque::new(); // (service, arrival)
    let mut next_task = 0usize;
    let mut next_switch = 0usize;

    let mut counts = EventCounts::default();
    let mut queue_area = 0.0;
    let mut decision_cost = 0.0;
    let (mut w_arrivals, mut w_escalations, mut w_severe) = (0u64, 0u64, 0u64);
    let mut sojourn_sum = 0.0;
    let mut sojourn_n = 0u64;
    let mut regime_time = vec![0.0; k];
    let mut regime_area = vec![0.0; k];
    let mut regime_cost = vec![0.0; k];
    let mut regime_arrivals = vec![0u64; k];
    let mut regime_escalations = vec![0u64; k];
    let mut regime_severe = vec![0u64; k];

    let sample_start = 0.5 * horizon;
    let sample_step = (horizon - sample_start) / SLOPE_SAMPLES as f64;
    let mut sample_times = Vec::with_capacity(SLOPE_SAMPLES);
    let mut sample_values = Vec::with_capacity(SLOPE_SAMPLES);
    let mut next_sample = 0usize;

    let mut advance = |from: f64,
                       to: f64,
                       q: usize,
                       theta: usize,
                       sample_times: &mut Vec<f64>,
                       sample_values: &mut Vec<f64>,
                       next_sample: &mut usize| {
        let lo = from.max(warmup);
        if to > lo {
            let dt = to - lo;
            queue_area += q as f64 * dt;
            regime_time[theta] += dt;
            regime_area[theta] += q as f64 * dt;
        }
        while *next_sample < SLOPE_SAMPLES {
            let ts = sample_start + (*next_sample as f64 + 0.5) * sample_step;
            if ts >= to {
                break;
            }
            sample_times.push(ts);
            sample_values.push(q as f64);
            *next_sample += 1;
        }
    };

    loop {
        let t_arrival = inputs
            .tasks
            .get(next_task)
            .map_or(f64::INFINITY, |t| t.time);
        let t_switch = inputs
            .switches
            .get(next_switch)
            .map_or(f64::INFINITY, |s| s.0);
        let (slot, t_done) = servers
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|(f, _)| (i, f)))
            .fold((usize::MAX, f64::INFINITY), |acc, (i, f)| {
                if f < acc.1 {
                    (i, f)
                } else {
                    acc
                }
            });
        let t_next = t_arrival.min(t_switch).min(t_done);
        if t_next >= horizon {
            advance(
                now,
                horizon,
                q,
                theta,
                &mut sample_times,
                &mut sample_values,
                &mut next_sample,
            );
            break;
        }
        advance(
            now,
            t_next,
            q,
            theta,
            &mut sample_times,
            &mut sample_values,
            &mut next_sample,
        );
        now = t_next;
        let in_window = now >= warmup;

        if t_done == t_next {
            let (_, arrived) = servers[slot].take().expect("busy server");
            q -= 1;
            counts.completions += 1;
            if in_window {
                sojourn_sum += now - arrived;
                sojourn_n += 1;
            }
            if let Some((service, arr)) = waiting.pop_front() {
                servers[slot] = Some((now + service, arr));
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceRecord {
                    time: now,
                    kind: TraceKind::Completion,
                    q,
                    theta,
                    score: None,
                    action: None,
                });
            }
        } else if t_switch == t_next {
            theta = inputs.switches[next_switch].1;
            next_switch += 1;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceRecord {
                    time: now,
                    kind: TraceKind::Drift,
                    q,
                    theta,
                    score: None,
                    action: None,
                });
            }
        } else {
            let task = inputs.tasks[next_task];
            next_task += 1;
            counts.arrivals += 1;
            let threshold = policy.threshold(q, theta)?;
            let escalate = threshold.escalates(task.score);
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceRecord {
                    time: now,
                    kind: TraceKind::Arrival,
                    q,
                    theta,
                    score: Some(task.score),
                    action: Some(if escalate {
                        Action::Escalate
                    } else {
                        Action::Automate
                    }),
                });
            }
            let cost = if escalate {
                econ.escalation_fee
            } else {
                model.risk.cost_auto(task.score, theta)?
            };
            if in_window {
                w_arrivals += 1;
                regime_arrivals[theta] += 1;
                decision_cost += cost;
                regime_cost[theta] += cost;
            }
            if escalate {
                counts.escalations += 1;
                q += 1;
                if in_window {
                    w_escalations += 1;
                    regime_escalations[theta] += 1;
                }
                match servers.iter().position(|s| s.is_none()) {
                    Some(free) => servers[free] = Some((now + task.service, now)),
                    None => waiting.push_back((task.service, now)),
                }
            } else {
                counts.automations += 1;
                if in_window && task.score >= severe[theta] {
                    w_severe += 1;
                    regime_severe[theta] += 1;
                }
            }
        }
    }
    counts.final_queue = q as u64;

    let ratio = |a: u64, b: u64| if b > 0 { a as f64 / b as f64 } else { 0.0 };
    let holding = econ.holding_coeff * queue_area / window;
    let per_regime = (0..k)
        .map(|i| RegimeMetrics {
            time_fraction: regime_time[i] / window,
            arrivals: regime_arrivals[i],
            escalation_fraction: ratio(regime_escalations[i], regime_arrivals[i]),
            severe_error_rate: ratio(regime_severe[i], regime_arrivals[i]),
            avg_queue_length: if regime_time[i] > 0.0 {
                regime_area[i] / regime_time[i]
            } else {
                0.0
            },
            cost_rate: if regime_time[i] > 0.0 {
                (econ.holding_coeff * regime_area[i] + regime_cost[i]) / regime_time[i]
            } else {
                0.0
            },
        })
        .collect();
    Ok(ReplicationMetrics {
        replication,
        avg_total_cost: holding + decision_cost / window,
        holding_cost_rate: holding,
        decision_cost_rate: decision_cost / window,
        avg_queue_length: queue_area / window,
        severe_error_rate: ratio(w_severe, w_arrivals),
        escalation_fraction: ratio(w_escalations, w_arrivals),
        automation_fraction: if w_arrivals > 0 {
            ratio(w_arrivals - w_escalations, w_arrivals)
        } else {
            0.0
        },
        escalation_rate: w_escalations as f64 / window,
        mean_sojourn: if sojourn_n > 0 {
            sojourn_sum / sojourn_n as f64
        } else {
            0.0
        },
        back_half_slope: ols_slope(&sample_times, &sample_values),
        counts,
        per_regime,
    })
}

/// Simulate several policies on the same replication inputs. Results are
/// in policy order and independent of the rayon pool size.
pub fn simulate_many(
    policies: &[EscalationPolicy],
    model: &Model,
    config: &SimConfig,
    safety: &SafetySpec,
) -> Result<Vec<SimMetrics>> {
    config.validate()?;
    let severe = config.severe_cutoff.resolve(model, safety)?;
    let per_rep: Vec<Vec<ReplicationMetrics>> = (0..config.n_replications)
        .into_par_iter()
        .map(|r| {
            let inputs = ReplicationInputs::generate(model, config, r)?;
            policies
                .iter()
                .map(|p| run_replication(p, model, config, &inputs, &severe, r, None))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(policies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            SimMetrics::aggregate(
                p.name(),
                per_rep.iter().map(|reps| reps[i].clone()).collect(),
            )
        })
        .collect())
}

/// Simulate one policy over `config.n_replications` replications.
pub fn simulate(
    policy: &EscalationPolicy,
    model: &Model,
    config: &SimConfig,
    safety: &SafetySpec,
) -> Result<SimMetrics> {
    Ok(simulate_many(std::slice::from_ref(policy), model, config, safety)?.remove(0))
}

/// Single replication with a full event trace.
pub fn simulate_traced(
    policy: &EscalationPolicy,
    model: &Model,
    config: &SimConfig,
    safety: &SafetySpec,
    replication: usize,
) -> Result<(ReplicationMetrics, Vec<TraceRecord>)> {
    config.validate()?;
    let severe = config.severe_cutoff.resolve(model, safety)?;
    let inputs = ReplicationInputs::generate(model, config, replication)?;
    let mut trace = Vec::new();
    let metrics = run_replication(
        policy,
        model,
        config,
        &inputs,
        &severe,
        replication,
        Some(&mut trace),
    )?;
    Ok((metrics, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(reps: usize) -> SimConfig {
        SimConfig {
            horizon: 2_000.0,
            warmup: 200.0,
            n_replications: reps,
            ..SimConfig::default()
        }
    }

    #[test]
    fn automate_everything_leaves_queue_empty() {
        let model = Model::moderation_scenario();
        let m = simulate(
            &EscalationPolicy::Static(Threshold::At(1.0)),
            &model,
            &short(4),
            &SafetySpec::default(),
        )
        .unwrap();
        assert_eq!(m.avg_queue_length.mean, 0.0);
        assert_eq!(m.escalation_fraction.mean, 0.0);
        assert_eq!(m.automation_fraction.mean, 1.0);
    }

    #[test]
    fn no_arrivals_means_zero_metrics() {
        let model = Model::moderation_scenario().with_arrival_rate(0.0).unwrap();
        let m = simulate(
            &EscalationPolicy::Static(Threshold::At(0.0)),
            &model,
            &short(3),
            &SafetySpec::default(),
        )
        .unwrap();
        assert_eq!(m.avg_total_cost.mean, 0.0);
        assert_eq!(m.avg_queue_length.mean, 0.0);
        assert_eq!(m.severe_error_rate.mean, 0.0);
        assert_eq!(m.escalation_fraction.mean, 0.0);
    }

    #[test]
    fn conservation_and_determinism() {
        let model = Model::moderation_scenario();
        let policy = EscalationPolicy::Static(Threshold::At(0.25));
        let a = simulate(&policy, &model, &short(3), &SafetySpec::default()).unwrap();
        let b = simulate(&policy, &model, &short(3), &SafetySpec::default()).unwrap();
        assert_eq!(a, b);
        for r in &a.replications {
            let c = r.counts;
            assert_eq!(c.arrivals, c.escalations + c.automations);
            assert!(c.completions <= c.escalations);
            assert_eq!(c.final_queue, c.escalations - c.completions);
            assert!((r.escalation_fraction + r.automation_fraction - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn littles_law_holds_roughly() {
        let model = Model::moderation_scenario();
        let m = simulate(
            &EscalationPolicy::Static(Threshold::At(0.25)),
            &model,
            &short(4),
            &SafetySpec::default(),
        )
        .unwrap();
        for r in &m.replications {
            let little = r.escalation_rate * r.mean_sojourn;
            assert!((little - r.avg_queue_length).abs() < 0.1 * r.avg_queue_length.max(1.0));
        }
    }

    #[test]
    fn undefined_regime_is_a_config_error() {
        let model = Model::moderation_scenario();
        let policy = EscalationPolicy::FixedSafety(vec![Threshold::At(0.3)]);
        let mut cfg = short(1);
        cfg.seed = 3;
        // the second regime is eventually visited
        assert!(matches!(
            simulate(&policy, &model, &cfg, &SafetySpec::default()),
            Err(Error::PolicyUndefined { theta: 1, .. })
        ));
    }

    #[test]
    fn trace_matches_counts() {
        let model = Model::moderation_scenario();
        let cfg = SimConfig {
            horizon: 200.0,
            warmup: 10.0,
            n_replications: 1,
            ..SimConfig::default()
        };
        let (m, trace) = simulate_traced(
            &EscalationPolicy::Static(Threshold::At(0.3)),
            &model,
            &cfg,
            &SafetySpec::default(),
            0,
        )
        .unwrap();
        let arrivals = trace
            .iter()
            .filter(|t| t.kind == TraceKind::Arrival)
            .count() as u64;
        let escalations = trace
            .iter()
            .filter(|t| t.action == Some(Action::Escalate))
            .count() as u64;
        assert_eq!(arrivals, m.counts.arrivals);
        assert_eq!(escalations, m.counts.escalations);
        assert!(trace.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn slope_of_a_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        assert!((ols_slope(&xs, &ys) - 3.0).abs() < 1e-12);
    }
}
