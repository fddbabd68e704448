//! `escalate`: config-driven experiments for escalation control.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use escalation_core::config::{hex_digest, ExperimentConfig};
use escalation_core::output::{
    agility_rows, comparison_metric_rows, phase_rows, policy_rows, read_csv, static_curve_rows,
    tables_from_rows, write_csv, write_json, ComparisonSummary, PolicyRow, RunManifest,
};
use escalation_core::sim::{
    averaged_model, compare_with_policies, validate_phase_cells, value_of_agility_sweep,
};
use escalation_core::solver::{
    certify_all, solve, truncation_check, SolverConfig, ThresholdTable, ValueTable,
};
use escalation_core::stability::{phase_diagram, safety_thresholds};
use escalation_core::{Error, Model, Result, ScoreKernel, Threshold};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "escalate",
    version,
    about = "Optimal escalation thresholds under reliability drift"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, default_value = "configs/moderation.toml")]
    config: PathBuf,
    /// Root directory for results.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Override `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the value function and thresholds, run the structural checks.
    Solve,
    /// Solve, then add the queue-cap truncation check and the cost
    /// supermodularity scan.
    Certify,
    /// Static vs drift-blind vs optimal on paired simulations.
    Compare,
    /// Capacity phase diagram over arrival rate and drift intensity.
    Phase {
        /// Simulate the safe-threshold policy in N cells on each side of
        /// the boundary.
        #[arg(long, value_name = "N")]
        validate: Option<usize>,
    },
    /// Savings of the optimal policy over the static one as drift
    /// intensity grows.
    Agility,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Certify => "certify",
            Command::Compare => "compare",
            Command::Phase { .. } => "phase",
            Command::Agility => "agility",
        }
    }
}

/// Collects the files a command writes into its run directory.
struct Run {
    dir: PathBuf,
    files: Vec<String>,
    notes: Vec<String>,
}

impl Run {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            files: Vec::new(),
            notes: Vec::new(),
        })
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        write_csv(&self.dir.join(name), rows)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.dir.join(name), value)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
        self.files.sort();
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.simulation.seed,
            files: self.files,
            notes: self.notes,
        };
        write_json(&self.dir.join("manifest.json"), &manifest)?;
        fs::write(self.dir.join("config.toml"), cfg.to_toml_string()?)?;
        Ok(self.dir)
    }
}

/// Solved tables keyed by the hash of `(model, solver)`.
struct SolveCache {
    dir: PathBuf,
}

impl SolveCache {
    fn key(model: &Model, solver: &SolverConfig) -> String {
        let text = serde_json::to_string(&(model, solver)).expect("model serializes");
        hex_digest(text.as_bytes())[..16].to_string()
    }

    fn path(&self, model: &Model, solver: &SolverConfig) -> PathBuf {
        self.dir.join(format!("{}.csv", Self::key(model, solver)))
    }

    fn store(
        &self,
        model: &Model,
        solver: &SolverConfig,
        values: &ValueTable,
        thresholds: &ThresholdTable,
    ) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path(model, solver);
        let tmp = path.with_extension("csv.tmp");
        write_csv(&tmp, &policy_rows(values, thresholds))?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    fn load(&self, model: &Model, solver: &SolverConfig) -> Option<ThresholdTable> {
        let rows: Vec<PolicyRow> = read_csv(&self.path(model, solver)).ok()?;
        let (table, _) = tables_from_rows(&rows).ok()?;
        (table.queue_cap == solver.queue_cap && table.n_regimes == model.n_regimes())
            .then_some(table)
    }

    fn thresholds(&self, model: &Model, solver: &SolverConfig) -> Result<ThresholdTable> {
        if let Some(t) = self.load(model, solver) {
            eprintln!("using cached policy {}", Self::key(model, solver));
            return Ok(t);
        }
        let started = Instant::now();
        let (values, thresholds) = solve(model, solver)?;
        eprintln!(
            "solved {} regime(s) up to q={} in {:.2?} ({} iterations)",
            model.n_regimes(),
            solver.queue_cap,
            started.elapsed(),
            values.iterations_used
        );
        self.store(model, solver, &values, &thresholds)?;
        Ok(thresholds)
    }

    /// Optimal table and drift-blind curve for `model`.
    fn policies(
        &self,
        model: &Model,
        solver: &SolverConfig,
    ) -> Result<(ThresholdTable, Vec<Threshold>)> {
        let optimal = self.thresholds(model, solver)?;
        let blind = self.thresholds(&averaged_model(model)?, solver)?;
        Ok((optimal, blind.curve(0)))
    }
}

#[derive(Serialize)]
struct SolverSummary {
    iterations_used: usize,
    final_residual: f64,
    convergence_tol: f64,
    uniformization_rate: f64,
    discrete_discount: f64,
}

impl SolverSummary {
    fn new(values: &ValueTable) -> Self {
        Self {
            iterations_used: values.iterations_used,
            final_residual: values.final_residual,
            convergence_tol: values.convergence_tol,
            uniformization_rate: values.uniformization_rate,
            discrete_discount: values.discrete_discount,
        }
    }
}

fn cmd_solve(
    cfg: &ExperimentConfig,
    model: &Model,
    run: &mut Run,
    cache: &SolveCache,
    full: bool,
) -> Result<()> {
    let started = Instant::now();
    let (values, thresholds) = solve(model, &cfg.solver)?;
    println!(
        "converged in {} iterations (residual {:e}) after {:.2?}",
        values.iterations_used,
        values.final_residual,
        started.elapsed()
    );
    cache.store(model, &cfg.solver, &values, &thresholds)?;
    run.csv("policy.csv", &policy_rows(&values, &thresholds))?;
    run.json("solver.json", &SolverSummary::new(&values))?;
    let bundle = certify_all(&values, &thresholds, model);
    println!(
        "convexity: {}  congestion shedding: {}  safety buffering: {} ({})",
        pass(bundle.convexity.passed),
        pass(bundle.congestion_shedding.passed),
        pass(bundle.drift_monotonicity.passed),
        bundle.drift_monotonicity.status
    );
    run.json("certification.json", &bundle)?;
    if full {
        let truncation = truncation_check(model, &cfg.solver, &thresholds, &values)?;
        println!(
            "truncation (cap {} vs {}): {}  max threshold gap {:e}",
            truncation.queue_cap,
            truncation.extended_cap,
            pass(truncation.passed),
            truncation.max_threshold_gap
        );
        run.json("truncation.json", &truncation)?;
        let supermodularity = model.risk.check_supermodularity(cfg.solver.s_grid_size)?;
        println!("cost supermodularity: {}", pass(supermodularity.passed));
        run.json("supermodularity.json", &supermodularity)?;
    }
    Ok(())
}

fn cmd_compare(
    cfg: &ExperimentConfig,
    model: &Model,
    run: &mut Run,
    cache: &SolveCache,
) -> Result<()> {
    let (optimal, blind) = cache.policies(model, &cfg.solver)?;
    let started = Instant::now();
    let cmp = compare_with_policies(
        model,
        &optimal,
        &blind,
        &cfg.simulation,
        &cfg.safety,
        &cfg.sweep.static_grid(),
    )?;
    eprintln!("simulated in {:.2?}", started.elapsed());
    run.csv("metrics.csv", &comparison_metric_rows(&cmp))?;
    run.csv("static_curve.csv", &static_curve_rows(&cmp.static_search))?;
    let summary = ComparisonSummary::new(&cmp);
    run.json("summary.json", &summary)?;
    println!("best static threshold: {}", summary.static_threshold);
    println!(
        "{:<6}{:>22}{:>20}{:>20}",
        "policy", "avg cost/min", "avg queue", "severe rate"
    );
    for p in &summary.policies {
        println!(
            "{:<6}{:>13.4} ± {:<6.4}{:>11.4} ± {:<6.4}{:>11.5} ± {:<6.5}",
            p.policy,
            p.avg_total_cost.mean,
            p.avg_total_cost.half_width,
            p.avg_queue_length.mean,
            p.avg_queue_length.half_width,
            p.severe_error_rate.mean,
            p.severe_error_rate.half_width
        );
    }
    println!(
        "ODP vs ST savings: {:.2}% (paired {:.2}% ± {:.2}%)",
        100.0 * summary.savings_vs_static,
        100.0 * summary.paired_savings_vs_static.mean,
        100.0 * summary.paired_savings_vs_static.half_width
    );
    Ok(())
}

fn cmd_phase(
    cfg: &ExperimentConfig,
    model: &Model,
    run: &mut Run,
    validate: Option<usize>,
) -> Result<()> {
    let (rates, drifts) = cfg.sweep.phase_grids()?;
    let kernel = ScoreKernel::new(&model.risk, cfg.solver.s_grid_size);
    let diagram = phase_diagram(&rates, &drifts, model, &cfg.safety, &kernel)?;
    run.csv("phase.csv", &phase_rows(&diagram))?;
    run.json("boundary.json", &diagram.boundary)?;
    let safe = safety_thresholds(&cfg.safety, &kernel);
    println!("safe thresholds: {safe:?}");
    println!(
        "{} cells, {} boundary points, capacity {}",
        diagram.cells.len(),
        diagram.boundary.len(),
        diagram.capacity
    );
    if let Some(n) = validate {
        let started = Instant::now();
        let checks =
            validate_phase_cells(&diagram, model, &cfg.simulation, &cfg.safety, &kernel, n)?;
        eprintln!(
            "validated {} cells in {:.2?}",
            checks.len(),
            started.elapsed()
        );
        let agree = checks.iter().filter(|c| c.agrees).count();
        println!(
            "empirical verdicts agree in {agree}/{} sampled cells",
            checks.len()
        );
        run.notes
            .push(format!("validation agreement {agree}/{}", checks.len()));
        run.json("phase_validation.json", &checks)?;
    }
    Ok(())
}

fn cmd_agility(
    cfg: &ExperimentConfig,
    model: &Model,
    run: &mut Run,
    cache: &SolveCache,
) -> Result<()> {
    let grid = cfg.sweep.agility_grid()?;
    let points = value_of_agility_sweep(
        &grid,
        model,
        &cfg.simulation,
        &cfg.safety,
        &cfg.sweep.static_grid(),
        |m| cache.policies(m, &cfg.solver),
    )?;
    run.csv("agility.csv", &agility_rows(&points))?;
    for p in &points {
        println!(
            "drift x{:<6} pi_H={:.4}  savings {:.2}% ± {:.2}%",
            p.drift_multiplier,
            p.pi_drift,
            100.0 * p.paired_savings.mean,
            100.0 * p.paired_savings.half_width
        );
    }
    Ok(())
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn run(cli: Cli) -> Result<PathBuf> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = ExperimentConfig::load(&cli.global.config)?;
    if let Some(seed) = cli.global.seed {
        cfg.simulation.seed = seed;
    }
    let model = cfg.validate()?;
    let name = cli.command.name();
    let mut run = Run::new(cli.global.out.join(&cfg.hash()[..16]).join(name))?;
    let cache = SolveCache {
        dir: cli.global.out.join("cache"),
    };
    match cli.command {
        Command::Solve => cmd_solve(&cfg, &model, &mut run, &cache, false)?,
        Command::Certify => cmd_solve(&cfg, &model, &mut run, &cache, true)?,
        Command::Compare => cmd_compare(&cfg, &model, &mut run, &cache)?,
        Command::Phase { validate } => cmd_phase(&cfg, &model, &mut run, validate)?,
        Command::Agility => cmd_agility(&cfg, &model, &mut run, &cache)?,
    }
    run.finish(name, &cfg)
}

fn exit_code(err: &Error) -> u8 {
    if err.is_config_error() {
        2
    } else if err.is_numeric_error() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(dir) => {
            println!("results in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_round_trips_tables() {
        let dir = std::env::temp_dir().join(format!("escalate-cache-{}", std::process::id()));
        let cache = SolveCache { dir: dir.clone() };
        let model = Model::moderation_scenario();
        let solver = SolverConfig {
            queue_cap: 40,
            ..SolverConfig::default()
        };
        let (values, thresholds) = solve(&model, &solver).unwrap();
        cache.store(&model, &solver, &values, &thresholds).unwrap();
        assert_eq!(cache.load(&model, &solver).unwrap(), thresholds);
        let other = SolverConfig {
            queue_cap: 41,
            ..solver.clone()
        };
        assert!(cache.load(&model, &other).is_none());
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NonFinite { q: 0, theta: 0 }), 3);
        assert_eq!(exit_code(&Error::Artifact("x".into())), 1);
    }

    #[test]
    fn cli_parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "escalate",
            "phase",
            "--validate",
            "3",
            "--seed",
            "9",
            "--threads",
            "1",
        ])
        .unwrap();
        assert_eq!(cli.global.seed, Some(9));
        assert_eq!(cli.global.threads, Some(1));
        assert!(matches!(cli.command, Command::Phase { validate: Some(3) }));
    }
}
