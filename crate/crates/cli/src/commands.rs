//! Subcommand implementations.

use std::path::Path;

use revealed::evaluation::{run_subsample_experiment, winsorize, ExperimentPlan};
use revealed::model::extend;
use revealed::pipeline::{self, Fit, FitConfig};
use revealed::simulate::{block_structure, mask_at_random, simulate_panel};
use revealed::validation::{self, kappa_grid};
use revealed::{linalg, ForecastPanel, InformationStructure, LinkModel, Method, Mode, ProjectionConfig};
use serde::Serialize;

use crate::args::{AggregateArgs, Command, EvaluateArgs, FitArgs, RunArgs, SimulateArgs, TuningArgs};
use crate::error::{CliError, CliResult};
use crate::io;

/// κ candidates used by `evaluate` unless `--kappa-count` says otherwise.
pub const EXPERIMENT_KAPPA_COUNT: usize = 10;

#[derive(Debug, Serialize)]
struct Diagnostics {
    command: &'static str,
    mode: Mode,
    events: usize,
    forecasters: usize,
    seed: u64,
    /// Chosen κ; absent when Σ was supplied or the prior was degenerate.
    kappa: Option<f64>,
    kappa_candidates: Option<usize>,
    /// Of h(Σ); null when singular.
    condition_number: Option<f64>,
    min_eigenvalue_h: f64,
    iterations: Option<usize>,
    residual: Option<f64>,
    pattern_residual: Option<f64>,
    repair_weight: Option<f64>,
    clamp_count: Option<usize>,
}

impl Diagnostics {
    fn new(command: &'static str, panel: &ForecastPanel, sigma: &InformationStructure, seed: u64) -> CliResult<Self> {
        let h = extend(sigma);
        let condition = linalg::condition_number(h.matrix())?;
        Ok(Self {
            command,
            mode: panel.mode,
            events: panel.n_events(),
            forecasters: panel.n_forecasters(),
            seed,
            kappa: None,
            kappa_candidates: None,
            condition_number: condition.is_finite().then_some(condition),
            min_eigenvalue_h: linalg::min_eigenvalue(h.matrix())?,
            iterations: None,
            residual: None,
            pattern_residual: None,
            repair_weight: None,
            clamp_count: None,
        })
    }

    fn from_fit(command: &'static str, fit: &Fit, seed: u64) -> CliResult<Self> {
        let mut d = Self::new(command, &fit.prepared, &fit.sigma, seed)?;
        if let Some(sel) = &fit.selection {
            d.kappa = Some(sel.chosen);
            d.kappa_candidates = Some(sel.grid.len());
            d.iterations = Some(sel.projection.iterations);
            d.residual = Some(sel.projection.residual);
            d.pattern_residual = Some(sel.projection.omega.pattern_residual());
            d.repair_weight = Some(sel.projection.repair_weight);
        }
        Ok(d)
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Checks the tuning knobs and turns them into a fitting configuration.
pub fn fit_config(mode: Mode, tuning: &TuningArgs, default_count: Option<usize>) -> CliResult<FitConfig> {
    let (floor, ceil) = (tuning.censor_floor, tuning.censor_ceil);
    if !(floor > 0.0 && floor < ceil && ceil < 1.0) {
        return Err(usage(format!(
            "censor bounds must satisfy 0 < floor < ceiling < 1, got {floor} and {ceil}"
        )));
    }
    if !(tuning.epsilon > 0.0 && tuning.epsilon.is_finite()) {
        return Err(usage(format!("--epsilon must be positive, got {}", tuning.epsilon)));
    }
    if tuning.max_iterations == 0 {
        return Err(usage("--max-iterations must be positive"));
    }
    let (lo, hi, count) = match mode {
        Mode::Binary => validation::BINARY_GRID,
        Mode::Continuous => validation::CONTINUOUS_GRID,
    };
    let grid = kappa_grid(
        tuning.kappa_min.unwrap_or(lo),
        tuning.kappa_max.unwrap_or(hi),
        tuning.kappa_count.or(default_count).unwrap_or(count),
        tuning.kappa_log,
    )
    .map_err(|e| usage(format!("invalid kappa grid: {e}")))?;
    let projection = ProjectionConfig::new(grid[0], tuning.epsilon, tuning.max_iterations)
        .map_err(|e| usage(e.to_string()))?;
    Ok(FitConfig {
        censor_floor: floor,
        censor_ceiling: ceil,
        kappa_grid: grid,
        projection,
    })
}

/// Reads the panel and applies Winsorization when asked.
fn load_panel(run: &RunArgs, tuning: &TuningArgs) -> CliResult<ForecastPanel> {
    if tuning.winsorize.is_some() && run.mode == Mode::Binary {
        return Err(usage("--winsorize applies to continuous panels only"));
    }
    if let Some(level) = tuning.winsorize {
        if !(level > 0.0 && level < 100.0) {
            return Err(usage(format!("--winsorize must lie in (0, 100), got {level}")));
        }
    }
    let panel = io::ingest(&run.input, run.mode)?;
    log::info!(
        "{}: {} events, {} forecasters, {:.1}% missing",
        run.input.display(),
        panel.n_events(),
        panel.n_forecasters(),
        100.0 * panel.grid.missing_fraction()
    );
    match tuning.winsorize {
        Some(level) => Ok(winsorize(&panel, level)?),
        None => Ok(panel),
    }
}

fn resolve_methods(mode: Mode, requested: &[Method]) -> CliResult<Vec<Method>> {
    if requested.is_empty() {
        return Ok(Method::defaults_for(mode));
    }
    if let Some(m) = requested.iter().find(|m| !m.supports(mode)) {
        return Err(usage(format!("method {m} does not apply to {mode} panels")));
    }
    let mut seen = Vec::new();
    for &m in requested {
        if !seen.contains(&m) {
            seen.push(m);
        }
    }
    Ok(seen)
}

fn estimate(args: &FitArgs) -> CliResult<()> {
    let config = fit_config(args.run.mode, &args.tuning, None)?;
    let panel = load_panel(&args.run, &args.tuning)?;
    let fit = pipeline::fit(&panel, &config)?;
    io::ensure_dir(&args.run.out)?;
    io::write_sigma(&args.run.out.join("sigma.csv"), &fit.sigma, &panel.forecaster_ids)?;
    io::write_json(
        &args.run.out.join("diagnostics.json"),
        &Diagnostics::from_fit("estimate", &fit, args.run.seed)?,
    )
}

fn aggregate(args: &AggregateArgs) -> CliResult<()> {
    let run = &args.fit.run;
    let config = fit_config(run.mode, &args.fit.tuning, None)?;
    let methods = resolve_methods(run.mode, &args.methods)?;
    let panel = load_panel(run, &args.fit.tuning)?;
    let (fit, result) = match &args.sigma {
        Some(path) => {
            let (ids, sigma) = io::read_sigma(path)?;
            let sigma = io::align_sigma(path, &ids, &sigma, &panel.forecaster_ids)?;
            let fit = pipeline::fit_with_sigma(&panel, sigma, &config)?;
            let result = pipeline::aggregate(&fit, &methods)?;
            (Some(fit), result)
        }
        None => pipeline::run(&panel, &config, &methods)?,
    };
    io::ensure_dir(&run.out)?;
    io::write_aggregates(&run.out.join("aggregates.csv"), &result.results)?;
    if let Some(fit) = fit {
        let mut d = Diagnostics::from_fit("aggregate", &fit, run.seed)?;
        d.clamp_count = Some(result.clamp_count);
        io::write_json(&run.out.join("diagnostics.json"), &d)?;
    }
    if result.clamp_count > 0 {
        log::warn!("{} revealed aggregates had their conditional variance clamped", result.clamp_count);
    }
    Ok(())
}

fn validate_kappa(args: &FitArgs) -> CliResult<()> {
    let config = fit_config(args.run.mode, &args.tuning, None)?;
    let panel = load_panel(&args.run, &args.tuning)?;
    let fit = pipeline::fit(&panel, &config)?;
    let Some(selection) = &fit.selection else {
        return Err(CliError::data(
            &args.run.input,
            "the forecasts do not vary around the event means, so there is no structure to validate",
        ));
    };
    io::ensure_dir(&args.run.out)?;
    io::write_kappa_scores(&args.run.out.join("kappa_scores.csv"), &selection.grid, &selection.scores)?;
    io::write_json(
        &args.run.out.join("diagnostics.json"),
        &Diagnostics::from_fit("validate-kappa", &fit, args.run.seed)?,
    )
}

fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let run = &args.fit.run;
    let config = fit_config(run.mode, &args.fit.tuning, Some(EXPERIMENT_KAPPA_COUNT))?;
    let methods = resolve_methods(run.mode, &args.methods)?;
    if args.reps == 0 {
        return Err(usage("--reps must be positive"));
    }
    if args.sizes.contains(&0) {
        return Err(usage("--sizes must be positive"));
    }
    let panel = load_panel(run, &args.fit.tuning)?;
    if panel.outcomes.is_none() {
        return Err(CliError::data(&run.input, "evaluation needs an outcome for every event"));
    }
    let plan = ExperimentPlan::new(args.sizes.clone(), args.reps, methods, run.seed);
    let report = run_subsample_experiment(&panel, &plan, &config)?;
    io::ensure_dir(&run.out)?;
    io::write_evaluation(&run.out.join("evaluation.csv"), &report)?;
    io::write_json(&run.out.join("evaluation.json"), &report)
}

fn simulate(args: &SimulateArgs) -> CliResult<()> {
    if args.events == 0 {
        return Err(usage("--events must be positive"));
    }
    if !(0.0..1.0).contains(&args.missing) {
        return Err(usage(format!("--missing must lie in [0, 1), got {}", args.missing)));
    }
    let (sigma, ids) = match &args.sigma {
        Some(path) => {
            let (ids, sigma) = io::read_sigma(path)?;
            (sigma, Some(ids))
        }
        None => {
            if args.blocks == 0 || args.per_block == 0 {
                return Err(usage("--blocks and --per-block must be positive"));
            }
            let sigma = block_structure(args.blocks, args.per_block, args.shared, args.private)
                .map_err(|e| usage(format!("invalid block structure: {e}")))?;
            (sigma, None)
        }
    };
    let link = match args.mode {
        Mode::Binary => LinkModel::binary_constant(args.threshold, args.events),
        Mode::Continuous => LinkModel::Continuous {
            prior_means: vec![args.prior_mean; args.events],
            prior_variance: args.prior_variance,
        },
    };
    link.validate().map_err(|e| usage(e.to_string()))?;
    let mut panel = simulate_panel(&sigma, &link, args.events, args.seed)?.panel;
    if args.missing > 0.0 {
        panel = mask_at_random(&panel, args.missing, args.seed)?;
    }
    if let Some(ids) = ids {
        panel.forecaster_ids = ids;
    }
    io::ensure_dir(&args.out)?;
    io::write_panel(&args.out.join("panel.csv"), &panel)?;
    io::write_sigma(&args.out.join("sigma.csv"), &sigma, &panel.forecaster_ids)
}

pub fn dispatch(command: &Command) -> CliResult<()> {
    log::debug!("running {}", command.name());
    match command {
        Command::Estimate(a) => estimate(a),
        Command::Aggregate(a) => aggregate(a),
        Command::ValidateKappa(a) => validate_kappa(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Simulate(a) => simulate(a),
    }
}

/// Output directory of a command, for messages.
pub fn output_dir(command: &Command) -> &Path {
    match command {
        Command::Estimate(a) | Command::ValidateKappa(a) => &a.run.out,
        Command::Aggregate(a) => &a.fit.run.out,
        Command::Evaluate(a) => &a.fit.run.out,
        Command::Simulate(a) => &a.out,
    }
}
