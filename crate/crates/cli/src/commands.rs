//! The four commands behind the binary, exposed as library functions so the
//! test suites can drive them directly.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;
use switchopt_core::testkit::{random_control, SplitMix};
use switchopt_core::{
    brute_force_subproblem, forward_state, gradient_adjoint, smooth_objective, solve_observed,
    ControlGrid, Mat, ModelInstance, PricingFunction, ProblemSpec, QuadPiece, SolveReport,
    TimeGrid,
};

use crate::config::{ConfigError, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Solver(switchopt_core::Error),
    Io(std::io::Error),
    Usage(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Solver(e) => write!(f, "solver error: {e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Usage(e) => write!(f, "usage error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<switchopt_core::Error> for CliError {
    fn from(e: switchopt_core::Error) -> Self {
        CliError::Solver(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// A finished solve plus everything needed to serialize its artifacts.
pub struct SolveOutcome {
    pub spec: ProblemSpec,
    pub report: SolveReport,
    pub config: RunConfig,
}

/// Runs the solver from the configured initial iterate.
pub fn run_solve(config: &RunConfig) -> Result<SolveOutcome, CliError> {
    let spec = config.problem_spec()?;
    let start = config.initial_control(&spec)?;
    let tr = config.trust_region_config();
    let log_every = config.output.log_every;
    let report = solve_observed(&spec, start, &tr, |record| {
        if log_every > 0 && record.iter % log_every == 0 {
            eprintln!(
                "iter {:>6}  J {:.6e}  pred {:.3e}  delta {:.3e}  budget {}  accepted {}",
                record.iter, record.objective, record.pred, record.delta, record.budget,
                record.accepted
            );
        }
    })?;
    Ok(SolveOutcome {
        spec,
        report,
        config: config.clone(),
    })
}

/// Serializes `iterations.csv`, `control.csv`, `state.csv` and
/// `summary.json` into `dir`. Nothing is written until the solve finished,
/// so failed runs leave no partial artifacts.
pub fn write_solve_artifacts(outcome: &SolveOutcome, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("iterations.csv"), outcome.report.records_csv())?;
    fs::write(dir.join("control.csv"), outcome.report.final_control.to_csv())?;
    let trajectory = forward_state(&outcome.spec, &outcome.report.final_control)?;
    fs::write(
        dir.join("state.csv"),
        trajectory.to_csv(outcome.spec.grid(), &outcome.spec.system().state_names()),
    )?;
    fs::write(dir.join("summary.json"), summary_json(outcome)?)?;
    Ok(())
}

pub fn summary_json(outcome: &SolveOutcome) -> Result<String, CliError> {
    let report = &outcome.report;
    let crit = &report.final_criticality;
    let summary = json!({
        "termination": report.termination,
        "final_objective": report.final_objective,
        "criticality": {
            "c_prox": crit.c_prox,
            "c_switch": crit.c_switch,
            "c": crit.c,
        },
        "iterations": report.iterations(),
        "wall_time_ms": report.total_millis,
        "final_total_variation": report.final_control.sign_pattern().total_variation(),
        "minimal_gap": report.final_control.minimal_gap(outcome.config.trust_region.crit_step),
        "config": outcome.config,
    });
    serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Usage(format!("cannot serialize summary: {e}")))
}

/// Result of the adjoint-versus-finite-differences check.
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub per_control: Vec<f64>,
    pub tolerance: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Central finite differences of the smooth objective, scaled by `1/dt`;
/// the independent reference the adjoint gradient is checked against.
pub fn finite_difference_gradient(
    spec: &ProblemSpec,
    u: &ControlGrid,
    step: f64,
) -> Result<Mat, CliError> {
    let dt = spec.grid().dt();
    let mut out = Mat::zeros(u.n_comp(), u.n_cells());
    for i in 0..u.n_comp() {
        for j in 0..u.n_cells() {
            let probe = |delta: f64| -> Result<f64, CliError> {
                let mut values = u.values().clone();
                values.set(i, j, u.get(i, j) + delta);
                let perturbed = ControlGrid::new(*u.grid(), values)?;
                Ok(smooth_objective(spec, &perturbed)?)
            };
            let plus = probe(step)?;
            let minus = probe(-step)?;
            out.set(i, j, (plus - minus) / (2.0 * step * dt));
        }
    }
    Ok(out)
}

/// Relative disagreement between two gradients: the largest entrywise
/// difference over the larger of one and the gradient's own magnitude.
pub fn gradient_rel_error(adjoint: &Mat, reference: &Mat) -> f64 {
    let scale = adjoint
        .data()
        .iter()
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    adjoint
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max)
        / scale
}

/// Compares the adjoint gradient against central differences on random
/// admissible controls drawn from the configured seed.
pub fn run_check_gradient(config: &RunConfig, n_controls: usize) -> Result<GradientCheck, CliError> {
    let spec = config.problem_spec()?;
    let mut rng = SplitMix(config.seed);
    let mut per_control = Vec::with_capacity(n_controls);
    for _ in 0..n_controls {
        let u = random_control(*spec.grid(), spec.pricing(), 0.5, &mut rng);
        let adjoint = gradient_adjoint(&spec, &u)?;
        let reference = finite_difference_gradient(&spec, &u, 1e-6)?;
        per_control.push(gradient_rel_error(&adjoint, &reference));
    }
    let max_rel_error = per_control.iter().copied().fold(0.0, f64::max);
    Ok(GradientCheck {
        max_rel_error,
        per_control,
        tolerance: 1e-6,
    })
}

/// One row of a grid sweep.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub n_cells: usize,
    pub budget_max: usize,
    pub iterations: usize,
    pub seconds: f64,
    pub objective: f64,
    pub c_prox: f64,
    pub c_switch: f64,
}

/// Default flip budget at a given resolution: a tenth of the cell count,
/// but never below ten.
pub fn sweep_budget(n_cells: usize) -> usize {
    (n_cells / 10).max(10)
}

/// Runs one solve per grid level, regenerating grid-dependent data (the
/// decay target) at each resolution. Every level starts from the all-off
/// control so the sweep measures the cold-start refinement trend; levels
/// are independent, so the parallel mode simply runs them on scoped
/// threads.
pub fn run_sweep(
    config: &RunConfig,
    grids: &[usize],
    parallel: bool,
) -> Result<Vec<SweepRow>, CliError> {
    if grids.is_empty() {
        return Err(CliError::Usage("sweep needs at least one grid level".into()));
    }
    let solve_level = |n_cells: usize| -> Result<SweepRow, CliError> {
        let spec = config.problem_spec_on(n_cells)?;
        let mut tr = config.trust_region_config();
        tr.budget_max = sweep_budget(n_cells);
        let report = switchopt_core::solve(&spec, spec.zero_control(), &tr)?;
        Ok(SweepRow {
            n_cells,
            budget_max: tr.budget_max,
            iterations: report.iterations(),
            seconds: report.total_millis / 1e3,
            objective: report.final_objective,
            c_prox: report.final_criticality.c_prox,
            c_switch: report.final_criticality.c_switch,
        })
    };
    if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = grids
                .iter()
                .map(|&n| scope.spawn(move || solve_level(n)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    } else {
        grids.iter().map(|&n| solve_level(n)).collect()
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("N_T,B_max,iterations,time,J,C_prox,C_switch\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n_cells, r.budget_max, r.iterations, r.seconds, r.objective, r.c_prox, r.c_switch
        ));
    }
    out
}

/// On-disk description of a single subproblem instance.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubproblemFile {
    #[serde(default)]
    pub t_start: f64,
    pub dt: f64,
    pub prox_step: f64,
    #[serde(default = "default_switch_weight")]
    pub switch_weight: f64,
    pub budget: usize,
    pub control: Vec<Vec<f64>>,
    pub gradient: Vec<Vec<f64>>,
    pub pricing: Vec<SubproblemPricing>,
}

fn default_switch_weight() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubproblemPricing {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub convexity_floor: f64,
    pub pieces: Vec<crate::config::PieceSection>,
}

#[derive(Debug)]
pub struct SubproblemOutcome {
    pub value: f64,
    pub flips: usize,
    /// Per-component 0/1 strings over the cells.
    pub pattern_rows: Vec<String>,
    pub brute_force: Option<BruteForceCheck>,
    pub phi_csv: Option<String>,
}

#[derive(Debug)]
pub struct BruteForceCheck {
    pub value: f64,
    pub matches: bool,
}

pub fn load_subproblem(path: &Path) -> Result<SubproblemFile, CliError> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("cannot parse instance: {e}")))
}

pub fn run_subproblem(
    file: &SubproblemFile,
    brute_force: bool,
    dump_phi: bool,
) -> Result<SubproblemOutcome, CliError> {
    let n_cells = file
        .control
        .first()
        .map(Vec::len)
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage("instance has no control cells".into()))?;
    let grid = TimeGrid::new(file.t_start, file.t_start + file.dt * n_cells as f64, n_cells)?;
    let pricing: Vec<PricingFunction> = file
        .pricing
        .iter()
        .map(|p| {
            let pieces = p
                .pieces
                .iter()
                .map(|piece| QuadPiece {
                    lo: piece.interval[0],
                    hi: piece.interval[1],
                    c2: piece.quad[0],
                    c1: piece.quad[1],
                    c0: piece.quad[2],
                })
                .collect();
            PricingFunction::new(p.a, p.b, pieces, p.convexity_floor)
        })
        .collect::<Result<_, _>>()?;
    let control = ControlGrid::snapped(grid, Mat::from_rows(&file.control)?, &pricing)?;
    let grad = Mat::from_rows(&file.gradient)?;
    let inst = ModelInstance::new(
        &control,
        &grad,
        file.prox_step,
        &pricing,
        file.switch_weight,
        file.budget,
    )?;
    let tables = inst.build_tables();
    let sol = tables.extract(&inst, file.budget.min(tables.cap()))?;

    let pattern_rows = (0..control.n_comp())
        .map(|i| {
            sol.pattern
                .iter()
                .map(|alpha| if alpha & (1 << i) != 0 { '1' } else { '0' })
                .collect()
        })
        .collect();

    let brute = if brute_force {
        let (_, oracle) = brute_force_subproblem(&inst, file.budget.min(tables.cap()))?;
        Some(BruteForceCheck {
            value: oracle,
            matches: (oracle - sol.value).abs() <= 1e-10,
        })
    } else {
        None
    };

    let phi_csv = dump_phi.then(|| {
        let mut out = String::from("l,alpha,B,phi\n");
        for (cell, alpha, b, phi) in tables.entries() {
            out.push_str(&format!("{},{},{},{}\n", cell + 1, alpha, b, phi));
        }
        out
    });

    Ok(SubproblemOutcome {
        value: sol.value,
        flips: sol.flips_used,
        pattern_rows,
        brute_force: brute,
        phi_csv,
    })
}

/// Prints a subproblem outcome to the writer; returns whether the oracle
/// comparison (if requested) agreed.
pub fn print_subproblem(out: &mut impl Write, outcome: &SubproblemOutcome) -> std::io::Result<bool> {
    writeln!(out, "dp_value = {}", outcome.value)?;
    writeln!(out, "flips = {}", outcome.flips)?;
    for (i, row) in outcome.pattern_rows.iter().enumerate() {
        writeln!(out, "component {} pattern: {}", i + 1, row)?;
    }
    let mut ok = true;
    if let Some(check) = &outcome.brute_force {
        writeln!(out, "brute_force = {}", check.value)?;
        writeln!(
            out,
            "verdict: {}",
            if check.matches { "OK" } else { "MISMATCH" }
        )?;
        ok = check.matches;
    }
    Ok(ok)
}

/// Resolves the output directory: the `--out` flag wins over the config.
pub fn resolve_out_dir(config: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&config.output.dir))
}
