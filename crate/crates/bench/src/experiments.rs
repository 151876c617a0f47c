//! Experiment drivers. Each returns a [`BenchReport`]; per-run failures become
//! rows with status `failed` instead of aborting the sweep.

use ndg_core::grid::{advected_multisine, init_euler_subsonic, init_multisine, l2_error, multisine_amplitudes, write_field_dump};
use ndg_core::partition::{run_partitioned, PartitionError, PartitionedRun, RunMode, TransportKind};
use ndg_core::{EquationModel, Mesh, NodalBasis, SolverConfig, StateField, StepStats};
use thiserror::Error;

use crate::config::{ConfigError, Equation, Experiment, ExperimentSpec, RkName, TransportName};
use crate::fit::{dof_for_error, fit_convergence, kreiss_oliger_c};
use crate::report::{
    BenchReport, ReportRow, STATUS_FAILED, STATUS_OK, STATUS_SKIPPED, STATUS_UNREACHABLE, STATUS_WARNING,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("setup: {0}")]
    Setup(String),
}

/// Initial state and solver configuration of one run.
pub struct Case {
    pub mesh: Mesh,
    pub basis: NodalBasis,
    pub model: EquationModel,
    pub config: SolverConfig,
    pub initial: StateField,
}

impl Case {
    pub fn dof(&self) -> usize {
        self.config.dof()
    }
}

/// Builds a run on a cubic grid of `cells` per axis with unit lengths.
pub fn build_case(spec: &ExperimentSpec, dim: usize, order: usize, cells: usize, rk: RkName) -> Result<Case, BenchError> {
    let setup = |e: &dyn std::fmt::Display| BenchError::Setup(e.to_string());
    let mesh = Mesh::new(dim, &vec![cells; dim], &vec![1.0; dim], order).map_err(|e| setup(&e))?;
    let basis = NodalBasis::new(order).map_err(|e| setup(&e))?;
    let model = spec.model(dim)?;
    let initial = match spec.equation {
        Equation::Advection => {
            let seed = spec
                .seed
                .ok_or_else(|| ConfigError::Invalid("advection runs need a seed".into()))?;
            init_multisine(&mesh, &basis, &model, &multisine_amplitudes(spec.nk, seed))
        }
        Equation::Euler => init_euler_subsonic(&mesh, &basis, &model),
    }
    .map_err(|e| setup(&e))?;
    let config = SolverConfig::new(mesh.clone(), model, rk.scheme())
        .with_cfl(spec.cfl)
        .with_end_time(spec.t_end);
    Ok(Case {
        mesh,
        basis,
        model,
        config,
        initial,
    })
}

/// L2 error of an advection run against the translated initial profile at
/// time `t`.
fn advection_error(spec: &ExperimentSpec, case: &Case, field: &StateField, t: f64) -> Result<f64, BenchError> {
    let setup = |e: &dyn std::fmt::Display| BenchError::Setup(e.to_string());
    let amplitudes = multisine_amplitudes(spec.nk, spec.seed.unwrap_or_default());
    let exact = advected_multisine(&case.mesh, &case.basis, &case.model, &amplitudes, t).map_err(|e| setup(&e))?;
    l2_error(&case.mesh, &case.basis, field, &exact, 0).map_err(|e| setup(&e))
}

fn transport(spec: &ExperimentSpec) -> TransportKind {
    match spec.transport {
        TransportName::InProcess => TransportKind::InProcess,
        TransportName::Tcp => TransportKind::Tcp,
    }
}

fn cells_label(dim: usize, n: usize) -> String {
    vec![n.to_string(); dim].join("x")
}

fn base_row(spec: &ExperimentSpec, mode: &str, dim: usize, order: usize, rk: RkName, cells: usize, workers: usize) -> ReportRow {
    let advection = spec.equation == Equation::Advection;
    ReportRow {
        experiment: spec.experiment.name().into(),
        mode: mode.into(),
        equation: spec.equation.name().into(),
        dim,
        order,
        rk: rk.scheme().name().into(),
        cells: cells_label(dim, cells),
        nk: advection.then_some(spec.nk),
        seed: if advection { spec.seed } else { None },
        workers,
        cfl: spec.cfl,
        status: STATUS_OK.into(),
        ..Default::default()
    }
}

fn fill_stats(row: &mut ReportRow, stats: &StepStats, dof: usize, workers: usize) {
    row.steps = Some(stats.steps);
    row.dof = Some(dof);
    row.dt_min = Some(stats.dt_min);
    row.dt_max = Some(stats.dt_max);
    row.wall_time = Some(stats.wall_time);
    row.exchange_time = Some(stats.exchange_time);
    row.time_per_dof = Some(stats.wall_time / dof as f64);
    row.worker_time_per_dof = Some(stats.wall_time * workers as f64 / dof as f64);
}

fn fail(row: &mut ReportRow, e: impl std::fmt::Display) {
    row.status = STATUS_FAILED.into();
    row.note = e.to_string();
}

/// Runs to `t_end` and returns the final field with step statistics.
fn run_to_end(spec: &ExperimentSpec, case: &Case, workers: usize) -> Result<PartitionedRun, PartitionError> {
    run_partitioned(&case.config, &case.initial, workers, RunMode::ToEndTime, transport(spec))
}

/// Fixed-step timing: `warmup` untimed steps, then `steps` timed steps,
/// repeated `repeats` times from the initial state; keeps the fastest.
pub fn timed_steps(spec: &ExperimentSpec, case: &Case, workers: usize) -> Result<StepStats, PartitionError> {
    let mode = RunMode::FixedSteps {
        steps: spec.steps,
        warmup: spec.warmup,
    };
    let mut best: Option<StepStats> = None;
    for _ in 0..spec.repeats {
        let run = run_partitioned(&case.config, &case.initial, workers, mode, transport(spec))?;
        let stats = run.stats();
        if best.as_ref().map_or(true, |b| stats.wall_time < b.wall_time) {
            best = Some(stats);
        }
    }
    Ok(best.unwrap_or_default())
}

/// Error sweep rows `to-end-time` for every rk, order and cell count.
fn error_sweep(spec: &ExperimentSpec, report: &mut BenchReport, with_slopes: bool) {
    let workers = spec.workers[0];
    for &rk in &spec.rk {
        for &order in &spec.orders {
            let mut points = Vec::new();
            for &n in &spec.cells {
                let mut row = base_row(spec, "to-end-time", spec.dim, order, rk, n, workers);
                row.t_end = Some(spec.t_end);
                match build_case(spec, spec.dim, order, n, rk) {
                    Err(e) => fail(&mut row, e),
                    Ok(case) => match run_to_end(spec, &case, workers) {
                        Err(e) => fail(&mut row, e),
                        Ok(run) => {
                            let stats = run.stats();
                            fill_stats(&mut row, &stats, case.dof(), workers);
                            match advection_error(spec, &case, &run.field, stats.final_time) {
                                Ok(err) => {
                                    row.l2_error = Some(err);
                                    points.push((n as f64, err));
                                }
                                Err(e) => fail(&mut row, e),
                            }
                        }
                    },
                }
                report.rows.push(row);
            }
            if with_slopes {
                let mut row = base_row(spec, "slope", spec.dim, order, rk, 0, workers);
                row.cells = spec.cells.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";");
                row.t_end = Some(spec.t_end);
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (cells, errs): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
                match fit_convergence(&cells, &errs) {
                    Some(f) => {
                        row.slope = Some(f.fitted);
                        row.peak_slope = Some(f.peak);
                        row.fine_slope = Some(f.fine);
                        row.note = format!(
                            "range {}..{} cells; local slopes {}",
                            cells[f.first],
                            cells[f.last],
                            f.local.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(" ")
                        );
                    }
                    None => {
                        row.status = STATUS_UNREACHABLE.into();
                        row.note = "fewer than two pre-saturation points".into();
                    }
                }
                report.rows.push(row);
            }
        }
    }
}

/// L2 error after `t_end` against the initial condition, with per-order
/// least-squares slopes.
pub fn run_converge(spec: &ExperimentSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let mut report = BenchReport::new(spec);
    error_sweep(spec, &mut report, true);
    Ok(report)
}

/// Error against wall time and dof for every run of the sweep.
pub fn run_cost(spec: &ExperimentSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let mut report = BenchReport::new(spec);
    error_sweep(spec, &mut report, false);
    Ok(report)
}

/// Dof needed per order for each target error, with the fitted constant
/// `c` of `dof = c (1/error)^(1/order)`. Dof here is cells × order per
/// axis (one variable).
pub fn run_fit(spec: &ExperimentSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let mut report = BenchReport::new(spec);
    error_sweep(spec, &mut report, false);
    let rk = spec.rk[0];
    let workers = spec.workers[0];
    let mut fits = Vec::new();
    for &order in &spec.orders {
        let mut pts: Vec<(f64, f64)> = report
            .rows
            .iter()
            .filter(|r| r.mode == "to-end-time" && r.order == order && r.rk == rk.scheme().name() && r.is_ok())
            .filter_map(|r| Some((r.dof? as f64, r.l2_error?)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (dofs, errs): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        for &target in &spec.targets {
            let mut row = base_row(spec, "fit", spec.dim, order, rk, 0, workers);
            row.cells = spec.cells.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";");
            row.t_end = Some(spec.t_end);
            row.target_error = Some(target);
            row.reference_c = Some(spec.reference_c);
            match dof_for_error(&dofs, &errs, target) {
                Some(d) => {
                    let dof_1d = d.powf(1.0 / spec.dim as f64);
                    row.dof = Some(d.round() as usize);
                    row.fitted_c = Some(kreiss_oliger_c(dof_1d, target, order));
                }
                None => {
                    row.status = STATUS_UNREACHABLE.into();
                    row.note = "target error outside the measured range".into();
                }
            }
            fits.push(row);
        }
    }
    report.rows.extend(fits);
    Ok(report)
}

/// `steps` fixed steps per order and cell count, reporting time per dof.
pub fn run_timing(spec: &ExperimentSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let mut report = BenchReport::new(spec);
    let workers = spec.workers[0];
    let rk = spec.rk[0];
    for &order in &spec.orders {
        for &n in &spec.cells {
            let mut row = base_row(spec, "fixed-steps", spec.dim, order, rk, n, workers);
            match build_case(spec, spec.dim, order, n, rk) {
                Err(e) => fail(&mut row, e),
                Ok(case) => match timed_steps(spec, &case, workers) {
                    Ok(stats) => fill_stats(&mut row, &stats, case.dof(), workers),
                    Err(e) => fail(&mut row, e),
                },
            }
            report.rows.push(row);
        }
    }
    Ok(report)
}

/// Most balanced factorization of `workers` into `dim` block counts,
/// largest first.
pub fn weak_block_grid(dim: usize, workers: usize) -> [usize; 3] {
    let mut best = [workers, 1, 1];
    let mut best_max = workers;
    for a in 1..=workers {
        if workers % a != 0 {
            continue;
        }
        for b in 1..=workers / a {
            if (workers / a) % b != 0 {
                continue;
            }
            let c = workers / a / b;
            let g = [a, b, c];
            if (dim < 3 && c != 1) || (dim < 2 && b != 1) {
                continue;
            }
            let m = *g.iter().max().unwrap();
            if m < best_max || (m == best_max && g > best) {
                best = g;
                best_max = m;
            }
        }
    }
    best
}

fn scale_row(
    spec: &ExperimentSpec,
    mode: &str,
    case: Result<Case, BenchError>,
    workers: usize,
    mut row: ReportRow,
) -> (ReportRow, Option<f64>) {
    let case = match case {
        Ok(c) => c,
        Err(e) => {
            fail(&mut row, e);
            return (row, None);
        }
    };
    row.mode = mode.into();
    match timed_steps(spec, &case, workers) {
        Ok(stats) => {
            fill_stats(&mut row, &stats, case.dof(), workers);
            (row, Some(stats.wall_time))
        }
        Err(PartitionError::Infeasible { reason, .. }) => {
            row.status = STATUS_SKIPPED.into();
            row.note = reason;
            (row, None)
        }
        Err(e) => {
            fail(&mut row, e);
            (row, None)
        }
    }
}

/// Strong scaling over `cells`, weak scaling at `weak_cells` per worker, and
/// an optional 2D-vs-3D comparison at `matched_dof`.
pub fn run_scale(spec: &ExperimentSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let mut report = BenchReport::new(spec);
    let rk = spec.rk[0];
    let order = spec.orders[0];
    let dim = spec.dim;
    for &n in &spec.cells {
        let mut baseline = None;
        let mut counts = spec.workers.clone();
        if !counts.contains(&1) {
            counts.insert(0, 1);
        }
        for &p in &counts {
            let row = base_row(spec, "strong", dim, order, rk, n, p);
            let (mut row, wall) = scale_row(spec, "strong", build_case(spec, dim, order, n, rk), p, row);
            if p == 1 {
                baseline = wall;
            }
            if let (Some(t1), Some(tp)) = (baseline, wall) {
                row.speedup = Some(t1 / tp);
                row.efficiency = Some(t1 / tp / p as f64);
            }
            report.rows.push(row);
        }
    }
    if let Some(b) = spec.weak_cells {
        let mut baseline = None;
        for &p in &spec.workers {
            let grid = weak_block_grid(dim, p);
            let cells: Vec<usize> = (0..dim).map(|d| b * grid[d]).collect();
            let mut row = base_row(spec, "weak", dim, order, rk, b, p);
            row.cells = cells.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("x");
            let case = build_rect_case(spec, &cells, order, rk);
            let (mut row, wall) = scale_row(spec, "weak", case, p, row);
            if p == 1 {
                baseline = wall;
            }
            if let (Some(t1), Some(tp)) = (baseline, wall) {
                row.efficiency = Some(t1 / tp);
            }
            report.rows.push(row);
        }
    }
    if let Some(target) = spec.matched_dof {
        for d in [2, 3] {
            let n = matched_cells(spec, d, order, target);
            let row = base_row(spec, "dim-compare", d, order, rk, n, spec.workers[0]);
            let (row, _) = scale_row(spec, "dim-compare", build_case(spec, d, order, n, rk), spec.workers[0], row);
            report.rows.push(row);
        }
    }
    Ok(report)
}

/// Cells per axis whose dof in `dim` dimensions is closest to `target`.
pub fn matched_cells(spec: &ExperimentSpec, dim: usize, order: usize, target: usize) -> usize {
    let n_var = match spec.equation {
        Equation::Advection => 1,
        Equation::Euler => dim + 1,
    };
    let per_cell = (order.pow(dim as u32) * n_var) as f64;
    let n = (target as f64 / per_cell).powf(1.0 / dim as f64);
    let lo = (n.floor() as usize).max(1);
    let dof = |c: usize| (c.pow(dim as u32) as f64 * per_cell - target as f64).abs();
    if dof(lo + 1) < dof(lo) {
        lo + 1
    } else {
        lo
    }
}

fn build_rect_case(spec: &ExperimentSpec, cells: &[usize], order: usize, rk: RkName) -> Result<Case, BenchError> {
    let mut case = build_case(spec, cells.len(), order, 1, rk)?;
    let setup = |e: &dyn std::fmt::Display| BenchError::Setup(e.to_string());
    let dim = cells.len();
    let mesh = Mesh::new(dim, cells, &vec![1.0; dim], order).map_err(|e| setup(&e))?;
    case.initial = match spec.equation {
        Equation::Advection => init_multisine(
            &mesh,
            &case.basis,
            &case.model,
            &multisine_amplitudes(spec.nk, spec.seed.unwrap_or_default()),
        ),
        Equation::Euler => init_euler_subsonic(&mesh, &case.basis, &case.model),
    }
    .map_err(|e| setup(&e))?;
    case.config = SolverConfig::new(mesh.clone(), case.model, rk.scheme())
        .with_cfl(spec.cfl)
        .with_end_time(spec.t_end);
    case.mesh = mesh;
    Ok(case)
}

/// Energy estimates from device power ratings: per-dof energy of the
/// fixed-step loop and whole-simulation energy of runs to `t_end`. Each
/// size is measured once and priced for every configured rating.
pub fn run_energy(spec: &ExperimentSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let mut report = BenchReport::new(spec);
    let rk = spec.rk[0];
    let workers = spec.workers[0];
    if spec.power_watts.is_empty() {
        let mut row = base_row(spec, "warning", spec.dim, spec.orders[0], rk, 0, workers);
        row.cells.clear();
        row.status = STATUS_WARNING.into();
        row.note = "no power rating configured; energy columns omitted".into();
        report.rows.push(row);
    }
    let priced = |row: &ReportRow| -> Vec<ReportRow> {
        if spec.power_watts.is_empty() || !row.is_ok() {
            return vec![row.clone()];
        }
        spec.power_watts
            .iter()
            .map(|&p| {
                let mut r = row.clone();
                let wall = r.wall_time.unwrap_or(0.0);
                let energy = p * wall;
                r.power_watts = Some(p);
                r.energy_j = Some(energy);
                r.energy_per_dof = r.dof.map(|d| energy / d as f64);
                r
            })
            .collect()
    };
    for &order in &spec.orders {
        for &n in &spec.cells {
            let case = build_case(spec, spec.dim, order, n, rk);
            let mut fixed = base_row(spec, "fixed-steps", spec.dim, order, rk, n, workers);
            let mut whole = base_row(spec, "to-end-time", spec.dim, order, rk, n, workers);
            whole.t_end = Some(spec.t_end);
            match &case {
                Err(e) => {
                    fail(&mut fixed, e);
                    fail(&mut whole, e);
                }
                Ok(case) => {
                    match timed_steps(spec, case, workers) {
                        Ok(stats) => fill_stats(&mut fixed, &stats, case.dof(), workers),
                        Err(e) => fail(&mut fixed, e),
                    }
                    match run_to_end(spec, case, workers) {
                        Ok(run) => fill_stats(&mut whole, &run.stats(), case.dof(), workers),
                        Err(e) => fail(&mut whole, e),
                    }
                }
            }
            report.rows.extend(priced(&fixed));
            report.rows.extend(priced(&whole));
        }
    }
    Ok(report)
}

/// One run to `t_end` with the first order, cell count and worker count;
/// optionally dumps the final field.
pub fn simulate(spec: &ExperimentSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let mut report = BenchReport::new(spec);
    let (order, n, workers, rk) = (spec.orders[0], spec.cells[0], spec.workers[0], spec.rk[0]);
    let mut row = base_row(spec, "to-end-time", spec.dim, order, rk, n, workers);
    row.t_end = Some(spec.t_end);
    let case = build_case(spec, spec.dim, order, n, rk)?;
    match run_to_end(spec, &case, workers) {
        Err(e) => fail(&mut row, e),
        Ok(run) => {
            let stats = run.stats();
            fill_stats(&mut row, &stats, case.dof(), workers);
            if spec.equation == Equation::Advection {
                row.l2_error = advection_error(spec, &case, &run.field, stats.final_time).ok();
            }
            if let Some(path) = &spec.dump {
                if let Err(e) = write_field_dump(path, &case.mesh, &run.field) {
                    fail(&mut row, e);
                } else {
                    row.note = format!("field written to {}", path.display());
                }
            }
        }
    }
    report.rows.push(row);
    Ok(report)
}

/// Dispatches on `spec.experiment`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<BenchReport, BenchError> {
    match spec.experiment {
        Experiment::Converge => run_converge(spec),
        Experiment::Cost => run_cost(spec),
        Experiment::Fit => run_fit(spec),
        Experiment::Timing => run_timing(spec),
        Experiment::Scale => run_scale(spec),
        Experiment::Energy => run_energy(spec),
        Experiment::Simulate => simulate(spec),
    }
}
