use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndg_bench::{emit_report, run_experiment, BenchError, Equation, Experiment, ExperimentSpec, Format, RkName, TransportName};

#[derive(Parser)]
#[command(name = "ndg-bench", version, about = "Nodal DG solver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// L2 error sweep with fitted convergence slopes
    Converge(Common),
    /// Error against wall time and dof
    Cost(Common),
    /// Dof needed for target errors and the fitted constant c
    Fit(Common),
    /// Fixed-step timing, time per dof
    Timing(Common),
    /// Strong and weak scaling over worker counts
    Scale(Common),
    /// Energy estimates from device power ratings
    Energy(Common),
    /// Single run with optional field dump
    Simulate(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    equation: Option<Equation>,
    #[arg(long)]
    dim: Option<usize>,
    /// Orders (nodes per cell and axis), comma separated
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<usize>>,
    #[arg(long, value_enum, value_delimiter = ',')]
    rk: Option<Vec<RkName>>,
    /// Cells per axis, comma separated
    #[arg(long, value_delimiter = ',')]
    cells: Option<Vec<usize>>,
    #[arg(long)]
    nk: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cfl: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    workers: Option<Vec<usize>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    power_watts: Option<Vec<f64>>,
    /// Per-worker cells per axis for weak scaling
    #[arg(long)]
    weak_cells: Option<usize>,
    /// Dof target for the 2D-vs-3D comparison
    #[arg(long)]
    matched_dof: Option<usize>,
    #[arg(long, value_enum)]
    transport: Option<TransportName>,
    /// Field dump path (simulate)
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Report path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl Common {
    fn spec(&self, experiment: Experiment) -> Result<ExperimentSpec, BenchError> {
        let mut s = match &self.config {
            Some(path) => ExperimentSpec::from_file(path)?,
            None => ExperimentSpec::default(),
        };
        s.experiment = experiment;
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = &self.$field { s.$target = v.clone(); })*
            };
        }
        set!(equation => equation, dim => dim, order => orders, rk => rk, cells => cells, nk => nk,
             cfl => cfl, t_end => t_end, workers => workers, steps => steps, repeats => repeats,
             power_watts => power_watts, transport => transport);
        if self.seed.is_some() {
            s.seed = self.seed;
        }
        if self.weak_cells.is_some() {
            s.weak_cells = self.weak_cells;
        }
        if self.matched_dof.is_some() {
            s.matched_dof = self.matched_dof;
        }
        if self.dump.is_some() {
            s.dump = self.dump.clone();
        }
        s.validate()?;
        Ok(s)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::Converge(a) => (Experiment::Converge, a),
        Command::Cost(a) => (Experiment::Cost, a),
        Command::Fit(a) => (Experiment::Fit, a),
        Command::Timing(a) => (Experiment::Timing, a),
        Command::Scale(a) => (Experiment::Scale, a),
        Command::Energy(a) => (Experiment::Energy, a),
        Command::Simulate(a) => (Experiment::Simulate, a),
    };
    let spec = match args.spec(experiment) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run_experiment(&spec) {
        Ok(r) => r,
        Err(BenchError::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = emit_report(&report, args.format, args.out.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    for row in report.rows.iter().filter(|r| r.is_failed()) {
        eprintln!("failed row: order {} cells {}: {}", row.order, row.cells, row.note);
    }
    if report.any_failed() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
