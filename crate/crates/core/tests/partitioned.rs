use ndg_core::grid::{init_euler_subsonic, init_multisine, multisine_amplitudes};
use ndg_core::partition::{run_partitioned, RunMode, TransportKind};
use ndg_core::solver::{advance, run_steps};
use ndg_core::{EquationModel, Mesh, NodalBasis, RkScheme, SolverConfig, StateField};

fn advection_case(dim: usize, cells: &[usize], order: usize) -> (SolverConfig, StateField) {
    let lengths = vec![1.0; dim];
    let mesh = Mesh::new(dim, cells, &lengths, order).unwrap();
    let basis = NodalBasis::new(order).unwrap();
    let velocity = [1.0, 0.5, -0.25];
    let model = EquationModel::advection(dim, &velocity[..dim]).unwrap();
    let u0 = init_multisine(&mesh, &basis, &model, &multisine_amplitudes(4, 11)).unwrap();
    let config = SolverConfig::new(mesh, model, RkScheme::Rk4).with_end_time(0.05);
    (config, u0)
}

fn euler_case(dim: usize, cells: &[usize], order: usize) -> (SolverConfig, StateField) {
    let lengths = vec![1.0; dim];
    let mesh = Mesh::new(dim, cells, &lengths, order).unwrap();
    let basis = NodalBasis::new(order).unwrap();
    let model = EquationModel::isothermal_euler(dim, 1.0).unwrap();
    let u0 = init_euler_subsonic(&mesh, &basis, &model).unwrap();
    let config = SolverConfig::new(mesh, model, RkScheme::Rk3).with_end_time(0.02);
    (config, u0)
}

fn assert_bit_identical(a: &StateField, b: &StateField) {
    assert!(a.same_shape(b));
    for (i, (x, y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        assert_eq!(x.to_bits(), y.to_bits(), "value {i}: {x} vs {y}");
    }
}

#[test]
fn single_worker_matches_serial_bitwise() {
    let (config, u0) = advection_case(2, &[6, 5], 4);
    let (serial, stats) = advance(&config, u0.clone()).unwrap();
    let run = run_partitioned(&config, &u0, 1, RunMode::ToEndTime, TransportKind::InProcess).unwrap();
    assert_bit_identical(&serial, &run.field);
    assert_eq!(stats.steps, run.steps());
}

#[test]
fn partitioned_advection_matches_serial_bitwise() {
    for (dim, cells, workers) in [
        (1, vec![12], 3),
        (2, vec![8, 6], 4),
        (2, vec![7, 5], 2),
        (2, vec![9, 4], 6),
        (3, vec![4, 4, 3], 4),
        (3, vec![4, 3, 2], 8),
    ] {
        let (config, u0) = advection_case(dim, &cells, 3);
        let (serial, _) = advance(&config, u0.clone()).unwrap();
        let run = run_partitioned(&config, &u0, workers, RunMode::ToEndTime, TransportKind::InProcess).unwrap();
        assert_eq!(run.decomposition.worker_count(), workers);
        assert_bit_identical(&serial, &run.field);
    }
}

#[test]
fn partitioned_euler_matches_serial_bitwise() {
    for (dim, cells, workers) in [(2, vec![8, 8], 4), (3, vec![4, 4, 4], 2)] {
        let (config, u0) = euler_case(dim, &cells, 4);
        let (serial, _) = advance(&config, u0.clone()).unwrap();
        let run = run_partitioned(&config, &u0, workers, RunMode::ToEndTime, TransportKind::InProcess).unwrap();
        assert_bit_identical(&serial, &run.field);
    }
}

#[test]
fn tcp_transport_matches_serial_bitwise() {
    let (config, u0) = advection_case(2, &[8, 8], 3);
    let (serial, _) = advance(&config, u0.clone()).unwrap();
    let run = run_partitioned(&config, &u0, 4, RunMode::ToEndTime, TransportKind::Tcp).unwrap();
    assert_bit_identical(&serial, &run.field);
}

#[test]
fn fixed_step_runs_agree() {
    let (config, u0) = euler_case(2, &[6, 6], 3);
    let (serial, stats) = run_steps(&config, u0.clone(), 5, 1).unwrap();
    let mode = RunMode::FixedSteps { steps: 5, warmup: 1 };
    let run = run_partitioned(&config, &u0, 3, mode, TransportKind::InProcess).unwrap();
    assert_bit_identical(&serial, &run.field);
    assert_eq!(stats.steps, 5);
    assert_eq!(run.workers.len(), 3);
    for w in &run.workers {
        assert_eq!(w.stats.steps, 5);
        assert!(w.compute_time() <= w.stats.wall_time);
    }
}

#[test]
fn worker_failure_is_reported() {
    let (config, mut u0) = euler_case(2, &[4, 4], 3);
    // A negative density in the block of rank 3 (upper-right 2x2 cells).
    u0.set([3, 3, 0], [1, 1, 0], 0, -1.0);
    let err = run_partitioned(&config, &u0, 4, RunMode::ToEndTime, TransportKind::InProcess).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("worker 3"), "{text}");
    assert!(text.contains("density"), "{text}");
}
