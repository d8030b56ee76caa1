mod common;

use std::ops::ControlFlow;

use ndarray::{s, Array2, Array3, Axis};
use phasefd::solver::{normalize_w, Solver};
use phasefd::{reconstruct, solve, solve_with_progress, FreezeSpec, Progress, ProgressKind, SolverConfig};
use proptest::prelude::*;
use rand::Rng;

/// Runs a solve recording every iteration's loss and checking pins,
/// non-negativity and zero absorption as it goes.
fn checked_run(a: &Array2<f64>, config: &SolverConfig, freeze: &FreezeSpec) -> Result<Vec<f64>, String> {
    let instance = common::instance_from_matrix(a);
    let mut losses = Vec::new();
    let mut failure: Option<String> = None;
    let mut zero_w: Option<Array2<bool>> = None;
    let mut zero_h: Option<Array3<bool>> = None;
    let mut sink = |p: &Progress<'_>| {
        if p.kind != ProgressKind::Iteration {
            return ControlFlow::Continue(());
        }
        losses.push(p.loss);
        let check = || -> Result<(), String> {
            if p.w.iter().chain(p.h.iter()).any(|&v| !(v >= 0.0)) {
                return Err(format!("negative entry at iteration {}", p.iteration));
            }
            if let (Some(mask), Some(values)) = (&freeze.w_mask, &freeze.w_values) {
                for ((idx, &f), &v) in mask.indexed_iter().zip(values.iter()) {
                    if f && p.w[idx].to_bits() != v.to_bits() {
                        return Err(format!("W pin {idx:?} moved at iteration {}", p.iteration));
                    }
                }
            }
            if let (Some(mask), Some(values)) = (&freeze.h_mask, &freeze.h_values) {
                for ((idx, &f), &v) in mask.indexed_iter().zip(values.iter()) {
                    if f && p.h[idx].to_bits() != v.to_bits() {
                        return Err(format!("H pin {idx:?} moved at iteration {}", p.iteration));
                    }
                }
            }
            if let Some(z) = &zero_w {
                if z.indexed_iter().any(|(idx, &was)| was && p.w[idx] != 0.0) {
                    return Err("W zero revived".into());
                }
            }
            if let Some(z) = &zero_h {
                if z.indexed_iter().any(|(idx, &was)| was && p.h[idx] != 0.0) {
                    return Err("H zero revived".into());
                }
            }
            Ok(())
        };
        if let Err(e) = check() {
            failure.get_or_insert(e);
        }
        zero_w = Some(p.w.mapv(|v| v == 0.0));
        zero_h = Some(p.h.mapv(|v| v == 0.0));
        ControlFlow::Continue(())
    };
    solve_with_progress(&instance, config, freeze, &mut sink).map_err(|e| e.to_string())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(losses),
    }
}

fn random_freeze(n: usize, k: usize, m: usize, j: usize, seed: u64) -> FreezeSpec {
    let mut rng = common::rng(seed);
    let mut spec = FreezeSpec::default();
    let pick = |rng: &mut rand_chacha::ChaCha8Rng| {
        let frozen = rng.random_bool(0.2);
        let value = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) };
        (frozen, value)
    };
    if rng.random_bool(0.7) {
        let draws: Vec<(bool, f64)> = (0..n * k).map(|_| pick(&mut rng)).collect();
        spec.w_mask = Some(Array2::from_shape_fn((n, k), |(r, c)| draws[r * k + c].0));
        spec.w_values = Some(Array2::from_shape_fn((n, k), |(r, c)| draws[r * k + c].1));
    }
    if rng.random_bool(0.7) {
        let draws: Vec<(bool, f64)> = (0..m * k * j).map(|_| pick(&mut rng)).collect();
        let at = |(a, b, c): (usize, usize, usize)| draws[(a * k + b) * j + c];
        spec.h_mask = Some(Array3::from_shape_fn((m, k, j), |i| at(i).0));
        spec.h_values = Some(Array3::from_shape_fn((m, k, j), |i| at(i).1));
    }
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loss_never_increases_with_pins(
        k in 2usize..=6,
        m_choice in 0usize..3,
        j in 3usize..10,
        data_seed in any::<u64>(),
        mask_seed in any::<u64>(),
        solver_seed in any::<u64>(),
    ) {
        let m = [1, 4, 10][m_choice];
        let n = 40;
        let mut rng = common::rng(data_seed);
        let a = common::random_matrix((n, j), &mut rng);
        let freeze = random_freeze(n, k, m, j, mask_seed);
        let config = SolverConfig::new(k).with_m(m).with_seed(solver_seed).with_max_iters(40).with_conv_gap(1e-300);
        let losses = checked_run(&a, &config, &freeze).map_err(TestCaseError::fail)?;
        prop_assert_eq!(losses.len(), 41);
        for w in losses.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10 * w[0].max(1.0), "{} -> {}", w[0], w[1]);
        }
        prop_assert!(losses.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn normalization_keeps_reconstruction(n in 4usize..20, k in 1usize..5, m in 1usize..4, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let mut w = common::random_matrix((n, k), &mut rng) * 5.0;
        let mut h = common::random_tensor((m, k, 3), &mut rng);
        let before = reconstruct(&w, &h).unwrap();
        normalize_w(&mut w, &mut h, &FreezeSpec::default());
        let after = reconstruct(&w, &h).unwrap();
        for (x, y) in before.iter().zip(after.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
        for col in w.axis_iter(Axis(1)) {
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn single_shift_equals_plain_nmf() {
    let mut rng = common::rng(21);
    let (n, k, j) = (50, 3, 12);
    let a = common::peaky_basis(n, k, &mut rng).dot(&common::random_matrix((k, j), &mut rng)) + 0.01;
    let w0 = common::random_matrix((n, k), &mut rng) + 0.05;
    let h0 = common::random_matrix((k, j), &mut rng) + 0.05;
    let iterations = 60;
    let (oracle_losses, oracle_iterates) = phasefd_oracles::plain_kl_nmf(&a, &w0, &h0, iterations, 1e-12);

    let freeze = FreezeSpec {
        w_init: Some(w0.clone()),
        h_init: Some(h0.clone().insert_axis(Axis(0))),
        ..FreezeSpec::default()
    };
    let config = SolverConfig::new(k).with_max_iters(iterations).with_conv_gap(1e-300);
    let mut iterates = Vec::new();
    let mut sink = |p: &Progress<'_>| {
        if p.kind == ProgressKind::Iteration && p.iteration > 0 {
            iterates.push((p.w.clone(), p.h.index_axis(Axis(0), 0).to_owned()));
        }
        ControlFlow::Continue(())
    };
    let instance = common::instance_from_matrix(&a);
    let solution = solve_with_progress(&instance, &config, &freeze, &mut sink).unwrap();
    assert_eq!(solution.loss_trace.len(), oracle_losses.len());
    assert!(common::max_rel_diff(&solution.loss_trace, &oracle_losses) <= 1e-12);
    for ((w, h), (ow, oh)) in iterates.iter().zip(&oracle_iterates) {
        assert!(common::max_rel_diff(w.as_slice().unwrap(), ow.as_slice().unwrap()) <= 1e-12);
        assert!(common::max_rel_diff(h.as_slice().unwrap(), oh.as_slice().unwrap()) <= 1e-12);
    }
}

#[test]
fn recovers_forward_generated_library() {
    let mut rng = common::rng(7);
    let (n, k, m, j) = (80, 2, 4, 24);
    let w_true = common::peaky_basis(n, k, &mut rng);
    let h_true = Array3::from_shape_simple_fn((m, k, j), || {
        if rng.random_bool(0.4) { rng.random_range(0.2..1.0) } else { 0.0 }
    });
    let a = reconstruct(&w_true, &h_true).unwrap();
    let instance = common::instance_from_matrix(&a);
    let config = SolverConfig::new(k).with_m(m).with_seed(7).with_conv_gap(1e-6);
    let solution = solve(&instance, &config, &FreezeSpec::default()).unwrap();
    let residual = (&a - &solution.r).mapv(|v| v * v).sum().sqrt() / a.mapv(|v| v * v).sum().sqrt();
    assert!(residual < 1e-2, "normalized residual {residual}");
    // regression bound: 6.83e-3 when recorded
    assert!(residual < 7e-3, "normalized residual {residual}");
}

#[test]
fn identical_inputs_give_identical_solutions() {
    let mut rng = common::rng(5);
    let a = common::random_matrix((30, 8), &mut rng);
    let instance = common::instance_from_matrix(&a);
    let config = SolverConfig::new(3).with_m(4).with_seed(17).with_sparsity(0.1).with_max_iters(300);
    let freeze = random_freeze(30, 3, 4, 8, 3);
    let x = solve(&instance, &config, &freeze).unwrap();
    let y = solve(&instance, &config, &freeze).unwrap();
    assert_eq!(x, y);
    let bits = |s: &phasefd::Solution| s.w.iter().chain(s.h.iter()).map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&x), bits(&y));
}

#[test]
fn solution_invariants_hold() {
    let mut rng = common::rng(8);
    let a = common::random_matrix((40, 10), &mut rng);
    let instance = common::instance_from_matrix(&a);
    let config = SolverConfig::new(4).with_m(3).with_seed(2);
    let solution = solve(&instance, &config, &FreezeSpec::default()).unwrap();
    assert!(solution.w.iter().chain(solution.h.iter()).chain(solution.r.iter()).all(|&v| v >= 0.0));
    for w in solution.loss_trace.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-10));
    }
    let r = phasefd_oracles::reconstruct(&solution.w, &solution.h);
    assert!(common::max_rel_diff(r.as_slice().unwrap(), solution.r.as_slice().unwrap()) <= 1e-9);
    assert_eq!(solution.config, config);
    assert_eq!(solution.config.conv_gap, 2e-5);
    assert_eq!(solution.shift_summary.shift.dim(), (4, 10));
    assert!(solution.converged);
    assert_eq!(solution.iterations + 1, solution.loss_trace.len());
}

#[test]
fn convergence_criterion_uses_first_iteration_loss() {
    let mut rng = common::rng(12);
    let a = common::random_matrix((30, 6), &mut rng);
    let instance = common::instance_from_matrix(&a);
    let config = SolverConfig::new(2).with_m(2).with_seed(4);
    let s = solve(&instance, &config, &FreezeSpec::default()).unwrap();
    let t = &s.loss_trace;
    let l1 = t[1];
    let gap = |i: usize| (t[i] - t[i - 1]).abs() / l1;
    let last = t.len() - 1;
    assert!(gap(last) < config.conv_gap);
    assert!((1..last).all(|i| gap(i) >= config.conv_gap));
}

#[test]
fn sparsity_shrinks_activations() {
    let mut rng = common::rng(31);
    let (n, k, j) = (60, 3, 20);
    let a = common::peaky_basis(n, k, &mut rng).dot(&common::random_matrix((k, j), &mut rng));
    let instance = common::instance_from_matrix(&a);
    let dense = solve(&instance, &SolverConfig::new(4).with_m(2).with_seed(1), &FreezeSpec::default()).unwrap();
    let sparse = solve(
        &instance,
        &SolverConfig::new(4).with_m(2).with_seed(1).with_sparsity(0.35),
        &FreezeSpec::default(),
    )
    .unwrap();
    let small = |s: &phasefd::Solution| {
        let total: f64 = s.h.iter().sum();
        s.h.iter().filter(|&&v| v < 1e-3 * total / s.h.len() as f64).count()
    };
    assert!(small(&sparse) > small(&dense), "{} vs {}", small(&sparse), small(&dense));
    // unpinned basis columns are unit norm after the last normalization step
    for col in sparse.w.axis_iter(Axis(1)) {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.0);
    }
}

#[test]
fn frozen_column_and_initial_values() {
    let mut rng = common::rng(40);
    let (n, k, j) = (50, 3, 10);
    let basis = common::peaky_basis(n, k, &mut rng);
    let a = basis.dot(&common::random_matrix((k, j), &mut rng));
    let instance = common::instance_from_matrix(&a);
    let mut freeze = FreezeSpec::default();
    let pinned: Vec<f64> = basis.column(1).to_vec();
    freeze.pin_w_column(k, 1, &pinned);
    let config = SolverConfig::new(k).with_seed(3).with_sparsity(0.2);
    let solution = solve(&instance, &config, &freeze).unwrap();
    for (row, v) in pinned.iter().enumerate() {
        assert_eq!(solution.w[[row, 1]].to_bits(), v.to_bits());
    }

    // an initial point is used as given: zero entries in it stay zero
    let mut w0 = common::random_matrix((n, k), &mut rng);
    w0.slice_mut(s![..10, 0]).fill(0.0);
    let freeze = FreezeSpec {
        w_init: Some(w0),
        ..FreezeSpec::default()
    };
    let solution = solve(&instance, &SolverConfig::new(k).with_seed(3), &freeze).unwrap();
    assert!(solution.w.slice(s![..10, 0]).iter().all(|&v| v == 0.0));
}

#[test]
fn precondition_errors() {
    let a = Array2::ones((5, 3));
    let instance = common::instance_from_matrix(&a);
    assert!(matches!(
        solve(&instance, &SolverConfig::new(6), &FreezeSpec::default()),
        Err(phasefd::SolveError::TooManyBases { .. })
    ));
    let mut freeze = FreezeSpec::default();
    freeze.pin_w_column(2, 0, &[1.0; 4]);
    assert!(matches!(
        solve(&instance, &SolverConfig::new(2), &freeze),
        Err(phasefd::SolveError::Model(_))
    ));
}

#[test]
fn cancellation_from_sink() {
    let mut rng = common::rng(1);
    let a = common::random_matrix((30, 5), &mut rng);
    let instance = common::instance_from_matrix(&a);
    let config = SolverConfig::new(2).with_conv_gap(1e-300).with_max_iters(1000);
    let mut sink = |p: &Progress<'_>| {
        if p.iteration >= 5 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }
    };
    match solve_with_progress(&instance, &config, &FreezeSpec::default(), &mut sink) {
        Err(phasefd::SolveError::Cancelled { iterations, loss_trace }) => {
            assert_eq!(iterations, 5);
            assert_eq!(loss_trace.len(), 6);
        }
        other => panic!("expected cancellation, got {other:?}"),
    }
}

#[test]
fn driving_the_solver_directly() {
    let mut rng = common::rng(2);
    let a = common::random_matrix((20, 4), &mut rng);
    let mut solver = Solver::new(a, SolverConfig::new(2).with_m(2), FreezeSpec::default()).unwrap();
    let start = solver.loss();
    let after = solver.step();
    assert!(after <= start);
    assert_eq!(solver.state().iteration(), 1);
}
