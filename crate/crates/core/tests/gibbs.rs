mod common;

use std::ops::ControlFlow;

use ndarray::{Array2, Array3};
use phasefd::evaluation::{self, gibbs_percentage, SyntheticSpec};
use phasefd::gibbs::{apply_keep_sets, presence, select_all, RoundingProblem};
use phasefd::solver::Solver;
use phasefd::{solve, solve_with_progress, FreezeSpec, GibbsMode, Progress, ProgressKind, ResamplePlan, SolverConfig};

fn system(k: usize, seed: u64) -> (phasefd::Instance, evaluation::GroundTruth) {
    let spec = SyntheticSpec {
        k,
        grid_per_edge: 8,
        n_q: 120,
        alloy_max: 1.02,
        seed,
        ..SyntheticSpec::default()
    };
    evaluation::generate(&spec).unwrap()
}

fn relaxed_solver(instance: &phasefd::Instance, config: SolverConfig) -> Solver {
    let plan = ResamplePlan::new(instance.q(), config.oversample).unwrap();
    let a = plan.to_log_columns(&instance.intensity_matrix()).unwrap();
    let mut solver = Solver::new(a, config, FreezeSpec::default()).unwrap();
    solver.run(&mut ()).unwrap();
    solver
}

#[test]
fn enforcement_reaches_full_satisfaction() {
    for (k, seed) in [(4, 1), (5, 2), (6, 3)] {
        let (instance, _) = system(k, seed);
        for mode in [GibbsMode::Greedy, GibbsMode::Exact] {
            let config = SolverConfig::new(k).with_m(4).with_seed(seed).with_gibbs(mode, 3).with_max_iters(400);
            let solution = solve(&instance, &config, &FreezeSpec::default()).unwrap();
            assert_eq!(gibbs_percentage(&solution, 3, 0.01), 1.0, "k={k} mode={mode:?}");
            assert_eq!(gibbs_percentage(&solution, 3, 0.0), 1.0);
            assert_eq!(solution.segments.len(), 2);
        }
    }
}

#[test]
fn exact_rounding_never_loses_to_greedy() {
    for (k, seed) in [(4, 11), (5, 12), (6, 13)] {
        let (instance, _) = system(k, seed);
        let solver = relaxed_solver(&instance, SolverConfig::new(k).with_m(3).with_seed(seed).with_max_iters(300));
        let problem = RoundingProblem::from_solver(&solver);
        for j in 0..instance.n_samples() {
            let exact = problem.keep_set(j, 3, GibbsMode::Exact, &[]).unwrap();
            let greedy = problem.keep_set(j, 3, GibbsMode::Greedy, &[]).unwrap();
            let le = problem.subset_loss(j, &exact).unwrap();
            let lg = problem.subset_loss(j, &greedy).unwrap();
            assert!(le <= lg, "sample {j}: exact {le} greedy {lg}");
            let oracle = phasefd_oracles::subsets(k, exact.len())
                .into_iter()
                .map(|s| phasefd_oracles::sample_subset_loss(solver.data(), solver.state().w(), solver.state().h(), j, &s, 1e-12))
                .fold(f64::INFINITY, f64::min);
            let ours = phasefd_oracles::sample_subset_loss(solver.data(), solver.state().w(), solver.state().h(), j, &exact, 1e-12);
            assert!(ours <= oracle * (1.0 + 1e-12) + 1e-300, "sample {j}: {ours} vs {oracle}");
        }
    }
}

#[test]
fn refinement_does_not_raise_rounded_loss() {
    let (instance, _) = system(5, 4);
    let config = SolverConfig::new(5).with_m(3).with_seed(4).with_gibbs(GibbsMode::Exact, 3).with_max_iters(300);
    let mut rounded = None;
    let mut after = Vec::new();
    let mut zeros: Option<Array3<bool>> = None;
    let mut revived = false;
    let mut sink = |p: &Progress<'_>| {
        match p.kind {
            ProgressKind::Rounded => {
                rounded = Some(p.loss);
                zeros = Some(p.h.mapv(|v| v == 0.0));
            }
            ProgressKind::Iteration if rounded.is_some() => {
                after.push(p.loss);
                if let Some(z) = &zeros {
                    revived |= z.iter().zip(p.h.iter()).any(|(&was, &v)| was && v != 0.0);
                }
            }
            _ => {}
        }
        ControlFlow::Continue(())
    };
    let solution = solve_with_progress(&instance, &config, &FreezeSpec::default(), &mut sink).unwrap();
    let rounded = rounded.expect("rounding event");
    assert!(!after.is_empty());
    assert!(!revived);
    let mut prev = rounded;
    for l in after {
        assert!(l <= prev + 1e-10 * prev.max(1.0));
        prev = l;
    }
    assert!(solution.final_loss() <= rounded);
    let trace = solution.trace_segments();
    assert_eq!(trace.len(), 2);
    assert_eq!(trace[1][0], rounded);
}

#[test]
fn satisfied_solution_is_left_alone() {
    let (instance, _) = system(3, 5);
    let config = SolverConfig::new(3).with_m(3).with_seed(5).with_max_iters(200);
    let solver = relaxed_solver(&instance, config);
    let before = solver.state().h().clone();
    for mode in [GibbsMode::Greedy, GibbsMode::Exact] {
        let keep = select_all(&solver, mode).unwrap();
        let mut h = before.clone();
        apply_keep_sets(&mut h, &keep, None);
        assert_eq!(h, before);
    }
    let p = presence(solver.state().w(), solver.state().h(), 0.01);
    assert_eq!(evaluation::gibbs_fraction(&p, 3), 1.0);
}

#[test]
fn pinned_activation_survives_rounding() {
    let (instance, _) = system(5, 6);
    let j = instance.n_samples() / 2;
    let (m, k) = (2, 5);
    let mut freeze = FreezeSpec::default();
    for phase in 0..4 {
        freeze.pin_h((m, k, instance.n_samples()), (0, phase, j), 0.25);
    }
    let config = SolverConfig::new(k).with_m(m).with_seed(6).with_gibbs(GibbsMode::Exact, 3).with_max_iters(200);
    let solution = solve(&instance, &config, &freeze).unwrap();
    for phase in 0..4 {
        assert_eq!(solution.h[[0, phase, j]], 0.25);
    }
    // every other sample obeys the rule
    let p = phasefd::gibbs::solution_presence(&solution, 0.0);
    for (jj, c) in p.counts().into_iter().enumerate() {
        if jj != j {
            assert!(c <= 3, "sample {jj} has {c} phases");
        }
    }
}

#[test]
fn exact_refuses_large_k() {
    let a = Array2::ones((40, 3));
    let config = SolverConfig::new(17).with_gibbs(GibbsMode::Exact, 3);
    assert!(Solver::new(a, config, FreezeSpec::default()).is_err());
}
