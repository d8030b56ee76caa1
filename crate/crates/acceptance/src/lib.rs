//! Acceptance criteria for phasefd. Each check returns an [`Outcome`]; the
//! `acceptance` test target runs them all and prints one line per criterion.

use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Axis};
use phasefd::evaluation::{self, SyntheticSpec};
use phasefd::gibbs::RoundingProblem;
use phasefd::{
    reconstruct, solve, solve_with_progress, FreezeSpec, GibbsMode, Instance, Progress, ProgressKind, QGrid,
    ResamplePlan, SolverConfig, Stage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(name: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        Outcome { name, pass, detail: detail.into() }
    }

    fn error(name: &'static str, e: impl std::fmt::Display) -> Self {
        Outcome::new(name, false, format!("error: {e}"))
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn rel_diff(x: f64, y: f64) -> f64 {
    if x == y {
        0.0
    } else {
        (x - y).abs() / x.abs().max(y.abs())
    }
}

fn random_freeze(rng: &mut ChaCha8Rng, instance: &Instance, n_log: usize, k: usize, m: usize) -> FreezeSpec {
    let j = instance.n_samples();
    let mut spec = FreezeSpec::default();
    let density = rng.random_range(0.05..0.3);
    let value = |rng: &mut ChaCha8Rng| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) };
    if rng.random_bool(0.6) {
        let mask = Array2::from_shape_simple_fn((n_log, k), || rng.random_bool(density));
        let values = Array2::from_shape_simple_fn((n_log, k), || value(rng));
        spec.w_mask = Some(mask);
        spec.w_values = Some(values);
    }
    if rng.random_bool(0.3) {
        // a whole basis column pinned to a sample's pattern
        let plan = ResamplePlan::new(instance.q(), 1.0).expect("valid grid");
        let sample = rng.random_range(0..j);
        let pattern = plan.to_log(&instance.samples()[sample].intensity).expect("grid length");
        spec.pin_w_column(k, rng.random_range(0..k), &pattern);
    }
    if rng.random_bool(0.6) {
        let mask = Array3::from_shape_simple_fn((m, k, j), || rng.random_bool(density));
        let values = Array3::from_shape_simple_fn((m, k, j), || value(rng));
        spec.h_mask = Some(mask);
        spec.h_values = Some(values);
    }
    spec
}

#[derive(Default)]
struct SuiteStats {
    runs: usize,
    iterations: usize,
    worst_rise: f64,
    monotone_failures: Vec<String>,
    pin_failures: Vec<String>,
    pinned_entries: usize,
}

/// 50 randomized (instance, seed, freeze) triples; returns the monotonicity
/// and freeze-fidelity outcomes.
pub fn monotonicity_and_freeze() -> (Outcome, Outcome) {
    const MONO: &str = "monotonicity";
    const FREEZE: &str = "freeze fidelity";
    let started = Instant::now();
    let mut stats = SuiteStats::default();
    for run in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0000 + run);
        let k = 2 + (run as usize % 5);
        let m = [1, 4, 10][run as usize % 3];
        let spec = SyntheticSpec {
            k: 3 + (run as usize % 3),
            grid_per_edge: 6,
            n_q: 80,
            alloy_max: rng.random_range(1.0..1.05),
            noise_sigma: rng.random_range(0.0..0.02),
            seed: run,
            ..SyntheticSpec::default()
        };
        let (instance, _) = match evaluation::generate(&spec) {
            Ok(x) => x,
            Err(e) => return (Outcome::error(MONO, &e), Outcome::error(FREEZE, e)),
        };
        let freeze = random_freeze(&mut rng, &instance, 80, k, m);
        stats.pinned_entries += freeze.w_mask.iter().flatten().filter(|&&b| b).count()
            + freeze.h_mask.iter().flatten().filter(|&&b| b).count();
        let config = SolverConfig::new(k)
            .with_m(m)
            .with_seed(rng.random())
            .with_max_iters(400);

        let mut prev: Option<f64> = None;
        let mut sink = |p: &Progress<'_>| {
            if p.kind != ProgressKind::Iteration {
                return ControlFlow::Continue(());
            }
            if let Some(l) = prev {
                let rise = (p.loss - l) / l.max(1.0);
                stats.worst_rise = stats.worst_rise.max(rise);
                if p.loss > l + 1e-10 * l.max(1.0) {
                    stats.monotone_failures.push(format!("run {run} iteration {}: {l} -> {}", p.iteration, p.loss));
                }
            }
            prev = Some(p.loss);
            let w_ok = match (&freeze.w_mask, &freeze.w_values) {
                (Some(mask), Some(values)) => mask
                    .indexed_iter()
                    .all(|(idx, &f)| !f || p.w[idx].to_bits() == values[idx].to_bits()),
                _ => true,
            };
            let h_ok = match (&freeze.h_mask, &freeze.h_values) {
                (Some(mask), Some(values)) => mask
                    .indexed_iter()
                    .all(|(idx, &f)| !f || p.h[idx].to_bits() == values[idx].to_bits()),
                _ => true,
            };
            if !(w_ok && h_ok) {
                stats.pin_failures.push(format!("run {run} iteration {}", p.iteration));
            }
            ControlFlow::Continue(())
        };
        match solve_with_progress(&instance, &config, &freeze, &mut sink) {
            Ok(solution) => stats.iterations += solution.iterations,
            Err(e) => return (Outcome::error(MONO, &e), Outcome::error(FREEZE, e)),
        }
        stats.runs += 1;
    }
    let elapsed = started.elapsed();
    let in_time = elapsed < Duration::from_secs(120);
    let mono = Outcome::new(
        MONO,
        stats.monotone_failures.is_empty() && in_time,
        format!(
            "{} runs, {} iterations, worst relative rise {:.1e}, {:.1}s{}",
            stats.runs,
            stats.iterations,
            stats.worst_rise,
            elapsed.as_secs_f64(),
            stats.monotone_failures.first().map(|f| format!(", first failure {f}")).unwrap_or_default()
        ),
    );
    let freeze = Outcome::new(
        FREEZE,
        stats.pin_failures.is_empty() && stats.pinned_entries > 0,
        format!(
            "{} pinned entries bit-exact at every iteration{}",
            stats.pinned_entries,
            stats.pin_failures.first().map(|f| format!(", first failure {f}")).unwrap_or_default()
        ),
    );
    (mono, freeze)
}

/// `reconstruct` against the triple-loop oracle on 100 random shapes.
pub fn reconstruction_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_1000);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..30);
        let k = rng.random_range(1..6);
        let m = rng.random_range(1..=n.min(8));
        let j = rng.random_range(1..10);
        let w = Array2::from_shape_simple_fn((n, k), || rng.random_range(0.0..1.0));
        let h = Array3::from_shape_simple_fn((m, k, j), || rng.random_range(0.0..1.0));
        let fast = match reconstruct(&w, &h) {
            Ok(r) => r,
            Err(e) => return Outcome::error("reconstruction oracle", e),
        };
        let slow = phasefd_oracles::reconstruct(&w, &h);
        for (a, b) in fast.iter().zip(slow.iter()) {
            worst = worst.max(rel_diff(*a, *b));
        }
    }
    Outcome::new(
        "reconstruction oracle",
        worst <= 1e-12,
        format!("100 shapes, max relative difference {worst:.1e}"),
    )
}

/// M=1 solve against an independent plain KL-NMF on the log-resampled data.
pub fn nmf_degeneracy() -> Outcome {
    const NAME: &str = "nmf degeneracy";
    let spec = SyntheticSpec {
        grid_per_edge: 8,
        n_q: 150,
        alloy_max: 1.02,
        noise_sigma: 0.01,
        seed: 11,
        ..SyntheticSpec::default()
    };
    let (instance, _) = match evaluation::generate(&spec) {
        Ok(x) => x,
        Err(e) => return Outcome::error(NAME, e),
    };
    let plan = ResamplePlan::new(instance.q(), 1.0).expect("valid grid");
    let a = plan.to_log_columns(&instance.intensity_matrix()).expect("grid length");
    let (n, j, k, iterations) = (a.nrows(), a.ncols(), 3, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_2000);
    let w0 = Array2::from_shape_simple_fn((n, k), || 1.0 - rng.random::<f64>());
    let h0 = Array2::from_shape_simple_fn((k, j), || 1.0 - rng.random::<f64>());
    let (oracle_losses, oracle_iterates) = phasefd_oracles::plain_kl_nmf(&a, &w0, &h0, iterations, 1e-12);

    let freeze = FreezeSpec {
        w_init: Some(w0),
        h_init: Some(h0.insert_axis(Axis(0))),
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
    let solution = match solve_with_progress(&instance, &config, &freeze, &mut sink) {
        Ok(s) => s,
        Err(e) => return Outcome::error(NAME, e),
    };
    if solution.loss_trace.len() != oracle_losses.len() || iterates.len() != oracle_iterates.len() {
        return Outcome::new(NAME, false, "iteration counts differ");
    }
    let mut worst = 0.0f64;
    for (x, y) in solution.loss_trace.iter().zip(&oracle_losses) {
        worst = worst.max(rel_diff(*x, *y));
    }
    for ((w, h), (ow, oh)) in iterates.iter().zip(&oracle_iterates) {
        for (x, y) in w.iter().zip(ow.iter()).chain(h.iter().zip(oh.iter())) {
            worst = worst.max(rel_diff(*x, *y));
        }
    }
    Outcome::new(
        NAME,
        worst <= 1e-12,
        format!("{iterations} iterations on a {n}x{j} log-resampled library, max relative difference {worst:.1e}"),
    )
}

/// A peak moved by `exp(delta)` on a geometric grid is the same samples one
/// row down, both through resampling and through a one-row shift copy.
pub fn shift_equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_3000);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let start = rng.random_range(0.5..2.0);
        let n = rng.random_range(100..400);
        let grid = QGrid::geometric(start, start * rng.random_range(2.0..4.0), n).expect("valid grid");
        let lambda = grid.delta().expect("geometric").exp();
        let center = start * rng.random_range(1.2..1.8);
        let width = rng.random_range(0.01..0.05);
        let f = |q: f64| (-0.5 * ((q - center) / width).powi(2)).exp();
        let plan = ResamplePlan::new(&grid, 1.0).expect("valid grid");
        let base = plan.to_log(&grid.values().iter().map(|&q| f(q)).collect::<Vec<_>>()).expect("length");
        let moved = plan
            .to_log(&grid.values().iter().map(|&q| f(q / lambda)).collect::<Vec<_>>())
            .expect("length");
        let w = Array2::from_shape_vec((n, 1), base.clone()).expect("shape");
        let mut h = Array3::zeros((2, 1, 1));
        h[[1, 0, 0]] = 1.0;
        let model = reconstruct(&w, &h).expect("shapes");
        worst = worst.max(moved[0].abs());
        for i in 1..n {
            worst = worst.max((moved[i] - base[i - 1]).abs());
            worst = worst.max((model[[i, 0]] - moved[i]).abs());
        }
    }
    Outcome::new(
        "shift equivariance",
        worst <= 1e-10,
        format!("20 geometric grids, max deviation from a one-row offset {worst:.1e}"),
    )
}

/// Noiseless K=3 synthetic with about 2% alloying: M=10 recovers the phases
/// and M=1 does worse.
pub fn recovery() -> Outcome {
    const NAME: &str = "recovery";
    let started = Instant::now();
    let spec = SyntheticSpec {
        k: 3,
        grid_per_edge: 15,
        alloy_max: 1.02,
        seed: 0,
        ..SyntheticSpec::default()
    };
    let (instance, truth) = match evaluation::generate(&spec) {
        Ok(x) => x,
        Err(e) => return Outcome::error(NAME, e),
    };
    let score = |m: usize| -> Result<f64, String> {
        let config = SolverConfig::new(3).with_m(m).with_seed(0);
        let solution = solve(&instance, &config, &FreezeSpec::default()).map_err(|e| e.to_string())?;
        evaluation::matched_l2(&solution, &truth).map_err(|e| e.to_string())
    };
    let (shifted, plain) = match (score(10), score(1)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::error(NAME, e),
    };
    let elapsed = started.elapsed();
    Outcome::new(
        NAME,
        shifted < 1e-2 && plain > shifted && elapsed < Duration::from_secs(300),
        format!(
            "{} samples, matched_l2 M=10 {shifted:.3e}, M=1 {plain:.3e}, {:.1}s",
            instance.n_samples(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Ten systems with 4 to 6 phases: exact enforcement satisfies the phase rule
/// everywhere and exact rounding never loses to greedy rounding.
pub fn gibbs_enforcement() -> Outcome {
    const NAME: &str = "gibbs enforcement";
    let mut samples_checked = 0;
    let mut worst_pct = 1.0f64;
    let mut dominance_failures = Vec::new();
    let mut exact_better = 0;
    for system in 0..10u64 {
        let k = 4 + (system as usize % 3);
        let spec = SyntheticSpec {
            k,
            grid_per_edge: 10,
            n_q: 200,
            alloy_max: 1.02,
            seed: 200 + system,
            ..SyntheticSpec::default()
        };
        let (instance, _) = match evaluation::generate(&spec) {
            Ok(x) => x,
            Err(e) => return Outcome::error(NAME, e),
        };
        let config = SolverConfig::new(k)
            .with_m(4)
            .with_seed(system)
            .with_sparsity(phasefd::model::DEFAULT_SPARSITY)
            .with_gibbs(GibbsMode::Exact, 3);
        let mut relaxed: Option<(Array2<f64>, Array3<f64>)> = None;
        let mut sink = |p: &Progress<'_>| {
            if p.kind == ProgressKind::Converged && p.stage == Stage::Relaxed {
                relaxed = Some((p.w.clone(), p.h.clone()));
            }
            ControlFlow::Continue(())
        };
        let solution = match solve_with_progress(&instance, &config, &FreezeSpec::default(), &mut sink) {
            Ok(s) => s,
            Err(e) => return Outcome::error(NAME, e),
        };
        worst_pct = worst_pct.min(evaluation::gibbs_percentage(&solution, 3, phasefd::model::PRESENCE_THRESHOLD));

        let Some((w, h)) = relaxed else {
            return Outcome::new(NAME, false, "no relaxed solution reported");
        };
        let plan = ResamplePlan::new(instance.q(), config.oversample).expect("valid grid");
        let a = plan.to_log_columns(&instance.intensity_matrix()).expect("grid length");
        let gamma = config.sparsity.weights(config.m);
        let problem = RoundingProblem::new(&a, &w, &h, &gamma, config.epsilon);
        for j in 0..instance.n_samples() {
            let losses = [GibbsMode::Exact, GibbsMode::Greedy].map(|mode| {
                problem
                    .keep_set(j, 3, mode, &[])
                    .and_then(|keep| problem.subset_loss(j, &keep))
            });
            match losses {
                [Ok(exact), Ok(greedy)] => {
                    if exact > greedy {
                        dominance_failures.push(format!("system {system} sample {j}: {exact} > {greedy}"));
                    } else if exact < greedy {
                        exact_better += 1;
                    }
                }
                [Err(e), _] | [_, Err(e)] => return Outcome::error(NAME, e),
            }
            samples_checked += 1;
        }
    }
    Outcome::new(
        NAME,
        worst_pct == 1.0 && dominance_failures.is_empty(),
        format!(
            "10 systems, lowest gibbs percentage {worst_pct:.2}, exact <= greedy on {}/{samples_checked} samples ({exact_better} strictly better){}",
            samples_checked - dominance_failures.len(),
            dominance_failures.first().map(|f| format!(", first failure {f}")).unwrap_or_default()
        ),
    )
}

/// Two full CLI runs with the same flags write identical bytes.
pub fn determinism() -> Outcome {
    const NAME: &str = "determinism";
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Outcome::error(NAME, e),
    };
    let path = |name: &str| dir.path().join(name).display().to_string();
    let (inst, truth) = (path("instance.json"), path("truth.json"));
    let gen = ["phasefd", "gen", "--k", "4", "--grid", "8", "--n", "150", "--alloy-max", "1.02", "--noise", "0.01", "--seed", "4"];
    let code = phasefd_cli::run(gen.iter().copied().chain(["--out", inst.as_str(), "--truth", truth.as_str()]));
    if code != 0 {
        return Outcome::new(NAME, false, format!("gen exited {code}"));
    }
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = path(&format!("solution{run}.json"));
        let args = [
            "phasefd", "solve", "--instance", inst.as_str(), "--k", "4", "--m", "4", "--sparsity", "--gibbs", "exact",
            "--seed", "3", "--out", out.as_str(),
        ];
        let code = phasefd_cli::run(args);
        if code != 0 {
            return Outcome::new(NAME, false, format!("solve exited {code}"));
        }
        match std::fs::read(&out) {
            Ok(bytes) => outputs.push(bytes),
            Err(e) => return Outcome::error(NAME, e),
        }
    }
    Outcome::new(
        NAME,
        outputs[0] == outputs[1],
        format!("two solve runs, {} bytes each, identical: {}", outputs[0].len(), outputs[0] == outputs[1]),
    )
}

pub mod service;
