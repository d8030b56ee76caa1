mod common;

use ndarray::{Array2, Array3, Axis};
use phasefd::evaluation::{self, gibbs_fraction, matched_l2, matched_l2_signals, SyntheticSpec};
use phasefd::gibbs::PresenceMatrix;
use phasefd::{solve, FreezeSpec, GibbsMode, SolverConfig};
use proptest::prelude::*;

fn small_spec(k: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        k,
        grid_per_edge: 7,
        n_q: 100,
        alloy_max: 1.03,
        seed,
        ..SyntheticSpec::default()
    }
}

fn brute_matched(model: &Array3<f64>, truth: &Array3<f64>, total: f64) -> f64 {
    let k = model.dim().0;
    phasefd_oracles::permutations(k)
        .into_iter()
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(a, &b)| {
                    let mut s = 0.0;
                    for j in 0..model.dim().1 {
                        for n in 0..model.dim().2 {
                            let d = model[[a, j, n]] - truth[[b, j, n]];
                            s += d * d;
                        }
                    }
                    s
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
        / total
}

#[test]
fn truth_scores_zero_in_any_order() {
    let (_, truth) = evaluation::generate(&small_spec(4, 1)).unwrap();
    let g = &truth.signals;
    assert_eq!(matched_l2_signals(g, g, truth.intensity_total).unwrap(), 0.0);
    let order = [2usize, 0, 3, 1];
    let permuted = ndarray::stack(Axis(0), &order.iter().map(|&k| g.index_axis(Axis(0), k)).collect::<Vec<_>>()).unwrap();
    assert_eq!(matched_l2_signals(&permuted, g, truth.intensity_total).unwrap(), 0.0);
}

#[test]
fn missing_phase_costs_its_energy() {
    let (_, truth) = evaluation::generate(&small_spec(5, 2)).unwrap();
    let g = &truth.signals;
    for missing in 0..5 {
        let mut model = g.clone();
        model.index_axis_mut(Axis(0), missing).fill(0.0);
        let got = matched_l2_signals(&model, g, truth.intensity_total).unwrap();
        let closed = g.index_axis(Axis(0), missing).iter().map(|v| v * v).sum::<f64>() / truth.intensity_total;
        let brute = brute_matched(&model, g, truth.intensity_total);
        assert!((got - closed).abs() <= 1e-12 * closed, "{got} vs {closed}");
        assert!((got - brute).abs() <= 1e-12 * brute);
    }
}

#[test]
fn phase_count_mismatch_is_an_error() {
    let g = Array3::<f64>::zeros((3, 2, 4));
    let m = Array3::<f64>::zeros((2, 2, 4));
    assert!(matched_l2_signals(&m, &g, 1.0).is_err());
}

#[test]
fn generated_signals_sum_to_intensity() {
    for k in 3..=6 {
        let (instance, truth) = evaluation::generate(&small_spec(k, k as u64)).unwrap();
        let a = instance.intensity_matrix();
        let summed = truth.signals.sum_axis(Axis(0));
        for j in 0..instance.n_samples() {
            for n in 0..instance.q().len() {
                assert!((summed[[j, n]] - a[[n, j]]).abs() <= 1e-9);
            }
        }
        assert_eq!(gibbs_fraction(&truth.presence(0.0), 3), 1.0);
        for col in truth.weights.axis_iter(Axis(1)) {
            assert!((col.sum() - 1.0).abs() < 1e-12);
            assert!(col.iter().filter(|&&w| w > 0.0).count() <= 3);
        }
    }
}

#[test]
fn regeneration_is_bit_identical() {
    let spec = SyntheticSpec { seed: 42, noise_sigma: 0.01, ..small_spec(4, 42) };
    let (a, ta) = evaluation::generate(&spec).unwrap();
    let (b, tb) = evaluation::generate(&spec).unwrap();
    let bits = |m: &Array2<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.intensity_matrix()), bits(&b.intensity_matrix()));
    assert_eq!(ta.signals, tb.signals);
    assert!(a.intensity_matrix().iter().all(|&v| v >= 0.0));
}

#[test]
fn corner_mixture_without_shift() {
    let spec = SyntheticSpec { alloy_max: 1.0, ..small_spec(3, 9) };
    let (instance, truth) = evaluation::generate(&spec).unwrap();
    let corners: Vec<usize> = (0..3)
        .map(|p| instance.samples().iter().position(|s| s.composition[p] == 1.0).unwrap())
        .collect();
    let a = instance.intensity_matrix();
    for (j, sample) in instance.samples().iter().enumerate() {
        for n in 0..a.nrows() {
            let expected: f64 = (0..3).map(|p| sample.composition[p] * a[[n, corners[p]]]).sum();
            assert!((a[[n, j]] - expected).abs() < 1e-12);
        }
    }
    assert!(truth.lambda.iter().all(|&l| l == 1.0));
}

#[test]
fn too_coarse_lattice_is_rejected() {
    let spec = SyntheticSpec { k: 8, grid_per_edge: 2, ..SyntheticSpec::default() };
    assert!(evaluation::generate(&spec).is_err());
    let spec = SyntheticSpec { alloy_max: 0.9, ..SyntheticSpec::default() };
    assert!(evaluation::generate(&spec).is_err());
}

#[test]
fn half_the_samples_over_the_limit() {
    let contribution = Array2::from_shape_fn((4, 6), |(k, j)| if j % 2 == 0 && k == 3 { 0.0 } else { 1.0 });
    let p = PresenceMatrix::from_contributions(contribution, 0.01);
    assert_eq!(gibbs_fraction(&p, 3), 0.5);
    assert_eq!(gibbs_fraction(&p, 4), 1.0);
}

proptest! {
    #[test]
    fn percentage_monotone(values in proptest::collection::vec(0.0f64..1.0, 5 * 8), t1 in 0.0f64..0.5, t2 in 0.0f64..0.5, n1 in 1usize..5, n2 in 1usize..5) {
        let contribution = Array2::from_shape_vec((5, 8), values).unwrap();
        let (lo_t, hi_t) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (lo_n, hi_n) = if n1 <= n2 { (n1, n2) } else { (n2, n1) };
        let lo = PresenceMatrix::from_contributions(contribution.clone(), lo_t);
        let hi = PresenceMatrix::from_contributions(contribution, hi_t);
        prop_assert!(gibbs_fraction(&lo, lo_n) <= gibbs_fraction(&hi, lo_n));
        prop_assert!(gibbs_fraction(&lo, lo_n) <= gibbs_fraction(&lo, hi_n));
    }
}

#[test]
fn enforcement_keeps_matched_loss_close() {
    let (instance, truth) = evaluation::generate(&small_spec(4, 3)).unwrap();
    let base = SolverConfig::new(4).with_m(6).with_seed(3);
    let off = solve(&instance, &base, &FreezeSpec::default()).unwrap();
    let exact = solve(&instance, &base.clone().with_gibbs(GibbsMode::Exact, 3), &FreezeSpec::default()).unwrap();
    let l_off = matched_l2(&off, &truth).unwrap();
    let l_exact = matched_l2(&exact, &truth).unwrap();
    assert!(l_exact <= 2.0 * l_off + 1e-6, "off {l_off} exact {l_exact}");
    assert_eq!(evaluation::gibbs_percentage(&exact, 3, 0.01), 1.0);
}
