mod common;

use ndarray::{Array2, Array3};
use phasefd::{kl_loss, reconstruct};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_triple_loop(n in 1usize..12, k in 1usize..5, m in 1usize..6, j in 1usize..7, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let w = common::random_matrix((n, k), &mut rng);
        let h = common::random_tensor((m, k, j), &mut rng);
        let fast = reconstruct(&w, &h).unwrap();
        let slow = phasefd_oracles::reconstruct(&w, &h);
        for (a, b) in fast.iter().zip(slow.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }
}

#[test]
fn six_by_two_three_shifts() {
    let mut rng = common::rng(3);
    let w = common::random_matrix((6, 2), &mut rng);
    let h = common::random_tensor((3, 2, 4), &mut rng);
    let fast = reconstruct(&w, &h).unwrap();
    let slow = phasefd_oracles::reconstruct(&w, &h);
    assert!(common::max_rel_diff(fast.as_slice().unwrap(), slow.as_slice().unwrap()) < 1e-12);
}

#[test]
fn kl_is_zero_only_on_equality() {
    let mut rng = common::rng(11);
    let a = common::random_matrix((5, 4), &mut rng);
    let h = Array3::zeros((1, 1, 4));
    assert_eq!(kl_loss(&a, &a, &[0.0], &h, 1e-12).unwrap(), 0.0);
    let mut r = a.clone();
    r[[2, 1]] += 0.01;
    let loss = kl_loss(&a, &r, &[0.0], &h, 1e-12).unwrap();
    assert!(loss > 0.0);
    assert!((loss - phasefd_oracles::kl(&a, &r, 1e-12)).abs() < 1e-15);
}

#[test]
fn kl_dimension_mismatch() {
    let h = Array3::zeros((1, 1, 1));
    assert!(kl_loss(&Array2::ones((2, 2)), &Array2::ones((2, 3)), &[0.0], &h, 1e-12).is_err());
}
