//! Brute-force reference computations for tests.
//!
//! Nothing here calls into `phasefd`; every routine is a direct loop over the
//! defining formula so it can check the optimized code paths independently.

use ndarray::{Array2, Array3};

/// `R[n][j] = sum_m sum_k W[n-m][k] H[m][k][j]` by explicit loops.
pub fn reconstruct(w: &Array2<f64>, h: &Array3<f64>) -> Array2<f64> {
    let (n, k) = w.dim();
    let (m_count, _, j_count) = h.dim();
    let mut r = Array2::zeros((n, j_count));
    for row in 0..n {
        for j in 0..j_count {
            let mut acc = 0.0;
            for m in 0..m_count {
                if m > row {
                    continue;
                }
                for kk in 0..k {
                    acc += w[[row - m, kk]] * h[[m, kk, j]];
                }
            }
            r[[row, j]] = acc;
        }
    }
    r
}

/// Generalized KL divergence with `R` floored at `eps` in the logarithm.
pub fn kl(a: &Array2<f64>, r: &Array2<f64>, eps: f64) -> f64 {
    let mut total = 0.0;
    for (x, y) in a.iter().zip(r.iter()) {
        let term = if *x > 0.0 { x * (x / y.max(eps)).ln() - x + y } else { *y };
        total += term.max(0.0);
    }
    total
}

/// Plain KL-NMF `A ~ W H` with H-then-W multiplicative updates. Returns the
/// loss before the first iteration followed by the loss and factors after
/// every iteration.
pub fn plain_kl_nmf(
    a: &Array2<f64>,
    w0: &Array2<f64>,
    h0: &Array2<f64>,
    iterations: usize,
    eps: f64,
) -> (Vec<f64>, Vec<(Array2<f64>, Array2<f64>)>) {
    let (n, k) = w0.dim();
    let j_count = h0.ncols();
    let mut w = w0.clone();
    let mut h = h0.clone();
    let product = |w: &Array2<f64>, h: &Array2<f64>| {
        Array2::from_shape_fn((n, j_count), |(row, j)| (0..k).map(|kk| w[[row, kk]] * h[[kk, j]]).sum())
    };
    let mut losses = vec![kl(a, &product(&w, &h), eps)];
    let mut iterates = Vec::new();
    for _ in 0..iterations {
        let r = product(&w, &h);
        let mut next_h = h.clone();
        for kk in 0..k {
            let den: f64 = (0..n).map(|row| w[[row, kk]]).sum();
            for j in 0..j_count {
                let num: f64 = (0..n).map(|row| w[[row, kk]] * a[[row, j]] / r[[row, j]].max(eps)).sum();
                next_h[[kk, j]] = h[[kk, j]] * num / den.max(eps);
            }
        }
        h = next_h;
        let r = product(&w, &h);
        let mut next_w = w.clone();
        for row in 0..n {
            for kk in 0..k {
                let den: f64 = (0..j_count).map(|j| h[[kk, j]]).sum();
                let num: f64 = (0..j_count).map(|j| a[[row, j]] / r[[row, j]].max(eps) * h[[kk, j]]).sum();
                next_w[[row, kk]] = w[[row, kk]] * num / den.max(eps);
            }
        }
        w = next_w;
        losses.push(kl(a, &product(&w, &h), eps));
        iterates.push((w.clone(), h.clone()));
    }
    (losses, iterates)
}

/// Piecewise-linear interpolant of `(xs, ys)` at `x` found by a linear scan;
/// zero outside `[xs[0], xs[last]]`.
pub fn interpolant(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x < xs[0] || x > xs[last] {
        return 0.0;
    }
    for i in 0..last {
        if x >= xs[i] && x <= xs[i + 1] {
            let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
            return ys[i] * (1.0 - t) + ys[i + 1] * t;
        }
    }
    ys[last]
}

/// Every `size`-subset of `0..n` in lexicographic order.
pub fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize == size {
            out.push((0..n).filter(|i| mask & (1 << i) != 0).collect());
        }
    }
    out
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, items, out);
            let swap = if k % 2 == 0 { i } else { 0 };
            items.swap(swap, k - 1);
        }
    }
    let mut items: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut items, &mut out);
    out
}

/// Sample-`j` KL loss when only the phases in `keep` contribute, computed
/// straight from `W` and `H`.
pub fn sample_subset_loss(a: &Array2<f64>, w: &Array2<f64>, h: &Array3<f64>, j: usize, keep: &[usize], eps: f64) -> f64 {
    let n = w.nrows();
    let m_count = h.shape()[0];
    let mut total = 0.0;
    for row in 0..n {
        let mut model = 0.0;
        for &kk in keep {
            for m in 0..m_count.min(row + 1) {
                model += w[[row - m, kk]] * h[[m, kk, j]];
            }
        }
        let x = a[[row, j]];
        let term = if x > 0.0 { x * (x / model.max(eps)).ln() - x + model } else { model };
        total += term.max(0.0);
    }
    total
}
