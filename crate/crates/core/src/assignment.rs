//! Minimum-cost perfect matching on square cost matrices.

use itertools::Itertools;

/// Largest size solved by trying every permutation.
pub const EXHAUSTIVE_MAX: usize = 8;

/// Optimal assignment: `result.0[row]` is the column matched to `row`.
/// Uses exhaustive search up to [`EXHAUSTIVE_MAX`] rows and the Hungarian
/// algorithm above that.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    if cost.len() <= EXHAUSTIVE_MAX {
        exhaustive(cost)
    } else {
        hungarian(cost)
    }
}

pub fn exhaustive(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    let mut best = ((0..n).collect::<Vec<_>>(), f64::INFINITY);
    for perm in (0..n).permutations(n) {
        let total: f64 = perm.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        if total < best.1 {
            best = (perm, total);
        }
    }
    if n == 0 {
        best.1 = 0.0;
    }
    best
}

/// O(n^3) Hungarian algorithm with row/column potentials.
pub fn hungarian(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays, index 0 is a sentinel column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = matched_row[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[matched_row[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if matched_row[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            matched_row[col0] = matched_row[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for col in 1..=n {
        assignment[matched_row[col] - 1] = col - 1;
    }
    let total = assignment.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
    (assignment, total)
}
