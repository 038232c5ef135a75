//! Minimum-cost perfect matching on a square cost matrix.

use nalgebra::DMatrix;

/// Hungarian algorithm with potentials, `O(k³)`. Returns `perm` with row
/// `i` matched to column `perm[i]`, minimizing `Σ_i cost[(i, perm[i])]`.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let k = cost.nrows();
    assert_eq!(k, cost.ncols(), "cost matrix must be square");
    if k == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is a virtual start
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; k];
    for j in 1..=k {
        perm[owner[j] - 1] = j - 1;
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..k {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    fn total(cost: &DMatrix<f64>, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
    }

    #[test]
    fn picks_the_antidiagonal() {
        let cost = DMatrix::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 5.0]);
        assert_eq!(min_cost_assignment(&cost), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn matches_factorial_brute_force(k in 1usize..=6, entries in proptest::collection::vec(0.0f64..10.0, 36)) {
            let cost = DMatrix::from_fn(k, k, |i, j| entries[i * 6 + j]);
            let perm = min_cost_assignment(&cost);
            let mut seen = perm.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..k).collect::<Vec<_>>());
            let best = permutations(k).iter().map(|p| total(&cost, p)).fold(f64::INFINITY, f64::min);
            prop_assert!((total(&cost, &perm) - best).abs() < 1e-9);
        }
    }
}
