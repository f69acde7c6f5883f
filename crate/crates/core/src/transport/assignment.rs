//! Exact linear assignment (Kuhn-Munkres with row/column potentials, O(n^3)).

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::prelude::*;

/// Minimum-cost perfect matching of a square cost matrix; `result[i]` is the
/// column assigned to row `i`.
pub fn solve_assignment(cost: &Matrix) -> Result<Vec<usize>> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::shape("assignment needs a square cost matrix"));
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite("assignment cost".to_string()));
    }
    // 1-based shortest augmenting path formulation; index 0 is a virtual column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
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
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    Ok(assign)
}

/// Enumerates all `n!` bijections (Heap's algorithm). Small `n` only.
pub fn brute_force_assignment(cost: &Matrix) -> Result<(Vec<usize>, f64)> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::shape("assignment needs a square cost matrix"));
    }
    if n > 10 {
        return Err(Error::contract("brute force is limited to n <= 10"));
    }
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (perm.clone(), total(&perm));
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let t = total(&perm);
            if t < best.1 {
                best = (perm.clone(), t);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn empty_and_single() {
        assert_eq!(solve_assignment(&Matrix::zeros(0, 0)).unwrap(), Vec::<usize>::new());
        assert_eq!(solve_assignment(&Matrix::scalar(3.0)).unwrap(), vec![0]);
    }

    #[test]
    fn known_three_by_three() {
        let c = Matrix::from_rows(&[[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]).unwrap();
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a, vec![1, 0, 2]);
    }

    #[test]
    fn matches_enumeration() {
        let mut r = rng::seeded(11);
        for _ in 0..200 {
            let n = r.random_range(1..=6);
            let c = Matrix::from_vec(n, n, (0..n * n).map(|_| r.random::<f64>() * 10.0 - 3.0).collect());
            let a = solve_assignment(&c).unwrap();
            let cost: f64 = a.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum();
            let (_, best) = brute_force_assignment(&c).unwrap();
            assert!((cost - best).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_assignment(&Matrix::zeros(2, 3)).is_err());
        assert!(solve_assignment(&Matrix::from_rows(&[[f64::NAN]]).unwrap()).is_err());
    }
}
