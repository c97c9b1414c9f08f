//! Minimum-cost bipartite assignment.
//!
//! Entries equal to `+∞` (or NaN) are forbidden and never appear in a
//! returned match. Internally they are replaced by a finite penalty larger
//! than the sum of every finite cost, so the solver first maximizes the
//! number of feasible pairs and then minimizes their total cost.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest side accepted by [`brute_force_oracle`].
pub const ORACLE_MAX_SIDE: usize = 8;

/// Row-major cost matrix. Rows are detections wherever the tracker builds one.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    rows: usize,
    cols: usize,
    costs: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(rows: usize, cols: usize, costs: Vec<T>) -> Result<Self> {
        if costs.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: costs.len(),
            });
        }
        Ok(Self { rows, cols, costs })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut costs = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                costs.push(f(r, c));
            }
        }
        Self { rows, cols, costs }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut costs = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            costs.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            costs,
        })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| T::zero())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.costs[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.costs[r * self.cols + c] = v;
    }

    pub fn values(&self) -> &[T] {
        &self.costs
    }

    #[inline]
    pub fn is_forbidden(&self, r: usize, c: usize) -> bool {
        !self.get(r, c).is_finite()
    }

    pub fn transposed(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Marks every entry strictly above `kappa` as forbidden.
    pub fn thresholded(&self, kappa: T) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| {
            let v = self.get(r, c);
            if v.is_finite() && v <= kappa {
                v
            } else {
                T::infinity()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AssignmentResult {
    /// `(row, col)` pairs, sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl AssignmentResult {
    fn from_pairs(rows: usize, cols: usize, mut matches: Vec<(usize, usize)>) -> Self {
        matches.sort_unstable();
        let mut row_used = vec![false; rows];
        let mut col_used = vec![false; cols];
        for &(r, c) in &matches {
            row_used[r] = true;
            col_used[c] = true;
        }
        Self {
            matches,
            unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
            unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
        }
    }

    pub fn total_cost<T: Scalar>(&self, m: &CostMatrix<T>) -> T {
        self.matches
            .iter()
            .fold(T::zero(), |acc, &(r, c)| acc + m.get(r, c))
    }
}

/// Hungarian solve over a rectangular matrix.
pub fn solve_min_cost<T: Scalar>(m: &CostMatrix<T>) -> AssignmentResult {
    if m.rows == 0 || m.cols == 0 {
        return AssignmentResult::from_pairs(m.rows, m.cols, Vec::new());
    }
    if m.rows > m.cols {
        let t = m.transposed();
        let pairs = hungarian(&t).into_iter().map(|(r, c)| (c, r)).collect();
        return AssignmentResult::from_pairs(m.rows, m.cols, pairs);
    }
    AssignmentResult::from_pairs(m.rows, m.cols, hungarian(m))
}

/// Hungarian solve after forbidding every entry above `kappa`; `cost == kappa` stays feasible.
pub fn solve_with_threshold<T: Scalar>(m: &CostMatrix<T>, kappa: T) -> AssignmentResult {
    solve_min_cost(&m.thresholded(kappa))
}

/// Shortest-augmenting-path Hungarian method with row/column potentials.
/// Requires `rows <= cols`; returns feasible pairs only.
fn hungarian<T: Scalar>(m: &CostMatrix<T>) -> Vec<(usize, usize)> {
    let n = m.rows;
    let k = m.cols;
    debug_assert!(n <= k);

    let finite_sum = m
        .costs
        .iter()
        .filter(|v| v.is_finite())
        .fold(T::zero(), |acc, &v| acc + v.abs());
    let penalty = finite_sum + T::one();
    let cost = |r: usize, c: usize| {
        let v = m.get(r, c);
        if v.is_finite() {
            v
        } else {
            penalty
        }
    };

    // 1-based: index 0 is the virtual root column.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    let mut minv = vec![T::infinity(); k + 1];
    let mut used = vec![false; k + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = T::infinity());
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = T::infinity();
            let mut j1 = 0usize;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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

    (1..=k)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .filter(|&(r, c)| !m.is_forbidden(r, c))
        .collect()
}

/// Exhaustive search over every injective assignment of the smaller side.
///
/// Optimizes the same objective as [`solve_min_cost`] (most feasible pairs,
/// then least cost). Among equal optima the lexicographically first
/// assignment in row order wins.
pub fn brute_force_oracle<T: Scalar>(m: &CostMatrix<T>) -> Result<AssignmentResult> {
    let side = m.rows.max(m.cols);
    if side > ORACLE_MAX_SIDE {
        return Err(Error::OracleTooLarge {
            max: ORACLE_MAX_SIDE,
            got: side,
        });
    }
    if m.rows == 0 || m.cols == 0 {
        return Ok(AssignmentResult::from_pairs(m.rows, m.cols, Vec::new()));
    }
    let transpose = m.rows > m.cols;
    let work = if transpose { m.transposed() } else { m.clone() };

    struct Search<'a, T> {
        m: &'a CostMatrix<T>,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Option<(usize, T, Vec<usize>)>,
    }

    impl<T: Scalar> Search<'_, T> {
        fn run(&mut self, row: usize) {
            if row == self.m.rows {
                let mut count = 0usize;
                let mut total = T::zero();
                for (r, &c) in self.current.iter().enumerate() {
                    if !self.m.is_forbidden(r, c) {
                        count += 1;
                        total += self.m.get(r, c);
                    }
                }
                let better = match &self.best {
                    None => true,
                    Some((bc, bt, _)) => count > *bc || (count == *bc && total < *bt),
                };
                if better {
                    self.best = Some((count, total, self.current.clone()));
                }
                return;
            }
            for c in 0..self.m.cols {
                if self.used[c] {
                    continue;
                }
                self.used[c] = true;
                self.current.push(c);
                self.run(row + 1);
                self.current.pop();
                self.used[c] = false;
            }
        }
    }

    let mut search = Search {
        m: &work,
        used: vec![false; work.cols],
        current: Vec::with_capacity(work.rows),
        best: None,
    };
    search.run(0);
    let (_, _, cols) = search.best.expect("non-empty search space");
    let pairs = cols
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| !work.is_forbidden(r, c))
        .map(|(r, c)| if transpose { (c, r) } else { (r, c) })
        .collect();
    Ok(AssignmentResult::from_pairs(m.rows, m.cols, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> CostMatrix<f64> {
        CostMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn is_partition(res: &AssignmentResult, rows: usize, cols: usize) -> bool {
        let mut r_seen = vec![0; rows];
        let mut c_seen = vec![0; cols];
        for &(r, c) in &res.matches {
            r_seen[r] += 1;
            c_seen[c] += 1;
        }
        res.unmatched_rows.iter().for_each(|&r| r_seen[r] += 1);
        res.unmatched_cols.iter().for_each(|&c| c_seen[c] += 1);
        r_seen.iter().all(|&n| n == 1) && c_seen.iter().all(|&n| n == 1)
    }

    #[test]
    fn zero_diagonal() {
        let m = CostMatrix::from_fn(3, 3, |r, c| if r == c { 0.0 } else { 1.0 });
        let res = solve_min_cost(&m);
        assert_eq!(res.matches, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(res.total_cost(&m), 0.0);
    }

    #[test]
    fn two_by_two() {
        let m = mat(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let res = solve_min_cost(&m);
        assert_eq!(res.matches, vec![(0, 0), (1, 1)]);
        assert_eq!(res.total_cost(&m), 2.0);
    }

    #[test]
    fn empty_side() {
        let m = CostMatrix::<f64>::empty(0, 4);
        let res = solve_min_cost(&m);
        assert!(res.matches.is_empty());
        assert_eq!(res.unmatched_cols, vec![0, 1, 2, 3]);
        let m = CostMatrix::<f64>::empty(3, 0);
        assert_eq!(solve_min_cost(&m).unmatched_rows, vec![0, 1, 2]);
    }

    #[test]
    fn rectangular_both_orientations() {
        let m = mat(&[&[5.0, 1.0, 3.0]]);
        assert_eq!(solve_min_cost(&m).matches, vec![(0, 1)]);
        let t = m.transposed();
        let res = solve_min_cost(&t);
        assert_eq!(res.matches, vec![(1, 0)]);
        assert_eq!(res.unmatched_rows, vec![0, 2]);
    }

    #[test]
    fn threshold_examples() {
        let m = mat(&[&[0.9, 0.8], &[0.95, 0.7]]);
        let res = solve_with_threshold(&m, 0.5);
        assert!(res.matches.is_empty());
        assert_eq!(res.unmatched_rows, vec![0, 1]);

        let m = mat(&[&[0.1, 0.9], &[0.9, 0.1]]);
        assert_eq!(solve_with_threshold(&m, 0.5).matches, vec![(0, 0), (1, 1)]);

        let m = mat(&[&[0.5]]);
        assert_eq!(solve_with_threshold(&m, 0.5).matches, vec![(0, 0)]);
    }

    #[test]
    fn infinite_entries_never_matched() {
        let inf = f64::INFINITY;
        let m = mat(&[&[inf, 1.0], &[inf, 2.0]]);
        let res = solve_min_cost(&m);
        assert_eq!(res.matches.len(), 1);
        assert!(!m.is_forbidden(res.matches[0].0, res.matches[0].1));
        // Prefers a larger feasible matching over a cheaper smaller one.
        let m = mat(&[&[0.0, 9.0], &[inf, 0.0]]);
        assert_eq!(solve_min_cost(&m).matches, vec![(0, 0), (1, 1)]);
        let m = mat(&[&[1.0, 0.0], &[inf, 0.5]]);
        assert_eq!(solve_min_cost(&m).matches, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn oracle_examples() {
        let m = mat(&[&[0.25]]);
        assert_eq!(brute_force_oracle(&m).unwrap().matches, vec![(0, 0)]);
        let inf = f64::INFINITY;
        let m = mat(&[&[inf, inf], &[inf, inf]]);
        let res = brute_force_oracle(&m).unwrap();
        assert!(res.matches.is_empty());
        assert_eq!(solve_min_cost(&m).matches, vec![]);
        let big = CostMatrix::<f64>::empty(9, 2);
        assert!(matches!(
            brute_force_oracle(&big),
            Err(Error::OracleTooLarge { max: 8, got: 9 })
        ));
    }

    #[test]
    fn oracle_tie_break_is_lexicographic() {
        let m = CostMatrix::from_fn(2, 2, |_, _| 1.0);
        assert_eq!(brute_force_oracle(&m).unwrap().matches, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn agrees_with_oracle_with_forbidden_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let rows = rng.random_range(0..=6);
            let cols = rng.random_range(0..=6);
            let m = CostMatrix::from_fn(rows, cols, |_, _| {
                if rng.random_bool(0.3) {
                    f64::INFINITY
                } else {
                    rng.random_range(0..=16) as f64 / 16.0
                }
            });
            let fast = solve_min_cost(&m);
            let slow = brute_force_oracle(&m).unwrap();
            assert!(is_partition(&fast, rows, cols));
            assert_eq!(fast.matches.len(), slow.matches.len());
            assert_eq!(fast.total_cost(&m), slow.total_cost(&m));
        }
    }

    #[test]
    fn single_precision_solver() {
        let m = CostMatrix::<f32>::from_fn(3, 3, |r, c| ((r + 2 * c) % 3) as f32);
        let res = solve_min_cost(&m);
        assert_eq!(res.total_cost(&m), 0.0);
    }

    fn grid_matrix() -> impl Strategy<Value = CostMatrix<f64>> {
        (0usize..=6, 0usize..=6).prop_flat_map(|(r, c)| {
            prop::collection::vec(0u32..=8, r * c)
                .prop_map(move |v| CostMatrix::new(r, c, v.into_iter().map(|x| x as f64 / 8.0).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn threshold_is_monotone(m in grid_matrix(), k1 in 0u32..=8, k2 in 0u32..=8) {
            let (lo, hi) = (k1.min(k2) as f64 / 8.0, k1.max(k2) as f64 / 8.0);
            let a = solve_with_threshold(&m, lo);
            let b = solve_with_threshold(&m, hi);
            prop_assert!(a.matches.len() <= b.matches.len());
            for &(r, c) in &a.matches {
                prop_assert!(m.get(r, c) <= lo);
            }
        }

        #[test]
        fn row_permutation_is_equivariant(m in grid_matrix(), seed in 0u64..1000) {
            let mut perm: Vec<usize> = (0..m.rows()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted = CostMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(perm[r], c));
            let a = solve_min_cost(&m);
            let b = solve_min_cost(&permuted);
            prop_assert_eq!(a.total_cost(&m), b.total_cost(&permuted));
            prop_assert_eq!(a.matches.len(), b.matches.len());
            // Mapping the permuted solution back is also optimal for the original.
            let back: f64 = b.matches.iter().map(|&(r, c)| m.get(perm[r], c)).sum();
            prop_assert_eq!(back, a.total_cost(&m));
        }
    }
}
