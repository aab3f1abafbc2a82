//! Elimination of equality constraints through a rank-revealing QR of `A^T`.

use nalgebra::{DMatrix, DVector};

use crate::moments::LinearRow;

pub(crate) const RANK_TOL: f64 = 1e-10;
const CONSISTENCY_TOL: f64 = 1e-9;

/// `x = x_p + N w` parametrizes `{x : A x = b}`.
#[derive(Debug)]
pub(crate) struct EqualityPresolve {
    /// Kept rows, in pivot order.
    pub independent: Vec<usize>,
    /// `1 / ||a_i||` per row (zero rows get 1).
    pub row_scale: Vec<f64>,
    q: DMatrix<f64>,
    r11: DMatrix<f64>,
    pub x_p: DVector<f64>,
    pub null: DMatrix<f64>,
    pub consistent: bool,
}

impl EqualityPresolve {
    pub fn new(n: usize, rows: &[LinearRow]) -> Self {
        let p = rows.len();
        let mut at = DMatrix::zeros(n, p);
        let mut b = DVector::zeros(p);
        let mut row_scale = vec![1.0; p];
        for (i, row) in rows.iter().enumerate() {
            let nrm = row.terms.iter().map(|t| t.1 * t.1).sum::<f64>().sqrt();
            let sc = if nrm > 0.0 { 1.0 / nrm } else { 1.0 };
            row_scale[i] = sc;
            for &(k, c) in &row.terms {
                at[(k, i)] += c * sc;
            }
            b[i] = row.rhs * sc;
        }
        let (q, r, perm, rank) = pivoted_qr(at);
        let independent: Vec<usize> = perm[..rank].to_vec();
        let r11 = r.view((0, 0), (rank, rank)).into_owned();
        let b_i = DVector::from_iterator(rank, independent.iter().map(|&i| b[i]));
        let u = r11
            .transpose()
            .solve_lower_triangular(&b_i)
            .unwrap_or_else(|| DVector::zeros(rank));
        let x_p = q.columns(0, rank) * u;
        let null = q.columns(rank, n - rank).into_owned();
        let consistent = rows.iter().enumerate().all(|(i, row)| {
            let lhs: f64 = row.terms.iter().map(|&(k, c)| c * x_p[k]).sum();
            (lhs - row.rhs).abs() * row_scale[i] <= CONSISTENCY_TOL * (1.0 + b[i].abs())
        });
        EqualityPresolve {
            independent,
            row_scale,
            q,
            r11,
            x_p,
            null,
            consistent,
        }
    }

    pub fn rank(&self) -> usize {
        self.independent.len()
    }

    /// Least-squares multipliers `y` with `A^T y ~ g`; dependent rows get 0.
    pub fn multipliers(&self, g: &DVector<f64>, nrows: usize) -> Vec<f64> {
        let rank = self.rank();
        let qtg = self.q.columns(0, rank).transpose() * g;
        let yi = self
            .r11
            .solve_upper_triangular(&qtg)
            .unwrap_or_else(|| DVector::zeros(rank));
        let mut y = vec![0.0; nrows];
        for (k, &i) in self.independent.iter().enumerate() {
            y[i] = yi[k] * self.row_scale[i];
        }
        y
    }
}

/// Householder QR with column pivoting by remaining column norm. Returns the
/// full orthogonal `Q`, the triangular factor, the column permutation and the
/// numerical rank.
fn pivoted_qr(mut a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>, usize) {
    let (n, p) = a.shape();
    let mut perm: Vec<usize> = (0..p).collect();
    let mut reflectors: Vec<DVector<f64>> = Vec::new();
    let mut first = 0.0;
    let mut rank = 0;
    for j in 0..n.min(p) {
        let (best, nrm) = (j..p)
            .map(|c| (c, a.view((j, c), (n - j, 1)).norm()))
            .fold((j, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if j == 0 {
            first = nrm;
        }
        if nrm <= RANK_TOL * first.max(1.0) || nrm == 0.0 {
            break;
        }
        a.swap_columns(j, best);
        perm.swap(j, best);
        let mut v = a.view((j, j), (n - j, 1)).clone_owned().column(0).into_owned();
        let alpha = if v[0] >= 0.0 { -nrm } else { nrm };
        v[0] -= alpha;
        let vn = v.norm();
        if vn > 0.0 {
            v /= vn;
            let mut sub = a.view_mut((j, j), (n - j, p - j));
            let proj = v.transpose() * &sub;
            sub -= &v * proj * 2.0;
        }
        reflectors.push(v);
        rank += 1;
    }
    let mut q = DMatrix::identity(n, n);
    for (j, v) in reflectors.iter().enumerate().rev() {
        let mut sub = q.view_mut((j, 0), (n - j, n));
        let proj = v.transpose() * &sub;
        sub -= v * proj * 2.0;
    }
    (q, a, perm, rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_reconstructs_and_reveals_rank() {
        let mut a = DMatrix::from_fn(5, 4, |i, j| ((i * i + 3 * j * j + i * j) as f64).sin());
        let c0 = a.column(0).into_owned();
        let c1 = a.column(1).into_owned();
        a.set_column(3, &(c0 * 2.0 - c1));
        let (q, r, perm, rank) = pivoted_qr(a.clone());
        assert_eq!(rank, 3);
        assert!((q.transpose() * &q - DMatrix::identity(5, 5)).norm() < 1e-12);
        let mut ap = DMatrix::zeros(5, 4);
        for (k, &c) in perm.iter().enumerate() {
            ap.set_column(k, &a.column(c));
        }
        assert!((&q * &r - ap).norm() < 1e-12);
    }

    #[test]
    fn nullspace_parametrizes_solutions() {
        let rows = vec![
            LinearRow::new(vec![(0, 1.0), (1, 1.0)], 2.0),
            LinearRow::new(vec![(1, 1.0), (2, -1.0)], 0.5),
            LinearRow::new(vec![(0, 2.0), (1, 2.0)], 4.0),
        ];
        let pre = EqualityPresolve::new(4, &rows);
        assert!(pre.consistent);
        assert_eq!(pre.rank(), 2);
        assert_eq!(pre.null.ncols(), 2);
        let w = DVector::from_vec(vec![0.3, -1.7]);
        let x = &pre.x_p + &pre.null * w;
        for r in &rows {
            assert!(r.residual(x.as_slice()).abs() < 1e-12);
        }
    }

    #[test]
    fn inconsistent_rows_are_flagged() {
        let rows = vec![LinearRow::new(vec![(0, 1.0)], 1.0), LinearRow::new(vec![(0, 3.0)], 2.0)];
        assert!(!EqualityPresolve::new(2, &rows).consistent);
    }

    #[test]
    fn multipliers_solve_compatible_systems() {
        let rows = vec![
            LinearRow::new(vec![(0, 1.0), (1, 1.0)], 0.0),
            LinearRow::new(vec![(1, 3.0)], 0.0),
        ];
        let pre = EqualityPresolve::new(3, &rows);
        // g = A^T [2, -1]
        let g = DVector::from_vec(vec![2.0, 2.0 - 3.0, 0.0]);
        let y = pre.multipliers(&g, 2);
        assert!((y[0] - 2.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
    }
}
