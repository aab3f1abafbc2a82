//! Numerical rank of moment matrices and recovery of atoms from
//! (near-)atomic moment sequences.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyalg::{monomial_count, monomials_up_to, MultiIndex};

pub const DEFAULT_RANK_TOL: f64 = 1e-3;
pub const DEFAULT_SEED: u64 = 0x5eed_1d0c;
pub const SEED_ENV: &str = "PEAKCERT_SEED";

/// Largest negative weight tolerated before extraction is declared failed.
const WEIGHT_TOL: f64 = 1e-6;
/// Echelon pivots need a residual above this fraction of the largest row.
const PIVOT_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicDecomposition {
    pub rank: usize,
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub residual: f64,
    pub flat: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractOptions {
    pub rank_tol: f64,
    pub seed: u64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            rank_tol: DEFAULT_RANK_TOL,
            seed: seed_from_env(),
        }
    }
}

/// Seed from `PEAKCERT_SEED`, or the built-in default.
pub fn seed_from_env() -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_SEED)
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut s: Vec<f64> = sym.symmetric_eigenvalues().iter().map(|v| v.abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn estimate_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let s = singular_values(m);
    let Some(&top) = s.first() else { return 0 };
    let cut = tol * top.max(1.0);
    s.iter().filter(|&&v| v > cut).count()
}

pub fn flatness_check(md: &DMatrix<f64>, md_prev: &DMatrix<f64>, tol: f64) -> bool {
    estimate_rank(md, tol) == estimate_rank(md_prev, tol)
}

/// Order of a moment matrix in `nvars` variables from its side length.
pub fn matrix_order(nvars: usize, side: usize) -> Option<usize> {
    (0..)
        .map_while(|k| monomial_count(nvars, k).ok().filter(|&c| c <= side).map(|c| (k, c)))
        .find(|&(_, c)| c == side)
        .map(|(k, _)| k)
}

/// Leading principal block of order `k` (graded monomial order).
pub fn principal_block(m: &DMatrix<f64>, nvars: usize, k: usize) -> DMatrix<f64> {
    let s = monomial_count(nvars, k).unwrap_or(usize::MAX).min(m.nrows());
    m.view((0, 0), (s, s)).into_owned()
}

/// Recovers `r` atoms and weights from a moment matrix indexed by the graded
/// monomials of `nvars` variables.
pub fn extract_atoms(m: &DMatrix<f64>, nvars: usize, r: usize, opts: &ExtractOptions) -> Result<AtomicDecomposition> {
    let k = matrix_order(nvars, m.nrows())
        .ok_or_else(|| Error::ExtractionFailed(format!("side {} is not a moment-matrix size", m.nrows())))?;
    if r == 0 || r > m.nrows() {
        return Err(Error::ExtractionFailed(format!("rank {r} out of range")));
    }
    let basis = monomials_up_to(nvars, k);
    let index: HashMap<&MultiIndex, usize> = basis.iter().enumerate().map(|(i, b)| (b, i)).collect();
    let mass = m[(0, 0)];
    let (atoms, weights) = if r == 1 {
        let atom = (0..nvars)
            .map(|i| {
                let e = MultiIndex::unit(nvars, i);
                index
                    .get(&e)
                    .map(|&j| m[(j, 0)] / mass)
                    .ok_or_else(|| Error::ExtractionFailed("order-0 matrix has no first moments".into()))
            })
            .collect::<Result<Vec<f64>>>()?;
        (vec![atom], vec![mass])
    } else {
        let atoms = multiplication_atoms(m, nvars, r, &basis, &index, opts.seed)?;
        let weights = vandermonde_weights(m, &basis, &atoms)?;
        (atoms, weights)
    };
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by(|&a, &b| {
        atoms[a]
            .iter()
            .zip(&atoms[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let atoms: Vec<Vec<f64>> = order.iter().map(|&i| atoms[i].clone()).collect();
    let weights: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let residual = (m - reconstruct(&basis, &atoms, &weights)).norm();
    let flat = k == 0 || estimate_rank(&principal_block(m, nvars, k - 1), opts.rank_tol) == r;
    Ok(AtomicDecomposition {
        rank: r,
        atoms,
        weights,
        residual,
        flat,
    })
}

/// Moment matrix of a weighted sum of Dirac masses.
pub fn atomic_moment_matrix(nvars: usize, k: usize, atoms: &[Vec<f64>], weights: &[f64]) -> DMatrix<f64> {
    reconstruct(&monomials_up_to(nvars, k), atoms, weights)
}

fn reconstruct(basis: &[MultiIndex], atoms: &[Vec<f64>], weights: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(basis.len(), basis.len());
    for (a, &w) in atoms.iter().zip(weights) {
        let v = DVector::from_iterator(basis.len(), basis.iter().map(|b| b.eval(a)));
        out += &v * v.transpose() * w;
    }
    out
}

fn multiplication_atoms(
    m: &DMatrix<f64>,
    nvars: usize,
    r: usize,
    basis: &[MultiIndex],
    index: &HashMap<&MultiIndex, usize>,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let v = low_rank_factor(m, r)?;
    let pivots = echelon_pivots(&v, basis, r)?;
    let vp = v.select_rows(&pivots);
    let inv = vp
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::ExtractionFailed("singular pivot block".into()))?;
    let u = &v * inv;

    let mut mult = Vec::with_capacity(nvars);
    for i in 0..nvars {
        let e = MultiIndex::unit(nvars, i);
        let mut n = DMatrix::zeros(r, r);
        for (row, &p) in pivots.iter().enumerate() {
            let shifted = basis[p].add(&e);
            let &j = index.get(&shifted).ok_or_else(|| {
                Error::ExtractionFailed(format!("monomial basis reaches degree {}", basis[p].degree()))
            })?;
            n.set_row(row, &u.row(j));
        }
        mult.push(n);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lambda: Vec<f64> = (0..nvars).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l /= s);
    let mut comb = DMatrix::zeros(r, r);
    for (l, n) in lambda.iter().zip(&mult) {
        comb += n * *l;
    }
    let scale = comb.norm().max(1e-300);
    let (q, t) = Schur::try_new(comb, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::ExtractionFailed("Schur decomposition did not converge".into()))?
        .unpack();
    for j in 1..r {
        if t[(j, j - 1)].abs() > 1e-6 * scale {
            return Err(Error::ExtractionFailed(
                "complex eigenvalues in multiplication matrices".into(),
            ));
        }
    }
    Ok((0..r)
        .map(|j| {
            let qj = q.column(j);
            mult.iter().map(|n| qj.dot(&(n * qj))).collect()
        })
        .collect())
}

/// `V` with `M ~ V V^T`, from the `r` leading eigenpairs.
fn low_rank_factor(m: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut v = DMatrix::zeros(m.nrows(), r);
    for (c, &i) in idx.iter().take(r).enumerate() {
        let l = eig.eigenvalues[i];
        if l <= 0.0 {
            return Err(Error::ExtractionFailed(format!(
                "only {c} positive eigenvalues for rank {r}"
            )));
        }
        v.set_column(c, &(eig.eigenvectors.column(i) * l.sqrt()));
    }
    Ok(v)
}

/// Rows of `v` forming a column-echelon basis, lowest degree first; within a
/// degree the row with the largest residual wins.
fn echelon_pivots(v: &DMatrix<f64>, basis: &[MultiIndex], r: usize) -> Result<Vec<usize>> {
    let top = (0..v.nrows()).map(|i| v.row(i).norm()).fold(0.0, f64::max);
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let maxdeg = basis.last().map_or(0, |b| b.degree());
    for deg in 0..=maxdeg {
        let rows: Vec<usize> = (0..basis.len()).filter(|&i| basis[i].degree() == deg).collect();
        while pivots.len() < r {
            let best = rows
                .iter()
                .filter(|i| !pivots.contains(*i))
                .map(|&i| {
                    let mut w: DVector<f64> = v.row(i).transpose();
                    for b in &q {
                        w -= b * b.dot(&w);
                    }
                    (i, w)
                })
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()));
            match best {
                Some((i, w)) if w.norm() > PIVOT_TOL * top => {
                    q.push(&w / w.norm());
                    pivots.push(i);
                }
                _ => break,
            }
        }
    }
    if pivots.len() < r {
        return Err(Error::ExtractionFailed(format!(
            "found {} of {r} echelon pivots",
            pivots.len()
        )));
    }
    Ok(pivots)
}

fn vandermonde_weights(m: &DMatrix<f64>, basis: &[MultiIndex], atoms: &[Vec<f64>]) -> Result<Vec<f64>> {
    let a = DMatrix::from_fn(basis.len(), atoms.len(), |i, j| basis[i].eval(&atoms[j]));
    let y = m.column(0).into_owned();
    let w = a
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::ExtractionFailed(e.to_string()))?;
    let mass = m[(0, 0)];
    if let Some(bad) = w.iter().find(|&&x| x < -WEIGHT_TOL * mass.abs().max(1.0)) {
        return Err(Error::ExtractionFailed(format!("negative weight {bad:.3e}")));
    }
    let w: Vec<f64> = w.iter().map(|x| x.max(0.0)).collect();
    let s: f64 = w.iter().sum();
    Ok(if s > 0.0 {
        w.iter().map(|x| x * mass / s).collect()
    } else {
        w
    })
}
