//! Moment bookkeeping: the stacked decision vector, moment and localizing
//! matrices, and Liouville equality rows as sparse linear functions.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::polyalg::{lie_derivative, monomial_count, monomials_up_to, MultiIndex, Polynomial};

/// Which measure a block of moments belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MeasureId {
    /// Initial measure, over the states.
    Initial,
    /// Occupation measure, over `(t, x)` or `x`.
    Occupation,
    /// Peak measure (or terminal measure of the unsafe program), same variables
    /// as the occupation measure.
    Peak,
}

impl MeasureId {
    pub const ALL: [MeasureId; 3] = [MeasureId::Initial, MeasureId::Occupation, MeasureId::Peak];

    fn slot(self) -> usize {
        match self {
            MeasureId::Initial => 0,
            MeasureId::Occupation => 1,
            MeasureId::Peak => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MeasureBlock {
    pub nvars: usize,
    /// Largest stored moment degree.
    pub degree: usize,
    pub offset: usize,
    pub monomials: Vec<MultiIndex>,
    index: HashMap<MultiIndex, usize>,
}

impl MeasureBlock {
    fn new(nvars: usize, degree: usize, offset: usize) -> Self {
        let monomials = monomials_up_to(nvars, degree);
        let index = monomials.iter().enumerate().map(|(k, m)| (m.clone(), k)).collect();
        MeasureBlock {
            nvars,
            degree,
            offset,
            monomials,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    /// Position in the decision vector of the moment `y_alpha`.
    pub fn offset_of(&self, idx: &MultiIndex) -> Result<usize> {
        self.index
            .get(idx)
            .map(|k| self.offset + k)
            .ok_or(Error::DegreeExceedsLayout {
                requested: idx.degree(),
                stored: self.degree,
            })
    }
}

/// Offsets of every moment of the three measures and of trailing scalars in
/// one stacked decision vector.
#[derive(Clone, Debug)]
pub struct MomentLayout {
    blocks: [MeasureBlock; 3],
    scalar_offset: usize,
    nscalars: usize,
}

impl MomentLayout {
    /// `initial_vars` for the initial measure, `joint_vars` for the
    /// occupation and peak measures, moments of degree `<= degree`.
    pub fn new(initial_vars: usize, joint_vars: usize, degree: usize, nscalars: usize) -> Self {
        let b0 = MeasureBlock::new(initial_vars, degree, 0);
        let b1 = MeasureBlock::new(joint_vars, degree, b0.len());
        let b2 = MeasureBlock::new(joint_vars, degree, b1.offset + b1.len());
        let scalar_offset = b2.offset + b2.len();
        MomentLayout {
            blocks: [b0, b1, b2],
            scalar_offset,
            nscalars,
        }
    }

    pub fn block(&self, m: MeasureId) -> &MeasureBlock {
        &self.blocks[m.slot()]
    }

    pub fn scalar(&self, i: usize) -> usize {
        assert!(i < self.nscalars);
        self.scalar_offset + i
    }

    pub fn nscalars(&self) -> usize {
        self.nscalars
    }

    pub fn len(&self) -> usize {
        self.scalar_offset + self.nscalars
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether the measure's variables include time (as variable 0).
    pub fn has_time(&self, m: MeasureId) -> bool {
        self.block(m).nvars != self.blocks[0].nvars
    }

    /// Moment vector slice of one measure.
    pub fn moments<'a>(&self, m: MeasureId, x: &'a [f64]) -> &'a [f64] {
        let b = self.block(m);
        &x[b.offset..b.offset + b.len()]
    }
}

/// Affine functional `sum coef * x[offset] + constant` with sorted, merged terms.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LinearFunctional {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearFunctional {
    pub fn new(mut terms: Vec<(usize, f64)>, constant: f64) -> Self {
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (k, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == k => last.1 += c,
                _ => merged.push((k, c)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        LinearFunctional {
            terms: merged,
            constant,
        }
    }

    pub fn single(offset: usize, coef: f64) -> Self {
        Self::new(vec![(offset, coef)], 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(k, c)| c * x[k]).sum::<f64>()
    }

    pub fn max_offset(&self) -> Option<usize> {
        self.terms.last().map(|t| t.0)
    }
}

/// Equality row `sum coef * x[offset] = rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        LinearRow {
            terms: LinearFunctional::new(terms, 0.0).terms,
            rhs,
        }
    }

    pub fn residual(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(k, c)| c * x[k]).sum::<f64>() - self.rhs
    }
}

/// Symmetric matrix whose entries are affine in the decision vector. Only the
/// upper triangle is stored, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMatrixForm {
    pub side: usize,
    pub entries: Vec<LinearFunctional>,
}

impl LinearMatrixForm {
    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize) -> LinearFunctional) -> Self {
        let mut entries = Vec::with_capacity(side * (side + 1) / 2);
        for r in 0..side {
            for c in r..side {
                entries.push(f(r, c));
            }
        }
        LinearMatrixForm { side, entries }
    }

    pub fn entry(&self, r: usize, c: usize) -> &LinearFunctional {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        // rows before r hold side, side - 1, ..., side - r + 1 entries
        let start = r * self.side - r * r.saturating_sub(1) / 2;
        &self.entries[start + (c - r)]
    }

    /// Iterates `(row, col, functional)` over the stored upper triangle.
    pub fn upper(&self) -> impl Iterator<Item = (usize, usize, &LinearFunctional)> {
        let side = self.side;
        (0..side)
            .flat_map(move |r| (r..side).map(move |c| (r, c)))
            .zip(&self.entries)
            .map(|((r, c), e)| (r, c, e))
    }

    pub fn instantiate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.side, self.side);
        for (r, c, e) in self.upper() {
            let v = e.eval(x);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }

    pub fn max_offset(&self) -> Option<usize> {
        self.entries.iter().filter_map(LinearFunctional::max_offset).max()
    }

    /// Principal submatrix on the given rows.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        LinearMatrixForm::from_fn(keep.len(), |r, c| self.entry(keep[r], keep[c]).clone())
    }
}

/// Positions in the order-`k` monomial basis that survive elimination of
/// `span{h x^beta : deg(h x^beta) <= k, h in eq}`.
///
/// Once the moments satisfy `<h x^gamma, mu> = 0`, that span lies in the kernel
/// of every moment or localizing matrix of order `k`, and each eliminated
/// monomial is a fixed combination of the kept ones; the principal submatrix
/// on the kept positions is then PSD exactly when the full matrix is.
pub fn standard_monomials(nvars: usize, eq: &[Polynomial], k: usize) -> Vec<usize> {
    let basis = monomials_up_to(nvars, k);
    let n = basis.len();
    let index: HashMap<&MultiIndex, usize> = basis.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let mut gens: Vec<Vec<f64>> = Vec::new();
    for h in eq {
        let Some(dh) = h.degree() else { continue };
        if dh > k {
            continue;
        }
        for beta in &basis[..monomial_count(nvars, k - dh).unwrap_or(0)] {
            let mut row = vec![0.0; n];
            for (m, c) in h.terms() {
                row[index[&m.add(beta)]] += c;
            }
            gens.push(row);
        }
    }
    let scale = gens.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut used = vec![false; gens.len()];
    let mut pivot = vec![false; n];
    for j in (0..n).rev() {
        let best = (0..gens.len())
            .filter(|&i| !used[i])
            .max_by(|&a, &b| gens[a][j].abs().total_cmp(&gens[b][j].abs()));
        let Some(p) = best else { break };
        if gens[p][j].abs() <= 1e-9 * scale {
            continue;
        }
        used[p] = true;
        pivot[j] = true;
        let prow = gens[p].clone();
        for (i, row) in gens.iter_mut().enumerate() {
            if i == p || row[j] == 0.0 {
                continue;
            }
            let f = row[j] / prow[j];
            for (v, pv) in row.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
        }
    }
    (0..n).filter(|&j| !pivot[j]).collect()
}

/// `<w, mu>` for a polynomial over the measure's variables.
pub fn functional(layout: &MomentLayout, measure: MeasureId, w: &Polynomial) -> Result<LinearFunctional> {
    let b = layout.block(measure);
    if w.nvars() != b.nvars {
        return Err(Error::DimensionMismatch {
            expected: b.nvars,
            found: w.nvars(),
        });
    }
    let terms = w
        .terms()
        .map(|(m, c)| Ok((b.offset_of(m)?, c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearFunctional::new(terms, 0.0))
}

/// `M_d(y)`: cell `(alpha, beta)` is `y_{alpha + beta}`.
pub fn moment_matrix(layout: &MomentLayout, measure: MeasureId, d: usize) -> Result<LinearMatrixForm> {
    localizing_matrix(
        layout,
        measure,
        &Polynomial::constant(layout.block(measure).nvars, 1.0),
        d,
    )
}

/// Half-degree `ceil(deg g / 2)` of a constraint polynomial.
pub fn half_degree(g: &Polynomial) -> usize {
    g.degree().unwrap_or(0).div_ceil(2)
}

/// `M_{d - ceil(deg g / 2)}(g y)`: cell `(alpha, beta)` is
/// `sum_gamma g_gamma y_{alpha + beta + gamma}`.
pub fn localizing_matrix(
    layout: &MomentLayout,
    measure: MeasureId,
    g: &Polynomial,
    d: usize,
) -> Result<LinearMatrixForm> {
    let b = layout.block(measure);
    if g.nvars() != b.nvars {
        return Err(Error::DimensionMismatch {
            expected: b.nvars,
            found: g.nvars(),
        });
    }
    let dk = half_degree(g);
    if d < dk {
        return Err(Error::DegreeTooSmall {
            degree: d,
            required: dk,
        });
    }
    let order = d - dk;
    if 2 * d > b.degree {
        return Err(Error::DegreeExceedsLayout {
            requested: 2 * d,
            stored: b.degree,
        });
    }
    let side = monomial_count(b.nvars, order)?;
    let basis = &b.monomials[..side];
    let gterms: Vec<(&MultiIndex, f64)> = g.terms().collect();
    let mut err = None;
    let form = LinearMatrixForm::from_fn(side, |r, c| {
        let ab = basis[r].add(&basis[c]);
        let mut terms = Vec::with_capacity(gterms.len());
        for &(gm, gc) in &gterms {
            match b.offset_of(&ab.add(gm)) {
                Ok(off) => terms.push((off, gc)),
                Err(e) => err = Some(e),
            }
        }
        LinearFunctional::new(terms, 0.0)
    });
    match err {
        Some(e) => Err(e),
        None => Ok(form),
    }
}

/// Rows `<h x^gamma, mu> = 0` for every `gamma` with `deg(h x^gamma) <= 2d`.
pub fn zero_localizing_rows(
    layout: &MomentLayout,
    measure: MeasureId,
    h: &Polynomial,
    d: usize,
) -> Result<Vec<LinearRow>> {
    let b = layout.block(measure);
    let dk = half_degree(h);
    if d < dk {
        return Err(Error::DegreeTooSmall {
            degree: d,
            required: dk,
        });
    }
    let top = 2 * d - h.degree().unwrap_or(0);
    let count = monomial_count(b.nvars, top)?;
    b.monomials[..count]
        .iter()
        .map(|gamma| {
            let terms = h
                .terms()
                .map(|(m, c)| Ok((b.offset_of(&m.add(gamma))?, c)))
                .collect::<Result<Vec<_>>>()?;
            Ok(LinearRow::new(terms, 0.0))
        })
        .collect()
}

/// Liouville rows `<v(0,x), mu0> + <L_f v, mu> - <v, mu_p> = 0` for every test
/// monomial `v` of the joint variables with `deg v <= test_degree` whose
/// `L_f v` fits in the stored occupation moments. Returns the test monomial
/// alongside each row.
///
/// `f` holds the dynamics over the joint tuple; with a time-dependent layout,
/// variable 0 of the joint tuple is time.
pub fn liouville_rows(
    layout: &MomentLayout,
    f: &[Polynomial],
    test_degree: usize,
    time_dependent: bool,
) -> Result<Vec<(MultiIndex, LinearRow)>> {
    let occ = layout.block(MeasureId::Occupation);
    let init = layout.block(MeasureId::Initial);
    if time_dependent != layout.has_time(MeasureId::Occupation) {
        return Err(Error::InvalidProblem(
            "layout horizon mode does not match the dynamics".into(),
        ));
    }
    let top = occ.degree;
    let mut rows = Vec::new();
    for v_idx in monomials_up_to(occ.nvars, test_degree) {
        let v = Polynomial::monomial(v_idx.clone(), 1.0);
        let lv = lie_derivative(&v, f, time_dependent)?;
        if lv.degree().is_some_and(|k| k > top) {
            continue;
        }
        let mut terms = Vec::new();
        // v(0, x) on the initial measure: only monomials without t survive
        let t_exp = if time_dependent { v_idx.exponents()[0] } else { 0 };
        if t_exp == 0 {
            let x_idx = if time_dependent {
                MultiIndex::new(v_idx.exponents()[1..].to_vec())
            } else {
                v_idx.clone()
            };
            terms.push((init.offset_of(&x_idx)?, 1.0));
        }
        for (m, c) in lv.terms() {
            terms.push((occ.offset_of(m)?, c));
        }
        terms.push((layout.block(MeasureId::Peak).offset_of(&v_idx)?, -1.0));
        rows.push((v_idx, LinearRow::new(terms, 0.0)));
    }
    Ok(rows)
}

/// `y^0_0 = 1`.
pub fn mass_row(layout: &MomentLayout) -> LinearRow {
    LinearRow::new(vec![(layout.block(MeasureId::Initial).offset, 1.0)], 1.0)
}

/// Moments of a weighted sum of Dirac masses for one block.
pub fn atomic_moments(block: &MeasureBlock, atoms: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    block
        .monomials
        .iter()
        .map(|m| atoms.iter().zip(weights).map(|(a, w)| w * m.eval(a)).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use crate::polyalg::parse_polynomial;

    use super::*;

    fn row_eval(row: &LinearRow, x: &[f64]) -> f64 {
        row.residual(x)
    }

    #[test]
    fn entry_indexing_matches_iteration() {
        let layout = MomentLayout::new(2, 2, 6, 0);
        let m = moment_matrix(&layout, MeasureId::Initial, 3).unwrap();
        for (r, c, e) in m.upper() {
            assert_eq!(m.entry(r, c), e);
            assert_eq!(m.entry(c, r), e);
        }
    }

    #[test]
    fn univariate_moment_matrix() {
        let layout = MomentLayout::new(1, 1, 2, 0);
        let m = moment_matrix(&layout, MeasureId::Initial, 1).unwrap();
        assert_eq!(m.side, 2);
        assert_eq!(m.entry(0, 0).terms, vec![(0, 1.0)]);
        assert_eq!(m.entry(0, 1).terms, vec![(1, 1.0)]);
        assert_eq!(m.entry(1, 1).terms, vec![(2, 1.0)]);
    }

    #[test]
    fn bivariate_cross_cell() {
        let layout = MomentLayout::new(2, 2, 2, 0);
        let m = moment_matrix(&layout, MeasureId::Initial, 1).unwrap();
        assert_eq!(m.side, 3);
        let b = layout.block(MeasureId::Initial);
        let y11 = b.offset_of(&MultiIndex::new(vec![1, 1])).unwrap();
        assert_eq!(m.entry(1, 2).terms, vec![(y11, 1.0)]);
    }

    #[test]
    fn dirac_moment_matrix_is_rank_one() {
        let layout = MomentLayout::new(2, 2, 2, 0);
        let b = layout.block(MeasureId::Initial);
        let mut x = vec![0.0; layout.len()];
        let y = atomic_moments(b, &[vec![0.5, 0.5]], &[1.0]);
        x[..y.len()].copy_from_slice(&y);
        let m = moment_matrix(&layout, MeasureId::Initial, 1).unwrap().instantiate(&x);
        let v = nalgebra::DVector::from_vec(vec![1.0, 0.5, 0.5]);
        assert!((m - &v * v.transpose()).norm() < 1e-15);
    }

    #[test]
    fn localizing_one_minus_x_squared() {
        let layout = MomentLayout::new(1, 1, 2, 0);
        let g = &Polynomial::constant(1, 1.0) - &Polynomial::var(1, 0).pow(2);
        let m = localizing_matrix(&layout, MeasureId::Initial, &g, 1).unwrap();
        assert_eq!(m.side, 1);
        assert_eq!(m.entry(0, 0).terms, vec![(0, 1.0), (2, -1.0)]);
    }

    #[test]
    fn localizing_unit_is_moment_matrix() {
        let layout = MomentLayout::new(2, 3, 4, 0);
        let one = Polynomial::constant(3, 1.0);
        assert_eq!(
            localizing_matrix(&layout, MeasureId::Peak, &one, 2).unwrap(),
            moment_matrix(&layout, MeasureId::Peak, 2).unwrap()
        );
    }

    #[test]
    fn time_localizer_shape() {
        // t (1 - t) on (t, x1, x2), d = 3: order-2 block over 3 variables
        let layout = MomentLayout::new(2, 3, 6, 0);
        let t = Polynomial::var(3, 0);
        let g = &t - &t.pow(2);
        let m = localizing_matrix(&layout, MeasureId::Occupation, &g, 3).unwrap();
        assert_eq!(m.side, 10);
        let b = layout.block(MeasureId::Occupation);
        let e = m.entry(0, 0);
        assert_eq!(
            e.terms,
            vec![
                (b.offset_of(&MultiIndex::new(vec![1, 0, 0])).unwrap(), 1.0),
                (b.offset_of(&MultiIndex::new(vec![2, 0, 0])).unwrap(), -1.0)
            ]
        );
    }

    #[test]
    fn degree_errors() {
        let layout = MomentLayout::new(1, 1, 2, 0);
        let g = Polynomial::var(1, 0).pow(3);
        assert!(matches!(
            localizing_matrix(&layout, MeasureId::Initial, &g, 1),
            Err(Error::DegreeTooSmall { .. })
        ));
        assert!(matches!(
            moment_matrix(&layout, MeasureId::Initial, 2),
            Err(Error::DegreeExceedsLayout { .. })
        ));
    }

    #[test]
    fn liouville_constant_and_time_rows() {
        let layout = MomentLayout::new(1, 2, 4, 0);
        // f = x^2 over (t, x)
        let f = vec![Polynomial::var(2, 1).pow(2)];
        let rows = liouville_rows(&layout, &f, 4, true).unwrap();
        let (m0, r0) = &rows[0];
        assert!(m0.is_zero());
        let p0 = layout.block(MeasureId::Peak).offset;
        assert_eq!(r0.terms, vec![(0, 1.0), (p0, -1.0)]);
        let (mt, rt) = &rows[1];
        assert_eq!(mt.exponents(), &[1, 0]);
        let o0 = layout.block(MeasureId::Occupation).offset;
        let pt = layout
            .block(MeasureId::Peak)
            .offset_of(&MultiIndex::new(vec![1, 0]))
            .unwrap();
        assert_eq!(rt.terms, vec![(o0, 1.0), (pt, -1.0)]);
        // every referenced moment is inside the truncation
        for (_, r) in &rows {
            assert!(r.terms.iter().all(|&(k, _)| k < layout.len()));
        }
    }

    #[test]
    fn frozen_dynamics_preserve_first_moments() {
        let layout = MomentLayout::new(2, 2, 2, 0);
        let f = vec![Polynomial::zero(2), Polynomial::zero(2)];
        let rows = liouville_rows(&layout, &f, 2, false).unwrap();
        let x1 = MultiIndex::unit(2, 0);
        let (_, r) = rows.iter().find(|(m, _)| *m == x1).unwrap();
        let i0 = layout.block(MeasureId::Initial).offset_of(&x1).unwrap();
        let ip = layout.block(MeasureId::Peak).offset_of(&x1).unwrap();
        assert_eq!(r.terms, vec![(i0, 1.0), (ip, -1.0)]);
    }

    #[test]
    fn mass_row_pins_initial_mass() {
        let layout = MomentLayout::new(2, 3, 4, 0);
        let r = mass_row(&layout);
        assert_eq!(r.terms, vec![(0, 1.0)]);
        assert_eq!(r.rhs, 1.0);
        let mut x = vec![0.0; layout.len()];
        x[0] = 1.0;
        assert_eq!(row_eval(&r, &x), 0.0);
    }

    #[test]
    fn standard_monomials_on_a_circle() {
        let h = parse_polynomial("x1^2 + x2^2 - 0.25", &["x1", "x2"]).unwrap();
        let keep = standard_monomials(2, std::slice::from_ref(&h), 3);
        assert_eq!(keep.len(), 10 - 3);
        let layout = MomentLayout::new(2, 2, 6, 0);
        let atoms: Vec<Vec<f64>> = (0..9)
            .map(|i| {
                let a = 0.7 * i as f64;
                vec![0.5 * a.cos(), 0.5 * a.sin()]
            })
            .collect();
        let b = layout.block(MeasureId::Initial);
        let y = atomic_moments(b, &atoms, &[1.0 / 9.0; 9]);
        let full = moment_matrix(&layout, MeasureId::Initial, 3).unwrap();
        let m = full.instantiate(&y);
        assert_eq!(m.rank(1e-10), 7);
        let sub = full.restrict(&keep).instantiate(&y);
        assert!(sub.symmetric_eigenvalues().min() > 1e-8);
    }

    #[test]
    fn standard_monomials_of_a_point() {
        let names = ["x1", "x2"];
        let eq = [
            parse_polynomial("x1 - 0.3", &names).unwrap(),
            parse_polynomial("x2 - 0.4", &names).unwrap(),
        ];
        assert_eq!(standard_monomials(2, &eq, 2), vec![0]);
        assert_eq!(standard_monomials(2, &[], 2).len(), 6);
    }
}
