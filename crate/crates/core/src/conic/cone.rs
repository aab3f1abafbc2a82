//! Vectors in a product of a nonnegative orthant and PSD cones, with
//! Nesterov-Todd scaling.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConeDims {
    pub lp: usize,
    pub sdp: Vec<usize>,
}

impl ConeDims {
    /// Barrier degree.
    pub fn degree(&self) -> usize {
        self.lp + self.sdp.iter().sum::<usize>()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConeVec {
    pub lp: DVector<f64>,
    pub sdp: Vec<DMatrix<f64>>,
}

impl ConeVec {
    #[cfg(test)]
    pub fn identity(dims: &ConeDims) -> Self {
        ConeVec {
            lp: DVector::from_element(dims.lp, 1.0),
            sdp: dims.sdp.iter().map(|&k| DMatrix::identity(k, k)).collect(),
        }
    }

    pub fn dot(&self, o: &ConeVec) -> f64 {
        self.lp.dot(&o.lp) + self.sdp.iter().zip(&o.sdp).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn axpy(&mut self, a: f64, o: &ConeVec) {
        self.lp.axpy(a, &o.lp, 1.0);
        for (m, n) in self.sdp.iter_mut().zip(&o.sdp) {
            *m += n * a;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.lp *= a;
        for m in &mut self.sdp {
            *m *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> ConeVec {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn sub(&self, o: &ConeVec) -> ConeVec {
        let mut out = self.clone();
        out.axpy(-1.0, o);
        out
    }

    /// Smallest eigenvalue over all blocks (`+inf` for an empty cone).
    pub fn min_eig(&self) -> f64 {
        let mut m = self.lp.iter().copied().fold(f64::INFINITY, f64::min);
        for b in &self.sdp {
            if b.nrows() > 0 {
                m = m.min(sym(b).symmetric_eigenvalues().min());
            }
        }
        m
    }

    pub fn add_identity(&mut self, a: f64) {
        self.lp.add_scalar_mut(a);
        for b in &mut self.sdp {
            for i in 0..b.nrows() {
                b[(i, i)] += a;
            }
        }
    }

    pub fn symmetrize(&mut self) {
        for b in &mut self.sdp {
            *b = sym(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.lp.iter().all(|v| v.is_finite()) && self.sdp.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Scaling point `W` with `W^{-T} s = W z = lambda`. For PSD blocks
/// `W(U) = R^T U R` and `W^{-1}(U) = rti U rti^T`, `rti = R^{-T}`.
#[derive(Clone, Debug)]
pub(crate) struct NtScaling {
    pub d: DVector<f64>,
    pub r: Vec<DMatrix<f64>>,
    pub rti: Vec<DMatrix<f64>>,
}

/// Scaled point; diagonal in every block.
#[derive(Clone, Debug)]
pub(crate) struct Lambda {
    pub lp: DVector<f64>,
    pub sdp: Vec<DVector<f64>>,
}

#[derive(Debug)]
pub(crate) struct NotInterior;

fn block_scaling(
    s: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>), NotInterior> {
    let l1 = nalgebra::Cholesky::new(sym(s)).ok_or(NotInterior)?.unpack();
    let l2 = nalgebra::Cholesky::new(sym(z)).ok_or(NotInterior)?.unpack();
    let prod = l2.transpose() * &l1;
    let svd = prod.svd(true, true);
    let u = svd.u.ok_or(NotInterior)?;
    let v = svd.v_t.ok_or(NotInterior)?.transpose();
    let lam = svd.singular_values;
    if lam.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(NotInterior);
    }
    let inv_sqrt = DMatrix::from_diagonal(&lam.map(|l| 1.0 / l.sqrt()));
    Ok((&l1 * v * &inv_sqrt, &l2 * u * inv_sqrt, lam))
}

impl NtScaling {
    pub fn compute(s: &ConeVec, z: &ConeVec) -> Result<(NtScaling, Lambda), NotInterior> {
        if s.lp.iter().chain(z.lp.iter()).any(|&v| !(v > 0.0)) {
            return Err(NotInterior);
        }
        let d = s.lp.zip_map(&z.lp, |a, b| (a / b).sqrt());
        let lam_lp = s.lp.zip_map(&z.lp, |a, b| (a * b).sqrt());
        let mut r = Vec::new();
        let mut rti = Vec::new();
        let mut lam = Vec::new();
        for (sb, zb) in s.sdp.iter().zip(&z.sdp) {
            let (rb, tb, lb) = block_scaling(sb, zb)?;
            r.push(rb);
            rti.push(tb);
            lam.push(lb);
        }
        Ok((NtScaling { d, r, rti }, Lambda { lp: lam_lp, sdp: lam }))
    }

    /// Updates the scaling from scaled iterates `st = W^{-T} s_new`,
    /// `zt = W z_new`.
    pub fn update(&mut self, st: &ConeVec, zt: &ConeVec) -> Result<Lambda, NotInterior> {
        if st.lp.iter().chain(zt.lp.iter()).any(|&v| !(v > 0.0)) {
            return Err(NotInterior);
        }
        let lam_lp = st.lp.zip_map(&zt.lp, |a, b| (a * b).sqrt());
        self.d
            .component_mul_assign(&st.lp.zip_map(&zt.lp, |a, b| (a / b).sqrt()));
        let mut lam = Vec::new();
        for j in 0..self.r.len() {
            let (rb, tb, lb) = block_scaling(&st.sdp[j], &zt.sdp[j])?;
            self.r[j] = &self.r[j] * rb;
            self.rti[j] = &self.rti[j] * tb;
            lam.push(lb);
        }
        Ok(Lambda { lp: lam_lp, sdp: lam })
    }

    /// `W U`.
    pub fn w(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lp: self.d.component_mul(&u.lp).map(|v| v),
            sdp: self.r.iter().zip(&u.sdp).map(|(r, m)| r.transpose() * m * r).collect(),
        }
    }

    /// `W^T U`.
    pub fn wt(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lp: self.d.component_mul(&u.lp),
            sdp: self.r.iter().zip(&u.sdp).map(|(r, m)| r * m * r.transpose()).collect(),
        }
    }

    /// `W^{-1} U`.
    pub fn winv(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lp: u.lp.component_div(&self.d),
            sdp: self
                .rti
                .iter()
                .zip(&u.sdp)
                .map(|(t, m)| t * m * t.transpose())
                .collect(),
        }
    }

    /// `W^{-T} U`.
    pub fn wit(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lp: u.lp.component_div(&self.d),
            sdp: self
                .rti
                .iter()
                .zip(&u.sdp)
                .map(|(t, m)| t.transpose() * m * t)
                .collect(),
        }
    }

    /// `H = W^{-1} W^{-T}` applied to `U`.
    pub fn h(&self, u: &ConeVec) -> ConeVec {
        self.winv(&self.wit(u))
    }
}

impl Lambda {
    pub fn to_cone(&self) -> ConeVec {
        ConeVec {
            lp: self.lp.clone(),
            sdp: self.sdp.iter().map(|l| DMatrix::from_diagonal(l)).collect(),
        }
    }

    /// `lambda o lambda`.
    pub fn square(&self) -> ConeVec {
        ConeVec {
            lp: self.lp.map(|v| v * v),
            sdp: self
                .sdp
                .iter()
                .map(|l| DMatrix::from_diagonal(&l.map(|v| v * v)))
                .collect(),
        }
    }

    /// `lambda o U = (Lambda U + U Lambda) / 2`.
    #[cfg(test)]
    pub fn circ(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lp: self.lp.component_mul(&u.lp),
            sdp: self
                .sdp
                .iter()
                .zip(&u.sdp)
                .map(|(l, m)| DMatrix::from_fn(l.len(), l.len(), |i, j| 0.5 * (l[i] + l[j]) * m[(i, j)]))
                .collect(),
        }
    }

    /// Inverse of `circ`: the `V` with `lambda o V = U`.
    pub fn solve_circ(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lp: u.lp.component_div(&self.lp),
            sdp: self
                .sdp
                .iter()
                .zip(&u.sdp)
                .map(|(l, m)| DMatrix::from_fn(l.len(), l.len(), |i, j| 2.0 * m[(i, j)] / (l[i] + l[j])))
                .collect(),
        }
    }

    /// Largest `alpha` (possibly infinite) with `lambda + alpha D` in the cone.
    pub fn max_step(&self, d: &ConeVec) -> f64 {
        let mut worst = f64::INFINITY;
        for (l, v) in self.lp.iter().zip(d.lp.iter()) {
            let ratio = v / l;
            worst = worst.min(ratio);
        }
        for (l, m) in self.sdp.iter().zip(&d.sdp) {
            if l.is_empty() {
                continue;
            }
            let k = l.len();
            let scaled = DMatrix::from_fn(k, k, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]) / (l[i] * l[j]).sqrt());
            worst = worst.min(scaled.symmetric_eigenvalues().min());
        }
        if worst >= 0.0 {
            f64::INFINITY
        } else {
            -1.0 / worst
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ConeDims {
        ConeDims { lp: 2, sdp: vec![3] }
    }

    fn sample(seed: f64) -> ConeVec {
        let a = DMatrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64 * seed).sin());
        ConeVec {
            lp: DVector::from_vec(vec![1.0 + seed, 2.0 - seed * 0.5]),
            sdp: vec![&a * a.transpose() + DMatrix::identity(3, 3) * 0.1],
        }
    }

    #[test]
    fn scaling_maps_s_and_z_to_lambda() {
        let s = sample(0.7);
        let z = sample(1.3);
        let (w, lam) = NtScaling::compute(&s, &z).unwrap();
        let l = lam.to_cone();
        assert!(w.wit(&s).sub(&l).norm() < 1e-10);
        assert!(w.w(&z).sub(&l).norm() < 1e-10);
        let u = sample(0.2);
        assert!(w.winv(&w.w(&u)).sub(&u).norm() < 1e-10);
        assert!(w.wit(&w.wt(&u)).sub(&u).norm() < 1e-10);
    }

    #[test]
    fn update_matches_fresh_scaling() {
        let s = sample(0.7);
        let z = sample(1.3);
        let (mut w, _) = NtScaling::compute(&s, &z).unwrap();
        let s2 = sample(0.9);
        let z2 = sample(0.4);
        let st = w.wit(&s2);
        let zt = w.w(&z2);
        let lam = w.update(&st, &zt).unwrap();
        let l = lam.to_cone();
        assert!(w.wit(&s2).sub(&l).norm() < 1e-9);
        assert!(w.w(&z2).sub(&l).norm() < 1e-9);
    }

    #[test]
    fn circ_inverse_and_step() {
        let (_, lam) = NtScaling::compute(&sample(0.7), &sample(1.3)).unwrap();
        let u = sample(0.2);
        assert!(lam.circ(&lam.solve_circ(&u)).sub(&u).norm() < 1e-10);
        let mut d = ConeVec::identity(&dims());
        d.scale(-1.0);
        let a = lam.max_step(&d);
        let mut edge = lam.to_cone();
        edge.axpy(a, &d);
        assert!(edge.min_eig().abs() < 1e-10);
    }
}
