use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use super::monomial::MultiIndex;
use crate::error::{Error, Result};

/// Terms with magnitude below this are dropped after arithmetic.
pub const DROP_TOL: f64 = 1e-14;

/// Sparse multivariate polynomial with `f64` coefficients.
///
/// Terms are kept in graded-lex order with no stored zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(MultiIndex::zero(nvars), c);
        p
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(MultiIndex::unit(nvars, i), 1.0);
        p
    }

    pub fn monomial(idx: MultiIndex, coeff: f64) -> Self {
        let mut p = Self::zero(idx.nvars());
        p.add_term(idx, coeff);
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        let mut p = Self::zero(nvars);
        for (m, c) in terms {
            assert_eq!(m.nvars(), nvars);
            *p.terms.entry(m).or_insert(0.0) += c;
        }
        p.canonicalize();
        p
    }

    fn add_term(&mut self, idx: MultiIndex, c: f64) {
        let e = self.terms.entry(idx).or_insert(0.0);
        *e += c;
    }

    fn canonicalize(&mut self) {
        self.terms.retain(|_, c| c.abs() >= DROP_TOL);
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.terms.keys().map(MultiIndex::degree).max()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, idx: &MultiIndex) -> f64 {
        self.terms.get(idx).copied().unwrap_or(0.0)
    }

    pub fn uses_var(&self, i: usize) -> bool {
        self.terms.keys().any(|m| m.exponents()[i] > 0)
    }

    /// Degree in variable `i` alone.
    pub fn degree_in(&self, i: usize) -> usize {
        self.terms.keys().map(|m| m.exponents()[i] as usize).max().unwrap_or(0)
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.nvars);
        self.terms.iter().map(|(m, c)| c * m.eval(point)).sum()
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut p = Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        };
        p.canonicalize();
        p
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    pub fn derivative(&self, var: usize) -> Polynomial {
        let mut p = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.exponents()[var];
            if e == 0 {
                continue;
            }
            let mut ex = m.exponents().to_vec();
            ex[var] -= 1;
            p.add_term(MultiIndex::new(ex), c * e as f64);
        }
        p.canonicalize();
        p
    }

    /// Inserts `extra` new variables at position `at`; existing terms do not use them.
    pub fn lift(&self, at: usize, extra: usize) -> Polynomial {
        Polynomial {
            nvars: self.nvars + extra,
            terms: self.terms.iter().map(|(m, &c)| (m.lift(at, extra), c)).collect(),
        }
    }

    /// Removes variable `var`, which must not appear in any term.
    pub fn drop_var(&self, var: usize) -> Polynomial {
        assert!(!self.uses_var(var));
        Polynomial {
            nvars: self.nvars - 1,
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| {
                    let mut ex = m.exponents().to_vec();
                    ex.remove(var);
                    (MultiIndex::new(ex), c)
                })
                .collect(),
        }
    }

    /// Substitutes `x_i <- scale[i] * x_i + shift[i]` for every variable.
    pub fn compose_affine(&self, scale: &[f64], shift: &[f64]) -> Polynomial {
        assert_eq!(scale.len(), self.nvars);
        assert_eq!(shift.len(), self.nvars);
        let n = self.nvars;
        let images: Vec<Polynomial> = (0..n)
            .map(|i| &Polynomial::var(n, i).scale(scale[i]) + &Polynomial::constant(n, shift[i]))
            .collect();
        let mut out = Polynomial::zero(n);
        let mut powers: Vec<Vec<Polynomial>> = images
            .iter()
            .map(|p| vec![Polynomial::constant(n, 1.0), p.clone()])
            .collect();
        for (m, &c) in &self.terms {
            let mut term = Polynomial::constant(n, c);
            for (i, &e) in m.exponents().iter().enumerate() {
                while powers[i].len() <= e as usize {
                    let next = powers[i].last().unwrap() * &images[i];
                    powers[i].push(next);
                }
                if e > 0 {
                    term = &term * &powers[i][e as usize];
                }
            }
            out = &out + &term;
        }
        out
    }

    /// Substitutes each variable with a polynomial (all over the same tuple).
    pub fn substitute(&self, images: &[Polynomial]) -> Polynomial {
        assert_eq!(images.len(), self.nvars);
        let m = images.first().map_or(0, Polynomial::nvars);
        let mut out = Polynomial::zero(m);
        for (idx, &c) in &self.terms {
            let mut term = Polynomial::constant(m, c);
            for (i, &e) in idx.exponents().iter().enumerate() {
                if e > 0 {
                    term = &term * &images[i].pow(e);
                }
            }
            out = &out + &term;
        }
        out
    }

    /// Largest coefficient magnitude.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Lie derivative of `v` along `f`.
///
/// With `time_dependent`, variable 0 is time and `f[i]` is the rate of variable
/// `i + 1`; the result is `dv/dt + sum_i dv/dx_i f_i`. Otherwise every variable
/// is a state and the time term is absent.
pub fn lie_derivative(v: &Polynomial, f: &[Polynomial], time_dependent: bool) -> Result<Polynomial> {
    let offset = usize::from(time_dependent);
    let expected = f.len() + offset;
    if v.nvars() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: v.nvars(),
        });
    }
    if let Some(bad) = f.iter().find(|fi| fi.nvars() != expected) {
        return Err(Error::DimensionMismatch {
            expected,
            found: bad.nvars(),
        });
    }
    let mut out = if time_dependent {
        v.derivative(0)
    } else {
        Polynomial::zero(expected)
    };
    for (i, fi) in f.iter().enumerate() {
        let dv = v.derivative(i + offset);
        if !dv.is_zero() {
            out = &out + &(&dv * fi);
        }
    }
    Ok(out)
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars, "polynomials over different variable tuples");
        let mut out = self.clone();
        for (m, &c) in &rhs.terms {
            out.add_term(m.clone(), c);
        }
        out.canonicalize();
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, &c)| (m.clone(), -c)).collect(),
        }
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars, "polynomials over different variable tuples");
        let mut out = Polynomial::zero(self.nvars);
        for (a, &ca) in &self.terms {
            for (b, &cb) in &rhs.terms {
                out.add_term(a.add(b), ca * cb);
            }
        }
        out.canonicalize();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(n: usize, i: usize) -> Polynomial {
        Polynomial::var(n, i)
    }

    #[test]
    fn constant_has_zero_lie_derivative() {
        let f = vec![x(2, 1), &x(2, 0) * &x(2, 1)];
        let v = Polynomial::constant(2, 1.0);
        assert!(lie_derivative(&v, &f, false).unwrap().is_zero());
    }

    #[test]
    fn time_has_unit_lie_derivative() {
        let f = vec![x(3, 2), x(3, 1)];
        let v = x(3, 0);
        let lv = lie_derivative(&v, &f, true).unwrap();
        assert_eq!(lv, Polynomial::constant(3, 1.0));
    }

    #[test]
    fn dimension_mismatch() {
        let f = vec![x(2, 1)];
        assert!(matches!(
            lie_derivative(&x(2, 0), &f, false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_terms_are_dropped() {
        let p = &x(2, 0) - &x(2, 0);
        assert!(p.is_zero());
        assert_eq!(p.degree(), None);
        let q = &(&x(2, 0) + &Polynomial::constant(2, 1e-16)) - &x(2, 0);
        assert!(q.is_zero());
    }

    #[test]
    fn affine_composition() {
        // (x+1)^2 at x -> 2x - 1 gives 4x^2
        let p = (&x(1, 0) + &Polynomial::constant(1, 1.0)).pow(2);
        let q = p.compose_affine(&[2.0], &[-1.0]);
        assert_eq!(q, Polynomial::monomial(MultiIndex::new(vec![2]), 4.0));
    }

    #[test]
    fn lift_and_drop() {
        let p = &x(2, 0) * &x(2, 1);
        let l = p.lift(0, 1);
        assert_eq!(l.nvars(), 3);
        assert!(!l.uses_var(0));
        assert_eq!(l.eval(&[9.0, 2.0, 3.0]), 6.0);
        assert_eq!(l.drop_var(0), p);
    }
}
