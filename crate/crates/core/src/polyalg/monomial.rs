//! Multi-indices and the graded-lex bijection used for every moment vector.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// Exponent vector of a monomial `x^alpha`.
///
/// Ordered graded-lexicographically: lower total degree first, then
/// lexicographically with larger leading exponents first, so that in two
/// variables the sequence is `1, x1, x2, x1^2, x1 x2, x2^2, ...`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exponents: Vec<u32>,
    degree: u32,
}

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        let degree = exponents.iter().sum();
        MultiIndex { exponents, degree }
    }

    pub fn zero(nvars: usize) -> Self {
        MultiIndex {
            exponents: vec![0; nvars],
            degree: 0,
        }
    }

    /// The monomial `x_var`.
    pub fn unit(nvars: usize, var: usize) -> Self {
        let mut exponents = vec![0; nvars];
        exponents[var] = 1;
        MultiIndex { exponents, degree: 1 }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn nvars(&self) -> usize {
        self.exponents.len()
    }

    pub fn degree(&self) -> usize {
        self.degree as usize
    }

    pub fn is_zero(&self) -> bool {
        self.degree == 0
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.nvars(), other.nvars());
        MultiIndex {
            exponents: self
                .exponents
                .iter()
                .zip(&other.exponents)
                .map(|(a, b)| a + b)
                .collect(),
            degree: self.degree + other.degree,
        }
    }

    /// Evaluates `x^alpha` at a point.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(point)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }

    /// Inserts `extra` zero exponents starting at position `at`.
    pub fn lift(&self, at: usize, extra: usize) -> MultiIndex {
        let mut exponents = Vec::with_capacity(self.nvars() + extra);
        exponents.extend_from_slice(&self.exponents[..at]);
        exponents.extend(std::iter::repeat_n(0, extra));
        exponents.extend_from_slice(&self.exponents[at..]);
        MultiIndex {
            exponents,
            degree: self.degree,
        }
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree
            .cmp(&other.degree)
            .then_with(|| other.exponents.cmp(&self.exponents))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.exponents)
    }
}

/// Number of monomials of total degree at most `degree` in `nvars` variables,
/// `binomial(nvars + degree, degree)`.
pub fn monomial_count(nvars: usize, degree: usize) -> Result<usize> {
    let overflow = || Error::CountOverflow { nvars, degree };
    let mut c: u128 = 1;
    for i in 1..=degree as u128 {
        c = c.checked_mul(nvars as u128 + i).ok_or_else(overflow)? / i;
    }
    usize::try_from(c).map_err(|_| overflow())
}

fn count(nvars: usize, degree: usize) -> usize {
    monomial_count(nvars, degree).expect("monomial count overflow")
}

/// Position of `idx` in the graded-lex enumeration of its variable count.
pub fn rank_monomial(idx: &MultiIndex) -> usize {
    let n = idx.nvars();
    let d = idx.degree();
    if d == 0 {
        return 0;
    }
    let mut rank = count(n, d - 1);
    let mut remaining = d;
    for (i, &e) in idx.exponents.iter().enumerate() {
        let rest = n - i - 1;
        if rest == 0 {
            break;
        }
        let e = e as usize;
        // monomials in this degree slice with a larger exponent at position i
        if remaining > e {
            rank += count(rest, remaining - e - 1);
        }
        remaining -= e;
    }
    rank
}

/// Inverse of [`rank_monomial`].
pub fn unrank_monomial(rank: usize, nvars: usize) -> MultiIndex {
    if nvars == 0 {
        assert_eq!(rank, 0, "only the constant monomial exists with zero variables");
        return MultiIndex::zero(0);
    }
    let mut degree = 0;
    while count(nvars, degree) <= rank {
        degree += 1;
    }
    let mut pos = rank - if degree == 0 { 0 } else { count(nvars, degree - 1) };
    let mut exponents = vec![0u32; nvars];
    let mut remaining = degree;
    for i in 0..nvars {
        let rest = nvars - i - 1;
        if rest == 0 {
            exponents[i] = remaining as u32;
            break;
        }
        // try exponents from `remaining` downwards; each choice e owns a block of
        // monomials of exact degree remaining - e in the remaining variables
        let mut e = remaining;
        loop {
            let block = exact_count(rest, remaining - e);
            if pos < block {
                break;
            }
            pos -= block;
            e -= 1;
        }
        exponents[i] = e as u32;
        remaining -= e;
    }
    MultiIndex::new(exponents)
}

fn exact_count(nvars: usize, degree: usize) -> usize {
    if nvars == 0 {
        return usize::from(degree == 0);
    }
    if degree == 0 {
        1
    } else {
        count(nvars, degree) - count(nvars, degree - 1)
    }
}

/// All multi-indices of degree at most `degree`, in graded-lex order.
pub fn monomials_up_to(nvars: usize, degree: usize) -> Vec<MultiIndex> {
    let total = count(nvars, degree);
    let mut out = Vec::with_capacity(total);
    for d in 0..=degree {
        push_exact(nvars, d, &mut Vec::with_capacity(nvars), &mut out);
    }
    out
}

fn push_exact(nvars: usize, degree: usize, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if prefix.len() + 1 == nvars {
        prefix.push(degree as u32);
        out.push(MultiIndex::new(prefix.clone()));
        prefix.pop();
        return;
    }
    if nvars == 0 {
        if degree == 0 {
            out.push(MultiIndex::zero(0));
        }
        return;
    }
    for e in (0..=degree).rev() {
        prefix.push(e as u32);
        push_exact(nvars, degree - e, prefix, out);
        prefix.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(monomial_count(2, 7).unwrap(), 36);
        assert_eq!(monomial_count(0, 5).unwrap(), 1);
        assert_eq!(monomial_count(3, 1).unwrap(), 4);
        assert_eq!(monomial_count(3, 6).unwrap(), 84);
    }

    #[test]
    fn count_overflow_is_reported() {
        assert!(matches!(monomial_count(200, 200), Err(Error::CountOverflow { .. })));
    }

    #[test]
    fn first_ranks() {
        assert_eq!(rank_monomial(&MultiIndex::new(vec![0, 0])), 0);
        assert_eq!(unrank_monomial(1, 2), MultiIndex::new(vec![1, 0]));
        assert_eq!(unrank_monomial(2, 2), MultiIndex::new(vec![0, 1]));
        assert_eq!(unrank_monomial(3, 2), MultiIndex::new(vec![2, 0]));
        assert_eq!(unrank_monomial(5, 2), MultiIndex::new(vec![0, 2]));
    }

    #[test]
    fn rank_unrank_roundtrip_three_vars() {
        for k in 0..200 {
            assert_eq!(rank_monomial(&unrank_monomial(k, 3)), k);
        }
    }

    #[test]
    fn exhaustive_enumeration_matches_rank() {
        for n in 1..=4 {
            let all = monomials_up_to(n, 10);
            assert_eq!(all.len(), monomial_count(n, 10).unwrap());
            for (k, m) in all.iter().enumerate() {
                assert_eq!(rank_monomial(m), k);
                assert_eq!(&unrank_monomial(k, n), m);
            }
            assert!(all.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn degree_is_cached_sum() {
        let m = MultiIndex::new(vec![2, 0, 3]);
        assert_eq!(m.degree(), 5);
        assert_eq!(m.add(&MultiIndex::unit(3, 1)).degree(), 6);
        assert_eq!(m.lift(0, 1).exponents(), &[0, 2, 0, 3]);
    }
}
