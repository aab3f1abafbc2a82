//! Sparse multivariate polynomials over the tuple `(t, x1, ..., xn)`.

mod monomial;
mod parse;
mod polynomial;

pub use monomial::{monomial_count, monomials_up_to, rank_monomial, unrank_monomial, MultiIndex};
pub use parse::{format_polynomial, parse_polynomial};
pub use polynomial::{lie_derivative, Polynomial, DROP_TOL};
