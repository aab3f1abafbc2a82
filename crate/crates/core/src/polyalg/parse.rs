//! Text form of polynomials: `-0.4*x1 + x1*x2^2`, `(x1 + 0.75)^2 + x2^2 - 1`.
//!
//! Grammar: sums and differences of products; factors are numbers, variable
//! names, parenthesised expressions, each optionally raised to `^k`. A factor
//! may be divided by a nonzero constant: `x1^3/3`.

use super::monomial::MultiIndex;
use super::polynomial::Polynomial;
use crate::error::{Error, Result};

pub fn parse_polynomial(text: &str, names: &[&str]) -> Result<Polynomial> {
    let mut p = Parser {
        text,
        bytes: text.as_bytes(),
        pos: 0,
        names,
    };
    p.skip_ws();
    if p.pos == p.bytes.len() {
        return Err(p.error("empty expression"));
    }
    let out = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(out)
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
    names: &'a [&'a str],
}

impl Parser<'_> {
    fn nvars(&self) -> usize {
        self.names.len()
    }

    fn error(&self, message: &str) -> Error {
        Error::Expression {
            text: self.text.to_string(),
            column: self.pos + 1,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Polynomial> {
        let mut acc = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                -&self.term()?
            }
            Some(b'+') => {
                self.pos += 1;
                self.term()?
            }
            _ => self.term()?,
        };
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = &acc + &self.term()?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = &acc - &self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut acc = self.power()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc = &acc * &self.power()?;
                }
                Some(b'/') => {
                    self.pos += 1;
                    let at = self.pos;
                    let den = self.power()?;
                    match den.degree() {
                        Some(0) if den.coefficient(&MultiIndex::zero(self.nvars())) != 0.0 => {
                            acc = acc.scale(1.0 / den.coefficient(&MultiIndex::zero(self.nvars())));
                        }
                        _ => {
                            self.pos = at;
                            return Err(self.error("divisor must be a nonzero constant"));
                        }
                    }
                }
                _ => return Ok(acc),
            }
        }
    }

    fn power(&mut self) -> Result<Polynomial> {
        let base = self.factor()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("expected a nonnegative integer exponent"));
            }
            let k: u32 = self.text[start..self.pos]
                .parse()
                .map_err(|_| self.error("exponent out of range"))?;
            return Ok(base.pow(k));
        }
        Ok(base)
    }

    fn factor(&mut self) -> Result<Polynomial> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(b'-') => {
                self.pos += 1;
                Ok(-&self.power()?)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<Polynomial> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < b.len() && (b[self.pos] == b'+' || b[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if digits == self.pos {
                self.pos = save;
            }
        }
        let value: f64 = self.text[start..self.pos].parse().map_err(|_| {
            self.pos = start;
            self.error("malformed number")
        })?;
        Ok(Polynomial::constant(self.nvars(), value))
    }

    fn ident(&mut self) -> Result<Polynomial> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_alphanumeric() || b[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = &self.text[start..self.pos];
        match self.names.iter().position(|n| *n == name) {
            Some(i) => Ok(Polynomial::var(self.nvars(), i)),
            None => Err(Error::UnknownVariable(name.to_string())),
        }
    }
}

/// Canonical text form; `parse_polynomial(&format_polynomial(p, names), names)`
/// reproduces `p` exactly.
pub fn format_polynomial(p: &Polynomial, names: &[&str]) -> String {
    if p.is_zero() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (k, (m, c)) in p.terms().enumerate() {
        let mono = format_monomial(m, names);
        let (sign, mag) = if c < 0.0 { ("-", -c) } else { ("+", c) };
        if k == 0 {
            if sign == "-" {
                out.push('-');
            }
        } else {
            out.push(' ');
            out.push_str(sign);
            out.push(' ');
        }
        match (mono.is_empty(), mag == 1.0) {
            (true, _) => out.push_str(&format!("{mag:?}")),
            (false, true) => out.push_str(&mono),
            (false, false) => out.push_str(&format!("{mag:?}*{mono}")),
        }
    }
    out
}

fn format_monomial(m: &MultiIndex, names: &[&str]) -> String {
    let mut parts = Vec::new();
    for (i, &e) in m.exponents().iter().enumerate() {
        match e {
            0 => {}
            1 => parts.push(names[i].to_string()),
            _ => parts.push(format!("{}^{}", names[i], e)),
        }
    }
    parts.join("*")
}

#[cfg(test)]
mod tests {
    use super::*;

    const XY: [&str; 2] = ["x1", "x2"];

    #[test]
    fn parses_sum_of_products() {
        let p = parse_polynomial("-0.4*x1 + x1*x2^2", &XY).unwrap();
        assert_eq!(p.num_terms(), 2);
        assert!((p.eval(&[2.0, 3.0]) - (-0.8 + 18.0)).abs() < 1e-12);
    }

    #[test]
    fn parses_parentheses_and_powers() {
        let p = parse_polynomial("(x1 + 0.75)^2 + x2^2 - 1", &XY).unwrap();
        assert!((p.eval(&[0.25, 0.0])).abs() < 1e-12);
        assert_eq!(p.degree(), Some(2));
        let q = parse_polynomial("2e-1*x1 - -x2", &XY).unwrap();
        assert!((q.eval(&[1.0, 1.0]) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_unknown_identifier() {
        assert_eq!(parse_polynomial("x1 + y", &XY), Err(Error::UnknownVariable("y".into())));
    }

    #[test]
    fn reports_column() {
        match parse_polynomial("x1 + * x2", &XY) {
            Err(Error::Expression { column, .. }) => assert_eq!(column, 6),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_polynomial("", &XY).is_err());
        assert!(parse_polynomial("(x1", &XY).is_err());
    }

    #[test]
    fn division_by_constants() {
        let p = parse_polynomial("-x1 - x2 + x1^3/3", &XY).unwrap();
        assert!((p.eval(&[3.0, 1.0]) - 5.0).abs() < 1e-12);
        assert!((parse_polynomial("x1/2/4", &XY).unwrap().eval(&[8.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(parse_polynomial("1/x1", &XY).is_err());
        assert!(parse_polynomial("x1/(2 - 2)", &XY).is_err());
    }

    #[test]
    fn format_roundtrip() {
        let p = parse_polynomial("0.1*x1^3 - x2 + 0.3333333333333333 - x1*x2", &XY).unwrap();
        let s = format_polynomial(&p, &XY);
        assert_eq!(parse_polynomial(&s, &XY).unwrap(), p);
    }
}
