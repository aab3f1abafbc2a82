//! SDPA sparse format (`.dat-s`).
//!
//! Dialect written here, for a [`ConicProblem`] with `m` decision variables:
//!
//! ```text
//! * peakcert-sdpa 1
//! * objective_constant <c0>
//! * psd_blocks <P> nonneg_blocks <K> equalities <E>
//! m
//! nblocks
//! block sizes
//! c_1 ... c_m
//! <matno> <blkno> <i> <j> <value>
//! ```
//!
//! SDPA minimizes `c^T x` subject to `sum_i F_i x_i - F_0 PSD`. Maximizing
//! `objective(x)` is written as minimizing `c = -objective`; the optimum of
//! the original problem is `c0 - (SDPA optimum)`. Blocks appear in this
//! order: the `P` PSD blocks; `K` 1x1 blocks `x_k >= 0`; if `E > 0`, one
//! diagonal LP block of size `-2E` holding each equality `a^T x = b` as the
//! consecutive pair `a^T x - b >= 0`, `-(a^T x - b) >= 0`. Entry lines list
//! the upper triangle, matrix 0 first, then variables in increasing order.
//! Numbers are printed in shortest round-trip form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::moments::{LinearFunctional, LinearMatrixForm, LinearRow};

use super::ConicProblem;

const MAGIC: &str = "peakcert-sdpa 1";

pub fn export(problem: &ConicProblem) -> String {
    let m = problem.num_vars;
    let p = problem.psd_blocks.len();
    let k = problem.nonneg.len();
    let e = problem.equalities.len();
    let mut out = String::new();
    let _ = writeln!(out, "* {MAGIC}");
    let _ = writeln!(out, "* objective_constant {:e}", problem.objective.constant);
    let _ = writeln!(out, "* psd_blocks {p} nonneg_blocks {k} equalities {e}");
    let _ = writeln!(out, "{m}");
    let nblocks = p + k + usize::from(e > 0);
    let _ = writeln!(out, "{nblocks}");
    let mut sizes: Vec<String> = problem.psd_blocks.iter().map(|b| b.side.to_string()).collect();
    sizes.extend(std::iter::repeat_n("1".to_string(), k));
    if e > 0 {
        sizes.push(format!("-{}", 2 * e));
    }
    let _ = writeln!(out, "{}", sizes.join(" "));
    let mut c = vec![0.0; m];
    for &(i, v) in &problem.objective.terms {
        c[i] = -v;
    }
    let cs: Vec<String> = c.iter().map(|v| format!("{v:e}")).collect();
    let _ = writeln!(out, "{}", cs.join(" "));

    // (matno, blkno, i, j, value), sorted before printing
    let mut lines: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for (b, form) in problem.psd_blocks.iter().enumerate() {
        for (r, col, f) in form.upper() {
            if f.constant != 0.0 {
                lines.push((0, b + 1, r + 1, col + 1, -f.constant));
            }
            for &(i, v) in &f.terms {
                lines.push((i + 1, b + 1, r + 1, col + 1, v));
            }
        }
    }
    for (j, &i) in problem.nonneg.iter().enumerate() {
        lines.push((i + 1, p + j + 1, 1, 1, 1.0));
    }
    let lp = p + k + 1;
    for (q, row) in problem.equalities.iter().enumerate() {
        for (d, s) in [(2 * q + 1, 1.0), (2 * q + 2, -1.0)] {
            if row.rhs != 0.0 {
                lines.push((0, lp, d, d, s * row.rhs));
            }
            for &(i, v) in &row.terms {
                lines.push((i + 1, lp, d, d, s * v));
            }
        }
    }
    lines.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    for (mat, blk, i, j, v) in lines {
        let _ = writeln!(out, "{mat} {blk} {i} {j} {v:e}");
    }
    out
}

/// Parsed `.dat-s` file.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpaFile {
    pub num_vars: usize,
    /// Positive for symmetric blocks, negative for diagonal (LP) blocks.
    pub block_sizes: Vec<i64>,
    pub c: Vec<f64>,
    pub entries: Vec<(usize, usize, usize, usize, f64)>,
    pub objective_constant: f64,
    /// `(psd, nonneg, equalities)` block counts when written by [`export`].
    pub layout: Option<(usize, usize, usize)>,
}

pub fn parse(text: &str) -> Result<SdpaFile> {
    let mut objective_constant = 0.0;
    let mut layout = None;
    let mut magic = false;
    let mut body = String::new();
    let mut in_header = true;
    for line in text.lines() {
        let t = line.trim();
        if in_header && (t.starts_with('*') || t.starts_with('"')) {
            let words: Vec<&str> = t[1..].split_whitespace().collect();
            match words.as_slice() {
                ["peakcert-sdpa", "1"] => magic = true,
                ["objective_constant", v] => objective_constant = num(v)?,
                ["psd_blocks", p, "nonneg_blocks", k, "equalities", e] => {
                    layout = Some((int(p)?, int(k)?, int(e)?));
                }
                _ => {}
            }
            continue;
        }
        in_header = false;
        body.push_str(line);
        body.push('\n');
    }
    if !magic {
        layout = None;
    }
    // SDPA allows `{`, `}`, `(`, `)` and `,` as separators
    let cleaned: String = body
        .chars()
        .map(|ch| if "{}(),".contains(ch) { ' ' } else { ch })
        .collect();
    let mut lines = cleaned.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::Sdpa(format!("missing {what}")));
    let num_vars = int(first_word(next("variable count")?))?;
    let nblocks = int(first_word(next("block count")?))?;
    let block_sizes: Vec<i64> = take_numbers(&mut next, nblocks, "block sizes")?
        .iter()
        .map(|v| {
            if v.fract() == 0.0 && *v != 0.0 {
                Ok(*v as i64)
            } else {
                Err(Error::Sdpa(format!("bad block size {v}")))
            }
        })
        .collect::<Result<_>>()?;
    let c = take_numbers(&mut next, num_vars, "objective vector")?;
    let mut entries = Vec::new();
    for line in lines {
        let w: Vec<&str> = line.split_whitespace().collect();
        if w.len() != 5 {
            return Err(Error::Sdpa(format!("entry line needs 5 fields: `{line}`")));
        }
        let (mat, blk, i, j) = (int(w[0])?, int(w[1])?, int(w[2])?, int(w[3])?);
        let v = num(w[4])?;
        if mat > num_vars || blk == 0 || blk > nblocks {
            return Err(Error::Sdpa(format!("entry out of range: `{line}`")));
        }
        let side = block_sizes[blk - 1].unsigned_abs() as usize;
        if i == 0 || j == 0 || i > side || j > side || (block_sizes[blk - 1] < 0 && i != j) {
            return Err(Error::Sdpa(format!("entry index out of block: `{line}`")));
        }
        entries.push((mat, blk, i.min(j), i.max(j), v));
    }
    Ok(SdpaFile {
        num_vars,
        block_sizes,
        c,
        entries,
        objective_constant,
        layout,
    })
}

fn first_word(line: &str) -> &str {
    line.split_whitespace().next().unwrap_or("")
}

fn take_numbers<'a>(next: &mut impl FnMut(&str) -> Result<&'a str>, count: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        for w in next(what)?.split_whitespace() {
            out.push(num(w)?);
        }
    }
    if out.len() != count {
        return Err(Error::Sdpa(format!(
            "{what}: expected {count} numbers, found {}",
            out.len()
        )));
    }
    Ok(out)
}

fn int(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Sdpa(format!("expected an integer, found `{s}`")))
}

fn num(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Sdpa(format!("expected a number, found `{s}`")))
}

impl SdpaFile {
    /// Rebuilds the conic problem. Files not written by [`export`] map every
    /// symmetric block to a PSD block and every diagonal entry to a 1x1 block.
    pub fn to_conic(&self) -> Result<ConicProblem> {
        let m = self.num_vars;
        let objective = LinearFunctional::new(
            self.c
                .iter()
                .enumerate()
                .filter(|t| *t.1 != 0.0)
                .map(|(i, &v)| (i, -v))
                .collect(),
            self.objective_constant,
        );
        let mut problem = ConicProblem::new(m, objective);
        // per block: entry (row, col) -> (constant, terms)
        let mut blocks: Vec<Vec<(usize, usize, f64, Vec<(usize, f64)>)>> = vec![Vec::new(); self.block_sizes.len()];
        for &(mat, blk, i, j, v) in &self.entries {
            let b = &mut blocks[blk - 1];
            let pos = match b.iter().position(|e| e.0 == i - 1 && e.1 == j - 1) {
                Some(p) => p,
                None => {
                    b.push((i - 1, j - 1, 0.0, Vec::new()));
                    b.len() - 1
                }
            };
            if mat == 0 {
                b[pos].2 -= v;
            } else {
                b[pos].3.push((mat - 1, v));
            }
        }
        let (np, nk, ne) = self.layout.unwrap_or((self.block_sizes.len(), 0, 0));
        for (bi, (&size, entries)) in self.block_sizes.iter().zip(&blocks).enumerate() {
            let side = size.unsigned_abs() as usize;
            let functional = |r: usize, c: usize| {
                entries
                    .iter()
                    .find(|e| e.0 == r && e.1 == c)
                    .map(|e| LinearFunctional::new(e.3.clone(), e.2))
                    .unwrap_or_default()
            };
            if bi < np && size > 0 {
                problem.psd_blocks.push(LinearMatrixForm::from_fn(side, functional));
            } else if bi < np {
                for d in 0..side {
                    problem.psd_blocks.push(LinearMatrixForm {
                        side: 1,
                        entries: vec![functional(d, d)],
                    });
                }
            } else if bi < np + nk {
                let f = functional(0, 0);
                match (f.terms.as_slice(), f.constant) {
                    ([(i, c)], k) if side == 1 && *c == 1.0 && k == 0.0 => problem.nonneg.push(*i),
                    _ => return Err(Error::Sdpa(format!("block {} is not a nonnegative scalar", bi + 1))),
                }
            } else if size < 0 && side == 2 * ne {
                for q in 0..ne {
                    let a = functional(2 * q, 2 * q);
                    let b = functional(2 * q + 1, 2 * q + 1);
                    let neg = LinearFunctional::new(b.terms.iter().map(|&(i, v)| (i, -v)).collect(), -b.constant);
                    if neg != a {
                        return Err(Error::Sdpa(format!("equality pair {} is not symmetric", q + 1)));
                    }
                    problem.equalities.push(LinearRow::new(a.terms, -a.constant));
                }
            } else {
                return Err(Error::Sdpa(format!(
                    "block {} does not match the header layout",
                    bi + 1
                )));
            }
        }
        Ok(problem)
    }
}

pub fn import(text: &str) -> Result<ConicProblem> {
    parse(text)?.to_conic()
}
