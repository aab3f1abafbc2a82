//! Plot data: level sets of the auxiliary function and set boundaries.

use std::collections::HashMap;
use std::fmt::Write;

use peakcert::polyalg::Polynomial;
use peakcert::problem::SemialgebraicSet;

pub const GRID: usize = 81;

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Grid evaluation of `v` over the box, at `t = 0` when `v` depends on time.
/// Only one- and two-state problems are sampled.
pub fn levelset_csv(v: &Polynomial, names: &[&str], bounds: &[(f64, f64)], time_dependent: bool) -> Option<String> {
    let n = names.len();
    if n > 2 {
        return None;
    }
    let mut out = String::new();
    writeln!(out, "{},v", names.join(",")).unwrap();
    let eval = |x: &[f64]| {
        if time_dependent {
            let mut p = vec![0.0];
            p.extend_from_slice(x);
            v.eval(&p)
        } else {
            v.eval(x)
        }
    };
    if n == 1 {
        for x in axis(bounds[0].0, bounds[0].1, 4 * GRID) {
            writeln!(out, "{x:e},{:e}", eval(&[x])).unwrap();
        }
    } else {
        let xs = axis(bounds[0].0, bounds[0].1, GRID);
        let ys = axis(bounds[1].0, bounds[1].1, GRID);
        for &x in &xs {
            for &y in &ys {
                writeln!(out, "{x:e},{y:e},{:e}", eval(&[x, y])).unwrap();
            }
        }
    }
    Some(out)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum EdgeKey {
    /// Edge from `(i, j)` to `(i + 1, j)`.
    X(usize, usize),
    /// Edge from `(i, j)` to `(i, j + 1)`.
    Y(usize, usize),
}

/// Zero contour of `g` on a grid, as chained polylines.
pub fn contour(g: &Polynomial, bounds: &[(f64, f64)], n: usize) -> Vec<Vec<[f64; 2]>> {
    let xs = axis(bounds[0].0, bounds[0].1, n);
    let ys = axis(bounds[1].0, bounds[1].1, n);
    let val: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| ys.iter().map(|&y| g.eval(&[x, y])).collect())
        .collect();
    let crossing = |k: EdgeKey| -> Option<[f64; 2]> {
        let ((i0, j0), (i1, j1)) = match k {
            EdgeKey::X(i, j) => ((i, j), (i + 1, j)),
            EdgeKey::Y(i, j) => ((i, j), (i, j + 1)),
        };
        let (a, b) = (val[i0][j0], val[i1][j1]);
        if (a >= 0.0) == (b >= 0.0) {
            return None;
        }
        let s = a / (a - b);
        Some([xs[i0] + s * (xs[i1] - xs[i0]), ys[j0] + s * (ys[j1] - ys[j0])])
    };

    let mut points: HashMap<EdgeKey, [f64; 2]> = HashMap::new();
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let edges = [
                EdgeKey::Y(i, j),
                EdgeKey::X(i, j + 1),
                EdgeKey::Y(i + 1, j),
                EdgeKey::X(i, j),
            ];
            let hits: Vec<EdgeKey> = edges
                .into_iter()
                .filter(|&e| crossing(e).map(|p| points.insert(e, p)).is_some())
                .collect();
            for pair in hits.chunks(2) {
                if let [a, b] = pair {
                    segments.push((*a, *b));
                }
            }
        }
    }

    let mut adj: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        adj.entry(*a).or_default().push(k);
        adj.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let walk = |start: EdgeKey, used: &mut Vec<bool>, line: &mut Vec<EdgeKey>| {
        let mut cur = start;
        while let Some(&k) = adj[&cur].iter().find(|&&k| !used[k]) {
            used[k] = true;
            let (a, b) = segments[k];
            cur = if a == cur { b } else { a };
            line.push(cur);
        }
    };
    for k in 0..segments.len() {
        if used[k] {
            continue;
        }
        used[k] = true;
        let (a, b) = segments[k];
        let mut fwd = vec![b];
        walk(b, &mut used, &mut fwd);
        let mut back = vec![a];
        walk(a, &mut used, &mut back);
        back.reverse();
        back.extend(fwd);
        lines.push(back.iter().map(|e| points[e]).collect());
    }
    lines
}

/// Boundary of a two-dimensional set: the zero contour of each defining
/// polynomial, kept where the remaining constraints hold.
pub fn set_boundary(set: &SemialgebraicSet, bounds: &[(f64, f64)]) -> Vec<Vec<[f64; 2]>> {
    let all: Vec<&Polynomial> = set.ineq.iter().chain(&set.eq).collect();
    let mut out = Vec::new();
    for (k, g) in all.iter().enumerate() {
        let others = |p: &[f64; 2]| {
            all.iter().enumerate().filter(|(i, _)| *i != k).all(|(i, h)| {
                let v = h.eval(p);
                if i < set.ineq.len() {
                    v >= -1e-9
                } else {
                    v.abs() <= 1e-6
                }
            })
        };
        for line in contour(g, bounds, 4 * GRID) {
            let mut run: Vec<[f64; 2]> = Vec::new();
            for p in line {
                if others(&p) {
                    run.push(p);
                } else if run.len() > 1 {
                    out.push(std::mem::take(&mut run));
                } else {
                    run.clear();
                }
            }
            if run.len() > 1 {
                out.push(run);
            }
        }
    }
    out
}

pub fn boundaries_csv(names: &[&str], sets: &[(&str, Vec<Vec<[f64; 2]>>)]) -> String {
    let mut out = String::new();
    writeln!(out, "set,polyline,{}", names.join(",")).unwrap();
    for (label, lines) in sets {
        for (k, line) in lines.iter().enumerate() {
            for p in line {
                writeln!(out, "{label},{k},{:e},{:e}", p[0], p[1]).unwrap();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use peakcert::polyalg::parse_polynomial;

    #[test]
    fn circle_contour_is_one_closed_loop() {
        let g = parse_polynomial("0.25 - x^2 - y^2", &["x", "y"]).unwrap();
        let lines = contour(&g, &[(-1.0, 1.0), (-1.0, 1.0)], 41);
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        assert_eq!(l.first(), l.last());
        for p in l {
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn half_disc_boundary() {
        let names = ["x", "y"];
        let set = SemialgebraicSet {
            ineq: vec![
                parse_polynomial("0.25 - x^2 - y^2", &names).unwrap(),
                parse_polynomial("y", &names).unwrap(),
            ],
            eq: vec![],
        };
        let lines = set_boundary(&set, &[(-1.0, 1.0), (-1.0, 1.0)]);
        assert_eq!(lines.len(), 2);
        for p in lines.iter().flatten() {
            assert!(p[1] >= -1e-9 && p[0] * p[0] + p[1] * p[1] <= 0.25 + 1e-2);
        }
    }
}
