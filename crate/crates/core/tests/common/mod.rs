#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use peakcert::conic::SolverStatus;
use peakcert::extraction::{atomic_moment_matrix, extract_atoms, ExtractOptions};
use peakcert::moments::{atomic_moments, MeasureId};
use peakcert::polyalg::{lie_derivative, monomial_count};
use peakcert::problem::{Horizon, PeakProblem};
use peakcert::recovery::{peak_along, rk4, simulate};
use peakcert::relaxation::{build_peak, decode, solve_program, PeakBound, Program};

pub fn problems_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

pub fn load(name: &str) -> PeakProblem {
    let text = std::fs::read_to_string(problems_dir().join(name)).unwrap();
    PeakProblem::from_json(&text).unwrap()
}

pub fn solve(problem: &PeakProblem, d: usize, program: Program) -> PeakBound {
    let (relax, sol) = solve_program(problem, d, program).unwrap();
    decode(&relax, &sol).unwrap_or_else(|e| panic!("degree {d}: {e}"))
}

/// Outcome of one property or criterion.
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Check {
            pass,
            detail: detail.into(),
        }
    }
}

fn coef(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo..hi) * 1000.0).round() / 1000.0
}

/// Quadratic 2-state systems on `[-2, 2]^2` with a disc of radius 0.3 as X0.
pub fn random_systems(count: usize, seed: u64) -> Vec<PeakProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms = ["x1", "x2", "x1^2", "x1*x2", "x2^2"];
    (0..count)
        .map(|_| {
            let field = |damp: &str, rng: &mut ChaCha8Rng| {
                let mut s = format!("-0.5*{damp}");
                for t in terms {
                    s += &format!(" + ({})*{t}", coef(rng, -1.0, 1.0));
                }
                s
            };
            let f1 = field("x1", &mut rng);
            let f2 = field("x2", &mut rng);
            let (a, b) = (coef(&mut rng, -0.5, 0.5), coef(&mut rng, -0.5, 0.5));
            let p = format!(
                "({})*x1 + ({})*x2 + ({})*x1*x2",
                coef(&mut rng, -1.0, 1.0),
                coef(&mut rng, -1.0, 1.0),
                coef(&mut rng, -1.0, 1.0)
            );
            let horizon = coef(&mut rng, 1.0, 3.0);
            let json = format!(
                r#"{{
                    "variables": ["x1", "x2"],
                    "dynamics": ["{f1}", "{f2}"],
                    "horizon": {horizon},
                    "state_set": {{"ineq": ["2 - x1", "x1 + 2", "2 - x2", "x2 + 2"]}},
                    "initial_set": {{"ineq": ["0.09 - (x1 - ({a}))^2 - (x2 - ({b}))^2"]}},
                    "objectives": ["{p}"]
                }}"#
            );
            PeakProblem::from_json(&json).unwrap()
        })
        .collect()
}

/// Points of the disc X0 of a random system: center plus rings.
fn disc_samples(problem: &PeakProblem) -> Vec<Vec<f64>> {
    // g = 0.09 - |x - c|^2, so c is half the linear coefficients
    let g = &problem.initial_set.ineq[0];
    let c: Vec<f64> = (0..2)
        .map(|i| {
            let e = peakcert::polyalg::MultiIndex::unit(2, i);
            g.coefficient(&e) / 2.0
        })
        .collect();
    let mut pts = vec![c.clone()];
    for r in [0.1, 0.2, 0.3] {
        for k in 0..16 {
            let th = std::f64::consts::TAU * k as f64 / 16.0;
            pts.push(vec![c[0] + r * th.cos(), c[1] + r * th.sin()]);
        }
    }
    pts
}

pub fn sampled_peak(problem: &PeakProblem, starts: &[Vec<f64>]) -> f64 {
    let t = match problem.horizon {
        Horizon::Finite(t) => t,
        Horizon::Infinite => 20.0,
    };
    starts
        .iter()
        .map(|x0| peak_along(&simulate(x0, problem, t), &problem.objectives).value)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub struct LadderResults {
    pub sandwich: Check,
    pub monotone: Check,
    pub mass: Check,
    pub certificates: Check,
}

/// Sandwich, monotonicity, mass identities and dual-certificate sampling over
/// the random systems at the given degrees.
pub fn ladder_properties(systems: &[PeakProblem], degrees: &[usize]) -> LadderResults {
    let (mut sandwich, mut monotone, mut mass, mut certs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut worst_mass: f64 = 0.0;
    let mut worst_cert: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    for (k, p) in systems.iter().enumerate() {
        let starts = disc_samples(p);
        let sampled = sampled_peak(p, &starts);
        let mut prev: Option<f64> = None;
        for &d in degrees {
            let b = match solve_program(p, d, Program::Peak).map(|(r, s)| decode(&r, &s)) {
                Ok(Ok(b)) => b,
                Ok(Err(e)) | Err(e) => {
                    sandwich.push(format!("system {k} d={d}: {e}"));
                    continue;
                }
            };
            min_margin = min_margin.min(b.bound - sampled);
            if b.bound < sampled - 1e-6 {
                sandwich.push(format!("system {k} d={d}: bound {} < sampled {sampled}", b.bound));
            }
            if let Some(q) = prev {
                if b.bound > q + 1e-6 * q.abs().max(1.0) {
                    monotone.push(format!("system {k} d={d}: {} > {q}", b.bound));
                }
            }
            prev = Some(b.bound);
            if b.status == SolverStatus::Optimal {
                let e = (b.moment_vector(MeasureId::Initial)[0] - 1.0)
                    .abs()
                    .max((b.moment_vector(MeasureId::Peak)[0] - 1.0).abs());
                worst_mass = worst_mass.max(e);
                if e > 1e-7 {
                    mass.push(format!("system {k} d={d}: mass error {e:.1e}"));
                }
                let v = certificate_violation(p, &b, &starts);
                worst_cert = worst_cert.max(v);
                if v > 1e-5 {
                    certs.push(format!("system {k} d={d}: violation {v:.1e}"));
                }
            }
        }
    }
    let summarize = |fails: Vec<String>, ok: String| {
        if fails.is_empty() {
            Check::new(true, ok)
        } else {
            Check::new(false, fails.join("; "))
        }
    };
    LadderResults {
        sandwich: summarize(sandwich, format!("min bound - sampled = {min_margin:.2e}")),
        monotone: summarize(monotone, "non-increasing in d".into()),
        mass: summarize(mass, format!("max mass error {worst_mass:.1e}")),
        certificates: summarize(certs, format!("max violation {worst_cert:.1e}")),
    }
}

/// Largest violation of `gamma >= v(0, x)` on X0, `L_f v <= 0` and
/// `v >= beta^T p` on `[0, T] x X`, over grid samples and `x0_samples` of a
/// finite-horizon 2-state problem.
pub fn certificate_violation(problem: &PeakProblem, b: &PeakBound, x0_samples: &[Vec<f64>]) -> f64 {
    let Horizon::Finite(tmax) = problem.horizon else {
        panic!("finite horizon expected")
    };
    let v = &b.aux_function;
    let lv = lie_derivative(v, &problem.dynamics, true).unwrap();
    let bbox = problem.bounding_box().unwrap();
    let grid = |lo: f64, hi: f64, n: usize| (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64);
    let mut worst: f64 = x0_samples
        .iter()
        .map(|x| v.eval(&[0.0, x[0], x[1]]) - b.gamma)
        .fold(0.0, f64::max);
    for x1 in grid(bbox[0].0, bbox[0].1, 21) {
        for x2 in grid(bbox[1].0, bbox[1].1, 21) {
            let x = [x1, x2];
            if problem.initial_set.contains(&x, 0.0) {
                worst = worst.max(v.eval(&[0.0, x1, x2]) - b.gamma);
            }
            let bp: f64 = b
                .beta
                .iter()
                .zip(&problem.objectives)
                .map(|(w, p)| w * p.eval(&x))
                .sum();
            for t in grid(0.0, tmax, 11) {
                let z = [t, x1, x2];
                worst = worst.max(lv.eval(&z)).max(bp - v.eval(&z));
            }
        }
    }
    worst
}

/// Atomic measures with well-separated atoms are recovered exactly.
pub fn extraction_round_trip(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = ExtractOptions { rank_tol: 1e-6, seed };
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let n = rng.random_range(1..=3);
        let r = rng.random_range(1..=3);
        let mut atoms: Vec<Vec<f64>> = Vec::new();
        while atoms.len() < r {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sep = atoms
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            if sep > 0.3 {
                atoms.push(a);
            }
        }
        let raw: Vec<f64> = (0..r).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / s).collect();
        let k = (1..).find(|&k| monomial_count(n, k - 1).unwrap() >= r).unwrap();
        let m = atomic_moment_matrix(n, k, &atoms, &weights);
        let dec = match extract_atoms(&m, n, r, &opts) {
            Ok(d) => d,
            Err(e) => return Check::new(false, format!("trial {trial} (n={n}, r={r}): {e}")),
        };
        for (a, w) in atoms.iter().zip(&weights) {
            let (j, err) = dec
                .atoms
                .iter()
                .enumerate()
                .map(|(j, b)| (j, a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            worst = worst.max(err).max((dec.weights[j] - w).abs());
        }
    }
    Check::new(worst <= 1e-6, format!("{trials} trials, max error {worst:.1e}"))
}

/// Composite Simpson weights on `[0, t]`.
fn simpson(t: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = t / panels as f64;
    (0..=panels)
        .map(|i| {
            let w = if i == 0 || i == panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (i as f64 * h, w * h / 3.0)
        })
        .collect()
}

/// Liouville rows evaluated on the exact measures of a damped rotation
/// `x' = [[-0.5, -1], [1, -0.5]] x` from `(0.8, 0)` over `[0, 1]`.
pub fn liouville_residual() -> Check {
    let p = PeakProblem::from_json(
        r#"{
            "variables": ["x1", "x2"],
            "dynamics": ["-0.5*x1 - x2", "x1 - 0.5*x2"],
            "horizon": 1,
            "state_set": {"ineq": ["1 - x1", "x1 + 1", "1 - x2", "x2 + 1"]},
            "initial_set": {"eq": ["x1 - 0.8", "x2"]},
            "objectives": ["x1"]
        }"#,
    )
    .unwrap();
    let flow = |t: f64| {
        let a = 0.8 * (-0.5 * t).exp();
        vec![a * t.cos(), a * t.sin()]
    };
    let relax = build_peak(&p, 3).unwrap();
    if !relax.scaled.scaling.is_identity() {
        return Check::new(false, "unit box problem was rescaled");
    }
    let layout = &relax.layout;
    let mut x = vec![0.0; relax.conic.num_vars];
    let mut fill = |m: MeasureId, atoms: &[Vec<f64>], weights: &[f64]| {
        let block = layout.block(m);
        let y = atomic_moments(block, atoms, weights);
        x[block.offset..block.offset + y.len()].copy_from_slice(&y);
    };
    fill(MeasureId::Initial, &[flow(0.0)], &[1.0]);
    let quad = simpson(1.0, 4000);
    let occ: Vec<Vec<f64>> = quad.iter().map(|&(t, _)| [vec![t], flow(t)].concat()).collect();
    let w: Vec<f64> = quad.iter().map(|q| q.1).collect();
    fill(MeasureId::Occupation, &occ, &w);
    fill(MeasureId::Peak, &[[vec![1.0], flow(1.0)].concat()], &[1.0]);
    let worst = relax
        .liouville
        .iter()
        .map(|(_, row)| relax.conic.equalities[*row].residual(&x).abs())
        .fold(0.0, f64::max);
    Check::new(
        worst <= 1e-8,
        format!("{} rows, max residual {worst:.1e}", relax.liouville.len()),
    )
}

/// Observed convergence order of the fixed-step RK4 integrator.
pub fn rk4_order() -> Check {
    // no closed form; the reference is a run with a much finer step
    let f = |t: f64, x: &[f64], out: &mut [f64]| {
        out[0] = x[1];
        out[1] = -x[0] + 0.3 * t.sin() * x[0] * x[0];
    };
    let reference = rk4(f, 0.0, &[1.0, 0.0], 2.0, 20_000);
    let err = |n: usize| {
        let y = rk4(f, 0.0, &[1.0, 0.0], 2.0, n);
        y.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let orders: Vec<f64> = [20, 40, 80].iter().map(|&n| (err(n) / err(2 * n)).log2()).collect();
    let pass = orders.iter().all(|o| (3.8..=4.3).contains(o));
    Check::new(pass, format!("observed orders {orders:.2?}"))
}
