//! Trajectory simulation, Algorithm 1 trajectory recovery and safety margins.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::SolverStatus;
use crate::error::{Error, Result};
use crate::extraction::{
    estimate_rank, extract_atoms, principal_block, singular_values, ExtractOptions, DEFAULT_RANK_TOL,
};
use crate::moments::MeasureId;
use crate::polyalg::Polynomial;
use crate::problem::{Horizon, PeakProblem, Scaling, SemialgebraicSet, DEFAULT_T_SIM};
use crate::relaxation::{decode, solve_program, PeakBound, Program};

pub const RTOL: f64 = 1e-9;
pub const ATOL: f64 = 1e-11;
/// Margin by which a trajectory may leave the state set before it stops.
pub const EXIT_TOL: f64 = 1e-6;
/// Membership tolerance for atoms of the initial measure.
pub const ATOM_TOL: f64 = 1e-6;
pub const DEFAULT_EPSILON: f64 = 1e-2;
/// Largest distance an extracted atom may be moved onto the initial set.
pub const DEFAULT_SNAP: f64 = 2e-2;
const MAX_STEPS: usize = 1_000_000;
/// Extraction is retried at tolerances 10x and 100x tighter when the
/// requested one gives no flat, extractable rank.
const RANK_TOL_STEPS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitFlag {
    Completed,
    LeftStateSet,
    StepFailure,
}

/// Dense-output coefficients of one accepted step.
#[derive(Clone, Debug)]
struct Segment {
    t0: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl Segment {
    fn eval(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        (0..r1.len())
            .map(|i| r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i]))))
            .collect()
    }

    fn t1(&self) -> f64 {
        self.t0 + self.h
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub exit_flag: ExitFlag,
    segments: Vec<Segment>,
}

impl Trajectory {
    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("nonempty trajectory")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("nonempty trajectory")
    }

    /// State at time `t` from the dense output, clamped to the simulated span.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        if self.segments.is_empty() {
            return self.states[0].clone();
        }
        let fwd = self.segments[0].h > 0.0;
        let k = self
            .segments
            .partition_point(|s| if fwd { s.t1() < t } else { s.t1() > t });
        let s = &self.segments[k.min(self.segments.len() - 1)];
        let (lo, hi) = if fwd { (s.t0, s.t1()) } else { (s.t1(), s.t0) };
        s.eval(t.clamp(lo, hi))
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Dormand–Prince 5(4) integration from `t0` to `t_end` (either direction),
/// stopping at the first time `outside` holds.
pub fn dopri5(
    f: impl Fn(f64, &[f64], &mut [f64]),
    t0: f64,
    x0: &[f64],
    t_end: f64,
    outside: impl Fn(&[f64]) -> bool,
) -> Trajectory {
    let n = x0.len();
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![x0.to_vec()],
        exit_flag: ExitFlag::Completed,
        segments: Vec::new(),
    };
    if outside(x0) {
        traj.exit_flag = ExitFlag::LeftStateSet;
        return traj;
    }
    let span = t_end - t0;
    if span == 0.0 {
        return traj;
    }
    let dir = span.signum();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut t = t0;
    let mut y = x0.to_vec();
    f(t, &y, &mut k[0]);
    let sc = |y: &[f64], i: usize| ATOL + RTOL * y[i].abs();
    let d0 = (0..n).map(|i| (y[i] / sc(&y, i)).powi(2)).sum::<f64>().sqrt();
    let d1 = (0..n).map(|i| (k[0][i] / sc(&y, i)).powi(2)).sum::<f64>().sqrt();
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span.abs()) * dir;
    let mut ytmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    for _ in 0..MAX_STEPS {
        if (t_end - t) * dir <= 0.0 {
            return traj;
        }
        if (t + h - t_end) * dir > 0.0 {
            h = t_end - t;
        }
        if h.abs() < 1e-14 * t.abs().max(1.0) || !y.iter().all(|v| v.is_finite()) {
            traj.exit_flag = ExitFlag::StepFailure;
            return traj;
        }
        for s in 1..7 {
            let (done, rest) = k.split_at_mut(s);
            for i in 0..n {
                ytmp[i] = y[i] + h * done.iter().zip(&A[s]).map(|(kj, a)| a * kj[i]).sum::<f64>();
            }
            f(t + C[s] * h, &ytmp, &mut rest[0]);
        }
        y1.copy_from_slice(&ytmp);
        let mut err = 0.0;
        for i in 0..n {
            let e = h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
            let s = ATOL + RTOL * y[i].abs().max(y1[i].abs());
            err += (e / s).powi(2);
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            h *= 0.2;
            continue;
        }
        let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 10.0);
        if err > 1.0 {
            h *= fac.min(1.0);
            continue;
        }
        let ydiff: Vec<f64> = (0..n).map(|i| y1[i] - y[i]).collect();
        let bspl: Vec<f64> = (0..n).map(|i| h * k[0][i] - ydiff[i]).collect();
        let seg = Segment {
            t0: t,
            h,
            r: [
                y.clone(),
                ydiff.clone(),
                bspl.clone(),
                (0..n).map(|i| ydiff[i] - h * k[6][i] - bspl[i]).collect(),
                (0..n)
                    .map(|i| h * (0..7).map(|j| D[j] * k[j][i]).sum::<f64>())
                    .collect(),
            ],
        };
        let t1 = t + h;
        if outside(&y1) {
            // first exit inside the step
            let (mut lo, mut hi) = (t, t1);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if outside(&seg.eval(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let te = hi;
            traj.times.push(te);
            traj.states.push(seg.eval(te));
            traj.segments.push(seg);
            traj.exit_flag = ExitFlag::LeftStateSet;
            return traj;
        }
        traj.segments.push(seg);
        traj.times.push(t1);
        traj.states.push(y1.clone());
        t = t1;
        y.copy_from_slice(&y1);
        k.swap(0, 6);
        h *= fac;
    }
    traj.exit_flag = ExitFlag::StepFailure;
    traj
}

/// Fixed-step classical Runge–Kutta; returns the state at `t_end`.
pub fn rk4(f: impl Fn(f64, &[f64], &mut [f64]), t0: f64, x0: &[f64], t_end: f64, steps: usize) -> Vec<f64> {
    let n = x0.len();
    let h = (t_end - t0) / steps as f64;
    let mut y = x0.to_vec();
    let mut k = vec![vec![0.0; n]; 4];
    let mut tmp = vec![0.0; n];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        f(t, &y, &mut k[0]);
        for (st, c) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..n {
                tmp[i] = y[i] + c * h * k[st - 1][i];
            }
            f(t + c * h, &tmp, &mut k[st]);
        }
        for i in 0..n {
            y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
    }
    y
}

/// Simulates the problem's flow from `x0` over `[0, t_max]`, stopping if the
/// state leaves the state set.
pub fn simulate(x0: &[f64], problem: &PeakProblem, t_max: f64) -> Trajectory {
    dopri5(
        |t, x, out| problem.eval_dynamics(t, x, out),
        0.0,
        x0,
        t_max,
        |x| problem.state_set.violation(x) > EXIT_TOL,
    )
}

/// Simulates backward in time from `(t_start, x)` towards `t_stop < t_start`.
pub fn simulate_backward(x: &[f64], problem: &PeakProblem, t_start: f64, t_stop: f64) -> Trajectory {
    dopri5(
        |t, x, out| problem.eval_dynamics(t, x, out),
        t_start,
        x,
        t_stop,
        |x| problem.state_set.violation(x) > EXIT_TOL,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakSample {
    pub value: f64,
    pub t: f64,
    pub x: Vec<f64>,
}

fn min_objective(objectives: &[Polynomial], x: &[f64]) -> f64 {
    objectives.iter().map(|p| p.eval(x)).fold(f64::INFINITY, f64::min)
}

/// Dense samples of `(t, min_i p_i)` with 8 points per accepted step.
fn coarse_samples(traj: &Trajectory, objectives: &[Polynomial]) -> Vec<(f64, f64)> {
    let mut out = vec![(traj.times[0], min_objective(objectives, &traj.states[0]))];
    for (k, s) in traj.segments.iter().enumerate() {
        let t1 = traj.times[k + 1];
        for j in 1..=8 {
            let t = s.t0 + (t1 - s.t0) * j as f64 / 8.0;
            out.push((t, min_objective(objectives, &s.eval(t))));
        }
    }
    out
}

/// Maximum of `min_i p_i` along the trajectory.
pub fn peak_along(traj: &Trajectory, objectives: &[Polynomial]) -> PeakSample {
    let samples = coarse_samples(traj, objectives);
    let (ib, _) = samples.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (i, s)| if s.1 > acc.1 { (i, s.1) } else { acc },
    );
    let (t0, t1) = (traj.t_start().min(traj.t_end()), traj.t_start().max(traj.t_end()));
    let eval = |t: f64| min_objective(objectives, &traj.interpolate(t));
    let mut best = samples[ib];
    if t1 > t0 {
        let lo = samples[ib.saturating_sub(1)]
            .0
            .min(samples[(ib + 1).min(samples.len() - 1)].0)
            .max(t0);
        let hi = samples[ib.saturating_sub(1)]
            .0
            .max(samples[(ib + 1).min(samples.len() - 1)].0)
            .min(t1);
        let step = 1e-4 * (t1 - t0);
        let count = (((hi - lo) / step).ceil() as usize).clamp(1, 100_000);
        for j in 0..=count {
            let t = lo + (hi - lo) * j as f64 / count as f64;
            let v = eval(t);
            if v > best.1 {
                best = (t, v);
            }
        }
        // golden-section polish inside one fine step
        let (mut a, mut b) = ((best.0 - step).max(t0), (best.0 + step).min(t1));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if eval(c) >= eval(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let tm = 0.5 * (a + b);
        let vm = eval(tm);
        if vm > best.1 {
            best = (tm, vm);
        }
    }
    PeakSample {
        value: best.1,
        t: best.0,
        x: traj.interpolate(best.0),
    }
}

/// Times of other local maxima of `min_i p_i` within `eps` of the peak.
pub fn near_attainments(traj: &Trajectory, objectives: &[Polynomial], peak: &PeakSample, eps: f64) -> Vec<f64> {
    let s = coarse_samples(traj, objectives);
    let sep = 1e-2 * (traj.t_end() - traj.t_start()).abs();
    (1..s.len().saturating_sub(1))
        .filter(|&i| s[i].1 >= s[i - 1].1 && s[i].1 > s[i + 1].1 && s[i].1 >= peak.value - eps)
        .map(|i| s[i].0)
        .filter(|t| (t - peak.t).abs() > sep)
        .collect()
}

/// Trajectory as CSV: `t,x1,...,xn,objective`, one row per accepted step.
pub fn trajectory_csv(traj: &Trajectory, objectives: &[Polynomial]) -> String {
    let n = traj.states[0].len();
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    out.push_str(",objective\n");
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let _ = write!(out, "{t:.10e}");
        for v in x {
            let _ = write!(out, ",{v:.10e}");
        }
        let _ = writeln!(out, ",{:.10e}", min_objective(objectives, x));
    }
    out
}

/// Moves `x` onto the set by Gauss–Newton steps on its active constraints.
/// Returns `None` if that takes more than `max_dist`.
pub fn snap_to_set(set: &SemialgebraicSet, x: &[f64], max_dist: f64) -> Option<Vec<f64>> {
    let n = x.len();
    let mut y = x.to_vec();
    for _ in 0..50 {
        if set.violation(&y) <= 1e-12 {
            break;
        }
        let active: Vec<(&Polynomial, f64)> = set
            .eq
            .iter()
            .map(|h| (h, h.eval(&y)))
            .chain(set.ineq.iter().filter(|g| g.eval(&y) < 0.0).map(|g| (g, g.eval(&y))))
            .collect();
        let m = active.len();
        let jac = DMatrix::from_fn(m, n, |r, c| active[r].0.derivative(c).eval(&y));
        let res = DVector::from_iterator(m, active.iter().map(|a| a.1));
        let jjt = &jac * jac.transpose();
        let step = jac.transpose() * jjt.pseudo_inverse(1e-14).ok()? * res;
        for i in 0..n {
            y[i] -= step[i];
        }
    }
    let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    (set.violation(&y) <= ATOM_TOL && dist <= max_dist).then_some(y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub x0: Vec<f64>,
    pub tp: f64,
    pub xp: Vec<f64>,
    pub sampled_value: f64,
    pub gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomOutcome {
    Accepted,
    GapTooLarge,
    Escaped,
    OutsideInitialSet,
    StepFailure,
    ExceedsBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomRecord {
    /// Extracted atom, problem coordinates.
    pub atom: Vec<f64>,
    pub weight: f64,
    /// Atom after snapping onto the initial set.
    pub x0: Option<Vec<f64>>,
    pub outcome: AtomOutcome,
    pub sampled_value: Option<f64>,
    pub tp: Option<f64>,
    pub xp: Option<Vec<f64>>,
    pub gap: Option<f64>,
    /// Other local maxima within epsilon of the peak on the same trajectory.
    pub other_attainments: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardCheck {
    /// Peak atom `(t, x)` or `x`, problem coordinates.
    pub atom: Vec<f64>,
    pub exit_flag: ExitFlag,
    /// Time and state of closest approach to the initial set.
    pub t: f64,
    pub x: Vec<f64>,
    pub initial_violation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub degree: usize,
    pub status: Option<SolverStatus>,
    pub loose: bool,
    pub bound: Option<f64>,
    pub rank_initial: Option<usize>,
    pub rank_initial_prev: Option<usize>,
    pub rank_peak: Option<usize>,
    pub flat: bool,
    pub singular_values_initial: Vec<f64>,
    /// Rank tolerance and rank at which atoms were extracted.
    pub extraction_tol: Option<f64>,
    pub extraction_rank: Option<usize>,
    /// Failed attempts at looser tolerances.
    pub extraction_notes: Vec<String>,
    pub atoms: Vec<AtomRecord>,
    pub backward: Vec<BackwardCheck>,
    pub rejection: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub d0: usize,
    pub d_max: usize,
    pub epsilon: f64,
    pub rank_tol: f64,
    pub t_sim: Option<f64>,
    pub seed: u64,
    pub snap_distance: f64,
    pub backward_check: bool,
}

impl RecoveryOptions {
    pub fn new(problem: &PeakProblem, d0: usize, d_max: usize) -> Self {
        let o = &problem.options;
        RecoveryOptions {
            d0,
            d_max,
            epsilon: o.epsilon.unwrap_or(DEFAULT_EPSILON),
            rank_tol: o.rank_tol.unwrap_or(DEFAULT_RANK_TOL),
            t_sim: o.t_sim,
            seed: crate::extraction::seed_from_env(),
            snap_distance: DEFAULT_SNAP,
            backward_check: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub triples: Vec<Triple>,
    pub degrees: Vec<DegreeReport>,
    pub warnings: Vec<String>,
}

/// Simulation horizon: `T` for finite horizons, the cutoff otherwise.
pub fn simulation_horizon(problem: &PeakProblem, t_sim: Option<f64>) -> f64 {
    match problem.horizon {
        Horizon::Finite(t) => t,
        Horizon::Infinite => t_sim.or(problem.options.t_sim).unwrap_or(DEFAULT_T_SIM),
    }
}

/// Maps a point in the relaxation's scaled coordinates to problem coordinates.
pub fn state_to_problem(problem: &PeakProblem, scaling: &Scaling, xs: &[f64]) -> Vec<f64> {
    problem.scaling.state_to_scaled(&scaling.state_to_original(xs))
}

pub fn time_to_problem(problem: &PeakProblem, scaling: &Scaling, ts: f64) -> f64 {
    scaling.time_to_original(ts) / problem.scaling.time_scale
}

/// Order-`k` moment matrix of one measure of a decoded bound.
pub fn moment_block(bound: &PeakBound, m: MeasureId, k: usize) -> DMatrix<f64> {
    let nvars = match m {
        MeasureId::Initial => bound.nstates,
        _ => bound.nstates + usize::from(bound.time_dependent),
    };
    principal_block(bound.moment_matrix(m), nvars, k)
}

pub fn recovery_program(problem: &PeakProblem) -> Program {
    if problem.is_maximin() {
        Program::Maximin
    } else {
        Program::Peak
    }
}

/// Solves relaxations of increasing degree until extracted atoms yield
/// trajectories whose sampled peak is within `epsilon` of the bound.
pub fn algorithm1(problem: &PeakProblem, opts: &RecoveryOptions) -> Result<RecoveryOutcome> {
    if opts.d0 > opts.d_max {
        return Err(Error::InvalidProblem(format!(
            "d0 = {} exceeds d_max = {}",
            opts.d0, opts.d_max
        )));
    }
    if opts.epsilon <= 0.0 {
        return Err(Error::InvalidProblem("epsilon must be positive".into()));
    }
    let mut out = RecoveryOutcome::default();
    for d in opts.d0..=opts.d_max {
        let report = recover_at_degree(problem, d, opts, &mut out)?;
        out.degrees.push(report);
        if !out.triples.is_empty() {
            break;
        }
    }
    if out.triples.is_empty() {
        out.warnings.push("no certified triples".into());
    }
    Ok(out)
}

fn recover_at_degree(
    problem: &PeakProblem,
    d: usize,
    opts: &RecoveryOptions,
    out: &mut RecoveryOutcome,
) -> Result<DegreeReport> {
    let mut rep = DegreeReport {
        degree: d,
        ..Default::default()
    };
    let (relax, sol) = match solve_program(problem, d, recovery_program(problem)) {
        Ok(v) => v,
        Err(e @ Error::DegreeTooSmall { .. }) => {
            rep.rejection = Some(e.to_string());
            return Ok(rep);
        }
        Err(e) => return Err(e),
    };
    rep.status = Some(sol.status);
    rep.loose = sol.loose;
    let bound = match decode(&relax, &sol) {
        Ok(b) => b,
        Err(e) => {
            rep.rejection = Some(format!("solver failure: {e}"));
            return Ok(rep);
        }
    };
    rep.bound = Some(bound.bound);
    let n = problem.nstates();
    let m0 = moment_block(&bound, MeasureId::Initial, d);
    let m0_prev = principal_block(&m0, n, d - 1);
    let r0 = estimate_rank(&m0, opts.rank_tol);
    let r0_prev = estimate_rank(&m0_prev, opts.rank_tol);
    rep.rank_initial = Some(r0);
    rep.rank_initial_prev = Some(r0_prev);
    rep.singular_values_initial = singular_values(&m0).into_iter().take(6).collect();
    let mp = moment_block(&bound, MeasureId::Peak, d);
    rep.rank_peak = Some(estimate_rank(&mp, opts.rank_tol));
    rep.flat = r0 == r0_prev;
    let t_end = simulation_horizon(problem, opts.t_sim);
    if opts.backward_check {
        rep.backward = backward_checks(problem, &bound, &mp, rep.rank_peak.unwrap_or(0), opts, t_end);
    }
    let mut found = None;
    for k in 0..RANK_TOL_STEPS {
        let tol = opts.rank_tol * 0.1f64.powi(k as i32);
        let r = estimate_rank(&m0, tol);
        let rp = estimate_rank(&m0_prev, tol);
        if r != rp {
            rep.extraction_notes.push(format!(
                "tol {tol:.1e}: not flat, rank {r} at order {d}, {rp} at order {}",
                d - 1
            ));
            continue;
        }
        let eopts = ExtractOptions {
            rank_tol: tol,
            seed: opts.seed,
        };
        match extract_atoms(&m0, n, r, &eopts) {
            Ok(dec) => {
                rep.extraction_tol = Some(tol);
                rep.extraction_rank = Some(r);
                found = Some(dec);
                break;
            }
            Err(e) => rep.extraction_notes.push(format!("tol {tol:.1e}, rank {r}: {e}")),
        }
    }
    let Some(dec) = found else {
        rep.rejection = Some(rep.extraction_notes.join("; "));
        return Ok(rep);
    };
    let atoms: Vec<Vec<f64>> = dec
        .atoms
        .iter()
        .map(|a| state_to_problem(problem, &bound.scaling, a))
        .collect();
    let records: Vec<(AtomRecord, Option<Triple>, Option<String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = atoms
            .iter()
            .zip(&dec.weights)
            .map(|(a, &w)| s.spawn(move || recover_atom(problem, a, w, bound.bound, t_end, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread"))
            .collect()
    });
    for (rec, triple, warn) in records {
        if rec.outcome == AtomOutcome::OutsideInitialSet {
            log::info!("degree {d}: atom {:?} rejected, outside the initial set", rec.atom);
        }
        out.triples.extend(triple);
        out.warnings.extend(warn);
        rep.atoms.push(rec);
    }
    if rep.atoms.iter().all(|a| a.outcome != AtomOutcome::Accepted) {
        rep.rejection = Some("no atom produced a trajectory within epsilon of the bound".into());
    }
    Ok(rep)
}

fn recover_atom(
    problem: &PeakProblem,
    atom: &[f64],
    weight: f64,
    bound: f64,
    t_end: f64,
    opts: &RecoveryOptions,
) -> (AtomRecord, Option<Triple>, Option<String>) {
    let mut rec = AtomRecord {
        atom: atom.to_vec(),
        weight,
        x0: None,
        outcome: AtomOutcome::OutsideInitialSet,
        sampled_value: None,
        tp: None,
        xp: None,
        gap: None,
        other_attainments: Vec::new(),
    };
    let Some(x0) = snap_to_set(&problem.initial_set, atom, opts.snap_distance) else {
        return (rec, None, None);
    };
    rec.x0 = Some(x0.clone());
    let traj = simulate(&x0, problem, t_end);
    match traj.exit_flag {
        ExitFlag::LeftStateSet => {
            rec.outcome = AtomOutcome::Escaped;
            return (rec, None, None);
        }
        ExitFlag::StepFailure => {
            rec.outcome = AtomOutcome::StepFailure;
            return (rec, None, None);
        }
        ExitFlag::Completed => {}
    }
    let peak = peak_along(&traj, &problem.objectives);
    let gap = bound - peak.value;
    rec.other_attainments = near_attainments(&traj, &problem.objectives, &peak, opts.epsilon);
    rec.sampled_value = Some(peak.value);
    rec.tp = Some(peak.t);
    rec.xp = Some(peak.x.clone());
    rec.gap = Some(gap);
    let mut warn = None;
    if !problem.horizon.is_finite() && peak.t >= traj.t_end() - 1e-3 * t_end {
        warn = Some(format!(
            "objective still increasing at the simulation cutoff t = {t_end} from x0 = {x0:?}"
        ));
    }
    rec.outcome = if gap < -1e-6 {
        AtomOutcome::ExceedsBound
    } else if gap < opts.epsilon {
        AtomOutcome::Accepted
    } else {
        AtomOutcome::GapTooLarge
    };
    let triple = (rec.outcome == AtomOutcome::Accepted).then(|| Triple {
        x0,
        tp: peak.t,
        xp: peak.x,
        sampled_value: peak.value,
        gap,
    });
    (rec, triple, warn)
}

fn backward_checks(
    problem: &PeakProblem,
    bound: &PeakBound,
    mp: &DMatrix<f64>,
    rank: usize,
    opts: &RecoveryOptions,
    t_end: f64,
) -> Vec<BackwardCheck> {
    let td = bound.time_dependent;
    let nv = problem.nstates() + usize::from(td);
    let eopts = ExtractOptions {
        rank_tol: opts.rank_tol,
        seed: opts.seed,
    };
    let Ok(dec) = extract_atoms(mp, nv, rank.max(1), &eopts) else {
        return Vec::new();
    };
    dec.atoms
        .iter()
        .map(|a| {
            let (tp, xs) = if td {
                (time_to_problem(problem, &bound.scaling, a[0]), &a[1..])
            } else {
                (t_end, &a[..])
            };
            let xp = state_to_problem(problem, &bound.scaling, xs);
            let traj = simulate_backward(&xp, problem, tp, 0.0);
            let (k, viol) = traj
                .states
                .iter()
                .map(|x| problem.initial_set.violation(x))
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
            let mut atom = xp.clone();
            if td {
                atom.insert(0, tp);
            }
            BackwardCheck {
                atom,
                exit_flag: traj.exit_flag,
                t: traj.times[k],
                x: traj.states[k].clone(),
                initial_violation: viol,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Safe,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub degree: usize,
    pub margin: f64,
    pub verdict: Verdict,
    pub status: SolverStatus,
    pub loose: bool,
    pub beta: Vec<f64>,
}

/// Maximin bound over the unsafe set's defining polynomials.
pub fn safety_margin(problem: &PeakProblem, d: usize) -> Result<MarginReport> {
    let mp = problem.margin_problem()?;
    let (relax, sol) = solve_program(&mp, d, Program::Maximin)?;
    let b = decode(&relax, &sol)?;
    Ok(MarginReport {
        degree: d,
        margin: b.bound,
        verdict: if b.bound < 0.0 {
            Verdict::Safe
        } else {
            Verdict::Inconclusive
        },
        status: sol.status,
        loose: sol.loose,
        beta: b.beta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    Infeasible,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub degree: usize,
    pub feasibility: Feasibility,
    pub status: SolverStatus,
    pub verdict: String,
}

/// Whether the relaxation of "some trajectory from X0 reaches Xu" is feasible.
pub fn unsafe_feasibility(problem: &PeakProblem, d: usize) -> Result<FeasibilityReport> {
    let (_, sol) = solve_program(problem, d, Program::Unsafe)?;
    let feasibility = match sol.status {
        SolverStatus::Optimal => Feasibility::Feasible,
        SolverStatus::MaxIterations if sol.loose => Feasibility::Feasible,
        SolverStatus::Infeasible => Feasibility::Infeasible,
        _ => Feasibility::Unknown,
    };
    let verdict = match feasibility {
        Feasibility::Feasible => format!("unsafe at relaxation degree {d} (relaxation-level evidence)"),
        Feasibility::Infeasible => format!("safe: unsafety relaxation infeasible at degree {d}"),
        Feasibility::Unknown => format!("unknown: solver status {} at degree {d}", sol.status),
    };
    Ok(FeasibilityReport {
        degree: d,
        feasibility,
        status: sol.status,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_: f64, x: &[f64], out: &mut [f64]) {
        out[0] = -x[0];
    }

    #[test]
    fn exponential_decay() {
        let tr = dopri5(decay, 0.0, &[1.0], 1.0, |_| false);
        assert_eq!(tr.exit_flag, ExitFlag::Completed);
        assert!((tr.final_state()[0] - (-1f64).exp()).abs() < 1e-8);
        assert!((tr.interpolate(0.5)[0] - (-0.5f64).exp()).abs() < 1e-8);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn backward_decay() {
        let tr = dopri5(decay, 1.0, &[(-1f64).exp()], 0.0, |_| false);
        assert!((tr.final_state()[0] - 1.0).abs() < 1e-8);
        assert!((tr.interpolate(0.5)[0] - (-0.5f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn exit_is_located() {
        let grow = |_: f64, x: &[f64], out: &mut [f64]| out[0] = 1.0 + 0.0 * x[0];
        let tr = dopri5(grow, 0.0, &[0.0], 5.0, |x| x[0] > 2.0);
        assert_eq!(tr.exit_flag, ExitFlag::LeftStateSet);
        assert!((tr.t_end() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn blow_up_is_a_step_failure() {
        let f = |_: f64, x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0];
        let tr = dopri5(f, 0.0, &[1.0], 2.0, |_| false);
        assert_eq!(tr.exit_flag, ExitFlag::StepFailure);
        assert!(tr.t_end() < 1.0 + 1e-6);
    }

    #[test]
    fn peak_of_decay_is_at_start() {
        let tr = dopri5(decay, 0.0, &[1.0], 1.0, |_| false);
        let p = peak_along(&tr, &[Polynomial::var(1, 0)]);
        assert!((p.value - 1.0).abs() < 1e-12 && p.t == 0.0);
    }

    #[test]
    fn peak_of_a_sine() {
        let osc = |_: f64, x: &[f64], out: &mut [f64]| {
            out[0] = x[1];
            out[1] = -x[0];
        };
        let tr = dopri5(osc, 0.0, &[0.0, 1.0], 3.0, |_| false);
        let p = peak_along(&tr, &[Polynomial::var(2, 0)]);
        assert!((p.value - 1.0).abs() < 1e-9);
        assert!((p.t - std::f64::consts::FRAC_PI_2).abs() < 1e-4);
    }

    #[test]
    fn csv_header() {
        let tr = dopri5(decay, 0.0, &[1.0], 1.0, |_| false);
        let csv = trajectory_csv(&tr, &[Polynomial::var(1, 0)]);
        assert!(csv.starts_with("t,x1,objective\n"));
        assert_eq!(csv.lines().count(), tr.times.len() + 1);
    }

    #[test]
    fn snap_onto_circle() {
        let c = &(&Polynomial::var(2, 0).pow(2) + &Polynomial::var(2, 1).pow(2)) - &Polynomial::constant(2, 0.25);
        let set = SemialgebraicSet {
            ineq: vec![],
            eq: vec![c],
        };
        let y = snap_to_set(&set, &[0.49, -0.09], 0.02).unwrap();
        assert!(set.violation(&y) < 1e-9);
        assert!(snap_to_set(&set, &[1.0, 0.0], 0.02).is_none());
    }
}
