//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling and
//! Mehrotra predictor-corrector steps.
//!
//! Equalities are eliminated first (`x = x_p + N w`); the remaining problem is
//! `minimize c^T w  s.t.  G w + s = h,  s in K` with `G = -L N`,
//! `h = F_0 + L(x_p)`, where `F(x) = F_0 + L(x)` stacks the cone constraints.

use log::debug;
use nalgebra::{DMatrix, DVector};

use super::cone::{ConeDims, ConeVec, NtScaling};
use super::presolve::EqualityPresolve;
use super::{ConicProblem, ConicSolution, Residuals, SolverOptions, SolverStatus};
use crate::moments::LinearFunctional;

const STEP: f64 = 0.99;
const EXPON: i32 = 3;
const REFINE: usize = 8;
/// Tolerance factor accepted as optimal when progress stalls.
const STALL_FACTOR: f64 = 10.0;
const STALL_ITERS: usize = 25;

#[derive(Clone, Copy, Debug)]
enum Origin {
    Lp(usize),
    Sdp(usize),
}

struct SdpBlock {
    side: usize,
    /// `(row, col, var, coef)` over both triangles.
    terms: Vec<(usize, usize, usize, f64)>,
    constant: DMatrix<f64>,
}

/// The affine cone map `F(x) = F_0 + L(x)`.
struct ConeMap {
    n: usize,
    dims: ConeDims,
    lp: Vec<LinearFunctional>,
    sdp: Vec<SdpBlock>,
    block_origin: Vec<Origin>,
    nonneg_origin: Vec<usize>,
}

impl ConeMap {
    fn new(p: &ConicProblem) -> Self {
        let mut lp = Vec::new();
        let mut sdp = Vec::new();
        let mut block_origin = Vec::new();
        for b in &p.psd_blocks {
            if b.side == 1 {
                block_origin.push(Origin::Lp(lp.len()));
                lp.push(b.entries[0].clone());
                continue;
            }
            let mut terms = Vec::new();
            let mut constant = DMatrix::zeros(b.side, b.side);
            for (r, c, e) in b.upper() {
                constant[(r, c)] = e.constant;
                constant[(c, r)] = e.constant;
                for &(k, f) in &e.terms {
                    terms.push((r, c, k, f));
                    if r != c {
                        terms.push((c, r, k, f));
                    }
                }
            }
            block_origin.push(Origin::Sdp(sdp.len()));
            sdp.push(SdpBlock {
                side: b.side,
                terms,
                constant,
            });
        }
        let mut nonneg_origin = Vec::new();
        for &k in &p.nonneg {
            nonneg_origin.push(lp.len());
            lp.push(LinearFunctional::single(k, 1.0));
        }
        let dims = ConeDims {
            lp: lp.len(),
            sdp: sdp.iter().map(|b| b.side).collect(),
        };
        ConeMap {
            n: p.num_vars,
            dims,
            lp,
            sdp,
            block_origin,
            nonneg_origin,
        }
    }

    fn constant(&self) -> ConeVec {
        ConeVec {
            lp: DVector::from_iterator(self.lp.len(), self.lp.iter().map(|f| f.constant)),
            sdp: self.sdp.iter().map(|b| b.constant.clone()).collect(),
        }
    }

    /// Linear part `L(x)`.
    fn apply(&self, x: &DVector<f64>) -> ConeVec {
        let lp = DVector::from_iterator(
            self.lp.len(),
            self.lp
                .iter()
                .map(|f| f.terms.iter().map(|&(k, c)| c * x[k]).sum::<f64>()),
        );
        let sdp = self
            .sdp
            .iter()
            .map(|b| {
                let mut m = DMatrix::zeros(b.side, b.side);
                for &(r, c, k, f) in &b.terms {
                    m[(r, c)] += f * x[k];
                }
                m
            })
            .collect();
        ConeVec { lp, sdp }
    }

    /// `L^T(Z)`.
    fn adjoint(&self, z: &ConeVec) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (f, &zv) in self.lp.iter().zip(z.lp.iter()) {
            for &(k, c) in &f.terms {
                out[k] += c * zv;
            }
        }
        for (b, zm) in self.sdp.iter().zip(&z.sdp) {
            for &(r, c, k, f) in &b.terms {
                out[k] += f * zm[(r, c)];
            }
        }
        out
    }

    /// `L^T H L` with `H(U) = P U P` per PSD block and `u / d^2` on scalars;
    /// identity when `scaling` is `None`.
    fn schur(&self, scaling: Option<&NtScaling>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, f) in self.lp.iter().enumerate() {
            let wgt = scaling.map_or(1.0, |s| 1.0 / (s.d[i] * s.d[i]));
            for &(a, ca) in &f.terms {
                for &(b, cb) in &f.terms {
                    m[(a, b)] += wgt * ca * cb;
                }
            }
        }
        for (j, b) in self.sdp.iter().enumerate() {
            let p = match scaling {
                Some(s) => &s.rti[j] * s.rti[j].transpose(),
                None => DMatrix::identity(b.side, b.side),
            };
            for &(r1, c1, v1, f1) in &b.terms {
                for &(r2, c2, v2, f2) in &b.terms {
                    m[(v1, v2)] += f1 * f2 * p[(r1, r2)] * p[(c1, c2)];
                }
            }
        }
        m
    }
}

/// Cholesky factor of a Jacobi-equilibrated symmetric matrix.
struct Factor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    d: DVector<f64>,
}

impl Factor {
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let x = self.chol.solve(&b.component_mul(&self.d));
        x.component_mul(&self.d)
    }
}

fn cholesky(m: &DMatrix<f64>) -> Option<Factor> {
    let d = m.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 });
    let mut e = m.clone();
    for j in 0..e.ncols() {
        for i in 0..e.nrows() {
            e[(i, j)] *= d[i] * d[j];
        }
    }
    if let Some(chol) = nalgebra::Cholesky::new(e.clone()) {
        return Some(Factor { chol, d });
    }
    for k in [-14, -12, -10, -8, -6] {
        let mut r = e.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += 10f64.powi(k);
        }
        if let Some(chol) = nalgebra::Cholesky::new(r) {
            debug!("ipm: regularized Schur complement with 1e{k}");
            return Some(Factor { chol, d });
        }
    }
    None
}

/// Reduced problem data.
struct Reduced<'a> {
    map: &'a ConeMap,
    null: &'a DMatrix<f64>,
    c: DVector<f64>,
    h: ConeVec,
    /// `c^T x_p` in the minimization form.
    offset: f64,
}

impl Reduced<'_> {
    fn g(&self, w: &DVector<f64>) -> ConeVec {
        self.map.apply(&(self.null * w)).scaled(-1.0)
    }

    fn gt(&self, z: &ConeVec) -> DVector<f64> {
        -(self.null.transpose() * self.map.adjoint(z))
    }

    fn reduced_schur(&self, scaling: Option<&NtScaling>) -> DMatrix<f64> {
        let full = self.map.schur(scaling);
        let m = self.null.transpose() * full * self.null;
        (&m + m.transpose()) * 0.5
    }
}

struct Kkt<'a> {
    red: &'a Reduced<'a>,
    scaling: &'a NtScaling,
    chol: Factor,
}

impl Kkt<'_> {
    /// Solves `G^T dz = bx`, `G dw - W^T W dz = bz`.
    fn solve(&self, bx: &DVector<f64>, bz: &ConeVec) -> (DVector<f64>, ConeVec) {
        let (mut dw, mut dz) = self.solve_once(bx, bz);
        let target = 1e-14 * (1.0 + bx.norm() + bz.norm());
        let mut last = f64::INFINITY;
        for _ in 0..REFINE {
            let ex = bx - self.red.gt(&dz);
            let mut ez = bz.clone();
            ez.axpy(-1.0, &self.red.g(&dw));
            ez.axpy(1.0, &self.scaling.wt(&self.scaling.w(&dz)));
            let res = ex.norm() + ez.norm();
            log::trace!("kkt residual {:.2e} {:.2e}", ex.norm(), ez.norm());
            if res <= target || res >= 0.5 * last {
                break;
            }
            last = res;
            let (cw, cz) = self.solve_once(&ex, &ez);
            dw += cw;
            dz.axpy(1.0, &cz);
        }
        (dw, dz)
    }

    fn solve_once(&self, bx: &DVector<f64>, bz: &ConeVec) -> (DVector<f64>, ConeVec) {
        let hbz = self.scaling.h(bz);
        let rhs = bx + self.red.gt(&hbz);
        let dw = self.chol.solve(&rhs);
        let mut gdw = self.red.g(&dw);
        gdw.axpy(-1.0, bz);
        let mut dz = self.scaling.h(&gdw);
        dz.symmetrize();
        (dw, dz)
    }
}

#[derive(Clone)]
struct Iterate {
    w: DVector<f64>,
    s: ConeVec,
    z: ConeVec,
    tau: f64,
    kappa: f64,
}

struct Metrics {
    pres: f64,
    dres: f64,
    gap: f64,
    relgap: Option<f64>,
    pcost: f64,
    dcost: f64,
    pinfres: Option<f64>,
    dinfres: Option<f64>,
}

impl Metrics {
    /// Worst of the normalized residuals and the relative gap.
    fn score(&self) -> f64 {
        let g = self.relgap.map_or(self.gap, |r| r.min(self.gap));
        self.pres.max(self.dres).max(g)
    }

    fn optimal(&self, feas: f64, gap: f64) -> bool {
        self.pres <= feas && self.dres <= feas && (self.gap <= gap || self.relgap.is_some_and(|r| r <= gap))
    }
}

fn metrics(red: &Reduced, it: &Iterate, resx0: f64, resz0: f64) -> Metrics {
    let offset = red.offset;
    let hrx = red.gt(&it.z);
    let hresx = hrx.norm();
    let rx = &hrx + &red.c * it.tau;
    let mut hrz = it.s.clone();
    hrz.axpy(1.0, &red.g(&it.w));
    let hresz = hrz.norm();
    let mut rz = hrz;
    rz.axpy(-it.tau, &red.h);
    let cx = red.c.dot(&it.w);
    let hz = red.h.dot(&it.z);
    let gap = it.s.dot(&it.z) / (it.tau * it.tau);
    let pcost = cx / it.tau + offset;
    let dcost = -hz / it.tau + offset;
    let relgap = if pcost < 0.0 {
        Some(gap / -pcost)
    } else if dcost > 0.0 {
        Some(gap / dcost)
    } else {
        None
    };
    Metrics {
        pres: rz.norm() / it.tau / resz0,
        dres: rx.norm() / it.tau / resx0,
        gap,
        relgap,
        pcost,
        dcost,
        pinfres: (hz < 0.0).then(|| hresx / resx0 / -hz),
        dinfres: (cx < 0.0).then(|| hresz / resz0 / -cx),
    }
}

pub fn solve(problem: &ConicProblem, opts: &SolverOptions) -> ConicSolution {
    let n = problem.num_vars;
    let pre = EqualityPresolve::new(n, &problem.equalities);
    if !pre.consistent {
        return ConicSolution::failed(SolverStatus::Infeasible, n, 0);
    }
    let map = ConeMap::new(problem);
    let obj = {
        let mut v = DVector::zeros(n);
        for &(k, c) in &problem.objective.terms {
            v[k] += c;
        }
        v
    };
    let mut h = map.constant();
    h.axpy(1.0, &map.apply(&pre.x_p));
    let red = Reduced {
        map: &map,
        null: &pre.null,
        c: -(pre.null.transpose() * &obj),
        h,
        offset: -obj.dot(&pre.x_p),
    };
    let k = pre.null.ncols();
    let dims = map.dims.clone();
    let degree = dims.degree() as f64;

    if dims.degree() == 0 {
        return unconstrained(problem, &pre, &red, &obj);
    }

    let m0 = red.reduced_schur(None);
    let Some(chol0) = cholesky(&m0) else {
        return ConicSolution::failed(SolverStatus::NumericalFailure, n, 0);
    };
    let w0 = chol0.solve(&red.gt(&red.h));
    let mut s0 = red.h.clone();
    s0.axpy(-1.0, &red.g(&w0));
    let u = chol0.solve(&(-&red.c));
    let mut z0 = red.g(&u);
    for v in [&mut s0, &mut z0] {
        v.symmetrize();
        let nrm = v.norm();
        let t = -v.min_eig();
        if t >= -1e-8 * nrm.max(1.0) {
            v.add_identity(1.0 + t);
        }
    }
    let mut it = Iterate {
        w: w0,
        s: s0,
        z: z0,
        tau: 1.0,
        kappa: 1.0,
    };
    let resx0 = red.c.norm().max(1.0);
    let resz0 = red.h.norm().max(1.0);

    let (mut scaling, mut lambda) = match NtScaling::compute(&it.s, &it.z) {
        Ok(v) => v,
        Err(_) => return ConicSolution::failed(SolverStatus::NumericalFailure, n, 0),
    };

    let mut iters = 0;
    let mut status = None;
    let mut best: Option<(f64, Iterate, usize)> = None;
    while iters <= opts.max_iter {
        let met = metrics(&red, &it, resx0, resz0);
        let score = met.score();
        if score.is_finite() && best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, it.clone(), iters));
        }
        debug!(
            "ipm {iters:3} pcost {:+.6e} dcost {:+.6e} gap {:.1e} pres {:.1e} dres {:.1e} tau {:.1e} kappa {:.1e}",
            met.pcost, met.dcost, met.gap, met.pres, met.dres, it.tau, it.kappa
        );
        if met.optimal(opts.feas_tol, opts.gap_tol) {
            status = Some(SolverStatus::Optimal);
            break;
        }
        let tiny_tau = it.tau < 1e-8 * it.kappa;
        let loose_feas = opts.feas_tol * opts.loosen;
        if let Some(p) = met.pinfres {
            if p <= opts.feas_tol || (tiny_tau && p <= loose_feas) {
                status = Some(SolverStatus::Infeasible);
                break;
            }
        }
        if let Some(d) = met.dinfres {
            if d <= opts.feas_tol || (tiny_tau && d <= loose_feas) {
                status = Some(SolverStatus::Unbounded);
                break;
            }
        }
        if iters == opts.max_iter {
            break;
        }
        if best.as_ref().is_some_and(|b| iters > b.2 + STALL_ITERS) {
            debug!("ipm: no progress since iterate {}", best.as_ref().map_or(0, |b| b.2));
            break;
        }
        iters += 1;

        let mu = (lambda.to_cone().dot(&lambda.to_cone()) + it.tau * it.kappa) / (degree + 1.0);
        let m = red.reduced_schur(Some(&scaling));
        let Some(chol) = cholesky(&m) else {
            debug!("ipm: Schur complement factorization failed");
            break;
        };
        let kkt = Kkt {
            red: &red,
            scaling: &scaling,
            chol,
        };
        let (w1, z1) = kkt.solve(&(-&red.c), &red.h);

        let rx = red.gt(&it.z) + &red.c * it.tau;
        let mut rz = it.s.clone();
        rz.axpy(1.0, &red.g(&it.w));
        rz.axpy(-it.tau, &red.h);
        let rt = it.kappa + red.c.dot(&it.w) + red.h.dot(&it.z);

        let lam_sq = lambda.square();
        let newton = |sigma: f64, corr: Option<(&ConeVec, f64)>| {
            let mut rc = lam_sq.scaled(-1.0);
            rc.add_identity(sigma * mu);
            let mut rk = -it.tau * it.kappa + sigma * mu;
            if let Some((prod, dtk)) = corr {
                rc.axpy(-1.0, prod);
                rk -= dtk;
            }
            let ut = lambda.solve_circ(&rc);
            let ex = &rx * -(1.0 - sigma);
            let mut ez = rz.scaled(-(1.0 - sigma));
            ez.axpy(-1.0, &scaling.wt(&ut));
            let et = -(1.0 - sigma) * rt;
            let (w2, z2) = kkt.solve(&ex, &ez);
            let denom = red.c.dot(&w1) + red.h.dot(&z1) - it.kappa / it.tau;
            let dtau = (et - rk / it.tau - red.c.dot(&w2) - red.h.dot(&z2)) / denom;
            let dkappa = (rk - it.kappa * dtau) / it.tau;
            let dw = &w2 + &w1 * dtau;
            let mut dz = z2;
            dz.axpy(dtau, &z1);
            let dzt = scaling.w(&dz);
            let dst = ut.sub(&dzt);
            let mut ds = rz.scaled(-(1.0 - sigma));
            ds.axpy(-1.0, &red.g(&dw));
            ds.axpy(dtau, &red.h);
            Direction {
                dw,
                ds,
                dz,
                dst,
                dzt,
                dtau,
                dkappa,
            }
        };
        let step = |d: &Direction| {
            let mut a = lambda.max_step(&d.dst).min(lambda.max_step(&d.dzt));
            if d.dtau < 0.0 {
                a = a.min(-it.tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-it.kappa / d.dkappa);
            }
            a
        };

        let aff = newton(0.0, None);
        let a_aff = step(&aff).min(1.0);
        let sigma = (1.0 - a_aff).powi(EXPON);
        let prod = jordan(&aff.dst, &aff.dzt);
        let dir = newton(sigma, Some((&prod, aff.dtau * aff.dkappa)));
        let alpha = (STEP * step(&dir)).min(1.0);
        if !(alpha > 1e-12) || !dir.dw.iter().all(|v| v.is_finite()) {
            debug!("ipm: step length {alpha:e}, stopping");
            break;
        }

        let lam = lambda.to_cone();
        let mut st = lam.clone();
        st.axpy(alpha, &dir.dst);
        let mut zt = lam;
        zt.axpy(alpha, &dir.dzt);
        st.symmetrize();
        zt.symmetrize();
        it.w += &dir.dw * alpha;
        it.tau += alpha * dir.dtau;
        it.kappa += alpha * dir.dkappa;
        let mut s_new = it.s.clone();
        s_new.axpy(alpha, &dir.ds);
        let mut z_new = it.z.clone();
        z_new.axpy(alpha, &dir.dz);
        s_new.symmetrize();
        z_new.symmetrize();
        match NtScaling::compute(&s_new, &z_new) {
            Ok((sc, l)) => {
                scaling = sc;
                lambda = l;
                it.s = s_new;
                it.z = z_new;
            }
            Err(_) => match scaling.update(&st, &zt) {
                Ok(l) => {
                    lambda = l;
                    let lc = lambda.to_cone();
                    it.s = scaling.wt(&lc);
                    it.z = scaling.winv(&lc);
                    it.s.symmetrize();
                    it.z.symmetrize();
                }
                Err(_) => {
                    debug!("ipm: lost interiority");
                    break;
                }
            },
        }
        if !it.s.is_finite() || !it.z.is_finite() || !it.tau.is_finite() {
            break;
        }
    }

    if status.is_none() {
        // stalled or out of iterations: fall back to the best iterate seen
        if let Some((_, b, k)) = best {
            debug!("ipm: falling back to iterate {k}");
            it = b;
        }
    }
    let met = metrics(&red, &it, resx0, resz0);
    debug!(
        "ipm: final pres {:.1e} dres {:.1e} gap {:.1e} relgap {:?}",
        met.pres, met.dres, met.gap, met.relgap
    );
    let (status, loose) = match status {
        Some(s) => (s, false),
        None => {
            let lf = opts.feas_tol * opts.loosen;
            let lg = opts.gap_tol * opts.loosen;
            if met.optimal(opts.feas_tol * STALL_FACTOR, opts.gap_tol * STALL_FACTOR) {
                (SolverStatus::Optimal, false)
            } else if met.optimal(lf, lg) {
                (SolverStatus::MaxIterations, true)
            } else if iters >= opts.max_iter {
                (SolverStatus::MaxIterations, false)
            } else {
                (SolverStatus::NumericalFailure, false)
            }
        }
    };
    debug!("ipm: {status} after {iters} iterations (loose: {loose}, k = {k})");
    finish(problem, &pre, &red, &obj, &it, &met, status, loose, iters)
}

struct Direction {
    dw: DVector<f64>,
    ds: ConeVec,
    dz: ConeVec,
    dst: ConeVec,
    dzt: ConeVec,
    dtau: f64,
    dkappa: f64,
}

/// Jordan product `(A B + B A) / 2`.
fn jordan(a: &ConeVec, b: &ConeVec) -> ConeVec {
    ConeVec {
        lp: a.lp.component_mul(&b.lp),
        sdp: a
            .sdp
            .iter()
            .zip(&b.sdp)
            .map(|(x, y)| {
                let p = x * y;
                (&p + p.transpose()) * 0.5
            })
            .collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &ConicProblem,
    pre: &EqualityPresolve,
    red: &Reduced,
    obj: &DVector<f64>,
    it: &Iterate,
    met: &Metrics,
    status: SolverStatus,
    loose: bool,
    iterations: usize,
) -> ConicSolution {
    let n = problem.num_vars;
    let constant = problem.objective.constant;
    match status {
        SolverStatus::Infeasible => {
            // Farkas certificate normalized so that <h, Z> = -1
            let hz = red.h.dot(&it.z);
            let z = it.z.scaled(-1.0 / hz);
            let mut sol = ConicSolution::failed(status, n, iterations);
            fill_duals(problem, red.map, &z, &mut sol);
            return sol;
        }
        SolverStatus::Unbounded => {
            let mut sol = ConicSolution::failed(status, n, iterations);
            let cw = red.c.dot(&it.w);
            let ray = red.null * &it.w * (-1.0 / cw);
            sol.x = ray.iter().copied().collect();
            return sol;
        }
        SolverStatus::NumericalFailure => {
            return ConicSolution::failed(status, n, iterations);
        }
        _ => {}
    }
    let w = &it.w / it.tau;
    let z = it.z.scaled(1.0 / it.tau);
    let x = &pre.x_p + red.null * &w;
    let primal = obj.dot(&x) + constant;
    let dual = obj.dot(&pre.x_p) + red.h.dot(&z) + constant;
    let g = obj + red.map.adjoint(&z);
    let mut sol = ConicSolution {
        status,
        loose,
        primal_objective: primal,
        dual_objective: dual,
        x: x.iter().copied().collect(),
        equality_duals: pre.multipliers(&g, problem.equalities.len()),
        psd_duals: Vec::new(),
        nonneg_duals: Vec::new(),
        residuals: Residuals {
            primal: met.pres,
            dual: met.dres,
            gap: met.gap,
        },
        iterations,
    };
    fill_duals(problem, red.map, &z, &mut sol);
    sol
}

fn fill_duals(problem: &ConicProblem, map: &ConeMap, z: &ConeVec, sol: &mut ConicSolution) {
    sol.psd_duals = map
        .block_origin
        .iter()
        .map(|o| match *o {
            Origin::Lp(i) => DMatrix::from_element(1, 1, z.lp[i]),
            Origin::Sdp(j) => z.sdp[j].clone(),
        })
        .collect();
    sol.nonneg_duals = map.nonneg_origin.iter().map(|&i| z.lp[i]).collect();
    debug_assert_eq!(sol.psd_duals.len(), problem.psd_blocks.len());
}

/// No cone constraints: the objective is constant on the affine set or
/// unbounded.
fn unconstrained(problem: &ConicProblem, pre: &EqualityPresolve, red: &Reduced, obj: &DVector<f64>) -> ConicSolution {
    let n = problem.num_vars;
    if red.c.norm() > 1e-12 * obj.norm().max(1.0) {
        let mut sol = ConicSolution::failed(SolverStatus::Unbounded, n, 0);
        sol.x = (red.null * &red.c * -1.0).iter().copied().collect();
        return sol;
    }
    let x = pre.x_p.clone();
    let v = obj.dot(&x) + problem.objective.constant;
    ConicSolution {
        status: SolverStatus::Optimal,
        loose: false,
        primal_objective: v,
        dual_objective: v,
        x: x.iter().copied().collect(),
        equality_duals: pre.multipliers(obj, problem.equalities.len()),
        psd_duals: Vec::new(),
        nonneg_duals: Vec::new(),
        residuals: Residuals::default(),
        iterations: 0,
    }
}
