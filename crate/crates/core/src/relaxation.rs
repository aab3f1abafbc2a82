//! Degree-d moment relaxations of peak, maximin and unsafe-reachability
//! measure programs, and decoding of their solutions.
//!
//! Problems are rescaled into `[-1, 1]^n` (and time into `[0, 1]`) before the
//! relaxation is built; objective values are invariant under the change of
//! coordinates, and decoded certificates are mapped back to original units.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conic::{ConicProblem, ConicSolution, SolverOptions, SolverStatus};
use crate::error::{Error, Result};
use crate::moments::{
    functional, half_degree, liouville_rows, localizing_matrix, mass_row, moment_matrix, standard_monomials,
    zero_localizing_rows, LinearFunctional, LinearMatrixForm, LinearRow, MeasureId, MomentLayout,
};
use crate::polyalg::{MultiIndex, Polynomial};
use crate::problem::{PeakProblem, Scaling, TestFunctions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Program {
    Peak,
    Maximin,
    /// Feasibility of a flow from the initial set into the unsafe set; the
    /// peak-measure slot holds the terminal measure.
    Unsafe,
}

/// A compiled relaxation together with the bookkeeping needed to decode it.
#[derive(Clone, Debug)]
pub struct Relaxation {
    pub program: Program,
    pub degree: usize,
    /// Moment order of the PSD blocks; at least `degree`.
    pub order: usize,
    /// The rescaled problem the relaxation was built from.
    pub scaled: PeakProblem,
    pub layout: MomentLayout,
    pub conic: ConicProblem,
    pub mass_row: usize,
    /// Test monomial (joint variables) and equality index of every Liouville row.
    pub liouville: Vec<(MultiIndex, usize)>,
    /// Equality indices of the `q + z_i - <p_i, mu_p> = 0` rows.
    pub slack_rows: Vec<usize>,
    /// PSD block index of the occupation-mass cap, if any.
    pub mass_cap_block: Option<usize>,
}

impl Relaxation {
    pub fn time_dependent(&self) -> bool {
        self.scaled.time_dependent()
    }

    pub fn solver_options(&self) -> SolverOptions {
        solver_options(&self.scaled)
    }

    pub fn solve(&self) -> ConicSolution {
        crate::conic::solve(&self.conic, &self.solver_options())
    }
}

pub fn solver_options(problem: &PeakProblem) -> SolverOptions {
    let mut o = SolverOptions::default();
    if let Some(v) = problem.options.feas_tol {
        o.feas_tol = v;
    }
    if let Some(v) = problem.options.gap_tol {
        o.gap_tol = v;
    }
    if let Some(v) = problem.options.max_iter {
        o.max_iter = v;
    }
    o
}

/// Smallest degree admitted by the problem's constraints, objectives and
/// dynamics.
pub fn min_degree(problem: &PeakProblem) -> usize {
    let sets = [
        Some(&problem.state_set),
        Some(&problem.initial_set),
        problem.unsafe_set.as_ref(),
    ];
    let mut d = 1;
    for s in sets.into_iter().flatten() {
        for g in s.ineq.iter().chain(&s.eq) {
            d = d.max(half_degree(g));
        }
    }
    for p in &problem.objectives {
        d = d.max(half_degree(p));
    }
    d
}

pub fn build_peak(problem: &PeakProblem, d: usize) -> Result<Relaxation> {
    if problem.objectives.len() != 1 {
        return Err(Error::InvalidProblem(format!(
            "peak program needs exactly one objective, found {}; use the maximin program",
            problem.objectives.len()
        )));
    }
    build(problem, d, Program::Peak)
}

pub fn build_maximin(problem: &PeakProblem, d: usize) -> Result<Relaxation> {
    if problem.objectives.is_empty() {
        return Err(Error::EmptyObjectives);
    }
    build(problem, d, Program::Maximin)
}

pub fn build_unsafe_feasibility(problem: &PeakProblem, d: usize) -> Result<Relaxation> {
    if problem.unsafe_set.is_none() {
        return Err(Error::InvalidProblem("problem has no unsafe_set".into()));
    }
    build(problem, d, Program::Unsafe)
}

fn check_degree(d: usize, polys: &[&Polynomial]) -> Result<()> {
    for p in polys {
        let k = half_degree(p);
        if k > d {
            return Err(Error::DegreeTooSmall { degree: d, required: k });
        }
    }
    Ok(())
}

fn build(problem: &PeakProblem, d: usize, program: Program) -> Result<Relaxation> {
    if d == 0 {
        return Err(Error::DegreeTooSmall { degree: 0, required: 1 });
    }
    let scaled = problem.rescale()?;
    let n = scaled.nstates();
    let td = scaled.time_dependent();
    let joint = scaled.joint_nvars();
    let nscalars = match program {
        Program::Maximin => 1 + scaled.objectives.len(),
        _ => 0,
    };
    let order = moment_order(&scaled, d);
    let layout = MomentLayout::new(n, joint, 2 * order, nscalars);

    let terminal_set = match program {
        Program::Unsafe => scaled.unsafe_set.clone().expect("checked by caller"),
        _ => scaled.state_set.clone(),
    };
    let mut all: Vec<&Polynomial> = Vec::new();
    for s in [&scaled.state_set, &scaled.initial_set, &terminal_set] {
        all.extend(s.ineq.iter().chain(&s.eq));
    }
    if program != Program::Unsafe {
        all.extend(&scaled.objectives);
    }
    check_degree(d, &all)?;

    let objective = match program {
        Program::Peak => functional(&layout, MeasureId::Peak, &scaled.lift_state_poly(&scaled.objectives[0]))?,
        Program::Maximin => LinearFunctional::single(layout.scalar(0), 1.0),
        Program::Unsafe => LinearFunctional::default(),
    };
    let mut conic = ConicProblem::new(layout.len(), objective);

    let mut liouville = Vec::new();
    for (m, row) in liouville_rows(&layout, &scaled.dynamics, 2 * d, td)? {
        liouville.push((m, conic.equalities.len()));
        conic.equalities.push(row);
    }
    let mass = conic.equalities.len();
    conic.equalities.push(mass_row(&layout));

    let mut slack_rows = Vec::new();
    if program == Program::Maximin {
        for (i, p) in scaled.objectives.iter().enumerate() {
            let f = functional(&layout, MeasureId::Peak, &scaled.lift_state_poly(p))?;
            let mut terms = vec![(layout.scalar(0), 1.0), (layout.scalar(1 + i), 1.0)];
            terms.extend(f.terms.iter().map(|&(k, c)| (k, -c)));
            slack_rows.push(conic.equalities.len());
            conic.equalities.push(LinearRow::new(terms, 0.0));
            conic.nonneg.push(layout.scalar(1 + i));
        }
    }

    let lift = |v: &[Polynomial]| v.iter().map(|p| scaled.lift_state_poly(p)).collect::<Vec<_>>();
    let x_ineq = lift(&scaled.state_set.ineq);
    let x_eq = lift(&scaled.state_set.eq);
    let t_ineq = lift(&terminal_set.ineq);
    let t_eq = lift(&terminal_set.eq);
    let mut sets: [(Vec<Polynomial>, &[Polynomial]); 3] = [
        (scaled.initial_set.ineq.clone(), &scaled.initial_set.eq),
        (x_ineq, &x_eq),
        (t_ineq, &t_eq),
    ];
    // redundant 1 - x_i^2 >= 0 on the scaled box reaches the top-degree
    // moments that linear box constraints leave free
    for i in 0..n {
        let xi = Polynomial::var(n, i);
        let g = &Polynomial::constant(n, 1.0) - &xi.pow(2);
        sets[0].0.push(g.clone());
        let lifted = scaled.lift_state_poly(&g);
        sets[1].0.push(lifted.clone());
        sets[2].0.push(lifted);
    }
    if td {
        let t = Polynomial::var(joint, 0);
        let g = &t - &t.pow(2);
        if order >= half_degree(&g) {
            sets[1].0.push(g.clone());
            sets[2].0.push(g);
        }
    }
    for (m, (ineq, eq)) in MeasureId::ALL.into_iter().zip(&sets) {
        let nvars = layout.block(m).nvars;
        let one = Polynomial::constant(nvars, 1.0);
        for g in std::iter::once(&one).chain(ineq) {
            let form = localizing_matrix(&layout, m, g, order)?;
            let keep = standard_monomials(nvars, eq, order - half_degree(g));
            if keep.is_empty() {
                continue;
            }
            conic.psd_blocks.push(if keep.len() == form.side {
                form
            } else {
                form.restrict(&keep)
            });
        }
        for h in eq.iter() {
            conic.equalities.extend(zero_localizing_rows(&layout, m, h, order)?);
        }
    }
    let mut mass_cap_block = None;
    if let Some(cap) = scaled.options.mass_cap {
        let occ0 = layout.block(MeasureId::Occupation).offset;
        // cap is in original time units
        let scaled_cap = cap / scaled.scaling.time_scale;
        mass_cap_block = Some(conic.psd_blocks.len());
        conic.psd_blocks.push(LinearMatrixForm {
            side: 1,
            entries: vec![LinearFunctional::new(vec![(occ0, -1.0)], scaled_cap)],
        });
    }

    Ok(Relaxation {
        program,
        degree: d,
        order,
        scaled,
        layout,
        conic,
        mass_row: mass,
        liouville,
        slack_rows,
        mass_cap_block,
    })
}

/// Moment order needed by the Liouville rows of a degree-d relaxation.
pub fn moment_order(problem: &PeakProblem, d: usize) -> usize {
    match problem.options.test_functions.unwrap_or_default() {
        TestFunctions::Truncated => d,
        TestFunctions::Full => {
            let fdeg = problem.dynamics.iter().filter_map(|f| f.degree()).max().unwrap_or(0);
            let top = 2 * d + fdeg.saturating_sub(1);
            d.max(top.div_ceil(2))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackRecord {
    pub q: f64,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PeakBound {
    pub program: Program,
    pub degree: usize,
    pub order: usize,
    /// Primal objective, original units.
    pub bound: f64,
    pub dual_bound: f64,
    pub status: SolverStatus,
    pub loose: bool,
    pub beta: Vec<f64>,
    pub gamma: f64,
    /// `v(t, x)` in original coordinates (time first when time-dependent).
    pub aux_function: Polynomial,
    /// `v` in the solver's scaled coordinates.
    pub aux_function_scaled: Polynomial,
    /// Full-order moment matrices of the initial, occupation and peak
    /// measures, scaled coordinates.
    pub moment_matrices: [DMatrix<f64>; 3],
    /// Moment vectors of the three measures, scaled coordinates.
    pub moments: [Vec<f64>; 3],
    pub slack: Option<SlackRecord>,
    /// Occupation-measure mass in original time units.
    pub occupation_mass: f64,
    pub mass_at_cap: bool,
    pub scaling: Scaling,
    pub time_dependent: bool,
    pub nstates: usize,
}

impl PeakBound {
    pub fn moment_matrix(&self, m: MeasureId) -> &DMatrix<f64> {
        &self.moment_matrices[slot(m)]
    }

    pub fn moment_vector(&self, m: MeasureId) -> &[f64] {
        &self.moments[slot(m)]
    }
}

fn slot(m: MeasureId) -> usize {
    match m {
        MeasureId::Initial => 0,
        MeasureId::Occupation => 1,
        MeasureId::Peak => 2,
    }
}

pub fn decode(relax: &Relaxation, sol: &ConicSolution) -> Result<PeakBound> {
    if !sol.is_usable() {
        return Err(Error::Undecodable(sol.status.to_string()));
    }
    let layout = &relax.layout;
    let x = &sol.x;
    let d = relax.degree;
    let td = relax.time_dependent();
    let joint = relax.scaled.joint_nvars();

    let mut v_terms = Vec::with_capacity(relax.liouville.len());
    for (m, row) in &relax.liouville {
        v_terms.push((m.clone(), -sol.equality_duals[*row]));
    }
    let v_scaled = Polynomial::from_terms(joint, v_terms);
    let aux = relax.scaled.scaling.poly_to_original(&v_scaled, td);

    let (beta, slack) = match relax.program {
        Program::Maximin => {
            let raw: Vec<f64> = relax.slack_rows.iter().map(|&r| sol.equality_duals[r]).collect();
            if raw.iter().any(|&b| b < -1e-6) {
                log::warn!("negative dual weight in beta: {raw:?}");
            }
            let clipped: Vec<f64> = raw.iter().map(|&b| b.max(0.0)).collect();
            let s: f64 = clipped.iter().sum();
            let beta = if s > 0.0 {
                clipped.iter().map(|b| b / s).collect()
            } else {
                vec![1.0 / raw.len() as f64; raw.len()]
            };
            let slack = SlackRecord {
                q: x[layout.scalar(0)],
                z: (0..relax.scaled.objectives.len())
                    .map(|i| x[layout.scalar(1 + i)])
                    .collect(),
            };
            (beta, Some(slack))
        }
        Program::Peak => (vec![1.0], None),
        Program::Unsafe => (Vec::new(), None),
    };

    let mats = MeasureId::ALL.map(|m| {
        moment_matrix(layout, m, relax.order)
            .map(|f| f.instantiate(x))
            .unwrap_or_else(|_| DMatrix::zeros(0, 0))
    });
    let moments = MeasureId::ALL.map(|m| layout.moments(m, x).to_vec());
    let occ_mass = x[layout.block(MeasureId::Occupation).offset] * relax.scaled.scaling.time_scale;
    let mass_at_cap = relax.mass_cap_block.is_some_and(|b| {
        let e = &relax.conic.psd_blocks[b].entries[0];
        e.eval(x).abs() <= 1e-6 * e.constant.abs().max(1.0)
    });

    Ok(PeakBound {
        program: relax.program,
        degree: d,
        order: relax.order,
        bound: sol.primal_objective,
        dual_bound: sol.dual_objective,
        status: sol.status,
        loose: sol.loose,
        beta,
        gamma: sol.equality_duals[relax.mass_row],
        aux_function: aux,
        aux_function_scaled: v_scaled,
        moment_matrices: mats,
        moments,
        slack,
        occupation_mass: occ_mass,
        mass_at_cap,
        scaling: relax.scaled.scaling.clone(),
        time_dependent: td,
        nstates: relax.scaled.nstates(),
    })
}

/// Builds, solves and decodes one relaxation.
pub fn solve_program(problem: &PeakProblem, d: usize, program: Program) -> Result<(Relaxation, ConicSolution)> {
    let relax = match program {
        Program::Peak => build_peak(problem, d)?,
        Program::Maximin => build_maximin(problem, d)?,
        Program::Unsafe => build_unsafe_feasibility(problem, d)?,
    };
    let sol = relax.solve();
    Ok((relax, sol))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frozen_point() -> PeakProblem {
        PeakProblem::from_json(
            r#"{
                "variables": ["x1", "x2"],
                "dynamics": ["0", "0"],
                "horizon": 1,
                "state_set": {"ineq": ["1 - x1^2", "1 - x2^2"]},
                "initial_set": {"eq": ["x1 - 0.3", "x2 - 0.4"]},
                "objectives": ["x1"]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn frozen_dynamics_from_a_point() {
        let p = frozen_point();
        for d in 1..=3 {
            let (relax, sol) = solve_program(&p, d, Program::Peak).unwrap();
            assert_eq!(
                sol.status,
                SolverStatus::Optimal,
                "d = {d} {:?} it {} loose {} obj {}",
                sol.residuals,
                sol.iterations,
                sol.loose,
                sol.primal_objective
            );
            let b = decode(&relax, &sol).unwrap();
            assert!((b.bound - 0.3).abs() < 1e-6, "d = {d}: {}", b.bound);
            assert_eq!(b.beta, vec![1.0]);
            assert!(b.gamma >= b.bound - 1e-6);
        }
    }

    #[test]
    fn single_objective_maximin_matches_peak() {
        let p = frozen_point();
        let (r1, s1) = solve_program(&p, 2, Program::Peak).unwrap();
        let (r2, s2) = solve_program(&p, 2, Program::Maximin).unwrap();
        let b1 = decode(&r1, &s1).unwrap();
        let b2 = decode(&r2, &s2).unwrap();
        assert!((b1.bound - b2.bound).abs() < 1e-6);
        assert!((b2.beta[0] - 1.0).abs() < 1e-9);
        let sl = b2.slack.unwrap();
        assert!((sl.q - b2.bound).abs() < 1e-6);
    }

    #[test]
    fn degree_too_small() {
        let mut p = frozen_point();
        p.objectives = vec![Polynomial::var(2, 0).pow(4)];
        assert!(matches!(build_peak(&p, 1), Err(Error::DegreeTooSmall { .. })));
        assert!(build_peak(&p, 2).is_ok());
    }

    #[test]
    fn peak_requires_single_objective() {
        let mut p = frozen_point();
        p.objectives.push(Polynomial::var(2, 1));
        assert!(build_peak(&p, 1).is_err());
        assert!(build_maximin(&p, 1).is_ok());
    }
}
