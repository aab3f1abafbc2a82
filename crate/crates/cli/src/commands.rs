use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use peakcert::conic::sdpa;
use peakcert::extraction::{estimate_rank, seed_from_env, DEFAULT_RANK_TOL};
use peakcert::moments::MeasureId;
use peakcert::polyalg::{format_polynomial, Polynomial};
use peakcert::problem::PeakProblem;
use peakcert::recovery::{
    algorithm1, moment_block, simulate, simulation_horizon, trajectory_csv, unsafe_feasibility, Feasibility,
    MarginReport, RecoveryOptions, Verdict, DEFAULT_EPSILON,
};
use peakcert::relaxation::{
    build_maximin, build_peak, build_unsafe_feasibility, decode, min_degree, solve_program, solver_options, PeakBound,
    Program,
};
use peakcert::Error;

use crate::plot;
use crate::report::{digest, DegreeRecord, RunOptions, RunReport, VerdictRecord};

/// Failure classes of the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Solver(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Solver(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Solver(m) => write!(f, "solver failure: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Undecodable(_) => Failure::Solver(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

/// Flag overrides of the problem file's options.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub rank_tol: Option<f64>,
    pub epsilon: Option<f64>,
    pub feas_tol: Option<f64>,
    pub gap_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub mass_cap: Option<f64>,
    pub t_sim: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub enum Degrees {
    Single(usize),
    Ladder(usize, usize),
    Default,
}

pub struct Loaded {
    pub problem: PeakProblem,
    pub digest: String,
}

pub fn load(path: &Path, ov: &Overrides) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let mut problem = PeakProblem::from_json(&text)?;
    let digest = digest(&text).map_err(|e| Failure::Input(e.to_string()))?;
    let o = &mut problem.options;
    o.rank_tol = ov.rank_tol.or(o.rank_tol);
    o.epsilon = ov.epsilon.or(o.epsilon);
    o.feas_tol = ov.feas_tol.or(o.feas_tol);
    o.gap_tol = ov.gap_tol.or(o.gap_tol);
    o.max_iter = ov.max_iter.or(o.max_iter);
    o.mass_cap = ov.mass_cap.or(o.mass_cap);
    o.t_sim = ov.t_sim.or(o.t_sim);
    for (name, v) in [
        ("rank-tol", o.rank_tol),
        ("epsilon", o.epsilon),
        ("feas-tol", o.feas_tol),
        ("gap-tol", o.gap_tol),
        ("mass-cap", o.mass_cap),
        ("t-sim", o.t_sim),
    ] {
        if let Some(v) = v {
            if !(v.is_finite() && v > 0.0) {
                return Err(Failure::Input(format!("{name} must be positive, got {v}")));
            }
        }
    }
    Ok(Loaded { problem, digest })
}

pub fn degree_list(problem: &PeakProblem, d: Degrees) -> Result<Vec<usize>, Failure> {
    let list = match d {
        Degrees::Single(d) => vec![d],
        Degrees::Ladder(a, b) if a <= b => (a..=b).collect(),
        Degrees::Ladder(a, b) => return Err(Failure::Input(format!("empty ladder {a}..{b}"))),
        Degrees::Default => vec![problem.options.degree.unwrap_or_else(|| min_degree(problem))],
    };
    if list.contains(&0) {
        return Err(Failure::Input("degree must be at least 1".into()));
    }
    Ok(list)
}

fn run_options(problem: &PeakProblem, degrees: Vec<usize>, program: Option<Program>) -> RunOptions {
    let s = solver_options(problem);
    RunOptions {
        degrees,
        program,
        rank_tol: problem.options.rank_tol.unwrap_or(DEFAULT_RANK_TOL),
        epsilon: None,
        feas_tol: s.feas_tol,
        gap_tol: s.gap_tol,
        max_iter: s.max_iter,
        mass_cap: problem.options.mass_cap,
        t_sim: None,
        seed: None,
    }
}

pub struct Output {
    dir: PathBuf,
    created: bool,
}

impl Output {
    pub fn new(dir: PathBuf) -> Self {
        Output { dir, created: false }
    }

    pub fn write(&mut self, report: &mut RunReport, name: &str, contents: &str) -> Result<(), Failure> {
        if !self.created {
            fs::create_dir_all(&self.dir).map_err(|e| Failure::Input(format!("{}: {e}", self.dir.display())))?;
            self.created = true;
        }
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        if name != "report.json" {
            report.outputs.push(name.to_string());
        }
        Ok(())
    }

    pub fn finish(&mut self, report: &mut RunReport, start: Instant) -> Result<(), Failure> {
        report.timings.total_s = start.elapsed().as_secs_f64();
        let json = report.to_json();
        self.write(report, "report.json", &json)?;
        println!("report: {}", self.dir.join("report.json").display());
        Ok(())
    }
}

fn joint_names(problem: &PeakProblem) -> Vec<&str> {
    let mut v = Vec::new();
    if problem.time_dependent() {
        v.push("t");
    }
    v.extend(problem.names());
    v
}

/// `v` in the problem file's coordinates.
fn aux_in_problem_coords(problem: &PeakProblem, b: &PeakBound) -> Polynomial {
    problem.scaling.poly_to_scaled(&b.aux_function, b.time_dependent)
}

fn degree_record(
    problem: &PeakProblem,
    b: &PeakBound,
    iterations: usize,
    residuals: peakcert::conic::Residuals,
) -> DegreeRecord {
    let tol = problem.options.rank_tol.unwrap_or(DEFAULT_RANK_TOL);
    DegreeRecord {
        degree: b.degree,
        order: b.order,
        program: b.program,
        status: b.status,
        loose: b.loose,
        iterations,
        residuals,
        bound: Some(b.bound),
        dual_bound: Some(b.dual_bound),
        gamma: Some(b.gamma),
        beta: if b.program == Program::Maximin {
            b.beta.clone()
        } else {
            Vec::new()
        },
        slack: b.slack.clone(),
        rank_initial: Some(estimate_rank(&moment_block(b, MeasureId::Initial, b.degree), tol)),
        rank_peak: Some(estimate_rank(&moment_block(b, MeasureId::Peak, b.degree), tol)),
        occupation_mass: Some(b.occupation_mass),
        mass_at_cap: b.mass_at_cap,
        aux_function: Some(format_polynomial(
            &aux_in_problem_coords(problem, b),
            &joint_names(problem),
        )),
    }
}

fn failed_record(d: usize, program: Program, sol: &peakcert::conic::ConicSolution, order: usize) -> DegreeRecord {
    DegreeRecord {
        degree: d,
        order,
        program,
        status: sol.status,
        loose: sol.loose,
        iterations: sol.iterations,
        residuals: sol.residuals,
        bound: None,
        dual_bound: None,
        gamma: None,
        beta: Vec::new(),
        slack: None,
        rank_initial: None,
        rank_peak: None,
        occupation_mass: None,
        mass_at_cap: false,
        aux_function: None,
    }
}

/// Solves one program at each degree; failed degrees are recorded and the
/// ladder continues.
fn solve_ladder(
    problem: &PeakProblem,
    degrees: &[usize],
    program: Program,
    report: &mut RunReport,
) -> Result<(Option<PeakBound>, usize), Failure> {
    let mut last = None;
    let mut failures = 0;
    for &d in degrees {
        let t = Instant::now();
        let (relax, sol) = solve_program(problem, d, program)?;
        report.timings.per_degree_s.push(t.elapsed().as_secs_f64());
        match decode(&relax, &sol) {
            Ok(b) => {
                let rec = degree_record(problem, &b, sol.iterations, sol.residuals);
                println!(
                    "degree {d}: bound {:.6} ({}{})",
                    b.bound,
                    b.status,
                    if b.loose { ", loose" } else { "" }
                );
                if b.mass_at_cap {
                    report.warnings.push(format!("degree {d}: occupation mass at its cap"));
                }
                report.degrees.push(rec);
                last = Some(b);
            }
            Err(e) => {
                println!("degree {d}: {e}");
                report.warnings.push(format!("degree {d}: {e}"));
                report.degrees.push(failed_record(d, program, &sol, relax.order));
                failures += 1;
            }
        }
    }
    Ok((last, failures))
}

fn write_plots(
    problem: &PeakProblem,
    bound: Option<&PeakBound>,
    out: &mut Output,
    report: &mut RunReport,
) -> Result<(), Failure> {
    let names = problem.names();
    let Ok(bounds) = problem.bounding_box() else {
        return Ok(());
    };
    if let Some(b) = bound {
        let v = aux_in_problem_coords(problem, b);
        match plot::levelset_csv(&v, &names, &bounds, b.time_dependent) {
            Some(csv) => out.write(report, "levelset.csv", &csv)?,
            None => report
                .warnings
                .push("level set sampling skipped: more than two states".into()),
        }
    }
    if names.len() == 2 {
        let mut sets = vec![("initial", plot::set_boundary(&problem.initial_set, &bounds))];
        if let Some(u) = &problem.unsafe_set {
            sets.push(("unsafe", plot::set_boundary(u, &bounds)));
        }
        out.write(report, "boundaries.csv", &plot::boundaries_csv(&names, &sets))?;
    }
    Ok(())
}

pub fn bound(file: &Path, degrees: Degrees, ov: &Overrides, program: Program, out: PathBuf) -> Result<(), Failure> {
    let start = Instant::now();
    let Loaded { problem, digest } = load(file, ov)?;
    let ds = degree_list(&problem, degrees)?;
    match program {
        Program::Peak if problem.objectives.len() != 1 => {
            return Err(Failure::Input(format!(
                "bound needs exactly one objective, found {}; use maximin",
                problem.objectives.len()
            )))
        }
        _ if problem.objectives.is_empty() => return Err(Error::EmptyObjectives.into()),
        _ => {}
    }
    let command = if program == Program::Peak { "bound" } else { "maximin" };
    let mut report = RunReport::new(command, digest, run_options(&problem, ds.clone(), Some(program)));
    let (last, failures) = solve_ladder(&problem, &ds, program, &mut report)?;
    let mut out = Output::new(out);
    write_plots(&problem, last.as_ref(), &mut out, &mut report)?;
    out.finish(&mut report, start)?;
    if failures > 0 {
        return Err(Failure::Solver(format!("{failures} of {} degrees failed", ds.len())));
    }
    Ok(())
}

pub struct RecoverArgs {
    pub d0: Option<usize>,
    pub d_max: Option<usize>,
    pub backward_check: bool,
}

pub fn recover(file: &Path, args: &RecoverArgs, ov: &Overrides, out: PathBuf) -> Result<(), Failure> {
    let start = Instant::now();
    let Loaded { problem, digest } = load(file, ov)?;
    if problem.objectives.is_empty() {
        return Err(Error::EmptyObjectives.into());
    }
    let d0 = args
        .d0
        .unwrap_or_else(|| problem.options.degree.unwrap_or_else(|| min_degree(&problem)));
    let d_max = args.d_max.unwrap_or(d0 + 2);
    if d0 == 0 {
        return Err(Failure::Input("degree must be at least 1".into()));
    }
    let mut opts = RecoveryOptions::new(&problem, d0, d_max);
    opts.backward_check = args.backward_check;
    let mut ro = run_options(
        &problem,
        (d0..=d_max).collect(),
        Some(peakcert::recovery::recovery_program(&problem)),
    );
    ro.epsilon = Some(problem.options.epsilon.unwrap_or(DEFAULT_EPSILON));
    ro.t_sim = Some(simulation_horizon(&problem, None));
    ro.seed = Some(seed_from_env());
    let mut report = RunReport::new("recover", digest, ro);

    let outcome = algorithm1(&problem, &opts)?;
    for d in &outcome.degrees {
        let status = d.status.map(|s| s.to_string()).unwrap_or_else(|| "not solved".into());
        match d.bound {
            Some(b) => println!("degree {}: bound {b:.6} ({status}), {} atoms", d.degree, d.atoms.len()),
            None => println!("degree {}: {status}", d.degree),
        }
    }
    let mut out = Output::new(out);
    let t_max = simulation_horizon(&problem, None);
    for (k, tr) in outcome.triples.iter().enumerate() {
        println!(
            "triple {k}: x0 {:?} tp {:.6} xp {:?} value {:.6} gap {:.2e}",
            tr.x0, tr.tp, tr.xp, tr.sampled_value, tr.gap
        );
        let traj = simulate(&tr.x0, &problem, t_max);
        out.write(
            &mut report,
            &format!("traj_{k}.csv"),
            &trajectory_csv(&traj, &problem.objectives),
        )?;
    }
    let triples_json = serde_json::to_string_pretty(&outcome.triples).expect("triples serialize") + "\n";
    out.write(&mut report, "triples.json", &triples_json)?;
    write_plots(&problem, None, &mut out, &mut report)?;

    let solved = outcome.degrees.iter().filter(|d| d.bound.is_some()).count();
    report.warnings.extend(outcome.warnings.iter().cloned());
    report.triples = outcome.triples.clone();
    report.recovery = Some(outcome);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    out.finish(&mut report, start)?;
    if solved == 0 {
        return Err(Failure::Solver("no degree produced a usable relaxation".into()));
    }
    Ok(())
}

pub fn margin(
    file: &Path,
    degrees: Degrees,
    with_unsafe_check: bool,
    ov: &Overrides,
    out: PathBuf,
) -> Result<(), Failure> {
    let start = Instant::now();
    let Loaded { problem, digest } = load(file, ov)?;
    let mp = problem.margin_problem()?;
    let ds = degree_list(&mp, degrees)?;
    let mut report = RunReport::new(
        "margin",
        digest,
        run_options(&problem, ds.clone(), Some(Program::Maximin)),
    );
    let mut failures = 0;
    let mut last = None;
    for &d in &ds {
        let t = Instant::now();
        let (relax, sol) = solve_program(&mp, d, Program::Maximin)?;
        report.timings.per_degree_s.push(t.elapsed().as_secs_f64());
        match decode(&relax, &sol) {
            Ok(b) => {
                let verdict = if b.bound < 0.0 {
                    Verdict::Safe
                } else {
                    Verdict::Inconclusive
                };
                println!(
                    "degree {d}: margin {:.6} ({}{}), {}",
                    b.bound,
                    b.status,
                    if b.loose { ", loose" } else { "" },
                    if verdict == Verdict::Safe {
                        "safe"
                    } else {
                        "inconclusive"
                    }
                );
                report
                    .degrees
                    .push(degree_record(&mp, &b, sol.iterations, sol.residuals));
                report.margins.push(MarginReport {
                    degree: d,
                    margin: b.bound,
                    verdict,
                    status: b.status,
                    loose: b.loose,
                    beta: b.beta.clone(),
                });
                last = Some(b);
            }
            Err(e) => {
                println!("degree {d}: {e}");
                report.warnings.push(format!("degree {d}: {e}"));
                report
                    .degrees
                    .push(failed_record(d, Program::Maximin, &sol, relax.order));
                failures += 1;
            }
        }
    }
    report.verdict = match report.margins.iter().find(|m| m.verdict == Verdict::Safe) {
        Some(m) => Some(VerdictRecord {
            verdict: Verdict::Safe,
            degree: m.degree,
            statement: format!(
                "safe: margin {:.6} < 0 at degree {} bounds every trajectory away from the unsafe set",
                m.margin, m.degree
            ),
        }),
        None => report.margins.last().map(|m| VerdictRecord {
            verdict: Verdict::Inconclusive,
            degree: m.degree,
            statement: format!("inconclusive: margin {:.6} >= 0 at degree {}", m.margin, m.degree),
        }),
    };
    if let Some(v) = &report.verdict {
        println!("{}", v.statement);
    }
    if with_unsafe_check {
        let d = *ds.last().expect("nonempty degree list");
        let f = unsafe_feasibility(&problem, d)?;
        println!("unsafety relaxation at degree {d}: {}", f.verdict);
        report.feasibility.push(f);
    }
    let mut out = Output::new(out);
    write_plots(&mp, last.as_ref(), &mut out, &mut report)?;
    out.finish(&mut report, start)?;
    if failures > 0 {
        return Err(Failure::Solver(format!("{failures} of {} degrees failed", ds.len())));
    }
    Ok(())
}

pub fn unsafe_check(file: &Path, degrees: Degrees, ov: &Overrides, out: PathBuf) -> Result<(), Failure> {
    let start = Instant::now();
    let Loaded { problem, digest } = load(file, ov)?;
    if problem.unsafe_set.is_none() {
        return Err(Failure::Input("problem has no unsafe_set".into()));
    }
    let ds = degree_list(&problem, degrees)?;
    let mut report = RunReport::new(
        "unsafe",
        digest,
        run_options(&problem, ds.clone(), Some(Program::Unsafe)),
    );
    for &d in &ds {
        let t = Instant::now();
        let f = unsafe_feasibility(&problem, d)?;
        report.timings.per_degree_s.push(t.elapsed().as_secs_f64());
        println!("degree {d}: {}", f.verdict);
        report.feasibility.push(f);
    }
    let mut out = Output::new(out);
    out.finish(&mut report, start)?;
    if report.feasibility.iter().all(|f| f.feasibility == Feasibility::Unknown) {
        return Err(Failure::Solver("no degree gave a feasibility answer".into()));
    }
    Ok(())
}

pub fn export(
    file: &Path,
    degree: Option<usize>,
    program: Program,
    ov: &Overrides,
    out: PathBuf,
) -> Result<(), Failure> {
    let Loaded { problem, .. } = load(file, ov)?;
    let d = degree_list(&problem, degree.map_or(Degrees::Default, Degrees::Single))?[0];
    let relax = match program {
        Program::Peak => build_peak(&problem, d)?,
        Program::Maximin => build_maximin(&problem, d)?,
        Program::Unsafe => build_unsafe_feasibility(&problem, d)?,
    };
    let text = sdpa::export(&relax.conic);
    fs::create_dir_all(&out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
    let path = out.join("problem.dat-s");
    fs::write(&path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    println!(
        "wrote {} (degree {d}, order {}, {} variables)",
        path.display(),
        relax.order,
        relax.conic.num_vars
    );
    Ok(())
}
