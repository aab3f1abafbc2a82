//! Peak-estimation instances: dynamics, horizon, sets and objectives, plus the
//! JSON problem-file schema and affine normalisation into the unit box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyalg::{format_polynomial, parse_polynomial, MultiIndex, Polynomial};

/// Membership tolerance for set constraints.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// Default simulation cutoff for infinite-horizon problems.
pub const DEFAULT_T_SIM: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

impl Horizon {
    pub fn is_finite(&self) -> bool {
        matches!(self, Horizon::Finite(_))
    }
}

/// `{x | g_k(x) >= 0, h_j(x) = 0}` over the state variables only.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SemialgebraicSet {
    pub ineq: Vec<Polynomial>,
    pub eq: Vec<Polynomial>,
}

impl SemialgebraicSet {
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.ineq.iter().all(|g| g.eval(x) >= -tol) && self.eq.iter().all(|h| h.eval(x).abs() <= tol)
    }

    /// Largest constraint violation at `x` (0 inside the set).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.ineq.iter().map(|g| (-g.eval(x)).max(0.0));
        let b = self.eq.iter().map(|h| h.eval(x).abs());
        a.chain(b).fold(0.0, f64::max)
    }

    pub fn is_empty_description(&self) -> bool {
        self.ineq.is_empty() && self.eq.is_empty()
    }

    fn map(&self, f: impl Fn(&Polynomial) -> Polynomial) -> SemialgebraicSet {
        SemialgebraicSet {
            ineq: self.ineq.iter().map(&f).collect(),
            eq: self.eq.iter().map(&f).collect(),
        }
    }
}

/// Affine change of coordinates `x = center + half_width * x_scaled`,
/// `t = time_scale * t_scaled`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    pub time_scale: f64,
}

impl Scaling {
    pub fn identity(n: usize) -> Self {
        Scaling {
            center: vec![0.0; n],
            half_width: vec![1.0; n],
            time_scale: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.center.iter().all(|&c| c == 0.0) && self.half_width.iter().all(|&h| h == 1.0) && self.time_scale == 1.0
    }

    pub fn state_to_original(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .enumerate()
            .map(|(i, &v)| self.center[i] + self.half_width[i] * v)
            .collect()
    }

    pub fn state_to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.center[i]) / self.half_width[i])
            .collect()
    }

    pub fn time_to_original(&self, ts: f64) -> f64 {
        ts * self.time_scale
    }

    /// Rewrites a polynomial in scaled state coordinates as one in original
    /// coordinates. With `with_time`, variable 0 is scaled time.
    pub fn poly_to_original(&self, p: &Polynomial, with_time: bool) -> Polynomial {
        let (mut scale, mut shift): (Vec<f64>, Vec<f64>) = self
            .center
            .iter()
            .zip(&self.half_width)
            .map(|(c, h)| (1.0 / h, -c / h))
            .unzip();
        if with_time {
            scale.insert(0, 1.0 / self.time_scale);
            shift.insert(0, 0.0);
        }
        p.compose_affine(&scale, &shift)
    }

    /// Rewrites a polynomial in original coordinates in terms of scaled ones.
    pub fn poly_to_scaled(&self, p: &Polynomial, with_time: bool) -> Polynomial {
        let mut scale = self.half_width.clone();
        let mut shift = self.center.clone();
        if with_time {
            scale.insert(0, self.time_scale);
            shift.insert(0, 0.0);
        }
        p.compose_affine(&scale, &shift)
    }

    fn then(&self, inner: &Scaling) -> Scaling {
        Scaling {
            center: self
                .center
                .iter()
                .zip(&self.half_width)
                .zip(&inner.center)
                .map(|((c, h), c2)| c + h * c2)
                .collect(),
            half_width: self
                .half_width
                .iter()
                .zip(&inner.half_width)
                .map(|(h, h2)| h * h2)
                .collect(),
            time_scale: self.time_scale * inner.time_scale,
        }
    }
}

/// Solver, extraction and recovery settings carried by a problem file.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    /// Explicit `[lo, hi]` bounds per state, used when the state set has no box.
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feas_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Optional cap on the occupation-measure mass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_cap: Option<f64>,
    /// Simulation cutoff for infinite-horizon problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_sim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_functions: Option<TestFunctions>,
}

/// Which Liouville test monomials a degree-d relaxation imposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctions {
    /// Every `v` with `deg v <= 2d`; the moment order is raised until
    /// `L_f v` fits.
    #[default]
    Full,
    /// Only `v` with `deg L_f v <= 2d`, keeping moment order `d`.
    Truncated,
}

/// A validated peak-estimation instance.
///
/// `dynamics` are over `(t, x1..xn)` for finite horizons and over `(x1..xn)`
/// otherwise; sets and objectives are always over the states alone.
#[derive(Clone, Debug, PartialEq)]
pub struct PeakProblem {
    pub state_names: Vec<String>,
    pub dynamics: Vec<Polynomial>,
    pub horizon: Horizon,
    pub state_set: SemialgebraicSet,
    pub initial_set: SemialgebraicSet,
    pub objectives: Vec<Polynomial>,
    pub unsafe_set: Option<SemialgebraicSet>,
    pub scaling: Scaling,
    pub options: ProblemOptions,
}

impl PeakProblem {
    pub fn nstates(&self) -> usize {
        self.state_names.len()
    }

    pub fn is_maximin(&self) -> bool {
        self.objectives.len() > 1
    }

    pub fn time_dependent(&self) -> bool {
        self.horizon.is_finite()
    }

    /// Number of variables of the occupation and peak measures.
    pub fn joint_nvars(&self) -> usize {
        self.nstates() + usize::from(self.time_dependent())
    }

    /// Lifts a state polynomial to the joint `(t, x)` tuple (no-op for
    /// infinite horizons).
    pub fn lift_state_poly(&self, p: &Polynomial) -> Polynomial {
        if self.time_dependent() {
            p.lift(0, 1)
        } else {
            p.clone()
        }
    }

    /// Evaluates the dynamics at `(t, x)`.
    pub fn eval_dynamics(&self, t: f64, x: &[f64], out: &mut [f64]) {
        if self.time_dependent() {
            let mut z = Vec::with_capacity(x.len() + 1);
            z.push(t);
            z.extend_from_slice(x);
            for (o, f) in out.iter_mut().zip(&self.dynamics) {
                *o = f.eval(&z);
            }
        } else {
            for (o, f) in out.iter_mut().zip(&self.dynamics) {
                *o = f.eval(x);
            }
        }
    }

    /// Minimum over objectives at a state.
    pub fn eval_objective(&self, x: &[f64]) -> f64 {
        self.objectives.iter().map(|p| p.eval(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn names(&self) -> Vec<&str> {
        self.state_names.iter().map(String::as_str).collect()
    }

    fn joint_names(&self) -> Vec<&str> {
        let mut v = Vec::new();
        if self.time_dependent() {
            v.push("t");
        }
        v.extend(self.state_names.iter().map(String::as_str));
        v
    }

    /// Bounding box of the state set: from single-variable linear constraints
    /// `a x_i + b >= 0`, quadratic `c - a x_i^2 >= 0`, and `options.box`.
    pub fn bounding_box(&self) -> Result<Vec<(f64, f64)>> {
        let n = self.nstates();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for g in &self.state_set.ineq {
            if let Some((var, l, h)) = box_bound(g) {
                lo[var] = lo[var].max(l);
                hi[var] = hi[var].min(h);
            }
        }
        if let Some(b) = &self.options.bounds {
            for (i, [l, h]) in b.iter().enumerate().take(n) {
                lo[i] = lo[i].max(*l);
                hi[i] = hi[i].min(*h);
            }
        }
        (0..n)
            .map(|i| {
                if lo[i].is_finite() && hi[i].is_finite() && lo[i] < hi[i] {
                    Ok((lo[i], hi[i]))
                } else {
                    Err(Error::NoBoundingBox(self.state_names[i].clone()))
                }
            })
            .collect()
    }

    /// Maps the states into `[-1, 1]^n` and time into `[0, 1]`.
    ///
    /// Objectives and constraints are composed with the inverse map, so
    /// objective values keep their original units.
    pub fn rescale(&self) -> Result<PeakProblem> {
        let bbox = self.bounding_box()?;
        let mut step = Scaling {
            center: bbox.iter().map(|(l, h)| 0.5 * (l + h)).collect(),
            half_width: bbox.iter().map(|(l, h)| 0.5 * (h - l)).collect(),
            time_scale: match self.horizon {
                Horizon::Finite(t) => t,
                Horizon::Infinite => 1.0,
            },
        };
        // exact unit boxes stay exact
        for (c, h) in step.center.iter_mut().zip(step.half_width.iter_mut()) {
            if (*c).abs() < 1e-15 && (*h - 1.0).abs() < 1e-15 {
                *c = 0.0;
                *h = 1.0;
            }
        }
        let td = self.time_dependent();
        let state_map = |p: &Polynomial| step.poly_to_scaled(p, false);
        let dynamics = self
            .dynamics
            .iter()
            .enumerate()
            .map(|(i, f)| step.poly_to_scaled(f, td).scale(step.time_scale / step.half_width[i]))
            .collect();
        let options = ProblemOptions {
            bounds: None,
            ..self.options.clone()
        };
        Ok(PeakProblem {
            state_names: self.state_names.clone(),
            dynamics,
            horizon: match self.horizon {
                Horizon::Finite(_) => Horizon::Finite(1.0),
                Horizon::Infinite => Horizon::Infinite,
            },
            state_set: self.state_set.map(state_map),
            initial_set: self.initial_set.map(state_map),
            objectives: self.objectives.iter().map(state_map).collect(),
            unsafe_set: self.unsafe_set.as_ref().map(|s| s.map(state_map)),
            scaling: self.scaling.then(&step),
            options,
        })
    }

    /// Copy of this problem whose objectives are the unsafe set's inequalities.
    pub fn margin_problem(&self) -> Result<PeakProblem> {
        let unsafe_set = self
            .unsafe_set
            .as_ref()
            .ok_or_else(|| Error::InvalidProblem("problem has no unsafe_set".into()))?;
        if unsafe_set.ineq.is_empty() {
            return Err(Error::InvalidProblem(
                "unsafe_set needs at least one inequality to define a margin".into(),
            ));
        }
        Ok(PeakProblem {
            objectives: unsafe_set.ineq.clone(),
            ..self.clone()
        })
    }

    pub fn from_json(text: &str) -> Result<PeakProblem> {
        let file: ProblemFile = serde_json::from_str(text)?;
        file.into_problem()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("problem file serializes")
    }

    pub fn to_file(&self) -> ProblemFile {
        let names = self.names();
        let joint = self.joint_names();
        let set = |s: &SemialgebraicSet| SetFile {
            ineq: s.ineq.iter().map(|p| format_polynomial(p, &names)).collect(),
            eq: s.eq.iter().map(|p| format_polynomial(p, &names)).collect(),
        };
        ProblemFile {
            variables: self.state_names.clone(),
            dynamics: self.dynamics.iter().map(|p| format_polynomial(p, &joint)).collect(),
            horizon: match self.horizon {
                Horizon::Finite(t) => HorizonFile::Finite(t),
                Horizon::Infinite => HorizonFile::Named("inf".into()),
            },
            state_set: set(&self.state_set),
            initial_set: set(&self.initial_set),
            unsafe_set: self.unsafe_set.as_ref().map(set),
            objectives: self.objectives.iter().map(|p| format_polynomial(p, &names)).collect(),
            options: self.options.clone(),
            scaling: if self.scaling.is_identity() {
                None
            } else {
                Some(self.scaling.clone())
            },
        }
    }
}

fn box_bound(g: &Polynomial) -> Option<(usize, f64, f64)> {
    let deg = g.degree()?;
    let n = g.nvars();
    let vars: Vec<usize> = (0..n).filter(|&i| g.uses_var(i)).collect();
    if vars.len() != 1 {
        return None;
    }
    let i = vars[0];
    let c0 = g.coefficient(&MultiIndex::zero(n));
    let c1 = g.coefficient(&MultiIndex::unit(n, i));
    match deg {
        1 => {
            if c1 > 0.0 {
                Some((i, -c0 / c1, f64::INFINITY))
            } else {
                Some((i, f64::NEG_INFINITY, -c0 / c1))
            }
        }
        2 => {
            let mut e = vec![0; n];
            e[i] = 2;
            let c2 = g.coefficient(&MultiIndex::new(e));
            // c0 + c1 x + c2 x^2 >= 0 with c2 < 0 bounds x between the roots
            if c2 >= 0.0 {
                return None;
            }
            let disc = c1 * c1 - 4.0 * c2 * c0;
            if disc <= 0.0 {
                return None;
            }
            let r = disc.sqrt();
            let a = (-c1 + r) / (2.0 * c2);
            let b = (-c1 - r) / (2.0 * c2);
            Some((i, a.min(b), a.max(b)))
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// file schema

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SetFile {
    #[serde(default)]
    pub ineq: Vec<String>,
    #[serde(default)]
    pub eq: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HorizonFile {
    Finite(f64),
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub variables: Vec<String>,
    pub dynamics: Vec<String>,
    pub horizon: HorizonFile,
    #[serde(default)]
    pub state_set: SetFile,
    #[serde(default)]
    pub initial_set: SetFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsafe_set: Option<SetFile>,
    #[serde(default)]
    pub objectives: Vec<String>,
    #[serde(default)]
    pub options: ProblemOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
}

fn valid_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<PeakProblem> {
        let n = self.variables.len();
        if n == 0 {
            return Err(Error::InvalidProblem("no state variables".into()));
        }
        for (i, v) in self.variables.iter().enumerate() {
            if v == "t" {
                return Err(Error::InvalidProblem("`t` is reserved for time".into()));
            }
            if !valid_ident(v) {
                return Err(Error::InvalidProblem(format!("invalid variable name `{v}`")));
            }
            if self.variables[..i].contains(v) {
                return Err(Error::InvalidProblem(format!("duplicate variable `{v}`")));
            }
        }
        let horizon = match &self.horizon {
            HorizonFile::Finite(t) if t.is_finite() && *t > 0.0 => Horizon::Finite(*t),
            HorizonFile::Finite(t) => return Err(Error::InvalidProblem(format!("horizon must be positive, got {t}"))),
            HorizonFile::Named(s) if matches!(s.as_str(), "inf" | "infinity" | "Inf") => Horizon::Infinite,
            HorizonFile::Named(s) => return Err(Error::InvalidProblem(format!("unrecognised horizon `{s}`"))),
        };
        if self.dynamics.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.dynamics.len(),
            });
        }
        // margin-only files take their objectives from the unsafe set
        if self.objectives.is_empty() && self.unsafe_set.is_none() {
            return Err(Error::EmptyObjectives);
        }

        let mut joint: Vec<&str> = vec!["t"];
        joint.extend(self.variables.iter().map(String::as_str));

        // everything is parsed over (t, x) first so time references are caught
        let parse_joint = |s: &str| parse_polynomial(s, &joint);
        let state_only = |s: &str, what: &str| -> Result<Polynomial> {
            let p = parse_joint(s)?;
            if p.uses_var(0) {
                return Err(match horizon {
                    Horizon::Infinite => Error::TimeInInfiniteHorizon,
                    Horizon::Finite(_) => Error::TimeNotAllowed(what.to_string()),
                });
            }
            Ok(p.drop_var(0))
        };
        let set = |s: &SetFile, what: &str| -> Result<SemialgebraicSet> {
            Ok(SemialgebraicSet {
                ineq: s.ineq.iter().map(|p| state_only(p, what)).collect::<Result<_>>()?,
                eq: s.eq.iter().map(|p| state_only(p, what)).collect::<Result<_>>()?,
            })
        };

        let dynamics = self
            .dynamics
            .iter()
            .map(|s| {
                let p = parse_joint(s)?;
                match horizon {
                    Horizon::Finite(_) => Ok(p),
                    Horizon::Infinite if p.uses_var(0) => Err(Error::TimeInInfiniteHorizon),
                    Horizon::Infinite => Ok(p.drop_var(0)),
                }
            })
            .collect::<Result<Vec<_>>>()?;

        if let Some(b) = &self.options.bounds {
            if b.len() != n || b.iter().any(|[l, h]| !(l < h)) {
                return Err(Error::InvalidProblem(
                    "options.box needs one [lo, hi] pair with lo < hi per state".into(),
                ));
            }
        }
        let scaling = match self.scaling {
            Some(s) => {
                if s.center.len() != n || s.half_width.len() != n {
                    return Err(Error::InvalidProblem("scaling record has wrong length".into()));
                }
                s
            }
            None => Scaling::identity(n),
        };

        Ok(PeakProblem {
            state_names: self.variables.clone(),
            dynamics,
            horizon,
            state_set: set(&self.state_set, "state_set")?,
            initial_set: set(&self.initial_set, "initial_set")?,
            objectives: self
                .objectives
                .iter()
                .map(|s| state_only(s, "objectives"))
                .collect::<Result<_>>()?,
            unsafe_set: self.unsafe_set.as_ref().map(|s| set(s, "unsafe_set")).transpose()?,
            scaling,
            options: self.options,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ATTRACTORS: &str = r#"{
        "variables": ["x1", "x2"],
        "dynamics": ["0.2*x1 + x2 - x2*(x1^2 + x2^2)", "-0.4*x1 + x1*(x1^2 + x2^2)"],
        "horizon": "inf",
        "state_set": {"ineq": ["2 - x1", "x1 + 2", "2 - x2", "x2 + 2"]},
        "initial_set": {"eq": ["x1^2 + x2^2 - 0.5"]},
        "objectives": ["x1^2 + x2^2"]
    }"#;

    const TIME_VARYING: &str = r#"{
        "variables": ["x1", "x2"],
        "dynamics": ["x2*t - 0.1*x1 - x1*x2", "x1*t - x2 + x1^2"],
        "horizon": 5,
        "state_set": {"ineq": ["x1 + 3", "2 - x1", "x2 + 2", "2 - x2"]},
        "initial_set": {"eq": ["(x1 + 0.75)^2 + x2^2 - 1"]},
        "objectives": ["x1", "x2"]
    }"#;

    #[test]
    fn parses_infinite_horizon_file() {
        let p = PeakProblem::from_json(ATTRACTORS).unwrap();
        assert_eq!(p.horizon, Horizon::Infinite);
        assert_eq!(p.initial_set.eq.len(), 1);
        assert_eq!(p.state_set.ineq.len(), 4);
        assert_eq!(p.dynamics[0].nvars(), 2);
        assert!(!p.is_maximin());
    }

    #[test]
    fn objective_list_is_maximin() {
        let p = PeakProblem::from_json(TIME_VARYING).unwrap();
        assert_eq!(p.objectives.len(), 2);
        assert!(p.is_maximin());
        assert_eq!(p.dynamics[0].nvars(), 3);
    }

    #[test]
    fn time_in_infinite_horizon_rejected() {
        let text = ATTRACTORS.replace("0.2*x1 +", "0.2*x1*t +");
        assert_eq!(PeakProblem::from_json(&text).unwrap_err(), Error::TimeInInfiniteHorizon);
        assert_eq!(
            PeakProblem::from_json(&text).unwrap_err().to_string(),
            "time variable in infinite-horizon problem"
        );
    }

    #[test]
    fn semantic_errors_are_distinct() {
        let empty = ATTRACTORS.replace(r#"["x1^2 + x2^2"]"#, "[]");
        assert_eq!(PeakProblem::from_json(&empty).unwrap_err(), Error::EmptyObjectives);
        let unknown = ATTRACTORS.replace("2 - x1", "2 - y");
        assert_eq!(
            PeakProblem::from_json(&unknown).unwrap_err(),
            Error::UnknownVariable("y".into())
        );
        match PeakProblem::from_json("{\n \"variables\": [").unwrap_err() {
            Error::Syntax { line, .. } => assert_eq!(line, 2),
            e => panic!("{e:?}"),
        }
        let t_obj = TIME_VARYING.replace(
            r#"["x1", "x2"]
    }"#,
            r#"["x1*t"]
    }"#,
        );
        assert_eq!(
            PeakProblem::from_json(&t_obj).unwrap_err(),
            Error::TimeNotAllowed("objectives".into())
        );
    }

    #[test]
    fn serialize_roundtrip() {
        for text in [ATTRACTORS, TIME_VARYING] {
            let p = PeakProblem::from_json(text).unwrap();
            let q = PeakProblem::from_json(&p.to_json()).unwrap();
            assert_eq!(p, q);
            let r = p.rescale().unwrap();
            assert_eq!(PeakProblem::from_json(&r.to_json()).unwrap(), r);
        }
    }

    #[test]
    fn symmetric_box_scaling() {
        let p = PeakProblem::from_json(ATTRACTORS).unwrap().rescale().unwrap();
        assert_eq!(p.scaling.center, vec![0.0, 0.0]);
        assert_eq!(p.scaling.half_width, vec![2.0, 2.0]);
        // objective keeps original units: ||x||^2 at x = (2, 0) is 4
        assert!((p.objectives[0].eval(&[1.0, 0.0]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_box_and_time_scaling() {
        let p = PeakProblem::from_json(TIME_VARYING).unwrap();
        let s = p.rescale().unwrap();
        assert_eq!(s.scaling.center, vec![-0.5, 0.0]);
        assert_eq!(s.scaling.half_width, vec![2.5, 2.0]);
        assert_eq!(s.scaling.time_scale, 5.0);
        assert_eq!(s.horizon, Horizon::Finite(1.0));
        // scaled x1 = (2 x1 + 1) / 5
        assert!((s.scaling.state_to_scaled(&[2.0, 0.0])[0] - 1.0).abs() < 1e-15);
        assert!((s.scaling.state_to_scaled(&[-3.0, 0.0])[0] + 1.0).abs() < 1e-15);
        // vector field transforms as T * f / h
        let (t, x) = (1.3, [0.4, -0.7]);
        let xs = s.scaling.state_to_scaled(&x);
        let mut f = [0.0; 2];
        let mut fs = [0.0; 2];
        p.eval_dynamics(t, &x, &mut f);
        s.eval_dynamics(t / 5.0, &xs, &mut fs);
        assert!((fs[0] - 5.0 * f[0] / 2.5).abs() < 1e-12);
        assert!((fs[1] - 5.0 * f[1] / 2.0).abs() < 1e-12);
    }

    #[test]
    fn unit_box_is_identity() {
        let text = r#"{"variables": ["x"], "dynamics": ["-x"], "horizon": 1,
            "state_set": {"ineq": ["1 - x^2"]}, "objectives": ["x"]}"#;
        let p = PeakProblem::from_json(text).unwrap().rescale().unwrap();
        assert!(p.scaling.is_identity());
    }

    #[test]
    fn missing_box_is_an_error() {
        let text = r#"{"variables": ["x"], "dynamics": ["-x"], "horizon": 1,
            "state_set": {"ineq": ["x + 1"]}, "objectives": ["x"]}"#;
        let p = PeakProblem::from_json(text).unwrap();
        assert!(matches!(p.rescale(), Err(Error::NoBoundingBox(_))));
        let with_box = text.replace(r#""objectives""#, r#""options": {"box": [[-1, 3]]}, "objectives""#);
        let p = PeakProblem::from_json(&with_box).unwrap();
        assert_eq!(p.bounding_box().unwrap(), vec![(-1.0, 3.0)]);
    }
}
