use serde::Serialize;
use sha2::{Digest, Sha256};

use peakcert::conic::{Residuals, SolverStatus};
use peakcert::recovery::{FeasibilityReport, MarginReport, RecoveryOutcome, Triple, Verdict};
use peakcert::relaxation::{Program, SlackRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub problem_digest: String,
    pub options: RunOptions,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub degrees: Vec<DegreeRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery: Option<RecoveryOutcome>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub triples: Vec<Triple>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub margins: Vec<MarginReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub feasibility: Vec<FeasibilityReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

#[derive(Debug, Default, Serialize)]
pub struct RunOptions {
    pub degrees: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub program: Option<Program>,
    pub rank_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_sim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct DegreeRecord {
    pub degree: usize,
    pub order: usize,
    pub program: Program,
    pub status: SolverStatus,
    pub loose: bool,
    pub iterations: usize,
    pub residuals: Residuals,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack: Option<SlackRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_initial: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_peak: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupation_mass: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub mass_at_cap: bool,
    /// Decoded `v`, problem coordinates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_function: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct VerdictRecord {
    pub verdict: Verdict,
    pub degree: usize,
    pub statement: String,
}

#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub total_s: f64,
    pub per_degree_s: Vec<f64>,
}

impl RunReport {
    pub fn new(command: &str, digest: String, options: RunOptions) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            problem_digest: digest,
            options,
            degrees: Vec::new(),
            recovery: None,
            triples: Vec::new(),
            margins: Vec::new(),
            verdict: None,
            feasibility: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            timings: Timings::default(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// SHA-256 of the problem file with keys sorted and whitespace removed.
pub fn digest(text: &str) -> Result<String, serde_json::Error> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let canonical = serde_json::to_string(&v)?;
    let hash = Sha256::digest(canonical.as_bytes());
    Ok(format!(
        "sha256:{}",
        hash.iter().map(|b| format!("{b:02x}")).collect::<String>()
    ))
}
