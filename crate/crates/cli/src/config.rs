//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [problem]
//! kind = "lasso"        # or "logistic"
//! m = 4
//! n = 50
//! u_rows = 3
//! seed = 1
//! u_scale = 1.0
//!
//! [topology]
//! kind = "line"         # line | cycle | star | complete | erdos_renyi
//!
//! [solver]
//! name = "disa"         # disa | vdisa | condat_vu | lalm | nids
//!
//! [stopping]
//! rule = "re_err"       # re_err | kkt | max_iters
//! tol = 1e-7
//! max_iters = 50000
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Every section except `[problem]` may be omitted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Lasso,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    #[serde(default = "default_m")]
    pub m: usize,
    /// Primal dimension for LASSO; feature count for synthetic logistic data.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_u_rows")]
    pub u_rows: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_u_scale")]
    pub u_scale: f64,
    /// LIBSVM file for the logistic problem; synthetic data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Sample count for logistic data (synthetic size, or LIBSVM truncation).
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_m() -> usize {
    4
}
fn default_n() -> usize {
    50
}
fn default_u_rows() -> usize {
    20
}
fn default_seed() -> u64 {
    1
}
fn default_u_scale() -> f64 {
    1.0
}
fn default_samples() -> usize {
    2000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Line,
    Cycle,
    Star,
    Complete,
    ErdosRenyi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    /// Edge probability, Erdős–Rényi only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            kind: TopologyKind::Line,
            p: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SolverName {
    Disa,
    Vdisa,
    CondatVu,
    Lalm,
    Nids,
}

impl SolverName {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverName::Disa => "disa",
            SolverName::Vdisa => "vdisa",
            SolverName::CondatVu => "condat_vu",
            SolverName::Lalm => "lalm",
            SolverName::Nids => "nids",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    LassoDefault,
    LogisticDefault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub name: SolverName,
    /// DISA/V-DISA step policy when `tau` is not given; defaults by problem kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    /// Uniform primal step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Sets `β = tau_beta/τ`; exclusive with `beta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_beta: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            name: SolverName::Disa,
            policy: None,
            tau: None,
            beta: None,
            tau_beta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Exact,
    Power,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Exact,
    Iterative,
    Adversarial,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdisaConfig {
    pub schedule: ScheduleKind,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    /// Power exponent, or the geometric ratio.
    #[serde(default = "default_r")]
    pub r: f64,
    pub strategy: StrategyKind,
    /// Seed for the random injected direction.
    #[serde(default)]
    pub seed: u64,
}

fn default_eps0() -> f64 {
    1.0
}
fn default_r() -> f64 {
    2.0
}

impl Default for VdisaConfig {
    fn default() -> Self {
        VdisaConfig {
            schedule: ScheduleKind::Power,
            eps0: 1.0,
            r: 2.0,
            strategy: StrategyKind::Iterative,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    ReErr,
    Kkt,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingConfig {
    pub rule: RuleKind,
    pub tol: f64,
    pub max_iters: usize,
    /// When false, divergence and budget exhaustion exit with status 0.
    #[serde(default = "yes")]
    pub expect_convergence: bool,
}

fn yes() -> bool {
    true
}

impl Default for StoppingConfig {
    fn default() -> Self {
        StoppingConfig {
            rule: RuleKind::ReErr,
            tol: 1e-7,
            max_iters: 50_000,
            expect_convergence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub scales: Vec<f64>,
    #[serde(default = "default_sweep_solvers")]
    pub solvers: Vec<SolverName>,
    /// Iteration at which the error-versus-scale series is sampled.
    #[serde(default = "default_probe_iter")]
    pub probe_iter: usize,
}

fn default_sweep_solvers() -> Vec<SolverName> {
    vec![SolverName::Disa, SolverName::CondatVu, SolverName::Lalm]
}
fn default_probe_iter() -> usize {
    500
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            scales: Vec::new(),
            solvers: default_sweep_solvers(),
            probe_iter: default_probe_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub vdisa: VdisaConfig,
    #[serde(default)]
    pub stopping: StoppingConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output.dir = PathBuf::new();
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    /// Structural checks that need no problem data.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let p = &self.problem;
        if p.m == 0 || p.n == 0 || p.u_rows == 0 {
            return bad("problem.m, problem.n and problem.u_rows must be positive".into());
        }
        if !(p.u_scale.is_finite() && p.u_scale > 0.0) {
            return bad(format!("problem.u_scale must be positive, got {}", p.u_scale));
        }
        if p.kind == ProblemKind::Lasso && p.dataset.is_some() {
            return bad("problem.dataset applies to the logistic problem only".into());
        }
        if self.topology.kind == TopologyKind::ErdosRenyi && self.topology.p.is_none() {
            return bad("topology.p is required for erdos_renyi".into());
        }
        let s = &self.solver;
        if s.beta.is_some() && s.tau_beta.is_some() {
            return bad("solver.beta and solver.tau_beta are exclusive".into());
        }
        if s.tau_beta.is_some() && s.tau.is_none() {
            return bad("solver.tau_beta needs solver.tau".into());
        }
        for (key, v) in [("tau", s.tau), ("beta", s.beta), ("tau_beta", s.tau_beta)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return bad(format!("solver.{key} must be positive, got {v}"));
                }
            }
        }
        let st = &self.stopping;
        if st.max_iters == 0 {
            return bad("stopping.max_iters must be positive".into());
        }
        if st.rule != RuleKind::MaxIters && !(st.tol.is_finite() && st.tol > 0.0) {
            return bad(format!("stopping.tol must be positive, got {}", st.tol));
        }
        if self.sweep.solvers.is_empty() {
            return bad("sweep.solvers must not be empty".into());
        }
        if self.sweep.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("sweep.scales must be positive".into());
        }
        Ok(())
    }
}
