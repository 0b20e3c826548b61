use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Inverse temperature: one value for every `n`, or one value per grid entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaRule {
    Constant(f64),
    PerN(Vec<f64>),
}

impl BetaRule {
    pub fn at(&self, index: usize) -> f64 {
        match self {
            BetaRule::Constant(b) => *b,
            BetaRule::PerN(v) => v[index],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            BetaRule::Constant(b) => vec![*b],
            BetaRule::PerN(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Subcommand name; the command line takes precedence.
    pub command: Option<String>,
    pub n_grid: Vec<usize>,
    pub p: usize,
    /// Orders compared by the `variance` command.
    pub p_grid: Vec<usize>,
    pub c: f64,
    pub beta: BetaRule,
    pub u_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
    /// Reference level and time for single-point condition reports.
    pub u_ref: f64,
    pub t_ref: f64,
    pub epsilon: f64,
    pub delta: Vec<f64>,
    /// Level of the initial-term condition.
    pub v: f64,
    pub replicas: u64,
    pub inner_replicas: u64,
    pub env_replicas: u64,
    /// Maximum chain steps per replica in time-changed runs.
    pub step_budget: u64,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub out: Option<PathBuf>,
    /// Tail constant of the Pareto measure in `ppp`.
    pub k: f64,
    pub t_max: f64,
    pub u_min: f64,
    pub significance: f64,
    /// Random covariance pairs in `compare`.
    pub pairs: u64,
    /// Levels `s` of the maximum CDFs in `compare`.
    pub levels: Vec<f64>,
    /// Longest distance-chain horizon in `ehrenfest`.
    pub steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: None,
            n_grid: vec![8, 12, 16],
            p: 2,
            p_grid: vec![2, 3],
            c: 0.25,
            beta: BetaRule::Constant(1.0),
            u_grid: vec![0.5, 1.0, 2.0],
            t_grid: vec![0.5, 1.0, 2.0],
            s_grid: vec![1.0, 3.0],
            u_ref: 1.0,
            t_ref: 1.0,
            epsilon: 0.5,
            delta: vec![0.5, 1.0, 2.0],
            v: 1.0,
            replicas: 10_000,
            inner_replicas: 1,
            env_replicas: 20,
            step_budget: 100_000_000,
            seed: 0,
            threads: 0,
            out: None,
            k: 4.0,
            t_max: 2.0,
            u_min: 0.05,
            significance: 0.01,
            pairs: 50,
            levels: vec![0.5, 1.0, 2.0],
            steps: 20,
        }
    }
}

/// Configuration fields that failed validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Invalid(pub Vec<(String, String)>);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, why)| format!("{k}: {why}")).collect();
        write!(f, "{}", parts.join("; "))
    }
}

fn positive(xs: &[f64]) -> bool {
    xs.iter().all(|x| *x > 0.0 && x.is_finite())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        let mut bad: Vec<(String, String)> = Vec::new();
        let mut check = |ok: bool, field: &str, why: &str| {
            if !ok {
                bad.push((field.to_string(), why.to_string()));
            }
        };
        check(!self.n_grid.is_empty() && self.n_grid.iter().all(|n| *n >= 2), "n_grid", "non-empty, every n >= 2");
        check(self.p >= 2, "p", "must be >= 2");
        check(!self.p_grid.is_empty() && self.p_grid.iter().all(|p| *p >= 2), "p_grid", "non-empty, every p >= 2");
        check(self.c > 0.0 && self.c < 0.5, "c", "must lie in (0, 1/2)");
        let betas = self.beta.values();
        check(positive(&betas) && !betas.is_empty(), "beta", "positive values");
        if let BetaRule::PerN(v) = &self.beta {
            check(v.len() == self.n_grid.len(), "beta", "one value per n_grid entry");
        }
        check(!self.u_grid.is_empty() && positive(&self.u_grid), "u_grid", "non-empty, positive");
        check(!self.t_grid.is_empty() && positive(&self.t_grid), "t_grid", "non-empty, positive");
        check(
            !self.s_grid.is_empty() && self.s_grid.iter().all(|s| *s >= 0.0 && s.is_finite()),
            "s_grid",
            "non-empty, non-negative",
        );
        check(self.u_ref > 0.0, "u_ref", "must be positive");
        check(self.t_ref > 0.0, "t_ref", "must be positive");
        check(self.epsilon > 0.0 && self.epsilon < 1.0, "epsilon", "must lie in (0, 1)");
        check(!self.delta.is_empty() && positive(&self.delta), "delta", "non-empty, positive");
        check(self.v > 0.0, "v", "must be positive");
        check(self.replicas >= 1, "replicas", "must be >= 1");
        check(self.inner_replicas >= 1, "inner_replicas", "must be >= 1");
        check(self.env_replicas >= 2, "env_replicas", "must be >= 2");
        check(self.step_budget >= 1, "step_budget", "must be >= 1");
        check(self.k > 0.0, "k", "must be positive");
        check(self.t_max > 0.0, "t_max", "must be positive");
        check(self.u_min > 0.0, "u_min", "must be positive");
        check(self.significance > 0.0 && self.significance < 1.0, "significance", "must lie in (0, 1)");
        check(self.pairs >= 1, "pairs", "must be >= 1");
        check(
            !self.levels.is_empty() && self.levels.iter().all(|s| s.is_finite()),
            "levels",
            "non-empty, finite",
        );
        check(self.steps >= 1, "steps", "must be >= 1");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Invalid(bad))
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring fields that cannot change
    /// numerical results (thread count, output location).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 0;
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
