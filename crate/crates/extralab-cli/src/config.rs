//! Experiment configuration: JSON schema, defaults, and validation.
//!
//! A config names one problem instance, one graph, and a list of algorithm
//! variants to run against them under a shared budget. Unknown keys are
//! rejected so typos fail loudly instead of silently falling back to
//! defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Synthetic least-squares instance parameters. Defaults are the desk-scale
/// shrink of the reference experiment sizes: n=50, s=10, m=20, mu=1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// Variable dimension.
    pub n: usize,
    /// Samples per agent.
    pub s: usize,
    /// Number of agents.
    pub m: usize,
    /// Ridge modulus; 0 gives a merely convex instance.
    pub mu: f64,
    pub seed: u64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            n: 50,
            s: 10,
            m: 20,
            mu: 1e-6,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFamily {
    ErdosRenyi,
    Geometric,
    Ring,
    Line,
}

impl fmt::Display for GraphFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            GraphFamily::ErdosRenyi => "erdos_renyi",
            GraphFamily::Geometric => "geometric",
            GraphFamily::Ring => "ring",
            GraphFamily::Line => "line",
        };
        f.write_str(name)
    }
}

/// Network topology. `param` is the edge probability for `erdos_renyi` and
/// the connection radius for `geometric` (both default 0.5); `ring` and
/// `line` take no parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub family: GraphFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    ExtraSc,
    ExtraNsc,
    ExtraOriginal,
    ExtraTwoStage,
    AccExtra,
}

impl fmt::Display for AlgorithmName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AlgorithmName::ExtraSc => "extra_sc",
            AlgorithmName::ExtraNsc => "extra_nsc",
            AlgorithmName::ExtraOriginal => "extra_original",
            AlgorithmName::ExtraTwoStage => "extra_two_stage",
            AlgorithmName::AccExtra => "acc_extra",
        };
        f.write_str(name)
    }
}

/// Inner-budget rule for `acc_extra`; mirrors the library's schedule
/// variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleConfig {
    Experimental,
    TheoremForm,
    Fixed(u64),
}

/// Optional per-variant knobs. Only the knobs meaningful for the named
/// algorithm may be set; anything else is a validation error.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    /// Gradient step size (plain EXTRA variants).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Mixing penalty (plain EXTRA variants).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Target accuracy (extra_two_stage; default 1e-4).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Initial-distance constant for two-stage sizing; requires `r2_hat`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r1_hat: Option<f64>,
    /// Gradient-at-optimum constant for two-stage sizing; requires
    /// `r1_hat`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2_hat: Option<f64>,
    /// Proximal weight (acc_extra; default L(1-sigma2) - mu).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Epsilon-schedule exponent offset (acc_extra).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    /// Inner-budget schedule (acc_extra; default "experimental").
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_schedule: Option<ScheduleConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: AlgorithmName,
    #[serde(default, skip_serializing_if = "is_default_overrides")]
    pub overrides: Overrides,
}

fn is_default_overrides(o: &Overrides) -> bool {
    *o == Overrides::default()
}

/// Stopping rules shared by every variant in the suite. A variant stops at
/// whichever of the three limits it reaches first, overshooting by at most
/// one outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub max_grad_rounds: u64,
    pub max_comm_rounds: u64,
    pub target_gap: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            max_grad_rounds: 20_000,
            max_comm_rounds: 40_000,
            target_gap: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory receiving one `<variant>.csv` per algorithm.
    pub csv_dir: PathBuf,
    /// Also render convergence plots into the same directory.
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            csv_dir: PathBuf::from("traces"),
            svg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub problem: ProblemConfig,
    pub graph: GraphConfig,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("problem sizes must be at least 1 (n={n}, s={s}, m={m})")]
    EmptyProblem { n: usize, s: usize, m: usize },
    #[error("ridge modulus must be nonnegative, got {mu}")]
    NegativeRidge { mu: f64 },
    #[error("graph family {family} needs {name} in {range}, got {value}")]
    BadGraphParam {
        family: GraphFamily,
        name: &'static str,
        range: &'static str,
        value: f64,
    },
    #[error("graph family {family} takes no param, got {value}")]
    UnusedGraphParam { family: GraphFamily, value: f64 },
    #[error("at least one algorithm is required")]
    NoAlgorithms,
    #[error("duplicate algorithm {name}; variants must be distinguishable")]
    DuplicateAlgorithm { name: AlgorithmName },
    #[error("{variant}: override {field} does not apply to this algorithm")]
    ForeignOverride {
        variant: AlgorithmName,
        field: &'static str,
    },
    #[error("{variant}: override {field} must be positive, got {value}")]
    OverrideNotPositive {
        variant: AlgorithmName,
        field: &'static str,
        value: f64,
    },
    #[error("{variant}: r1_hat and r2_hat must be given together")]
    HalfSizing { variant: AlgorithmName },
    #[error("budget values must be positive (max_grad_rounds={grad}, max_comm_rounds={comm}, target_gap={gap})")]
    BadBudget { grad: u64, comm: u64, gap: f64 },
}

/// Reads and validates a JSON experiment configuration.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.problem;
        if p.n < 1 || p.s < 1 || p.m < 1 {
            return Err(ConfigError::EmptyProblem {
                n: p.n,
                s: p.s,
                m: p.m,
            });
        }
        if !(p.mu >= 0.0) || !p.mu.is_finite() {
            return Err(ConfigError::NegativeRidge { mu: p.mu });
        }
        self.graph.validate()?;
        if self.algorithms.is_empty() {
            return Err(ConfigError::NoAlgorithms);
        }
        let mut seen = std::collections::HashSet::new();
        for spec in &self.algorithms {
            if !seen.insert(spec.name) {
                return Err(ConfigError::DuplicateAlgorithm { name: spec.name });
            }
            spec.validate()?;
        }
        let b = &self.budget;
        if b.max_grad_rounds == 0 || b.max_comm_rounds == 0 || !(b.target_gap > 0.0) {
            return Err(ConfigError::BadBudget {
                grad: b.max_grad_rounds,
                comm: b.max_comm_rounds,
                gap: b.target_gap,
            });
        }
        Ok(())
    }
}

impl GraphConfig {
    /// The effective generator parameter, with the per-family default
    /// filled in.
    pub fn effective_param(&self) -> Option<f64> {
        match self.family {
            GraphFamily::ErdosRenyi | GraphFamily::Geometric => {
                Some(self.param.unwrap_or(0.5))
            }
            GraphFamily::Ring | GraphFamily::Line => None,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        match self.family {
            GraphFamily::ErdosRenyi => {
                let p = self.param.unwrap_or(0.5);
                if !(p > 0.0 && p <= 1.0) {
                    return Err(ConfigError::BadGraphParam {
                        family: self.family,
                        name: "edge probability",
                        range: "(0, 1]",
                        value: p,
                    });
                }
            }
            GraphFamily::Geometric => {
                let d = self.param.unwrap_or(0.5);
                if !(d > 0.0) || !d.is_finite() {
                    return Err(ConfigError::BadGraphParam {
                        family: self.family,
                        name: "connection radius",
                        range: "(0, inf)",
                        value: d,
                    });
                }
            }
            GraphFamily::Ring | GraphFamily::Line => {
                if let Some(v) = self.param {
                    return Err(ConfigError::UnusedGraphParam {
                        family: self.family,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }
}

impl AlgorithmSpec {
    fn validate(&self) -> Result<(), ConfigError> {
        let o = &self.overrides;
        let allowed: &[&'static str] = match self.name {
            AlgorithmName::ExtraSc
            | AlgorithmName::ExtraNsc
            | AlgorithmName::ExtraOriginal => &["alpha", "beta"],
            AlgorithmName::ExtraTwoStage => &["epsilon", "r1_hat", "r2_hat"],
            AlgorithmName::AccExtra => &["tau", "xi", "t_schedule"],
        };
        let set: [(&'static str, bool); 8] = [
            ("alpha", o.alpha.is_some()),
            ("beta", o.beta.is_some()),
            ("epsilon", o.epsilon.is_some()),
            ("r1_hat", o.r1_hat.is_some()),
            ("r2_hat", o.r2_hat.is_some()),
            ("tau", o.tau.is_some()),
            ("xi", o.xi.is_some()),
            ("t_schedule", o.t_schedule.is_some()),
        ];
        for (field, present) in set {
            if present && !allowed.contains(&field) {
                return Err(ConfigError::ForeignOverride {
                    variant: self.name,
                    field,
                });
            }
        }
        let positive: [(&'static str, Option<f64>); 7] = [
            ("alpha", o.alpha),
            ("beta", o.beta),
            ("epsilon", o.epsilon),
            ("r1_hat", o.r1_hat),
            ("r2_hat", o.r2_hat),
            ("tau", o.tau),
            ("xi", o.xi),
        ];
        for (field, value) in positive {
            if let Some(v) = value {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(ConfigError::OverrideNotPositive {
                        variant: self.name,
                        field,
                        value: v,
                    });
                }
            }
        }
        if o.r1_hat.is_some() != o.r2_hat.is_some() {
            return Err(ConfigError::HalfSizing { variant: self.name });
        }
        if let Some(ScheduleConfig::Fixed(0)) = o.t_schedule {
            return Err(ConfigError::OverrideNotPositive {
                variant: self.name,
                field: "t_schedule.fixed",
                value: 0.0,
            });
        }
        Ok(())
    }
}
