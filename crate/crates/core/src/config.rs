//! Declarative run configuration (TOML). Unknown keys are rejected everywhere.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::oracle::DEFAULT_THRESHOLD;
use crate::planner::PlanConfig;
use crate::simulator::{BenchmarkConfig, Scenario};
use crate::trainer::{ReachabilityProblem, TrainConfig};
use crate::value_net::NetworkArchitecture;
use crate::{ReachError, Result};

pub const CONFIG_VERSION: u32 = 1;

fn default_reach_horizon() -> f64 {
    FRAC_PI_2
}

fn default_true() -> bool {
    true
}

fn default_radius() -> f64 {
    0.5
}

fn default_agent_radius() -> f64 {
    0.05
}

fn default_game_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Particle on the radius-0.5 circle reaching `(0.5, 0)`.
    CircleReach {
        #[serde(default = "default_reach_horizon")]
        horizon: f64,
        #[serde(default = "default_true")]
        constrained: bool,
    },
    /// Two particles sharing one circle; the value is their safety margin.
    CirclePairGame {
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_agent_radius")]
        agent_radius: f64,
        #[serde(default = "default_game_horizon")]
        horizon: f64,
    },
    /// Fully spelled-out problem.
    Custom { problem: ReachabilityProblem },
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig::CircleReach {
            horizon: FRAC_PI_2,
            constrained: true,
        }
    }
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ReachabilityProblem> {
        let p = match self {
            ProblemConfig::CircleReach { horizon, constrained } => {
                ReachabilityProblem::circle_reach(*horizon, *constrained)
            }
            ProblemConfig::CirclePairGame {
                radius,
                agent_radius,
                horizon,
            } => ReachabilityProblem::circle_pair_game(*radius, *agent_radius, *horizon),
            ProblemConfig::Custom { problem } => problem.clone(),
        };
        p.validate().map_err(|e| match e {
            ReachError::Config { .. } => e,
            other => ReachError::config("problem", other.to_string()),
        })?;
        Ok(p)
    }
}

/// Network shape; the input width follows from the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub first_omega: f64,
    pub hidden_omega: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        let a = NetworkArchitecture::new(1);
        ArchitectureConfig {
            hidden_layers: a.hidden_layers,
            hidden_width: a.hidden_width,
            first_omega: a.first_omega,
            hidden_omega: a.hidden_omega,
        }
    }
}

impl ArchitectureConfig {
    pub fn build(&self, state_dim: usize) -> Result<NetworkArchitecture> {
        let a = NetworkArchitecture {
            input_dim: state_dim + 1,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            first_omega: self.first_omega,
            hidden_omega: self.hidden_omega,
        };
        a.validate()
            .map_err(|e| ReachError::config("architecture", e.to_string()))?;
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Network,
    Grid,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub source: SourceKind,
    /// Explicit slice times; empty means `T - π/8, T - π/4, T - 3π/8`.
    pub slices: Vec<f64>,
    pub resolution: usize,
    pub threshold: f64,
    /// Slice used to pick the F1-maximizing threshold; `None` means `T - 3π/16`.
    pub calibration_slice: Option<f64>,
    pub calibration_candidates: Vec<f64>,
    /// Grid size for the `grid` source.
    pub grid_theta: usize,
    pub grid_time: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            source: SourceKind::Network,
            slices: Vec::new(),
            resolution: 720,
            threshold: DEFAULT_THRESHOLD,
            calibration_slice: None,
            calibration_candidates: (1..=30).map(|k| 0.005 * k as f64).collect(),
            grid_theta: 512,
            grid_time: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hammar,
    NoSafety,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub methods: Vec<Method>,
    /// Write per-step logs for every trial.
    pub trial_logs: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            methods: vec![Method::Hammar, Method::NoSafety],
            trial_logs: true,
        }
    }
}

/// Inputs of a one-shot `plan` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanQuery {
    pub ego: Vec<f64>,
    #[serde(default)]
    pub others: Vec<Vec<f64>>,
    pub goal: Vec<f64>,
    #[serde(default = "default_speed")]
    pub u_max: f64,
}

fn default_speed() -> f64 {
    1.0
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Overrides every seed below when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Trained value network consumed by `eval-brs`, `simulate` and `plan`.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub planning: PlanConfig,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub plan: Option<PlanQuery>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: None,
            output_dir: None,
            model: None,
            problem: ProblemConfig::default(),
            architecture: ArchitectureConfig::default(),
            training: TrainConfig::default(),
            evaluation: EvaluationConfig::default(),
            planning: PlanConfig::default(),
            scenario: None,
            benchmark: BenchmarkConfig::default(),
            simulate: SimulateConfig::default(),
            plan: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".to_string());
            ReachError::config(field, e.message().to_string())
        })?;
        if cfg.version != CONFIG_VERSION {
            return Err(ReachError::config(
                "version",
                format!("unsupported config version {} (expected {CONFIG_VERSION})", cfg.version),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ReachError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Pushes `seed` into every seeded component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.resolve_seeds();
    }

    pub fn resolve_seeds(&mut self) {
        if let Some(s) = self.seed {
            self.training.data_seed = s;
            self.training.init_seed = s;
            self.benchmark.seed = s;
        }
    }

    /// Validation of the sections every command shares.
    pub fn validate(&self) -> Result<()> {
        let problem = self.problem.build()?;
        self.architecture.build(problem.state_dim())?;
        self.training.validate()?;
        self.benchmark.validate()?;
        let e = &self.evaluation;
        if e.resolution < 360 {
            return Err(ReachError::config("evaluation.resolution", "needs at least 360 points"));
        }
        if !(e.threshold.is_finite()) {
            return Err(ReachError::config("evaluation.threshold", "must be finite"));
        }
        if e.calibration_candidates.is_empty() {
            return Err(ReachError::config("evaluation.calibration_candidates", "must not be empty"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config is always representable")
    }
}
