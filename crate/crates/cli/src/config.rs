//! Experiment configuration: a TOML document with one table per block.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {message}")]
    Field { field: &'static str, message: String },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub cost: CostConfig,
    #[serde(default)]
    pub dyadic: DyadicConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub finite_horizon: FiniteHorizonConfig,
    #[serde(default)]
    pub stopping: Option<StoppingConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// A chain given by its generator or by its one-step rows at the finest
    /// level.
    Finite {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        generator: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<Vec<Vec<f64>>>,
        /// One coordinate per state; defaults to `0, 1, …, n − 1`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        points: Option<Vec<f64>>,
        reward: Vec<f64>,
    },
    /// Linear flow `x e^{-αt}`, jumps to `a·x⁻ + noise`.
    Pdp {
        flow_rate: f64,
        jump_rate: f64,
        #[serde(default)]
        shift_scale: f64,
        noise_std: f64,
        lower: f64,
        upper: f64,
        grid_size: usize,
        reward: Reward,
    },
    /// Constant diffusion on an interval with reflection at both ends.
    ReflectedDiffusion {
        diffusion: f64,
        lower: f64,
        upper: f64,
        grid_size: usize,
        #[serde(default = "default_floor")]
        floor: f64,
        reward: Reward,
    },
}

fn default_floor() -> f64 {
    1e-12
}

/// Per-state values, or polynomial coefficients in the state coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reward {
    Values(Vec<f64>),
    Polynomial { polynomial: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKindConfig {
    MetricCapped,
    Rational,
    Logistic,
    ExplicitTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub kind: CostKindConfig,
    pub c0: f64,
    #[serde(default = "default_cap")]
    pub cap: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<Vec<f64>>>,
    pub impulse_indices: Vec<usize>,
}

fn default_cap() -> f64 {
    f64::INFINITY
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DyadicConfig {
    pub m_min: u32,
    pub m_max: u32,
}

impl Default for DyadicConfig {
    fn default() -> Self {
        Self { m_min: 0, m_max: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol_span: f64,
    pub max_iters: usize,
    pub reference_index: usize,
    pub case_gap_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol_span: 1e-12, max_iters: 100_000, reference_index: 0, case_gap_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { horizon: 200.0, n_paths: 10_000, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteHorizonConfig {
    pub horizon: f64,
    pub budget: usize,
}

impl Default for FiniteHorizonConfig {
    fn default() -> Self {
        Self { horizon: 1.0, budget: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingConfig {
    /// Running cost `g`, strictly positive.
    pub running: Vec<f64>,
    /// Terminal cost `G`, nonnegative.
    pub terminal: Vec<f64>,
    /// When set, also solve the finite-horizon problem on `[0, horizon]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: "out".into(), formats: vec!["csv".into(), "summary".into()] }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    /// Fully resolved document, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the resolved document, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dyadic;
        if d.m_min > d.m_max {
            return Err(field("dyadic.m_min", format!("{} exceeds m_max {}", d.m_min, d.m_max)));
        }
        if d.m_max > 16 {
            return Err(field("dyadic.m_max", format!("{} exceeds 16", d.m_max)));
        }
        let s = &self.solver;
        if !(s.tol_span > 0.0) {
            return Err(field("solver.tol_span", "must be positive"));
        }
        if !(s.case_gap_tol > 0.0) {
            return Err(field("solver.case_gap_tol", "must be positive"));
        }
        if s.max_iters == 0 {
            return Err(field("solver.max_iters", "must be positive"));
        }
        if self.simulation.n_paths < 2 {
            return Err(field("simulation.n_paths", "must be at least 2"));
        }
        if !(self.simulation.horizon > 0.0) {
            return Err(field("simulation.horizon", "must be positive"));
        }
        if !(self.finite_horizon.horizon > 0.0) {
            return Err(field("finite_horizon.horizon", "must be positive"));
        }
        if !(self.cost.c0 > 0.0) {
            return Err(field("cost.c0", "must be positive"));
        }
        if !(self.cost.cap >= 0.0) {
            return Err(field("cost.cap", "must be nonnegative"));
        }
        if self.cost.impulse_indices.is_empty() {
            return Err(field("cost.impulse_indices", "must not be empty"));
        }
        if (self.cost.kind == CostKindConfig::ExplicitTable) != self.cost.table.is_some() {
            return Err(field("cost.table", "required for explicit_table and only there"));
        }
        let n = self.state_count();
        if let Some(&i) = self.cost.impulse_indices.iter().find(|&&i| i >= n) {
            return Err(field("cost.impulse_indices", format!("index {i} out of range for {n} states")));
        }
        if s.reference_index >= n {
            return Err(field("solver.reference_index", format!("out of range for {n} states")));
        }
        match &self.model {
            ModelConfig::Finite { generator, rows, points, reward } => {
                if generator.is_some() == rows.is_some() {
                    return Err(field("model", "give exactly one of `generator` and `rows`"));
                }
                if reward.len() != n {
                    return Err(field("model.reward", format!("expected {n} values")));
                }
                if points.as_ref().is_some_and(|p| p.len() != n) {
                    return Err(field("model.points", format!("expected {n} values")));
                }
            }
            ModelConfig::Pdp { grid_size, reward, lower, upper, .. }
            | ModelConfig::ReflectedDiffusion { grid_size, reward, lower, upper, .. } => {
                if *grid_size < 2 {
                    return Err(field("model.grid_size", "must be at least 2"));
                }
                if !(upper > lower) {
                    return Err(field("model.upper", "must exceed model.lower"));
                }
                if let Reward::Values(v) = reward {
                    if v.len() != n {
                        return Err(field("model.reward", format!("expected {n} values")));
                    }
                }
            }
        }
        if let Some(st) = &self.stopping {
            if st.running.len() != n || st.terminal.len() != n {
                return Err(field("stopping", format!("running and terminal need {n} values")));
            }
        }
        Ok(())
    }

    pub fn state_count(&self) -> usize {
        match &self.model {
            ModelConfig::Finite { generator, rows, reward, .. } => generator
                .as_ref()
                .or(rows.as_ref())
                .map(|m| m.len())
                .unwrap_or(reward.len()),
            ModelConfig::Pdp { grid_size, .. } | ModelConfig::ReflectedDiffusion { grid_size, .. } => *grid_size,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
type = "finite"
rows = [[1.0]]
reward = [0.5]

[cost]
kind = "metric_capped"
c0 = 0.3
impulse_indices = [0]
"#;

    #[test]
    fn defaults_fill_in_and_round_trip() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.dyadic, DyadicConfig::default());
        assert_eq!(cfg.cost.cap, f64::INFINITY);
        let echo = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&echo).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn field_level_errors() {
        let bad = MINIMAL.replace("c0 = 0.3", "c0 = -1.0");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.starts_with("cost.c0"), "{err}");
        let bad = format!("{MINIMAL}\n[dyadic]\nm_min = 3\nm_max = 2\n");
        assert!(ExperimentConfig::from_toml(&bad).unwrap_err().to_string().starts_with("dyadic.m_min"));
        let bad = MINIMAL.replace("reward = [0.5]", "reward = [0.5]\ncolour = 1");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(ConfigError::Parse(_))));
    }
}
