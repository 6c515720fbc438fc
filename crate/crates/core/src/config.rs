//! JSON run configuration shared by every CLI subcommand.
//!
//! Every section and field has a default, so `{}` is a valid config. Unknown
//! fields are rejected and parse errors name the offending field path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dqn::DqnConfig;
use crate::env::{build_worstcase_pair, GatheringConfig, GatheringGame};
use crate::error::{Error, Result};
use crate::harness::EvalSettings;
use crate::parametric::{MdpFamily, ThetaVector};

pub const DEFAULT_SEED: u64 = 1;
/// Step size of the sequential inference update used by the test phase.
pub const DEFAULT_INFERENCE_RATE: f64 = 0.025;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    Gathering(GatheringConfig),
    WorstCase { gamma: f64, r_max: f64 },
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig::Gathering(GatheringConfig::for_grid(3))
    }
}

impl EnvironmentConfig {
    pub fn build(&self) -> Result<Box<dyn MdpFamily>> {
        Ok(match self {
            EnvironmentConfig::Gathering(c) => Box::new(GatheringGame::new(c.clone())?),
            EnvironmentConfig::WorstCase { gamma, r_max } => Box::new(build_worstcase_pair(*gamma, *r_max)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// One AdaptPool variant per cover radius.
    pub cover_radii: Vec<f64>,
    /// Spacing of the grid used for AdaptDQN training and fixed-baseline candidates.
    pub train_resolution: f64,
    pub dqn: DqnConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { cover_radii: vec![0.25, 1.0], train_resolution: 0.25, dqn: DqnConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub learning_rate: f64,
    /// Initial estimate; the centre of `Θ` when absent.
    pub theta0: Option<ThetaVector>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { learning_rate: DEFAULT_INFERENCE_RATE, theta0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub resolution: f64,
    pub runs: usize,
    pub episodes: usize,
    pub steps: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { resolution: 0.5, runs: 5, episodes: 200, steps: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub trials: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self { trials: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub environment: EnvironmentConfig,
    pub training: TrainingConfig,
    pub inference: InferenceConfig,
    pub evaluation: EvaluationConfig,
    pub verification: VerificationConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            environment: EnvironmentConfig::default(),
            training: TrainingConfig::default(),
            inference: InferenceConfig::default(),
            evaluation: EvaluationConfig::default(),
            verification: VerificationConfig::default(),
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(if path == "." { "<root>" } else { &path }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every section, including that the environment builds.
    pub fn validate(&self) -> Result<()> {
        let family = self.environment.build().map_err(|e| match e {
            Error::Config { field, message } => config_error(&format!("environment.{field}"), message),
            other => config_error("environment", other.to_string()),
        })?;
        let t = &self.training;
        if t.cover_radii.is_empty() {
            return Err(config_error("training.cover_radii", "need at least one radius"));
        }
        if let Some(r) = t.cover_radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(config_error("training.cover_radii", format!("radius {r} must be positive")));
        }
        if !(t.train_resolution > 0.0 && t.train_resolution.is_finite()) {
            return Err(config_error("training.train_resolution", "must be positive"));
        }
        t.dqn.validate().map_err(|e| match e {
            Error::Config { field, message } => config_error(&format!("training.{field}"), message),
            other => other,
        })?;
        if let Some(theta0) = &self.inference.theta0 {
            family.space().check(theta0).map_err(|e| config_error("inference.theta0", e.to_string()))?;
        }
        self.eval_settings()?.validate()?;
        if self.verification.trials == 0 {
            return Err(config_error("verification.trials", "must be positive"));
        }
        Ok(())
    }

    pub fn eval_settings(&self) -> Result<EvalSettings> {
        let e = &self.evaluation;
        let settings = EvalSettings {
            resolution: e.resolution,
            runs: e.runs,
            episodes: e.episodes,
            steps: e.steps,
            learning_rate: self.inference.learning_rate,
            theta0: self.inference.theta0.clone(),
            seed: self.seed,
        };
        settings.validate().map_err(|err| match err {
            Error::Config { field, message } if field == "evaluation.learning_rate" => {
                config_error("inference.learning_rate", message)
            }
            other => other,
        })?;
        Ok(settings)
    }
}
