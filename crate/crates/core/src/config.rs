//! Run configuration shared by the pipeline and the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptationConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::segnet::NetworkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Foreground probability above which a pixel is predicted foreground.
    pub threshold: f32,
    /// Boundary match tolerance in pixels; `None` scales with the image diagonal.
    pub boundary_tolerance: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            boundary_tolerance: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        if let Some(t) = self.boundary_tolerance {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("boundary_tolerance must be >= 0, got {t}")));
            }
        }
        Ok(())
    }
}

/// Every tunable of a run. Missing keys take their defaults; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub adapt: AdaptationConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub const FILE_NAME: &'static str = "config.json";

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.adapt.validate()?;
        self.eval.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The defaults, or the file at `path` when given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Write the effective config as `config.json` inside `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE_NAME);
        std::fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(&path, e))
    }
}
