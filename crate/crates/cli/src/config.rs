use std::path::Path;

use far_core::shapewarp::Frame;
use far_core::solver::SolverConfig;
use serde::{Deserialize, Deserializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Parse `WxH`, e.g. `40x40` or `185x193`.
pub fn parse_frame(s: &str) -> Result<Frame, String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("frame {s:?} is not of the form WxH"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("frame {s:?} has a non-integer dimension {v:?}"))
    };
    let frame = Frame::new(dim(w)?, dim(h)?);
    if frame.width < 8 || frame.height < 8 {
        return Err(format!("frame {s:?} is smaller than 8x8"));
    }
    Ok(frame)
}

fn frame_from_str<'de, D: Deserializer<'de>>(d: D) -> Result<Frame, D::Error> {
    let s = String::deserialize(d)?;
    parse_frame(&s).map_err(serde::de::Error::custom)
}

/// Settings shared by all subcommands. Loaded from an optional TOML file,
/// then overridden by command-line flags, then validated.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub solver: SolverConfig,
    #[serde(deserialize_with = "frame_from_str")]
    pub frame: Frame,
    pub k: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            solver: SolverConfig::default(),
            frame: Frame::new(40, 40),
            k: 20,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: origin.clone(),
            source,
        })?;
        Self::from_toml(&text, &origin)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.solver
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.k == 0 {
            return Err(ConfigError::Invalid("--k must be at least 1".into()));
        }
        Ok(())
    }
}
