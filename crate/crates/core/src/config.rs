//! Detection parameters and their TOML file format.
//!
//! ```toml
//! config_version = 1
//! window_length = 100
//! window_stride = 50
//! trws_max_iters = 100
//! trws_epsilon = 1e-4
//! tracklet_iou_threshold = 0.3
//! w_intra = 1.0
//! w_frame = 1.0
//! w_traj = 1.0
//! eval_iou_threshold = 0.5
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crf::EnergyWeights;
use crate::error::{Error, Result};
use crate::solver::TrwsOptions;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub config_version: u32,
    pub window_length: usize,
    pub window_stride: usize,
    pub trws_max_iters: usize,
    pub trws_epsilon: f64,
    pub tracklet_iou_threshold: f64,
    pub w_intra: f64,
    pub w_frame: f64,
    pub w_traj: f64,
    pub eval_iou_threshold: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            config_version: CONFIG_VERSION,
            window_length: 100,
            window_stride: 50,
            trws_max_iters: 100,
            trws_epsilon: 1e-4,
            tracklet_iou_threshold: 0.3,
            w_intra: 1.0,
            w_frame: 1.0,
            w_traj: 1.0,
            eval_iou_threshold: 0.5,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.config_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config_version {} is not supported (expected {})",
                self.config_version, CONFIG_VERSION
            )));
        }
        if self.window_length == 0 || self.window_stride == 0 {
            return fail("window_length and window_stride must be positive");
        }
        if self.trws_max_iters == 0 || !(self.trws_epsilon > 0.0) {
            return fail("trws_max_iters and trws_epsilon must be positive");
        }
        if !(self.tracklet_iou_threshold > 0.0 && self.tracklet_iou_threshold <= 1.0) {
            return fail("tracklet_iou_threshold must lie in (0, 1]");
        }
        if !(self.eval_iou_threshold > 0.0 && self.eval_iou_threshold < 1.0) {
            return fail("eval_iou_threshold must lie in (0, 1)");
        }
        if [self.w_intra, self.w_frame, self.w_traj].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail("energy weights must be finite and non-negative");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn weights(&self) -> EnergyWeights {
        EnergyWeights {
            intra: self.w_intra,
            frame: self.w_frame,
            traj: self.w_traj,
        }
    }

    pub fn trws(&self) -> TrwsOptions {
        TrwsOptions {
            max_iters: self.trws_max_iters,
            epsilon: self.trws_epsilon,
        }
    }
}
