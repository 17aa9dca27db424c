use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use structdepth::optimize::RefineConfig;
use structdepth::{Error, Result};

/// Settings shared by all subcommands. Loss weights, segmentation,
/// threshold schedule, patches, clamp and normal radii live under `refine`
/// and are used by every command that needs them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub refine: RefineConfig,
    /// Inlier tolerance for direction estimation.
    pub angle_tol_deg: f64,
    /// Epoch index used for the Manhattan threshold by `manhattan` and `loss`.
    pub epoch: u64,
    /// Amplitude of the multiplicative noise applied to ground truth when
    /// `refine` has no `--init`.
    pub init_noise: f64,
    /// Standard deviation of the rotation applied to rendered lines by `synth`.
    pub line_noise_deg: f64,
    pub metric_cap: f64,
    pub median_scale: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            refine: RefineConfig::default(),
            angle_tol_deg: 2.0,
            epoch: 0,
            init_noise: 0.2,
            line_noise_deg: 0.0,
            metric_cap: 10.0,
            median_scale: false,
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file, then `key=value` overrides. Keys are
    /// dotted paths into the JSON form; unknown keys are rejected.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let base: RunConfig = match file {
            Some(path) => {
                let bytes = std::fs::read(path).map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                serde_json::from_slice(&bytes)?
            }
            None => RunConfig::default(),
        };
        let mut value = serde_json::to_value(&base)?;
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let config: RunConfig = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.refine.validate()?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.angle_tol_deg) && self.angle_tol_deg < 90.0) {
            return Err(Error::Input("angle_tol_deg must lie in (0, 90)".into()));
        }
        if !(self.init_noise >= 0.0 && self.init_noise < 1.0) {
            return Err(Error::Input("init_noise must lie in [0, 1)".into()));
        }
        if !(self.line_noise_deg >= 0.0 && self.line_noise_deg.is_finite()) {
            return Err(Error::Input("line_noise_deg must be non-negative".into()));
        }
        if !positive(self.metric_cap) {
            return Err(Error::Input("metric_cap must be positive".into()));
        }
        Ok(())
    }
}

fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Input(format!("override {item:?} is not key=value")))?;
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| Error::Input(format!("unknown configuration key {key:?}")))?;
    }
    // Values are JSON; bare words fall back to strings.
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
