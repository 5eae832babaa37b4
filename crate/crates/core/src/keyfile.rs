//! JSON key files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdct::FdctPlan;
use crate::wedge_pattern::{Seed, WatermarkKey};

pub const KEY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanParams {
    pub n_scales: usize,
    pub angles_at_embed_scale: usize,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self { n_scales: 4, angles_at_embed_scale: 32 }
    }
}

impl PlanParams {
    pub fn plan(&self, width: usize, height: usize) -> Result<FdctPlan> {
        FdctPlan::new(width, height, self.n_scales, self.angles_at_embed_scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyFile {
    pub version: u32,
    pub seed: String,
    pub embed_scale: usize,
    pub message_directions: Vec<usize>,
    pub template_direction: usize,
    pub template_offset: usize,
    pub alpha: f64,
    pub plan_params: PlanParams,
}

impl KeyFile {
    pub fn new(key: &WatermarkKey, plan_params: PlanParams) -> Self {
        Self {
            version: KEY_VERSION,
            seed: key.seed.to_string(),
            embed_scale: key.embed_scale,
            message_directions: key.message_directions.clone(),
            template_direction: key.template_direction,
            template_offset: key.template_offset,
            alpha: key.alpha,
            plan_params,
        }
    }

    pub fn key(&self) -> Result<WatermarkKey> {
        if self.version != KEY_VERSION {
            return Err(Error::BadKey(format!("unsupported key version {}", self.version)));
        }
        let key = WatermarkKey {
            seed: self.seed.parse::<Seed>()?,
            embed_scale: self.embed_scale,
            message_directions: self.message_directions.clone(),
            template_direction: self.template_direction,
            template_offset: self.template_offset,
            alpha: self.alpha,
        };
        if !(key.alpha.is_finite() && key.alpha >= 0.0) {
            return Err(Error::BadKey(format!("alpha {} must be finite and >= 0", key.alpha)));
        }
        Ok(key)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("key file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let kf: KeyFile =
            serde_json::from_str(text).map_err(|e| Error::BadKey(format!("key file: {e}")))?;
        kf.key()?;
        Ok(kf)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
