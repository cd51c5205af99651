//! Run configuration: one serializable struct covering model geometry,
//! schedule, training hyperparameters, data synthesis and sampling
//! defaults, loadable from TOML or JSON with every field optional.

use crate::appearance::channel_schedule;
use crate::camera::ModelConfig;
use crate::denoiser::{DenoiserConfig, TrainConfig};
use crate::schedule::ScheduleConfig;
use crate::synthdata::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// DDIM steps at inference.
    pub sample_steps: usize,
    /// Classifier-free guidance scale at inference.
    pub cfg_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            denoiser: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            sample_steps: 64,
            cfg_scale: 3.0,
        }
    }
}

impl RunConfig {
    /// Collects every violated invariant (empty means valid).
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if let Err(e) = self.model.validate() {
            problems.push(format!("model: {e}"));
        }
        if let Err(e) = self.synth.validate() {
            problems.push(format!("synth: {e}"));
        }
        if self.model.latent_res > 0 && self.model.image_res % self.model.latent_res == 0 {
            let p = self.model.image_res / self.model.latent_res;
            if self.model.latent_channels != 3 * p * p {
                problems.push(format!(
                    "model: latent_channels {} must be 3*(image_res/latent_res)^2 = {} for the lossless codec",
                    self.model.latent_channels,
                    3 * p * p
                ));
            }
        }
        if let Err(e) = channel_schedule(self.model.latent_res, self.model.appearance_dim) {
            problems.push(format!("appearance encoder: {e}"));
        }
        if self.schedule.timesteps < 2 {
            problems.push("schedule: timesteps must be >= 2".to_string());
        }
        if self.sample_steps == 0 {
            problems.push("sample_steps must be >= 1".to_string());
        }
        if self.synth.resolution != self.model.image_res {
            problems.push(format!(
                "synth resolution {} must match model image_res {}",
                self.synth.resolution, self.model.image_res
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    /// Stable hash of the canonical JSON serialization, recorded in
    /// checkpoints and reports.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = RunConfig::default();
        cfg.validate().expect("default config valid");
        assert_eq!(cfg.hash().len(), 64);
        assert_eq!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut cfg = RunConfig::default();
        cfg.model.slots = 1;
        cfg.model.latent_channels = 5;
        cfg.schedule.timesteps = 1;
        let errs = cfg.validate().unwrap_err();
        assert!(errs.len() >= 3, "{errs:?}");
    }

    #[test]
    fn partial_json_overrides_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"sample_steps": 16}"#).unwrap();
        assert_eq!(cfg.sample_steps, 16);
        assert_eq!(cfg.cfg_scale, 3.0);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }
}
