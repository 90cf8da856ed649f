//! Run-level configuration shared by training, evaluation and the CLI.
//!
//! Precedence when assembling a config: command-line flags override values
//! from a config file, which override the built-in defaults. Config files
//! are flat `key = value` text; `#` starts a comment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Geometry decay coefficient.
    pub alpha: f64,
    /// Classification weight in the total loss.
    pub beta: f64,
    /// Feature channels per point.
    pub channels: usize,
    /// Hidden width of the point MLP and prediction heads.
    pub hidden: usize,
    /// Self-attention blocks in the encoder.
    pub encoder_layers: usize,
    /// Superpoint voxel edge, meters.
    pub voxel_size: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Power of the polynomial learning-rate schedule.
    pub poly_power: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 2.0,
            beta: 0.5,
            channels: 32,
            hidden: 64,
            encoder_layers: 2,
            voxel_size: 0.25,
            learning_rate: 2e-4,
            weight_decay: 0.05,
            poly_power: 0.9,
            epochs: 500,
            seed: 7,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::config(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if self.channels == 0 || self.encoder_layers == 0 || self.epochs == 0 || self.hidden == 0 {
            return Err(Error::config(
                "channels, hidden, encoder layers and epochs must all be at least 1",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::config(format!(
                "voxel size must be positive, got {}",
                self.voxel_size
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::config(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            channels: self.channels,
            hidden: self.hidden,
            encoder_layers: self.encoder_layers,
            num_classes,
            alpha: self.alpha,
            voxel_size: self.voxel_size,
        }
    }

    /// Overlay values parsed from flat `key = value` text onto `self`.
    /// Unknown keys are rejected so typos fail loudly.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no + 1,
                msg: format!("expected 'key = value', got '{raw}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Parse {
                line: line_no + 1,
                msg: format!("bad {what} value '{value}' for key '{key}'"),
            };
            match key {
                "alpha" => self.alpha = value.parse().map_err(|_| bad("float"))?,
                "beta" => self.beta = value.parse().map_err(|_| bad("float"))?,
                "channels" => self.channels = value.parse().map_err(|_| bad("integer"))?,
                "hidden" => self.hidden = value.parse().map_err(|_| bad("integer"))?,
                "encoder_layers" => {
                    self.encoder_layers = value.parse().map_err(|_| bad("integer"))?
                }
                "voxel_size" => self.voxel_size = value.parse().map_err(|_| bad("float"))?,
                "learning_rate" | "lr" => {
                    self.learning_rate = value.parse().map_err(|_| bad("float"))?
                }
                "weight_decay" => self.weight_decay = value.parse().map_err(|_| bad("float"))?,
                "poly_power" => self.poly_power = value.parse().map_err(|_| bad("float"))?,
                "epochs" => self.epochs = value.parse().map_err(|_| bad("integer"))?,
                "seed" => self.seed = value.parse().map_err(|_| bad("integer"))?,
                other => {
                    return Err(Error::Parse {
                        line: line_no + 1,
                        msg: format!("unknown config key '{other}'"),
                    })
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn file_overlays_values_and_keeps_the_rest() {
        let mut cfg = RunConfig::default();
        cfg.apply_file("alpha = 1.5\n# a comment\nepochs = 10\nlr = 0.001\n")
            .unwrap();
        assert_eq!(cfg.alpha, 1.5);
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.beta, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_file("alhpa = 2.0\n").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let bad = RunConfig {
            alpha: 0.0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            learning_rate: 0.0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
