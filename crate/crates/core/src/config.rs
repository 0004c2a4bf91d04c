//! Run configuration. Defaults are the published hyperparameters; anything
//! the original setup leaves open is given a conventional value here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Embedding and LSTM hidden width.
    pub dim: usize,
    /// Rating scale `1..=classes`.
    pub classes: usize,

    pub gamma: f64,
    /// Weight of the cosine aspect reward.
    pub lambda1: f64,
    /// Weight of the word-level reward inside the clause reward.
    pub lambda2: f64,
    /// Weight of the document-level delay reward.
    pub lambda3: f64,
    /// Weight of the clause-level rating reward.
    pub lambda_low1: f64,
    /// Weight of the selected-word penalty.
    pub lambda_low2: f64,

    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub sgd_lr: f64,
    pub batch_size: usize,
    /// L2 weight on LSTM and decoder parameters.
    pub l2: f64,
    /// Dropout on LSTM inputs, pretraining only.
    pub dropout: f64,
    /// Trajectories sampled per baseline estimate.
    pub baseline_samples: usize,
    pub grad_clip: f64,
    pub cosine_eps: f64,
    pub prob_floor: f64,

    pub pretrain_low_epochs: usize,
    pub pretrain_high_epochs: usize,
    pub policy_epochs: usize,

    /// Reset the word encoder at every selected clause instead of carrying
    /// its state through the document.
    pub reset_low_per_clause: bool,
    /// Recompute aspect vectors from the keyword rows after pretraining.
    pub trainable_aspect_embeddings: bool,
    /// Interleave encoder updates on policy-selected inputs with each
    /// policy epoch.
    pub fine_tune: bool,

    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            dim: 200,
            classes: 5,
            gamma: 0.8,
            lambda1: 0.25,
            lambda2: 0.25,
            lambda3: 0.5,
            lambda_low1: 0.6,
            lambda_low2: 0.4,
            adam_lr: 0.012,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            sgd_lr: 0.008,
            batch_size: 64,
            l2: 1e-5,
            dropout: 0.2,
            baseline_samples: 5,
            grad_clip: 5.0,
            cosine_eps: 1e-4,
            prob_floor: 1e-12,
            pretrain_low_epochs: 5,
            pretrain_high_epochs: 5,
            policy_epochs: 5,
            reset_low_per_clause: false,
            trainable_aspect_embeddings: false,
            fine_tune: false,
            seed: 42,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Usage(format!("invalid config: {msg}")));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("classes must be at least 2, got {}", self.classes));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda_low1", self.lambda_low1),
            ("lambda_low2", self.lambda_low2),
            ("l2", self.l2),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.batch_size == 0 || self.baseline_samples == 0 {
            return bad("batch_size and baseline_samples must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.adam_lr > 0.0 && self.sgd_lr > 0.0 && self.grad_clip > 0.0) {
            return bad("learning rates and grad_clip must be positive".into());
        }
        if !(self.cosine_eps > 0.0 && self.prob_floor > 0.0) {
            return bad("cosine_eps and prob_floor must be positive".into());
        }
        Ok(())
    }

    /// Parses TOML text, applies `key=value` overrides, then validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)
            .map_err(|e| Error::Usage(format!("config is not valid TOML: {e}")))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override {ov:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            table.insert(key.trim().to_string(), value);
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Usage(format!("config schema violation: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
