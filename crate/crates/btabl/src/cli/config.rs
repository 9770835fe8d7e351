//! Run configuration: a flat JSON document with full validation. Every
//! hyperparameter carries the project default; data locations have no
//! silent defaults and unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AppError;
use crate::lobdata::{LabelMapping, Orientation, HORIZONS};
use crate::model::{Activation, NetworkShape};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fi2010Config {
    /// Directory with `day_<d>.txt` files, optionally inside
    /// `stock_<id>/` subdirectories.
    pub root: String,
    #[serde(default = "default_orientation")]
    pub orientation: Orientation,
}

fn default_orientation() -> Orientation {
    Orientation::EventsAsRows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    Fi2010(Fi2010Config),
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// (d_out, t_out) of optional hidden bilinear layers.
    #[serde(default)]
    pub hidden: Vec<(usize, usize)>,
    #[serde(default = "default_d_out")]
    pub d_out: usize,
    #[serde(default = "default_t_out")]
    pub t_out: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { hidden: Vec::new(), d_out: 3, t_out: 1 }
    }
}

fn default_d_out() -> usize {
    3
}
fn default_t_out() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VognConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// EMA factor on the mean gradient.
    #[serde(default = "default_vogn_momentum")]
    pub grad_momentum: f64,
    /// Extra exponential decay on the scale accumulator; 1.0 recovers the
    /// plain scale update.
    #[serde(default = "default_h_decay")]
    pub h_decay: f64,
    /// Prior precision alpha (prior sigma^2 = 1/alpha).
    #[serde(default = "default_alpha")]
    pub prior_alpha: f64,
    /// Steps with plain-gradient mean updates before variational scaling.
    #[serde(default)]
    pub warmup_steps: u64,
    /// Posterior draws per training step.
    #[serde(default = "default_train_mc")]
    pub train_mc_samples: usize,
}

impl Default for VognConfig {
    fn default() -> Self {
        VognConfig {
            lr: 0.01,
            grad_momentum: 0.999,
            h_decay: 0.85,
            prior_alpha: 1.0,
            warmup_steps: 0,
            train_mc_samples: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_sgd_momentum")]
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 0.01, momentum: 0.99 }
    }
}

fn default_lr() -> f64 {
    0.01
}
fn default_vogn_momentum() -> f64 {
    0.999
}
fn default_h_decay() -> f64 {
    0.85
}
fn default_alpha() -> f64 {
    1.0
}
fn default_train_mc() -> usize {
    1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_sgd_momentum() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Vogn(VognConfig),
    Adam(AdamConfig),
    Sgd(SgdConfig),
}

impl OptimizerConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            OptimizerConfig::Vogn(_) => "vogn",
            OptimizerConfig::Adam(_) => "adam",
            OptimizerConfig::Sgd(_) => "sgd",
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Vogn(c) => c.lr,
            OptimizerConfig::Adam(c) => c.lr,
            OptimizerConfig::Sgd(c) => c.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    /// Feature indices kept from each event; default 0..40.
    #[serde(default = "crate::lobdata::default_feature_dims")]
    pub feature_dims: Vec<usize>,
    /// Window length T.
    #[serde(default = "default_window_t")]
    pub window_t: usize,
    /// Label horizon in events: 10, 20, 30, 50 or 100.
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
    #[serde(default = "default_test_days")]
    pub test_days: usize,
    /// Re-standardize features on the training split (the distributed
    /// files are already z-scored, so this is off by default).
    #[serde(default)]
    pub zscore: bool,
    #[serde(default)]
    pub label_mapping: LabelMapping,
    #[serde(default)]
    pub arch: ArchConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Connection-dropout rate for MC-dropout evaluation of ADAM models.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_ns_validation")]
    pub ns_validation: usize,
    #[serde(default = "default_ns_test")]
    pub ns_test: usize,
    #[serde(default = "default_lr_gamma")]
    pub lr_gamma: f64,
    #[serde(default = "default_lr_patience")]
    pub lr_patience: usize,
    #[serde(default = "default_lr_min_delta")]
    pub lr_min_delta: f64,
    /// Periodic checkpoint interval in epochs; 0 disables periodic saves.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Recompute train-split metrics at each epoch end, so evaluating the
    /// final checkpoint on the training split reproduces the logged values.
    #[serde(default = "default_true")]
    pub eval_train_each_epoch: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_window_t() -> usize {
    10
}
fn default_horizon() -> u32 {
    10
}
fn default_train_frac() -> f64 {
    0.75
}
fn default_val_frac() -> f64 {
    0.15
}
fn default_test_days() -> usize {
    3
}
fn default_batch() -> usize {
    256
}
fn default_epochs() -> usize {
    1000
}
fn default_dropout() -> f64 {
    0.10
}
fn default_ns_validation() -> usize {
    10
}
fn default_ns_test() -> usize {
    50
}
fn default_lr_gamma() -> f64 {
    0.5
}
fn default_lr_patience() -> usize {
    20
}
fn default_lr_min_delta() -> f64 {
    1e-4
}
fn default_checkpoint_every() -> usize {
    100
}
fn default_true() -> bool {
    true
}
fn default_seed() -> u64 {
    1
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), AppError> {
        let err = |m: String| Err(AppError::Config(m));
        if self.feature_dims.is_empty() {
            return err("feature_dims must not be empty".into());
        }
        if self.window_t < 1 {
            return err("window_t must be at least 1".into());
        }
        if !HORIZONS.contains(&self.horizon) {
            return err(format!("horizon {} is not one of 10/20/30/50/100", self.horizon));
        }
        if !(0.0..=1.0).contains(&self.train_frac)
            || !(0.0..=1.0).contains(&self.val_frac)
            || self.train_frac + self.val_frac > 1.0 + 1e-12
        {
            return err(format!(
                "split fractions invalid: train={} val={}",
                self.train_frac, self.val_frac
            ));
        }
        if self.batch_size < 1 {
            return err("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} must be in [0,1)", self.dropout));
        }
        if self.ns_validation < 1 || self.ns_test < 1 {
            return err("ns_validation and ns_test must be at least 1".into());
        }
        if self.arch.d_out < 1 || self.arch.t_out < 1 {
            return err("architecture output dimensions must be at least 1".into());
        }
        self.label_mapping.validate().map_err(|e| AppError::Config(e.to_string()))?;
        let classes = self.label_mapping.num_classes();
        if self.arch.d_out * self.arch.t_out != classes {
            return err(format!(
                "architecture produces {} outputs but there are {} classes",
                self.arch.d_out * self.arch.t_out,
                classes
            ));
        }
        if self.optimizer.lr() <= 0.0 {
            return err("learning rate must be positive".into());
        }
        if let OptimizerConfig::Vogn(v) = &self.optimizer {
            if v.prior_alpha <= 0.0 {
                return err("prior_alpha must be positive".into());
            }
            if !(0.0..1.0).contains(&v.grad_momentum) {
                return err("grad_momentum must be in [0,1)".into());
            }
            if !(0.0..=1.0).contains(&v.h_decay) {
                return err("h_decay must be in [0,1]".into());
            }
            if v.train_mc_samples < 1 {
                return err("train_mc_samples must be at least 1".into());
            }
        }
        match &self.data {
            DataConfig::Synthetic(s) => {
                s.validate().map_err(AppError::Config)?;
                if s.d != self.feature_dims.len() || s.t != self.window_t {
                    return err(format!(
                        "synthetic windows are {}x{} but the model expects {}x{}",
                        s.d,
                        s.t,
                        self.feature_dims.len(),
                        self.window_t
                    ));
                }
            }
            DataConfig::Fi2010(f) => {
                if f.root.is_empty() {
                    return err("data root must not be empty".into());
                }
                if let Some(&bad) =
                    self.feature_dims.iter().find(|&&d| d >= crate::lobdata::FEATURES_PER_EVENT)
                {
                    return err(format!("feature index {bad} out of range [0,144)"));
                }
            }
        }
        Ok(())
    }

    pub fn network_shape(&self) -> NetworkShape {
        NetworkShape {
            d_in: self.feature_dims.len(),
            t_in: self.window_t,
            hidden: self.arch.hidden.clone(),
            d_out: self.arch.d_out,
            t_out: self.arch.t_out,
            output_activation: Activation::Identity,
        }
    }

    /// Hash of the canonical JSON rendering; checkpoints refuse to resume
    /// under a different configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}
