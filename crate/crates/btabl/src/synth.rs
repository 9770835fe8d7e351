//! Synthetic windows with planted class-dependent linear temporal patterns.
//!
//! Used by the smoke benchmarks: a learnable-by-construction 3-class
//! problem with the same 40x10 window geometry and the same stationary-
//! heavy class imbalance as the order-book task. Class 0 plants a constant
//! offset, class 1 an upward ramp, class 2 a downward ramp, each on its own
//! block of feature rows, under iid Gaussian noise.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::lobdata::{DatasetSplit, LabelMapping, LobWindow};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Fraction of samples per class; defaults to 0.6/0.2/0.2.
    #[serde(default = "default_fractions")]
    pub class_fractions: [f64; 3],
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    /// Amplitude of the planted pattern relative to unit noise.
    #[serde(default = "default_pattern_scale")]
    pub pattern_scale: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub gen_seed: u64,
}

fn default_fractions() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}
fn default_d() -> usize {
    40
}
fn default_t() -> usize {
    10
}
fn default_pattern_scale() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    1.0
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let sum: f64 = self.class_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("class fractions must sum to 1, got {sum}"));
        }
        if self.class_fractions.iter().any(|&f| f < 0.0) {
            return Err("class fractions must be non-negative".into());
        }
        if self.d < 3 || self.t < 2 {
            return Err("synthetic windows need d >= 3 and t >= 2".into());
        }
        Ok(())
    }
}

/// Exact per-class counts for `n` samples: floor of each fraction, with the
/// remainder assigned to the majority class.
fn class_counts(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for (c, &f) in fractions.iter().enumerate() {
        counts[c] = (f * n as f64).floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    counts[0] += n - assigned;
    counts
}

fn labels_for(n: usize, fractions: &[f64; 3], rng: &mut impl Rng) -> Vec<usize> {
    let counts = class_counts(n, fractions);
    let mut labels: Vec<usize> =
        counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat(c).take(k)).collect();
    labels.shuffle(rng);
    labels
}

/// Temporal profile of each class at normalized time `t` in [-0.5, 0.5]:
/// constant for class 0, +-ramp for classes 1 and 2.
fn temporal_profile(class: usize, t_norm: f64) -> f64 {
    match class {
        0 => 1.0,
        1 => 2.0 * t_norm,
        _ => -2.0 * t_norm,
    }
}

fn make_window(
    class: usize,
    cfg: &SynthConfig,
    day: u32,
    index: u64,
    rng: &mut impl Rng,
) -> LobWindow {
    let rows_per_class = cfg.d / 3;
    let row_lo = class * rows_per_class;
    let row_hi = if class == 2 { cfg.d } else { row_lo + rows_per_class };
    let mut x = Matrix::zeros(cfg.d, cfg.t);
    for r in 0..cfg.d {
        for c in 0..cfg.t {
            let noise: f64 = rng.sample(StandardNormal);
            let mut v = cfg.noise * noise;
            if r >= row_lo && r < row_hi {
                let t_norm = c as f64 / (cfg.t - 1) as f64 - 0.5;
                v += cfg.pattern_scale * temporal_profile(class, t_norm);
            }
            x.set(r, c, v);
        }
    }
    LobWindow { x, label: Some(class), stock_id: 1, day, anchor_event_index: index }
}

fn make_part(n: usize, cfg: &SynthConfig, day: u32, part_tag: u64) -> Vec<LobWindow> {
    let mut rng = rng_for(cfg.gen_seed, &[part_tag]);
    let labels = labels_for(n, &cfg.class_fractions, &mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, class)| make_window(class, cfg, day, i as u64, &mut rng))
        .collect()
}

/// Generate a full train/validation/test split. Deterministic in
/// `cfg.gen_seed`; the three parts use disjoint random streams.
pub fn synthetic_splits(cfg: &SynthConfig) -> DatasetSplit {
    DatasetSplit {
        train: make_part(cfg.n_train, cfg, 1, 0),
        validation: make_part(cfg.n_validation, cfg, 2, 1),
        test: make_part(cfg.n_test, cfg, 3, 2),
        mapping: LabelMapping::default(),
        discarded: 0,
    }
}
