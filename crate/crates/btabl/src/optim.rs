//! Parameter-update engines: VOGN (mean-field Gaussian natural-gradient
//! variational inference), ADAM and SGD-with-momentum baselines, and the
//! validation-plateau learning-rate schedule.
//!
//! VOGN keeps a variational mean `mu` and a scale accumulator `s`; the
//! posterior variance is derived as `sigma^2 = 1/(N(s + alpha_tilde))` and
//! never stored. The scale update averages *squared per-sample gradients*
//! (a Gauss-Newton diagonal-Hessian proxy), which keeps `s` non-negative by
//! construction, unlike the squared mean gradient that ADAM-family methods
//! accumulate:
//!
//! ```text
//! h_j   = 1/M Σ_i g_ij^2
//! s    <- (1-β) s + β h                       (scale)
//! mu   <- mu − β (ĝ + α̃ mu) / (s_new + α̃)   (mean, element-wise)
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("gradient matrix must contain at least one row")]
    EmptyGradients,
    #[error("gradient length {got} does not match parameter length {want}")]
    Length { got: usize, want: usize },
}

/// Mean-field Gaussian variational state.
///
/// `grad_momentum` smooths the mean gradient with a plain EMA before the
/// mean update; `h_decay` is an extra exponential decay applied to `s`
/// ahead of the scale update. Setting both to their neutral values
/// (`grad_momentum = 0`, `h_decay = 1`) recovers the literal update above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub mu: Vec<f64>,
    pub s: Vec<f64>,
    /// Prior precision over training-set size: alpha / N.
    pub alpha_tilde: f64,
    /// Training-set size N, fixed at training start.
    pub n: f64,
    /// Learning rate beta.
    pub beta: f64,
    pub grad_momentum: f64,
    pub h_decay: f64,
    /// Steps during which the mean update is a plain gradient step.
    pub warmup_steps: u64,
    pub step: u64,
    pub grad_avg: Vec<f64>,
}

impl VariationalState {
    /// Fresh state with `mu = 0` and initial `sigma^2 = 1/alpha` (the prior):
    /// `s0 = (1 - alpha)/N`, clipped at zero.
    pub fn new(p: usize, n: usize, alpha: f64, beta: f64, grad_momentum: f64, h_decay: f64) -> Self {
        assert!(n >= 1 && alpha > 0.0 && beta > 0.0);
        let n = n as f64;
        let s0 = ((1.0 - alpha) / n).max(0.0);
        VariationalState {
            mu: vec![0.0; p],
            s: vec![s0; p],
            alpha_tilde: alpha / n,
            n,
            beta,
            grad_momentum,
            h_decay,
            warmup_steps: 0,
            step: 0,
            grad_avg: vec![0.0; p],
        }
    }

    pub fn param_len(&self) -> usize {
        self.mu.len()
    }

    /// Derived posterior variance, element-wise positive.
    pub fn sigma_sq(&self) -> Vec<f64> {
        self.s.iter().map(|&s| 1.0 / (self.n * (s + self.alpha_tilde))).collect()
    }

    pub fn in_warmup(&self) -> bool {
        self.step < self.warmup_steps
    }
}

/// Draw `theta = mu + sigma ⊙ eps` from the variational posterior.
pub fn vogn_sample(state: &VariationalState, rng: &mut impl Rng) -> Vec<f64> {
    state
        .mu
        .iter()
        .zip(&state.s)
        .map(|(&mu, &s)| {
            let sigma = (1.0 / (state.n * (s + state.alpha_tilde))).sqrt();
            mu + sigma * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// One VOGN update from per-sample gradients (M x P) evaluated at a
/// posterior draw. Scale first, then mean, so the mean update sees `s_new`.
pub fn vogn_step(state: &mut VariationalState, per_sample: &[Vec<f64>]) -> Result<(), OptimError> {
    if per_sample.is_empty() {
        return Err(OptimError::EmptyGradients);
    }
    let p = state.param_len();
    let m = per_sample.len() as f64;
    let mut g_hat = vec![0.0; p];
    let mut h_hat = vec![0.0; p];
    for row in per_sample {
        if row.len() != p {
            return Err(OptimError::Length { got: row.len(), want: p });
        }
        for j in 0..p {
            g_hat[j] += row[j];
            h_hat[j] += row[j] * row[j];
        }
    }
    for j in 0..p {
        g_hat[j] /= m;
        h_hat[j] /= m;
    }
    vogn_step_from_stats(state, &g_hat, &h_hat)
}

/// VOGN update from precomputed minibatch statistics: the mean gradient and
/// the mean of squared per-sample gradients.
pub fn vogn_step_from_stats(
    state: &mut VariationalState,
    g_hat: &[f64],
    h_hat: &[f64],
) -> Result<(), OptimError> {
    let p = state.param_len();
    if g_hat.len() != p || h_hat.len() != p {
        return Err(OptimError::Length { got: g_hat.len(), want: p });
    }
    let beta = state.beta;
    let warmup = state.in_warmup();
    for j in 0..p {
        let s_pre = state.h_decay * state.s[j];
        let s_new = (1.0 - beta) * s_pre + beta * h_hat[j];
        state.s[j] = s_new;
        state.grad_avg[j] =
            state.grad_momentum * state.grad_avg[j] + (1.0 - state.grad_momentum) * g_hat[j];
        let pulled = state.grad_avg[j] + state.alpha_tilde * state.mu[j];
        state.mu[j] -= if warmup { beta * pulled } else { beta * pulled / (s_new + state.alpha_tilde) };
    }
    state.step += 1;
    Ok(())
}

/// ADAM state; `params` is the point estimate being optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub eps: f64,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: Vec<f64>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let p = params.len();
        AdamState { params, m: vec![0.0; p], v: vec![0.0; p], beta1, beta2, lr, eps, step: 0 }
    }
}

/// Standard bias-corrected ADAM update.
pub fn adam_step(state: &mut AdamState, grad: &[f64]) -> Result<(), OptimError> {
    if grad.len() != state.params.len() {
        return Err(OptimError::Length { got: grad.len(), want: state.params.len() });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for j in 0..state.params.len() {
        state.m[j] = state.beta1 * state.m[j] + (1.0 - state.beta1) * grad[j];
        state.v[j] = state.beta2 * state.v[j] + (1.0 - state.beta2) * grad[j] * grad[j];
        let m_hat = state.m[j] / bc1;
        let v_hat = state.v[j] / bc2;
        state.params[j] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// SGD-with-momentum state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub params: Vec<f64>,
    pub velocity: Vec<f64>,
    pub momentum: f64,
    pub lr: f64,
}

impl SgdState {
    pub fn new(params: Vec<f64>, lr: f64, momentum: f64) -> Self {
        let p = params.len();
        SgdState { params, velocity: vec![0.0; p], momentum, lr }
    }
}

/// `v <- momentum v + g; params <- params − lr v`.
pub fn sgd_step(state: &mut SgdState, grad: &[f64]) -> Result<(), OptimError> {
    if grad.len() != state.params.len() {
        return Err(OptimError::Length { got: grad.len(), want: state.params.len() });
    }
    for j in 0..state.params.len() {
        state.velocity[j] = state.momentum * state.velocity[j] + grad[j];
        state.params[j] -= state.lr * state.velocity[j];
    }
    Ok(())
}

/// Reduce-on-plateau schedule: multiply the rate by `gamma` once the
/// validation loss has not improved by at least `min_delta` for `patience`
/// consecutive observations; the counter resets after each reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub gamma: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, gamma: f64, patience: usize, min_delta: f64) -> Self {
        PlateauScheduler { lr, gamma, patience, min_delta, best: f64::INFINITY, since_improvement: 0 }
    }

    /// Record one validation loss; returns true when the rate was reduced.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.since_improvement = 0;
            return false;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.patience {
            self.lr *= self.gamma;
            self.since_improvement = 0;
            return true;
        }
        false
    }
}

/// Replay a validation-loss trace through a fresh scheduler and return the
/// final learning rate.
pub fn lr_schedule(losses: &[f64], lr: f64, gamma: f64, patience: usize, min_delta: f64) -> f64 {
    let mut sched = PlateauScheduler::new(lr, gamma, patience, min_delta);
    for &l in losses {
        sched.observe(l);
    }
    sched.lr
}
