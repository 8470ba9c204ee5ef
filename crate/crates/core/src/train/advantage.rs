//! Generalized advantage estimation on the reward and cost channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub a_r: Vec<f64>,
    pub a_c: Vec<f64>,
    pub a_r_norm: Vec<f64>,
    pub a_c_norm: Vec<f64>,
    /// `Ā_r − λ Ā_c`.
    pub a_lambda: Vec<f64>,
    pub ret_r: Vec<f64>,
    pub ret_c: Vec<f64>,
}

/// GAE over one episode. `values` has one more entry than `rewards`: the
/// last is the bootstrap value of the state after the final step.
/// `terminal` zeroes that bootstrap. Returns `(advantages, returns)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    terminal: bool,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(Error::LengthMismatch {
            expected: n + 1,
            got: values.len(),
        });
    }
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 == n && terminal {
            0.0
        } else {
            values[t + 1]
        };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Standardizes with the population std and then clamps to `±clamp`.
/// A constant input maps to zeros.
pub fn normalize(x: &[f64], clamp: f64) -> Vec<f64> {
    let n = x.len() as f64;
    if x.is_empty() {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 1e-12) {
        return vec![0.0; x.len()];
    }
    x.iter()
        .map(|v| ((v - mean) / std).clamp(-clamp, clamp))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaeConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clamp: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clamp: 10.0,
        }
    }
}

/// Independent GAE on both channels, batch normalization, and the
/// Lagrangian advantage with multiplier `lagrange`.
pub fn dual_gae(
    rewards: &[f64],
    costs: &[f64],
    v_r: &[f64],
    v_c: &[f64],
    terminal: bool,
    cfg: &GaeConfig,
    lagrange: f64,
) -> Result<AdvantageSet> {
    if rewards.len() != costs.len() {
        return Err(Error::LengthMismatch {
            expected: rewards.len(),
            got: costs.len(),
        });
    }
    let (a_r, ret_r) = gae(rewards, v_r, terminal, cfg.gamma, cfg.lambda)?;
    let (a_c, ret_c) = gae(costs, v_c, terminal, cfg.gamma, cfg.lambda)?;
    let a_r_norm = normalize(&a_r, cfg.clamp);
    let a_c_norm = normalize(&a_c, cfg.clamp);
    let a_lambda = a_r_norm
        .iter()
        .zip(&a_c_norm)
        .map(|(r, c)| r - lagrange * c)
        .collect();
    Ok(AdvantageSet {
        a_r,
        a_c,
        a_r_norm,
        a_c_norm,
        a_lambda,
        ret_r,
        ret_c,
    })
}
