use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    /// Clamp the integral to `[0, max]` when set (anti-windup).
    pub integral_max: Option<f64>,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            k_p: 0.5,
            k_i: 0.05,
            k_d: 0.1,
            integral_max: None,
        }
    }
}

/// Lagrange multiplier together with its PID controller memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub lambda: f64,
    pub integral_sum: f64,
    pub prev_violation: f64,
    pub gains: PidGains,
    pub cost_limit: f64,
}

impl LagrangeState {
    pub fn new(gains: PidGains, cost_limit: f64) -> Result<Self> {
        if !(cost_limit > 0.0) || !cost_limit.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cost limit must be positive, got {cost_limit}"
            )));
        }
        Ok(Self {
            lambda: 0.0,
            integral_sum: 0.0,
            prev_violation: 0.0,
            gains,
            cost_limit,
        })
    }
}

/// One PID step on the violation `g = Ĵ_C − d`:
/// `λ ← [λ + K_P g + K_I Σg + K_D (g − g_prev)]₊`.
pub fn pid_update(state: &LagrangeState, j_c_hat: f64) -> LagrangeState {
    let g = j_c_hat - state.cost_limit;
    let gains = state.gains;
    let mut integral = state.integral_sum + g;
    if let Some(max) = gains.integral_max {
        integral = integral.clamp(0.0, max);
    }
    let lambda = state.lambda
        + gains.k_p * g
        + gains.k_i * integral
        + gains.k_d * (g - state.prev_violation);
    LagrangeState {
        lambda: lambda.max(0.0),
        integral_sum: integral,
        prev_violation: g,
        ..*state
    }
}
