//! Actor surrogates: the step-wise clipped objective with the conditional
//! upper bound, the cycle-wise clipped geometric ratio, and their blend.
//!
//! Every loss returns its gradient with respect to the current log-probs
//! `log π_θ(a_t|s_t)`; the trainer chains that through the network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard against overflow in `exp(log π − log π_old)`.
pub const LOG_RATIO_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleClipMode {
    /// `min(ι, clip(ι, −ε_p, ε_p)·sign(A))` with `ι = log ρ · sign(A)`.
    #[default]
    Literal,
    /// `clip(log ρ, −ε_p, ε_p)`.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipSchedule {
    pub epsilon: f64,
    pub epsilon_hi: f64,
    pub epsilon_p: f64,
    pub ep_warm: u64,
    pub alpha: f64,
    pub cycle_clip: CycleClipMode,
}

impl Default for ClipSchedule {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            epsilon_hi: 0.28,
            epsilon_p: 0.4,
            ep_warm: 10,
            alpha: 0.2,
            cycle_clip: CycleClipMode::Literal,
        }
    }
}

impl ClipSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon > 0.0
            && self.epsilon <= self.epsilon_hi
            && self.epsilon_p > 0.0
            && self.alpha > 0.0
            && self.alpha <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid clip schedule {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlgoVariant {
    AcppoPid,
    CppoPid,
    CppoPidH,
    PpoPenalty,
    PpoNoCost,
    AcppoNoCycle,
    AcppoNoAsym,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClipRule {
    /// `ε_hi` only on safe positive-advantage steps after warm-up.
    Conditional,
    Symmetric,
    /// `[1 − ε, 1 + ε_hi]` on every step.
    FixedHigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiplierRule {
    Pid,
    /// λ stays at its initial value.
    Frozen,
    /// λ ≡ 0 and the cost channel never reaches the actor.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantRules {
    pub clip: ClipRule,
    /// Whether the cycle surrogate is blended in (with weight `1 − α`).
    pub cycle: bool,
    pub multiplier: MultiplierRule,
    /// `r ← r − κ·c` before advantage estimation.
    pub reward_penalty: Option<f64>,
}

impl AlgoVariant {
    pub const ALL: [AlgoVariant; 7] = [
        AlgoVariant::AcppoPid,
        AlgoVariant::CppoPid,
        AlgoVariant::CppoPidH,
        AlgoVariant::PpoPenalty,
        AlgoVariant::PpoNoCost,
        AlgoVariant::AcppoNoCycle,
        AlgoVariant::AcppoNoAsym,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgoVariant::AcppoPid => "ACPPO_PID",
            AlgoVariant::CppoPid => "CPPO_PID",
            AlgoVariant::CppoPidH => "CPPO_PID_H",
            AlgoVariant::PpoPenalty => "PPO_PENALTY",
            AlgoVariant::PpoNoCost => "PPO_NO_COST",
            AlgoVariant::AcppoNoCycle => "ACPPO_NO_CYCLE",
            AlgoVariant::AcppoNoAsym => "ACPPO_NO_ASYM",
        }
    }

    pub fn rules(self) -> VariantRules {
        use ClipRule::*;
        use MultiplierRule::*;
        let (clip, cycle, multiplier, reward_penalty) = match self {
            AlgoVariant::AcppoPid => (Conditional, true, Pid, None),
            AlgoVariant::CppoPid => (Symmetric, false, Pid, None),
            AlgoVariant::CppoPidH => (FixedHigh, false, Pid, None),
            AlgoVariant::PpoPenalty => (Symmetric, false, Frozen, Some(0.5)),
            AlgoVariant::PpoNoCost => (Symmetric, false, Off, None),
            AlgoVariant::AcppoNoCycle => (Conditional, false, Pid, None),
            AlgoVariant::AcppoNoAsym => (Symmetric, true, Pid, None),
        };
        VariantRules {
            clip,
            cycle,
            multiplier,
            reward_penalty,
        }
    }

    /// Whether a cost limit is needed to run this variant.
    pub fn is_constrained(self) -> bool {
        self.rules().multiplier == MultiplierRule::Pid
    }
}

impl std::fmt::Display for AlgoVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AlgoVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        AlgoVariant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

/// Upper clip width for one step.
pub fn asym_clip_bound(a_r: f64, a_c: f64, episode: u64, sched: &ClipSchedule) -> f64 {
    if a_r > 0.0 && a_c <= 0.0 && episode >= sched.ep_warm {
        sched.epsilon_hi
    } else {
        sched.epsilon
    }
}

/// Per-step upper clip width under a variant's clip rule.
pub fn upper_bound(rule: ClipRule, a_r: f64, a_c: f64, episode: u64, sched: &ClipSchedule) -> f64 {
    match rule {
        ClipRule::Conditional => asym_clip_bound(a_r, a_c, episode, sched),
        ClipRule::Symmetric => sched.epsilon,
        ClipRule::FixedHigh => sched.epsilon_hi,
    }
}

pub fn clamped_log_ratio(logp: f64, logp_old: f64) -> f64 {
    (logp - logp_old).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
}

/// Value and gradient of a loss over a set of steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossGrad {
    pub loss: f64,
    /// `∂loss/∂ log π_θ(a_t|s_t)` per step.
    pub dlogp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepSurrogate {
    pub value: LossGrad,
    /// Fraction of steps whose clipped branch is active.
    pub clip_fraction: f64,
}

/// `−mean_t min(ρ_t A_t, clip(ρ_t, 1 − ε, 1 + ε_t⁺) A_t)`.
pub fn step_surrogate(
    logp: &[f64],
    logp_old: &[f64],
    adv: &[f64],
    eps_plus: &[f64],
    epsilon: f64,
) -> Result<StepSurrogate> {
    let n = logp.len();
    for (len, what) in [(logp_old.len(), n), (adv.len(), n), (eps_plus.len(), n)] {
        if len != what {
            return Err(Error::LengthMismatch {
                expected: what,
                got: len,
            });
        }
    }
    if n == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut dlogp = vec![0.0; n];
    let mut clipped = 0usize;
    for t in 0..n {
        let raw = logp[t] - logp_old[t];
        let lr = clamped_log_ratio(logp[t], logp_old[t]);
        let rho = lr.exp();
        let a = adv[t];
        let unclipped = rho * a;
        let clipped_obj = rho.clamp(1.0 - epsilon, 1.0 + eps_plus[t]) * a;
        if unclipped <= clipped_obj {
            loss -= unclipped;
            if raw.abs() < LOG_RATIO_CLAMP {
                dlogp[t] = -rho * a * inv_n;
            }
        } else {
            loss -= clipped_obj;
            clipped += 1;
        }
    }
    Ok(StepSurrogate {
        value: LossGrad {
            loss: loss * inv_n,
            dlogp,
        },
        clip_fraction: clipped as f64 * inv_n,
    })
}

#[inline]
fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Clipped geometric-mean ratio of one cycle and `∂ρ̃/∂ log ρ_t`.
///
/// In literal mode the inner `min` has a kink where both branches meet; the
/// clipped branch's slope is taken there, so at `ρ ≡ 1` every step moves
/// `ρ̃` with slope `1/H`.
pub fn cycle_aggregate(
    log_ratios: &[f64],
    adv: &[f64],
    epsilon_p: f64,
    mode: CycleClipMode,
) -> Result<(f64, Vec<f64>)> {
    let h = log_ratios.len();
    if h == 0 {
        return Err(Error::EmptyTrajectory);
    }
    if adv.len() != h {
        return Err(Error::LengthMismatch {
            expected: h,
            got: adv.len(),
        });
    }
    let mut sum = 0.0;
    let mut slope = vec![0.0; h];
    for t in 0..h {
        let l = log_ratios[t];
        let inside = l.abs() < epsilon_p;
        match mode {
            CycleClipMode::Literal => {
                let s = sign(adv[t]);
                let iota = l * s;
                let clipped = iota.clamp(-epsilon_p, epsilon_p) * s;
                if iota < clipped {
                    sum += iota;
                    slope[t] = s;
                } else {
                    sum += clipped;
                    slope[t] = if inside { 1.0 } else { 0.0 };
                }
            }
            CycleClipMode::Symmetric => {
                sum += l.clamp(-epsilon_p, epsilon_p);
                slope[t] = if inside { 1.0 } else { 0.0 };
            }
        }
    }
    let rho = (sum / h as f64).exp();
    let grads = slope.into_iter().map(|s| rho * s / h as f64).collect();
    Ok((rho, grads))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CycleSurrogate {
    /// Gradient is indexed like the input steps; out-of-cycle steps get 0.
    pub value: LossGrad,
    pub rho_tilde: Vec<f64>,
    /// Number of in-cycle steps averaged over.
    pub steps: usize,
}

/// `−mean_{t ∈ cycles} ρ̃_p A_t`. `cycles` index into the step arrays; an
/// empty list yields `None` (caller falls back to the step loss).
pub fn cycle_surrogate(
    logp: &[f64],
    logp_old: &[f64],
    adv: &[f64],
    cycles: &[std::ops::Range<usize>],
    epsilon_p: f64,
    mode: CycleClipMode,
) -> Result<Option<CycleSurrogate>> {
    let n = logp.len();
    if logp_old.len() != n || adv.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: logp_old.len().min(adv.len()),
        });
    }
    let steps: usize = cycles.iter().map(|c| c.len()).sum();
    if steps == 0 {
        return Ok(None);
    }
    let inv = 1.0 / steps as f64;
    let mut loss = 0.0;
    let mut dlogp = vec![0.0; n];
    let mut rho_tilde = Vec::with_capacity(cycles.len());
    for c in cycles {
        if c.end > n {
            return Err(Error::InvalidArgument(format!(
                "cycle {c:?} beyond {n} steps"
            )));
        }
        let lr: Vec<f64> = c
            .clone()
            .map(|t| clamped_log_ratio(logp[t], logp_old[t]))
            .collect();
        let (rho, grads) = cycle_aggregate(&lr, &adv[c.clone()], epsilon_p, mode)?;
        let a_sum: f64 = adv[c.clone()].iter().sum();
        loss -= rho * a_sum;
        for (k, t) in c.clone().enumerate() {
            if (logp[t] - logp_old[t]).abs() < LOG_RATIO_CLAMP {
                dlogp[t] = -a_sum * grads[k] * inv;
            }
        }
        rho_tilde.push(rho);
    }
    Ok(Some(CycleSurrogate {
        value: LossGrad {
            loss: loss * inv,
            dlogp,
        },
        rho_tilde,
        steps,
    }))
}

/// `α·L_step + (1 − α)·L_cyc`, or the step loss alone without cycles.
pub fn actor_loss(step: &LossGrad, cycle: Option<&LossGrad>, alpha: f64) -> LossGrad {
    match cycle {
        None => step.clone(),
        Some(c) => LossGrad {
            loss: alpha * step.loss + (1.0 - alpha) * c.loss,
            dlogp: step
                .dlogp
                .iter()
                .zip(&c.dlogp)
                .map(|(s, c)| alpha * s + (1.0 - alpha) * c)
                .collect(),
        },
    }
}
