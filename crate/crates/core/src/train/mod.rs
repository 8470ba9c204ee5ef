//! Constrained PPO trainer: rollout collection, cycle detection, dual
//! advantages, the variant-specific actor loss, and the PID multiplier.

mod advantage;
mod cycle;
mod lagrange;
mod surrogate;

pub use advantage::{dual_gae, gae, normalize, AdvantageSet, GaeConfig};
pub use cycle::{
    band_bins, cycle_length, detect_cycle, detrend_quadratic, even_floor, fallback_cycle_length,
    CycleConfig, CycleEstimate,
};
pub use lagrange::{pid_update, LagrangeState, PidGains};
pub use surrogate::{
    actor_loss, asym_clip_bound, clamped_log_ratio, cycle_aggregate, cycle_surrogate,
    step_surrogate, upper_bound, AlgoVariant, ClipRule, ClipSchedule, CycleClipMode,
    CycleSurrogate, LossGrad, MultiplierRule, StepSurrogate, VariantRules, LOG_RATIO_CLAMP,
};

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{Action, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::policy::{Adam, AdamConfig, ObsWindow, OutputGrad, Policy};
use crate::rng::{derive_seed, stream_rng};
use crate::sim::{LimbSim, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostEstimator {
    /// Mean per-step cost of the batch (the reported "average cost").
    #[default]
    Mean,
    /// Discounted cost-to-go from the first step.
    Discounted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: AlgoVariant,
    pub gae: GaeConfig,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Weight of each value head's squared error.
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: Option<f64>,
    pub adam: AdamConfig,
    pub clip: ClipSchedule,
    pub pid: PidGains,
    /// Required by the PID-controlled variants.
    pub cost_limit: Option<f64>,
    pub cost_estimator: CostEstimator,
    pub cycle: CycleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: AlgoVariant::AcppoPid,
            gae: GaeConfig::default(),
            epochs: 10,
            minibatch_size: 64,
            vf_coef: 0.5,
            ent_coef: 1e-3,
            max_grad_norm: Some(0.5),
            adam: AdamConfig::default(),
            clip: ClipSchedule::default(),
            pid: PidGains::default(),
            cost_limit: None,
            cost_estimator: CostEstimator::Mean,
            cycle: CycleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.clip.validate()?;
        if self.epochs == 0 && self.adam.lr != 0.0 || self.minibatch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and minibatch size must be positive".into(),
            ));
        }
        if self.variant.is_constrained() && self.cost_limit.is_none() {
            return Err(Error::InvalidArgument(format!(
                "variant {} needs a cost limit",
                self.variant
            )));
        }
        if let Some(d) = self.cost_limit {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "cost limit must be positive, got {d}"
                )));
            }
        }
        Ok(())
    }

    pub fn initial_lagrange(&self) -> LagrangeState {
        LagrangeState {
            lambda: 0.0,
            integral_sum: 0.0,
            prev_violation: 0.0,
            gains: self.pid,
            cost_limit: self.cost_limit.unwrap_or(f64::INFINITY),
        }
    }
}

/// One collected episode plus everything the update needs from collection time.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub trajectory: Trajectory,
    /// Flattened window features per step.
    pub features: Vec<Vec<f64>>,
    /// `n + 1` values: the last is the bootstrap after the final step.
    pub v_r: Vec<f64>,
    pub v_c: Vec<f64>,
    /// Episode ended in a true terminal state (no bootstrap).
    pub terminal: bool,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }
}

/// Runs one episode. With `rng = None` the mean action is used.
pub fn collect_episode(
    policy: &Policy,
    env: &mut LimbSim,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Batch> {
    let steps = env.config().episode_steps;
    let spec = policy.spec();
    let mut window = ObsWindow::new(spec.window);
    let mut obs = env.reset();
    window.reset(obs);
    let mut transitions = Vec::with_capacity(steps);
    let mut features = Vec::with_capacity(steps);
    let mut v_r = Vec::with_capacity(steps + 1);
    let mut v_c = Vec::with_capacity(steps + 1);
    for t in 0..steps {
        let x = window.features(&spec.features);
        let out = policy.forward_features(&x)?;
        let action = match rng.as_deref_mut() {
            Some(r) => out.dist.sample(r),
            None => out.dist.mode(),
        };
        let logp = out.dist.log_prob(&action);
        let step = env.step(&action)?;
        transitions.push(Transition {
            step_index: t,
            obs,
            action,
            reward: step.reward,
            cost: 0.0,
            logp_behavior: logp,
            done: t + 1 == steps,
            lift: step.lift,
        });
        features.push(x);
        v_r.push(out.v_r);
        v_c.push(out.v_c);
        obs = step.obs;
        window.push(obs);
    }
    let last = policy.forward_features(&window.features(&spec.features))?;
    v_r.push(last.v_r);
    v_c.push(last.v_c);
    Ok(Batch {
        trajectory: Trajectory::new(transitions),
        features,
        v_r,
        v_c,
        terminal: false,
    })
}

/// Cycle segmentation and advantages for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    pub adv: AdvantageSet,
    pub h: usize,
    pub f_star: Option<f64>,
    /// Detection failed and `h` came from the fallback.
    pub fallback: bool,
    pub lambda: f64,
}

/// Detects H on the lift channel (falling back to `last_h`), recomputes
/// costs in place, segments the trajectory, and runs dual GAE.
pub fn prepare_batch(
    batch: &mut Batch,
    cfg: &TrainConfig,
    lambda: f64,
    last_h: Option<usize>,
    f_s: f64,
) -> Result<PreparedBatch> {
    if batch.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let (h, f_star, fallback) = match detect_cycle(&batch.trajectory.lifts(), f_s, &cfg.cycle) {
        Ok(est) => (est.h, Some(est.f_star), false),
        Err(Error::NoDominantFrequency) | Err(Error::SignalTooShort { .. }) => {
            (fallback_cycle_length(f_s, last_h, &cfg.cycle), None, true)
        }
        Err(e) => return Err(e),
    };
    batch.trajectory.recompute_costs(h)?;
    batch.trajectory.set_cycle_length(h)?;
    let rules = cfg.variant.rules();
    let costs = batch.trajectory.costs();
    let rewards: Vec<f64> = match rules.reward_penalty {
        Some(k) => batch
            .trajectory
            .transitions
            .iter()
            .map(|t| t.reward - k * t.cost)
            .collect(),
        None => batch.trajectory.rewards(),
    };
    let lambda = match rules.multiplier {
        MultiplierRule::Off => 0.0,
        _ => lambda,
    };
    let adv = dual_gae(
        &rewards,
        &costs,
        &batch.v_r,
        &batch.v_c,
        batch.terminal,
        &cfg.gae,
        lambda,
    )?;
    Ok(PreparedBatch {
        adv,
        h,
        f_star,
        fallback,
        lambda,
    })
}

/// Minibatches made of whole cycles (plus the trailing partial chunk),
/// shuffled at chunk granularity. Each entry is the step indices and the
/// complete cycles as local ranges.
pub fn cycle_minibatches(
    cycle_segments: &[Range<usize>],
    n: usize,
    minibatch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<usize>, Vec<Range<usize>>)> {
    let mut chunks: Vec<(Range<usize>, bool)> =
        cycle_segments.iter().map(|c| (c.clone(), true)).collect();
    let covered = cycle_segments.last().map_or(0, |c| c.end);
    if covered < n {
        chunks.push((covered..n, false));
    }
    chunks.shuffle(rng);
    let mut out = Vec::new();
    let mut idx = Vec::new();
    let mut cycles = Vec::new();
    for (chunk, complete) in chunks {
        if complete {
            cycles.push(idx.len()..idx.len() + chunk.len());
        }
        idx.extend(chunk);
        if idx.len() >= minibatch_size {
            out.push((std::mem::take(&mut idx), std::mem::take(&mut cycles)));
        }
    }
    if !idx.is_empty() {
        out.push((idx, cycles));
    }
    out
}

/// The data one minibatch loss needs, gathered by step index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinibatchData {
    pub features: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub logp_old: Vec<f64>,
    /// Raw (unnormalized) advantages, used by the clip gate.
    pub a_r: Vec<f64>,
    pub a_c: Vec<f64>,
    pub a_lambda: Vec<f64>,
    pub ret_r: Vec<f64>,
    pub ret_c: Vec<f64>,
    /// Complete cycles, as ranges into this minibatch.
    pub cycles: Vec<Range<usize>>,
}

impl MinibatchData {
    pub fn gather(
        batch: &Batch,
        prep: &PreparedBatch,
        idx: &[usize],
        cycles: Vec<Range<usize>>,
    ) -> Self {
        let tr = &batch.trajectory.transitions;
        let a = &prep.adv;
        Self {
            features: idx.iter().map(|&i| batch.features[i].clone()).collect(),
            actions: idx.iter().map(|&i| tr[i].action).collect(),
            logp_old: idx.iter().map(|&i| tr[i].logp_behavior).collect(),
            a_r: idx.iter().map(|&i| a.a_r[i]).collect(),
            a_c: idx.iter().map(|&i| a.a_c[i]).collect(),
            a_lambda: idx.iter().map(|&i| a.a_lambda[i]).collect(),
            ret_r: idx.iter().map(|&i| a.ret_r[i]).collect(),
            ret_c: idx.iter().map(|&i| a.ret_c[i]).collect(),
            cycles,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Which loss terms to include, and how the actor loss is formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossContext {
    pub rules: VariantRules,
    pub sched: ClipSchedule,
    pub episode: u64,
    pub actor_coef: f64,
    pub vf_coef: [f64; 2],
    pub ent_coef: f64,
}

impl LossContext {
    pub fn new(cfg: &TrainConfig, episode: u64) -> Self {
        Self {
            rules: cfg.variant.rules(),
            sched: cfg.clip,
            episode,
            actor_coef: 1.0,
            vf_coef: [cfg.vf_coef; 2],
            ent_coef: cfg.ent_coef,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub actor: f64,
    pub step: f64,
    /// `None` when the minibatch held no complete cycle or the variant has no cycle term.
    pub cycle: Option<f64>,
    pub value_r: f64,
    pub value_c: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Fraction of steps granted the enlarged upper bound.
    pub asym_fraction: f64,
}

/// Loss of one minibatch and its gradient with respect to all parameters.
pub fn minibatch_loss(
    policy: &Policy,
    data: &MinibatchData,
    ctx: &LossContext,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let mut outs = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    for x in &data.features {
        let (o, t) = policy.forward_traced(x)?;
        outs.push(o);
        traces.push(t);
    }
    let logp: Vec<f64> = outs
        .iter()
        .zip(&data.actions)
        .map(|(o, a)| o.dist.log_prob(a))
        .collect();
    let eps_plus: Vec<f64> = (0..n)
        .map(|t| {
            upper_bound(
                ctx.rules.clip,
                data.a_r[t],
                data.a_c[t],
                ctx.episode,
                &ctx.sched,
            )
        })
        .collect();
    let asym_fraction =
        eps_plus.iter().filter(|e| **e > ctx.sched.epsilon).count() as f64 / n as f64;
    let step = step_surrogate(
        &logp,
        &data.logp_old,
        &data.a_lambda,
        &eps_plus,
        ctx.sched.epsilon,
    )?;
    let cyc = if ctx.rules.cycle {
        cycle_surrogate(
            &logp,
            &data.logp_old,
            &data.a_lambda,
            &data.cycles,
            ctx.sched.epsilon_p,
            ctx.sched.cycle_clip,
        )?
    } else {
        None
    };
    let actor = actor_loss(&step.value, cyc.as_ref().map(|c| &c.value), ctx.sched.alpha);

    let inv_n = 1.0 / n as f64;
    let mut value_r = 0.0;
    let mut value_c = 0.0;
    let mut entropy = 0.0;
    for (t, o) in outs.iter().enumerate() {
        value_r += 0.5 * (o.v_r - data.ret_r[t]).powi(2) * inv_n;
        value_c += 0.5 * (o.v_c - data.ret_c[t]).powi(2) * inv_n;
        entropy += o.dist.entropy() * inv_n;
    }
    let total = ctx.actor_coef * actor.loss + ctx.vf_coef[0] * value_r + ctx.vf_coef[1] * value_c
        - ctx.ent_coef * entropy;

    let mut grad = vec![0.0; policy.num_params()];
    for t in 0..n {
        let o = &outs[t];
        let (dm, ds) = o.dist.log_prob_grads(&data.actions[t]);
        let w = ctx.actor_coef * actor.dlogp[t];
        let dout = OutputGrad {
            d_mean: [w * dm[0], w * dm[1]],
            d_log_std: [
                w * ds[0] - ctx.ent_coef * inv_n,
                w * ds[1] - ctx.ent_coef * inv_n,
            ],
            d_v_r: ctx.vf_coef[0] * (o.v_r - data.ret_r[t]) * inv_n,
            d_v_c: ctx.vf_coef[1] * (o.v_c - data.ret_c[t]) * inv_n,
        };
        policy.backward(&traces[t], &dout, &mut grad);
    }
    Ok((
        LossBreakdown {
            total,
            actor: actor.loss,
            step: step.value.loss,
            cycle: cyc.map(|c| c.value.loss),
            value_r,
            value_c,
            entropy,
            clip_fraction: step.clip_fraction,
            asym_fraction,
        },
        grad,
    ))
}

/// Scales `grad` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: Option<f64>) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if let Some(m) = max_norm {
        if norm > m {
            let s = m / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    /// Undiscounted episode reward (before any penalty shaping).
    pub reward: f64,
    /// Mean per-step lift non-cancellation cost.
    pub avg_cost: f64,
    pub discounted_cost: f64,
    /// Multiplier used in this update.
    pub lambda: f64,
    /// Multiplier after the PID step.
    pub lambda_next: f64,
    pub f_star: f64,
    pub h: usize,
    pub cycle_fallback: bool,
    pub l_step: f64,
    pub l_cyc: f64,
    pub l_actor: f64,
    pub v_loss_r: f64,
    pub v_loss_c: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub asym_fraction: f64,
    /// Mean F_x (N).
    pub mean_thrust: f64,
}

pub const METRICS_HEADER: [&str; 20] = [
    "episode",
    "variant",
    "reward",
    "avg_cost",
    "discounted_cost",
    "lambda",
    "lambda_next",
    "f_star",
    "H",
    "cycle_fallback",
    "L_step",
    "L_cyc",
    "L_actor",
    "v_loss_r",
    "v_loss_c",
    "entropy",
    "clip_fraction",
    "asym_fraction",
    "mean_thrust",
    "config_fp",
];

pub fn write_metrics_csv<W: std::io::Write>(
    out: W,
    variant: AlgoVariant,
    rows: &[EpisodeMetrics],
    config_fp: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for m in rows {
        w.write_record([
            m.episode.to_string(),
            variant.name().to_string(),
            m.reward.to_string(),
            m.avg_cost.to_string(),
            m.discounted_cost.to_string(),
            m.lambda.to_string(),
            m.lambda_next.to_string(),
            m.f_star.to_string(),
            m.h.to_string(),
            m.cycle_fallback.to_string(),
            m.l_step.to_string(),
            m.l_cyc.to_string(),
            m.l_actor.to_string(),
            m.v_loss_r.to_string(),
            m.v_loss_c.to_string(),
            m.entropy.to_string(),
            m.clip_fraction.to_string(),
            m.asym_fraction.to_string(),
            m.mean_thrust.to_string(),
            config_fp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back `(variant, metrics, config_fp)` rows.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(AlgoVariant, EpisodeMetrics, String)>> {
    let mut r = csv::Reader::from_path(path)?;
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(err(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| err(format!("column {}: {e}", METRICS_HEADER[i])))
        };
        let variant: AlgoVariant = rec[1].parse()?;
        let m = EpisodeMetrics {
            episode: f(0)? as u64,
            reward: f(2)?,
            avg_cost: f(3)?,
            discounted_cost: f(4)?,
            lambda: f(5)?,
            lambda_next: f(6)?,
            f_star: f(7)?,
            h: f(8)? as usize,
            cycle_fallback: &rec[9] == "true",
            l_step: f(10)?,
            l_cyc: f(11)?,
            l_actor: f(12)?,
            v_loss_r: f(13)?,
            v_loss_c: f(14)?,
            entropy: f(15)?,
            clip_fraction: f(16)?,
            asym_fraction: f(17)?,
            mean_thrust: f(18)?,
        };
        rows.push((variant, m, rec[19].to_string()));
    }
    Ok(rows)
}

/// Owns the policy, optimizer, multiplier and environment of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    policy: Policy,
    optimizer: Adam,
    lagrange: LagrangeState,
    env: LimbSim,
    action_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    episode: u64,
    last_h: Option<usize>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, sim: SimConfig, policy: Policy, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n = policy.num_params();
        Ok(Self {
            optimizer: Adam::new(cfg.adam, n),
            lagrange: cfg.initial_lagrange(),
            env: LimbSim::new(sim, derive_seed(seed, "train-env", 0))?,
            action_rng: stream_rng(seed, "train-action", 0),
            shuffle_rng: stream_rng(seed, "train-shuffle", 0),
            cfg,
            policy,
            episode: 0,
            last_h: None,
        })
    }

    /// Resumes optimizer and multiplier state (e.g. from a checkpoint).
    pub fn with_state(
        mut self,
        optimizer: Option<Adam>,
        lagrange: Option<LagrangeState>,
        episode: u64,
    ) -> Result<Self> {
        if let Some(mut opt) = optimizer {
            if opt.m.len() != self.policy.num_params() {
                return Err(Error::LengthMismatch {
                    expected: self.policy.num_params(),
                    got: opt.m.len(),
                });
            }
            opt.config = self.cfg.adam;
            self.optimizer = opt;
        }
        if let Some(mut l) = lagrange {
            l.gains = self.cfg.pid;
            l.cost_limit = self.cfg.cost_limit.unwrap_or(f64::INFINITY);
            self.lagrange = l;
        }
        self.episode = episode;
        Ok(self)
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn lagrange(&self) -> &LagrangeState {
        &self.lagrange
    }

    pub fn lagrange_mut(&mut self) -> &mut LagrangeState {
        &mut self.lagrange
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn into_parts(self) -> (Policy, Adam, LagrangeState) {
        (self.policy, self.optimizer, self.lagrange)
    }

    pub fn collect(&mut self) -> Result<Batch> {
        collect_episode(&self.policy, &mut self.env, Some(&mut self.action_rng))
    }

    /// Collect one episode, update, and step the multiplier.
    pub fn train_iteration(&mut self) -> Result<EpisodeMetrics> {
        let batch = self.collect()?;
        self.update(batch)
    }

    /// The update half of an iteration on an already-collected batch. On a
    /// non-finite loss or gradient the policy and optimizer are restored and
    /// `NumericalAbort` is returned.
    pub fn update(&mut self, mut batch: Batch) -> Result<EpisodeMetrics> {
        let f_s = self.env.config().control_hz;
        let prep = prepare_batch(
            &mut batch,
            &self.cfg,
            self.lagrange.lambda,
            self.last_h,
            f_s,
        )?;
        if !prep.fallback {
            self.last_h = Some(prep.h);
        }
        let ctx = LossContext::new(&self.cfg, self.episode);
        let snapshot = (self.policy.clone(), self.optimizer.clone());
        let mut sums = LossBreakdown::default();
        let mut cyc_sum = 0.0;
        let mut cyc_count = 0usize;
        let mut count = 0usize;
        let n = batch.len();
        for _ in 0..self.cfg.epochs {
            let mbs = cycle_minibatches(
                &batch.trajectory.cycle_segments,
                n,
                self.cfg.minibatch_size,
                &mut self.shuffle_rng,
            );
            for (idx, cycles) in mbs {
                let data = MinibatchData::gather(&batch, &prep, &idx, cycles);
                let (loss, mut grad) = minibatch_loss(&self.policy, &data, &ctx)?;
                if !loss.total.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                    (self.policy, self.optimizer) = snapshot;
                    return Err(Error::NumericalAbort(format!(
                        "non-finite loss at episode {}",
                        self.episode
                    )));
                }
                clip_grad_norm(&mut grad, self.cfg.max_grad_norm);
                self.optimizer.step(self.policy.params_mut(), &grad);
                sums.step += loss.step;
                sums.actor += loss.actor;
                sums.value_r += loss.value_r;
                sums.value_c += loss.value_c;
                sums.entropy += loss.entropy;
                sums.clip_fraction += loss.clip_fraction;
                sums.asym_fraction += loss.asym_fraction;
                if let Some(c) = loss.cycle {
                    cyc_sum += c;
                    cyc_count += 1;
                }
                count += 1;
            }
        }
        if !self.policy.params().iter().all(|p| p.is_finite()) {
            (self.policy, self.optimizer) = snapshot;
            return Err(Error::NumericalAbort(format!(
                "non-finite parameters at episode {}",
                self.episode
            )));
        }

        let traj = &batch.trajectory;
        let costs = traj.costs();
        let avg_cost = costs.iter().sum::<f64>() / n as f64;
        let gamma = self.cfg.gae.gamma;
        let discounted_cost = costs.iter().rev().fold(0.0, |acc, c| c + gamma * acc);
        let j_c = match self.cfg.cost_estimator {
            CostEstimator::Mean => avg_cost,
            CostEstimator::Discounted => discounted_cost,
        };
        let lambda_used = prep.lambda;
        if self.cfg.variant.rules().multiplier == MultiplierRule::Pid {
            self.lagrange = pid_update(&self.lagrange, j_c);
        }
        let c = count.max(1) as f64;
        let reward: f64 = traj.rewards().iter().sum();
        let scale = self.env.config().reward_scale;
        let metrics = EpisodeMetrics {
            episode: self.episode,
            reward,
            avg_cost,
            discounted_cost,
            lambda: lambda_used,
            lambda_next: self.lagrange.lambda,
            f_star: prep.f_star.unwrap_or(f64::NAN),
            h: prep.h,
            cycle_fallback: prep.fallback,
            l_step: sums.step / c,
            l_cyc: if cyc_count > 0 {
                cyc_sum / cyc_count as f64
            } else {
                0.0
            },
            l_actor: sums.actor / c,
            v_loss_r: sums.value_r / c,
            v_loss_c: sums.value_c / c,
            entropy: sums.entropy / c,
            clip_fraction: sums.clip_fraction / c,
            asym_fraction: sums.asym_fraction / c,
            mean_thrust: reward / scale / n as f64,
        };
        self.episode += 1;
        Ok(metrics)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRollout {
    pub reward: f64,
    pub avg_cost: f64,
    pub h: usize,
    pub mean_thrust: f64,
}

/// Mean-action rollouts, each in a fresh simulator with its own seed.
pub fn evaluate_policy(
    policy: &Policy,
    sim: &SimConfig,
    n_rollouts: usize,
    seed: u64,
    cycle: &CycleConfig,
) -> Result<Vec<EvalRollout>> {
    (0..n_rollouts)
        .map(|i| {
            let mut env = LimbSim::new(*sim, derive_seed(seed, "eval", i as u64))?;
            let batch = collect_episode(policy, &mut env, None)?;
            Ok(summarize_rollout(batch.trajectory, sim, cycle))
        })
        .collect()
}

/// Reward, cost (with the detected H) and thrust of one episode.
pub fn summarize_rollout(
    mut traj: Trajectory,
    sim: &SimConfig,
    cycle: &CycleConfig,
) -> EvalRollout {
    let f_s = sim.control_hz;
    let h = detect_cycle(&traj.lifts(), f_s, cycle)
        .map(|e| e.h)
        .unwrap_or_else(|_| fallback_cycle_length(f_s, None, cycle));
    traj.recompute_costs(h).expect("even cycle length");
    let n = traj.len().max(1) as f64;
    let reward: f64 = traj.rewards().iter().sum();
    EvalRollout {
        reward,
        avg_cost: traj.costs().iter().sum::<f64>() / n,
        h,
        mean_thrust: reward / sim.reward_scale / n,
    }
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
