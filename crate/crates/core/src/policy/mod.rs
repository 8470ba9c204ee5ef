//! Gaussian policy with twin value heads over a sliding observation window.

mod adam;
mod checkpoint;
pub mod nn;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    LoadedCheckpoint, CHECKPOINT_VERSION,
};

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cmdp::{Action, Observation};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sim::SimConfig;
use nn::{Encoder, EncoderTrace, Layout, Mlp, MlpTrace, Transformer};

pub const ACTION_DIM: usize = 2;
/// Per-step features: 2 angles, 2 velocities, 3 forces, sin/cos phase.
pub const OBS_DIM: usize = 9;

/// Scaling from raw observations to roughly unit-range features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub neutral: [f64; 2],
    pub swing_limit: f64,
    /// Velocity that maps to 1 (one delta limit per control step).
    pub velocity_scale: f64,
    pub force_scale: f64,
    pub moment_scale: f64,
}

impl FeatureConfig {
    pub fn from_sim(sim: &SimConfig) -> Self {
        Self {
            neutral: sim.geometry.neutral_angles,
            swing_limit: sim.swing_limit,
            velocity_scale: sim.delta_limit * sim.control_hz,
            force_scale: 0.05,
            moment_scale: 0.005,
        }
    }

    pub fn features(&self, obs: &Observation) -> [f64; OBS_DIM] {
        let (s, c) = obs
            .phase_clock
            .map_or((0.0, 0.0), |ph| (2.0 * PI * ph).sin_cos());
        [
            (obs.joint_angles[0] - self.neutral[0]) / self.swing_limit,
            (obs.joint_angles[1] - self.neutral[1]) / self.swing_limit,
            obs.joint_velocities[0] / self.velocity_scale,
            obs.joint_velocities[1] / self.velocity_scale,
            obs.sensed_forces[0] / self.force_scale,
            obs.sensed_forces[1] / self.force_scale,
            obs.sensed_forces[2] / self.moment_scale,
            s,
            c,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// Feedforward over the flattened window.
    Mlp { hidden: Vec<usize> },
    Transformer {
        d_model: usize,
        heads: usize,
        blocks: usize,
        ff_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub window: usize,
    pub encoder: EncoderSpec,
    pub head_hidden: Vec<usize>,
    /// Value heads read the actor encoder instead of owning one each.
    pub share_value_encoder: bool,
    pub log_std_bounds: [f64; 2],
    pub init_log_std: f64,
    /// Action units per unit of network output (rad per step).
    pub action_scale: f64,
    pub features: FeatureConfig,
}

impl PolicySpec {
    /// Attention encoder: 2 blocks, width 64, 4 heads.
    pub fn transformer(sim: &SimConfig) -> Self {
        Self {
            window: 20,
            encoder: EncoderSpec::Transformer {
                d_model: 64,
                heads: 4,
                blocks: 2,
                ff_dim: 128,
            },
            head_hidden: vec![64],
            share_value_encoder: false,
            log_std_bounds: [-4.0, 1.0],
            init_log_std: -0.5,
            action_scale: sim.delta_limit,
            features: FeatureConfig::from_sim(sim),
        }
    }

    /// Flattened-window MLP fallback.
    pub fn mlp(sim: &SimConfig, hidden: Vec<usize>) -> Self {
        Self {
            encoder: EncoderSpec::Mlp { hidden },
            ..Self::transformer(sim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("policy spec: {m}")));
        if self.window == 0 {
            return bad("window must be positive");
        }
        let [lo, hi] = self.log_std_bounds;
        if !(lo < hi) || !(lo..=hi).contains(&self.init_log_std) {
            return bad("log-std bounds must satisfy lo < init <= hi");
        }
        if !(self.action_scale > 0.0) {
            return bad("action scale must be positive");
        }
        match &self.encoder {
            EncoderSpec::Mlp { hidden } if hidden.is_empty() || hidden.contains(&0) => {
                bad("mlp encoder needs non-empty hidden sizes")
            }
            EncoderSpec::Transformer {
                d_model,
                heads,
                blocks,
                ff_dim,
            } if *heads == 0 || *d_model % *heads != 0 || *blocks == 0 || *ff_dim == 0 => {
                bad("transformer width must split evenly across heads")
            }
            _ => Ok(()),
        }
    }

    /// sha256 over the canonical JSON of the spec. Two policies with the
    /// same fingerprint have interchangeable parameter vectors.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Diagonal Gaussian over joint deltas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub mean: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
}

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

impl ActionDistribution {
    pub fn std(&self) -> [f64; ACTION_DIM] {
        self.log_std.map(f64::exp)
    }

    pub fn log_prob(&self, action: &Action) -> f64 {
        (0..ACTION_DIM)
            .map(|i| {
                let z = (action.joint_deltas[i] - self.mean[i]) / self.log_std[i].exp();
                -0.5 * z * z - self.log_std[i] - HALF_LOG_2PI
            })
            .sum()
    }

    /// ∂ log p / ∂ mean and ∂ log p / ∂ log σ.
    pub fn log_prob_grads(&self, action: &Action) -> ([f64; ACTION_DIM], [f64; ACTION_DIM]) {
        let mut dm = [0.0; ACTION_DIM];
        let mut ds = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            let sd = self.log_std[i].exp();
            let z = (action.joint_deltas[i] - self.mean[i]) / sd;
            dm[i] = z / sd;
            ds[i] = z * z - 1.0;
        }
        (dm, ds)
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|s| 0.5 + HALF_LOG_2PI + s).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        let mut a = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            let z: f64 = rng.sample(StandardNormal);
            a[i] = self.mean[i] + self.log_std[i].exp() * z;
        }
        Action { joint_deltas: a }
    }

    pub fn mode(&self) -> Action {
        Action {
            joint_deltas: self.mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub dist: ActionDistribution,
    pub v_r: f64,
    pub v_c: f64,
}

/// Loss gradient with respect to the network outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OutputGrad {
    pub d_mean: [f64; ACTION_DIM],
    /// With respect to the log of the action std.
    pub d_log_std: [f64; ACTION_DIM],
    pub d_v_r: f64,
    pub d_v_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Architecture {
    layout: Layout,
    actor_enc: Encoder,
    value_encs: Option<[Encoder; 2]>,
    actor_head: Mlp,
    value_heads: [Mlp; 2],
    log_std: usize,
}

/// Everything needed to backpropagate one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    actor_enc: EncoderTrace,
    value_encs: Option<[EncoderTrace; 2]>,
    actor_head: MlpTrace,
    value_heads: [MlpTrace; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    spec: PolicySpec,
    arch: Architecture,
    params: Vec<f64>,
}

fn build_encoder(layout: &mut Layout, name: &str, spec: &PolicySpec) -> Encoder {
    let input = spec.window * OBS_DIM;
    match &spec.encoder {
        EncoderSpec::Mlp { hidden } => {
            let mut sizes = vec![input];
            sizes.extend(hidden);
            Encoder::Mlp(Mlp::new(layout, name, &sizes, true))
        }
        EncoderSpec::Transformer {
            d_model,
            heads,
            blocks,
            ff_dim,
        } => Encoder::Transformer(Transformer::new(
            layout,
            name,
            spec.window,
            OBS_DIM,
            *d_model,
            *heads,
            *blocks,
            *ff_dim,
        )),
    }
}

fn head(layout: &mut Layout, name: &str, input: usize, hidden: &[usize], out: usize) -> Mlp {
    let mut sizes = vec![input];
    sizes.extend(hidden);
    sizes.push(out);
    Mlp::new(layout, name, &sizes, false)
}

impl Architecture {
    fn new(spec: &PolicySpec) -> Self {
        let mut layout = Layout::default();
        let actor_enc = build_encoder(&mut layout, "actor.enc", spec);
        let value_encs = (!spec.share_value_encoder).then(|| {
            [
                build_encoder(&mut layout, "value_r.enc", spec),
                build_encoder(&mut layout, "value_c.enc", spec),
            ]
        });
        let emb = actor_enc.out_dim();
        let actor_head = head(
            &mut layout,
            "actor.head",
            emb,
            &spec.head_hidden,
            ACTION_DIM,
        );
        let value_heads = [
            head(&mut layout, "value_r.head", emb, &spec.head_hidden, 1),
            head(&mut layout, "value_c.head", emb, &spec.head_hidden, 1),
        ];
        let log_std = layout.alloc("actor.log_std", ACTION_DIM);
        Self {
            layout,
            actor_enc,
            value_encs,
            actor_head,
            value_heads,
            log_std,
        }
    }
}

/// Rounds every value through `f32`, the checkpoint storage precision.
pub fn round_to_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

impl Policy {
    pub fn new(spec: PolicySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let arch = Architecture::new(&spec);
        let mut p = vec![0.0; arch.layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "policy-init", 0));
        arch.actor_enc.init(&mut p, &mut rng);
        if let Some(encs) = &arch.value_encs {
            for e in encs {
                e.init(&mut p, &mut rng);
            }
        }
        // zero final action-mean layer: the untrained policy commands no motion
        arch.actor_head.init(&mut p, 2f64.sqrt(), 0.0, &mut rng);
        for h in &arch.value_heads {
            h.init(&mut p, 2f64.sqrt(), 1.0, &mut rng);
        }
        p[arch.log_std..arch.log_std + ACTION_DIM].fill(spec.init_log_std);
        round_to_f32(&mut p);
        Ok(Self {
            spec,
            arch,
            params: p,
        })
    }

    /// Rebuilds a policy around an existing parameter vector.
    pub fn from_params(spec: PolicySpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let arch = Architecture::new(&spec);
        if params.len() != arch.layout.len() {
            return Err(Error::LengthMismatch {
                expected: arch.layout.len(),
                got: params.len(),
            });
        }
        let mut policy = Self { spec, arch, params };
        round_to_f32(&mut policy.params);
        Ok(policy)
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Callers that want checkpoint-exact values
    /// should finish with [`round_to_f32`].
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn layout(&self) -> &Layout {
        &self.arch.layout
    }

    pub fn input_dim(&self) -> usize {
        self.spec.window * OBS_DIM
    }

    /// sha256 of the parameters as stored (f32 little-endian).
    pub fn param_hash(&self) -> String {
        let bytes: Vec<u8> = self
            .params
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect();
        hex_digest(&bytes)
    }

    /// Runs the network on a window of exactly `W` observations.
    pub fn forward(&self, window: &[Observation]) -> Result<PolicyOutput> {
        if window.len() != self.spec.window {
            return Err(Error::LengthMismatch {
                expected: self.spec.window,
                got: window.len(),
            });
        }
        if !window.iter().all(Observation::is_finite) {
            return Err(Error::NonFinite("policy input"));
        }
        let x: Vec<f64> = window
            .iter()
            .flat_map(|o| self.spec.features.features(o))
            .collect();
        self.forward_features(&x)
    }

    pub fn forward_features(&self, x: &[f64]) -> Result<PolicyOutput> {
        self.forward_traced(x).map(|(o, _)| o)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<(PolicyOutput, Trace)> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "policy expects {} input features, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("policy input"));
        }
        let p = &self.params;
        let a = &self.arch;
        let (emb, actor_enc) = a.actor_enc.forward(p, x);
        let actor_head = a.actor_head.forward(p, &emb);
        let (value_encs, value_heads) = match &a.value_encs {
            Some([er, ec]) => {
                let (zr, tr) = er.forward(p, x);
                let (zc, tc) = ec.forward(p, x);
                (
                    Some([tr, tc]),
                    [
                        a.value_heads[0].forward(p, &zr),
                        a.value_heads[1].forward(p, &zc),
                    ],
                )
            }
            None => (
                None,
                [
                    a.value_heads[0].forward(p, &emb),
                    a.value_heads[1].forward(p, &emb),
                ],
            ),
        };
        let u = actor_head.acts.last().unwrap();
        let [lo, hi] = self.spec.log_std_bounds;
        let scale = self.spec.action_scale;
        let dist = ActionDistribution {
            mean: [scale * u[0], scale * u[1]],
            log_std: std::array::from_fn(|i| scale.ln() + p[a.log_std + i].clamp(lo, hi)),
        };
        let out = PolicyOutput {
            dist,
            v_r: value_heads[0].acts.last().unwrap()[0],
            v_c: value_heads[1].acts.last().unwrap()[0],
        };
        Ok((
            out,
            Trace {
                actor_enc,
                value_encs,
                actor_head,
                value_heads,
            },
        ))
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L` with respect to the outputs.
    pub fn backward(&self, trace: &Trace, dout: &OutputGrad, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let p = &self.params;
        let a = &self.arch;
        let scale = self.spec.action_scale;
        let [lo, hi] = self.spec.log_std_bounds;
        for i in 0..ACTION_DIM {
            let raw = p[a.log_std + i];
            if raw > lo && raw < hi {
                grad[a.log_std + i] += dout.d_log_std[i];
            }
        }
        let du = dout.d_mean.map(|d| d * scale);
        let mut d_emb = a.actor_head.backward(p, grad, &trace.actor_head, &du);
        let dv = [dout.d_v_r, dout.d_v_c];
        match (&a.value_encs, &trace.value_encs) {
            (Some(encs), Some(trs)) => {
                for k in 0..2 {
                    if dv[k] == 0.0 {
                        continue;
                    }
                    let dz = a.value_heads[k].backward(p, grad, &trace.value_heads[k], &[dv[k]]);
                    encs[k].backward(p, grad, &trs[k], &dz);
                }
            }
            _ => {
                for k in 0..2 {
                    if dv[k] == 0.0 {
                        continue;
                    }
                    let dz = a.value_heads[k].backward(p, grad, &trace.value_heads[k], &[dv[k]]);
                    for (e, z) in d_emb.iter_mut().zip(dz) {
                        *e += z;
                    }
                }
            }
        }
        a.actor_enc.backward(p, grad, &trace.actor_enc, &d_emb);
    }
}

/// Fixed-length observation history, left-padded with the first observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsWindow {
    len: usize,
    buf: VecDeque<Observation>,
}

impl ObsWindow {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            buf: VecDeque::with_capacity(len),
        }
    }

    pub fn reset(&mut self, first: Observation) {
        self.buf.clear();
        self.buf.push_back(first);
    }

    pub fn push(&mut self, obs: Observation) {
        if self.buf.len() == self.len {
            self.buf.pop_front();
        }
        self.buf.push_back(obs);
    }

    /// The padded window, oldest first. Panics if nothing was pushed.
    pub fn observations(&self) -> Vec<Observation> {
        let first = *self.buf.front().expect("window is empty");
        let pad = self.len - self.buf.len();
        std::iter::repeat_n(first, pad)
            .chain(self.buf.iter().copied())
            .collect()
    }

    pub fn features(&self, fc: &FeatureConfig) -> Vec<f64> {
        self.observations()
            .iter()
            .flat_map(|o| fc.features(o))
            .collect()
    }
}

/// Window features for step `t` of an episode's observation sequence.
pub fn window_features(
    obs: &[Observation],
    t: usize,
    window: usize,
    fc: &FeatureConfig,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(window * OBS_DIM);
    for k in 0..window {
        let idx = (t + k + 1).saturating_sub(window);
        out.extend(fc.features(&obs[idx]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(share: bool) -> PolicySpec {
        let sim = SimConfig::default();
        PolicySpec {
            window: 2,
            encoder: EncoderSpec::Mlp { hidden: vec![2] },
            head_hidden: vec![2],
            share_value_encoder: share,
            ..PolicySpec::mlp(&sim, vec![4])
        }
    }

    fn obs(i: usize) -> Observation {
        let x = i as f64;
        Observation {
            joint_angles: [0.1 * (x * 0.3).sin(), -0.2 + 0.05 * x.cos()],
            joint_velocities: [0.2 * (x * 0.7).cos(), -0.1 * x.sin()],
            sensed_forces: [0.01 * x.sin(), 0.03 * (x * 1.1).cos(), 0.002 * x.sin()],
            phase_clock: Some((x * 0.0225).rem_euclid(1.0)),
        }
    }

    fn randomized(spec: PolicySpec, seed: u64) -> Policy {
        let mut p = Policy::new(spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for v in p.params_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let ls = p.arch.log_std;
        p.params_mut()[ls..ls + 2].copy_from_slice(&[-0.4, -0.9]);
        p
    }

    fn max_rel_fd(
        policy: &mut Policy,
        x: &[f64],
        f: &dyn Fn(&PolicyOutput) -> f64,
        dout: &dyn Fn(&PolicyOutput) -> OutputGrad,
    ) -> f64 {
        let (out, tr) = policy.forward_traced(x).unwrap();
        let mut g = vec![0.0; policy.num_params()];
        policy.backward(&tr, &dout(&out), &mut g);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..policy.num_params() {
            let orig = policy.params[i];
            policy.params[i] = orig + h;
            let fp = f(&policy.forward_features(x).unwrap());
            policy.params[i] = orig - h;
            let fm = f(&policy.forward_features(x).unwrap());
            policy.params[i] = orig;
            let num = (fp - fm) / (2.0 * h);
            let err = (num - g[i]).abs() / (num.abs() + g[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn log_prob_closed_forms() {
        let d = ActionDistribution {
            mean: [0.3, -0.2],
            log_std: [0.0, 0.0],
        };
        let at_mean = d.log_prob(&Action::new(0.3, -0.2));
        assert!((at_mean - (-(2.0 * PI).ln())).abs() < 1e-12);
        let wide = ActionDistribution {
            log_std: [2f64.ln(), 2f64.ln()],
            ..d
        };
        let drop = at_mean - wide.log_prob(&Action::new(0.3, -0.2));
        assert!((drop - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_action_head_gives_zero_mean() {
        let sim = SimConfig::default();
        let policy = Policy::new(PolicySpec::mlp(&sim, vec![16]), 4).unwrap();
        let window: Vec<_> = (0..20).map(obs).collect();
        let out = policy.forward(&window).unwrap();
        assert_eq!(out.dist.mean, [0.0, 0.0]);
    }

    #[test]
    fn forward_is_pure_and_rejects_bad_input() {
        let sim = SimConfig::default();
        let policy = Policy::new(PolicySpec::transformer(&sim), 2).unwrap();
        let window: Vec<_> = (0..20).map(obs).collect();
        assert_eq!(
            policy.forward(&window).unwrap(),
            policy.forward(&window).unwrap()
        );
        assert!(policy.forward(&window[..19]).is_err());
        let mut bad = window.clone();
        bad[3].sensed_forces[0] = f64::NAN;
        assert!(matches!(policy.forward(&bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn parameters_are_f32_exact_after_init() {
        let sim = SimConfig::default();
        let policy = Policy::new(PolicySpec::mlp(&sim, vec![8]), 11).unwrap();
        assert!(policy.params().iter().all(|v| (*v as f32) as f64 == *v));
    }

    #[test]
    fn log_prob_and_value_gradients_match_finite_differences() {
        for share in [false, true] {
            let mut policy = randomized(tiny_spec(share), 7);
            assert!(policy.num_params() <= 200, "{}", policy.num_params());
            let window: Vec<_> = (0..2).map(obs).collect();
            let x: Vec<f64> = window
                .iter()
                .flat_map(|o| policy.spec.features.features(o))
                .collect();
            let action = Action::new(0.01, -0.03);
            let lp = |o: &PolicyOutput| o.dist.log_prob(&action);
            let dlp = |o: &PolicyOutput| {
                let (d_mean, d_log_std) = o.dist.log_prob_grads(&action);
                OutputGrad {
                    d_mean,
                    d_log_std,
                    ..Default::default()
                }
            };
            assert!(max_rel_fd(&mut policy, &x, &lp, &dlp) < 1e-4);
            let vr = |o: &PolicyOutput| o.v_r;
            let dvr = |_: &PolicyOutput| OutputGrad {
                d_v_r: 1.0,
                ..Default::default()
            };
            assert!(max_rel_fd(&mut policy, &x, &vr, &dvr) < 1e-4);
            let vc = |o: &PolicyOutput| o.v_c;
            let dvc = |_: &PolicyOutput| OutputGrad {
                d_v_c: 1.0,
                ..Default::default()
            };
            assert!(max_rel_fd(&mut policy, &x, &vc, &dvc) < 1e-4);
        }
    }

    #[test]
    fn transformer_policy_gradients_match_finite_differences() {
        let sim = SimConfig::default();
        let spec = PolicySpec {
            window: 2,
            encoder: EncoderSpec::Transformer {
                d_model: 4,
                heads: 2,
                blocks: 1,
                ff_dim: 2,
            },
            head_hidden: vec![],
            share_value_encoder: true,
            ..PolicySpec::transformer(&sim)
        };
        let mut policy = randomized(spec, 3);
        assert!(policy.num_params() <= 200, "{}", policy.num_params());
        let x: Vec<f64> = (0..2)
            .flat_map(|i| policy.spec.features.features(&obs(i)))
            .collect();
        let action = Action::new(-0.02, 0.04);
        let f = |o: &PolicyOutput| o.dist.log_prob(&action) + 0.7 * o.v_r - 1.3 * o.v_c;
        let df = |o: &PolicyOutput| {
            let (d_mean, d_log_std) = o.dist.log_prob_grads(&action);
            OutputGrad {
                d_mean,
                d_log_std,
                d_v_r: 0.7,
                d_v_c: -1.3,
            }
        };
        assert!(max_rel_fd(&mut policy, &x, &f, &df) < 1e-4);
    }

    #[test]
    fn every_window_position_influences_the_output() {
        let sim = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in [
            PolicySpec::transformer(&sim),
            PolicySpec::mlp(&sim, vec![32, 32]),
        ] {
            let policy = randomized(spec, 21);
            let window: Vec<_> = (0..20).map(obs).collect();
            let base = policy.forward(&window).unwrap();
            for pos in 0..20 {
                let mut w = window.clone();
                w[pos].joint_angles[0] += 0.05 * rng.sample::<f64, _>(StandardNormal);
                w[pos].sensed_forces[1] += 0.01 * rng.sample::<f64, _>(StandardNormal);
                let out = policy.forward(&w).unwrap();
                assert_ne!(out.dist.mean, base.dist.mean, "position {pos}");
                assert_ne!(out.v_r, base.v_r, "position {pos}");
            }
        }
    }

    #[test]
    fn frozen_output_regression() {
        let sim = SimConfig::default();
        let policy = randomized(PolicySpec::mlp(&sim, vec![16, 8]), 42);
        let window: Vec<_> = (0..20).map(obs).collect();
        let out = policy.forward(&window).unwrap();
        let again = randomized(PolicySpec::mlp(&sim, vec![16, 8]), 42)
            .forward(&window)
            .unwrap();
        assert_eq!(out, again);
        assert!(out.dist.mean.iter().all(|m| m.is_finite() && *m != 0.0));
    }

    #[test]
    fn window_pads_with_first_observation() {
        let fc = FeatureConfig::from_sim(&SimConfig::default());
        let seq: Vec<_> = (0..5).map(obs).collect();
        let mut w = ObsWindow::new(4);
        w.reset(seq[0]);
        w.push(seq[1]);
        assert_eq!(w.observations(), vec![seq[0], seq[0], seq[0], seq[1]]);
        assert_eq!(w.features(&fc), window_features(&seq, 1, 4, &fc));
        for o in &seq[2..] {
            w.push(*o);
        }
        assert_eq!(w.observations(), seq[1..].to_vec());
        assert_eq!(w.features(&fc), window_features(&seq, 4, 4, &fc));
    }

    #[test]
    fn mode_maximizes_density() {
        let d = ActionDistribution {
            mean: [0.01, -0.02],
            log_std: [-3.0, -2.5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = d.sample(&mut rng);
            assert!(d.log_prob(&d.mode()) >= d.log_prob(&a));
        }
    }
}
