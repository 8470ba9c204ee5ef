//! Run configuration: profile defaults, TOML file layering, flag overrides
//! and the fingerprint that tags every artifact.

use std::path::Path;

use acppo::gait::{BcConfig, GaitConfig};
use acppo::policy::{EncoderSpec, PolicySpec};
use acppo::sim::quad::QuadGeometry;
use acppo::sim::SimConfig;
use acppo::train::{AlgoVariant, PidGains, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 500-gait pool, 50 training episodes, MLP policy.
    #[default]
    Smoke,
    /// 5000-gait pool, 400 training episodes, attention policy.
    Full,
}

/// Network shape; the feature scaling and action scale come from the
/// simulator section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub window: usize,
    pub encoder: EncoderSpec,
    pub head_hidden: Vec<usize>,
    pub share_value_encoder: bool,
    pub log_std_bounds: [f64; 2],
    pub init_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            window: 8,
            encoder: EncoderSpec::Mlp { hidden: vec![64] },
            head_hidden: vec![32],
            share_value_encoder: false,
            log_std_bounds: [-4.0, 1.0],
            init_log_std: -0.5,
        }
    }
}

impl PolicyConfig {
    pub fn transformer() -> Self {
        let spec = PolicySpec::transformer(&SimConfig::default());
        Self {
            window: spec.window,
            encoder: spec.encoder,
            head_hidden: spec.head_hidden,
            share_value_encoder: spec.share_value_encoder,
            log_std_bounds: spec.log_std_bounds,
            init_log_std: spec.init_log_std,
        }
    }

    pub fn spec(&self, sim: &SimConfig) -> PolicySpec {
        PolicySpec {
            window: self.window,
            encoder: self.encoder.clone(),
            head_hidden: self.head_hidden.clone(),
            share_value_encoder: self.share_value_encoder,
            log_std_bounds: self.log_std_bounds,
            init_log_std: self.init_log_std,
            ..PolicySpec::mlp(sim, vec![1])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub rollouts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { rollouts: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub quad: QuadGeometry,
    /// Cycles replayed per deployment; the first is discarded.
    pub cycles: usize,
    /// Inference rollouts tried before giving up on cycle detection.
    pub max_attempts: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            quad: QuadGeometry::default(),
            cycles: 10,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub sim: SimConfig,
    pub gait: GaitConfig,
    pub policy: PolicyConfig,
    pub bc: BcConfig,
    pub train: TrainConfig,
    /// Training episodes per `train` invocation.
    pub episodes: usize,
    /// Episodes averaged for a run's final reward and cost in reports.
    pub final_window: usize,
    pub eval: EvalConfig,
    pub transfer: TransferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Smoke)
    }
}

/// Cost limit calibrated on the default simulator: 60% of the average
/// cost an unconstrained policy settles at.
pub const DEFAULT_COST_LIMIT: f64 = 0.037;

/// Anti-windup bound on the PID integral for multi-hundred-episode runs;
/// without it the multiplier keeps climbing long after the cost is met.
pub const DEFAULT_INTEGRAL_MAX: f64 = 0.2;

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut gait = GaitConfig {
            top_thrust_fraction: 0.01,
            ..GaitConfig::default()
        };
        let (policy, episodes) = match profile {
            Profile::Smoke => (PolicyConfig::default(), 50),
            Profile::Full => {
                gait.pool_size = 5000;
                (PolicyConfig::transformer(), 400)
            }
        };
        Self {
            profile,
            seed: 0,
            sim: SimConfig::default(),
            gait,
            policy,
            bc: BcConfig::default(),
            train: TrainConfig {
                cost_limit: Some(DEFAULT_COST_LIMIT),
                pid: PidGains {
                    integral_max: Some(DEFAULT_INTEGRAL_MAX),
                    ..PidGains::default()
                },
                ..TrainConfig::default()
            },
            episodes,
            final_window: 10,
            eval: EvalConfig::default(),
            transfer: TransferConfig::default(),
        }
    }

    /// Parses TOML layered over the defaults of the profile it names
    /// (or `profile`, when given, which wins over the file).
    pub fn from_toml(text: &str, profile: Option<Profile>) -> CliResult<Self> {
        let file: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let named = match file.get("profile") {
            Some(v) => Some(
                v.clone()
                    .try_into::<Profile>()
                    .map_err(|e| CliError::Config(format!("profile: {e}")))?,
            ),
            None => None,
        };
        let profile = profile.or(named).unwrap_or_default();
        let base = toml::Table::try_from(Self::for_profile(profile))
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut merged = toml::Value::Table(base);
        merge(&mut merged, toml::Value::Table(file));
        let mut cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.profile = profile;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> CliResult<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_toml(&text, profile)
            }
            None => Ok(Self::for_profile(profile.unwrap_or_default())),
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn policy_spec(&self) -> PolicySpec {
        self.policy.spec(&self.sim)
    }

    pub fn variant(&self) -> AlgoVariant {
        self.train.variant
    }

    pub fn validate(&self) -> CliResult<()> {
        self.sim.validate()?;
        self.policy_spec().validate()?;
        self.train.validate()?;
        if self.gait.pool_size == 0 {
            return Err(CliError::Config("gait.pool_size must be positive".into()));
        }
        if self.final_window == 0 || self.eval.rollouts == 0 {
            return Err(CliError::Config(
                "final_window and eval.rollouts must be positive".into(),
            ));
        }
        if self.transfer.max_attempts == 0 {
            return Err(CliError::Config(
                "transfer.max_attempts must be positive".into(),
            ));
        }
        Ok(())
    }

    /// sha256 of the canonical JSON of everything except the seed, so
    /// seeds of one configuration share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Overlays `top` onto `base`, recursing into tables.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}
