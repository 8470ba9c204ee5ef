//! Towed 2-DoF paddling limb.
//!
//! The limb is a serial thigh/shank chain hinged at the hip. Angles are
//! absolute in the sagittal plane: 0 points straight down and +π/2 trails
//! horizontally behind the hip (−x). The shank angle is `θ_H + θ_K`. The web
//! is a flat plate along the shank and feels a quasi-steady drag along its
//! normal, evaluated at a single web centre. The web opens when driven along
//! its normal and folds (reduced area) when the flow hits its back, like a
//! webbed foot. The carriage moves at `tow_speed` in +x, so the water streams
//! past the limb at −`tow_speed`.

pub mod kalman;
pub mod quad;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cmdp::{Action, Observation};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
pub use kalman::{filter_step, SensorFilter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimbGeometry {
    /// Thigh and shank lengths (m).
    pub link_lengths: [f64; 2],
    /// Web area (m²).
    pub web_area: f64,
    pub drag_coefficient: f64,
    /// kg/m³
    pub water_density: f64,
    /// Neutral HFE and KFE angles (rad) in the simulator frame.
    pub neutral_angles: [f64; 2],
    /// Web centre position along the shank (0 = knee, 1 = tip).
    pub web_center_fraction: f64,
    /// Area factor when the flow strikes the back of the web (1 = rigid plate).
    pub web_fold_ratio: f64,
}

impl Default for LimbGeometry {
    fn default() -> Self {
        Self {
            link_lengths: [0.10, 0.12],
            web_area: 0.004,
            drag_coefficient: 1.5,
            water_density: 1000.0,
            neutral_angles: [(-30f64).to_radians(), (-20f64).to_radians()],
            web_center_fraction: 1.0,
            web_fold_ratio: 0.2,
        }
    }
}

impl LimbGeometry {
    pub fn validate(&self) -> Result<()> {
        let positive = self.link_lengths.iter().all(|l| *l > 0.0)
            && self.web_area > 0.0
            && self.drag_coefficient > 0.0
            && self.water_density > 0.0
            && (0.0..=1.0).contains(&self.web_center_fraction)
            && self.web_fold_ratio > 0.0
            && self.web_fold_ratio <= 1.0;
        if !positive || !self.neutral_angles.iter().all(|a| a.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid limb geometry {self:?}"
            )));
        }
        Ok(())
    }

    /// ½ ρ C_d A
    fn drag_gain(&self) -> f64 {
        0.5 * self.water_density * self.drag_coefficient * self.web_area
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub force_q: f64,
    pub force_r: f64,
    pub moment_q: f64,
    pub moment_r: f64,
    pub initial_variance: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            force_q: 2.5e-4,
            force_r: 2.5e-3,
            moment_q: 2.5e-6,
            moment_r: 2.5e-5,
            initial_variance: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub geometry: LimbGeometry,
    /// m/s
    pub tow_speed: f64,
    /// Control (and sensor) rate, Hz.
    pub control_hz: f64,
    /// Maximum deviation of each joint from neutral (rad).
    pub swing_limit: f64,
    /// Maximum per-step joint change (rad).
    pub delta_limit: f64,
    /// Gaussian measurement noise σ on F_x, F_z (N).
    pub force_noise_std: f64,
    /// Gaussian measurement noise σ on M_y (N·m).
    pub moment_noise_std: f64,
    pub filter: FilterConfig,
    /// r_t = reward_scale · F_x
    pub reward_scale: f64,
    pub episode_steps: usize,
    /// Frequency of the phase clock exposed in observations; `None` disables it.
    pub phase_clock_hz: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: LimbGeometry::default(),
            tow_speed: 0.15,
            control_hz: 20.0,
            swing_limit: 20f64.to_radians(),
            delta_limit: 3f64.to_radians(),
            force_noise_std: 0.05,
            moment_noise_std: 0.005,
            filter: FilterConfig::default(),
            reward_scale: 1.0,
            episode_steps: 360,
            phase_clock_hz: Some(0.45),
        }
    }
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    pub fn noise_free(mut self) -> Self {
        self.force_noise_std = 0.0;
        self.moment_noise_std = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let ok = self.tow_speed >= 0.0
            && self.control_hz > 0.0
            && self.swing_limit > 0.0
            && self.delta_limit > 0.0
            && self.force_noise_std >= 0.0
            && self.moment_noise_std >= 0.0
            && self.filter.force_r > 0.0
            && self.filter.moment_r > 0.0
            && self.filter.force_q >= 0.0
            && self.filter.moment_q >= 0.0
            && self.episode_steps > 0
            && self.phase_clock_hz.is_none_or(|f| f > 0.0);
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid sim config {self:?}"
            )));
        }
        Ok(())
    }

    /// Clamps absolute joint angles into the swing window around neutral.
    pub fn clamp_angles(&self, theta: [f64; 2]) -> [f64; 2] {
        let n = self.geometry.neutral_angles;
        let s = self.swing_limit;
        [
            theta[0].clamp(n[0] - s, n[0] + s),
            theta[1].clamp(n[1] - s, n[1] + s),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimbState {
    pub theta: [f64; 2],
    pub omega: [f64; 2],
    pub tow_speed: f64,
    /// (F_x, F_z, M_y) as measured, before filtering.
    pub raw_forces: [f64; 3],
    pub filtered_forces: [f64; 3],
    pub sim_time: f64,
}

impl LimbState {
    pub fn at_rest(config: &SimConfig) -> Self {
        Self {
            theta: config.geometry.neutral_angles,
            omega: [0.0; 2],
            tow_speed: config.tow_speed,
            raw_forces: [0.0; 3],
            filtered_forces: [0.0; 3],
            sim_time: 0.0,
        }
    }
}

fn link_dir(angle: f64) -> [f64; 2] {
    [-angle.sin(), -angle.cos()]
}

/// d/dangle of `link_dir`; also the web normal for the shank.
fn link_dir_deriv(angle: f64) -> [f64; 2] {
    [-angle.cos(), angle.sin()]
}

/// Web centre position (x, z) relative to the hip.
pub fn web_center(geom: &LimbGeometry, theta: [f64; 2]) -> [f64; 2] {
    let [l1, l2] = geom.link_lengths;
    let (thigh, shank) = (link_dir(theta[0]), link_dir(theta[0] + theta[1]));
    [
        l1 * thigh[0] + geom.web_center_fraction * l2 * shank[0],
        l1 * thigh[1] + geom.web_center_fraction * l2 * shank[1],
    ]
}

/// Quasi-steady plate wrench (F_x, F_z, M_y about the hip).
pub fn plate_wrench(
    geom: &LimbGeometry,
    theta: [f64; 2],
    omega: [f64; 2],
    tow_speed: f64,
) -> [f64; 3] {
    let [l1, l2] = geom.link_lengths;
    let shank_angle = theta[0] + theta[1];
    let shank_rate = omega[0] + omega[1];
    let d_thigh = link_dir_deriv(theta[0]);
    let d_shank = link_dir_deriv(shank_angle);
    // web centre velocity relative to the water
    let arm = geom.web_center_fraction * l2;
    let v = [
        l1 * omega[0] * d_thigh[0] + arm * shank_rate * d_shank[0] + tow_speed,
        l1 * omega[0] * d_thigh[1] + arm * shank_rate * d_shank[1],
    ];
    let normal = d_shank;
    let v_n = v[0] * normal[0] + v[1] * normal[1];
    // the web opens when it is driven along +normal and folds otherwise
    let area = if v_n >= 0.0 { 1.0 } else { geom.web_fold_ratio };
    let magnitude = -geom.drag_gain() * area * v_n.abs() * v_n;
    let f = [magnitude * normal[0], magnitude * normal[1]];
    let c = web_center(geom, theta);
    // M_y = (r × F)_y with x forward, z up
    let m_y = c[1] * f[0] - c[0] * f[1];
    [f[0], f[1], m_y]
}

/// Noise-free single step: applies the clipped deltas, clamps to the swing
/// window, and evaluates the plate wrench at the new pose. Filtered forces
/// are carried over unchanged.
pub fn limb_step(
    config: &SimConfig,
    state: &LimbState,
    action: &Action,
    dt: f64,
) -> Result<(LimbState, [f64; 3])> {
    if !action.is_finite() {
        return Err(Error::InvalidAction);
    }
    let delta = action.clipped(config.delta_limit).joint_deltas;
    let target = [state.theta[0] + delta[0], state.theta[1] + delta[1]];
    Ok(kinematic_step(config, state, target, dt))
}

fn kinematic_step(
    config: &SimConfig,
    state: &LimbState,
    target: [f64; 2],
    dt: f64,
) -> (LimbState, [f64; 3]) {
    let theta = config.clamp_angles(target);
    let omega = [
        (theta[0] - state.theta[0]) / dt,
        (theta[1] - state.theta[1]) / dt,
    ];
    let raw = plate_wrench(&config.geometry, theta, omega, state.tow_speed);
    let next = LimbState {
        theta,
        omega,
        tow_speed: state.tow_speed,
        raw_forces: raw,
        filtered_forces: state.filtered_forces,
        sim_time: state.sim_time + dt,
    };
    (next, raw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    /// Filtered F_z after the step.
    pub lift: f64,
    /// Noise-free physical wrench.
    pub true_forces: [f64; 3],
}

/// Seeded simulator instance with sensor noise and per-channel Kalman filters.
#[derive(Debug, Clone)]
pub struct LimbSim {
    config: SimConfig,
    state: LimbState,
    filters: [SensorFilter; 3],
    rng: ChaCha8Rng,
}

impl LimbSim {
    pub fn new(config: SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut sim = Self {
            config,
            state: LimbState::at_rest(&config),
            filters: Self::fresh_filters(&config),
            rng: stream_rng(seed, "limb-sim", 0),
        };
        sim.reset();
        Ok(sim)
    }

    fn fresh_filters(c: &SimConfig) -> [SensorFilter; 3] {
        let f = &c.filter;
        [
            SensorFilter::new(f.force_q, f.force_r, 0.0, f.initial_variance),
            SensorFilter::new(f.force_q, f.force_r, 0.0, f.initial_variance),
            SensorFilter::new(f.moment_q, f.moment_r, 0.0, f.initial_variance),
        ]
    }

    /// Returns the limb to neutral at rest. The noise stream continues.
    pub fn reset(&mut self) -> Observation {
        self.state = LimbState::at_rest(&self.config);
        self.filters = Self::fresh_filters(&self.config);
        self.observe()
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &LimbState {
        &self.state
    }

    pub fn observe(&self) -> Observation {
        Observation {
            joint_angles: self.state.theta,
            joint_velocities: self.state.omega,
            sensed_forces: self.state.filtered_forces,
            phase_clock: self
                .config
                .phase_clock_hz
                .map(|f| (self.state.sim_time * f).rem_euclid(1.0)),
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let (next, raw) = limb_step(&self.config, &self.state, action, self.config.dt())?;
        Ok(self.finish_step(next, raw))
    }

    /// Drives the joints straight to `target` (clamped to the swing window but
    /// not to the per-step delta limit). Used for gait-primitive playback.
    pub fn step_to(&mut self, target: [f64; 2]) -> Result<StepOutcome> {
        if !target.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidAction);
        }
        let (next, raw) = kinematic_step(&self.config, &self.state, target, self.config.dt());
        Ok(self.finish_step(next, raw))
    }

    fn finish_step(&mut self, mut next: LimbState, true_forces: [f64; 3]) -> StepOutcome {
        let sigma = [
            self.config.force_noise_std,
            self.config.force_noise_std,
            self.config.moment_noise_std,
        ];
        let mut measured = true_forces;
        for (m, s) in measured.iter_mut().zip(sigma) {
            if s > 0.0 {
                let z: f64 = self.rng.sample(StandardNormal);
                *m += s * z;
            }
        }
        next.raw_forces = measured;
        for (i, f) in self.filters.iter_mut().enumerate() {
            next.filtered_forces[i] = f.update(measured[i]);
        }
        self.state = next;
        StepOutcome {
            obs: self.observe(),
            reward: self.config.reward_scale * next.filtered_forces[0],
            lift: next.filtered_forces[1],
            true_forces,
        }
    }
}
