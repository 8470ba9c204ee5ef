//! Quadruped deployment by diagonal-pair superposition.
//!
//! Legs {P1, P4} and {P2, P3} each move in sync, so the body wrench is built
//! from one representative leg per pair. A recorded single-limb cycle is
//! replayed on both pairs, the second pair lagging by a configurable offset
//! (half a cycle for lift cancellation).

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LimbSim, SimConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadGeometry {
    /// Vertical eccentricity of the actuators below the centre of buoyancy (m).
    pub h: f64,
    pub l_x: f64,
    pub l_y: f64,
}

impl Default for QuadGeometry {
    fn default() -> Self {
        // placeholders; the robot's actual offsets are not published
        Self {
            h: 0.03,
            l_x: 0.18,
            l_y: 0.10,
        }
    }
}

impl QuadGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.l_x.is_finite() && self.l_y.is_finite()) || self.h < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "invalid quad geometry {self:?}"
            )));
        }
        Ok(())
    }
}

/// Force and moment contributed by a single leg.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LegWrench {
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

impl LegWrench {
    /// Sagittal-plane limb output: (F_x, 0, F_z) with M_y mapped to τ_y.
    pub fn sagittal(f_x: f64, f_z: f64, m_y: f64) -> Self {
        Self {
            force: [f_x, 0.0, f_z],
            torque: [0.0, m_y, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BodyWrench {
    pub f_x: f64,
    pub f_y: f64,
    pub f_z: f64,
    pub m_x: f64,
    pub m_y: f64,
    pub m_z: f64,
}

impl BodyWrench {
    pub fn is_finite(&self) -> bool {
        [self.f_x, self.f_y, self.f_z, self.m_x, self.m_y, self.m_z]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Net body wrench from the two diagonal pairs.
pub fn quad_superpose(pair1: &LegWrench, pair2: &LegWrench, geom: &QuadGeometry) -> BodyWrench {
    let f = |i: usize| 2.0 * (pair1.force[i] + pair2.force[i]);
    let t = |i: usize| 2.0 * (pair1.torque[i] + pair2.torque[i]);
    let (f_x, f_y, f_z) = (f(0), f(1), f(2));
    BodyWrench {
        f_x,
        f_y,
        f_z,
        m_x: t(0) - geom.h * f_y,
        m_y: t(1) + geom.h * f_x,
        m_z: t(2),
    }
}

/// One recorded cycle of commanded joint angles, sampled at `f_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitPrimitive {
    pub f_s: f64,
    pub angles: Vec<[f64; 2]>,
}

impl GaitPrimitive {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.angles.len();
        if h < 2 || h % 2 != 0 {
            return Err(Error::InvalidGaitPrimitive(format!(
                "cycle length {h} must be even and at least 2"
            )));
        }
        if !(self.f_s > 0.0) || !self.angles.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::InvalidGaitPrimitive("non-finite samples".into()));
        }
        Ok(())
    }

    /// Plain-text table: comment header with `f_s` and `H`, then one
    /// `theta_h theta_k` row (radians) per control step.
    pub fn write<W: Write>(&self, mut out: W, fingerprint: Option<&str>) -> Result<()> {
        writeln!(out, "# gait primitive")?;
        writeln!(out, "# f_s={}", self.f_s)?;
        writeln!(out, "# H={}", self.angles.len())?;
        if let Some(fp) = fingerprint {
            writeln!(out, "# config_fp={fp}")?;
        }
        writeln!(out, "# theta_h theta_k")?;
        for [h, k] in &self.angles {
            writeln!(out, "{h} {k}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, fingerprint: Option<&str>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut file, fingerprint)?;
        file.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R, origin: &Path) -> Result<Self> {
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            msg,
        };
        let mut f_s = None;
        let mut declared_h = None;
        let mut angles = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                let c = c.trim();
                if let Some(v) = c.strip_prefix("f_s=") {
                    f_s = Some(v.parse::<f64>().map_err(|e| err(format!("f_s: {e}")))?);
                } else if let Some(v) = c.strip_prefix("H=") {
                    declared_h = Some(v.parse::<usize>().map_err(|e| err(format!("H: {e}")))?);
                }
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != 2 {
                return Err(err(format!("line {}: expected 2 columns", lineno + 1)));
            }
            angles.push([vals[0], vals[1]]);
        }
        let f_s = f_s.ok_or_else(|| err("missing f_s header".into()))?;
        if let Some(h) = declared_h {
            if h != angles.len() {
                return Err(err(format!("header H={h} but {} rows", angles.len())));
            }
        }
        Ok(Self { f_s, angles })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(file, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub f_x_mean: f64,
    pub f_z_mean: f64,
    pub f_z_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferResult {
    /// Body wrench at every step, including the discarded first cycle.
    pub wrenches: Vec<BodyWrench>,
    /// Per-step single-limb wrench of pair 1 (F_x, F_z, M_y).
    pub pair1_forces: Vec<[f64; 3]>,
    pub summary: TransferSummary,
}

/// Diagonal deployment with the standard half-cycle lag.
pub fn transfer_rollout(
    cycle: &GaitPrimitive,
    n_cycles: usize,
    geom: &QuadGeometry,
    sim: &SimConfig,
) -> Result<TransferResult> {
    transfer_rollout_with_offset(cycle, n_cycles, cycle.len() / 2, geom, sim)
}

/// Replays `cycle` on both diagonal pairs for `n_cycles` cycles, pair 2
/// lagging pair 1 by `offset` steps, and summarises the body wrench after
/// discarding the first cycle. The legs are driven kinematically through a
/// noise-free simulator and the true plate forces are used.
pub fn transfer_rollout_with_offset(
    cycle: &GaitPrimitive,
    n_cycles: usize,
    offset: usize,
    geom: &QuadGeometry,
    sim: &SimConfig,
) -> Result<TransferResult> {
    cycle.validate()?;
    geom.validate()?;
    let h = cycle.len();
    if n_cycles < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 cycles (first is discarded), got {n_cycles}"
        )));
    }
    let mut config = sim.noise_free();
    config.control_hz = cycle.f_s;
    let mut pair1 = LimbSim::new(config, 0)?;
    let mut pair2 = LimbSim::new(config, 0)?;
    let total = n_cycles * h;
    let lag = offset % h;
    let mut wrenches = Vec::with_capacity(total);
    let mut pair1_forces = Vec::with_capacity(total);
    for s in 0..total {
        let a = pair1.step_to(cycle.angles[s % h])?.true_forces;
        let b = pair2.step_to(cycle.angles[(s + h - lag) % h])?.true_forces;
        let w = quad_superpose(
            &LegWrench::sagittal(a[0], a[1], a[2]),
            &LegWrench::sagittal(b[0], b[1], b[2]),
            geom,
        );
        wrenches.push(w);
        pair1_forces.push(a);
    }
    let steady = &wrenches[h..];
    let n = steady.len() as f64;
    let f_x_mean = steady.iter().map(|w| w.f_x).sum::<f64>() / n;
    let f_z_mean = steady.iter().map(|w| w.f_z).sum::<f64>() / n;
    let f_z_var = steady
        .iter()
        .map(|w| (w.f_z - f_z_mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(TransferResult {
        wrenches,
        pair1_forces,
        summary: TransferSummary {
            f_x_mean,
            f_z_mean,
            f_z_var,
        },
    })
}
