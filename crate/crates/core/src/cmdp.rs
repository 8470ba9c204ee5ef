//! Constrained MDP data model shared by the simulator, the demo pipeline and
//! the trainer: observations, actions, transitions, trajectories, and the
//! discounted reward/cost summaries.

use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the policy sees at one control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// HFE, KFE angles in the simulator joint frame (rad).
    pub joint_angles: [f64; 2],
    /// HFE, KFE angular velocities (rad/s).
    pub joint_velocities: [f64; 2],
    /// Kalman-filtered (F_x [N], F_z [N], M_y [N·m]).
    pub sensed_forces: [f64; 3],
    /// Normalized cycle phase in [0, 1), when the environment runs a clock.
    pub phase_clock: Option<f64>,
}

impl Observation {
    pub fn is_finite(&self) -> bool {
        self.joint_angles.iter().all(|v| v.is_finite())
            && self.joint_velocities.iter().all(|v| v.is_finite())
            && self.sensed_forces.iter().all(|v| v.is_finite())
            && self.phase_clock.is_none_or(|p| p.is_finite())
    }

    pub fn within_limits(&self, neutral: [f64; 2], swing_limit: f64) -> bool {
        self.joint_angles
            .iter()
            .zip(neutral)
            .all(|(a, n)| (a - n).abs() <= swing_limit + 1e-12)
    }

    pub fn lift(&self) -> f64 {
        self.sensed_forces[1]
    }
}

/// Per-step joint angle change command (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub joint_deltas: [f64; 2],
}

impl Action {
    pub fn new(dh: f64, dk: f64) -> Self {
        Self {
            joint_deltas: [dh, dk],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.joint_deltas.iter().all(|v| v.is_finite())
    }

    /// Componentwise clamp to `±limit`.
    pub fn clipped(&self, limit: f64) -> Self {
        Self {
            joint_deltas: self.joint_deltas.map(|d| d.clamp(-limit, limit)),
        }
    }
}

/// One control step. `action` is the raw policy sample (before the
/// environment clamps it), so `logp_behavior` is its exact log-density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub step_index: usize,
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub cost: f64,
    pub logp_behavior: f64,
    pub done: bool,
    /// Filtered F_z measured after applying `action`; the cost is derived from it.
    pub lift: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub cycle_length: Option<usize>,
    pub cycle_segments: Vec<Range<usize>>,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>) -> Self {
        Self {
            transitions,
            cycle_length: None,
            cycle_segments: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn lifts(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.lift).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.cost).collect()
    }

    /// Segments the trajectory into consecutive, disjoint cycles of `h` steps
    /// starting at index 0. A trailing partial cycle is left unsegmented.
    pub fn set_cycle_length(&mut self, h: usize) -> Result<()> {
        if h == 0 {
            return Err(Error::InvalidCycleLength(0));
        }
        let n = self.transitions.len();
        self.cycle_length = Some(h);
        self.cycle_segments = (0..n / h).map(|k| k * h..(k + 1) * h).collect();
        Ok(())
    }

    /// Recomputes every step's cost from the recorded lift with cycle length `h`.
    pub fn recompute_costs(&mut self, h: usize) -> Result<()> {
        let costs = half_cycle_costs(&self.lifts(), h)?;
        for (t, c) in self.transitions.iter_mut().zip(costs) {
            t.cost = c;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountedSummary {
    pub return_j: f64,
    pub cost_j: f64,
    pub undiscounted_reward: f64,
    pub undiscounted_cost_mean: f64,
}

/// Discounted return and cost of a single trajectory, plus the undiscounted
/// episode reward and mean per-step cost used for reporting.
pub fn discounted_summary(traj: &Trajectory, gamma: f64) -> Result<DiscountedSummary> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} not in (0, 1]"
        )));
    }
    let mut discount = 1.0;
    let (mut ret, mut cost, mut r_sum, mut c_sum) = (0.0, 0.0, 0.0, 0.0);
    for t in &traj.transitions {
        ret += discount * t.reward;
        cost += discount * t.cost;
        r_sum += t.reward;
        c_sum += t.cost;
        discount *= gamma;
    }
    Ok(DiscountedSummary {
        return_j: ret,
        cost_j: cost,
        undiscounted_reward: r_sum,
        undiscounted_cost_mean: c_sum / traj.len() as f64,
    })
}

/// Lift non-cancellation cost `|F_z[t] + F_z[t - H/2]|`. Before the first
/// half cycle the missing partner counts as zero lift. Odd `h` is rounded
/// down to the nearest even length.
pub fn half_cycle_cost(lift: &[f64], t: usize, h: usize) -> Result<f64> {
    if h < 2 {
        return Err(Error::InvalidCycleLength(h as i64));
    }
    let Some(&now) = lift.get(t) else {
        return Err(Error::InvalidArgument(format!(
            "step {t} outside lift history of length {}",
            lift.len()
        )));
    };
    let half = h / 2;
    Ok(match t.checked_sub(half) {
        Some(prev) => (now + lift[prev]).abs(),
        None => now.abs(),
    })
}

pub fn half_cycle_costs(lift: &[f64], h: usize) -> Result<Vec<f64>> {
    (0..lift.len())
        .map(|t| half_cycle_cost(lift, t, h))
        .collect()
}

/// Column order of the trajectory record format.
pub const TRAJECTORY_HEADER: [&str; 16] = [
    "step_index",
    "theta_h",
    "theta_k",
    "omega_h",
    "omega_k",
    "f_x",
    "f_z",
    "m_y",
    "phase",
    "delta_h",
    "delta_k",
    "reward",
    "cost",
    "logp",
    "done",
    "lift",
];

/// Writes a trajectory as newline-delimited comma-separated records with a
/// header row. An optional `# cycle_length=H` comment precedes the header.
pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut out = out;
    if let Some(h) = traj.cycle_length {
        writeln!(out, "# cycle_length={h}")?;
    }
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for t in &traj.transitions {
        let o = &t.obs;
        let phase = o.phase_clock.map(|p| p.to_string()).unwrap_or_default();
        w.write_record([
            t.step_index.to_string(),
            o.joint_angles[0].to_string(),
            o.joint_angles[1].to_string(),
            o.joint_velocities[0].to_string(),
            o.joint_velocities[1].to_string(),
            o.sensed_forces[0].to_string(),
            o.sensed_forces[1].to_string(),
            o.sensed_forces[2].to_string(),
            phase,
            t.action.joint_deltas[0].to_string(),
            t.action.joint_deltas[1].to_string(),
            t.reward.to_string(),
            t.cost.to_string(),
            t.logp_behavior.to_string(),
            u8::from(t.done).to_string(),
            t.lift.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trajectory(traj, file)
}

pub fn read_trajectory<R: BufRead>(input: R, origin: &Path) -> Result<Trajectory> {
    let parse_err = |msg: String| Error::Parse {
        path: origin.to_path_buf(),
        msg,
    };
    let mut lines = Vec::new();
    let mut cycle_length = None;
    for line in input.lines() {
        let line = line?;
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("cycle_length=") {
                cycle_length = Some(
                    v.trim()
                        .parse::<usize>()
                        .map_err(|e| parse_err(format!("cycle_length: {e}")))?,
                );
            }
            continue;
        }
        lines.push(line);
    }
    let body = lines.join("\n");
    let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(parse_err(format!("unexpected header {header:?}")));
    }
    let mut transitions = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("row {row} column {}: {e}", TRAJECTORY_HEADER[i])))
        };
        let phase = if record[8].is_empty() {
            None
        } else {
            Some(num(8)?)
        };
        transitions.push(Transition {
            step_index: record[0]
                .parse()
                .map_err(|e| parse_err(format!("row {row} step_index: {e}")))?,
            obs: Observation {
                joint_angles: [num(1)?, num(2)?],
                joint_velocities: [num(3)?, num(4)?],
                sensed_forces: [num(5)?, num(6)?, num(7)?],
                phase_clock: phase,
            },
            action: Action::new(num(9)?, num(10)?),
            reward: num(11)?,
            cost: num(12)?,
            logp_behavior: num(13)?,
            done: &record[14] == "1",
            lift: num(15)?,
        });
    }
    let mut traj = Trajectory::new(transitions);
    if let Some(h) = cycle_length {
        traj.set_cycle_length(h)?;
    }
    Ok(traj)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_trajectory(file, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(rewards: &[f64], costs: &[f64]) -> Trajectory {
        let obs = Observation {
            joint_angles: [0.0; 2],
            joint_velocities: [0.0; 2],
            sensed_forces: [0.0; 3],
            phase_clock: None,
        };
        Trajectory::new(
            rewards
                .iter()
                .zip(costs)
                .enumerate()
                .map(|(i, (&r, &c))| Transition {
                    step_index: i,
                    obs,
                    action: Action::new(0.0, 0.0),
                    reward: r,
                    cost: c,
                    logp_behavior: 0.0,
                    done: i + 1 == rewards.len(),
                    lift: 0.0,
                })
                .collect(),
        )
    }

    #[test]
    fn summary_examples() {
        let s = discounted_summary(&toy(&[1.0, 1.0, 1.0], &[0.0; 3]), 1.0).unwrap();
        assert_eq!(s.return_j, 3.0);
        assert_eq!(s.cost_j, 0.0);

        let s = discounted_summary(&toy(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), 0.5).unwrap();
        assert_eq!(s.return_j, 1.0);
        assert_eq!(s.cost_j, 0.5);

        let s = discounted_summary(&toy(&[2.0, 2.0], &[0.3, 0.5]), 1.0).unwrap();
        assert_eq!(s.undiscounted_reward, 4.0);
        assert!((s.undiscounted_cost_mean - 0.4).abs() < 1e-15);
    }

    #[test]
    fn summary_rejects_empty_and_bad_gamma() {
        assert!(matches!(
            discounted_summary(&Trajectory::default(), 0.9),
            Err(Error::EmptyTrajectory)
        ));
        assert!(discounted_summary(&toy(&[1.0], &[0.0]), 0.0).is_err());
        assert!(discounted_summary(&toy(&[1.0], &[0.0]), 1.5).is_err());
    }

    #[test]
    fn half_cycle_cost_examples() {
        let h = 40;
        let lift: Vec<f64> = (0..200)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / h as f64).sin())
            .collect();
        for t in h / 2..lift.len() {
            assert!(half_cycle_cost(&lift, t, h).unwrap() < 1e-12);
        }

        let mut lift = vec![0.0; 10];
        lift[2] = 0.1;
        lift[6] = 0.3;
        assert!((half_cycle_cost(&lift, 6, 8).unwrap() - 0.4).abs() < 1e-15);
        lift[6] = -0.2;
        lift[2] = 0.2;
        assert_eq!(half_cycle_cost(&lift, 6, 8).unwrap(), 0.0);
    }

    #[test]
    fn half_cycle_cost_bootstrap_and_errors() {
        let lift = [-0.7, 0.2, 0.5];
        assert_eq!(half_cycle_cost(&lift, 0, 4).unwrap(), 0.7);
        assert_eq!(half_cycle_cost(&lift, 1, 4).unwrap(), 0.2);
        assert!((half_cycle_cost(&lift, 2, 4).unwrap() - 0.2).abs() < 1e-15);
        // odd H behaves as the next lower even length
        assert_eq!(
            half_cycle_cost(&lift, 2, 5).unwrap(),
            half_cycle_cost(&lift, 2, 4).unwrap()
        );
        assert!(matches!(
            half_cycle_cost(&lift, 1, 0),
            Err(Error::InvalidCycleLength(0))
        ));
        assert!(half_cycle_cost(&lift, 1, 1).is_err());
    }

    #[test]
    fn cycle_segmentation_is_disjoint() {
        let mut tr = toy(&[0.0; 10], &[0.0; 10]);
        tr.set_cycle_length(4).unwrap();
        assert_eq!(tr.cycle_segments, vec![0..4, 4..8]);
    }

    #[test]
    fn trajectory_text_round_trip() {
        let mut tr = toy(&[1.5, -0.25, 3.0], &[0.0, 0.125, 1e-9]);
        tr.transitions[1].obs.phase_clock = Some(0.3);
        tr.transitions[2].obs.sensed_forces = [0.1, -0.2, 1.0 / 3.0];
        tr.set_cycle_length(2).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&tr, &mut buf).unwrap();
        let back = read_trajectory(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, tr);
    }

    proptest! {
        #[test]
        fn gamma_one_equals_plain_sums(
            steps in prop::collection::vec((-5.0f64..5.0, 0.0f64..3.0), 1..40)
        ) {
            let (r, c): (Vec<f64>, Vec<f64>) = steps.into_iter().unzip();
            let s = discounted_summary(&toy(&r, &c), 1.0).unwrap();
            let mut rs = 0.0;
            let mut cs = 0.0;
            for i in 0..r.len() { rs += r[i]; cs += c[i]; }
            prop_assert_eq!(s.return_j, rs);
            prop_assert_eq!(s.cost_j, cs);
        }

        #[test]
        fn summary_is_linear(
            steps in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30),
            gamma in 0.05f64..1.0,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = steps.into_iter().unzip();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let zeros = vec![0.0; x.len()];
            let sx = discounted_summary(&toy(&x, &zeros), gamma).unwrap().return_j;
            let sy = discounted_summary(&toy(&y, &zeros), gamma).unwrap().return_j;
            let sm = discounted_summary(&toy(&mix, &zeros), gamma).unwrap().return_j;
            // brute force: sum_t gamma^t r_t with powi
            let brute: f64 = mix.iter().enumerate().map(|(t, r)| gamma.powi(t as i32) * r).sum();
            prop_assert!((sm - (a * sx + b * sy)).abs() < 1e-9 * (1.0 + brute.abs()));
            prop_assert!((sm - brute).abs() < 1e-9 * (1.0 + brute.abs()));
        }

        #[test]
        fn half_cycle_cost_nonnegative(
            lift in prop::collection::vec(-10.0f64..10.0, 1..60),
            h in 2usize..30,
        ) {
            for t in 0..lift.len() {
                prop_assert!(half_cycle_cost(&lift, t, h).unwrap() >= 0.0);
            }
        }

        #[test]
        fn antisymmetric_periodic_lift_has_zero_cost(
            half in prop::collection::vec(-2.0f64..2.0, 1..20),
            reps in 1usize..5,
        ) {
            let h = 2 * half.len();
            let mut lift = Vec::new();
            for _ in 0..reps {
                lift.extend(half.iter().copied());
                lift.extend(half.iter().map(|v| -v));
            }
            for t in h / 2..lift.len() {
                prop_assert_eq!(half_cycle_cost(&lift, t, h).unwrap(), 0.0);
            }
        }
    }
}
