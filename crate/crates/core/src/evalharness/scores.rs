//! Task performance functions. Every per-step score is ≤ 0; an episode's
//! score is the mean over its steps.

use serde::{Deserialize, Serialize};

use crate::envsim::{tip_aligned, TaskKind};
use crate::error::{Error, Result};
use crate::experts::{phase_of, position_error_norm, Phase, PhaseSchedule};
use crate::trajectory::{Trajectory, TrajectoryMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreWeights {
    /// Constant penalty while the peg is laterally misaligned.
    pub c_align: f64,
    pub w_e: f64,
    pub w_v: f64,
    /// Phase boundaries used to attribute cup steps (m).
    pub e1: f64,
    pub e2: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            c_align: 0.1,
            w_e: 1.0,
            w_v: 1.0,
            e1: 0.4,
            e2: 0.2,
        }
    }
}

impl ScoreWeights {
    pub fn with_schedule(mut self, s: &PhaseSchedule) -> Self {
        self.e1 = s.e1;
        self.e2 = s.e2;
        self
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Peg tip lateral offset from the hole axis, from the COM tracking error.
pub fn tip_lateral(meta: &TrajectoryMeta, e: &[f64]) -> f64 {
    tip_from_error(meta, e)[0]
}

fn tip_from_error(meta: &TrajectoryMeta, e: &[f64]) -> [f64; 2] {
    let r = meta.tip_offset.unwrap_or(0.0);
    let x = e[0] + meta.goal[0];
    let z = e[1] + meta.goal[1];
    let (s, c) = (e[2] + meta.goal[2]).sin_cos();
    [x + r * s, z - r * c]
}

/// Score of one step.
pub fn step_score(meta: &TrajectoryMeta, w: &ScoreWeights, e: &[f64], edot: &[f64]) -> f64 {
    match meta.task {
        TaskKind::PegInHole => {
            let tol = meta.align_tol.unwrap_or(0.0);
            let aligned = tip_aligned(tip_from_error(meta, e), meta.tip_offset.unwrap_or(0.0), tol);
            if !aligned {
                -w.c_align
            } else {
                -e[1].abs()
            }
        }
        TaskKind::CupOnPlate => {
            let pos = position_error_norm(e);
            let schedule = PhaseSchedule {
                e1: w.e1,
                e2: w.e2,
                ..PhaseSchedule::default()
            };
            match phase_of(pos, &schedule) {
                Phase::Accelerating => -w.w_e * pos,
                Phase::Switching => -w.w_e * pos - w.w_v * norm(edot),
                Phase::Reaching => -w.w_v * norm(edot),
            }
        }
        TaskKind::PointReach => -w.w_e * norm(e),
    }
}

fn mean_step_score(traj: &Trajectory, w: &ScoreWeights) -> f64 {
    if traj.steps.is_empty() {
        return 0.0;
    }
    traj.steps.iter().map(|s| step_score(&traj.meta, w, &s.e, &s.edot)).sum::<f64>() / traj.steps.len() as f64
}

/// Peg-in-hole score: `-|e_z|` while aligned, `-c_align` otherwise.
pub fn pih_score(traj: &Trajectory, w: &ScoreWeights) -> f64 {
    mean_step_score(traj, w)
}

/// Cup-on-plate score: position error while accelerating, velocity while
/// reaching, both in between.
pub fn cop_score(traj: &Trajectory, schedule: &PhaseSchedule, w: &ScoreWeights) -> f64 {
    mean_step_score(traj, &w.clone().with_schedule(schedule))
}

/// Score by task family.
pub fn episode_score(traj: &Trajectory, w: &ScoreWeights) -> f64 {
    mean_step_score(traj, w)
}

/// `|policy - expert| / |expert|`.
pub fn relative_perf_diff(policy_score: f64, expert_score: f64) -> Result<f64> {
    if expert_score == 0.0 || !expert_score.is_finite() {
        return Err(Error::invalid("expert score must be finite and nonzero to normalize against"));
    }
    Ok((policy_score - expert_score).abs() / expert_score.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceScore {
    pub per_episode: Vec<f64>,
    pub mean: f64,
    pub task_id: String,
}

impl PerformanceScore {
    pub fn new(task: TaskKind, per_episode: Vec<f64>) -> Self {
        let mean = if per_episode.is_empty() {
            0.0
        } else {
            per_episode.iter().sum::<f64>() / per_episode.len() as f64
        };
        Self {
            per_episode,
            mean,
            task_id: task.to_string(),
        }
    }
}

/// Average nearest-point distance from `traj` to `reference`, and the distance
/// between their final positions.
pub fn deviation_metrics(traj: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<(f64, f64)> {
    let (Some(last), Some(ref_last)) = (traj.last(), reference.last()) else {
        return Err(Error::Empty("trajectory"));
    };
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let avg = traj
        .iter()
        .map(|p| reference.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / traj.len() as f64;
    Ok((avg, dist(last, ref_last)))
}
