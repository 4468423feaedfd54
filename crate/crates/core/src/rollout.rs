//! Running policies in an env.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::ActionSpace;
use crate::approx::{log_density, GaussianPolicy};
use crate::envsim::{advance, is_success, observe, reset_realized, EnvSpec, HistoryBuffer};
use crate::error::{Error, Result};
use crate::evalharness::scores::{step_score, ScoreWeights};
use crate::rng::{self, Rng};
use crate::trajectory::{Step, Trajectory, TrajectoryMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObsMode {
    #[default]
    Plain,
    History5,
}

impl ObsMode {
    pub fn is_history(self) -> bool {
        self == ObsMode::History5
    }

    pub fn obs_dim(self, dof: usize) -> usize {
        match self {
            ObsMode::Plain => 2 * dof,
            ObsMode::History5 => 2 * dof * crate::envsim::HISTORY_LEN,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ObsMode::Plain => "plain",
            ObsMode::History5 => "history5",
        }
    }
}

impl std::str::FromStr for ObsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(ObsMode::Plain),
            "history5" => Ok(ObsMode::History5),
            other => Err(Error::Config(format!("unknown observation mode `{other}` (plain | history5)"))),
        }
    }
}

/// A policy bound to an action space and observation mode.
#[derive(Debug, Clone, Copy)]
pub struct Agent<'a> {
    pub policy: &'a GaussianPolicy,
    pub space: &'a ActionSpace,
    pub obs: ObsMode,
}

impl Agent<'_> {
    pub fn check(&self, spec: &EnvSpec) -> Result<()> {
        crate::error::check_dim("policy input", self.obs.obs_dim(spec.dof), self.policy.obs_dim())?;
        crate::error::check_dim("policy output", self.space.raw_dim(), self.policy.act_dim())
    }
}

/// One episode as seen by a learner.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub features: Vec<Vec<f64>>,
    /// Pre-squash actions.
    pub raw_actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    /// Per-step performance score.
    pub perf: Vec<f64>,
    /// Policy input after the last step, for bootstrapping.
    pub final_features: Vec<f64>,
    /// The simulation blew up and the episode was cut short.
    pub diverged: bool,
    pub trajectory: Trajectory,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn score(&self) -> f64 {
        if self.perf.is_empty() {
            0.0
        } else {
            self.perf.iter().sum::<f64>() / self.perf.len() as f64
        }
    }
}

/// Run one episode of at most `traj_len` steps. `rng` samples actions; without
/// it the policy mean is executed.
pub fn run_episode(
    spec: &EnvSpec,
    agent: &Agent<'_>,
    weights: &ScoreWeights,
    traj_len: usize,
    reset_seed: u64,
    mut rng: Option<&mut Rng>,
) -> Result<EpisodeRecord> {
    agent.check(spec)?;
    let meta = TrajectoryMeta::for_env(spec);
    let mut history = agent.obs.is_history().then(|| HistoryBuffer::new(spec.dof));
    let mut state = reset_realized(spec, reset_seed);
    let mut rec = EpisodeRecord {
        features: Vec::with_capacity(traj_len),
        raw_actions: Vec::with_capacity(traj_len),
        log_probs: Vec::with_capacity(traj_len),
        perf: Vec::with_capacity(traj_len),
        final_features: Vec::new(),
        diverged: false,
        trajectory: Trajectory {
            meta: meta.clone(),
            steps: Vec::with_capacity(traj_len),
            final_e: Vec::new(),
            final_edot: Vec::new(),
            success: false,
        },
    };
    let mut obs = observe(spec, &state, history.as_mut());
    for _ in 0..traj_len {
        let features = obs.features();
        let mu = agent.policy.mean_action(&features)?;
        let raw = match rng.as_deref_mut() {
            Some(r) => sample_around(&mu, agent.policy.log_std(), r),
            None => mu.clone(),
        };
        let exec = agent.space.execute(spec, &state, &raw)?;
        let next = match advance(spec, &state, &exec.command) {
            Ok(s) => s,
            Err(Error::Diverged { .. }) | Err(Error::NonFiniteForce(_)) => {
                rec.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        rec.log_probs.push(log_density(&mu, agent.policy.log_std(), &raw)?);
        rec.perf.push(step_score(&meta, weights, &obs.e, &obs.edot));
        rec.trajectory.steps.push(Step {
            t: state.t,
            e: obs.e.clone(),
            edot: obs.edot.clone(),
            action: exec.action,
            force: exec.force,
        });
        rec.features.push(features);
        rec.raw_actions.push(raw);
        state = next;
        obs = observe(spec, &state, history.as_mut());
    }
    rec.final_features = obs.features();
    rec.trajectory.final_e = obs.e;
    rec.trajectory.final_edot = obs.edot;
    rec.trajectory.success = !rec.diverged && is_success(spec, &state);
    Ok(rec)
}

fn sample_around(mu: &[f64], log_std: &[f64], r: &mut Rng) -> Vec<f64> {
    mu.iter()
        .zip(log_std)
        .map(|(m, s)| m + s.exp() * r.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Reset seed of episode `index` in stream `name`.
pub fn episode_seed(seed: u64, name: &str, index: u64) -> u64 {
    rng::child_seed(seed, name, index)
}

/// Run `n` episodes in parallel; episode `i` draws its reset and its action
/// noise from `(seed, name, i)`, so the result is independent of scheduling.
pub fn run_episodes(
    spec: &EnvSpec,
    agent: &Agent<'_>,
    weights: &ScoreWeights,
    traj_len: usize,
    seed: u64,
    name: &str,
    range: std::ops::Range<u64>,
    stochastic: bool,
) -> Result<Vec<EpisodeRecord>> {
    range
        .into_par_iter()
        .map(|i| {
            let s = episode_seed(seed, name, i);
            if stochastic {
                let mut r = rng::stream(s, "actions", 0);
                run_episode(spec, agent, weights, traj_len, s, Some(&mut r))
            } else {
                run_episode(spec, agent, weights, traj_len, s, None)
            }
        })
        .collect()
}
