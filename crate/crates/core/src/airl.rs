//! Adversarial inverse reinforcement learning.
//!
//! The discriminator is `D(o, a) = exp r(o, a) / (exp r(o, a) + π(a|o))`,
//! evaluated as `sigmoid(r - log π)`. Training alternates policy rollouts,
//! discriminator steps, reward relabelling and a trust-region update.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::action::ActionSpace;
use crate::approx::{Checkpoint, GaussianPolicy, Momentum, RewardNet};
use crate::envsim::EnvSpec;
use crate::error::{check_dim, Error, Result};
use crate::evalharness::scores::ScoreWeights;
use crate::impedance::sigmoid;
use crate::rng;
use crate::rollout::{run_episodes, Agent, ObsMode};
use crate::trajectory::DemoSet;
use crate::trpo::{
    append_log, collect_rollouts, trpo_iteration, IterationLog, Learner, RewardSource, RolloutBatch,
    TrustRegionConfig,
};

/// Policy-side term of the discriminator loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyLossTerm {
    /// `-E_π[log(1 - D)]`, the binary cross-entropy.
    #[default]
    LogOneMinusD,
    /// `-E_π[1 - log D]`, the form printed with the original derivation.
    OneMinusLogD,
}

/// Signal the generator is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorReward {
    /// `r - log π`.
    #[default]
    EntropyRegularized,
    /// `r` alone.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AirlConfig {
    pub iterations: usize,
    pub disc_lr: f64,
    pub disc_momentum: f64,
    pub disc_epochs: usize,
    /// Samples per discriminator step, half demo and half policy.
    pub disc_minibatch: usize,
    pub policy_loss: PolicyLossTerm,
    pub generator_reward: GeneratorReward,
    pub policy_hidden: Vec<usize>,
    pub reward_hidden: Vec<usize>,
    pub checkpoint_every: usize,
    /// Consecutive non-finite updates tolerated before giving up.
    pub max_nonfinite: usize,
}

impl Default for AirlConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            disc_lr: 3e-4,
            disc_momentum: 0.9,
            disc_epochs: 2,
            disc_minibatch: 256,
            policy_loss: PolicyLossTerm::LogOneMinusD,
            generator_reward: GeneratorReward::EntropyRegularized,
            policy_hidden: vec![32, 32],
            reward_hidden: vec![32, 32],
            checkpoint_every: 10,
            max_nonfinite: 5,
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `D` from the reward and the policy log-density.
pub fn discriminator_prob_from(r: f64, log_pi: f64) -> f64 {
    sigmoid(r - log_pi)
}

pub fn discriminator_prob(reward: &RewardNet, policy: &GaussianPolicy, obs: &[f64], action: &[f64]) -> Result<f64> {
    Ok(discriminator_prob_from(reward.eval(obs, action)?, policy.log_prob(obs, action)?))
}

/// `log D - log(1 - D) = r - log π`.
pub fn airl_reward(reward: &RewardNet, policy: &GaussianPolicy, obs: &[f64], action: &[f64]) -> Result<f64> {
    Ok(reward.eval(obs, action)? - policy.log_prob(obs, action)?)
}

/// One labelled discriminator sample: input features, raw action, frozen `log π`.
#[derive(Debug, Clone)]
pub struct DiscSample {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub log_pi: f64,
}

/// Loss contribution and `∂loss/∂u` with `u = r - log π`.
fn demo_term(u: f64) -> (f64, f64) {
    (softplus(-u), -sigmoid(-u))
}

fn policy_term(u: f64, form: PolicyLossTerm) -> (f64, f64) {
    match form {
        PolicyLossTerm::LogOneMinusD => (softplus(u), sigmoid(u)),
        // -(1 - log D) = log D - 1 = -softplus(-u) - 1
        PolicyLossTerm::OneMinusLogD => (-softplus(-u) - 1.0, sigmoid(-u)),
    }
}

/// Mean discriminator loss `-E_demo[log D] + policy term` over both sets.
pub fn discriminator_loss(reward: &RewardNet, demo: &[DiscSample], policy: &[DiscSample], form: PolicyLossTerm) -> Result<f64> {
    let mut ld = 0.0;
    for s in demo {
        ld += demo_term(reward.eval(&s.obs, &s.action)? - s.log_pi).0;
    }
    let mut lp = 0.0;
    for s in policy {
        lp += policy_term(reward.eval(&s.obs, &s.action)? - s.log_pi, form).0;
    }
    Ok(ld / demo.len().max(1) as f64 + lp / policy.len().max(1) as f64)
}

/// Gradient of the minibatch loss w.r.t. the reward parameters.
fn disc_gradient(reward: &RewardNet, demo: &[&DiscSample], policy: &[&DiscSample], form: PolicyLossTerm) -> Result<Vec<f64>> {
    let mut g = vec![0.0; reward.net.num_params()];
    for (set, is_demo) in [(demo, true), (policy, false)] {
        let w = 1.0 / set.len().max(1) as f64;
        for s in set {
            let trace = reward.net.forward_trace(&reward.input(&s.obs, &s.action)?)?;
            let u = trace.output()[0] - s.log_pi;
            let d = if is_demo { demo_term(u).1 } else { policy_term(u, form).1 };
            reward.net.backward(&trace, &[d * w], &mut g)?;
        }
    }
    Ok(g)
}

/// Discriminator training state.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub reward: RewardNet,
    opt: Momentum,
}

impl Discriminator {
    pub fn new(reward: RewardNet, cfg: &AirlConfig) -> Self {
        let opt = Momentum::new(reward.net.num_params(), cfg.disc_lr, cfg.disc_momentum);
        Self { reward, opt }
    }

    /// Momentum-SGD epochs over balanced minibatches; returns the mean loss
    /// after the update and whether any step was skipped as non-finite.
    pub fn update(
        &mut self,
        demo: &[DiscSample],
        policy: &[DiscSample],
        cfg: &AirlConfig,
        rng: &mut rng::Rng,
    ) -> Result<(f64, bool)> {
        if demo.is_empty() || policy.is_empty() {
            return Err(Error::Empty("discriminator sample set"));
        }
        let half = (cfg.disc_minibatch / 2).max(1);
        let mut skipped = false;
        let mut params = self.reward.net.flatten();
        for _ in 0..cfg.disc_epochs {
            let mut p_idx: Vec<usize> = (0..policy.len()).collect();
            p_idx.shuffle(rng);
            let mut d_idx: Vec<usize> = (0..demo.len()).collect();
            d_idx.shuffle(rng);
            for (k, chunk) in p_idx.chunks(half).enumerate() {
                let ps: Vec<&DiscSample> = chunk.iter().map(|&i| &policy[i]).collect();
                let ds: Vec<&DiscSample> = (0..chunk.len()).map(|j| &demo[d_idx[(k * half + j) % demo.len()]]).collect();
                let g = disc_gradient(&self.reward, &ds, &ps, cfg.policy_loss)?;
                if g.iter().all(|v| v.is_finite()) {
                    self.opt.step(&mut params, &g);
                    self.reward.net.set_params(&params)?;
                } else {
                    skipped = true;
                }
            }
        }
        let loss = discriminator_loss(&self.reward, demo, policy, cfg.policy_loss)?;
        Ok((loss, skipped || !loss.is_finite()))
    }
}

/// Demo pairs with `log π` under `policy`.
pub fn demo_samples(pairs: &[(Vec<f64>, Vec<f64>)], policy: &GaussianPolicy) -> Result<Vec<DiscSample>> {
    pairs
        .iter()
        .map(|(o, a)| {
            Ok(DiscSample {
                obs: o.clone(),
                action: a.clone(),
                log_pi: policy.log_prob(o, a)?,
            })
        })
        .collect()
}

pub fn policy_samples(batch: &RolloutBatch) -> Vec<DiscSample> {
    batch
        .episodes
        .iter()
        .flat_map(|ep| {
            ep.features
                .iter()
                .zip(&ep.raw_actions)
                .zip(&ep.log_probs)
                .map(|((o, a), lp)| DiscSample {
                    obs: o.clone(),
                    action: a.clone(),
                    log_pi: *lp,
                })
        })
        .collect()
}

/// Everything one adversarial run owns.
#[derive(Debug, Clone)]
pub struct AirlState {
    pub disc: Discriminator,
    pub learner: Learner,
    pub iteration: usize,
    /// Demo `(features, raw action)` pairs.
    pub demo_pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub space: ActionSpace,
    pub obs: ObsMode,
}

impl AirlState {
    /// Fresh networks for `demos` in the given action space.
    pub fn new(
        demos: &DemoSet,
        space: ActionSpace,
        obs: ObsMode,
        airl: &AirlConfig,
        trpo: &TrustRegionConfig,
        seed: u64,
    ) -> Result<Self> {
        if demos.trajectories.is_empty() {
            return Err(Error::Empty("demo set"));
        }
        demos.validate()?;
        if space.kind() == crate::action::ActionKind::Gain {
            let expected = space.raw_dim();
            check_dim("demo action", expected, demos.action_dim())?;
            if demos.with_factor != space.with_factor() {
                return Err(Error::invalid("demo damping-factor layout does not match the action space"));
            }
        }
        let obs_dim = obs.obs_dim(demos.dof());
        let act_dim = space.raw_dim();
        let demo_pairs = demos.pairs(&space, obs.is_history())?;
        let learner = Learner::new(obs_dim, act_dim, &airl.policy_hidden, trpo, seed)?;
        let mut r = rng::stream(seed, "reward-init", 0);
        let reward = RewardNet::init(obs_dim, act_dim, &airl.reward_hidden, &mut r)?;
        Ok(Self {
            disc: Discriminator::new(reward, airl),
            learner,
            iteration: 0,
            demo_pairs,
            space,
            obs,
        })
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.learner.policy
    }

    pub fn reward(&self) -> &RewardNet {
        &self.disc.reward
    }

    fn save_checkpoints(&self, dir: &Path, tag: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        Checkpoint::from_policy(self.policy())
            .with_meta("iteration", self.iteration)
            .with_meta("action_space", self.space.kind())
            .with_meta("observation", self.obs.label())
            .save(&dir.join(format!("policy-{tag}.json")))?;
        Checkpoint::from_reward(self.reward())
            .with_meta("iteration", self.iteration)
            .with_meta("action_space", self.space.kind())
            .with_meta("observation", self.obs.label())
            .save(&dir.join(format!("reward-{tag}.json")))?;
        Checkpoint::from_value(&self.learner.value.net).save(&dir.join(format!("value-{tag}.json")))
    }
}

/// Where training writes checkpoints and its log.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

/// One adversarial iteration: rollouts, discriminator step, relabelling,
/// value fit, trust-region step.
pub fn airl_iteration(
    state: &mut AirlState,
    spec: &EnvSpec,
    airl: &AirlConfig,
    trpo: &TrustRegionConfig,
    weights: &ScoreWeights,
    seed: u64,
) -> Result<(IterationLog, bool)> {
    let it = state.iteration as u64;
    let agent = Agent {
        policy: &state.learner.policy,
        space: &state.space,
        obs: state.obs,
    };
    let mut batch = collect_rollouts(spec, &agent, RewardSource::Zero, weights, trpo, seed, it)?;

    let demo_all = demo_samples(&state.demo_pairs, &state.learner.policy)?;
    let pol = policy_samples(&batch);
    let mut r = rng::stream(seed, "disc", it);
    // draw the demo side to match the policy sample count
    let mut idx: Vec<usize> = (0..demo_all.len()).collect();
    idx.shuffle(&mut r);
    let demo: Vec<DiscSample> = idx
        .iter()
        .cycle()
        .take(pol.len())
        .map(|&i| demo_all[i].clone())
        .collect();
    let (loss, disc_skipped) = state.disc.update(&demo, &pol, airl, &mut r)?;

    let source = match airl.generator_reward {
        GeneratorReward::EntropyRegularized => RewardSource::Adversarial(&state.disc.reward),
        GeneratorReward::Plain => RewardSource::Learned(&state.disc.reward),
    };
    batch.relabel(source)?;
    let info = state.learner.improve(&batch, trpo, seed, it)?;
    state.iteration += 1;
    Ok((
        IterationLog {
            iteration: it as usize,
            mean_return: batch.mean_return(),
            mean_score: batch.mean_score(),
            kl: info.kl,
            surrogate_improvement: info.surrogate_improvement,
            success_rate: batch.success_rate(),
            accepted: info.accepted,
            disc_loss: Some(loss),
        },
        disc_skipped || info.skipped,
    ))
}

/// Run `airl.iterations` adversarial iterations; `on_iter` may stop early by returning false.
pub fn train(
    state: &mut AirlState,
    spec: &EnvSpec,
    airl: &AirlConfig,
    trpo: &TrustRegionConfig,
    weights: &ScoreWeights,
    seed: u64,
    out: &TrainOutput,
    mut on_iter: impl FnMut(&AirlState, &IterationLog) -> bool,
) -> Result<Vec<IterationLog>> {
    trpo.validate()?;
    if let Some(dir) = &out.dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log = Vec::with_capacity(airl.iterations);
    let mut nonfinite = 0;
    for _ in 0..airl.iterations {
        let (row, bad) = airl_iteration(state, spec, airl, trpo, weights, seed)?;
        nonfinite = if bad { nonfinite + 1 } else { 0 };
        if let Some(dir) = &out.dir {
            append_log(&dir.join("train_log.csv"), &row)?;
            if airl.checkpoint_every > 0 && state.iteration % airl.checkpoint_every == 0 {
                state.save_checkpoints(dir, &format!("{:04}", state.iteration))?;
            }
        }
        let go_on = on_iter(state, &row);
        log.push(row);
        if nonfinite >= airl.max_nonfinite {
            return Err(Error::TrainingAborted(format!("{nonfinite} consecutive non-finite updates")));
        }
        if !go_on {
            break;
        }
    }
    if let Some(dir) = &out.dir {
        state.save_checkpoints(dir, "final")?;
    }
    Ok(log)
}

/// Outcome of one re-optimization restart.
#[derive(Debug, Clone)]
pub struct Restart {
    pub index: usize,
    pub policy: GaussianPolicy,
    /// Mean performance over the selection episodes, deterministic execution.
    pub score: f64,
    pub success_rate: f64,
    pub log: Vec<IterationLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReoptConfig {
    pub iterations: usize,
    pub restarts: usize,
    /// Restarts kept for reporting.
    pub keep: usize,
    /// Episodes used to rank restarts.
    pub selection_episodes: usize,
    /// Start from the trained policy instead of fresh weights.
    pub warm_start: bool,
    pub policy_hidden: Vec<usize>,
}

impl Default for ReoptConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            restarts: 5,
            keep: 3,
            selection_episodes: 10,
            warm_start: false,
            policy_hidden: vec![32, 32],
        }
    }
}

/// Train fresh policies against the frozen `reward` in `spec`; restarts come
/// back sorted best first by performance score.
#[allow(clippy::too_many_arguments)]
pub fn reoptimize(
    reward: &RewardNet,
    spec: &EnvSpec,
    space: &ActionSpace,
    obs: ObsMode,
    cfg: &ReoptConfig,
    trpo: &TrustRegionConfig,
    weights: &ScoreWeights,
    warm: Option<&GaussianPolicy>,
    seed: u64,
) -> Result<Vec<Restart>> {
    trpo.validate()?;
    let obs_dim = obs.obs_dim(spec.dof);
    check_dim("reward observation", obs_dim, reward.obs_dim)?;
    check_dim("reward action", space.raw_dim(), reward.act_dim)?;
    let mut out = Vec::with_capacity(cfg.restarts);
    for k in 0..cfg.restarts {
        let s = rng::child_seed(seed, "restart", k as u64);
        let mut learner = Learner::new(obs_dim, space.raw_dim(), &cfg.policy_hidden, trpo, s)?;
        if let (true, Some(p)) = (cfg.warm_start, warm) {
            learner.policy = p.clone();
        }
        let mut log = Vec::with_capacity(cfg.iterations);
        for it in 0..cfg.iterations {
            log.push(trpo_iteration(
                spec,
                &mut learner,
                space,
                obs,
                RewardSource::Learned(reward),
                weights,
                trpo,
                s,
                it as u64,
            )?);
        }
        let agent = Agent {
            policy: &learner.policy,
            space,
            obs,
        };
        let eps = run_episodes(
            spec,
            &agent,
            weights,
            trpo.traj_len,
            s,
            "select",
            0..cfg.selection_episodes as u64,
            false,
        )?;
        let n = eps.len().max(1) as f64;
        out.push(Restart {
            index: k,
            score: eps.iter().map(|e| e.score()).sum::<f64>() / n,
            success_rate: eps.iter().filter(|e| e.trajectory.success).count() as f64 / n,
            policy: learner.policy,
            log,
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(out)
}
