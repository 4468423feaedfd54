//! Trust-region policy optimization for diagonal Gaussian policies.
//!
//! The natural-gradient direction solves `F s = g` by conjugate gradient,
//! where the Fisher-vector product is exact for a Gaussian whose spread does
//! not depend on the state: `F v = E[J_μᵀ Σ⁻¹ J_μ v_μ] ⊕ 2·v_logσ`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::approx::{Activation, Adam, GaussianPolicy, Mlp, RewardNet};
use crate::envsim::EnvSpec;
use crate::error::{Error, Result};
use crate::evalharness::scores::ScoreWeights;
use crate::rng::{self, Rng};
use crate::rollout::{run_episodes, Agent, EpisodeRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegionConfig {
    pub batch_size: usize,
    pub traj_len: usize,
    pub max_kl: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_steps: usize,
    pub backtrack_ratio: f64,
    pub gae_gamma: f64,
    pub gae_lambda: f64,
    /// Fisher-vector products use every `fvp_stride`-th batch state.
    pub fvp_stride: usize,
    pub value_hidden: Vec<usize>,
    pub value_epochs: usize,
    pub value_minibatch: usize,
    pub value_lr: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            batch_size: 8000,
            traj_len: 200,
            max_kl: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_steps: 10,
            backtrack_ratio: 0.8,
            gae_gamma: 0.99,
            gae_lambda: 0.97,
            fvp_stride: 5,
            value_hidden: vec![32, 32],
            value_epochs: 5,
            value_minibatch: 128,
            value_lr: 1e-3,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_kl > 0.0
            && self.gae_gamma > 0.0
            && self.gae_gamma <= 1.0
            && self.gae_lambda > 0.0
            && self.gae_lambda <= 1.0
            && self.batch_size > 0
            && self.traj_len > 0
            && self.fvp_stride > 0
            && self.backtrack_ratio > 0.0
            && self.backtrack_ratio < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "trust region needs max_kl > 0, 0 < gamma, lambda <= 1, positive sizes and 0 < backtrack ratio < 1"
                    .into(),
            ))
        }
    }
}

/// Per-step training signal.
#[derive(Debug, Clone, Copy)]
pub enum RewardSource<'a> {
    /// The task performance function.
    Performance,
    /// A learned reward used as is.
    Learned(&'a RewardNet),
    /// `r(o, a) - log π(a|o)`, the adversarial generator signal.
    Adversarial(&'a RewardNet),
    Zero,
}

#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub episodes: Vec<EpisodeRecord>,
    pub rewards: Vec<Vec<f64>>,
    pub total_steps: usize,
    pub policy_snapshot_id: u64,
}

impl RolloutBatch {
    pub fn samples(&self) -> impl Iterator<Item = (&Vec<f64>, &Vec<f64>)> {
        self.episodes
            .iter()
            .flat_map(|ep| ep.features.iter().zip(&ep.raw_actions))
    }

    pub fn mean_return(&self) -> f64 {
        mean(self.rewards.iter().map(|r| r.iter().sum::<f64>()))
    }

    pub fn mean_score(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.score()))
    }

    pub fn success_rate(&self) -> f64 {
        mean(self.episodes.iter().map(|e| if e.trajectory.success { 1.0 } else { 0.0 }))
    }

    /// Recompute rewards from `source`.
    pub fn relabel(&mut self, source: RewardSource<'_>) -> Result<()> {
        self.rewards = self
            .episodes
            .iter()
            .map(|ep| label_episode(ep, source))
            .collect::<Result<_>>()?;
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn label_episode(ep: &EpisodeRecord, source: RewardSource<'_>) -> Result<Vec<f64>> {
    match source {
        RewardSource::Performance => Ok(ep.perf.clone()),
        RewardSource::Zero => Ok(vec![0.0; ep.len()]),
        RewardSource::Learned(net) => ep
            .features
            .iter()
            .zip(&ep.raw_actions)
            .map(|(o, a)| net.eval(o, a))
            .collect(),
        RewardSource::Adversarial(net) => ep
            .features
            .iter()
            .zip(&ep.raw_actions)
            .zip(&ep.log_probs)
            .map(|((o, a), lp)| Ok(net.eval(o, a)? - lp))
            .collect(),
    }
}

/// Collect whole episodes until at least `batch_size` steps are in hand.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    spec: &EnvSpec,
    agent: &Agent<'_>,
    source: RewardSource<'_>,
    weights: &ScoreWeights,
    cfg: &TrustRegionConfig,
    seed: u64,
    iteration: u64,
) -> Result<RolloutBatch> {
    let name = format!("rollout-{iteration}");
    let mut episodes: Vec<EpisodeRecord> = Vec::new();
    let mut total = 0;
    let mut next = 0u64;
    while total < cfg.batch_size {
        let need = (cfg.batch_size - total).div_ceil(cfg.traj_len) as u64;
        let eps = run_episodes(spec, agent, weights, cfg.traj_len, seed, &name, next..next + need, true)?;
        next += need;
        for ep in eps {
            total += ep.len();
            episodes.push(ep);
        }
        if next > 100 * cfg.batch_size as u64 {
            return Err(Error::TrainingAborted("episodes keep diverging immediately".into()));
        }
    }
    let mut batch = RolloutBatch {
        episodes,
        rewards: Vec::new(),
        total_steps: total,
        policy_snapshot_id: iteration,
    };
    batch.relabel(source)?;
    Ok(batch)
}

/// Normalized GAE advantages and value targets, flattened in batch order.
#[derive(Debug, Clone)]
pub struct Advantages {
    pub advantages: Vec<f64>,
    pub raw: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation. A time-out bootstraps from the value of
/// the final observation; a diverged episode is treated as terminal.
pub fn compute_advantages(batch: &RolloutBatch, value: &Mlp, cfg: &TrustRegionConfig) -> Result<Advantages> {
    let mut raw = Vec::with_capacity(batch.total_steps);
    let mut returns = Vec::with_capacity(batch.total_steps);
    for (ep, rewards) in batch.episodes.iter().zip(&batch.rewards) {
        let n = ep.len();
        if n == 0 {
            continue;
        }
        let mut v: Vec<f64> = ep
            .features
            .iter()
            .map(|o| Ok(value.forward(o)?[0]))
            .collect::<Result<_>>()?;
        let last = if ep.diverged { 0.0 } else { value.forward(&ep.final_features)?[0] };
        v.push(last);
        let mut adv = vec![0.0; n];
        let mut acc = 0.0;
        for t in (0..n).rev() {
            let delta = rewards[t] + cfg.gae_gamma * v[t + 1] - v[t];
            acc = delta + cfg.gae_gamma * cfg.gae_lambda * acc;
            adv[t] = acc;
        }
        for t in 0..n {
            returns.push(adv[t] + v[t]);
        }
        raw.extend(adv);
    }
    Ok(Advantages {
        advantages: normalize(&raw),
        raw,
        returns,
    })
}

/// Zero-mean unit-variance copy; all zeros when the spread is below 1e-8.
pub fn normalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt();
    if sd < 1e-8 {
        vec![0.0; x.len()]
    } else {
        x.iter().map(|v| (v - m) / sd).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateInfo {
    pub accepted: bool,
    pub kl: f64,
    pub surrogate_improvement: f64,
    pub expected_improvement: f64,
    pub step_fraction: f64,
    /// The gradient or search direction was not finite.
    pub skipped: bool,
}

impl UpdateInfo {
    fn rejected(skipped: bool) -> Self {
        Self {
            accepted: false,
            kl: 0.0,
            surrogate_improvement: 0.0,
            expected_improvement: 0.0,
            step_fraction: 0.0,
            skipped,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean KL(old ‖ new) between diagonal Gaussians at the given means.
pub fn mean_kl(old_mu: &[Vec<f64>], old_ls: &[f64], new: &GaussianPolicy, states: &[&Vec<f64>]) -> Result<f64> {
    let new_ls = new.log_std();
    let mut total = 0.0;
    for (o, mu0) in states.iter().zip(old_mu) {
        let mu1 = new.mean_action(o)?;
        for i in 0..mu1.len() {
            let v0 = (2.0 * old_ls[i]).exp();
            let v1 = (2.0 * new_ls[i]).exp();
            let d = mu0[i] - mu1[i];
            total += new_ls[i] - old_ls[i] + (v0 + d * d) / (2.0 * v1) - 0.5;
        }
    }
    Ok(total / states.len().max(1) as f64)
}

/// Damped Fisher-vector product at the current policy over `states`.
pub fn fisher_vector_product(policy: &GaussianPolicy, states: &[&Vec<f64>], v: &[f64], damping: f64) -> Result<Vec<f64>> {
    let n_mean = policy.mean.num_params();
    let inv_var: Vec<f64> = policy.log_std().iter().map(|s| (-2.0 * s).exp()).collect();
    let mut out = vec![0.0; v.len()];
    for o in states {
        let (_, jv) = policy.mean.jvp(o, &v[..n_mean])?;
        let trace = policy.mean.forward_trace(o)?;
        let cot: Vec<f64> = jv.iter().zip(&inv_var).map(|(a, b)| a * b).collect();
        policy.mean.backward(&trace, &cot, &mut out[..n_mean])?;
    }
    let scale = 1.0 / states.len().max(1) as f64;
    for x in &mut out[..n_mean] {
        *x *= scale;
    }
    for i in n_mean..v.len() {
        out[i] = 2.0 * v[i];
    }
    for (o, x) in out.iter_mut().zip(v) {
        *o += damping * x;
    }
    Ok(out)
}

/// Conjugate gradient for `A x = b` with `A` given as a product.
pub fn conjugate_gradient(mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>, b: &[f64], iters: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr < 1e-12 {
            break;
        }
        let ap = apply(&p)?;
        let alpha = rr / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(x)
}

/// One trust-region step on `policy`. Parameters stay untouched unless a
/// backtracking step improves the surrogate within the KL limit.
pub fn policy_update(
    policy: &mut GaussianPolicy,
    batch: &RolloutBatch,
    adv: &[f64],
    cfg: &TrustRegionConfig,
) -> Result<UpdateInfo> {
    let samples: Vec<(&Vec<f64>, &Vec<f64>)> = batch.samples().collect();
    let old_lp: Vec<f64> = batch.episodes.iter().flat_map(|e| e.log_probs.iter().copied()).collect();
    if samples.len() != adv.len() || old_lp.len() != adv.len() {
        return Err(Error::invalid("advantages do not line up with the batch"));
    }
    if adv.iter().all(|a| *a == 0.0) {
        return Ok(UpdateInfo::rejected(false));
    }
    let n = samples.len() as f64;
    let old_params = policy.flatten();
    let mut g = vec![0.0; old_params.len()];
    for ((o, a), w) in samples.iter().zip(adv) {
        let (_, lg) = policy.log_prob_grad(o, a)?;
        for (gi, li) in g.iter_mut().zip(&lg) {
            *gi += w * li / n;
        }
    }
    if !g.iter().all(|v| v.is_finite()) {
        return Ok(UpdateInfo::rejected(true));
    }

    let states: Vec<&Vec<f64>> = samples.iter().map(|(o, _)| *o).collect();
    let sub: Vec<&Vec<f64>> = states.iter().step_by(cfg.fvp_stride).copied().collect();
    let s = conjugate_gradient(|v| fisher_vector_product(policy, &sub, v, cfg.cg_damping), &g, cfg.cg_iters)?;
    let shs = dot(&s, &fisher_vector_product(policy, &sub, &s, cfg.cg_damping)?);
    if !(shs.is_finite() && shs > 0.0) || !s.iter().all(|v| v.is_finite()) {
        return Ok(UpdateInfo::rejected(true));
    }
    let scale = (2.0 * cfg.max_kl / shs).sqrt();
    let full: Vec<f64> = s.iter().map(|v| v * scale).collect();
    let expected = dot(&g, &full);

    let old_mu: Vec<Vec<f64>> = states.iter().map(|o| policy.mean_action(o)).collect::<Result<_>>()?;
    let old_ls = policy.log_std().to_vec();
    let surrogate = |p: &GaussianPolicy| -> Result<f64> {
        let mut acc = 0.0;
        for (((o, a), w), lp0) in samples.iter().zip(adv).zip(&old_lp) {
            acc += (p.log_prob(o, a)? - lp0).exp() * w;
        }
        Ok(acc / n)
    };
    let base = surrogate(policy)?;
    let mut frac = 1.0;
    let mut candidate = policy.clone();
    for _ in 0..cfg.backtrack_steps {
        let params: Vec<f64> = old_params.iter().zip(&full).map(|(p, d)| p + frac * d).collect();
        candidate.set_flat(&params)?;
        let improve = surrogate(&candidate)? - base;
        let kl = mean_kl(&old_mu, &old_ls, &candidate, &states)?;
        if improve.is_finite() && kl.is_finite() && improve > 0.0 && kl <= cfg.max_kl {
            *policy = candidate;
            return Ok(UpdateInfo {
                accepted: true,
                kl,
                surrogate_improvement: improve,
                expected_improvement: expected,
                step_fraction: frac,
                skipped: false,
            });
        }
        frac *= cfg.backtrack_ratio;
    }
    Ok(UpdateInfo::rejected(false))
}

/// State-value regressor with its own optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub net: Mlp,
    opt: Adam,
}

impl ValueFunction {
    pub fn new(obs_dim: usize, cfg: &TrustRegionConfig, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&cfg.value_hidden);
        sizes.push(1);
        let net = Mlp::init(&sizes, Activation::Tanh, 1.0, rng)?;
        let opt = Adam::new(net.num_params(), cfg.value_lr);
        Ok(Self { net, opt })
    }

    pub fn from_net(net: Mlp, lr: f64) -> Self {
        let opt = Adam::new(net.num_params(), lr);
        Self { net, opt }
    }

    pub fn loss(&self, states: &[&Vec<f64>], targets: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (o, t) in states.iter().zip(targets) {
            let d = self.net.forward(o)?[0] - t;
            acc += d * d;
        }
        Ok(acc / states.len().max(1) as f64)
    }
}

/// Minibatch regression onto `returns`; yields the full-batch loss before
/// fitting and after every epoch.
pub fn fit_value(
    value: &mut ValueFunction,
    states: &[&Vec<f64>],
    returns: &[f64],
    epochs: usize,
    minibatch: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut losses = vec![value.loss(states, returns)?];
    let mut order: Vec<usize> = (0..states.len()).collect();
    let mb = minibatch.max(1);
    let mut params = value.net.flatten();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let mut g = vec![0.0; params.len()];
            for &i in chunk {
                let trace = value.net.forward_trace(states[i])?;
                let d = 2.0 * (trace.output()[0] - returns[i]) / chunk.len() as f64;
                value.net.backward(&trace, &[d], &mut g)?;
            }
            if g.iter().all(|v| v.is_finite()) {
                value.opt.step(&mut params, &g);
                value.net.set_params(&params)?;
            }
        }
        losses.push(value.loss(states, returns)?);
    }
    Ok(losses)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub mean_return: f64,
    pub mean_score: f64,
    pub kl: f64,
    pub surrogate_improvement: f64,
    pub success_rate: f64,
    pub accepted: bool,
    /// Discriminator loss after its update, adversarial training only.
    pub disc_loss: Option<f64>,
}

pub fn write_log(path: &Path, rows: &[IterationLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Append one row, writing the header when the file is new.
pub fn append_log(path: &Path, row: &IterationLog) -> Result<()> {
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row)?;
    w.flush()?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
    Ok(())
}

/// Policy plus value function, the state of a plain TRPO run.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policy: GaussianPolicy,
    pub value: ValueFunction,
}

impl Learner {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], cfg: &TrustRegionConfig, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, "init", 0);
        let policy = GaussianPolicy::init(obs_dim, hidden, act_dim, &mut r)?;
        let value = ValueFunction::new(obs_dim, cfg, &mut r)?;
        Ok(Self { policy, value })
    }

    /// Value fit then policy step on an already labelled batch.
    pub fn improve(&mut self, batch: &RolloutBatch, cfg: &TrustRegionConfig, seed: u64, iteration: u64) -> Result<UpdateInfo> {
        let adv = compute_advantages(batch, &self.value.net, cfg)?;
        let states: Vec<&Vec<f64>> = batch.samples().map(|(o, _)| o).collect();
        let mut r = rng::stream(seed, "value", iteration);
        fit_value(&mut self.value, &states, &adv.returns, cfg.value_epochs, cfg.value_minibatch, &mut r)?;
        policy_update(&mut self.policy, batch, &adv.advantages, cfg)
    }
}

/// One full TRPO iteration against a fixed reward source.
#[allow(clippy::too_many_arguments)]
pub fn trpo_iteration(
    spec: &EnvSpec,
    learner: &mut Learner,
    space: &crate::action::ActionSpace,
    obs: crate::rollout::ObsMode,
    source: RewardSource<'_>,
    weights: &ScoreWeights,
    cfg: &TrustRegionConfig,
    seed: u64,
    iteration: u64,
) -> Result<IterationLog> {
    let agent = Agent {
        policy: &learner.policy,
        space,
        obs,
    };
    let batch = collect_rollouts(spec, &agent, source, weights, cfg, seed, iteration)?;
    let info = learner.improve(&batch, cfg, seed, iteration)?;
    Ok(IterationLog {
        iteration: iteration as usize,
        mean_return: batch.mean_return(),
        mean_score: batch.mean_score(),
        kl: info.kl,
        surrogate_improvement: info.surrogate_improvement,
        success_rate: batch.success_rate(),
        accepted: info.accepted,
        disc_loss: None,
    })
}

/// Write rows as CSV into any writer.
pub fn log_to_writer<W: Write>(w: W, rows: &[IterationLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
