//! Behavior cloning: maximum likelihood of demo actions under a Gaussian policy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::action::ActionSpace;
use crate::approx::{Activation, Adam, GaussianPolicy, Mlp};
use crate::envsim::EnvSpec;
use crate::error::{check_dim, Error, Result};
use crate::evalharness::scores::ScoreWeights;
use crate::impedance::{from_positive_gains, GainAction};
use crate::rng::Rng;
use crate::rollout::{run_episodes, Agent, ObsMode};
use crate::trajectory::DemoSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub validation_fraction: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub hidden: Vec<usize>,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            minibatch: 128,
            lr: 1e-3,
            validation_fraction: 0.1,
            patience: 10,
            hidden: vec![32, 32],
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::invalid("validation fraction must lie in (0, 0.5)"));
        }
        if self.minibatch == 0 || !(self.lr > 0.0) {
            return Err(Error::invalid("minibatch and learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcReport {
    /// Mean training NLL per completed epoch.
    pub train_nll: Vec<f64>,
    pub val_nll: Vec<f64>,
    pub best_epoch: Option<usize>,
}

impl BcReport {
    pub fn final_train(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.train_nll[e])
    }

    pub fn final_val(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.val_nll[e])
    }
}

fn mean_nll(policy: &GaussianPolicy, pairs: &[&(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut acc = 0.0;
    for (o, a) in pairs {
        acc -= policy.log_prob(o, a)?;
    }
    Ok(acc / pairs.len().max(1) as f64)
}

/// Fit `policy` to `(features, raw action)` pairs. The validation split is
/// drawn once from `rng`; the returned policy is the one with the best
/// validation NLL.
pub fn bc_fit_pairs(
    pairs: &[(Vec<f64>, Vec<f64>)],
    policy: &GaussianPolicy,
    cfg: &BcConfig,
    rng: &mut Rng,
) -> Result<(GaussianPolicy, BcReport)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("demo set"));
    }
    check_dim("demo observation", policy.obs_dim(), pairs[0].0.len())?;
    check_dim("demo action", policy.act_dim(), pairs[0].1.len())?;

    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(rng);
    let n_val = ((pairs.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, pairs.len());
    let val: Vec<&(Vec<f64>, Vec<f64>)> = idx[..n_val].iter().map(|&i| &pairs[i]).collect();
    // a single pair trains and validates on itself
    let train: Vec<&(Vec<f64>, Vec<f64>)> = if n_val < pairs.len() {
        idx[n_val..].iter().map(|&i| &pairs[i]).collect()
    } else {
        val.clone()
    };

    let mut cur = policy.clone();
    let mut best = policy.clone();
    let mut best_val = f64::INFINITY;
    let mut report = BcReport {
        train_nll: Vec::new(),
        val_nll: Vec::new(),
        best_epoch: None,
    };
    let mut params = cur.flatten();
    let mut opt = Adam::new(params.len(), cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_nll = 0.0;
        for chunk in order.chunks(cfg.minibatch) {
            let mut g = vec![0.0; params.len()];
            for &i in chunk {
                let (lp, gi) = cur.log_prob_grad(&train[i].0, &train[i].1)?;
                epoch_nll -= lp;
                for (a, b) in g.iter_mut().zip(&gi) {
                    *a -= b / chunk.len() as f64;
                }
            }
            if g.iter().all(|v| v.is_finite()) {
                opt.step(&mut params, &g);
                cur.set_flat(&params)?;
                // the log-std clamp may have moved the parameters
                params = cur.flatten();
            }
        }
        report.train_nll.push(epoch_nll / train.len() as f64);
        let v = mean_nll(&cur, &val)?;
        report.val_nll.push(v);
        if v < best_val {
            best_val = v;
            best = cur.clone();
            report.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best, report))
}

/// BC on a demo set in the given action space and observation mode.
pub fn bc_fit(
    demos: &DemoSet,
    space: &ActionSpace,
    obs: ObsMode,
    policy: &GaussianPolicy,
    cfg: &BcConfig,
    rng: &mut Rng,
) -> Result<(GaussianPolicy, BcReport)> {
    if demos.trajectories.is_empty() {
        return Err(Error::Empty("demo set"));
    }
    check_dim("policy action", space.raw_dim(), policy.act_dim())?;
    let pairs = demos.pairs(space, obs.is_history())?;
    bc_fit_pairs(&pairs, policy, cfg, rng)
}

/// Least-squares constant gain: the mean demo gain, executed through a
/// policy whose mean ignores the observation.
pub fn constant_gain_policy(demos: &DemoSet, space: &ActionSpace, obs: ObsMode) -> Result<GaussianPolicy> {
    let ActionSpace::Gain(bounds) = space else {
        return Err(Error::invalid("the constant-gain baseline needs a gain action space"));
    };
    let steps: Vec<&Vec<f64>> = demos.trajectories.iter().flat_map(|t| t.steps.iter().map(|s| &s.action)).collect();
    if steps.is_empty() {
        return Err(Error::Empty("demo set"));
    }
    let dim = space.raw_dim();
    check_dim("demo action", dim, steps[0].len())?;
    let mut mean = vec![0.0; dim];
    for a in &steps {
        for (m, v) in mean.iter_mut().zip(a.iter()) {
            *m += v / steps.len() as f64;
        }
    }
    let gains = GainAction::from_vec(&mean, space.with_factor())?;
    let raw = from_positive_gains(&gains, bounds)?;
    let obs_dim = obs.obs_dim(demos.dof());
    let mut params = vec![0.0; obs_dim * dim];
    params.extend_from_slice(&raw);
    GaussianPolicy::new(
        Mlp::from_flat(&[obs_dim, dim], Activation::Tanh, params)?,
        vec![crate::approx::LOG_STD_MIN; dim],
    )
}

/// Success rate and mean score of deterministic episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_score: f64,
}

/// Mean-action rollouts of `policy` in `spec`, one reset stream per episode.
pub fn bc_evaluate(
    policy: &GaussianPolicy,
    space: &ActionSpace,
    obs: ObsMode,
    spec: &EnvSpec,
    weights: &ScoreWeights,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let agent = Agent { policy, space, obs };
    let eps = run_episodes(spec, &agent, weights, spec.horizon, seed, "eval", 0..episodes as u64, false)?;
    Ok(summarize(eps.iter().map(|e| (e.trajectory.success, e.score()))))
}

pub fn summarize(items: impl Iterator<Item = (bool, f64)>) -> EvalSummary {
    let (mut n, mut ok, mut score) = (0usize, 0usize, 0.0);
    for (s, sc) in items {
        n += 1;
        ok += s as usize;
        score += sc;
    }
    EvalSummary {
        episodes: n,
        successes: ok,
        success_rate: if n == 0 { 0.0 } else { ok as f64 / n as f64 },
        mean_score: if n == 0 { 0.0 } else { score / n as f64 },
    }
}

/// Mean relative error of the executed action against the demo action on
/// the given pairs; gains compare after squashing, forces after `tanh`.
pub fn action_error(policy: &GaussianPolicy, space: &ActionSpace, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (o, a) in pairs {
        let mu = policy.mean_action(o)?;
        let (p, t) = match space {
            ActionSpace::Gain(b) => (
                crate::impedance::to_positive_gains(&mu, b)?.to_vec(),
                crate::impedance::to_positive_gains(a, b)?.to_vec(),
            ),
            ActionSpace::Force { f_max } => (
                crate::impedance::squash_force(&mu, f_max)?,
                crate::impedance::squash_force(a, f_max)?,
            ),
        };
        let num: f64 = p.iter().zip(&t).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = t.iter().map(|y| y * y).sum::<f64>().sqrt();
        acc += num / den.max(1e-12);
        n += 1;
    }
    Ok(acc / n.max(1) as f64)
}
