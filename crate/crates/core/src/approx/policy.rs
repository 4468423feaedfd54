use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use crate::error::{check_dim, Result};
use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const INITIAL_LOG_STD: f64 = -0.5;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian over the pre-squash action with a state-independent spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(mean: Mlp, log_std: Vec<f64>) -> Result<Self> {
        check_dim("log_std", mean.output_dim(), log_std.len())?;
        let mut p = Self { mean, log_std };
        p.clamp_log_std();
        Ok(p)
    }

    /// `obs_dim → hidden → hidden → act_dim` tanh policy, final layer scaled
    /// by 0.01 so the initial mean sits near the action midpoint.
    pub fn init(obs_dim: usize, hidden: &[usize], act_dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(act_dim);
        let mean = Mlp::init(&sizes, Activation::Tanh, 0.01, rng)?;
        Self::new(mean, vec![INITIAL_LOG_STD; act_dim])
    }

    fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn set_log_std(&mut self, v: &[f64]) -> Result<()> {
        check_dim("log_std", self.log_std.len(), v.len())?;
        self.log_std.copy_from_slice(v);
        self.clamp_log_std();
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.mean.num_params() + self.log_std.len()
    }

    /// `[mean params.., log_std..]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.mean.flatten();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat(&mut self, p: &[f64]) -> Result<()> {
        check_dim("policy parameters", self.num_params(), p.len())?;
        let n = self.mean.num_params();
        self.mean.set_params(&p[..n])?;
        self.set_log_std(&p[n..])
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.mean.forward(obs)
    }

    pub fn sample(&self, obs: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let mu = self.mean.forward(obs)?;
        Ok(mu
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mu = self.mean.forward(obs)?;
        log_density(&mu, &self.log_std, action)
    }

    /// `log π(a|o)` and its gradient w.r.t. the flat parameters.
    pub fn log_prob_grad(&self, obs: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim("action", self.act_dim(), action.len())?;
        let trace = self.mean.forward_trace(obs)?;
        let mu = trace.output();
        let lp = log_density(mu, &self.log_std, action)?;
        let n = self.mean.num_params();
        let mut g = vec![0.0; self.num_params()];
        let mut cot = Vec::with_capacity(self.act_dim());
        for i in 0..self.act_dim() {
            let var = (2.0 * self.log_std[i]).exp();
            let d = action[i] - mu[i];
            cot.push(d / var);
            g[n + i] = d * d / var - 1.0;
        }
        self.mean.backward(&trace, &cot, &mut g[..n])?;
        Ok((lp, g))
    }
}

/// Diagonal Gaussian log-density.
pub fn log_density(mean: &[f64], log_std: &[f64], x: &[f64]) -> Result<f64> {
    check_dim("action", mean.len(), x.len())?;
    Ok(mean
        .iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, s), a)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum())
}

/// Learned reward `r(o, a)` over the concatenated observation and raw action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardNet {
    pub net: Mlp,
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl RewardNet {
    pub fn init(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![obs_dim + act_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: Mlp::init(&sizes, Activation::Relu, 0.01, rng)?,
            obs_dim,
            act_dim,
        })
    }

    pub fn zeros(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut sizes = vec![obs_dim + act_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: Mlp::zeros(&sizes, Activation::Relu)?,
            obs_dim,
            act_dim,
        })
    }

    pub fn input(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_dim("reward observation", self.obs_dim, obs.len())?;
        check_dim("reward action", self.act_dim, action.len())?;
        Ok(obs.iter().chain(action).copied().collect())
    }

    pub fn eval(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&self.input(obs, action)?)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn one_d(log_std: f64) -> GaussianPolicy {
        GaussianPolicy::new(Mlp::zeros(&[1, 1], Activation::Tanh).unwrap(), vec![log_std]).unwrap()
    }

    #[test]
    fn log_prob_examples() {
        let p = one_d(0.0);
        assert!((p.log_prob(&[0.3], &[0.0]).unwrap() + 0.918_938_533_204_672_8).abs() < 1e-12);
        let at_one_sigma = p.log_prob(&[0.3], &[1.0]).unwrap();
        assert!((at_one_sigma - (-0.918_938_533_204_672_8 - 0.5)).abs() < 1e-12);

        let two = GaussianPolicy::new(Mlp::zeros(&[1, 2], Activation::Tanh).unwrap(), vec![0.0, 0.4]).unwrap();
        let joint = two.log_prob(&[0.0], &[0.7, -1.1]).unwrap();
        let split = log_density(&[0.0], &[0.0], &[0.7]).unwrap() + log_density(&[0.0], &[0.4], &[-1.1]).unwrap();
        assert!((joint - split).abs() < 1e-12);
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = one_d(-9.0);
        assert_eq!(p.log_std(), &[LOG_STD_MIN]);
        p.set_log_std(&[7.0]).unwrap();
        assert_eq!(p.log_std(), &[LOG_STD_MAX]);
    }

    #[test]
    fn density_integrates_to_one() {
        for s in [-1.3, 0.0, 0.8] {
            let sigma = f64::exp(s);
            let n = 20_000;
            let (lo, hi) = (-8.0 * sigma, 8.0 * sigma);
            let h = (hi - lo) / n as f64;
            // composite Simpson
            let f = |x: f64| log_density(&[0.0], &[s], &[x]).unwrap().exp();
            let mut acc = f(lo) + f(hi);
            for i in 1..n {
                acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            assert!((acc * h / 3.0 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_is_reproducible_and_calibrated() {
        let p = one_d(0.0);
        let a = p.sample(&[0.0], &mut stream(5, "s", 0)).unwrap();
        assert_eq!(a, p.sample(&[0.0], &mut stream(5, "s", 0)).unwrap());

        let mut r = stream(6, "s", 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| p.sample(&[0.0], &mut r).unwrap()[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.03);
    }

    #[test]
    fn floor_spread_keeps_samples_tight() {
        let p = one_d(LOG_STD_MIN);
        let mut r = stream(7, "s", 0);
        let inside = (0..10_000)
            .filter(|_| p.sample(&[0.0], &mut r).unwrap()[0].abs() <= 0.034)
            .count();
        assert!(inside >= 9_990);
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut r = stream(8, "s", 0);
        let mut p = GaussianPolicy::init(3, &[8, 8], 2, &mut r).unwrap();
        let mut flat = p.flatten();
        for v in flat.iter_mut() {
            *v += 0.2 * r.sample::<f64, _>(StandardNormal);
        }
        p.set_flat(&flat).unwrap();
        let (o, a) = ([0.2, -0.5, 1.0], [0.3, -0.8]);
        let (_, g) = p.log_prob_grad(&o, &a).unwrap();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut q = p.clone();
            let mut f = flat.clone();
            f[i] += h;
            q.set_flat(&f).unwrap();
            let up = q.log_prob(&o, &a).unwrap();
            f[i] -= 2.0 * h;
            q.set_flat(&f).unwrap();
            let down = q.log_prob(&o, &a).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }
}
