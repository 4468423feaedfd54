//! JSON checkpoints for networks.
//!
//! ```text
//! {"format":"impedance-irl/checkpoint","version":1,"role":"policy",
//!  "obs_dim":6,"act_dim":3,"sizes":[6,32,32,3],"activation":"tanh",
//!  "params":[...],"log_std":[...],"meta":{...}}
//! ```
//!
//! Floats are written in shortest round-trip form; loading restores the
//! exact parameter bits.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use super::policy::{GaussianPolicy, RewardNet};
use crate::error::{Error, Result};

const FORMAT: &str = "impedance-irl/checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Policy,
    Reward,
    Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub role: Role,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
    #[serde(default)]
    pub log_std: Vec<f64>,
    /// Free-form run metadata (task, action space, observation mode, ...).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    fn of(role: Role, net: &Mlp, obs_dim: usize, act_dim: usize, log_std: Vec<f64>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            role,
            obs_dim,
            act_dim,
            sizes: net.sizes().to_vec(),
            activation: net.activation(),
            params: net.flatten(),
            log_std,
            meta: BTreeMap::new(),
        }
    }

    pub fn from_policy(p: &GaussianPolicy) -> Self {
        Self::of(Role::Policy, &p.mean, p.obs_dim(), p.act_dim(), p.log_std().to_vec())
    }

    pub fn from_reward(r: &RewardNet) -> Self {
        Self::of(Role::Reward, &r.net, r.obs_dim, r.act_dim, Vec::new())
    }

    pub fn from_value(v: &Mlp) -> Self {
        Self::of(Role::Value, v, v.input_dim(), 0, Vec::new())
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    fn net(&self) -> Result<Mlp> {
        Mlp::from_flat(&self.sizes, self.activation, self.params.clone())
    }

    fn expect(&self, role: Role) -> Result<()> {
        if self.role == role {
            Ok(())
        } else {
            Err(Error::invalid(format!("checkpoint holds a {:?} network, not a {role:?}", self.role)))
        }
    }

    pub fn policy(&self) -> Result<GaussianPolicy> {
        self.expect(Role::Policy)?;
        GaussianPolicy::new(self.net()?, self.log_std.clone())
    }

    pub fn reward(&self) -> Result<RewardNet> {
        self.expect(Role::Reward)?;
        Ok(RewardNet {
            net: self.net()?,
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
        })
    }

    pub fn value(&self) -> Result<Mlp> {
        self.expect(Role::Value)?;
        self.net()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::format(&name, e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::format(&name, format!("unsupported format {} v{}", ck.format, ck.version)));
        }
        // validates the layer layout against the parameter count
        ck.net().map_err(|e| Error::format(&name, e.to_string()))?;
        Ok(ck)
    }
}
