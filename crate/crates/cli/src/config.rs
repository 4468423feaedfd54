//! Experiment configuration.
//!
//! A config file only names what it changes. Defaults depend on the task, so
//! resolution merges the user table over the task's default table and then
//! deserializes with unknown keys rejected:
//!
//! ```toml
//! task = "cup-on-plate"
//! action_space = "force"
//! seed = 3
//!
//! [trpo]
//! batch_size = 2000
//!
//! [env.cup]
//! mass = 1.5
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use impedance_irl::action::ActionKind;
use impedance_irl::airl::{AirlConfig, ReoptConfig};
use impedance_irl::bc::BcConfig;
use impedance_irl::envsim::{EnvConfig, TaskKind};
use impedance_irl::evalharness::scores::ScoreWeights;
use impedance_irl::evalharness::transfer::{Family, SuiteConfig, Sweep};
use impedance_irl::rollout::ObsMode;
use impedance_irl::trpo::TrustRegionConfig;

pub const RESOLVED_NAME: &str = "resolved_config.toml";
pub const HASH_NAME: &str = "config.sha256";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    /// Demo file; relative paths resolve against the output directory.
    pub path: PathBuf,
    pub count: usize,
    /// Log-normal stiffness noise of human-like demos; 0 for noiseless.
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    /// Scenario family to sweep; ignored when `scenarios` is non-empty.
    pub sweep: Sweep,
    /// Explicit scenario labels, e.g. `["T1"]` or `["2", "0.3"]`.
    pub scenarios: Vec<String>,
    pub methods: Vec<String>,
    /// Directory holding one trained run per method, named by method label.
    pub artifacts: PathBuf,
    pub episodes: usize,
    /// Episodes per cell written out as trajectory dumps.
    pub dump_episodes: usize,
    pub reopt: ReoptConfig,
}

impl TransferConfig {
    pub fn suite(&self) -> SuiteConfig {
        SuiteConfig {
            episodes: self.episodes,
            reopt: self.reopt.clone(),
            dump_episodes: self.dump_episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub window: usize,
    pub stride: usize,
    /// Median-filter width over consecutive windows; 1 disables smoothing.
    pub smooth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub action_space: ActionKind,
    pub observation: ObsMode,
    pub method: Family,
    pub seed: u64,
    pub out: PathBuf,
    pub demos: DemoConfig,
    pub env: EnvConfig,
    pub trpo: TrustRegionConfig,
    pub airl: AirlConfig,
    pub bc: BcConfig,
    pub score: ScoreWeights,
    pub transfer: TransferConfig,
    pub estimate: EstimateConfig,
}

impl ExperimentConfig {
    pub fn defaults(task: TaskKind) -> Self {
        let (count, noise_sigma, sweep) = match task {
            TaskKind::CupOnPlate => (30, 0.2, Sweep::Start),
            _ => (50, 0.0, Sweep::Tilt),
        };
        let env = EnvConfig::for_task(task);
        let suite = SuiteConfig::default();
        let trpo = TrustRegionConfig {
            batch_size: if task == TaskKind::CupOnPlate { 10_000 } else { 8000 },
            traj_len: env.horizon,
            ..TrustRegionConfig::default()
        };
        Self {
            task,
            action_space: ActionKind::Gain,
            observation: ObsMode::Plain,
            method: Family::Airl,
            seed: 0,
            out: PathBuf::from("runs").join(task.label()),
            demos: DemoConfig {
                path: PathBuf::from("demos.jsonl"),
                count,
                noise_sigma,
            },
            env,
            trpo,
            airl: AirlConfig::default(),
            bc: BcConfig::default(),
            score: ScoreWeights::default(),
            transfer: TransferConfig {
                sweep,
                scenarios: Vec::new(),
                methods: ["gain-airl", "gain-bc", "force-airl", "force-bc", "constant-gain"]
                    .map(String::from)
                    .to_vec(),
                artifacts: PathBuf::from("."),
                episodes: suite.episodes,
                dump_episodes: suite.dump_episodes,
                reopt: suite.reopt,
            },
            estimate: EstimateConfig {
                window: impedance_irl::sysid::DEFAULT_WINDOW,
                stride: 1,
                smooth: 5,
            },
        }
    }

    /// Resolve `user` (a parsed config file with flag overrides applied).
    pub fn resolve(user: toml::Table) -> Result<Self, String> {
        let task = match user.get("task") {
            None => TaskKind::PegInHole,
            Some(toml::Value::String(s)) => s.parse().map_err(|e| format!("{e}"))?,
            Some(v) => return Err(format!("`task` must be a string, got {v}")),
        };
        let mut table = toml::Table::try_from(Self::defaults(task)).map_err(|e| e.to_string())?;
        merge(&mut table, user);
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.env.task != self.task {
            return Err(format!("env.task = {} contradicts task = {}", self.env.task, self.task));
        }
        if self.task == TaskKind::PointReach && self.method != Family::Airl {
            return Err("point-reach only supports the airl method".into());
        }
        if self.method == Family::ConstantGain && (self.action_space != ActionKind::Gain || self.observation.is_history()) {
            return Err("constant-gain requires action_space = gain, observation = plain".into());
        }
        if self.demos.count == 0 || !(self.demos.noise_sigma >= 0.0) {
            return Err("demos.count must be positive and demos.noise_sigma non-negative".into());
        }
        if self.estimate.window < 2 || self.estimate.stride == 0 || self.estimate.smooth == 0 {
            return Err("estimate.window ≥ 2, stride ≥ 1 and smooth ≥ 1 required".into());
        }
        if self.transfer.episodes == 0 {
            return Err("transfer.episodes must be positive".into());
        }
        self.trpo.validate().map_err(|e| e.to_string())?;
        self.bc.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the resolved config, minus the output location, and the
    /// crate version.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        h.update([0]);
        h.update(c.to_toml().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn demo_path(&self) -> PathBuf {
        self.out.join(&self.demos.path)
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.out.join(&self.transfer.artifacts)
    }

    /// Write the resolved config and its hash next to a command's outputs.
    pub fn record(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RESOLVED_NAME), self.to_toml())?;
        fs::write(dir.join(HASH_NAME), format!("{}\n", self.hash()))
    }
}

/// Recursive table merge; `over` wins, nested tables merge key by key.
pub fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Set `dotted.key = value` in `table`, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut t = table;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !entry.is_table() {
            *entry = toml::Value::Table(toml::Table::new());
        }
        t = entry.as_table_mut().expect("just made a table");
    }
    t.insert(last.to_string(), value);
}

/// Parse a `key=value` override; the value is read as TOML, falling back to a
/// bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("override `{s}` is not key=value"))?;
    let v = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("x = {v}"))
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
