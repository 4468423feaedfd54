use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::action::{ActionKind, ActionSpace};
use crate::airl::{reoptimize, ReoptConfig};
use crate::approx::{GaussianPolicy, RewardNet};
use crate::bc::{summarize, EvalSummary};
use crate::envsim::{EnvConfig, EnvSpec, ScenarioPerturbation, TaskKind};
use crate::error::{Error, Result};
use crate::experts::{expert_episode, Expert};
use crate::rng;
use crate::rollout::{episode_seed, run_episode, run_episodes, Agent, EpisodeRecord, ObsMode};
use crate::trpo::TrustRegionConfig;

use super::scores::{deviation_metrics, episode_score, relative_perf_diff, ScoreWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Airl,
    Bc,
    ConstantGain,
}

/// A row of a transfer table: learning method, action space, observation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Method {
    pub family: Family,
    pub action: ActionKind,
    pub obs: ObsMode,
}

impl Method {
    pub fn new(family: Family, action: ActionKind, obs: ObsMode) -> Result<Self> {
        if family == Family::ConstantGain && (action != ActionKind::Gain || obs.is_history()) {
            return Err(Error::Config("constant-gain is a plain gain-space baseline".into()));
        }
        Ok(Self { family, action, obs })
    }

    pub fn label(&self) -> String {
        let base = match self.family {
            Family::ConstantGain => return "constant-gain".into(),
            Family::Airl => "airl",
            Family::Bc => "bc",
        };
        let his = if self.obs.is_history() { "-his" } else { "" };
        format!("{}-{base}{his}", self.action.label())
    }

    /// The five plain-observation rows.
    pub fn standard_set() -> Vec<Method> {
        ["gain-airl", "gain-bc", "force-airl", "force-bc", "constant-gain"]
            .iter()
            .map(|s| s.parse().expect("valid label"))
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "constant-gain" {
            return Ok(Method {
                family: Family::ConstantGain,
                action: ActionKind::Gain,
                obs: ObsMode::Plain,
            });
        }
        let (rest, obs) = match s.strip_suffix("-his") {
            Some(r) => (r, ObsMode::History5),
            None => (s, ObsMode::Plain),
        };
        let (action, family) = rest
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))?;
        let action: ActionKind = action.parse()?;
        let family = match family {
            "airl" => Family::Airl,
            "bc" => Family::Bc,
            _ => return Err(Error::Config(format!("unknown method `{s}`"))),
        };
        Method::new(family, action, obs)
    }
}

/// What a method brings into the transfer suite.
#[derive(Debug, Clone)]
pub enum Artifact {
    /// Learned reward, re-optimized per scenario.
    Reward(RewardNet),
    /// Policy transferred as is.
    Policy(GaussianPolicy),
}

/// One cell of a transfer table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub method: String,
    pub scenario: String,
    pub training: bool,
    pub available: bool,
    pub success_rate: f64,
    pub mean_score: f64,
    pub relative_perf_diff: f64,
    pub n_episodes: usize,
    pub expert_score: f64,
}

impl TransferReport {
    fn unavailable(method: &Method, scenario: &ScenarioPerturbation, expert_score: f64) -> Self {
        Self {
            method: method.label(),
            scenario: scenario.column_label(),
            training: scenario.training,
            available: false,
            success_rate: f64::NAN,
            mean_score: f64::NAN,
            relative_perf_diff: f64::NAN,
            n_episodes: 0,
            expert_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub episodes: usize,
    pub reopt: ReoptConfig,
    /// Episodes of each cell written out as trajectory dumps.
    pub dump_episodes: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            episodes: 60,
            reopt: ReoptConfig::default(),
            dump_episodes: 1,
        }
    }
}

/// The scenario sweeps of a task family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    Tilt,
    Mesh,
    Start,
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tilt" => Ok(Sweep::Tilt),
            "mesh" => Ok(Sweep::Mesh),
            "start" => Ok(Sweep::Start),
            other => Err(Error::Config(format!("unknown sweep `{other}` (tilt | mesh | start)"))),
        }
    }
}

/// Scenarios of `sweep` with the training one marked.
pub fn sweep_scenarios(cfg: &EnvConfig, sweep: Sweep) -> Result<Vec<ScenarioPerturbation>> {
    let s = &cfg.scenarios;
    let mark = |p: ScenarioPerturbation, training: bool| if training { p.marked_training() } else { p };
    match (cfg.task, sweep) {
        (TaskKind::PegInHole, Sweep::Tilt) => Ok(s
            .tilt_sweep
            .iter()
            .map(|&t| mark(ScenarioPerturbation::tilt(t), t == s.training_tilt))
            .collect()),
        (TaskKind::PegInHole, Sweep::Mesh) => Ok(s
            .mesh_sweep
            .iter()
            .map(|&m| mark(ScenarioPerturbation::mesh(m), m == s.training_mesh))
            .collect()),
        (TaskKind::CupOnPlate, Sweep::Start) => {
            let mut v = vec![ScenarioPerturbation::none()];
            v.extend(s.start_points.iter().map(|(k, p)| ScenarioPerturbation::start_at(k, p.clone())));
            Ok(v)
        }
        (task, sweep) => Err(Error::Config(format!("sweep {sweep:?} does not apply to {task}"))),
    }
}

/// Look a scenario up by its label (`-2`, `0.3`, `T1`, `training`) within the
/// task's sweeps.
pub fn find_scenario(cfg: &EnvConfig, label: &str) -> Result<ScenarioPerturbation> {
    let sweeps: &[Sweep] = match cfg.task {
        TaskKind::PegInHole => &[Sweep::Tilt, Sweep::Mesh],
        TaskKind::CupOnPlate => &[Sweep::Start],
        TaskKind::PointReach => &[],
    };
    let parsed = label.trim_end_matches('°').parse::<f64>().ok();
    for &sw in sweeps {
        for p in sweep_scenarios(cfg, sw)? {
            let hit = p.label == label
                || match (sw, parsed) {
                    (Sweep::Tilt, Some(v)) => p.tilt_deg == Some(v) && !label.contains('.'),
                    (Sweep::Mesh, Some(v)) => p.mesh_scale == Some(v) && label.contains('.'),
                    _ => false,
                };
            if hit {
                return Ok(p);
            }
        }
    }
    Err(Error::Config(format!("unknown scenario `{label}` for {}", cfg.task)))
}

/// Mean expert score and success over the evaluation episodes of `spec`.
pub fn expert_reference(spec: &EnvSpec, expert: &Expert, weights: &ScoreWeights, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let results: Vec<Result<(bool, f64)>> = {
        use rayon::prelude::*;
        (0..episodes as u64)
            .into_par_iter()
            .map(|i| {
                let t = expert_episode(spec, expert, None, episode_seed(seed, "eval", i))?;
                Ok((t.success, episode_score(&t, weights)))
            })
            .collect()
    };
    let items = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(items.into_iter()))
}

/// Inputs shared by every cell of one suite run.
pub struct SuiteContext<'a> {
    pub env: &'a EnvConfig,
    pub expert: &'a Expert,
    pub weights: &'a ScoreWeights,
    pub trpo: &'a TrustRegionConfig,
    pub suite: &'a SuiteConfig,
    pub seed: u64,
}

/// Evaluated episodes of one cell, kept for trajectory dumps.
#[derive(Debug, Clone)]
pub struct CellEpisodes {
    pub method: String,
    pub scenario: String,
    /// Episodes of the best restart, from the first evaluation resets.
    pub episodes: Vec<EpisodeRecord>,
    /// `(mean nearest-point distance, final distance)` to the expert from the same reset.
    pub deviations: Vec<(f64, f64)>,
}

fn space_for(method: &Method, spec: &EnvSpec, expert: &Expert) -> ActionSpace {
    ActionSpace::standard(method.action, spec, expert.with_factor())
}

/// Evaluate every `(method, scenario)` pair. Missing artifacts produce
/// unavailable rows; other failures abort.
pub fn run_transfer_suite(
    ctx: &SuiteContext<'_>,
    methods: &[(Method, Option<Artifact>)],
    scenarios: &[ScenarioPerturbation],
    mut progress: impl FnMut(&TransferReport),
) -> Result<(Vec<TransferReport>, Vec<CellEpisodes>)> {
    let base = EnvSpec::from_config(ctx.env)?;
    let mut reports = Vec::new();
    let mut dumps = Vec::new();
    for scenario in scenarios {
        let spec = base.perturbed(scenario)?;
        // every method faces the same resets in a scenario
        let eval_seed = rng::child_seed(ctx.seed, &format!("eval {}", scenario.label), 0);
        let expert = expert_reference(&spec, ctx.expert, ctx.weights, ctx.suite.episodes, eval_seed)?;
        for (method, artifact) in methods {
            let Some(artifact) = artifact else {
                let r = TransferReport::unavailable(method, scenario, expert.mean_score);
                progress(&r);
                reports.push(r);
                continue;
            };
            let space = space_for(method, &spec, ctx.expert);
            let policies: Vec<GaussianPolicy> = match artifact {
                Artifact::Policy(p) => vec![p.clone()],
                Artifact::Reward(r) => {
                    let cell_seed = rng::child_seed(ctx.seed, &format!("reopt {} {}", method.label(), scenario.label), 0);
                    let restarts = reoptimize(r, &spec, &space, method.obs, &ctx.suite.reopt, ctx.trpo, ctx.weights, None, cell_seed)?;
                    restarts.into_iter().take(ctx.suite.reopt.keep.max(1)).map(|r| r.policy).collect()
                }
            };
            let mut items = Vec::new();
            let mut kept = Vec::new();
            for policy in &policies {
                let agent = Agent {
                    policy,
                    space: &space,
                    obs: method.obs,
                };
                let eps = run_episodes(&spec, &agent, ctx.weights, spec.horizon, eval_seed, "eval", 0..ctx.suite.episodes as u64, false)?;
                items.extend(eps.iter().map(|e| (e.trajectory.success, e.score())));
                if kept.is_empty() {
                    kept = eps.into_iter().take(ctx.suite.dump_episodes).collect();
                }
            }
            // averaged over the kept restarts, so rates stay on the per-episode grid of each
            let summary = summarize(items.into_iter());
            let r = TransferReport {
                method: method.label(),
                scenario: scenario.column_label(),
                training: scenario.training,
                available: true,
                success_rate: summary.success_rate,
                mean_score: summary.mean_score,
                relative_perf_diff: relative_perf_diff(summary.mean_score, expert.mean_score)?,
                n_episodes: ctx.suite.episodes,
                expert_score: expert.mean_score,
            };
            progress(&r);
            reports.push(r);
            let deviations = kept
                .iter()
                .enumerate()
                .map(|(i, ep)| {
                    let reference = expert_episode(&spec, ctx.expert, None, episode_seed(eval_seed, "eval", i as u64))?;
                    deviation_metrics(&ep.trajectory.positions(), &reference.positions())
                })
                .collect::<Result<Vec<_>>>()?;
            dumps.push(CellEpisodes {
                method: method.label(),
                scenario: scenario.column_label(),
                episodes: kept,
                deviations,
            });
        }
    }
    Ok((reports, dumps))
}

/// Deterministic evaluation of a fixed policy, no re-optimization.
pub fn evaluate_policy(
    spec: &EnvSpec,
    policy: &GaussianPolicy,
    space: &ActionSpace,
    obs: ObsMode,
    weights: &ScoreWeights,
    episodes: usize,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeRecord>)> {
    let agent = Agent { policy, space, obs };
    let eps = run_episodes(spec, &agent, weights, spec.horizon, seed, "eval", 0..episodes as u64, false)?;
    Ok((summarize(eps.iter().map(|e| (e.trajectory.success, e.score()))), eps))
}

/// Single deterministic episode of `policy` from reset seed `reset_seed`.
pub fn replay(
    spec: &EnvSpec,
    policy: &GaussianPolicy,
    space: &ActionSpace,
    obs: ObsMode,
    weights: &ScoreWeights,
    reset_seed: u64,
) -> Result<EpisodeRecord> {
    let agent = Agent { policy, space, obs };
    run_episode(spec, &agent, weights, spec.horizon, reset_seed, None)
}

/// CSV with columns `method, scenario, episode, mean_deviation, final_deviation`.
pub fn write_deviations_csv<W: Write>(w: W, cells: &[CellEpisodes]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "scenario", "episode", "mean_deviation", "final_deviation"])?;
    for c in cells {
        for (i, (avg, fin)) in c.deviations.iter().enumerate() {
            wtr.write_record([c.method.clone(), c.scenario.clone(), i.to_string(), format!("{avg}"), format!("{fin}")])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_reports_csv<W: Write>(w: W, reports: &[TransferReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in reports {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_reports_csv(path: &Path, reports: &[TransferReport]) -> Result<()> {
    write_reports_csv(std::fs::File::create(path)?, reports)
}

/// Which quantity a rendered table shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableValue {
    SuccessRate,
    RelativePerfDiff,
}

impl TableValue {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::CupOnPlate => TableValue::RelativePerfDiff,
            _ => TableValue::SuccessRate,
        }
    }
}

/// Methods as rows, scenarios as columns, in first-seen order.
pub fn render_table(reports: &[TransferReport], value: TableValue) -> String {
    let mut cols: Vec<&str> = Vec::new();
    let mut rows: Vec<&str> = Vec::new();
    for r in reports {
        if !cols.contains(&r.scenario.as_str()) {
            cols.push(&r.scenario);
        }
        if !rows.contains(&r.method.as_str()) {
            rows.push(&r.method);
        }
    }
    let cell = |m: &str, s: &str| -> String {
        match reports.iter().find(|r| r.method == m && r.scenario == s) {
            Some(r) if r.available => match value {
                TableValue::SuccessRate => format!("{:.1}%", 100.0 * r.success_rate),
                TableValue::RelativePerfDiff => format!("{:.2}", r.relative_perf_diff),
            },
            Some(_) => "n/a".into(),
            None => "".into(),
        }
    };
    let first = rows.iter().map(|r| r.len()).max().unwrap_or(0).max(6);
    let widths: Vec<usize> = cols
        .iter()
        .map(|c| rows.iter().map(|m| cell(m, c).len()).max().unwrap_or(0).max(c.chars().count()))
        .collect();
    let mut out = format!("{:first$}", "method");
    for (c, w) in cols.iter().zip(&widths) {
        out += &format!("  {c:>w$}");
    }
    out.push('\n');
    for m in &rows {
        out += &format!("{m:first$}");
        for (c, w) in cols.iter().zip(&widths) {
            out += &format!("  {:>w$}", cell(m, c));
        }
        out.push('\n');
    }
    out
}

/// Per-step dump: `step, t, e.., edot.., gains.., force..`.
pub fn write_trajectory_csv<W: Write>(w: W, ep: &EpisodeRecord) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let traj = &ep.trajectory;
    let Some(first) = traj.steps.first() else {
        wtr.flush()?;
        return Ok(());
    };
    let dim = first.e.len();
    // force-space steps have no gains
    let gdim = if first.action.len() == first.force.len() && traj.steps.iter().all(|s| s.action == s.force) {
        0
    } else {
        first.action.len()
    };
    let mut header = vec!["step".to_string(), "t".into()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    header.extend((0..dim).map(|i| format!("edot{i}")));
    header.extend((0..gdim).map(|i| format!("gain{i}")));
    header.extend((0..dim).map(|i| format!("force{i}")));
    wtr.write_record(&header)?;
    for (k, s) in traj.steps.iter().enumerate() {
        let mut row = vec![k.to_string(), format!("{}", s.t)];
        row.extend(s.e.iter().map(|v| format!("{v}")));
        row.extend(s.edot.iter().map(|v| format!("{v}")));
        if gdim > 0 {
            row.extend(s.action.iter().map(|v| format!("{v}")));
        }
        row.extend(s.force.iter().map(|v| format!("{v}")));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
