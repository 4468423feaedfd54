//! Scripted experts and demonstration collection.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::gain_command;
use crate::envsim::{advance, is_success, observe, reset_realized, EnvSpec, EnvState, Observation, TaskGeometry};
use crate::error::{Error, Result};
use crate::impedance::{diagonalize_stiffness, planar_tip_jacobian, tip_to_com, GainAction, GainBounds, TipStiffnessSpec};
use crate::rng;
use crate::trajectory::{DemoSet, Step, Trajectory, TrajectoryMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Accelerating,
    Switching,
    Reaching,
}

/// Three-phase gain schedule keyed on the position error norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    /// Accelerating/switching boundary (m).
    pub e1: f64,
    /// Switching/reaching boundary (m).
    pub e2: f64,
    pub gains_accel: GainAction,
    pub gains_switch: GainAction,
    pub gains_reach: GainAction,
    /// Width of the linear blend centred on each boundary (m).
    pub blend: f64,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        let g = |k: f64, d: f64| GainAction {
            k_diag: vec![k; 3],
            d: Some(d),
        };
        Self {
            e1: 0.4,
            e2: 0.2,
            gains_accel: g(1500.0, 1.0),
            gains_switch: g(400.0, 2.0),
            gains_reach: g(100.0, 3.0),
            blend: 0.02,
        }
    }
}

impl PhaseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.e1 > self.e2 && self.e2 > 0.0) {
            return Err(Error::invalid(format!(
                "phase boundaries need e1 > e2 > 0, got {} and {}",
                self.e1, self.e2
            )));
        }
        if !(self.blend >= 0.0 && self.blend < self.e1 - self.e2 && self.blend < 2.0 * self.e2) {
            return Err(Error::invalid("blend band must fit between the phase boundaries"));
        }
        let dims = [&self.gains_accel, &self.gains_switch, &self.gains_reach];
        if dims.iter().any(|g| g.dim() != self.gains_accel.dim() || g.d.is_some() != self.gains_accel.d.is_some()) {
            return Err(Error::invalid("phase gains must share their layout"));
        }
        Ok(())
    }

    /// Whether `e_pos` falls inside one of the blend bands.
    pub fn in_blend(&self, e_pos: f64) -> bool {
        let h = 0.5 * self.blend;
        (e_pos - self.e1).abs() < h || (e_pos - self.e2).abs() < h
    }
}

pub fn position_error_norm(e: &[f64]) -> f64 {
    e.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn phase_of(e_pos: f64, schedule: &PhaseSchedule) -> Phase {
    if e_pos > schedule.e1 {
        Phase::Accelerating
    } else if e_pos > schedule.e2 {
        Phase::Switching
    } else {
        Phase::Reaching
    }
}

fn mix(a: &GainAction, b: &GainAction, w: f64) -> GainAction {
    let lerp = |x: f64, y: f64| (1.0 - w) * x + w * y;
    GainAction {
        k_diag: a.k_diag.iter().zip(&b.k_diag).map(|(x, y)| lerp(*x, *y)).collect(),
        d: a.d.zip(b.d).map(|(x, y)| lerp(x, y)),
    }
}

/// Phase gains for the current error, blended linearly across each boundary band.
pub fn phase_expert_action(obs: &Observation, schedule: &PhaseSchedule) -> GainAction {
    let e_pos = position_error_norm(&obs.e);
    let h = 0.5 * schedule.blend;
    if h > 0.0 && (e_pos - schedule.e1).abs() < h {
        let w = (e_pos - (schedule.e1 - h)) / schedule.blend;
        return mix(&schedule.gains_switch, &schedule.gains_accel, w);
    }
    if h > 0.0 && (e_pos - schedule.e2).abs() < h {
        let w = (e_pos - (schedule.e2 - h)) / schedule.blend;
        return mix(&schedule.gains_reach, &schedule.gains_switch, w);
    }
    match phase_of(e_pos, schedule) {
        Phase::Accelerating => schedule.gains_accel.clone(),
        Phase::Switching => schedule.gains_switch.clone(),
        Phase::Reaching => schedule.gains_reach.clone(),
    }
}

/// Fixed stiffness at the peg tip, expressed on the COM at every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipStiffnessExpert {
    /// Diagonal tip stiffness `(lateral, vertical, rotational)`.
    pub k_tip: Vec<f64>,
    /// Error magnitude below which an axis uses the diagonal of `K_COM`.
    pub eps: f64,
}

impl Default for TipStiffnessExpert {
    fn default() -> Self {
        Self {
            k_tip: vec![1500.0, 40.0, 5.0],
            eps: 1e-4,
        }
    }
}

/// `K_COM` for a fixed tip stiffness at the peg configuration `theta`.
pub fn com_stiffness(k_tip: &DMatrix<f64>, theta: f64, tip_offset: f64) -> Result<DMatrix<f64>> {
    tip_to_com(&TipStiffnessSpec {
        k_tip: k_tip.clone(),
        j_tip: planar_tip_jacobian(theta, tip_offset),
    })
}

pub fn tip_stiffness_expert_action(
    obs: &Observation,
    state: &EnvState,
    k_tip: &DMatrix<f64>,
    tip_offset: f64,
    eps: f64,
    bounds: &GainBounds,
) -> Result<GainAction> {
    let k_com = com_stiffness(k_tip, state.x[2], tip_offset)?;
    let k = diagonalize_stiffness(&k_com, &obs.e, eps, bounds)?;
    GainAction::new(k, None)
}

/// A scripted demonstrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Expert {
    Phase(PhaseSchedule),
    TipStiffness(TipStiffnessExpert),
    /// Fixed gains; critically damped unless a factor is given.
    Constant(GainAction),
}

impl Expert {
    /// Default expert for the env's task family.
    pub fn for_env(spec: &EnvSpec) -> Self {
        match &spec.task {
            TaskGeometry::PegInHole(_) => Expert::TipStiffness(TipStiffnessExpert::default()),
            TaskGeometry::CupOnPlate { .. } => Expert::Phase(PhaseSchedule::default()),
            TaskGeometry::PointReach => Expert::Constant(GainAction {
                k_diag: vec![100.0; spec.dof],
                d: None,
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Expert::Phase(_) => "phase",
            Expert::TipStiffness(_) => "tip-stiffness",
            Expert::Constant(_) => "constant",
        }
    }

    pub fn with_factor(&self) -> bool {
        match self {
            Expert::Phase(s) => s.gains_accel.d.is_some(),
            Expert::TipStiffness(_) => false,
            Expert::Constant(g) => g.d.is_some(),
        }
    }

    pub fn gains(&self, spec: &EnvSpec, state: &EnvState, obs: &Observation) -> Result<GainAction> {
        match self {
            Expert::Phase(s) => Ok(phase_expert_action(obs, s)),
            Expert::TipStiffness(t) => {
                let geom = spec
                    .peg()
                    .ok_or_else(|| Error::invalid("the tip-stiffness expert needs a peg-in-hole env"))?;
                let k_tip = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&t.k_tip));
                let bounds = GainBounds::standard(&spec.rotational, false);
                tip_stiffness_expert_action(obs, state, &k_tip, geom.tip_offset(), t.eps, &bounds)
            }
            Expert::Constant(g) => Ok(g.clone()),
        }
    }
}

/// Multiplicative log-normal noise on the stiffness, drawn once per episode and axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePolicy {
    pub sigma: f64,
}

/// Roll out `expert` once from the seeded initial state of `spec`.
pub fn expert_episode(spec: &EnvSpec, expert: &Expert, noise: Option<NoisePolicy>, seed: u64) -> Result<Trajectory> {
    let bounds = GainBounds::standard(&spec.rotational, expert.with_factor());
    let factors: Vec<f64> = match noise {
        Some(n) if n.sigma > 0.0 => {
            let mut r = rng::stream(seed, "demo-noise", 0);
            (0..spec.dof)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    (n.sigma * z).exp()
                })
                .collect()
        }
        _ => vec![1.0; spec.dof],
    };
    let mut state = reset_realized(spec, seed);
    let mut steps = Vec::with_capacity(spec.horizon);
    for _ in 0..spec.horizon {
        let obs = observe(spec, &state, None);
        let mut gains = expert.gains(spec, &state, &obs)?;
        if factors.iter().any(|f| *f != 1.0) {
            for (k, f) in gains.k_diag.iter_mut().zip(&factors) {
                *k *= f;
            }
            bounds.clamp_k(&mut gains.k_diag);
        }
        let exec = gain_command(spec, &state, &gains)?;
        steps.push(Step {
            t: state.t,
            e: obs.e,
            edot: obs.edot,
            action: exec.action,
            force: exec.force,
        });
        state = advance(spec, &state, &exec.command)?;
    }
    let last = observe(spec, &state, None);
    Ok(Trajectory {
        meta: TrajectoryMeta::for_env(spec),
        steps,
        final_e: last.e,
        final_edot: last.edot,
        success: is_success(spec, &state),
    })
}

/// Collect `n` successful demonstrations; failed or diverged rollouts are
/// discarded and re-rolled, up to `5·n` attempts in total.
pub fn collect_demos(
    spec: &EnvSpec,
    expert: &Expert,
    n: usize,
    noise: Option<NoisePolicy>,
    seed: u64,
) -> Result<DemoSet> {
    if n == 0 {
        return Err(Error::invalid("need at least one demonstration"));
    }
    let budget = 5 * n;
    let mut kept = Vec::with_capacity(n);
    let mut next = 0usize;
    while kept.len() < n && next < budget {
        let batch = (n - kept.len()).min(budget - next);
        let results: Vec<Option<Trajectory>> = (next..next + batch)
            .into_par_iter()
            .map(|i| {
                let s = rng::child_seed(seed, "demo", i as u64);
                expert_episode(spec, expert, noise, s).ok().filter(|t| t.success)
            })
            .collect();
        next += batch;
        kept.extend(results.into_iter().flatten());
    }
    if kept.len() < n {
        return Err(Error::ExpertBudget {
            expert: expert.name().into(),
            env: spec.kind().to_string(),
            succeeded: kept.len(),
            wanted: n,
            attempts: next,
        });
    }
    kept.truncate(n);
    Ok(DemoSet {
        task: spec.kind(),
        generator: expert.name().into(),
        config_hash: String::new(),
        with_factor: expert.with_factor(),
        trajectories: kept,
    })
}
