//! Desk-scale contact environments.
//!
//! Two task families share one Cartesian model `M(x)ẍ + C(x,ẋ)ẋ + G(x) = F - F_ext`:
//!
//! * peg-in-hole: planar rigid peg with coordinates `(x, z, θ)` and constant
//!   diagonal inertia, inserted into a hole through a board at `z = 0`;
//! * cup-on-plate: a three-axis point mass with configuration-dependent y–z
//!   inertia coupling, placed onto a plate.
//!
//! A third family, point-reach, is an n-axis constant mass used for control
//! and optimizer sanity checks. The commanded force always includes the
//! feed-forward term `C·ẋ + G`, so the closed-loop acceleration is
//! `M⁻¹(F_fb + F_contact)`; goals are static so `ẍ_d = ẋ_d = 0`.

mod config;
mod contact;
mod dynamics;

use std::collections::VecDeque;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use config::{ContactParams, CupParams, EnvConfig, PegParams, PointParams, ScenarioSets};
pub use contact::{external_force, ContactSpec, PlateSpec};
pub use dynamics::DynamicsModel;

use crate::error::{check_dim, Error, Result};
use crate::impedance::feedback_force;
use crate::rng;

pub const GRAVITY: f64 = 9.81;
/// Number of (e, ė) pairs in a history observation.
pub const HISTORY_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    PegInHole,
    CupOnPlate,
    PointReach,
}

impl TaskKind {
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::PegInHole => "peg-in-hole",
            TaskKind::CupOnPlate => "cup-on-plate",
            TaskKind::PointReach => "point-reach",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "peg-in-hole" => Ok(TaskKind::PegInHole),
            "cup-on-plate" => Ok(TaskKind::CupOnPlate),
            "point-reach" => Ok(TaskKind::PointReach),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Peg geometry that is not part of the contact parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PegGeometry {
    pub nominal_peg_width: f64,
    pub nominal_hole_width: f64,
    pub peg_length: f64,
    pub hole_depth: f64,
    pub approach_height: f64,
    pub peg_mass: f64,
    pub carrier_mass: f64,
    pub carrier_inertia: f64,
    pub tilt_deg: f64,
    pub mesh_scale: f64,
}

impl PegGeometry {
    /// Distance from the COM to the tip along the peg axis.
    pub fn tip_offset(&self) -> f64 {
        0.5 * self.peg_length
    }

    /// Peg inertia scales with its cross-section when the mesh is rescaled;
    /// the carrier is unaffected.
    fn dynamics(&self) -> DynamicsModel {
        let s2 = self.mesh_scale * self.mesh_scale;
        let peg_mass = self.peg_mass * s2;
        let w = self.nominal_peg_width * self.mesh_scale;
        let m = self.carrier_mass + peg_mass;
        let inertia = self.carrier_inertia + peg_mass * (self.peg_length.powi(2) + w * w) / 12.0;
        DynamicsModel::ConstantDiagonal {
            masses: vec![m, m, inertia],
            gravity: vec![0.0, m * GRAVITY, 0.0],
        }
    }

    /// COM pose with the tip `approach_height` above the entry on an axis tilted by `tilt_deg`.
    fn start_pose(&self) -> Vec<f64> {
        let t = self.tilt_deg.to_radians();
        let reach = self.approach_height + self.tip_offset();
        vec![-reach * t.sin(), reach * t.cos(), t]
    }

    fn goal(&self) -> Vec<f64> {
        vec![0.0, -self.hole_depth + self.tip_offset(), 0.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum TaskGeometry {
    PegInHole(PegGeometry),
    CupOnPlate { training_start: Vec<f64> },
    PointReach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessTolerances {
    /// Required tip depth below the hole entry (m).
    pub insertion_depth: f64,
    pub pos_tol: f64,
    pub vel_tol: f64,
}

/// Fully realized environment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub task: TaskGeometry,
    pub dof: usize,
    pub dynamics: DynamicsModel,
    pub goal: Vec<f64>,
    /// Nominal initial pose of the current scenario.
    pub start: Vec<f64>,
    pub dt: f64,
    pub substeps: usize,
    pub horizon: usize,
    pub contact: Option<ContactSpec>,
    pub plate: Option<PlateSpec>,
    pub force_limit: Vec<f64>,
    pub rotational: Vec<bool>,
    pub init_noise: Vec<f64>,
    pub tolerances: SuccessTolerances,
}

/// A change of task setting relative to the training scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScenarioPerturbation {
    pub label: String,
    pub tilt_deg: Option<f64>,
    pub mesh_scale: Option<f64>,
    pub initial_position: Option<Vec<f64>>,
    /// Marks the scenario demonstrations were collected in.
    #[serde(default)]
    pub training: bool,
}

impl ScenarioPerturbation {
    pub fn none() -> Self {
        Self {
            label: "training".into(),
            training: true,
            ..Self::default()
        }
    }

    pub fn tilt(deg: f64) -> Self {
        Self {
            label: format!("tilt {deg:+}°"),
            tilt_deg: Some(deg),
            ..Self::default()
        }
    }

    pub fn mesh(scale: f64) -> Self {
        Self {
            label: format!("mesh {scale}"),
            mesh_scale: Some(scale),
            ..Self::default()
        }
    }

    pub fn start_at(label: &str, position: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            initial_position: Some(position),
            ..Self::default()
        }
    }

    pub fn marked_training(mut self) -> Self {
        self.training = true;
        self
    }

    /// Table column header, with the training scenario marked `(T)`.
    pub fn column_label(&self) -> String {
        if self.training && self.label != "training" {
            format!("{}(T)", self.label)
        } else {
            self.label.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
    pub t: f64,
    pub in_contact: bool,
}

impl EnvState {
    pub fn at_rest(x: Vec<f64>) -> Self {
        let n = x.len();
        Self {
            x,
            xdot: vec![0.0; n],
            t: 0.0,
            in_contact: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.xdot).all(|v| v.is_finite()) && self.t.is_finite()
    }
}

/// Low-level command held over one policy step.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    /// Impedance law re-evaluated at every integrator step.
    Impedance { k: Vec<f64>, b: Vec<f64> },
    /// Feedback force held constant (zero-order hold).
    Force(Vec<f64>),
}

impl EnvSpec {
    pub fn from_config(cfg: &EnvConfig) -> Result<Self> {
        if !(cfg.dt > 0.0) || cfg.horizon == 0 || cfg.substeps == 0 {
            return Err(Error::Config("dt, substeps and horizon must be positive".into()));
        }
        let contact_params = &cfg.contact;
        let spec = match cfg.task {
            TaskKind::PegInHole => {
                let p = &cfg.peg;
                let geom = PegGeometry {
                    nominal_peg_width: p.peg_width,
                    nominal_hole_width: p.hole_width,
                    peg_length: p.peg_length,
                    hole_depth: p.hole_depth,
                    approach_height: p.approach_height,
                    peg_mass: p.peg_mass,
                    carrier_mass: p.carrier_mass,
                    carrier_inertia: p.carrier_inertia,
                    tilt_deg: cfg.scenarios.training_tilt,
                    mesh_scale: cfg.scenarios.training_mesh,
                };
                let contact = ContactSpec::new(
                    p.hole_width * geom.mesh_scale,
                    p.peg_width * geom.mesh_scale,
                    contact_params.wall_stiffness,
                    contact_params.wall_damping,
                    contact_params.friction_coeff,
                )?;
                EnvSpec {
                    dof: 3,
                    dynamics: geom.dynamics(),
                    goal: geom.goal(),
                    start: geom.start_pose(),
                    dt: cfg.dt,
                    substeps: cfg.substeps,
                    horizon: cfg.horizon,
                    contact: Some(contact),
                    plate: None,
                    force_limit: cfg.force_limit.clone().unwrap_or_else(|| vec![150.0, 150.0, 20.0]),
                    rotational: vec![false, false, true],
                    init_noise: p.init_noise.clone(),
                    tolerances: SuccessTolerances {
                        insertion_depth: p.insertion_fraction * p.peg_length,
                        pos_tol: 0.0,
                        vel_tol: 0.0,
                    },
                    task: TaskGeometry::PegInHole(geom),
                }
            }
            TaskKind::CupOnPlate => {
                let c = &cfg.cup;
                check_dim("cup goal", 3, c.goal.len())?;
                check_dim("cup start", 3, c.start.len())?;
                if !(c.coupling_max.abs() < c.mass) {
                    return Err(Error::Config("coupling must stay below the mass to keep M positive definite".into()));
                }
                EnvSpec {
                    dof: 3,
                    dynamics: DynamicsModel::CoupledPointMass {
                        mass: c.mass,
                        coupling_max: c.coupling_max,
                        coupling_length: c.coupling_length,
                        anchor: c.start.clone(),
                        gravity: GRAVITY,
                    },
                    goal: c.goal.clone(),
                    start: c.start.clone(),
                    dt: cfg.dt,
                    substeps: cfg.substeps,
                    horizon: cfg.horizon,
                    contact: None,
                    plate: c.plate.then(|| PlateSpec {
                        height: c.goal[2],
                        stiffness: contact_params.wall_stiffness,
                        damping: contact_params.wall_damping,
                        friction_coeff: contact_params.friction_coeff,
                    }),
                    force_limit: cfg.force_limit.clone().unwrap_or_else(|| vec![150.0; 3]),
                    rotational: vec![false; 3],
                    init_noise: c.init_noise.clone(),
                    tolerances: SuccessTolerances {
                        insertion_depth: 0.0,
                        pos_tol: c.pos_tol,
                        vel_tol: c.vel_tol,
                    },
                    task: TaskGeometry::CupOnPlate {
                        training_start: c.start.clone(),
                    },
                }
            }
            TaskKind::PointReach => {
                let p = &cfg.point;
                check_dim("point start", p.dof, p.start.len())?;
                check_dim("point goal", p.dof, p.goal.len())?;
                EnvSpec {
                    dof: p.dof,
                    dynamics: DynamicsModel::ConstantDiagonal {
                        masses: vec![p.mass; p.dof],
                        gravity: vec![0.0; p.dof],
                    },
                    goal: p.goal.clone(),
                    start: p.start.clone(),
                    dt: cfg.dt,
                    substeps: cfg.substeps,
                    horizon: cfg.horizon,
                    contact: None,
                    plate: None,
                    force_limit: cfg.force_limit.clone().unwrap_or_else(|| vec![150.0; p.dof]),
                    rotational: vec![false; p.dof],
                    init_noise: p.init_noise.clone(),
                    tolerances: SuccessTolerances {
                        insertion_depth: 0.0,
                        pos_tol: p.pos_tol,
                        vel_tol: p.vel_tol,
                    },
                    task: TaskGeometry::PointReach,
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        check_dim("goal", self.dof, self.goal.len())?;
        check_dim("start", self.dof, self.start.len())?;
        check_dim("dynamics", self.dof, self.dynamics.dof())?;
        check_dim("force limit", self.dof, self.force_limit.len())?;
        check_dim("initial noise", self.dof, self.init_noise.len())?;
        if !(self.dt > 0.0) || self.horizon == 0 {
            return Err(Error::invalid("dt and horizon must be positive"));
        }
        Ok(())
    }

    pub fn kind(&self) -> TaskKind {
        match self.task {
            TaskGeometry::PegInHole(_) => TaskKind::PegInHole,
            TaskGeometry::CupOnPlate { .. } => TaskKind::CupOnPlate,
            TaskGeometry::PointReach => TaskKind::PointReach,
        }
    }

    pub fn peg(&self) -> Option<&PegGeometry> {
        match &self.task {
            TaskGeometry::PegInHole(g) => Some(g),
            _ => None,
        }
    }

    /// Policy (control) period.
    pub fn control_period(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    /// Apply a scenario perturbation, rejecting ones that do not fit the task family.
    pub fn perturbed(&self, p: &ScenarioPerturbation) -> Result<EnvSpec> {
        let reject = |reason: &str| Error::InvalidPerturbation {
            task: self.kind().to_string(),
            perturbation: p.label.clone(),
            reason: reason.to_string(),
        };
        let mut out = self.clone();
        match &mut out.task {
            TaskGeometry::PegInHole(geom) => {
                if p.initial_position.is_some() {
                    return Err(reject("peg-in-hole scenarios are set by tilt and mesh scale"));
                }
                if let Some(t) = p.tilt_deg {
                    if !t.is_finite() || t.abs() >= 45.0 {
                        return Err(reject("tilt must be finite and below 45°"));
                    }
                    geom.tilt_deg = t;
                }
                if let Some(s) = p.mesh_scale {
                    if !(s > 0.0 && s <= 1.5) {
                        return Err(reject("mesh scale must lie in (0, 1.5]"));
                    }
                    geom.mesh_scale = s;
                }
                let contact = out.contact.as_mut().expect("peg env has contact");
                contact.hole_width = geom.nominal_hole_width * geom.mesh_scale;
                contact.peg_width = geom.nominal_peg_width * geom.mesh_scale;
                out.dynamics = geom.dynamics();
                out.start = geom.start_pose();
            }
            TaskGeometry::CupOnPlate { .. } | TaskGeometry::PointReach => {
                if p.tilt_deg.is_some() || p.mesh_scale.is_some() {
                    return Err(reject("tilt and mesh scale only apply to peg-in-hole"));
                }
                if let Some(x0) = &p.initial_position {
                    if x0.len() != self.dof || !x0.iter().all(|v| v.is_finite()) {
                        return Err(reject("initial position must be a finite vector of the env dimension"));
                    }
                    out.start = x0.clone();
                }
            }
        }
        Ok(out)
    }

    pub fn goal_distance(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.goal).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Reset into the perturbed scenario; initial pose jitter is drawn from `seed`.
pub fn reset(spec: &EnvSpec, perturbation: &ScenarioPerturbation, seed: u64) -> Result<EnvState> {
    let realized = spec.perturbed(perturbation)?;
    Ok(reset_realized(&realized, seed))
}

/// Reset an already perturbed spec.
pub fn reset_realized(spec: &EnvSpec, seed: u64) -> EnvState {
    let mut r = rng::stream(seed, "reset", 0);
    let x = spec
        .start
        .iter()
        .zip(&spec.init_noise)
        .map(|(x0, s)| {
            let z: f64 = StandardNormal.sample(&mut r);
            x0 + s * z
        })
        .collect();
    EnvState::at_rest(x)
}

/// One integrator step of length `dt` with the feedback force held.
pub fn step(spec: &EnvSpec, state: &EnvState, f_fb: &[f64]) -> Result<EnvState> {
    check_dim("feedback force", spec.dof, f_fb.len())?;
    if !f_fb.iter().all(|f| f.is_finite()) {
        return Err(Error::NonFiniteForce(f_fb.to_vec()));
    }
    let x = &state.x;
    let v = &state.xdot;
    let dyn_model = &spec.dynamics;
    let coriolis = dyn_model.coriolis_force(x, v);
    let gravity = dyn_model.gravity(x);
    // commanded force = feed-forward (C·ẋ + G) + feedback
    let commanded: Vec<f64> = (0..spec.dof).map(|i| coriolis[i] + gravity[i] + f_fb[i]).collect();
    let drift: Vec<f64> = (0..spec.dof).map(|i| commanded[i] - coriolis[i] - gravity[i]).collect();
    let (f_contact, in_contact) = contact::contact_force(spec, state, Some(&drift));
    let net: Vec<f64> = (0..spec.dof).map(|i| drift[i] + f_contact[i]).collect();
    let acc = dyn_model.solve(x, &net);
    let mut xdot = Vec::with_capacity(spec.dof);
    let mut xn = Vec::with_capacity(spec.dof);
    for i in 0..spec.dof {
        let vi = v[i] + spec.dt * acc[i];
        xdot.push(vi);
        xn.push(x[i] + spec.dt * vi);
    }
    let next = EnvState {
        x: xn,
        xdot,
        t: state.t + spec.dt,
        in_contact,
    };
    if !next.is_finite() {
        return Err(Error::Diverged { t: next.t });
    }
    Ok(next)
}

/// Run one policy step (`substeps` integrator steps) under `command`.
pub fn advance(spec: &EnvSpec, state: &EnvState, command: &Command) -> Result<EnvState> {
    let mut s = state.clone();
    for _ in 0..spec.substeps {
        let f = match command {
            Command::Impedance { k, b } => {
                let e = tracking_error(spec, &s);
                feedback_force(k, b, &e, &s.xdot, &spec.force_limit)?
            }
            Command::Force(f) => f.clone(),
        };
        s = step(spec, &s, &f)?;
    }
    Ok(s)
}

pub fn tracking_error(spec: &EnvSpec, state: &EnvState) -> Vec<f64> {
    state.x.iter().zip(&spec.goal).map(|(x, g)| x - g).collect()
}

/// Tracking error and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub e: Vec<f64>,
    pub edot: Vec<f64>,
    /// Flattened history features when a history buffer is in use.
    pub history: Option<Vec<f64>>,
}

impl Observation {
    /// Network input: `[e, ė]`, or the history features.
    pub fn features(&self) -> Vec<f64> {
        match &self.history {
            Some(h) => h.clone(),
            None => self.e.iter().chain(&self.edot).copied().collect(),
        }
    }
}

/// Most recent (e, ė) pairs, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    pairs: VecDeque<Vec<f64>>,
    pair_dim: usize,
}

impl HistoryBuffer {
    pub fn new(dof: usize) -> Self {
        Self {
            pairs: VecDeque::with_capacity(HISTORY_LEN),
            pair_dim: 2 * dof,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn push(&mut self, pair: Vec<f64>) {
        if self.pairs.len() == HISTORY_LEN {
            self.pairs.pop_back();
        }
        self.pairs.push_front(pair);
    }

    /// `HISTORY_LEN` pairs, zero-padded once the buffer runs out.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(HISTORY_LEN * self.pair_dim);
        for i in 0..HISTORY_LEN {
            match self.pairs.get(i) {
                Some(p) => out.extend_from_slice(p),
                None => out.extend(std::iter::repeat(0.0).take(self.pair_dim)),
            }
        }
        out
    }
}

/// `e = x - goal`, `ė = ẋ`. With a buffer, the current pair is pushed and the
/// observation carries the history features.
pub fn observe(spec: &EnvSpec, state: &EnvState, history: Option<&mut HistoryBuffer>) -> Observation {
    let e = tracking_error(spec, state);
    let edot = state.xdot.clone();
    let history = history.map(|h| {
        h.push(e.iter().chain(&edot).copied().collect());
        h.features()
    });
    Observation { e, edot, history }
}

/// Tip position of the peg `(x, z)` in the board frame.
pub fn peg_tip(geom: &PegGeometry, x: &[f64]) -> [f64; 2] {
    let r = geom.tip_offset();
    let (s, c) = x[2].sin_cos();
    [x[0] + r * s, x[1] - r * c]
}

/// Lateral alignment tolerance `(hole - peg) / 2` for the current scale.
pub fn alignment_tolerance(spec: &EnvSpec) -> f64 {
    spec.contact
        .as_ref()
        .map(|c| 0.5 * (c.hole_width - c.peg_width))
        .unwrap_or(0.0)
}

/// A tip this far below the entry (as a fraction of the COM-to-tip offset)
/// can only be inside the bore; surface penetration never gets that deep.
const BORE_DEPTH_FRACTION: f64 = 0.2;

/// Alignment rule shared by success and scoring: inside the bore the walls
/// hold the peg, above it the tip must sit within the tolerance.
pub fn tip_aligned(tip: [f64; 2], tip_offset: f64, tol: f64) -> bool {
    tip[1] < -BORE_DEPTH_FRACTION * tip_offset || tip[0].abs() <= tol
}

/// Whether the peg tip lies in the bore or over it within the alignment tolerance.
pub fn laterally_aligned(spec: &EnvSpec, x: &[f64]) -> bool {
    match spec.peg() {
        Some(geom) => tip_aligned(peg_tip(geom, x), geom.tip_offset(), alignment_tolerance(spec)),
        None => true,
    }
}

pub fn is_success(spec: &EnvSpec, state: &EnvState) -> bool {
    match &spec.task {
        TaskGeometry::PegInHole(geom) => {
            let tip = peg_tip(geom, &state.x);
            tip[1] <= -spec.tolerances.insertion_depth && laterally_aligned(spec, &state.x)
        }
        TaskGeometry::CupOnPlate { .. } | TaskGeometry::PointReach => {
            let e = tracking_error(spec, state);
            let pos = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            let vel = state.xdot.iter().map(|v| v * v).sum::<f64>().sqrt();
            pos < spec.tolerances.pos_tol && vel < spec.tolerances.vel_tol
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peg_spec() -> EnvSpec {
        let mut cfg = EnvConfig::for_task(TaskKind::PegInHole);
        cfg.peg.init_noise = vec![0.0; 3];
        EnvSpec::from_config(&cfg).unwrap()
    }

    fn cup_spec() -> EnvSpec {
        let mut cfg = EnvConfig::for_task(TaskKind::CupOnPlate);
        cfg.cup.init_noise = vec![0.0; 3];
        EnvSpec::from_config(&cfg).unwrap()
    }

    fn point_spec(dof: usize) -> EnvSpec {
        let mut cfg = EnvConfig::for_task(TaskKind::PointReach);
        cfg.dt = 0.01;
        cfg.point = PointParams {
            dof,
            mass: 1.0,
            start: vec![0.0; dof],
            goal: vec![0.0; dof],
            init_noise: vec![0.0; dof],
            ..PointParams::default()
        };
        EnvSpec::from_config(&cfg).unwrap()
    }

    #[test]
    fn reset_peg_at_training_tilt() {
        let spec = peg_spec();
        let s = reset(&spec, &ScenarioPerturbation::tilt(-2.0), 7).unwrap();
        assert!((s.x[2] - (-2.0f64).to_radians()).abs() < 1e-15);
        assert!(s.x[0] > 0.0, "tilting to -2° moves the COM to +x");
        assert_eq!(s.xdot, vec![0.0; 3]);
        assert_eq!(s.t, 0.0);
        let tip = peg_tip(spec.peg().unwrap(), &s.x);
        let h = spec.peg().unwrap().approach_height;
        assert!((tip[0] - h * 2f64.to_radians().sin()).abs() < 1e-12);
        assert!((tip[1] - h * 2f64.to_radians().cos()).abs() < 1e-12);
        assert_eq!(s, reset(&spec, &ScenarioPerturbation::tilt(-2.0), 7).unwrap());
    }

    #[test]
    fn reset_cup_at_named_point() {
        let cfg = EnvConfig::for_task(TaskKind::CupOnPlate);
        let mut quiet = cfg.clone();
        quiet.cup.init_noise = vec![0.0; 3];
        let spec = EnvSpec::from_config(&quiet).unwrap();
        let t1 = cfg.scenarios.start_points["T1"].clone();
        let s = reset(&spec, &ScenarioPerturbation::start_at("T1", t1.clone()), 0).unwrap();
        assert_eq!(s.x, t1);
        // jitter is seed-determined
        let noisy = EnvSpec::from_config(&cfg).unwrap();
        let a = reset(&noisy, &ScenarioPerturbation::none(), 3).unwrap();
        assert_eq!(a, reset(&noisy, &ScenarioPerturbation::none(), 3).unwrap());
        assert_ne!(a, reset(&noisy, &ScenarioPerturbation::none(), 4).unwrap());
    }

    #[test]
    fn reset_rejects_wrong_family() {
        let err = reset(&cup_spec(), &ScenarioPerturbation::tilt(2.0), 0).unwrap_err();
        assert!(matches!(err, Error::InvalidPerturbation { .. }));
        assert!(reset(&peg_spec(), &ScenarioPerturbation::start_at("T1", vec![0.0; 3]), 0).is_err());
        assert!(reset(&peg_spec(), &ScenarioPerturbation::mesh(1.6), 0).is_err());
        assert!(reset(&peg_spec(), &ScenarioPerturbation::mesh(0.0), 0).is_err());
    }

    #[test]
    fn mesh_scale_scales_widths_and_clearance() {
        let spec = peg_spec();
        let small = spec.perturbed(&ScenarioPerturbation::mesh(0.3)).unwrap();
        let (a, b) = (spec.contact.unwrap(), small.contact.unwrap());
        assert!((b.peg_width - 0.3 * a.peg_width).abs() < 1e-15);
        assert!((b.hole_width - 0.3 * a.hole_width).abs() < 1e-15);
        let ratio = (b.hole_width - b.peg_width) / (a.hole_width - a.peg_width);
        assert!((ratio - 0.3).abs() < 1e-9);
    }

    #[test]
    fn zero_feedback_holds_still_against_gravity() {
        for spec in [peg_spec(), cup_spec()] {
            let s0 = reset_realized(&spec, 0);
            let s1 = step(&spec, &s0, &[0.0; 3]).unwrap();
            assert_eq!(s1.x, s0.x);
            assert_eq!(s1.xdot, vec![0.0; 3]);
            assert!((s1.t - spec.dt).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_force_semi_implicit_euler() {
        let spec = point_spec(3);
        let s0 = EnvState::at_rest(vec![0.0; 3]);
        let s1 = step(&spec, &s0, &[1.0, 0.0, 0.0]).unwrap();
        assert!((s1.xdot[0] - 0.01).abs() < 1e-15);
        assert!((s1.x[0] - 1e-4).abs() < 1e-15);
        assert_eq!(&s1.x[1..], &[0.0, 0.0]);
    }

    #[test]
    fn coupled_y_force_accelerates_z() {
        let spec = cup_spec();
        let x = vec![0.2, 0.3, 0.45];
        let s0 = EnvState::at_rest(x.clone());
        let s1 = step(&spec, &s0, &[0.0, 1.0, 0.0]).unwrap();
        let c = spec.dynamics.mass_matrix(&x)[(1, 2)];
        let det = 1.0 - c * c;
        assert!((s1.xdot[2] / spec.dt - (-c / det)).abs() < 1e-9);
        assert!((s1.xdot[1] / spec.dt - 1.0 / det).abs() < 1e-9);
    }

    #[test]
    fn step_rejects_bad_force() {
        let spec = point_spec(1);
        let s0 = EnvState::at_rest(vec![0.0]);
        assert!(matches!(step(&spec, &s0, &[f64::NAN]), Err(Error::NonFiniteForce(_))));
        assert!(matches!(step(&spec, &s0, &[1e308 * 10.0]), Err(Error::NonFiniteForce(_))));
        assert!(step(&spec, &s0, &[1.0, 2.0]).is_err());
        let huge = EnvState::at_rest(vec![f64::MAX]);
        assert!(matches!(step(&spec, &huge, &[f64::MAX]), Err(Error::Diverged { .. })));
    }

    #[test]
    fn observe_examples() {
        let spec = cup_spec();
        let s = EnvState::at_rest(spec.goal.clone());
        let o = observe(&spec, &s, None);
        assert_eq!(o.e, vec![0.0; 3]);
        assert_eq!(o.edot, vec![0.0; 3]);
        let mut x = spec.goal.clone();
        x[0] += 0.1;
        let o = observe(&spec, &EnvState::at_rest(x), None);
        assert!((o.e[0] - 0.1).abs() < 1e-15 && o.e[1] == 0.0 && o.e[2] == 0.0);
    }

    #[test]
    fn history_zero_pads_at_episode_start() {
        let spec = point_spec(1);
        let mut h = HistoryBuffer::new(1);
        let _ = observe(&spec, &EnvState::at_rest(vec![0.5]), Some(&mut h));
        let o = observe(&spec, &EnvState::at_rest(vec![0.25]), Some(&mut h));
        let f = o.features();
        assert_eq!(f.len(), 10);
        assert_eq!(&f[..4], &[0.25, 0.0, 0.5, 0.0]);
        assert!(f[4..].iter().all(|v| *v == 0.0));
        for i in 0..10 {
            let _ = observe(&spec, &EnvState::at_rest(vec![i as f64]), Some(&mut h));
        }
        assert_eq!(h.len(), HISTORY_LEN);
        assert_eq!(h.features()[0], 9.0);
        assert_eq!(h.features()[8], 5.0);
    }

    #[test]
    fn success_rules() {
        let spec = peg_spec();
        let geom = spec.peg().unwrap();
        assert!(is_success(&spec, &EnvState::at_rest(spec.goal.clone())));
        // resting on the board beside the hole
        let beside = vec![0.03, geom.tip_offset(), 0.0];
        assert!(!is_success(&spec, &EnvState::at_rest(beside)));

        let cup = cup_spec();
        let mut s = EnvState::at_rest(cup.goal.clone());
        assert!(is_success(&cup, &s));
        s.xdot = vec![0.0, 0.0, -0.06];
        assert!(!is_success(&cup, &s));
    }

    #[test]
    fn determinism_of_rollout() {
        let spec = peg_spec();
        let run = || {
            let mut s = reset_realized(&spec, 1);
            let cmd = Command::Impedance {
                k: vec![800.0, 300.0, 40.0],
                b: vec![60.0, 30.0, 1.0],
            };
            for _ in 0..100 {
                s = advance(&spec, &s, &cmd).unwrap();
            }
            s
        };
        let (a, b) = (run(), run());
        assert_eq!(a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
