//! Environment configuration file (TOML).
//!
//! Every field has a default so a config only needs to name what it changes.
//! Example:
//!
//! ```toml
//! task = "peg-in-hole"
//! horizon = 200
//!
//! [peg]
//! hole_depth = 0.07
//!
//! [scenarios]
//! tilt_sweep = [-6.0, -4.0, -2.0, 0.0, 2.0]
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub task: TaskKind,
    /// Integrator step (s).
    pub dt: f64,
    /// Integrator steps per policy action.
    pub substeps: usize,
    /// Policy steps per episode.
    pub horizon: usize,
    /// Per-axis actuation limit; defaults to 150 N / 20 N·m.
    pub force_limit: Option<Vec<f64>>,
    pub peg: PegParams,
    pub cup: CupParams,
    pub point: PointParams,
    pub contact: ContactParams,
    pub scenarios: ScenarioSets,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::for_task(TaskKind::PegInHole)
    }
}

impl EnvConfig {
    pub fn for_task(task: TaskKind) -> Self {
        let horizon = match task {
            TaskKind::PegInHole => 200,
            TaskKind::CupOnPlate => 500,
            TaskKind::PointReach => 100,
        };
        Self {
            task,
            dt: 0.002,
            substeps: 5,
            horizon,
            force_limit: None,
            peg: PegParams::default(),
            cup: CupParams::default(),
            point: PointParams::default(),
            contact: ContactParams::default(),
            scenarios: ScenarioSets::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PegParams {
    pub peg_width: f64,
    pub hole_width: f64,
    pub peg_length: f64,
    pub hole_depth: f64,
    /// Distance of the peg tip above the hole entry, measured along the tilted approach axis.
    pub approach_height: f64,
    pub peg_mass: f64,
    /// Effective translational inertia of the robot carrying the peg.
    pub carrier_mass: f64,
    pub carrier_inertia: f64,
    /// Required tip depth below the entry as a fraction of peg length.
    pub insertion_fraction: f64,
    /// Initial pose jitter σ for (x, z, θ).
    pub init_noise: Vec<f64>,
}

impl Default for PegParams {
    fn default() -> Self {
        Self {
            peg_width: 0.025_37,
            hole_width: 0.025_40,
            peg_length: 0.1,
            hole_depth: 0.07,
            approach_height: 0.05,
            peg_mass: 0.5,
            carrier_mass: 0.5,
            carrier_inertia: 0.005,
            insertion_fraction: 0.6,
            init_noise: vec![2e-4, 1e-3, 1.75e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CupParams {
    pub mass: f64,
    pub coupling_max: f64,
    pub coupling_length: f64,
    pub goal: Vec<f64>,
    /// Training start; the inertia coupling is anchored here.
    pub start: Vec<f64>,
    pub plate: bool,
    pub pos_tol: f64,
    pub vel_tol: f64,
    pub init_noise: Vec<f64>,
}

impl Default for CupParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            coupling_max: 0.5,
            coupling_length: 0.5,
            goal: vec![0.5, 0.0, 0.1],
            start: vec![0.8, -0.3, 0.45],
            plate: true,
            pos_tol: 0.01,
            vel_tol: 0.05,
            init_noise: vec![0.01; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointParams {
    pub dof: usize,
    pub mass: f64,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub pos_tol: f64,
    pub vel_tol: f64,
    pub init_noise: Vec<f64>,
}

impl Default for PointParams {
    fn default() -> Self {
        Self {
            dof: 1,
            mass: 1.0,
            start: vec![0.2],
            goal: vec![0.0],
            pos_tol: 0.01,
            vel_tol: 0.05,
            init_noise: vec![0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactParams {
    pub wall_stiffness: f64,
    pub wall_damping: f64,
    pub friction_coeff: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            wall_stiffness: 1e5,
            wall_damping: 100.0,
            friction_coeff: 0.3,
        }
    }
}

/// Named perturbation sets used by transfer sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSets {
    pub tilt_sweep: Vec<f64>,
    pub training_tilt: f64,
    pub mesh_sweep: Vec<f64>,
    pub training_mesh: f64,
    /// Cup start points by name (absolute positions).
    pub start_points: BTreeMap<String, Vec<f64>>,
}

impl Default for ScenarioSets {
    fn default() -> Self {
        let start_points = [
            ("T1", vec![0.2, 0.3, 0.45]),
            ("T2", vec![0.8, 0.3, 0.45]),
            ("T3", vec![0.2, -0.3, 0.45]),
            ("T4", vec![0.95, -0.1, 0.6]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            tilt_sweep: vec![-6.0, -4.0, -2.0, 0.0, 2.0],
            training_tilt: -2.0,
            mesh_sweep: vec![0.3, 0.5, 0.7, 0.9, 1.0],
            training_mesh: 1.0,
            start_points,
        }
    }
}
