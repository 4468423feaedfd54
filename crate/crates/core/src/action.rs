//! Mapping between unconstrained policy outputs and low-level commands.

use serde::{Deserialize, Serialize};

use crate::envsim::{tracking_error, Command, EnvSpec, EnvState};
use crate::error::{Error, Result};
use crate::impedance::{
    critical_damping, damping_from_factor, feedback_force, from_positive_gains, squash_force, to_positive_gains,
    unsquash_force, GainAction, GainBounds,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Gain,
    Force,
}

impl ActionKind {
    pub fn label(self) -> &'static str {
        match self {
            ActionKind::Gain => "gain",
            ActionKind::Force => "force",
        }
    }
}

impl std::fmt::Display for ActionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ActionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gain" => Ok(ActionKind::Gain),
            "force" => Ok(ActionKind::Force),
            other => Err(Error::Config(format!("unknown action space `{other}` (gain | force)"))),
        }
    }
}

/// Action representation of a policy on a given env.
///
/// Gain actions without a damping factor are critically damped against the
/// diagonal of the env's mass matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Gain(GainBounds),
    Force { f_max: Vec<f64> },
}

/// An executed action: the bounded action and the resulting command.
#[derive(Debug, Clone, PartialEq)]
pub struct Executed {
    /// Gains `[k.., d?]` or the feedback force.
    pub action: Vec<f64>,
    pub command: Command,
    /// Feedback force at the state the action was chosen in.
    pub force: Vec<f64>,
}

impl ActionSpace {
    /// Standard space for `spec`; the damping factor is learned only when `with_factor`.
    pub fn standard(kind: ActionKind, spec: &EnvSpec, with_factor: bool) -> Self {
        match kind {
            ActionKind::Gain => ActionSpace::Gain(GainBounds::standard(&spec.rotational, with_factor)),
            ActionKind::Force => ActionSpace::Force {
                f_max: spec.force_limit.clone(),
            },
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            ActionSpace::Gain(_) => ActionKind::Gain,
            ActionSpace::Force { .. } => ActionKind::Force,
        }
    }

    pub fn raw_dim(&self) -> usize {
        match self {
            ActionSpace::Gain(b) => b.raw_dim(),
            ActionSpace::Force { f_max } => f_max.len(),
        }
    }

    pub fn with_factor(&self) -> bool {
        matches!(self, ActionSpace::Gain(b) if b.d_range.is_some())
    }

    /// Squash a raw policy output and turn it into a command at `state`.
    pub fn execute(&self, spec: &EnvSpec, state: &EnvState, raw: &[f64]) -> Result<Executed> {
        match self {
            ActionSpace::Gain(bounds) => {
                let gains = to_positive_gains(raw, bounds)?;
                gain_command(spec, state, &gains)
            }
            ActionSpace::Force { f_max } => {
                let f = squash_force(raw, f_max)?;
                Ok(Executed {
                    action: f.clone(),
                    command: Command::Force(f.clone()),
                    force: f,
                })
            }
        }
    }

    /// Raw policy-space value of a recorded bounded action.
    pub fn unsquash(&self, action: &[f64]) -> Result<Vec<f64>> {
        match self {
            ActionSpace::Gain(bounds) => {
                let gains = GainAction::from_vec(action, bounds.d_range.is_some())?;
                from_positive_gains(&gains, bounds)
            }
            ActionSpace::Force { f_max } => unsquash_force(action, f_max),
        }
    }
}

/// Damping for `gains`: `d·√k` with a factor, otherwise critical for the env masses at `state`.
pub fn damping_for(spec: &EnvSpec, state: &EnvState, gains: &GainAction) -> Result<Vec<f64>> {
    match gains.d {
        Some(d) => damping_from_factor(&gains.k_diag, d),
        None => Ok(critical_damping(&gains.k_diag, &spec.dynamics.mass_diagonal(&state.x))),
    }
}

/// Impedance command for bounded gains.
pub fn gain_command(spec: &EnvSpec, state: &EnvState, gains: &GainAction) -> Result<Executed> {
    let b = damping_for(spec, state, gains)?;
    let e = tracking_error(spec, state);
    let force = feedback_force(&gains.k_diag, &b, &e, &state.xdot, &spec.force_limit)?;
    Ok(Executed {
        action: gains.to_vec(),
        command: Command::Impedance {
            k: gains.k_diag.clone(),
            b,
        },
        force,
    })
}
