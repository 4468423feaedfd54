//! Recorded episodes and the line-delimited demo file.
//!
//! A demo file holds one JSON header line followed by one record per policy
//! step and one closing record per episode:
//!
//! ```text
//! {"format":"impedance-irl/demos","version":1,"task":"cup-on-plate",...}
//! {"kind":"step","episode":0,"t":0.0,"e":[..],"edot":[..],"action":[..],"force":[..]}
//! ...
//! {"kind":"end","episode":0,"e":[..],"edot":[..],"success":true}
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::ActionKind;
use crate::envsim::{EnvSpec, HistoryBuffer, TaskKind};
use crate::error::{Error, Result};

const FORMAT: &str = "impedance-irl/demos";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: f64,
    pub e: Vec<f64>,
    pub edot: Vec<f64>,
    /// Bounded action actually executed: gains `[k.., d?]` or feedback force.
    pub action: Vec<f64>,
    /// Feedback force applied at the observation instant.
    pub force: Vec<f64>,
}

/// What a trajectory needs to be scored without the env at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub task: TaskKind,
    pub goal: Vec<f64>,
    /// Control period (s).
    pub dt: f64,
    /// Peg tip offset from the COM, peg-in-hole only.
    #[serde(default)]
    pub tip_offset: Option<f64>,
    /// Lateral alignment tolerance, peg-in-hole only.
    #[serde(default)]
    pub align_tol: Option<f64>,
}

impl TrajectoryMeta {
    pub fn for_env(spec: &EnvSpec) -> Self {
        Self {
            task: spec.kind(),
            goal: spec.goal.clone(),
            dt: spec.control_period(),
            tip_offset: spec.peg().map(|g| g.tip_offset()),
            align_tol: spec.peg().map(|_| crate::envsim::alignment_tolerance(spec)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub steps: Vec<Step>,
    /// Tracking error and velocity after the last step.
    pub final_e: Vec<f64>,
    pub final_edot: Vec<f64>,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Body positions at every step plus the final one.
    pub fn positions(&self) -> Vec<Vec<f64>> {
        let goal = &self.meta.goal;
        let to_x = |e: &[f64]| e.iter().zip(goal).map(|(a, g)| a + g).collect::<Vec<f64>>();
        self.steps
            .iter()
            .map(|s| to_x(&s.e))
            .chain(std::iter::once(to_x(&self.final_e)))
            .collect()
    }

    /// Policy input at every step, plain `[e, ė]` or five-step history.
    pub fn features(&self, history: bool) -> Vec<Vec<f64>> {
        let dof = self.final_e.len();
        let mut buf = HistoryBuffer::new(dof);
        self.steps
            .iter()
            .map(|s| {
                let pair: Vec<f64> = s.e.iter().chain(&s.edot).copied().collect();
                if history {
                    buf.push(pair);
                    buf.features()
                } else {
                    pair
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub format: String,
    pub version: u32,
    pub task: TaskKind,
    pub dof: usize,
    pub action_kind: ActionKind,
    pub action_dim: usize,
    pub with_factor: bool,
    pub dt: f64,
    pub generator: String,
    pub config_hash: String,
    pub count: usize,
    pub meta: TrajectoryMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub task: TaskKind,
    pub generator: String,
    pub config_hash: String,
    pub with_factor: bool,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Record {
    Step {
        episode: usize,
        #[serde(flatten)]
        step: Step,
    },
    End {
        episode: usize,
        e: Vec<f64>,
        edot: Vec<f64>,
        success: bool,
    },
}

impl DemoSet {
    pub fn count(&self) -> usize {
        self.trajectories.len()
    }

    pub fn dof(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.final_e.len())
    }

    pub fn action_dim(&self) -> usize {
        self.trajectories
            .iter()
            .flat_map(|t| t.steps.first())
            .map(|s| s.action.len())
            .next()
            .unwrap_or(0)
    }

    /// Check the shared-dimension invariant.
    pub fn validate(&self) -> Result<()> {
        let (dof, adim) = (self.dof(), self.action_dim());
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.meta.task != self.task {
                return Err(Error::invalid(format!("trajectory {i} belongs to task {}", t.meta.task)));
            }
            let bad_final = t.final_e.len() != dof || t.final_edot.len() != dof;
            let bad_step = t
                .steps
                .iter()
                .any(|s| s.e.len() != dof || s.edot.len() != dof || s.force.len() != dof || s.action.len() != adim);
            if bad_final || bad_step {
                return Err(Error::invalid(format!("trajectory {i} has inconsistent dimensions")));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let first = self.trajectories.first().ok_or(Error::Empty("demo set"))?;
        let header = DemoHeader {
            format: FORMAT.into(),
            version: VERSION,
            task: self.task,
            dof: self.dof(),
            action_kind: ActionKind::Gain,
            action_dim: self.action_dim(),
            with_factor: self.with_factor,
            dt: first.meta.dt,
            generator: self.generator.clone(),
            config_hash: self.config_hash.clone(),
            count: self.count(),
            meta: first.meta.clone(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (episode, traj) in self.trajectories.iter().enumerate() {
            for step in &traj.steps {
                serde_json::to_writer(
                    &mut w,
                    &Record::Step {
                        episode,
                        step: step.clone(),
                    },
                )?;
                w.write_all(b"\n")?;
            }
            serde_json::to_writer(
                &mut w,
                &Record::End {
                    episode,
                    e: traj.final_e.clone(),
                    edot: traj.final_edot.clone(),
                    success: traj.success,
                },
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let header: DemoHeader = match lines.next() {
            Some((_, line)) => {
                serde_json::from_str(&line?).map_err(|e| Error::format(&name, format!("bad header: {e}")))?
            }
            None => return Err(Error::format(&name, "file is empty")),
        };
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::format(
                &name,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let mut trajectories = Vec::with_capacity(header.count);
        let mut steps = Vec::new();
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| Error::format(&name, format!("line {}: {e}", n + 1)))?;
            let expected = trajectories.len();
            match rec {
                Record::Step { episode, step } => {
                    if episode != expected {
                        return Err(Error::format(&name, format!("line {}: episode {episode} out of order", n + 1)));
                    }
                    steps.push(step);
                }
                Record::End {
                    episode,
                    e,
                    edot,
                    success,
                } => {
                    if episode != expected {
                        return Err(Error::format(&name, format!("line {}: episode {episode} out of order", n + 1)));
                    }
                    trajectories.push(Trajectory {
                        meta: header.meta.clone(),
                        steps: std::mem::take(&mut steps),
                        final_e: e,
                        final_edot: edot,
                        success,
                    });
                }
            }
        }
        if !steps.is_empty() {
            return Err(Error::format(&name, "last episode has no end record"));
        }
        if trajectories.len() != header.count {
            return Err(Error::format(
                &name,
                format!("header announces {} episodes, found {}", header.count, trajectories.len()),
            ));
        }
        let set = DemoSet {
            task: header.task,
            generator: header.generator,
            config_hash: header.config_hash,
            with_factor: header.with_factor,
            trajectories,
        };
        set.validate().map_err(|e| Error::format(&name, e.to_string()))?;
        if set.dof() != header.dof || set.action_dim() != header.action_dim {
            return Err(Error::format(&name, "header dimensions do not match the records"));
        }
        Ok(set)
    }

    /// `(features, raw action)` pairs for a learner in `kind` space.
    ///
    /// Gain learners see the recorded gains, force learners the recorded
    /// feedback force; both are mapped back through the space's squashing.
    pub fn pairs(&self, space: &crate::action::ActionSpace, history: bool) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let mut out = Vec::new();
        for traj in &self.trajectories {
            for (obs, step) in traj.features(history).into_iter().zip(&traj.steps) {
                let bounded = match space.kind() {
                    ActionKind::Gain => &step.action,
                    ActionKind::Force => &step.force,
                };
                out.push((obs, space.unsquash(bounded)?));
            }
        }
        Ok(out)
    }
}
