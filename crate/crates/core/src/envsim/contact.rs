//! Penalty contact: linear spring plus viscous damping along the contact
//! normal, Coulomb friction along the tangent.
//!
//! Friction is resolved at velocity level. Given the non-contact force that
//! will act over the coming step, the tangential force is whatever stops the
//! contact point from sliding, capped at `μ·f_n`. That gives true sticking
//! without the stiffness of a regularized friction curve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{EnvSpec, EnvState, TaskGeometry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactSpec {
    pub hole_width: f64,
    pub peg_width: f64,
    pub wall_stiffness: f64,
    pub wall_damping: f64,
    pub friction_coeff: f64,
}

impl ContactSpec {
    pub fn new(hole_width: f64, peg_width: f64, wall_stiffness: f64, wall_damping: f64, friction_coeff: f64) -> Result<Self> {
        if !(peg_width > 0.0 && peg_width < hole_width) {
            return Err(Error::invalid(format!(
                "peg width {peg_width} must be positive and below the hole width {hole_width}"
            )));
        }
        if !(wall_stiffness > 0.0 && wall_damping >= 0.0 && friction_coeff >= 0.0) {
            return Err(Error::invalid("contact needs stiffness > 0, damping >= 0 and friction >= 0"));
        }
        Ok(Self {
            hole_width,
            peg_width,
            wall_stiffness,
            wall_damping,
            friction_coeff,
        })
    }
}

/// Horizontal plate under the cup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateSpec {
    pub height: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub friction_coeff: f64,
}

/// One penetrating contact, expressed for the body.
#[derive(Debug, Clone, Copy)]
struct Contact {
    /// Unit direction in which the environment pushes the body.
    normal: [f64; 3],
    depth: f64,
    /// Rows of the point Jacobian (Cartesian point velocity = jac · ẋ).
    jac: [[f64; 3]; 3],
    stiffness: f64,
    damping: f64,
    mu: f64,
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Contact {
    fn point_velocity(&self, v: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (o, row) in out.iter_mut().zip(&self.jac) {
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// Generalized force of a Cartesian point force: `Jᵀ f`.
    fn generalized(&self, f: &[f64; 3], dof: usize) -> Vec<f64> {
        (0..dof).map(|j| (0..3).map(|i| self.jac[i][j] * f[i]).sum()).collect()
    }

    /// `1 / (dᵀ J M⁻¹ Jᵀ d)` along Cartesian direction `d`.
    fn effective_mass(&self, minv: &DMatrix<f64>, d: &[f64; 3]) -> f64 {
        let dof = minv.nrows();
        let jt_d = DVector::from_vec(self.generalized(d, dof));
        let w = jt_d.dot(&(minv * &jt_d));
        if w > 0.0 {
            1.0 / w
        } else {
            0.0
        }
    }
}

fn planar_contact(point: [f64; 2], com: [f64; 2], normal: [f64; 2], depth: f64, c: &ContactSpec) -> Contact {
    // planar coordinates (x, z, θ); point velocity (ẋ - θ̇·r_z, ż + θ̇·r_x)
    let rx = point[0] - com[0];
    let rz = point[1] - com[1];
    Contact {
        normal: [normal[0], normal[1], 0.0],
        depth,
        jac: [[1.0, 0.0, -rz], [0.0, 1.0, rx], [0.0, 0.0, 0.0]],
        stiffness: c.wall_stiffness,
        damping: c.wall_damping,
        mu: c.friction_coeff,
    }
}

/// Penetration of a world point into the board with its hole:
/// board surface at `z = 0`, walls at `x = ±w/2` down to the bottom `z = -depth`.
fn board_penetration(p: [f64; 2], half_hole: f64, depth: f64) -> Option<(f64, [f64; 2])> {
    let [px, pz] = p;
    if pz >= 0.0 {
        return None;
    }
    let in_column = px.abs() < half_hole;
    if in_column && pz > -depth {
        return None;
    }
    let mut best: Option<(f64, [f64; 2])> = None;
    let mut consider = |d: f64, n: [f64; 2]| {
        if best.map_or(true, |(b, _)| d < b) {
            best = Some((d, n));
        }
    };
    if in_column {
        consider(-depth - pz, [0.0, 1.0]);
    } else {
        consider(-pz, [0.0, 1.0]);
        if pz > -depth {
            consider(px.abs() - half_hole, [-px.signum(), 0.0]);
        }
    }
    best
}

fn peg_contacts(spec: &EnvSpec, c: &ContactSpec, x: &[f64], out: &mut Vec<Contact>) {
    let TaskGeometry::PegInHole(geom) = &spec.task else {
        return;
    };
    let half_w = 0.5 * c.peg_width;
    let half_l = 0.5 * geom.peg_length;
    let half_hole = 0.5 * c.hole_width;
    let (s, co) = x[2].sin_cos();
    let com = [x[0], x[1]];
    let to_world = |bx: f64, bz: f64| [com[0] + co * bx - s * bz, com[1] + s * bx + co * bz];

    // peg bottom corners against board, walls and hole bottom
    let mut corner_touching = [false; 2];
    for (side, bx) in [-half_w, half_w].into_iter().enumerate() {
        let p = to_world(bx, -half_l);
        if let Some((depth, n)) = board_penetration(p, half_hole, geom.hole_depth) {
            corner_touching[side] = true;
            out.push(planar_contact(p, com, n, depth, c));
        }
    }
    // hole edges against the peg faces; an edge cutting the face whose corner
    // already touches the board measures the same overlap and is skipped
    for (side, ex) in [-half_hole, half_hole].into_iter().enumerate() {
        if corner_touching[side] {
            continue;
        }
        let dx = ex - com[0];
        let dz = -com[1];
        let qx = co * dx + s * dz;
        let qz = -s * dx + co * dz;
        if qx.abs() >= half_w || qz.abs() >= half_l {
            continue;
        }
        let side_depth = half_w - qx.abs();
        let bottom = qz + half_l;
        // outward face normal in the body frame; the edge pushes the peg the other way
        let (depth, nb) = if side_depth <= bottom {
            (side_depth, [qx.signum(), 0.0])
        } else {
            (bottom, [0.0, -1.0])
        };
        let push = [-(co * nb[0] - s * nb[1]), -(s * nb[0] + co * nb[1])];
        out.push(planar_contact([ex, 0.0], com, push, depth, c));
    }
}

fn plate_contacts(p: &PlateSpec, x: &[f64], out: &mut Vec<Contact>) {
    let depth = p.height - x[2];
    if depth > 0.0 {
        out.push(Contact {
            normal: [0.0, 0.0, 1.0],
            depth,
            jac: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            stiffness: p.stiffness,
            damping: p.damping,
            mu: p.friction_coeff,
        });
    }
}

/// Contact force on the body in generalized coordinates.
///
/// `drift` is the non-contact generalized force acting over the coming step;
/// friction uses it to decide between sticking and sliding. Without it the
/// friction only opposes the current sliding velocity.
pub(super) fn contact_force(spec: &EnvSpec, state: &EnvState, drift: Option<&[f64]>) -> (Vec<f64>, bool) {
    let dof = spec.dof;
    let mut contacts = Vec::new();
    if let Some(c) = &spec.contact {
        peg_contacts(spec, c, &state.x, &mut contacts);
    }
    if let Some(p) = &spec.plate {
        plate_contacts(p, &state.x, &mut contacts);
    }
    let mut total = vec![0.0; dof];
    if contacts.is_empty() {
        return (total, false);
    }

    let v = &state.xdot;
    let mut normal_total = vec![0.0; dof];
    let mut normal_mag = Vec::with_capacity(contacts.len());
    for c in &contacts {
        let vn = dot3(&c.point_velocity(v), &c.normal);
        // approach speed (-vn) adds to the spring force; never adhesive
        let fn_ = (c.stiffness * c.depth - c.damping * vn).max(0.0);
        normal_mag.push(fn_);
        let f = [c.normal[0] * fn_, c.normal[1] * fn_, c.normal[2] * fn_];
        for (t, g) in normal_total.iter_mut().zip(c.generalized(&f, dof)) {
            *t += g;
        }
    }

    let minv = spec.dynamics.inverse_mass(&state.x);
    let predicted: Vec<f64> = match drift {
        Some(d) => {
            let net: Vec<f64> = d.iter().zip(&normal_total).map(|(a, b)| a + b).collect();
            let acc = &minv * DVector::from_vec(net);
            v.iter().zip(acc.iter()).map(|(vi, ai)| vi + spec.dt * ai).collect()
        }
        None => v.clone(),
    };
    let sharing = contacts.len() as f64;
    for (c, fn_) in contacts.iter().zip(&normal_mag) {
        if *fn_ <= 0.0 || c.mu <= 0.0 {
            continue;
        }
        let vp = c.point_velocity(&predicted);
        let vn = dot3(&vp, &c.normal);
        let vt = [vp[0] - vn * c.normal[0], vp[1] - vn * c.normal[1], vp[2] - vn * c.normal[2]];
        let speed = dot3(&vt, &vt).sqrt();
        if speed <= 0.0 {
            continue;
        }
        let dir = [vt[0] / speed, vt[1] / speed, vt[2] / speed];
        let stop = c.effective_mass(&minv, &dir) * speed / (spec.dt * sharing);
        let ft = stop.min(c.mu * fn_);
        let f = [-dir[0] * ft, -dir[1] * ft, -dir[2] * ft];
        for (t, g) in total.iter_mut().zip(c.generalized(&f, dof)) {
            *t += g;
        }
    }
    for (t, n) in total.iter_mut().zip(&normal_total) {
        *t += n;
    }
    (total, true)
}

/// Contact force the environment exerts on the body at `state`.
///
/// Zero without interpenetration; otherwise the penalty normal force
/// `k·depth + b·approach_speed` pointing out of the penetrated surface, plus
/// Coulomb friction opposing the current sliding velocity.
pub fn external_force(spec: &EnvSpec, state: &EnvState) -> Vec<f64> {
    contact_force(spec, state, None).0
}
