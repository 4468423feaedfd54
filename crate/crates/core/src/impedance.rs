//! Cartesian impedance control law and gain parameterizations.
//!
//! The feedback part of the impedance law is `F_fb = -B ė - K e` with diagonal
//! `K` and `B`. Policies emit unconstrained vectors; the helpers here map them
//! onto positive gains (sigmoid between bounds) or bounded forces (tanh).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Clip used when inverting the squashing maps, keeps logit/atanh finite.
const UNSQUASH_CLIP: f64 = 1e-6;

/// Diagonal stiffness with an optional damping factor (`B = d·√K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainAction {
    pub k_diag: Vec<f64>,
    pub d: Option<f64>,
}

impl GainAction {
    pub fn new(k_diag: Vec<f64>, d: Option<f64>) -> Result<Self> {
        if let Some(bad) = k_diag.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::invalid(format!("stiffness entries must be positive, got {bad}")));
        }
        if let Some(d) = d {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::invalid(format!("damping factor must be positive, got {d}")));
            }
        }
        Ok(Self { k_diag, d })
    }

    pub fn dim(&self) -> usize {
        self.k_diag.len()
    }

    /// Flat vector `[k.., d?]`, the layout stored in demo files.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.k_diag.clone();
        v.extend(self.d);
        v
    }

    pub fn from_vec(v: &[f64], with_factor: bool) -> Result<Self> {
        if with_factor {
            let (d, k) = v
                .split_last()
                .ok_or_else(|| Error::invalid("gain vector is empty"))?;
            Self::new(k.to_vec(), Some(*d))
        } else {
            Self::new(v.to_vec(), None)
        }
    }
}

/// A Cartesian feedback force command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceAction {
    pub f_fb: Vec<f64>,
}

/// Per-axis stiffness range plus the optional damping-factor range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainBounds {
    pub k_min: Vec<f64>,
    pub k_max: Vec<f64>,
    pub d_range: Option<(f64, f64)>,
}

impl GainBounds {
    pub fn new(k_min: Vec<f64>, k_max: Vec<f64>, d_range: Option<(f64, f64)>) -> Result<Self> {
        check_dim("gain bounds", k_min.len(), k_max.len())?;
        for (lo, hi) in k_min.iter().zip(&k_max) {
            if !(*lo > 0.0 && hi > lo) {
                return Err(Error::invalid(format!("stiffness bounds need 0 < k_min < k_max, got ({lo}, {hi})")));
            }
        }
        if let Some((lo, hi)) = d_range {
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::invalid(format!("damping factor bounds need 0 < d_min < d_max, got ({lo}, {hi})")));
            }
        }
        Ok(Self { k_min, k_max, d_range })
    }

    /// Translational axes get [10, 2000] N/m, rotational axes [1, 200] N·m/rad.
    pub fn standard(rotational: &[bool], with_factor: bool) -> Self {
        let k_min = rotational.iter().map(|r| if *r { 1.0 } else { 10.0 }).collect();
        let k_max = rotational.iter().map(|r| if *r { 200.0 } else { 2000.0 }).collect();
        Self {
            k_min,
            k_max,
            d_range: with_factor.then_some((0.5, 4.0)),
        }
    }

    pub fn k_dim(&self) -> usize {
        self.k_min.len()
    }

    /// Length of the unconstrained policy output.
    pub fn raw_dim(&self) -> usize {
        self.k_dim() + usize::from(self.d_range.is_some())
    }

    pub fn clamp_k(&self, k: &mut [f64]) {
        for ((k, lo), hi) in k.iter_mut().zip(&self.k_min).zip(&self.k_max) {
            *k = k.clamp(*lo, *hi);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `F_fb = -diag(b)·ė - diag(k)·e`, each axis clamped to `±f_max`.
pub fn feedback_force(k_diag: &[f64], b_diag: &[f64], e: &[f64], edot: &[f64], f_max: &[f64]) -> Result<Vec<f64>> {
    let n = e.len();
    check_dim("stiffness", n, k_diag.len())?;
    check_dim("damping", n, b_diag.len())?;
    check_dim("error velocity", n, edot.len())?;
    check_dim("force limit", n, f_max.len())?;
    Ok((0..n)
        .map(|i| (-b_diag[i] * edot[i] - k_diag[i] * e[i]).clamp(-f_max[i], f_max[i]))
        .collect())
}

/// `b_i = d·√k_i`.
pub fn damping_from_factor(k_diag: &[f64], d: f64) -> Result<Vec<f64>> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::invalid(format!("damping factor must be positive, got {d}")));
    }
    k_diag
        .iter()
        .map(|&k| {
            if k > 0.0 && k.is_finite() {
                Ok(d * k.sqrt())
            } else {
                Err(Error::invalid(format!("stiffness must be positive, got {k}")))
            }
        })
        .collect()
}

/// `b_i = 2·√(k_i·m_i)`.
pub fn critical_damping(k_diag: &[f64], masses: &[f64]) -> Vec<f64> {
    k_diag.iter().zip(masses).map(|(k, m)| 2.0 * (k * m).sqrt()).collect()
}

/// Elementwise `k = k_min + (k_max - k_min)·sigmoid(raw)`; the trailing raw
/// entry maps onto the damping factor when the bounds carry one.
pub fn to_positive_gains(raw: &[f64], bounds: &GainBounds) -> Result<GainAction> {
    check_dim("raw gain action", bounds.raw_dim(), raw.len())?;
    let n = bounds.k_dim();
    let k_diag = (0..n)
        .map(|i| bounds.k_min[i] + (bounds.k_max[i] - bounds.k_min[i]) * sigmoid(raw[i]))
        .collect();
    let d = bounds.d_range.map(|(lo, hi)| lo + (hi - lo) * sigmoid(raw[n]));
    Ok(GainAction { k_diag, d })
}

/// Inverse of [`to_positive_gains`]; values on or outside the bounds are
/// pulled just inside before the logit.
pub fn from_positive_gains(gains: &GainAction, bounds: &GainBounds) -> Result<Vec<f64>> {
    check_dim("gain action", bounds.k_dim(), gains.k_diag.len())?;
    let unsquash = |v: f64, lo: f64, hi: f64| {
        let p = ((v - lo) / (hi - lo)).clamp(UNSQUASH_CLIP, 1.0 - UNSQUASH_CLIP);
        logit(p)
    };
    let mut raw: Vec<f64> = (0..bounds.k_dim())
        .map(|i| unsquash(gains.k_diag[i], bounds.k_min[i], bounds.k_max[i]))
        .collect();
    match (bounds.d_range, gains.d) {
        (Some((lo, hi)), Some(d)) => raw.push(unsquash(d, lo, hi)),
        (None, None) => {}
        _ => return Err(Error::invalid("damping factor presence does not match the gain bounds")),
    }
    Ok(raw)
}

/// `f = f_max·tanh(raw)`.
pub fn squash_force(raw: &[f64], f_max: &[f64]) -> Result<Vec<f64>> {
    check_dim("raw force action", f_max.len(), raw.len())?;
    Ok(raw.iter().zip(f_max).map(|(r, m)| m * r.tanh()).collect())
}

pub fn unsquash_force(force: &[f64], f_max: &[f64]) -> Result<Vec<f64>> {
    check_dim("force", f_max.len(), force.len())?;
    Ok(force
        .iter()
        .zip(f_max)
        .map(|(f, m)| (f / m).clamp(-1.0 + UNSQUASH_CLIP, 1.0 - UNSQUASH_CLIP).atanh())
        .collect())
}

/// Fixed tool-tip stiffness together with the COM-to-tip Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct TipStiffnessSpec {
    pub k_tip: DMatrix<f64>,
    pub j_tip: DMatrix<f64>,
}

/// Jacobian of the planar tip `(x + r·sinθ, z - r·cosθ, θ)` w.r.t. `(x, z, θ)`
/// for a tip offset `r` along the body's downward axis.
pub fn planar_tip_jacobian(theta: f64, tip_offset: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(3, 3, &[1.0, 0.0, tip_offset * c, 0.0, 1.0, tip_offset * s, 0.0, 0.0, 1.0])
}

/// `K_COM = J_tipᵀ · K_tip · J_tip`.
pub fn tip_to_com(spec: &TipStiffnessSpec) -> Result<DMatrix<f64>> {
    let (kr, kc) = spec.k_tip.shape();
    check_dim("tip stiffness columns", kr, kc)?;
    check_dim("tip jacobian rows", kr, spec.j_tip.nrows())?;
    let k = spec.j_tip.transpose() * &spec.k_tip * &spec.j_tip;
    // symmetrize away rounding asymmetry
    Ok((&k + k.transpose()) * 0.5)
}

/// Solve `diag(k)·e = K_COM·e` axis by axis. Axes with `|e_i| <= eps` fall back
/// to the diagonal entry `K_COM[i][i]`; results are clamped into the bounds.
pub fn diagonalize_stiffness(k_com: &DMatrix<f64>, e: &[f64], eps: f64, bounds: &GainBounds) -> Result<Vec<f64>> {
    let n = e.len();
    check_dim("stiffness matrix rows", n, k_com.nrows())?;
    check_dim("stiffness matrix cols", n, k_com.ncols())?;
    check_dim("gain bounds", n, bounds.k_dim())?;
    let mut k: Vec<f64> = (0..n)
        .map(|i| {
            if e[i].abs() > eps {
                let row: f64 = (0..n).map(|j| k_com[(i, j)] * e[j]).sum();
                row / e[i]
            } else {
                k_com[(i, i)]
            }
        })
        .collect();
    bounds.clamp_k(&mut k);
    Ok(k)
}
