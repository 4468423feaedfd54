//! Sliding-window least-squares recovery of diagonal stiffness and damping
//! from force-annotated trajectories, axis by axis: `F_i = -k_i e_i - b_i ė_i`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::action::damping_for;
use crate::envsim::{EnvSpec, EnvState};
use crate::error::{Error, Result};
use crate::impedance::{GainAction, GainBounds};
use crate::trajectory::Trajectory;

pub const DEFAULT_WINDOW: usize = 10;
/// Column-normalized condition number above which an axis is treated as rank deficient.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Which parameters of an axis came from the current window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisFit {
    Full,
    /// Damping not identifiable; carried from the previous window.
    DampingCarried,
    /// Stiffness not identifiable; carried from the previous window.
    StiffnessCarried,
    /// Nothing excited; both carried.
    Carried,
}

impl AxisFit {
    pub fn code(self) -> &'static str {
        match self {
            AxisFit::Full => "ok",
            AxisFit::DampingCarried => "b-carried",
            AxisFit::StiffnessCarried => "k-carried",
            AxisFit::Carried => "carried",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub window_index: usize,
    /// Time of the window's first sample.
    pub t: f64,
    /// Clamped into the stiffness bounds (when given); damping kept non-negative.
    pub k_diag: Vec<f64>,
    pub b_diag: Vec<f64>,
    pub raw_k: Vec<f64>,
    pub raw_b: Vec<f64>,
    /// RMS force residual over the window and all axes (N).
    pub residual: f64,
    pub flags: Vec<AxisFit>,
}

/// One `(e, ė, F)` sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<'a> {
    pub e: &'a [f64],
    pub edot: &'a [f64],
    pub force: &'a [f64],
}

/// Least squares on one axis. Returns `(k, b)`; unidentified
/// parameters come back as `None`.
fn fit_axis(e: &DVector<f64>, edot: &DVector<f64>, f: &DVector<f64>) -> (Option<f64>, Option<f64>) {
    let (ne, nv) = (e.norm(), edot.norm());
    if ne == 0.0 && nv == 0.0 {
        return (None, None);
    }
    if ne > 0.0 && nv > 0.0 {
        // condition number of the column-normalized design
        let (a1, a2) = (-e / ne, -edot / nv);
        let sv = DMatrix::from_columns(&[a1.clone(), a2.clone()]).svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if smin > 0.0 && smax / smin <= CONDITION_LIMIT {
            // Gram-Schmidt with a second pass: near-collinear columns leave
            // `w` tiny, and one pass keeps an O(ε) component along `a1`
            let mut r12 = a1.dot(&a2);
            let mut w = &a2 - &a1 * r12;
            let c = a1.dot(&w);
            w -= &a1 * c;
            r12 += c;
            let r22 = w.norm();
            let x2 = w.dot(f) / (r22 * r22);
            let x1 = a1.dot(f) - r12 * x2;
            return (Some(x1 / ne), Some(x2 / nv));
        }
    }
    // one parameter alone: keep whichever explains more of the force
    let single = |c: &DVector<f64>| -> Option<(f64, f64)> {
        let n2 = c.norm_squared();
        (n2 > 0.0).then(|| {
            let p = -c.dot(f) / n2;
            (p, (f + c * p).norm_squared())
        })
    };
    match (single(e), single(edot)) {
        (Some((k, rk)), Some((b, rb))) => {
            if rk <= rb {
                (Some(k), None)
            } else {
                (None, Some(b))
            }
        }
        (Some((k, _)), None) => (Some(k), None),
        (None, Some((b, _))) => (None, Some(b)),
        (None, None) => (None, None),
    }
}

/// Fit one window. `previous` supplies values for parameters the window does
/// not excite (zero when absent).
pub fn estimate_window(
    window: &[Sample<'_>],
    window_len: usize,
    previous: Option<&GainEstimate>,
    bounds: Option<&GainBounds>,
) -> Result<GainEstimate> {
    if window_len < 2 {
        return Err(Error::invalid("estimation window needs at least two samples"));
    }
    if window.len() < window_len {
        return Err(Error::invalid(format!(
            "window holds {} samples, {} required",
            window.len(),
            window_len
        )));
    }
    let window = &window[..window_len];
    let dim = window[0].e.len();
    for s in window {
        if s.e.len() != dim || s.edot.len() != dim || s.force.len() != dim {
            return Err(Error::Dimension {
                what: "estimation sample",
                expected: dim,
                got: s.force.len(),
            });
        }
    }
    let mut raw_k = Vec::with_capacity(dim);
    let mut raw_b = Vec::with_capacity(dim);
    let mut flags = Vec::with_capacity(dim);
    for i in 0..dim {
        let e = DVector::from_iterator(window_len, window.iter().map(|s| s.e[i]));
        let v = DVector::from_iterator(window_len, window.iter().map(|s| s.edot[i]));
        let f = DVector::from_iterator(window_len, window.iter().map(|s| s.force[i]));
        let (k, b) = fit_axis(&e, &v, &f);
        let prev_k = previous.map_or(0.0, |p| p.raw_k[i]);
        let prev_b = previous.map_or(0.0, |p| p.raw_b[i]);
        flags.push(match (k, b) {
            (Some(_), Some(_)) => AxisFit::Full,
            (Some(_), None) => AxisFit::DampingCarried,
            (None, Some(_)) => AxisFit::StiffnessCarried,
            (None, None) => AxisFit::Carried,
        });
        raw_k.push(k.unwrap_or(prev_k));
        raw_b.push(b.unwrap_or(prev_b));
    }
    let mut sq = 0.0;
    for s in window {
        for i in 0..dim {
            let r = s.force[i] + raw_k[i] * s.e[i] + raw_b[i] * s.edot[i];
            sq += r * r;
        }
    }
    let residual = (sq / (window_len * dim) as f64).sqrt();
    let k_diag = match bounds {
        Some(b) if b.k_dim() == dim => {
            let mut k = raw_k.clone();
            b.clamp_k(&mut k);
            k
        }
        _ => raw_k.clone(),
    };
    let b_diag = raw_b.iter().map(|b| b.max(0.0)).collect();
    Ok(GainEstimate {
        window_index: 0,
        t: 0.0,
        k_diag,
        b_diag,
        raw_k,
        raw_b,
        residual,
        flags,
    })
}

/// One estimate per window position: `steps - window + 1` of them.
pub fn estimate_trajectory(
    traj: &Trajectory,
    window: usize,
    stride: usize,
    bounds: Option<&GainBounds>,
) -> Result<Vec<GainEstimate>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if traj.steps.iter().any(|s| s.force.is_empty()) {
        return Err(Error::MissingForce);
    }
    if traj.steps.len() < window {
        return Err(Error::invalid(format!(
            "trajectory has {} steps, shorter than the {window}-step window",
            traj.steps.len()
        )));
    }
    let samples: Vec<Sample<'_>> = traj
        .steps
        .iter()
        .map(|s| Sample {
            e: &s.e,
            edot: &s.edot,
            force: &s.force,
        })
        .collect();
    let mut out: Vec<GainEstimate> = Vec::new();
    for (w, start) in (0..=samples.len() - window).step_by(stride).enumerate() {
        let mut est = estimate_window(&samples[start..start + window], window, out.last(), bounds)?;
        est.window_index = w;
        est.t = traj.steps[start].t;
        out.push(est);
    }
    Ok(out)
}

/// Centered running median of odd `width`; the ends use the available samples.
pub fn median_filter(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            let mut w: Vec<f64> = x[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let n = w.len();
            if n % 2 == 1 {
                w[n / 2]
            } else {
                0.5 * (w[n / 2 - 1] + w[n / 2])
            }
        })
        .collect()
}

/// Apply `median_filter` to each stiffness and damping channel.
pub fn smooth(estimates: &[GainEstimate], width: usize) -> Vec<GainEstimate> {
    if estimates.is_empty() {
        return Vec::new();
    }
    let dim = estimates[0].k_diag.len();
    let mut out = estimates.to_vec();
    for i in 0..dim {
        let k: Vec<f64> = estimates.iter().map(|e| e.k_diag[i]).collect();
        let b: Vec<f64> = estimates.iter().map(|e| e.b_diag[i]).collect();
        for (j, (kk, bb)) in median_filter(&k, width).into_iter().zip(median_filter(&b, width)).enumerate() {
            out[j].k_diag[i] = kk;
            out[j].b_diag[i] = bb;
        }
    }
    out
}

/// CSV with columns `episode, window, t, k0.., b0.., residual, flags`.
pub fn write_estimates_csv<W: Write>(w: W, per_episode: &[Vec<GainEstimate>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let dim = per_episode.iter().flat_map(|e| e.first()).map(|e| e.k_diag.len()).next().unwrap_or(0);
    let mut header = vec!["episode".to_string(), "window".into(), "t".into()];
    header.extend((0..dim).map(|i| format!("k{i}")));
    header.extend((0..dim).map(|i| format!("b{i}")));
    header.push("residual".into());
    header.push("flags".into());
    wtr.write_record(&header)?;
    for (ep, list) in per_episode.iter().enumerate() {
        for est in list {
            let mut row = vec![ep.to_string(), est.window_index.to_string(), format!("{}", est.t)];
            row.extend(est.k_diag.iter().map(|v| format!("{v}")));
            row.extend(est.b_diag.iter().map(|v| format!("{v}")));
            row.push(format!("{}", est.residual));
            row.push(est.flags.iter().map(|f| f.code()).collect::<Vec<_>>().join(";"));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_estimates_csv(path: &Path, per_episode: &[Vec<GainEstimate>]) -> Result<()> {
    write_estimates_csv(std::fs::File::create(path)?, per_episode)
}

/// Per-step `(k, b)` the controller actually used in a gain-space trajectory.
pub fn recorded_gains(spec: &EnvSpec, traj: &Trajectory, with_factor: bool) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let at = EnvState::at_rest(spec.goal.clone());
    traj.steps
        .iter()
        .map(|s| {
            let g = GainAction::from_vec(&s.action, with_factor)?;
            let b = damping_for(spec, &at, &g)?;
            Ok((g.k_diag, b))
        })
        .collect()
}

/// Agreement between window estimates and the recorded gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCheck {
    /// Windows with constant recorded gains and no saturated force.
    pub windows_compared: usize,
    pub windows_skipped: usize,
    /// Axes of compared windows left out because a parameter was carried.
    pub axes_unidentified: usize,
    pub max_rel_err_k: f64,
    pub max_rel_err_b: f64,
}

impl RecoveryCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_k.max(self.max_rel_err_b)
    }

    pub fn merge(self, o: RecoveryCheck) -> RecoveryCheck {
        RecoveryCheck {
            windows_compared: self.windows_compared + o.windows_compared,
            windows_skipped: self.windows_skipped + o.windows_skipped,
            axes_unidentified: self.axes_unidentified + o.axes_unidentified,
            max_rel_err_k: self.max_rel_err_k.max(o.max_rel_err_k),
            max_rel_err_b: self.max_rel_err_b.max(o.max_rel_err_b),
        }
    }
}

impl Default for RecoveryCheck {
    fn default() -> Self {
        Self {
            windows_compared: 0,
            windows_skipped: 0,
            axes_unidentified: 0,
            max_rel_err_k: 0.0,
            max_rel_err_b: 0.0,
        }
    }
}

/// Compare unclamped estimates from `estimate_trajectory(traj, window, stride, _)`
/// with the recorded gains. Windows spanning a gain change (phase blending)
/// or a clamped force are skipped since the linear law does not hold there.
pub fn recovery_check(
    spec: &EnvSpec,
    traj: &Trajectory,
    estimates: &[GainEstimate],
    window: usize,
    stride: usize,
    with_factor: bool,
) -> Result<RecoveryCheck> {
    let rec = recorded_gains(spec, traj, with_factor)?;
    let limit = &spec.force_limit;
    let mut out = RecoveryCheck::default();
    let rel = |est: f64, truth: f64| (est - truth).abs() / truth.abs().max(1e-12);
    for est in estimates {
        let start = est.window_index * stride;
        let span = &rec[start..start + window];
        let constant = span.iter().all(|g| g == &span[0]);
        let saturated = traj.steps[start..start + window]
            .iter()
            .any(|s| s.force.iter().zip(limit).any(|(f, l)| f.abs() >= l * (1.0 - 1e-12)));
        if !constant || saturated {
            out.windows_skipped += 1;
            continue;
        }
        out.windows_compared += 1;
        let (k, b) = &span[0];
        for (i, flag) in est.flags.iter().enumerate() {
            if *flag != AxisFit::Full {
                out.axes_unidentified += 1;
                continue;
            }
            out.max_rel_err_k = out.max_rel_err_k.max(rel(est.raw_k[i], k[i]));
            out.max_rel_err_b = out.max_rel_err_b.max(rel(est.raw_b[i], b[i]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(k: &[f64], b: &[f64], n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (mut es, mut vs, mut fs) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..n {
            let t = j as f64 * 0.01;
            let e: Vec<f64> = (0..k.len()).map(|i| 0.1 * (3.0 * t + i as f64).cos()).collect();
            let v: Vec<f64> = (0..k.len()).map(|i| -0.3 * (3.0 * t + i as f64).sin() + 0.05).collect();
            let f = (0..k.len()).map(|i| -k[i] * e[i] - b[i] * v[i]).collect();
            es.push(e);
            vs.push(v);
            fs.push(f);
        }
        (es, vs, fs)
    }

    fn samples<'a>(es: &'a [Vec<f64>], vs: &'a [Vec<f64>], fs: &'a [Vec<f64>]) -> Vec<Sample<'a>> {
        es.iter()
            .zip(vs)
            .zip(fs)
            .map(|((e, edot), force)| Sample { e, edot, force })
            .collect()
    }

    #[test]
    fn exact_recovery() {
        let (es, vs, fs) = synth(&[500.0], &[40.0], 10);
        let est = estimate_window(&samples(&es, &vs, &fs), 10, None, None).unwrap();
        assert!((est.raw_k[0] - 500.0).abs() / 500.0 < 1e-9);
        assert!((est.raw_b[0] - 40.0).abs() / 40.0 < 1e-9);
        assert!(est.residual <= 1e-9);
        assert_eq!(est.flags, vec![AxisFit::Full]);
    }

    #[test]
    fn still_window_flags_damping() {
        let es: Vec<Vec<f64>> = (0..10).map(|j| vec![0.01 + 0.001 * j as f64]).collect();
        let vs = vec![vec![0.0]; 10];
        let fs: Vec<Vec<f64>> = es.iter().map(|e| vec![-300.0 * e[0]]).collect();
        let prev = GainEstimate {
            window_index: 0,
            t: 0.0,
            k_diag: vec![1.0],
            b_diag: vec![7.0],
            raw_k: vec![1.0],
            raw_b: vec![7.0],
            residual: 0.0,
            flags: vec![AxisFit::Full],
        };
        let est = estimate_window(&samples(&es, &vs, &fs), 10, Some(&prev), None).unwrap();
        assert!((est.raw_k[0] - 300.0).abs() < 1e-9);
        assert_eq!(est.raw_b[0], 7.0);
        assert_eq!(est.flags, vec![AxisFit::DampingCarried]);
    }

    #[test]
    fn short_window_is_rejected() {
        let (es, vs, fs) = synth(&[500.0], &[40.0], 9);
        assert!(estimate_window(&samples(&es, &vs, &fs), 10, None, None).is_err());
    }

    #[test]
    fn scaling_is_equivariant() {
        let (es, vs, fs) = synth(&[800.0, 20.0], &[60.0, 3.0], 10);
        let base = estimate_window(&samples(&es, &vs, &fs), 10, None, None).unwrap();
        let alpha = 3.7;
        let fs2: Vec<Vec<f64>> = fs.iter().map(|f| f.iter().map(|v| v * alpha).collect()).collect();
        let scaled = estimate_window(&samples(&es, &vs, &fs2), 10, None, None).unwrap();
        for i in 0..2 {
            assert!((scaled.raw_k[i] - alpha * base.raw_k[i]).abs() <= 1e-9 * scaled.raw_k[i].abs());
            assert!((scaled.raw_b[i] - alpha * base.raw_b[i]).abs() <= 1e-9 * scaled.raw_b[i].abs());
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_filter(&[1.0, 9.0, 2.0, 3.0, 4.0], 5), vec![2.0, 2.5, 3.0, 3.5, 3.0]);
        assert_eq!(median_filter(&[5.0, 5.0, 100.0, 5.0, 5.0], 5)[2], 5.0);
    }
}
