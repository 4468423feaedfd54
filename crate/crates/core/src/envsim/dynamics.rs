use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Analytic Cartesian dynamics `M(x)ẍ + C(x,ẋ)ẋ + G(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DynamicsModel {
    /// Constant diagonal inertia with a constant gravity load (C ≡ 0).
    ConstantDiagonal { masses: Vec<f64>, gravity: Vec<f64> },
    /// Three-axis point mass whose y–z inertia coupling grows with distance
    /// from `anchor`: `M = m·I + c(x)·(e_y e_zᵀ + e_z e_yᵀ)` with
    /// `c(x) = c_max·(1 - exp(-|x - anchor|² / ℓ²))`.
    CoupledPointMass {
        mass: f64,
        coupling_max: f64,
        coupling_length: f64,
        anchor: Vec<f64>,
        gravity: f64,
    },
}

const Y: usize = 1;
const Z: usize = 2;

impl DynamicsModel {
    pub fn dof(&self) -> usize {
        match self {
            DynamicsModel::ConstantDiagonal { masses, .. } => masses.len(),
            DynamicsModel::CoupledPointMass { anchor, .. } => anchor.len(),
        }
    }

    fn coupling(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        match self {
            DynamicsModel::ConstantDiagonal { .. } => None,
            DynamicsModel::CoupledPointMass {
                coupling_max,
                coupling_length,
                anchor,
                ..
            } => {
                let l2 = coupling_length * coupling_length;
                let r2: f64 = x.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
                let decay = (-r2 / l2).exp();
                let grad = x
                    .iter()
                    .zip(anchor)
                    .map(|(a, b)| coupling_max * decay * 2.0 * (a - b) / l2)
                    .collect();
                Some((coupling_max * (1.0 - decay), grad))
            }
        }
    }

    pub fn mass_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            DynamicsModel::ConstantDiagonal { masses, .. } => DMatrix::from_diagonal(&DVector::from_column_slice(masses)),
            DynamicsModel::CoupledPointMass { mass, .. } => {
                let mut m = DMatrix::identity(3, 3) * *mass;
                let (c, _) = self.coupling(x).expect("coupled model");
                m[(Y, Z)] = c;
                m[(Z, Y)] = c;
                m
            }
        }
    }

    /// Diagonal of `M(x)`, used by mass-aware damping rules.
    pub fn mass_diagonal(&self, _x: &[f64]) -> Vec<f64> {
        match self {
            DynamicsModel::ConstantDiagonal { masses, .. } => masses.clone(),
            DynamicsModel::CoupledPointMass { mass, .. } => vec![*mass; 3],
        }
    }

    /// Coriolis matrix from the Christoffel symbols of `M(x)`:
    /// `C_ij = Σ_k ½(∂_k M_ij + ∂_j M_ik - ∂_i M_jk)·ẋ_k`.
    pub fn coriolis_matrix(&self, x: &[f64], xdot: &[f64]) -> DMatrix<f64> {
        let n = self.dof();
        let Some((_, grad)) = self.coupling(x) else {
            return DMatrix::zeros(n, n);
        };
        // only M_yz = M_zy depends on x, so ∂_k M_ij = grad_k·[ij ∈ {yz, zy}]
        let dm = |i: usize, j: usize, k: usize| if (i == Y && j == Z) || (i == Z && j == Y) { grad[k] } else { 0.0 };
        DMatrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| 0.5 * (dm(i, j, k) + dm(i, k, j) - dm(j, k, i)) * xdot[k])
                .sum()
        })
    }

    /// Time derivative `Ṁ = Σ_k ∂_k M·ẋ_k`.
    pub fn mass_matrix_rate(&self, x: &[f64], xdot: &[f64]) -> DMatrix<f64> {
        let n = self.dof();
        let mut out = DMatrix::zeros(n, n);
        if let Some((_, grad)) = self.coupling(x) {
            let rate: f64 = grad.iter().zip(xdot).map(|(g, v)| g * v).sum();
            out[(Y, Z)] = rate;
            out[(Z, Y)] = rate;
        }
        out
    }

    pub fn coriolis_force(&self, x: &[f64], xdot: &[f64]) -> Vec<f64> {
        match self {
            DynamicsModel::ConstantDiagonal { masses, .. } => vec![0.0; masses.len()],
            DynamicsModel::CoupledPointMass { .. } => {
                let c = self.coriolis_matrix(x, xdot);
                (c * DVector::from_column_slice(xdot)).as_slice().to_vec()
            }
        }
    }

    pub fn gravity(&self, _x: &[f64]) -> Vec<f64> {
        match self {
            DynamicsModel::ConstantDiagonal { gravity, .. } => gravity.clone(),
            DynamicsModel::CoupledPointMass { mass, gravity, .. } => vec![0.0, 0.0, mass * gravity],
        }
    }

    /// Solve `M(x)·a = rhs`.
    pub fn solve(&self, x: &[f64], rhs: &[f64]) -> Vec<f64> {
        match self {
            DynamicsModel::ConstantDiagonal { masses, .. } => rhs.iter().zip(masses).map(|(f, m)| f / m).collect(),
            DynamicsModel::CoupledPointMass { .. } => {
                let m = self.mass_matrix(x);
                m.cholesky()
                    .expect("mass matrix must be positive definite")
                    .solve(&DVector::from_column_slice(rhs))
                    .as_slice()
                    .to_vec()
            }
        }
    }

    /// `M(x)⁻¹` as a dense matrix.
    pub fn inverse_mass(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            DynamicsModel::ConstantDiagonal { masses, .. } => {
                DMatrix::from_diagonal(&DVector::from_iterator(masses.len(), masses.iter().map(|m| 1.0 / m)))
            }
            DynamicsModel::CoupledPointMass { .. } => self
                .mass_matrix(x)
                .cholesky()
                .expect("mass matrix must be positive definite")
                .inverse(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coupled() -> DynamicsModel {
        DynamicsModel::CoupledPointMass {
            mass: 1.0,
            coupling_max: 0.5,
            coupling_length: 0.5,
            anchor: vec![0.8, -0.3, 0.45],
            gravity: 9.81,
        }
    }

    #[test]
    fn coupling_vanishes_at_anchor_and_stays_spd() {
        let m = coupled();
        let at_anchor = m.mass_matrix(&[0.8, -0.3, 0.45]);
        assert_eq!(at_anchor, DMatrix::identity(3, 3));
        for x in [[0.0, 0.0, 0.0], [2.0, 2.0, -1.0], [0.5, 0.3, 0.45]] {
            let mm = m.mass_matrix(&x);
            assert!(mm.clone().cholesky().is_some());
            assert!(mm[(1, 2)] > 0.0 && mm[(1, 2)] < 0.5);
        }
    }

    #[test]
    fn coupled_force_along_y_accelerates_z() {
        let m = coupled();
        let x = [0.2, 0.3, 0.45];
        let a = m.solve(&x, &[0.0, 1.0, 0.0]);
        let c = m.mass_matrix(&x)[(1, 2)];
        // inverse of [[1, c], [c, 1]] is [[1, -c], [-c, 1]] / (1 - c²)
        assert!((a[1] - 1.0 / (1.0 - c * c)).abs() < 1e-12);
        assert!((a[2] + c / (1.0 - c * c)).abs() < 1e-12);
        assert_eq!(a[0], 0.0);
    }

    #[test]
    fn christoffel_coriolis_is_passive() {
        // Ṁ - 2C is skew-symmetric for Christoffel-consistent C
        let m = coupled();
        let x = [0.1, 0.2, 0.7];
        let v = [0.3, -1.1, 0.4];
        let s = m.mass_matrix_rate(&x, &v) - m.coriolis_matrix(&x, &v) * 2.0;
        assert!((&s + s.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn mass_rate_matches_finite_difference() {
        let m = coupled();
        let x = [0.1, 0.2, 0.7];
        let v = [0.3, -1.1, 0.4];
        let h = 1e-6;
        let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let fd = (m.mass_matrix(&xp) - m.mass_matrix(&xm)) / (2.0 * h);
        assert!((fd - m.mass_matrix_rate(&x, &v)).abs().max() < 1e-8);
    }

    #[test]
    fn constant_model_has_no_coriolis() {
        let m = DynamicsModel::ConstantDiagonal {
            masses: vec![1.0, 2.0],
            gravity: vec![0.0, 19.62],
        };
        assert_eq!(m.coriolis_force(&[1.0, 2.0], &[3.0, 4.0]), vec![0.0, 0.0]);
        assert_eq!(m.solve(&[0.0, 0.0], &[1.0, 1.0]), vec![1.0, 0.5]);
    }
}
