//! Finite-difference backward Euler for constant diffusivity on a uniform
//! mesh, written directly in nodal temperatures:
//!
//! ```text
//! (Id - θλA) T_{n+1} = T_n + θλ (T_{L,n+1} v + T_{R,n+1} w),   λ = dt / dx²
//! ```
//!
//! It yields the same linear-in-boundary representation as the FEM path
//! with lumped mass, and serves as a cross-check of it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SpatialMesh;
use crate::numerics::{Tridiagonal, TridiagonalLu};

#[derive(Debug, Clone)]
pub struct FdSystem {
    pub theta: f64,
    pub lambda: f64,
    interior: usize,
    factor: TridiagonalLu,
}

impl FdSystem {
    pub fn new(mesh: &SpatialMesh, theta: f64, dt: f64) -> Result<Self> {
        let dx = mesh
            .spacing()
            .ok_or_else(|| Error::Domain("finite differences need a uniform mesh".into()))?;
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::Domain(format!("theta must be positive, got {theta}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        let lambda = dt / (dx * dx);
        let interior = mesh.interior();
        let r = theta * lambda;
        let matrix = Tridiagonal {
            lower: vec![-r; interior - 1],
            diag: vec![1.0 + 2.0 * r; interior],
            upper: vec![-r; interior - 1],
        };
        Ok(Self {
            theta,
            lambda,
            interior,
            factor: matrix.factor()?,
        })
    }

    pub fn interior(&self) -> usize {
        self.interior
    }

    /// The `(1, -2, 1)` second-difference matrix on the interior nodes.
    pub fn second_difference(&self) -> DMatrix<f64> {
        let m = self.interior;
        DMatrix::from_fn(m, m, |i, j| match i.abs_diff(j) {
            0 => -2.0,
            1 => 1.0,
            _ => 0.0,
        })
    }

    /// Apply `B_fd = (Id - θλA)^{-1}`.
    pub fn apply_inverse(&self, x: &[f64]) -> Vec<f64> {
        self.factor.solve(x)
    }

    pub fn fd_step(&self, t: &[f64], left_next: f64, right_next: f64) -> Result<Vec<f64>> {
        if t.len() != self.interior {
            return Err(Error::Dimension(format!(
                "state has {} entries, system has {}",
                t.len(),
                self.interior
            )));
        }
        let r = self.theta * self.lambda;
        let mut rhs = t.to_vec();
        rhs[0] += r * left_next;
        rhs[self.interior - 1] += r * right_next;
        self.factor.solve_in_place(&mut rhs);
        Ok(rhs)
    }

    pub fn fd_propagators(&self, steps: usize) -> Result<FdPropagators> {
        if steps == 0 {
            return Err(Error::Domain("propagators need at least one step".into()));
        }
        let m = self.interior;
        let r = self.theta * self.lambda;
        let mut one_step = DMatrix::zeros(m, m);
        let mut e = vec![0.0; m];
        for j in 0..m {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            one_step.column_mut(j).copy_from_slice(&self.apply_inverse(&e));
        }
        // Column generators θλ B^{j+1} v and θλ B^{j+1} w.
        let mut left = Vec::with_capacity(steps);
        let mut right = Vec::with_capacity(steps);
        let mut v = vec![0.0; m];
        v[0] = r;
        let mut w = vec![0.0; m];
        w[m - 1] = r;
        for _ in 0..steps {
            v = self.apply_inverse(&v);
            w = self.apply_inverse(&w);
            left.push(DVector::from_vec(v.clone()));
            right.push(DVector::from_vec(w.clone()));
        }
        Ok(FdPropagators {
            steps,
            one_step,
            left,
            right,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FdPropagators {
    steps: usize,
    pub one_step: DMatrix<f64>,
    left: Vec<DVector<f64>>,
    right: Vec<DVector<f64>>,
}

impl FdPropagators {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn b_power(&self, n: usize) -> DMatrix<f64> {
        let m = self.one_step.nrows();
        (0..n).fold(DMatrix::identity(m, m), |p, _| &self.one_step * p)
    }

    fn block(gen: &[DVector<f64>], n: usize, width: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(gen[0].len(), width);
        for k in 1..=n {
            out.column_mut(k - 1).copy_from(&gen[n - k]);
        }
        out
    }

    /// `C_n`, `(I-1) x n`, columns `θλ B^{n-k+1} v`.
    pub fn c(&self, n: usize) -> DMatrix<f64> {
        Self::block(&self.left, n, n)
    }

    /// `D_n`, `(I-1) x n`, columns `θλ B^{n-k+1} w`.
    pub fn d(&self, n: usize) -> DMatrix<f64> {
        Self::block(&self.right, n, n)
    }

    /// `A_{L,n} = [C_n 0]`, `(I-1) x N`.
    pub fn al(&self, n: usize) -> DMatrix<f64> {
        Self::block(&self.left, n, self.steps)
    }

    /// `A_{R,n} = [D_n 0]`, `(I-1) x N`.
    pub fn ar(&self, n: usize) -> DMatrix<f64> {
        Self::block(&self.right, n, self.steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys() -> FdSystem {
        let mesh = SpatialMesh::uniform(0.0, 1.0, 10).unwrap();
        FdSystem::new(&mesh, 0.8, 0.01).unwrap()
    }

    #[test]
    fn constant_state_is_steady() {
        let s = sys();
        let t = s.fd_step(&[3.5; 9], 3.5, 3.5).unwrap();
        assert!(t.iter().all(|v| (v - 3.5).abs() < 1e-13));
    }

    #[test]
    fn zero_stays_zero() {
        let s = sys();
        assert!(s.fd_step(&[0.0; 9], 0.0, 0.0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_block_is_single_column() {
        let s = sys();
        let p = s.fd_propagators(4).unwrap();
        let c1 = p.c(1);
        assert_eq!(c1.ncols(), 1);
        let mut v = vec![0.0; 9];
        v[0] = s.theta * s.lambda;
        let expect = s.apply_inverse(&v);
        for (a, b) in c1.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_is_entrywise_nonnegative() {
        let p = sys().fd_propagators(1).unwrap();
        assert!(p.one_step.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn non_uniform_mesh_is_rejected() {
        let mesh = SpatialMesh::from_nodes(vec![0.0, 0.1, 0.5, 1.0]).unwrap();
        assert!(FdSystem::new(&mesh, 1.0, 0.1).is_err());
    }
}
