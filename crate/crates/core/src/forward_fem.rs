//! Linear finite elements with backward Euler time stepping for
//! `u_t - (a u_x)_x + b u_x + c u = 0` under Dirichlet data.
//!
//! The solution is split as `T = lift + u`, where the lift is the affine
//! interpolant of the two boundary values and `u` vanishes on the boundary.
//! With boundary values piecewise linear in time, one backward Euler step of
//! the homogeneous problem reads
//!
//! ```text
//! (M + dt S) u_{n+1} = M u_n - F_L1 T_{L,n} + F_L2 T_{L,n+1} - F_R1 T_{R,n} + F_R2 T_{R,n+1}
//! ```
//!
//! with `F_L1 = -(∫ lift_L φ_j)` and `F_L2 = -(∫ lift_L φ_j + dt B(lift_L, φ_j))`.
//! Because the system is time invariant, the maps from boundary values to
//! interior temperatures are block Toeplitz: column `k` of `A_{L,n}` is the
//! response `n - k` steps after a unit impulse, so [`PropagatorSet`] stores
//! one impulse response per boundary and materializes matrices on demand.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    validate_problem, BoundarySeries, CoefficientField, InitialCondition, SpatialMesh, TimeGrid,
    Violation,
};
use crate::numerics::{Tridiagonal, TridiagonalLu};

/// Assembled semi-discrete system on the interior nodes.
#[derive(Debug, Clone)]
pub struct FemSystem {
    pub mass: Tridiagonal,
    pub stiffness: Tridiagonal,
    pub lumped: bool,
    pub dt: f64,
    /// Nodal values of the left/right affine lifts at the interior nodes.
    pub lift_left: Vec<f64>,
    pub lift_right: Vec<f64>,
    pub f_l1: Vec<f64>,
    pub f_l2: Vec<f64>,
    pub f_r1: Vec<f64>,
    pub f_r2: Vec<f64>,
    system: TridiagonalLu,
}

/// Boundary values framing one time step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LocalBoundary {
    pub left_prev: f64,
    pub left_next: f64,
    pub right_prev: f64,
    pub right_next: f64,
}

impl LocalBoundary {
    pub fn new(left_prev: f64, left_next: f64, right_prev: f64, right_next: f64) -> Self {
        Self {
            left_prev,
            left_next,
            right_prev,
            right_next,
        }
    }

    fn from_series(b: &BoundarySeries, n: usize) -> Self {
        Self::new(b.left_at(n), b.left_at(n + 1), b.right_at(n), b.right_at(n + 1))
    }
}

impl std::ops::Add for LocalBoundary {
    type Output = LocalBoundary;
    fn add(self, o: LocalBoundary) -> LocalBoundary {
        LocalBoundary::new(
            self.left_prev + o.left_prev,
            self.left_next + o.left_next,
            self.right_prev + o.right_prev,
            self.right_next + o.right_next,
        )
    }
}

fn full_matrices(mesh: &SpatialMesh, coeffs: &CoefficientField) -> (Tridiagonal, Tridiagonal) {
    let nodes = mesh.nodes().len();
    let mut mass = Tridiagonal::zeros(nodes);
    let mut stiff = Tridiagonal::zeros(nodes);
    for e in 0..mesh.elements() {
        let h = mesh.element_width(e);
        let (a, b, c) = (coeffs.diffusion[e], coeffs.advection[e], coeffs.reaction[e]);
        // Local 2x2 blocks, rows = test function, cols = trial function.
        let m = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
        let s = [
            [a / h - 0.5 * b + c * h / 3.0, -a / h + 0.5 * b + c * h / 6.0],
            [-a / h - 0.5 * b + c * h / 6.0, a / h + 0.5 * b + c * h / 3.0],
        ];
        mass.diag[e] += m[0][0];
        mass.diag[e + 1] += m[1][1];
        mass.upper[e] += m[0][1];
        mass.lower[e] += m[1][0];
        stiff.diag[e] += s[0][0];
        stiff.diag[e + 1] += s[1][1];
        stiff.upper[e] += s[0][1];
        stiff.lower[e] += s[1][0];
    }
    (mass, stiff)
}

fn interior_block(full: &Tridiagonal) -> Tridiagonal {
    let n = full.dim();
    Tridiagonal {
        lower: full.lower[1..n - 2].to_vec(),
        diag: full.diag[1..n - 1].to_vec(),
        upper: full.upper[1..n - 2].to_vec(),
    }
}

/// Row `j` (full index) of `full` applied to nodal values `v`.
fn row_apply(full: &Tridiagonal, j: usize, v: &[f64]) -> f64 {
    full.lower[j - 1] * v[j - 1] + full.diag[j] * v[j] + full.upper[j] * v[j + 1]
}

/// Assemble mass, stiffness, and boundary forcing vectors with exact
/// integrals of piecewise-linear products.
pub fn assemble(
    mesh: &SpatialMesh,
    coeffs: &CoefficientField,
    dt: f64,
    lumped: bool,
) -> Result<FemSystem> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Assembly(format!("time step must be positive, got {dt}")));
    }
    if coeffs.elements() != mesh.elements()
        || coeffs.advection.len() != mesh.elements()
        || coeffs.reaction.len() != mesh.elements()
    {
        return Err(Error::Assembly(format!(
            "coefficient field has {} samples for {} elements",
            coeffs.elements(),
            mesh.elements()
        )));
    }
    // Only coefficient admissibility matters here; time data are checked later.
    let report = validate_problem(
        mesh,
        &TimeGrid::new(1.0, 0).expect("valid grid"),
        coeffs,
        &InitialCondition::constant(0.0, mesh.nodes().len()),
        None,
    );
    if let Some(v) = report.violations.iter().find(|v| {
        matches!(
            v,
            Violation::Parabolicity { .. } | Violation::Boundedness { .. }
        )
    }) {
        return Err(Error::Assembly(v.to_string()));
    }

    let (mut mass_full, stiff_full) = full_matrices(mesh, coeffs);
    if lumped {
        let sums = mass_full.row_sums();
        mass_full = Tridiagonal {
            lower: vec![0.0; sums.len() - 1],
            diag: sums,
            upper: vec![0.0; mass_full.dim() - 1],
        };
    }
    let nodes = mesh.nodes();
    let (lift_l_full, lift_r_full): (Vec<f64>, Vec<f64>) =
        nodes.iter().map(|&x| mesh.lift_weights(x)).unzip();
    let interior = mesh.interior();
    let mut f_l1 = vec![0.0; interior];
    let mut f_l2 = vec![0.0; interior];
    let mut f_r1 = vec![0.0; interior];
    let mut f_r2 = vec![0.0; interior];
    for j in 1..=interior {
        let pl = row_apply(&mass_full, j, &lift_l_full);
        let pr = row_apply(&mass_full, j, &lift_r_full);
        let bl = row_apply(&stiff_full, j, &lift_l_full);
        let br = row_apply(&stiff_full, j, &lift_r_full);
        f_l1[j - 1] = -pl;
        f_l2[j - 1] = -(pl + dt * bl);
        f_r1[j - 1] = -pr;
        f_r2[j - 1] = -(pr + dt * br);
    }
    let mass = interior_block(&mass_full);
    let stiffness = interior_block(&stiff_full);
    let system = mass.add_scaled(dt, &stiffness).factor()?;
    Ok(FemSystem {
        mass,
        stiffness,
        lumped,
        dt,
        lift_left: lift_l_full[1..=interior].to_vec(),
        lift_right: lift_r_full[1..=interior].to_vec(),
        f_l1,
        f_l2,
        f_r1,
        f_r2,
        system,
    })
}

/// Affine boundary interpolant `T_L (x_R - x)/(x_R - x_L) + T_R (x - x_L)/(x_R - x_L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineLift {
    pub x_left: f64,
    pub x_right: f64,
}

impl AffineLift {
    pub fn value(&self, left: f64, right: f64, x: f64) -> f64 {
        let len = self.x_right - self.x_left;
        left * (self.x_right - x) / len + right * (x - self.x_left) / len
    }
}

/// Split the initial condition into the homogeneous part `u_0` (interior
/// nodes) and the affine lift of the `t_0` boundary values.
pub fn lift_split(
    mesh: &SpatialMesh,
    initial: &InitialCondition,
    boundary: &BoundarySeries,
) -> Result<(Vec<f64>, AffineLift)> {
    if initial.values.len() != mesh.nodes().len() {
        return Err(Error::Dimension(format!(
            "initial condition has {} values for {} nodes",
            initial.values.len(),
            mesh.nodes().len()
        )));
    }
    let lift = AffineLift {
        x_left: mesh.x_left(),
        x_right: mesh.x_right(),
    };
    let u0 = mesh.nodes()[1..mesh.nodes().len() - 1]
        .iter()
        .zip(initial.interior())
        .map(|(&x, &g)| g - lift.value(boundary.left0, boundary.right0, x))
        .collect();
    Ok((u0, lift))
}

impl FemSystem {
    pub fn interior(&self) -> usize {
        self.mass.dim()
    }

    /// One backward Euler step of the homogeneous-boundary problem.
    pub fn step(&self, u: &[f64], bc: LocalBoundary) -> Result<Vec<f64>> {
        if u.len() != self.interior() {
            return Err(Error::Dimension(format!(
                "state has {} entries, system has {}",
                u.len(),
                self.interior()
            )));
        }
        let mut rhs = self.mass.matvec(u);
        for (j, r) in rhs.iter_mut().enumerate() {
            *r += -self.f_l1[j] * bc.left_prev + self.f_l2[j] * bc.left_next
                - self.f_r1[j] * bc.right_prev
                + self.f_r2[j] * bc.right_next;
        }
        self.system.solve_in_place(&mut rhs);
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solve("non-finite state after step".into()));
        }
        Ok(rhs)
    }

    /// Interior temperatures from the homogeneous state and boundary values.
    pub fn reconstruct(&self, u: &[f64], left: f64, right: f64) -> Vec<f64> {
        u.iter()
            .zip(self.lift_left.iter().zip(&self.lift_right))
            .map(|(&u, (&wl, &wr))| u + left * wl + right * wr)
            .collect()
    }

    /// Homogeneous part of a full interior temperature vector.
    pub fn homogeneous(&self, temps: &[f64], left: f64, right: f64) -> Vec<f64> {
        temps
            .iter()
            .zip(self.lift_left.iter().zip(&self.lift_right))
            .map(|(&t, (&wl, &wr))| t - left * wl - right * wr)
            .collect()
    }
}

/// Interior temperature history by sequential stepping; column `n - 1` holds `T_n`.
pub fn solve_full(
    sys: &FemSystem,
    initial: &InitialCondition,
    boundary: &BoundarySeries,
) -> Result<DMatrix<f64>> {
    let steps = boundary.steps();
    if initial.values.len() != sys.interior() + 2 {
        return Err(Error::Dimension("initial condition does not match system".into()));
    }
    let mut u = sys.homogeneous(initial.interior(), boundary.left0, boundary.right0);
    let mut out = DMatrix::zeros(sys.interior(), steps);
    for n in 0..steps {
        u = sys.step(&u, LocalBoundary::from_series(boundary, n))?;
        let t = sys.reconstruct(&u, boundary.left_at(n + 1), boundary.right_at(n + 1));
        out.column_mut(n).copy_from_slice(&t);
    }
    Ok(out)
}

/// Linear maps from initial and boundary data to interior temperatures.
#[derive(Debug, Clone)]
pub struct PropagatorSet {
    steps: usize,
    /// `B = (M + dt S)^{-1} M`.
    pub one_step: DMatrix<f64>,
    /// `left_response[j]`: interior temperatures `j` steps after a unit left impulse.
    pub left_response: Vec<DVector<f64>>,
    pub right_response: Vec<DVector<f64>>,
    /// Same as above for the homogeneous part `u` (differs only at lag zero).
    pub left_response_homogeneous: Vec<DVector<f64>>,
    pub right_response_homogeneous: Vec<DVector<f64>>,
    /// `left_initial[n-1]`: temperatures at `t_n` from a unit left value at `t_0`.
    pub left_initial: Vec<DVector<f64>>,
    pub right_initial: Vec<DVector<f64>>,
}

type Responses = (Vec<DVector<f64>>, Vec<DVector<f64>>);

fn impulse_responses(sys: &FemSystem, steps: usize, left: bool) -> Result<Responses> {
    let mut full = Vec::with_capacity(steps);
    let mut homogeneous = Vec::with_capacity(steps);
    let mut u = vec![0.0; sys.interior()];
    for lag in 0..steps {
        let bc = match (left, lag) {
            (true, 0) => LocalBoundary::new(0.0, 1.0, 0.0, 0.0),
            (true, 1) => LocalBoundary::new(1.0, 0.0, 0.0, 0.0),
            (false, 0) => LocalBoundary::new(0.0, 0.0, 0.0, 1.0),
            (false, 1) => LocalBoundary::new(0.0, 0.0, 1.0, 0.0),
            _ => LocalBoundary::default(),
        };
        u = sys.step(&u, bc)?;
        let t = if lag == 0 {
            if left {
                sys.reconstruct(&u, 1.0, 0.0)
            } else {
                sys.reconstruct(&u, 0.0, 1.0)
            }
        } else {
            u.clone()
        };
        homogeneous.push(DVector::from_vec(u.clone()));
        full.push(DVector::from_vec(t));
    }
    Ok((full, homogeneous))
}

fn initial_responses(sys: &FemSystem, steps: usize, left: bool) -> Result<Vec<DVector<f64>>> {
    let (l0, r0) = if left { (1.0, 0.0) } else { (0.0, 1.0) };
    let mut u = sys.homogeneous(&vec![0.0; sys.interior()], l0, r0);
    let mut out = Vec::with_capacity(steps);
    for n in 0..steps {
        let bc = if n == 0 {
            LocalBoundary::new(l0, 0.0, r0, 0.0)
        } else {
            LocalBoundary::default()
        };
        u = sys.step(&u, bc)?;
        out.push(DVector::from_vec(u.clone()));
    }
    Ok(out)
}

/// Build the propagator matrices by running the stepper on unit impulses.
pub fn build_propagators(sys: &FemSystem, steps: usize) -> Result<PropagatorSet> {
    if steps == 0 {
        return Err(Error::Domain("propagators need at least one step".into()));
    }
    let m = sys.interior();
    let mut one_step = DMatrix::zeros(m, m);
    let mut e = vec![0.0; m];
    for j in 0..m {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = sys.step(&e, LocalBoundary::default())?;
        one_step.column_mut(j).copy_from_slice(&col);
    }
    let (left_response, left_response_homogeneous) = impulse_responses(sys, steps, true)?;
    let (right_response, right_response_homogeneous) = impulse_responses(sys, steps, false)?;
    Ok(PropagatorSet {
        steps,
        one_step,
        left_response,
        right_response,
        left_response_homogeneous,
        right_response_homogeneous,
        left_initial: initial_responses(sys, steps, true)?,
        right_initial: initial_responses(sys, steps, false)?,
    })
}

fn toeplitz_block(responses: &[DVector<f64>], n: usize, steps: usize) -> DMatrix<f64> {
    let m = responses.first().map_or(0, |r| r.len());
    let mut out = DMatrix::zeros(m, steps);
    for k in 1..=n {
        out.column_mut(k - 1).copy_from(&responses[n - k]);
    }
    out
}

impl PropagatorSet {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn interior(&self) -> usize {
        self.one_step.nrows()
    }

    /// `A_n = B^n`.
    pub fn b_power(&self, n: usize) -> DMatrix<f64> {
        let m = self.interior();
        let mut p = DMatrix::identity(m, m);
        for _ in 0..n {
            p = &self.one_step * p;
        }
        p
    }

    /// Homogeneous-problem boundary map `Ã_{L,n}`, `(I-1) x N`.
    pub fn al_tilde(&self, n: usize) -> DMatrix<f64> {
        toeplitz_block(&self.left_response_homogeneous, n, self.steps)
    }

    pub fn ar_tilde(&self, n: usize) -> DMatrix<f64> {
        toeplitz_block(&self.right_response_homogeneous, n, self.steps)
    }

    /// Full-solution boundary map `A_{L,n}`, `(I-1) x N`.
    pub fn al(&self, n: usize) -> DMatrix<f64> {
        toeplitz_block(&self.left_response, n, self.steps)
    }

    pub fn ar(&self, n: usize) -> DMatrix<f64> {
        toeplitz_block(&self.right_response, n, self.steps)
    }

    /// Temperatures at `t_1..t_N` driven by the initial data alone (the
    /// `B^n T_0` term with the known `t_0` boundary values folded in).
    pub fn deterministic(&self, initial: &InitialCondition) -> Result<Vec<DVector<f64>>> {
        let m = self.interior();
        if initial.values.len() != m + 2 {
            return Err(Error::Dimension("initial condition does not match propagators".into()));
        }
        let mut state = DVector::from_column_slice(initial.interior());
        let (l0, r0) = (initial.left(), initial.right());
        let mut out = Vec::with_capacity(self.steps);
        for n in 0..self.steps {
            state = &self.one_step * state;
            let mut t = state.clone();
            t.axpy(l0, &self.left_initial[n], 1.0);
            t.axpy(r0, &self.right_initial[n], 1.0);
            out.push(t);
        }
        Ok(out)
    }

    /// Interior history `T_n = det_n + A_{L,n} T_L + A_{R,n} T_R`.
    pub fn evaluate(
        &self,
        initial: &InitialCondition,
        boundary: &BoundarySeries,
    ) -> Result<DMatrix<f64>> {
        if boundary.steps() != self.steps {
            return Err(Error::Dimension("boundary series length mismatch".into()));
        }
        let base = self.deterministic(initial)?;
        let mut out = DMatrix::zeros(self.interior(), self.steps);
        for n in 1..=self.steps {
            let mut t = base[n - 1].clone();
            for k in 1..=n {
                t.axpy(boundary.left[k - 1], &self.left_response[n - k], 1.0);
                t.axpy(boundary.right[k - 1], &self.right_response[n - k], 1.0);
            }
            out.column_mut(n - 1).copy_from(&t);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(lumped: bool) -> (SpatialMesh, FemSystem) {
        let mesh = SpatialMesh::uniform(0.0, 1.0, 8).unwrap();
        let coeffs = CoefficientField::constant(1.0, 8);
        let sys = assemble(&mesh, &coeffs, 0.05, lumped).unwrap();
        (mesh, sys)
    }

    #[test]
    fn lumped_mass_is_scaled_identity() {
        let (_, sys) = system(true);
        let dx = 1.0 / 8.0;
        assert!(sys.mass.diag.iter().all(|d| (d - dx).abs() < 1e-15));
        assert!(sys.mass.lower.iter().chain(&sys.mass.upper).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let (_, sys) = system(false);
        let u = sys.step(&[0.0; 7], LocalBoundary::default()).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_steady_state_is_preserved() {
        let (mesh, sys) = system(false);
        let g = InitialCondition::constant(42.0, mesh.nodes().len());
        let b = BoundarySeries::constant(42.0, 5);
        let hist = solve_full(&sys, &g, &b).unwrap();
        assert!(hist.iter().all(|v| (v - 42.0).abs() < 1e-12));
    }

    #[test]
    fn step_is_affine_in_state_and_boundary() {
        let (_, sys) = system(false);
        let u: Vec<f64> = (0..7).map(|j| (j as f64 * 0.7).sin()).collect();
        let p = LocalBoundary::new(1.0, -2.0, 0.5, 3.0);
        let q = LocalBoundary::new(-0.3, 0.8, 2.0, -1.0);
        let lhs: Vec<f64> = sys
            .step(&u, p)
            .unwrap()
            .iter()
            .zip(sys.step(&[0.0; 7], q).unwrap())
            .map(|(a, b)| a + b)
            .collect();
        let rhs = sys.step(&u, p + q).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_step_propagator_has_one_column() {
        let (_, sys) = system(false);
        let props = build_propagators(&sys, 1).unwrap();
        assert_eq!(props.al_tilde(1).ncols(), 1);
        assert!(props.al_tilde(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn non_parabolic_coefficients_fail_assembly() {
        let mesh = SpatialMesh::uniform(0.0, 1.0, 4).unwrap();
        let mut coeffs = CoefficientField::constant(1.0, 4);
        coeffs.diffusion[1] = -1.0;
        assert!(matches!(
            assemble(&mesh, &coeffs, 0.1, false),
            Err(Error::Assembly(_))
        ));
    }

    #[test]
    fn lift_split_examples() {
        let mesh = SpatialMesh::uniform(0.0, 1.0, 4).unwrap();
        let g = InitialCondition::from_fn(&mesh, |x| x);
        let b = BoundarySeries::new(vec![0.0], vec![1.0], 0.0, 1.0).unwrap();
        let (u0, lift) = lift_split(&mesh, &g, &b).unwrap();
        assert!(u0.iter().all(|v| v.abs() < 1e-15));
        assert!((lift.value(0.0, 1.0, 0.25) - 0.25).abs() < 1e-15);

        let g = InitialCondition::constant(100.0, 5);
        let b = BoundarySeries::constant(100.0, 1);
        let (u0, _) = lift_split(&mesh, &g, &b).unwrap();
        assert!(u0.iter().all(|v| v.abs() < 1e-12));
    }
}
