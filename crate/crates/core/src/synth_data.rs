//! Synthetic datasets from a cooling problem with Robin boundaries, solved
//! on a refined grid by a scheme unrelated to the inference path.
//!
//! The reference solver is vertex-centred finite volumes (half cells at the
//! two ends, so the Robin flux enters at second order) with Crank–Nicolson in
//! time. The first two steps are replaced by four backward Euler half steps
//! to damp the start-up transient.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_hyper::{sample_field, SeCovariance};
use crate::model::{InitialCondition, ObservationSet, SpatialMesh};
use crate::numerics::Tridiagonal;

/// Heat equation `∂t T = ∂x(θ ∂x T)` with `∂x T = ±(h/κ)(T - T_out)` at the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobinProblem {
    /// Piecewise-constant diffusivity on equal coarse elements.
    pub theta: Vec<f64>,
    pub x_left: f64,
    pub x_right: f64,
    pub t_end: f64,
    pub h_over_kappa: f64,
    pub t_out: f64,
    pub t0: f64,
    /// Fine cells (and steps) per coarse element (and observation interval).
    pub refinement: usize,
}

impl RobinProblem {
    /// The dataset A physics on six coarse elements.
    pub fn dataset_a() -> Self {
        Self {
            theta: vec![1.0; 6],
            x_left: 0.0,
            x_right: 1.0,
            t_end: 1.0,
            h_over_kappa: 1.0,
            t_out: 20.0,
            t0: 100.0,
            refinement: 8,
        }
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Self {
        self.theta = theta;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.theta.is_empty() || self.theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Reference("diffusivity must be positive on every element".into()));
        }
        if !(self.h_over_kappa > 0.0) {
            return Err(Error::Reference(format!("h/kappa must be positive, got {}", self.h_over_kappa)));
        }
        if !(self.x_right > self.x_left) || !(self.t_end > 0.0) {
            return Err(Error::Reference("empty space or time domain".into()));
        }
        if self.refinement == 0 {
            return Err(Error::Reference("refinement must be at least 1".into()));
        }
        Ok(())
    }
}

/// Nodal history on the fine grid; column `k` is time `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub nodes: Vec<f64>,
    pub times: Vec<f64>,
    pub values: DMatrix<f64>,
}

/// Solve on `cells` fine cells and `steps` fine time steps.
pub fn reference_solve_on(prob: &RobinProblem, cells: usize, steps: usize) -> Result<ReferenceSolution> {
    prob.validate()?;
    let coarse = prob.theta.len();
    if cells == 0 || !cells.is_multiple_of(coarse) || steps < 2 {
        return Err(Error::Reference(format!(
            "{cells} cells do not refine {coarse} elements, or fewer than 2 steps"
        )));
    }
    let per = cells / coarse;
    let dx = (prob.x_right - prob.x_left) / cells as f64;
    let dt = prob.t_end / steps as f64;
    let m = cells + 1;
    // Face diffusivities: face i sits between nodes i and i + 1.
    let face: Vec<f64> = (0..cells).map(|i| prob.theta[i / per]).collect();
    let hk = prob.h_over_kappa;

    // M dT/dt = A T + b
    let mut mass = vec![dx; m];
    mass[0] = 0.5 * dx;
    mass[m - 1] = 0.5 * dx;
    let mut a = Tridiagonal::zeros(m);
    for (i, &k) in face.iter().enumerate() {
        let c = k / dx;
        a.diag[i] -= c;
        a.diag[i + 1] -= c;
        a.upper[i] += c;
        a.lower[i] += c;
    }
    let (kl, kr) = (face[0], face[cells - 1]);
    a.diag[0] -= kl * hk;
    a.diag[m - 1] -= kr * hk;
    let mut b = vec![0.0; m];
    b[0] = kl * hk * prob.t_out;
    b[m - 1] = kr * hk * prob.t_out;

    let system = |theta: f64, h: f64| -> (Tridiagonal, Tridiagonal) {
        // (M - θ h A) T+ = (M + (1-θ) h A) T + h b
        let mut lhs = a.clone();
        let mut rhs = a.clone();
        for i in 0..m {
            lhs.diag[i] = mass[i] - theta * h * a.diag[i];
            rhs.diag[i] = mass[i] + (1.0 - theta) * h * a.diag[i];
        }
        for i in 0..m - 1 {
            lhs.lower[i] = -theta * h * a.lower[i];
            lhs.upper[i] = -theta * h * a.upper[i];
            rhs.lower[i] = (1.0 - theta) * h * a.lower[i];
            rhs.upper[i] = (1.0 - theta) * h * a.upper[i];
        }
        (lhs, rhs)
    };
    let advance = |lhs: &crate::numerics::TridiagonalLu, rhs: &Tridiagonal, h: f64, t: &[f64]| -> Vec<f64> {
        let mut r = rhs.matvec(t);
        for i in 0..m {
            r[i] += h * b[i];
        }
        lhs.solve_in_place(&mut r);
        r
    };

    let (be_lhs, be_rhs) = system(1.0, 0.5 * dt);
    let be = be_lhs.factor().map_err(|e| Error::Reference(e.to_string()))?;
    let (cn_lhs, cn_rhs) = system(0.5, dt);
    let cn = cn_lhs.factor().map_err(|e| Error::Reference(e.to_string()))?;

    let mut values = DMatrix::zeros(m, steps + 1);
    let mut t = vec![prob.t0; m];
    values.column_mut(0).copy_from_slice(&t);
    for n in 1..=steps {
        if n <= 2 {
            t = advance(&be, &be_rhs, 0.5 * dt, &t);
            t = advance(&be, &be_rhs, 0.5 * dt, &t);
        } else {
            t = advance(&cn, &cn_rhs, dt, &t);
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Reference(format!("non-finite state at step {n}")));
        }
        values.column_mut(n).copy_from_slice(&t);
    }
    Ok(ReferenceSolution {
        nodes: (0..m).map(|i| prob.x_left + dx * i as f64).collect(),
        times: (0..=steps).map(|n| dt * n as f64).collect(),
        values,
    })
}

/// Solve on the grid refined from `steps` observation intervals.
pub fn reference_solve(prob: &RobinProblem, steps: usize) -> Result<ReferenceSolution> {
    reference_solve_on(prob, prob.theta.len() * prob.refinement, steps * prob.refinement)
}

/// Sensors, observation count, noise level and noise seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub sensors: Vec<f64>,
    pub steps: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// Seven equispaced thermocouples on `[0, 1]`, 60 readings, `σ_d = 0.56`.
    pub fn dataset_a(seed: u64) -> Self {
        Self {
            sensors: (0..7).map(|i| i as f64 / 6.0).collect(),
            steps: 60,
            noise_sd: 0.56,
            seed,
        }
    }
}

/// Noise-free readings at every sensor and at `t_1..t_N`.
pub fn sample_reference(sol: &ReferenceSolution, sensors: &[f64], steps: usize) -> Result<DMatrix<f64>> {
    let fine_steps = sol.times.len() - 1;
    if steps == 0 || !fine_steps.is_multiple_of(steps) {
        return Err(Error::Alignment(format!("{steps} observation times do not divide {fine_steps} steps")));
    }
    let stride = fine_steps / steps;
    let h = sol.nodes[1] - sol.nodes[0];
    let rows = sensors
        .iter()
        .map(|&x| {
            let k = ((x - sol.nodes[0]) / h).round();
            let ok = k >= 0.0 && (k as usize) < sol.nodes.len() && (sol.nodes[k as usize] - x).abs() <= 1e-9 * h.max(1.0);
            if ok {
                Ok(k as usize)
            } else {
                Err(Error::Alignment(format!("sensor at {x} is not a reference node")))
            }
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(DMatrix::from_fn(sensors.len(), steps, |i, n| sol.values[(rows[i], (n + 1) * stride)]))
}

/// Add i.i.d. `N(0, sd²)` noise, drawn time-major.
pub fn add_noise(clean: &DMatrix<f64>, sd: f64, seed: u64) -> Result<DMatrix<f64>> {
    if sd == 0.0 {
        return Ok(clean.clone());
    }
    let normal = Normal::new(0.0, sd).map_err(|e| Error::Domain(format!("noise sd {sd}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = clean.clone();
    for n in 0..out.ncols() {
        for i in 0..out.nrows() {
            out[(i, n)] += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Noisy observations with the likelihood noise level set to `σ_d`.
pub fn make_dataset(prob: &RobinProblem, spec: &DatasetSpec) -> Result<ObservationSet> {
    let sol = reference_solve(prob, spec.steps)?;
    dataset_from_reference(&sol, prob.t0, spec)
}

/// Noise injection on a precomputed reference solution.
pub fn dataset_from_reference(sol: &ReferenceSolution, t0: f64, spec: &DatasetSpec) -> Result<ObservationSet> {
    if !(spec.noise_sd > 0.0) {
        return Err(Error::Domain(format!("noise sd must be positive, got {}", spec.noise_sd)));
    }
    let clean = sample_reference(sol, &spec.sensors, spec.steps)?;
    let noisy = add_noise(&clean, spec.noise_sd, spec.seed)?;
    ObservationSet::new(noisy, spec.noise_sd, InitialCondition::constant(t0, spec.sensors.len()))
}

/// Generating hyperparameters of a random diffusivity field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldHyper {
    pub mu: f64,
    pub eta: f64,
    pub ell: f64,
}

impl FieldHyper {
    pub fn dataset_b() -> Self {
        Self {
            mu: 0.0,
            eta: 0.1,
            ell: 5.0,
        }
    }
}

/// Draw a field at element midpoints, solve with it, and sample.
/// Returns the observations and the field used in the solve.
pub fn make_dataset_b(
    base: &RobinProblem,
    hyper: FieldHyper,
    spec: &DatasetSpec,
    field_seed: u64,
) -> Result<(ObservationSet, Vec<f64>)> {
    let mesh = SpatialMesh::uniform(base.x_left, base.x_right, base.theta.len())?;
    let cov = SeCovariance::new(hyper.eta, hyper.ell, mesh.element_midpoints())?;
    let field = sample_field(&cov, hyper.mu, field_seed)?;
    let prob = base.clone().with_theta(field.clone());
    Ok((make_dataset(&prob, spec)?, field))
}
