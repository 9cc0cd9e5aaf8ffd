//! Domain types shared by every stage of the pipeline: meshes, time grids,
//! coefficient fields, boundary series and priors, observation sets, and the
//! admissibility checks that guard the forward problem.
//!
//! Indexing conventions: mesh nodes are `0..=I`, interior nodes `1..I` map to
//! interior vector slots `0..I-1`, and time columns `0..N` hold readings at
//! `t_1..t_N` (the initial time is never observed).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound used for the parabolicity check `a(x) >= eps > 0`.
pub const PARABOLICITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMesh {
    nodes: Vec<f64>,
    uniform: bool,
}

impl SpatialMesh {
    /// Uniform mesh with `elements` cells on `[x_left, x_right]`.
    pub fn uniform(x_left: f64, x_right: f64, elements: usize) -> Result<Self> {
        if elements < 2 {
            return Err(Error::Domain(format!(
                "mesh needs at least two elements, got {elements}"
            )));
        }
        if !(x_left.is_finite() && x_right.is_finite() && x_right > x_left) {
            return Err(Error::Domain(format!(
                "invalid interval [{x_left}, {x_right}]"
            )));
        }
        let dx = (x_right - x_left) / elements as f64;
        let nodes = (0..=elements)
            .map(|k| {
                if k == elements {
                    x_right
                } else {
                    x_left + dx * k as f64
                }
            })
            .collect();
        Ok(Self {
            nodes,
            uniform: true,
        })
    }

    /// Mesh from explicit, strictly increasing node positions.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Domain("mesh needs at least three nodes".into()));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("mesh nodes must be strictly increasing".into()));
        }
        let h0 = nodes[1] - nodes[0];
        let uniform = nodes
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h0).abs() <= 1e-12 * h0.abs().max(1.0));
        Ok(Self { nodes, uniform })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn x_left(&self) -> f64 {
        self.nodes[0]
    }

    pub fn x_right(&self) -> f64 {
        *self.nodes.last().expect("non-empty mesh")
    }

    pub fn length(&self) -> f64 {
        self.x_right() - self.x_left()
    }

    /// Number of elements `I`.
    pub fn elements(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of interior nodes `I - 1`.
    pub fn interior(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn element_width(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    pub fn element_midpoints(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Spacing of a uniform mesh.
    pub fn spacing(&self) -> Option<f64> {
        self.uniform.then(|| self.length() / self.elements() as f64)
    }

    /// Values at node `x` of the affine lifts `(x_R - x)/(x_R - x_L)` and
    /// `(x - x_L)/(x_R - x_L)`.
    pub fn lift_weights(&self, x: f64) -> (f64, f64) {
        let len = self.length();
        ((self.x_right() - x) / len, (x - self.x_left()) / len)
    }

    /// Mesh reflected about its midpoint.
    pub fn mirrored(&self) -> SpatialMesh {
        let (l, r) = (self.x_left(), self.x_right());
        let nodes = self.nodes.iter().rev().map(|x| l + r - x).collect();
        SpatialMesh {
            nodes,
            uniform: self.uniform,
        }
    }
}

/// Uniform partition of `(0, t_end]` into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::Domain(format!("t_end must be positive, got {t_end}")));
        }
        Ok(Self { t_end, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        if self.steps == 0 {
            self.t_end
        } else {
            self.t_end / self.steps as f64
        }
    }

    /// Time of observation `n` (`n = 0` is the initial time).
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_end
        } else {
            self.dt() * n as f64
        }
    }

    /// Observation times `t_1..t_N`.
    pub fn times(&self) -> Vec<f64> {
        (1..=self.steps).map(|n| self.time(n)).collect()
    }

    /// Grid with the first `steps` intervals of `self`.
    pub fn truncated(&self, steps: usize) -> TimeGrid {
        TimeGrid {
            t_end: self.dt() * steps as f64,
            steps,
        }
    }
}

/// Piecewise-constant coefficients of `-(a u')' + b u' + c u`, one value per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    pub diffusion: Vec<f64>,
    pub advection: Vec<f64>,
    pub reaction: Vec<f64>,
}

impl CoefficientField {
    /// Pure diffusion with constant diffusivity.
    pub fn constant(theta: f64, elements: usize) -> Self {
        Self::diffusion_only(vec![theta; elements])
    }

    pub fn diffusion_only(diffusion: Vec<f64>) -> Self {
        let n = diffusion.len();
        Self {
            diffusion,
            advection: vec![0.0; n],
            reaction: vec![0.0; n],
        }
    }

    pub fn elements(&self) -> usize {
        self.diffusion.len()
    }

    pub fn mirrored(&self) -> Self {
        let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
        Self {
            diffusion: rev(&self.diffusion),
            advection: self.advection.iter().rev().map(|b| -b).collect(),
            reaction: rev(&self.reaction),
        }
    }
}

/// Initial condition `g` sampled at every mesh node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub values: Vec<f64>,
}

impl InitialCondition {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(value: f64, nodes: usize) -> Self {
        Self {
            values: vec![value; nodes],
        }
    }

    pub fn from_fn(mesh: &SpatialMesh, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: mesh.nodes().iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn interior(&self) -> &[f64] {
        &self.values[1..self.values.len() - 1]
    }

    pub fn left(&self) -> f64 {
        self.values[0]
    }

    pub fn right(&self) -> f64 {
        *self.values.last().expect("non-empty initial condition")
    }
}

/// Dirichlet boundary values at `t_1..t_N` plus the known values at `t_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySeries {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub left0: f64,
    pub right0: f64,
}

impl BoundarySeries {
    pub fn new(left: Vec<f64>, right: Vec<f64>, left0: f64, right0: f64) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::Dimension(format!(
                "left/right boundary lengths differ ({} vs {})",
                left.len(),
                right.len()
            )));
        }
        Ok(Self {
            left,
            right,
            left0,
            right0,
        })
    }

    pub fn constant(value: f64, steps: usize) -> Self {
        Self {
            left: vec![value; steps],
            right: vec![value; steps],
            left0: value,
            right0: value,
        }
    }

    pub fn steps(&self) -> usize {
        self.left.len()
    }

    /// Left value at time index `n`, with `n = 0` the initial value.
    pub fn left_at(&self, n: usize) -> f64 {
        if n == 0 {
            self.left0
        } else {
            self.left[n - 1]
        }
    }

    pub fn right_at(&self, n: usize) -> f64 {
        if n == 0 {
            self.right0
        } else {
            self.right[n - 1]
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
            left0: self.right0,
            right0: self.left0,
        }
    }
}

/// Independent Gaussian priors `T_L ~ N(mu_L, sd^2 I)`, `T_R ~ N(mu_R, sd^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPrior {
    pub mean_left: Vec<f64>,
    pub mean_right: Vec<f64>,
    pub sd: f64,
}

impl BoundaryPrior {
    pub fn new(mean_left: Vec<f64>, mean_right: Vec<f64>, sd: f64) -> Result<Self> {
        if !(sd.is_finite() && sd > 0.0) {
            return Err(Error::Domain(format!("prior sd must be positive, got {sd}")));
        }
        if mean_left.len() != mean_right.len() {
            return Err(Error::Dimension("prior mean lengths differ".into()));
        }
        if mean_left.iter().chain(&mean_right).any(|m| !m.is_finite()) {
            return Err(Error::Domain("prior means must be finite".into()));
        }
        Ok(Self {
            mean_left,
            mean_right,
            sd,
        })
    }

    /// Prior centred on least-squares cubic spline fits of the boundary rows.
    pub fn from_spline_fit(
        obs: &ObservationSet,
        grid: &TimeGrid,
        sd: f64,
        intervals: usize,
    ) -> Result<Self> {
        let times = grid.times();
        let left = least_squares_spline(&times, &obs.left_row(), 0.0, grid.t_end(), intervals)?;
        let right = least_squares_spline(&times, &obs.right_row(), 0.0, grid.t_end(), intervals)?;
        Self::new(left, right, sd)
    }

    pub fn steps(&self) -> usize {
        self.mean_left.len()
    }

    pub fn swapped(&self) -> Self {
        Self {
            mean_left: self.mean_right.clone(),
            mean_right: self.mean_left.clone(),
            sd: self.sd,
        }
    }
}

fn bspline_basis(knots: &[f64], degree: usize, x: f64) -> Vec<f64> {
    let nb = knots.len() - degree - 1;
    // Degree-zero indicators, with the right end closed.
    let last = knots[knots.len() - 1];
    let mut b: Vec<f64> = (0..knots.len() - 1)
        .map(|i| {
            let inside = knots[i] <= x && x < knots[i + 1];
            let at_end = x == last && knots[i] < knots[i + 1] && knots[i + 1] == last;
            if inside || at_end {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for p in 1..=degree {
        let mut next = vec![0.0; knots.len() - 1 - p];
        for (i, out) in next.iter_mut().enumerate() {
            let mut v = 0.0;
            let d1 = knots[i + p] - knots[i];
            if d1 > 0.0 {
                v += (x - knots[i]) / d1 * b[i];
            }
            let d2 = knots[i + p + 1] - knots[i + 1];
            if d2 > 0.0 {
                v += (knots[i + p + 1] - x) / d2 * b[i + 1];
            }
            *out = v;
        }
        b = next;
    }
    b.truncate(nb);
    b
}

/// Least-squares cubic B-spline fit with uniform interior knots, evaluated
/// at the data abscissae.
pub fn least_squares_spline(
    x: &[f64],
    y: &[f64],
    lo: f64,
    hi: f64,
    intervals: usize,
) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::Dimension("spline abscissae and values differ".into()));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    const DEGREE: usize = 3;
    // Keep the basis no larger than the data.
    let intervals = intervals.max(1).min(x.len().saturating_sub(DEGREE).max(1));
    let mut knots = vec![lo; DEGREE];
    for k in 0..=intervals {
        knots.push(lo + (hi - lo) * k as f64 / intervals as f64);
    }
    knots.extend(std::iter::repeat_n(hi, DEGREE));
    let nb = knots.len() - DEGREE - 1;
    if x.len() < nb {
        // Too few points for a cubic: fall back to the data itself.
        return Ok(y.to_vec());
    }
    let design = DMatrix::from_fn(x.len(), nb, |i, j| bspline_basis(&knots, DEGREE, x[i])[j]);
    let rhs = DVector::from_column_slice(y);
    let svd = design.clone().svd(true, true);
    let coef = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Numerical(format!("spline fit: {e}")))?;
    Ok((design * coef).iter().copied().collect())
}

/// Noisy readings `Y` at all `I + 1` nodes and `N` times.
///
/// An optional mask selects which interior readings take part in the
/// likelihood; boundary rows are always used.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    readings: DMatrix<f64>,
    noise_sd: f64,
    initial: InitialCondition,
    mask: Option<DMatrix<bool>>,
}

impl ObservationSet {
    pub fn new(readings: DMatrix<f64>, noise_sd: f64, initial: InitialCondition) -> Result<Self> {
        if !(noise_sd.is_finite() && noise_sd > 0.0) {
            return Err(Error::Domain(format!("noise sd must be positive, got {noise_sd}")));
        }
        if readings.nrows() < 3 {
            return Err(Error::Dimension("need at least three reading rows".into()));
        }
        if initial.values.len() != readings.nrows() {
            return Err(Error::Dimension(format!(
                "initial condition has {} nodes, readings have {} rows",
                initial.values.len(),
                readings.nrows()
            )));
        }
        Ok(Self {
            readings,
            noise_sd,
            initial,
            mask: None,
        })
    }

    /// Reassemble from an interior block and the two boundary rows.
    pub fn from_parts(
        interior: &DMatrix<f64>,
        left: &[f64],
        right: &[f64],
        noise_sd: f64,
        initial: InitialCondition,
    ) -> Result<Self> {
        let n = interior.ncols();
        if left.len() != n || right.len() != n {
            return Err(Error::Dimension("boundary rows must match interior columns".into()));
        }
        let rows = interior.nrows() + 2;
        let readings = DMatrix::from_fn(rows, n, |i, j| {
            if i == 0 {
                left[j]
            } else if i == rows - 1 {
                right[j]
            } else {
                interior[(i - 1, j)]
            }
        });
        Self::new(readings, noise_sd, initial)
    }

    pub fn readings(&self) -> &DMatrix<f64> {
        &self.readings
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn with_noise_sd(mut self, noise_sd: f64) -> Result<Self> {
        if !(noise_sd.is_finite() && noise_sd > 0.0) {
            return Err(Error::Domain(format!("noise sd must be positive, got {noise_sd}")));
        }
        self.noise_sd = noise_sd;
        Ok(self)
    }

    pub fn initial(&self) -> &InitialCondition {
        &self.initial
    }

    /// Number of observation times `N`.
    pub fn steps(&self) -> usize {
        self.readings.ncols()
    }

    /// Number of mesh nodes `I + 1`.
    pub fn nodes(&self) -> usize {
        self.readings.nrows()
    }

    pub fn interior_len(&self) -> usize {
        self.readings.nrows() - 2
    }

    /// The `(I-1) x N` interior block.
    pub fn interior(&self) -> DMatrix<f64> {
        self.readings.rows(1, self.interior_len()).into_owned()
    }

    pub fn left_row(&self) -> Vec<f64> {
        self.readings.row(0).iter().copied().collect()
    }

    pub fn right_row(&self) -> Vec<f64> {
        self.readings.row(self.nodes() - 1).iter().copied().collect()
    }

    /// Interior reading `j` (0-based interior slot) at time column `n` (0-based).
    pub fn interior_value(&self, j: usize, n: usize) -> f64 {
        self.readings[(j + 1, n)]
    }

    pub fn mask(&self) -> Option<&DMatrix<bool>> {
        self.mask.as_ref()
    }

    pub fn is_observed(&self, j: usize, n: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[(j, n)])
    }

    /// Restrict the interior readings taking part in the likelihood.
    pub fn with_mask(mut self, mask: DMatrix<bool>) -> Result<Self> {
        if mask.nrows() != self.interior_len() || mask.ncols() != self.steps() {
            return Err(Error::Dimension(format!(
                "mask is {}x{}, interior block is {}x{}",
                mask.nrows(),
                mask.ncols(),
                self.interior_len(),
                self.steps()
            )));
        }
        self.mask = if mask.iter().all(|&b| b) {
            None
        } else {
            Some(mask)
        };
        Ok(self)
    }

    pub fn observed_interior_count(&self) -> usize {
        match &self.mask {
            None => self.interior_len() * self.steps(),
            Some(m) => m.iter().filter(|&&b| b).count(),
        }
    }

    /// Keep only the first `steps` observation times.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps > self.steps() {
            return Err(Error::Dimension(format!(
                "cannot keep {steps} of {} observation times",
                self.steps()
            )));
        }
        Ok(Self {
            readings: self.readings.columns(0, steps).into_owned(),
            noise_sd: self.noise_sd,
            initial: self.initial.clone(),
            mask: self.mask.as_ref().map(|m| m.columns(0, steps).into_owned()),
        })
    }

    /// Readings reflected left to right, for exchange-symmetry checks.
    pub fn mirrored(&self) -> Self {
        let rows = self.nodes();
        let readings = DMatrix::from_fn(rows, self.steps(), |i, j| self.readings[(rows - 1 - i, j)]);
        let mut values = self.initial.values.clone();
        values.reverse();
        let il = self.interior_len();
        Self {
            readings,
            noise_sd: self.noise_sd,
            initial: InitialCondition::new(values),
            mask: self
                .mask
                .as_ref()
                .map(|m| DMatrix::from_fn(il, m.ncols(), |i, j| m[(il - 1 - i, j)])),
        }
    }
}

/// Mesh, time grid, and mass-matrix choice for the inference-path solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub mesh: SpatialMesh,
    pub grid: TimeGrid,
    pub lumped_mass: bool,
}

impl Discretization {
    pub fn new(mesh: SpatialMesh, grid: TimeGrid, lumped_mass: bool) -> Self {
        Self {
            mesh,
            grid,
            lumped_mass,
        }
    }

    pub fn truncated(&self, steps: usize) -> Self {
        Self {
            mesh: self.mesh.clone(),
            grid: self.grid.truncated(steps),
            lumped_mass: self.lumped_mass,
        }
    }
}

/// One failed admissibility assumption.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// P1: a coefficient sample is not finite.
    Boundedness { coefficient: &'static str, element: usize },
    /// P2: initial or boundary data contain non-finite values.
    SquareIntegrability { what: &'static str },
    /// P3: initial condition disagrees with the boundary value at `t_0`.
    Consistency { side: &'static str, initial: f64, boundary: f64 },
    /// `a >= eps > 0` fails on an element.
    Parabolicity { element: usize, value: f64 },
    /// Array sizes do not match the mesh or the time grid.
    Dimension(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Boundedness { coefficient, element } => {
                write!(f, "P1 boundedness: {coefficient} not finite on element {element}")
            }
            Violation::SquareIntegrability { what } => {
                write!(f, "P2 square integrability: {what} contains non-finite values")
            }
            Violation::Consistency {
                side,
                initial,
                boundary,
            } => write!(
                f,
                "P3 consistency: g({side}) = {initial} but boundary value at t0 is {boundary}"
            ),
            Violation::Parabolicity { element, value } => write!(
                f,
                "parabolicity: a >= eps fails on element {element} (a = {value})"
            ),
            Violation::Dimension(msg) => write!(f, "dimension: {msg}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

/// Check the admissibility assumptions of the forward problem.
pub fn validate_problem(
    mesh: &SpatialMesh,
    grid: &TimeGrid,
    coeffs: &CoefficientField,
    initial: &InitialCondition,
    boundary: Option<&BoundarySeries>,
) -> ValidationReport {
    let mut violations = Vec::new();
    let elements = mesh.elements();
    for (name, v) in [
        ("a", &coeffs.diffusion),
        ("b", &coeffs.advection),
        ("c", &coeffs.reaction),
    ] {
        if v.len() != elements {
            violations.push(Violation::Dimension(format!(
                "coefficient {name} has {} samples for {elements} elements",
                v.len()
            )));
        }
        for (e, x) in v.iter().enumerate() {
            if !x.is_finite() {
                violations.push(Violation::Boundedness {
                    coefficient: name,
                    element: e,
                });
            }
        }
    }
    for (e, &a) in coeffs.diffusion.iter().enumerate() {
        if a.is_finite() && a < PARABOLICITY_EPS {
            violations.push(Violation::Parabolicity { element: e, value: a });
        }
    }
    if initial.values.len() != mesh.nodes().len() {
        violations.push(Violation::Dimension(format!(
            "initial condition has {} values for {} nodes",
            initial.values.len(),
            mesh.nodes().len()
        )));
    } else if initial.values.iter().any(|v| !v.is_finite()) {
        violations.push(Violation::SquareIntegrability {
            what: "initial condition",
        });
    }
    if let Some(b) = boundary {
        if b.steps() != grid.steps() {
            violations.push(Violation::Dimension(format!(
                "boundary series has {} values for {} steps",
                b.steps(),
                grid.steps()
            )));
        }
        if b.left
            .iter()
            .chain(&b.right)
            .chain([&b.left0, &b.right0])
            .any(|v| !v.is_finite())
        {
            violations.push(Violation::SquareIntegrability {
                what: "boundary series",
            });
        }
        if initial.values.len() == mesh.nodes().len() {
            let tol = 1e-12 * (1.0 + initial.left().abs().max(initial.right().abs()));
            if (initial.left() - b.left0).abs() > tol {
                violations.push(Violation::Consistency {
                    side: "x_L",
                    initial: initial.left(),
                    boundary: b.left0,
                });
            }
            if (initial.right() - b.right0).abs() > tol {
                violations.push(Violation::Consistency {
                    side: "x_R",
                    initial: initial.right(),
                    boundary: b.right0,
                });
            }
        }
    }
    ValidationReport { violations }
}
