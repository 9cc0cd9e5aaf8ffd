//! Lognormal random-field prior for a spatially varying coefficient and the
//! `(μ, η)` hyperposterior with the length scale integrated out by nested
//! Monte Carlo.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundaryPrior, CoefficientField, Discretization, ObservationSet};
use crate::likelihood::marginal_log_likelihood;
use crate::numerics::log_sum_exp;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Squared-exponential covariance `η² exp(-|x_i - x_j|² / (2ℓ))` on fixed sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeCovariance {
    pub eta: f64,
    pub ell: f64,
    pub sites: Vec<f64>,
}

impl SeCovariance {
    pub fn new(eta: f64, ell: f64, sites: Vec<f64>) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) || !(ell.is_finite() && ell > 0.0) {
            return Err(Error::Domain(format!("need eta >= 0 and ell > 0, got ({eta}, {ell})")));
        }
        if sites.is_empty() {
            return Err(Error::Dimension("covariance needs at least one site".into()));
        }
        Ok(Self { eta, ell, sites })
    }

    /// Correlation matrix `C = K / η²`.
    pub fn correlation(&self) -> DMatrix<f64> {
        let s = &self.sites;
        DMatrix::from_fn(s.len(), s.len(), |i, j| {
            let d = s[i] - s[j];
            (-d * d / (2.0 * self.ell)).exp()
        })
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.correlation() * (self.eta * self.eta)
    }

    /// Lower factor of `C + jitter·Id`, escalating the jitter from 1e-10 to 1e-6.
    pub fn correlation_factor(&self) -> Result<DMatrix<f64>> {
        correlation_factor(&self.correlation())
    }
}

fn correlation_factor(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    let mut jitter = 1e-10;
    while jitter <= 1e-6 * 1.000_001 {
        let m = c + DMatrix::identity(n, n) * jitter;
        if let Some(ch) = Cholesky::<f64, Dyn>::new(m) {
            return Ok(ch.unpack());
        }
        jitter *= 10.0;
    }
    Err(Error::Covariance(format!("correlation matrix of size {n} not factorizable with jitter up to 1e-6")))
}

/// `log θ = μ + L z` with `L` the covariance factor and `z` standard normal.
pub fn sample_field(cov: &SeCovariance, mu: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..cov.sites.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    if cov.eta == 0.0 {
        return Ok(vec![mu.exp(); cov.sites.len()]);
    }
    let l = cov.correlation_factor()?;
    Ok(whitened_reparam(mu, cov.eta, &z, &l))
}

/// `θ = exp(μ + η L_C z)` for a factor `L_C` of the unit-magnitude correlation.
pub fn whitened_reparam(mu: f64, eta: f64, z: &[f64], factor: &DMatrix<f64>) -> Vec<f64> {
    let lz = factor * DVector::from_column_slice(z);
    lz.iter().map(|v| (mu + eta * v).exp()).collect()
}

/// `μ ~ N(loc, scale²)`, `η ~ half-Cauchy(scale)`, `ℓ ~ U(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub mu_loc: f64,
    pub mu_scale: f64,
    pub eta_scale: f64,
    pub ell_lo: f64,
    pub ell_hi: f64,
}

impl HyperPrior {
    /// Hyperprior used with dataset A.
    pub fn dataset_a() -> Self {
        Self {
            mu_loc: 0.1,
            mu_scale: 0.1,
            eta_scale: 0.1,
            ell_lo: 0.5,
            ell_hi: 5.0,
        }
    }

    /// Broader hyperprior used with dataset B.
    pub fn dataset_b() -> Self {
        Self {
            mu_loc: 0.0,
            mu_scale: 0.25,
            eta_scale: 0.5,
            ell_lo: 4.0,
            ell_hi: 6.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu_scale > 0.0
            && self.eta_scale > 0.0
            && self.ell_lo > 0.0
            && self.ell_hi > self.ell_lo
            && self.mu_loc.is_finite()
            && self.ell_hi.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid hyperprior {self:?}")))
        }
    }

    pub fn log_mu(&self, mu: f64) -> f64 {
        let z = (mu - self.mu_loc) / self.mu_scale;
        -LN_SQRT_2PI - self.mu_scale.ln() - 0.5 * z * z
    }

    pub fn log_eta(&self, eta: f64) -> f64 {
        if eta < 0.0 {
            return f64::NEG_INFINITY;
        }
        let r = eta / self.eta_scale;
        (2.0 / std::f64::consts::PI).ln() - self.eta_scale.ln() - (1.0 + r * r).ln()
    }

    pub fn log_ell(&self, ell: f64) -> f64 {
        if ell < self.ell_lo || ell > self.ell_hi {
            f64::NEG_INFINITY
        } else {
            -(self.ell_hi - self.ell_lo).ln()
        }
    }
}

/// Shared Monte Carlo draws: `ℓ_i ~ U(lo, hi)` and whitened directions
/// `w_ij = L_C(ℓ_i) ε_ij`, reused for every `(μ, η)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBank {
    pub ells: Vec<f64>,
    pub directions: Vec<Vec<Vec<f64>>>,
}

impl SampleBank {
    pub fn draw(sites: &[f64], hp: &HyperPrior, m_ell: usize, m_z: usize, seed: u64) -> Result<Self> {
        hp.validate()?;
        if m_ell < 8 || m_z < 8 {
            return Err(Error::SampleCount(format!("need M_ell, M_z >= 8, got ({m_ell}, {m_z})")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new_inclusive(hp.ell_lo, hp.ell_hi).map_err(|e| Error::Domain(e.to_string()))?;
        let mut ells = Vec::with_capacity(m_ell);
        let mut directions = Vec::with_capacity(m_ell);
        for _ in 0..m_ell {
            let ell = u.sample(&mut rng);
            let factor = SeCovariance::new(1.0, ell, sites.to_vec())?.correlation_factor()?;
            let dirs = (0..m_z)
                .map(|_| {
                    let eps: Vec<f64> = (0..sites.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                    (&factor * DVector::from_vec(eps)).iter().copied().collect()
                })
                .collect();
            ells.push(ell);
            directions.push(dirs);
        }
        Ok(Self { ells, directions })
    }

    pub fn m_ell(&self) -> usize {
        self.ells.len()
    }

    pub fn m_z(&self) -> usize {
        self.directions.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperLaplace {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub local_maxima: usize,
}

impl HyperLaplace {
    pub fn sd(&self) -> [f64; 2] {
        [self.covariance[0][0].sqrt(), self.covariance[1][1].sqrt()]
    }
}

/// Unnormalized log hyperposterior on a `μ × η` grid. Tables are indexed
/// `[i][j]` for `(mu[i], eta[j])`; invalid cells hold `-inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPosteriorGrid {
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
    pub log_density: Vec<Vec<f64>>,
    /// Batch-means standard error of each cell's log Monte Carlo average.
    pub std_error: Vec<Vec<f64>>,
    pub map: (f64, f64),
    pub map_index: (usize, usize),
    pub laplace: Option<HyperLaplace>,
}

impl HyperPosteriorGrid {
    pub fn cells(&self) -> usize {
        self.mu.len() * self.eta.len()
    }

    pub fn invalid_fraction(&self) -> f64 {
        let bad = self.log_density.iter().flatten().filter(|v| !v.is_finite()).count();
        bad as f64 / self.cells() as f64
    }

    /// Cells strictly above every valid neighbour in the 8-neighbourhood.
    pub fn local_maxima(&self) -> Vec<(usize, usize)> {
        let (nm, ne) = (self.mu.len(), self.eta.len());
        let t = &self.log_density;
        let mut out = Vec::new();
        for i in 0..nm {
            for j in 0..ne {
                let v = t[i][j];
                if !v.is_finite() {
                    continue;
                }
                let mut top = true;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let (a, b) = (i as i64 + di, j as i64 + dj);
                        if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= nm as i64 || b >= ne as i64 {
                            continue;
                        }
                        if t[a as usize][b as usize] >= v {
                            top = false;
                        }
                    }
                }
                if top {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

const BATCHES: usize = 8;

/// Log Monte Carlo mean and its batch-means standard error.
fn log_mean_with_error(values: &[f64]) -> (f64, f64) {
    let total = log_sum_exp(values) - (values.len() as f64).ln();
    if !total.is_finite() {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let size = values.len() / BATCHES;
    let batch: Vec<f64> = values
        .chunks(size)
        .take(BATCHES)
        .map(|c| log_sum_exp(c) - (c.len() as f64).ln())
        .collect();
    if batch.iter().any(|v| !v.is_finite()) {
        return (total, f64::INFINITY);
    }
    let mean = batch.iter().sum::<f64>() / BATCHES as f64;
    let var = batch.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    (total, (var / BATCHES as f64).sqrt())
}

/// Log hyperposterior of `(μ, η)` with `ℓ` and the whitened field
/// integrated out by the double Monte Carlo sum over a shared bank.
#[allow(clippy::too_many_arguments)]
pub fn hyper_log_posterior_grid(
    obs: &ObservationSet,
    disc: &Discretization,
    boundary: &BoundaryPrior,
    hp: &HyperPrior,
    mu_grid: &[f64],
    eta_grid: &[f64],
    m_ell: usize,
    m_z: usize,
    seed: u64,
) -> Result<HyperPosteriorGrid> {
    if mu_grid.len() < 3 || eta_grid.len() < 3 {
        return Err(Error::Grid("hyperparameter grids need at least 3 points each".into()));
    }
    if eta_grid.iter().any(|&e| !(e >= 0.0)) {
        return Err(Error::Grid("eta grid must be non-negative".into()));
    }
    let sites = disc.mesh.element_midpoints();
    let bank = SampleBank::draw(&sites, hp, m_ell, m_z, seed)?;
    let cells: Vec<(usize, usize)> = (0..mu_grid.len()).flat_map(|i| (0..eta_grid.len()).map(move |j| (i, j))).collect();
    let evaluated = cells
        .par_iter()
        .map(|&(i, j)| cell_value(obs, disc, boundary, hp, &bank, mu_grid[i], eta_grid[j]))
        .collect::<Result<Vec<_>>>()?;
    let mut log_density = vec![vec![f64::NEG_INFINITY; eta_grid.len()]; mu_grid.len()];
    let mut std_error = vec![vec![f64::INFINITY; eta_grid.len()]; mu_grid.len()];
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for (&(i, j), &(v, se)) in cells.iter().zip(&evaluated) {
        log_density[i][j] = v;
        std_error[i][j] = se;
        if v > best.0 {
            best = (v, (i, j));
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Numerical("every grid cell has zero likelihood".into()));
    }
    let (bi, bj) = best.1;
    let mut grid = HyperPosteriorGrid {
        mu: mu_grid.to_vec(),
        eta: eta_grid.to_vec(),
        log_density,
        std_error,
        map: (mu_grid[bi], eta_grid[bj]),
        map_index: (bi, bj),
        laplace: None,
    };
    grid.laplace = hyper_laplace(&grid).ok();
    Ok(grid)
}

fn cell_value(
    obs: &ObservationSet,
    disc: &Discretization,
    boundary: &BoundaryPrior,
    hp: &HyperPrior,
    bank: &SampleBank,
    mu: f64,
    eta: f64,
) -> Result<(f64, f64)> {
    let prior = hp.log_mu(mu) + hp.log_eta(eta);
    let mut terms = Vec::with_capacity(bank.m_ell() * bank.m_z());
    for dirs in &bank.directions {
        for w in dirs {
            let theta: Vec<f64> = w.iter().map(|v| (mu + eta * v).exp()).collect();
            let ll = match marginal_log_likelihood(&CoefficientField::diffusion_only(theta), obs, boundary, disc) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(Error::Numerical(_)) | Err(Error::Solve(_)) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
            terms.push(ll);
        }
    }
    let (lm, se) = log_mean_with_error(&terms);
    Ok((prior + lm, se))
}

/// Gaussian fit at the table argmax from central differences, refined by
/// one Newton step when that step stays within a cell.
pub fn hyper_laplace(grid: &HyperPosteriorGrid) -> Result<HyperLaplace> {
    let (i, j) = grid.map_index;
    let (nm, ne) = (grid.mu.len(), grid.eta.len());
    if i == 0 || j == 0 || i + 1 >= nm || j + 1 >= ne {
        return Err(Error::Grid(format!(
            "MAP ({}, {}) lies on the grid edge",
            grid.mu[i], grid.eta[j]
        )));
    }
    let f = |a: usize, b: usize| grid.log_density[a][b];
    let hm = 0.5 * (grid.mu[i + 1] - grid.mu[i - 1]);
    let he = 0.5 * (grid.eta[j + 1] - grid.eta[j - 1]);
    let fmm = (f(i + 1, j) - 2.0 * f(i, j) + f(i - 1, j)) / (hm * hm);
    let fee = (f(i, j + 1) - 2.0 * f(i, j) + f(i, j - 1)) / (he * he);
    let fme = (f(i + 1, j + 1) - f(i + 1, j - 1) - f(i - 1, j + 1) + f(i - 1, j - 1)) / (4.0 * hm * he);
    let gm = (f(i + 1, j) - f(i - 1, j)) / (2.0 * hm);
    let ge = (f(i, j + 1) - f(i, j - 1)) / (2.0 * he);
    // negative Hessian
    let (a, b, c) = (-fmm, -fme, -fee);
    let det = a * c - b * b;
    if !(a > 0.0 && c > 0.0 && det > 0.0) || !det.is_finite() {
        return Err(Error::Curvature(format!("negative Hessian [[{a}, {b}], [{b}, {c}]] is not positive definite")));
    }
    let covariance = [[c / det, -b / det], [-b / det, a / det]];
    let step = [
        covariance[0][0] * gm + covariance[0][1] * ge,
        covariance[1][0] * gm + covariance[1][1] * ge,
    ];
    let mut mean = [grid.mu[i], grid.eta[j]];
    if step[0].abs() <= hm && step[1].abs() <= he {
        mean[0] += step[0];
        mean[1] += step[1];
    }
    Ok(HyperLaplace {
        mean,
        covariance,
        local_maxima: grid.local_maxima().len(),
    })
}
