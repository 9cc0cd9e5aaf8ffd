//! Posterior inference for a constant coefficient `θ` under a lognormal prior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{known_boundary_log_likelihood, marginal_log_likelihood};
use crate::model::{BoundaryPrior, BoundarySeries, CoefficientField, Discretization, ObservationSet};
use crate::numerics::{linspace, trapezoid};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A univariate density that can be evaluated pointwise.
pub trait Density1d {
    fn log_pdf(&self, x: f64) -> f64;

    fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// An interval holding all but a negligible part of the mass.
    fn bulk(&self) -> (f64, f64);
}

/// `log θ ~ N(ν, τ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalPrior {
    pub nu: f64,
    pub tau: f64,
}

impl LognormalPrior {
    pub fn new(nu: f64, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) || !nu.is_finite() {
            return Err(Error::Domain(format!("lognormal prior needs finite nu and tau > 0, got ({nu}, {tau})")));
        }
        Ok(Self { nu, tau })
    }

    pub fn mode(&self) -> f64 {
        (self.nu - self.tau * self.tau).exp()
    }

    pub fn mean(&self) -> f64 {
        (self.nu + 0.5 * self.tau * self.tau).exp()
    }
}

impl Density1d for LognormalPrior {
    fn log_pdf(&self, theta: f64) -> f64 {
        if theta <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = (theta.ln() - self.nu) / self.tau;
        -theta.ln() - LN_SQRT_2PI - self.tau.ln() - 0.5 * z * z
    }

    fn bulk(&self) -> (f64, f64) {
        ((self.nu - 12.0 * self.tau).exp(), (self.nu + 12.0 * self.tau).exp())
    }
}

/// Gaussian approximation at the mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplacePosterior {
    pub theta_hat: f64,
    pub variance: f64,
    /// `f(θ̂) + ½ log(2π var)`, an estimate of the log evidence.
    pub log_norm_const: f64,
}

impl LaplacePosterior {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

impl Density1d for LaplacePosterior {
    fn log_pdf(&self, x: f64) -> f64 {
        let d = x - self.theta_hat;
        -LN_SQRT_2PI - 0.5 * self.variance.ln() - 0.5 * d * d / self.variance
    }

    fn bulk(&self) -> (f64, f64) {
        let w = 12.0 * self.sd();
        (self.theta_hat - w, self.theta_hat + w)
    }
}

/// How the boundary values enter the likelihood.
#[derive(Debug, Clone)]
pub enum BoundaryTreatment {
    /// Boundary series known exactly.
    Known(BoundarySeries),
    /// Gaussian prior integrated out.
    Marginal(BoundaryPrior),
}

/// Non-normalized log posterior of a constant coefficient.
#[derive(Debug, Clone)]
pub struct ScalarPosterior<'a> {
    pub obs: &'a ObservationSet,
    pub disc: &'a Discretization,
    pub boundary: &'a BoundaryTreatment,
    pub prior: LognormalPrior,
}

impl ScalarPosterior<'_> {
    pub fn log_likelihood(&self, theta: f64) -> Result<f64> {
        if !(theta > 0.0) {
            return Err(Error::Domain(format!("theta must be positive, got {theta}")));
        }
        let coeffs = CoefficientField::constant(theta, self.disc.mesh.elements());
        match self.boundary {
            BoundaryTreatment::Known(b) => known_boundary_log_likelihood(&coeffs, self.obs, b, self.disc),
            BoundaryTreatment::Marginal(p) => marginal_log_likelihood(&coeffs, self.obs, p, self.disc),
        }
    }

    pub fn log_posterior(&self, theta: f64) -> Result<f64> {
        Ok(self.prior.log_pdf(theta) + self.log_likelihood(theta)?)
    }
}

pub fn log_posterior(
    theta: f64,
    obs: &ObservationSet,
    disc: &Discretization,
    boundary: &BoundaryTreatment,
    prior: LognormalPrior,
) -> Result<f64> {
    ScalarPosterior { obs, disc, boundary, prior }.log_posterior(theta)
}

/// Golden-section-safeguarded parabolic maximization on `[a, b]`.
fn brent_max<F: FnMut(f64) -> Result<f64>>(f: &mut F, mut a: f64, mut b: f64, rel_tol: f64) -> Result<f64> {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = -f(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0_f64, 0.0_f64);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol = rel_tol * x.abs() + 1e-14;
        let tol2 = 2.0 * tol;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Ok(x);
        }
        let mut golden = true;
        if e.abs() > tol {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol } else { -tol };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol { x + d } else { x + tol.copysign(d) };
        let fu = -f(u)?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    Ok(x)
}

/// Maximizer of `f` on `[lo, hi]`: a coarse scan of `scan` points followed by
/// Brent refinement around the best point.
pub fn map_estimate_with<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    lo: f64,
    hi: f64,
    scan: usize,
) -> Result<f64> {
    if !(lo < hi) || scan < 3 {
        return Err(Error::Domain(format!("invalid bracket [{lo}, {hi}] with {scan} scan points")));
    }
    let xs = linspace(lo, hi, scan);
    let mut scanned = Vec::with_capacity(scan);
    for &x in &xs {
        let v = f(x)?;
        scanned.push((x, if v.is_nan() { f64::NEG_INFINITY } else { v }));
    }
    let best = scanned
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .expect("non-empty scan");
    if best == 0 || best == scan - 1 || scanned[best].1 == f64::NEG_INFINITY {
        return Err(Error::Bracket { lo, hi, scanned });
    }
    brent_max(&mut f, xs[best - 1], xs[best + 1], 1e-8)
}

pub fn map_estimate<F: FnMut(f64) -> Result<f64>>(f: F, lo: f64, hi: f64) -> Result<f64> {
    map_estimate_with(f, lo, hi, 64)
}

/// Laplace approximation from a Richardson-refined central second difference.
pub fn laplace_fit<F: FnMut(f64) -> Result<f64>>(mut f: F, theta_hat: f64) -> Result<LaplacePosterior> {
    let h = (1e-4 * theta_hat.abs()).max(1e-5);
    let f0 = f(theta_hat)?;
    let mut second = |h: f64| -> Result<f64> { Ok((f(theta_hat + h)? - 2.0 * f0 + f(theta_hat - h)?) / (h * h)) };
    let coarse = second(h)?;
    let fine = second(0.5 * h)?;
    let curvature = (4.0 * fine - coarse) / 3.0;
    if !curvature.is_finite() || curvature >= 0.0 {
        return Err(Error::Curvature(format!("second derivative {curvature:e} at {theta_hat}")));
    }
    let variance = -1.0 / curvature;
    Ok(LaplacePosterior {
        theta_hat,
        variance,
        log_norm_const: f0 + 0.5 * (2.0 * std::f64::consts::PI * variance).ln(),
    })
}

/// Trapezoid-normalized density on an ordered grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPosterior {
    pub theta: Vec<f64>,
    pub log_unnormalized: Vec<f64>,
    pub density: Vec<f64>,
    /// `log ∫ exp(f)` by the trapezoid rule.
    pub log_evidence: f64,
}

impl GridPosterior {
    pub fn mass(&self) -> f64 {
        trapezoid(&self.theta, &self.density)
    }

    pub fn mean(&self) -> f64 {
        let m: Vec<f64> = self.theta.iter().zip(&self.density).map(|(t, p)| t * p).collect();
        trapezoid(&self.theta, &m)
    }

    pub fn sd(&self) -> f64 {
        let mu = self.mean();
        let m: Vec<f64> = self.theta.iter().zip(&self.density).map(|(t, p)| (t - mu).powi(2) * p).collect();
        trapezoid(&self.theta, &m).sqrt()
    }

    /// Linear interpolation of the density, zero outside the grid.
    pub fn density_at(&self, x: f64) -> f64 {
        let t = &self.theta;
        if x < t[0] || x > t[t.len() - 1] {
            return 0.0;
        }
        let i = t.partition_point(|&v| v <= x).clamp(1, t.len() - 1);
        let w = (x - t[i - 1]) / (t[i] - t[i - 1]);
        (1.0 - w) * self.density[i - 1] + w * self.density[i]
    }

    /// `½ ∫ |p - q|` over the grid.
    pub fn total_variation<D: Density1d + ?Sized>(&self, other: &D) -> f64 {
        let diff: Vec<f64> = self.theta.iter().zip(&self.density).map(|(&t, p)| (p - other.pdf(t)).abs()).collect();
        0.5 * trapezoid(&self.theta, &diff)
    }
}

impl Density1d for GridPosterior {
    fn log_pdf(&self, x: f64) -> f64 {
        self.density_at(x).ln()
    }

    fn bulk(&self) -> (f64, f64) {
        (self.theta[0], self.theta[self.theta.len() - 1])
    }
}

pub fn grid_posterior<F: FnMut(f64) -> Result<f64>>(mut f: F, grid: &[f64]) -> Result<GridPosterior> {
    if grid.len() < 3 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid("grid must be strictly increasing with at least 3 points".into()));
    }
    let logs = grid.iter().map(|&t| f(t)).collect::<Result<Vec<f64>>>()?;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Grid("log posterior is not finite anywhere on the grid".into()));
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let edge = w[0].max(w[w.len() - 1]);
    if edge > 1e-4 {
        return Err(Error::Grid(format!(
            "relative density {edge:e} at the grid edge, widen [{}, {}]",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    let z = trapezoid(grid, &w);
    Ok(GridPosterior {
        theta: grid.to_vec(),
        log_unnormalized: logs,
        density: w.iter().map(|v| v / z).collect(),
        log_evidence: max + z.ln(),
    })
}

/// Draws from the Laplace posterior, rejecting non-positive values.
pub fn sample_posterior(post: &LaplacePosterior, count: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::SampleCount("need at least one sample".into()));
    }
    let normal = Normal::new(post.theta_hat, post.sd())
        .map_err(|e| Error::Domain(format!("laplace posterior: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count {
        let v = normal.sample(&mut rng);
        if v > 0.0 {
            out.push(v);
        }
        tries += 1;
        if tries > 1000 * count + 1000 {
            return Err(Error::SampleCount("posterior mass on theta > 0 is negligible".into()));
        }
    }
    Ok(out)
}

/// MAP, Laplace fit and a grid check around it.
#[derive(Debug, Clone, Serialize)]
pub struct ScalarFit {
    pub laplace: LaplacePosterior,
    pub grid: GridPosterior,
    pub total_variation: f64,
}

/// Fit over `[lo, hi]`, then tabulate the posterior over `±half_width` sd.
pub fn fit_scalar<F: FnMut(f64) -> Result<f64>>(mut f: F, lo: f64, hi: f64, half_width: f64, points: usize) -> Result<ScalarFit> {
    let theta_hat = map_estimate(&mut f, lo, hi)?;
    let laplace = laplace_fit(&mut f, theta_hat)?;
    let w = half_width * laplace.sd();
    let a = (theta_hat - w).max(theta_hat * 1e-6);
    let grid = grid_posterior(&mut f, &linspace(a, theta_hat + w, points))?;
    let total_variation = grid.total_variation(&laplace);
    Ok(ScalarFit {
        laplace,
        grid,
        total_variation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_at_one_is_the_normalizer() {
        let p = LognormalPrior::new(0.0, 0.3).unwrap();
        assert!((p.log_pdf(1.0) + LN_SQRT_2PI + 0.3_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn quadratic_peak_is_found() {
        let t = map_estimate(|x| Ok(-(x - 2.5) * (x - 2.5)), 0.1, 7.0).unwrap();
        assert!((t - 2.5).abs() < 1e-8);
    }

    #[test]
    fn prior_only_map_is_lognormal_mode() {
        let p = LognormalPrior::new(0.1, 0.1).unwrap();
        let t = map_estimate(|x| Ok(p.log_pdf(x)), 0.2, 3.0).unwrap();
        assert!((t - p.mode()).abs() < 1e-7 * p.mode());
    }

    #[test]
    fn edge_maximum_is_a_bracket_error() {
        match map_estimate(Ok, 0.0, 1.0) {
            Err(Error::Bracket { scanned, .. }) => assert_eq!(scanned.len(), 64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gaussian_laplace_recovers_sd() {
        let sd = 0.0044;
        let l = laplace_fit(|x| Ok(-0.5 * ((x - 1.0) / sd).powi(2)), 1.0).unwrap();
        assert!((l.sd() - sd).abs() < 1e-6);
    }

    #[test]
    fn convex_point_is_a_curvature_error() {
        assert!(matches!(laplace_fit(|x| Ok(x * x), 1.0), Err(Error::Curvature(_))));
    }

    #[test]
    fn grid_matches_gaussian() {
        let g = LaplacePosterior {
            theta_hat: 1.0,
            variance: 0.01,
            log_norm_const: 0.0,
        };
        let grid = grid_posterior(|x| Ok(g.log_pdf(x) + 17.0), &linspace(0.0, 2.0, 2001)).unwrap();
        assert!((grid.mass() - 1.0).abs() < 1e-10);
        assert!(grid.total_variation(&g) < 1e-6);
    }

    #[test]
    fn grid_with_edge_mass_fails() {
        assert!(matches!(grid_posterior(|x| Ok(-x), &linspace(0.0, 1.0, 11)), Err(Error::Grid(_))));
    }

    #[test]
    fn prior_only_grid_is_the_prior() {
        let p = LognormalPrior::new(0.1, 0.1).unwrap();
        let xs = linspace(0.3, 3.0, 20001);
        let g = grid_posterior(|x| Ok(p.log_pdf(x)), &xs).unwrap();
        for (x, d) in xs.iter().zip(&g.density).step_by(97) {
            assert!((d - p.pdf(*x)).abs() < 1e-8);
        }
    }

    #[test]
    fn samples_are_seeded() {
        let l = LaplacePosterior {
            theta_hat: 1.0,
            variance: 0.04,
            log_norm_const: 0.0,
        };
        let a = sample_posterior(&l, 100, 9).unwrap();
        assert_eq!(a, sample_posterior(&l, 100, 9).unwrap());
        assert!(a.iter().all(|&v| v > 0.0));
    }
}
