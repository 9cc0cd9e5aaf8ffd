//! Information divergence of a realized dataset and expected information
//! gain over datasets simulated from a fixed generating process.
//!
//! Thermocouples `TC1..TC7` sit on mesh nodes `0..=6`; `TC1` and `TC7` are the
//! boundary sensors and are always kept.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundaryPrior, BoundarySeries, Discretization, InitialCondition, ObservationSet};
use crate::numerics::integrate;
use crate::posterior_scalar::{
    grid_posterior, laplace_fit, map_estimate_with, BoundaryTreatment, Density1d, GridPosterior,
    LaplacePosterior, LognormalPrior, ScalarPosterior,
};
use crate::numerics::linspace;
use crate::synth_data::add_noise;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupKind {
    TimeWindows,
    SensorSubset,
    Combined,
}

/// A subset of interior readings: time windows `(a, b]` and interior sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentalSetup {
    pub kind: SetupKind,
    pub windows: Vec<(f64, f64)>,
    /// Thermocouple labels, `TC2` is `2`.
    pub sensors: Vec<usize>,
    pub label: String,
}

const THIRDS: [(f64, f64); 3] = [(0.0, 1.0 / 3.0), (1.0 / 3.0, 2.0 / 3.0), (2.0 / 3.0, 1.0)];

impl ExperimentalSetup {
    pub fn full(nodes: usize, t_end: f64) -> Self {
        Self {
            kind: SetupKind::Combined,
            windows: vec![(0.0, t_end)],
            sensors: (2..nodes).collect(),
            label: "full".into(),
        }
    }

    /// Three equal time windows with every interior sensor.
    pub fn es1() -> Vec<Self> {
        THIRDS
            .iter()
            .enumerate()
            .map(|(i, &w)| Self {
                kind: SetupKind::TimeWindows,
                windows: vec![w],
                sensors: (2..=6).collect(),
                label: format!("window{}", i + 1),
            })
            .collect()
    }

    /// Each interior sensor alone over the whole horizon.
    pub fn es2() -> Vec<Self> {
        (2..=6)
            .map(|tc| Self {
                kind: SetupKind::SensorSubset,
                windows: vec![(0.0, 1.0)],
                sensors: vec![tc],
                label: format!("TC{tc}"),
            })
            .collect()
    }

    /// Every window crossed with every interior sensor, window-major.
    pub fn es3() -> Vec<Self> {
        let mut out = Vec::with_capacity(15);
        for (i, &w) in THIRDS.iter().enumerate() {
            for tc in 2..=6 {
                out.push(Self {
                    kind: SetupKind::Combined,
                    windows: vec![w],
                    sensors: vec![tc],
                    label: format!("window{}:TC{tc}", i + 1),
                });
            }
        }
        out
    }

    pub fn validate(&self, nodes: usize, t_end: f64) -> Result<()> {
        if self.windows.is_empty() || self.sensors.is_empty() {
            return Err(Error::Setup(format!("setup '{}' selects no readings", self.label)));
        }
        let mut w = self.windows.clone();
        w.sort_by(|a, b| a.0.total_cmp(&b.0));
        let tol = 1e-12 * t_end.max(1.0);
        for (a, b) in &w {
            if !(a < b) || *a < -tol || *b > t_end + tol {
                return Err(Error::Setup(format!("window ({a}, {b}] is empty or outside [0, {t_end}]")));
            }
        }
        if w.windows(2).any(|p| p[1].0 < p[0].1 - tol) {
            return Err(Error::Setup("time windows overlap".into()));
        }
        for &tc in &self.sensors {
            if tc < 2 || tc >= nodes {
                return Err(Error::Setup(format!("TC{tc} is not an interior sensor")));
            }
        }
        Ok(())
    }

    fn covers_time(&self, t: f64, t_end: f64) -> bool {
        let tol = 1e-9 * t_end;
        self.windows.iter().any(|&(a, b)| t > a + tol && t <= b + tol)
    }
}

/// Mask interior readings to the setup; boundary rows stay in full.
pub fn restrict_observations(obs: &ObservationSet, setup: &ExperimentalSetup, t_end: f64) -> Result<ObservationSet> {
    setup.validate(obs.nodes(), t_end)?;
    let dt = t_end / obs.steps() as f64;
    let mask = DMatrix::from_fn(obs.interior_len(), obs.steps(), |j, n| {
        setup.sensors.contains(&(j + 2)) && setup.covers_time(dt * (n + 1) as f64, t_end) && obs.is_observed(j, n)
    });
    if !mask.iter().any(|&m| m) {
        return Err(Error::Setup(format!("setup '{}' retains no interior readings", setup.label)));
    }
    obs.clone().with_mask(mask)
}

/// `∫ p log(p / q)` over `[lo, hi]` by adaptive quadrature.
pub fn kl_divergence<P: Density1d + ?Sized, Q: Density1d + ?Sized>(p: &P, q: &Q, lo: f64, hi: f64) -> Result<f64> {
    let mut bad = false;
    let f = |x: f64| {
        let lp = p.log_pdf(x);
        if lp == f64::NEG_INFINITY {
            return 0.0;
        }
        let v = lp.exp() * (lp - q.log_pdf(x));
        if !v.is_finite() {
            bad = true;
            return 0.0;
        }
        v
    };
    let r = integrate(f, lo, hi, 1e-13, 1e-11)?;
    if bad {
        return Err(Error::Quadrature("non-finite integrand in divergence".into()));
    }
    Ok(r.value)
}

/// `D_KL(posterior ‖ prior)` over `θ > 0` for a Laplace posterior.
pub fn information_divergence(prior: &LognormalPrior, post: &LaplacePosterior) -> Result<f64> {
    let (lo, hi) = post.bulk();
    let kl = kl_divergence(post, prior, lo.max(post.theta_hat * 1e-9), hi)?;
    Ok(kl.max(0.0))
}

/// `D_KL(posterior ‖ prior)` for a tabulated posterior, trapezoid on its grid.
pub fn information_divergence_grid(prior: &LognormalPrior, post: &GridPosterior) -> Result<f64> {
    let vals: Vec<f64> = post
        .theta
        .iter()
        .zip(&post.density)
        .map(|(&t, &p)| if p > 0.0 { p * (p.ln() - prior.log_pdf(t)) } else { 0.0 })
        .collect();
    let kl = crate::numerics::trapezoid(&post.theta, &vals);
    if !kl.is_finite() {
        return Err(Error::Quadrature("non-finite divergence on grid".into()));
    }
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodMode {
    KnownBc,
    Marginal,
}

/// Settings for fitting one dataset inside the design loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSettings {
    pub mode: LikelihoodMode,
    pub prior: LognormalPrior,
    /// Likelihood noise sd.
    pub noise_sd: f64,
    pub boundary_sd: f64,
    pub spline_intervals: usize,
    pub bracket: (f64, f64),
    pub scan_points: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            mode: LikelihoodMode::Marginal,
            prior: LognormalPrior { nu: 0.1, tau: 0.1 },
            noise_sd: 0.5,
            boundary_sd: 0.5,
            spline_intervals: 8,
            bracket: (0.3, 2.0),
            scan_points: 35,
        }
    }
}

/// Posterior of one dataset under one setup.
#[derive(Debug, Clone)]
pub struct SetupFit {
    pub laplace: LaplacePosterior,
    pub grid: Option<GridPosterior>,
}

/// Fit the Laplace posterior (and optionally a grid check) for a restricted dataset.
pub fn fit_setup(
    obs: &ObservationSet,
    disc: &Discretization,
    known: Option<&BoundarySeries>,
    settings: &FitSettings,
    with_grid: bool,
) -> Result<SetupFit> {
    let treatment = match settings.mode {
        LikelihoodMode::Marginal => BoundaryTreatment::Marginal(BoundaryPrior::from_spline_fit(
            obs,
            &disc.grid,
            settings.boundary_sd,
            settings.spline_intervals,
        )?),
        LikelihoodMode::KnownBc => BoundaryTreatment::Known(
            known
                .cloned()
                .ok_or_else(|| Error::Domain("known-bc mode needs the boundary series".into()))?,
        ),
    };
    let post = ScalarPosterior {
        obs,
        disc,
        boundary: &treatment,
        prior: settings.prior,
    };
    let f = |x: f64| post.log_posterior(x);
    let (lo, hi) = settings.bracket;
    let theta_hat = map_estimate_with(f, lo, hi, settings.scan_points)?;
    let laplace = laplace_fit(f, theta_hat)?;
    let grid = if with_grid {
        let w = 10.0 * laplace.sd();
        let a = (theta_hat - w).max(theta_hat * 1e-3);
        Some(grid_posterior(f, &linspace(a, theta_hat + w, 401))?)
    } else {
        None
    };
    Ok(SetupFit { laplace, grid })
}

/// The dataset-generating process: a noise-free reading table plus noise.
#[derive(Debug, Clone)]
pub struct DatasetGenerator {
    pub clean: DMatrix<f64>,
    pub initial: InitialCondition,
    pub noise_sd: f64,
    pub disc: Discretization,
}

impl DatasetGenerator {
    /// Replication `r` of the dataset, with the likelihood noise level `sigma`.
    pub fn draw(&self, seed: u64, sigma: f64) -> Result<ObservationSet> {
        let noisy = add_noise(&self.clean, self.noise_sd, seed)?;
        ObservationSet::new(noisy, sigma, self.initial.clone())
    }

    /// Noise-free boundary rows, used as the known series.
    pub fn true_boundary(&self) -> Result<BoundarySeries> {
        let last = self.clean.nrows() - 1;
        BoundarySeries::new(
            self.clean.row(0).iter().copied().collect(),
            self.clean.row(last).iter().copied().collect(),
            self.initial.left(),
            self.initial.right(),
        )
    }
}

/// Seed for replication `r`, shared by every setup.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    let mut z = master ^ (r as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
    pub dropped: usize,
    /// Whether divergences came from the grid posterior.
    pub grid_fallback: bool,
}

fn divergence(fit: &SetupFit, prior: &LognormalPrior, use_grid: bool) -> Result<f64> {
    match (&fit.grid, use_grid) {
        (Some(g), true) => information_divergence_grid(prior, g),
        _ => information_divergence(prior, &fit.laplace),
    }
}

/// Divergences per replication (rows) and setup (columns); `None` when the
/// replication failed to bracket a maximum.
pub fn divergence_table(
    setups: &[ExperimentalSetup],
    generator: &DatasetGenerator,
    settings: &FitSettings,
    replications: usize,
    seed: u64,
    use_grid: &[bool],
) -> Result<Vec<Vec<Option<f64>>>> {
    let known = generator.true_boundary()?;
    let t_end = generator.disc.grid.t_end();
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let obs = generator.draw(replication_seed(seed, r), settings.noise_sd)?;
            setups
                .iter()
                .zip(use_grid)
                .map(|(s, &g)| {
                    let sub = restrict_observations(&obs, s, t_end)?;
                    match fit_setup(&sub, &generator.disc, Some(&known), settings, g) {
                        Ok(fit) => divergence(&fit, &settings.prior, g).map(Some),
                        Err(Error::Bracket { .. } | Error::Curvature(_) | Error::Grid(_)) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        })
        .collect()
}

/// Expected information gain for each setup under common random numbers.
pub fn eig_grid(
    setups: &[ExperimentalSetup],
    generator: &DatasetGenerator,
    settings: &FitSettings,
    replications: usize,
    seed: u64,
) -> Result<Vec<EigEstimate>> {
    if setups.is_empty() {
        return Err(Error::Setup("no setups given".into()));
    }
    if replications < 2 {
        return Err(Error::SampleCount(format!("need at least 2 replications, got {replications}")));
    }
    let known = generator.true_boundary()?;
    let t_end = generator.disc.grid.t_end();
    for s in setups {
        s.validate(generator.clean.nrows(), t_end)?;
    }
    // Spot check on the first replication decides Laplace or grid per setup.
    let spot = generator.draw(replication_seed(seed, 0), settings.noise_sd)?;
    let use_grid: Vec<bool> = setups
        .par_iter()
        .map(|s| {
            let sub = restrict_observations(&spot, s, t_end)?;
            Ok(match fit_setup(&sub, &generator.disc, Some(&known), settings, true) {
                Ok(fit) => fit.grid.as_ref().is_some_and(|g| g.total_variation(&fit.laplace) > 0.05),
                Err(_) => false,
            })
        })
        .collect::<Result<_>>()?;
    let table = divergence_table(setups, generator, settings, replications, seed, &use_grid)?;
    (0..setups.len())
        .map(|c| {
            let vals: Vec<f64> = table.iter().filter_map(|row| row[c]).collect();
            let dropped = replications - vals.len();
            if dropped * 5 > replications || vals.len() < 2 {
                return Err(Error::Eig { dropped, replications });
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Ok(EigEstimate {
                mean,
                std_error: (var / n).sqrt(),
                replications: vals.len(),
                dropped,
                grid_fallback: use_grid[c],
            })
        })
        .collect()
}

pub fn expected_information_gain(
    setup: &ExperimentalSetup,
    generator: &DatasetGenerator,
    settings: &FitSettings,
    replications: usize,
    seed: u64,
) -> Result<EigEstimate> {
    Ok(eig_grid(std::slice::from_ref(setup), generator, settings, replications, seed)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitialCondition;

    fn obs() -> ObservationSet {
        ObservationSet::new(DMatrix::from_element(7, 60, 1.0), 0.5, InitialCondition::constant(1.0, 7)).unwrap()
    }

    #[test]
    fn full_setup_is_identity() {
        let o = obs();
        let r = restrict_observations(&o, &ExperimentalSetup::full(7, 1.0), 1.0).unwrap();
        assert_eq!(r, o);
    }

    #[test]
    fn windows_hold_twenty_columns() {
        for s in ExperimentalSetup::es1() {
            assert_eq!(restrict_observations(&obs(), &s, 1.0).unwrap().observed_interior_count(), 5 * 20);
        }
    }

    #[test]
    fn single_sensor_keeps_one_row() {
        let s = &ExperimentalSetup::es2()[2];
        let r = restrict_observations(&obs(), s, 1.0).unwrap();
        assert_eq!(r.observed_interior_count(), 60);
        assert!((0..60).all(|n| r.is_observed(2, n)));
    }

    #[test]
    fn empty_setup_is_rejected() {
        let s = ExperimentalSetup {
            kind: SetupKind::Combined,
            windows: vec![],
            sensors: vec![],
            label: "empty".into(),
        };
        assert!(matches!(restrict_observations(&obs(), &s, 1.0), Err(Error::Setup(_))));
    }

    #[test]
    fn divergence_of_prior_from_itself_is_zero() {
        let p = LognormalPrior::new(0.1, 0.1).unwrap();
        let (lo, hi) = p.bulk();
        assert!(kl_divergence(&p, &p, lo, hi).unwrap().abs() < 1e-10);
    }

    #[test]
    fn gaussian_divergence_is_closed_form() {
        let a = LaplacePosterior {
            theta_hat: 1.0,
            variance: 0.04,
            log_norm_const: 0.0,
        };
        let b = LaplacePosterior { theta_hat: 1.3, ..a };
        let kl = kl_divergence(&a, &b, -2.0, 4.0).unwrap();
        assert!((kl - 0.09 / 0.08).abs() < 1e-8);
    }

    #[test]
    fn es3_has_fifteen_setups() {
        assert_eq!(ExperimentalSetup::es3().len(), 15);
    }
}
