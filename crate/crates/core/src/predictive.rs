//! k-step-ahead predictive densities of interior readings.
//!
//! The state at `t_n` is the forward solve from the known initial condition
//! with each boundary value replaced by its posterior mean given its own
//! reading, `(μ/σp² + Y/σ²) / (1/σp² + 1/σ²)`. From there the solve continues
//! with the supplied future boundary values, and the reading density is a
//! Gaussian of variance `σ²` around the result, averaged over posterior
//! draws of `θ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{fit_setup, FitSettings};
use crate::error::{Error, Result};
use crate::forward_fem::{assemble, solve_full};
use crate::model::{BoundaryPrior, BoundarySeries, CoefficientField, Discretization, ObservationSet};
use crate::numerics::{cumulative_trapezoid, linspace, trapezoid};
use crate::posterior_scalar::{sample_posterior, LaplacePosterior};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveQuery {
    /// Readings `t_1..t_n` are used.
    pub history_steps: usize,
    pub steps_ahead: usize,
    pub future_left: Vec<f64>,
    pub future_right: Vec<f64>,
    /// Thermocouple labels of interior sensors.
    pub sensors: Vec<usize>,
}

impl PredictiveQuery {
    fn validate(&self, obs: &ObservationSet, capacity: usize) -> Result<()> {
        if self.steps_ahead == 0 || self.history_steps == 0 {
            return Err(Error::Domain("history and horizon must both be at least one step".into()));
        }
        if self.history_steps + self.steps_ahead > capacity || self.history_steps > obs.steps() {
            return Err(Error::Domain(format!(
                "n + k = {} exceeds the {capacity}-step grid",
                self.history_steps + self.steps_ahead
            )));
        }
        if self.future_left.len() != self.steps_ahead || self.future_right.len() != self.steps_ahead {
            return Err(Error::Dimension("need one future boundary pair per step ahead".into()));
        }
        if self.future_left.iter().chain(&self.future_right).any(|v| !v.is_finite()) {
            return Err(Error::Domain("future boundary values must be finite".into()));
        }
        if self.sensors.is_empty() {
            return Err(Error::Domain("no target sensors".into()));
        }
        if self.sensors.iter().any(|&s| s < 2 || s >= obs.nodes()) {
            return Err(Error::Domain("target sensors must be interior".into()));
        }
        Ok(())
    }
}

/// Precision-weighted boundary estimates for `t_1..t_n`.
pub fn boundary_estimates(obs: &ObservationSet, prior: &BoundaryPrior) -> Result<(Vec<f64>, Vec<f64>)> {
    if prior.steps() != obs.steps() {
        return Err(Error::Dimension("prior and observations differ in length".into()));
    }
    let wp = 1.0 / (prior.sd * prior.sd);
    let wo = 1.0 / (obs.noise_sd() * obs.noise_sd());
    let avg = |m: &[f64], y: Vec<f64>| -> Vec<f64> { m.iter().zip(y).map(|(m, y)| (wp * m + wo * y) / (wp + wo)).collect() };
    Ok((avg(&prior.mean_left, obs.left_row()), avg(&prior.mean_right, obs.right_row())))
}

/// Interior temperatures at `t_{n+1}..t_{n+k}` for one `θ`.
pub fn conditional_path(
    theta: f64,
    obs: &ObservationSet,
    disc: &Discretization,
    estimates: &(Vec<f64>, Vec<f64>),
    query: &PredictiveQuery,
) -> Result<Vec<Vec<f64>>> {
    let n = query.history_steps;
    let mut left = estimates.0[..n].to_vec();
    let mut right = estimates.1[..n].to_vec();
    left.extend_from_slice(&query.future_left);
    right.extend_from_slice(&query.future_right);
    let g = obs.initial();
    let series = BoundarySeries::new(left, right, g.left(), g.right())?;
    let sys = assemble(&disc.mesh, &CoefficientField::constant(theta, disc.mesh.elements()), disc.grid.dt(), disc.lumped_mass)?;
    let hist = solve_full(&sys, g, &series)?;
    Ok((n..n + query.steps_ahead).map(|c| hist.column(c).iter().copied().collect()).collect())
}

/// Density tables on per-sensor value grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveTable {
    pub sensors: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    pub density: Vec<Vec<f64>>,
    /// Conditional means per sensor, one per posterior draw.
    pub conditional_means: Vec<Vec<f64>>,
    pub noise_sd: f64,
}

/// Mixture density `1/M Σ N(y; m_i, σ²)` for the reading at `t_{n+k}`.
#[allow(clippy::too_many_arguments)]
pub fn predictive_density(
    query: &PredictiveQuery,
    obs: &ObservationSet,
    disc: &Discretization,
    settings: &FitSettings,
    post: &LaplacePosterior,
    samples: usize,
    seed: u64,
    grid_points: usize,
) -> Result<PredictiveTable> {
    if samples < 10 {
        return Err(Error::SampleCount(format!("need at least 10 posterior draws, got {samples}")));
    }
    query.validate(obs, disc.grid.steps())?;
    let history = obs.truncated(query.history_steps)?;
    let prior = BoundaryPrior::from_spline_fit(
        &history,
        &disc.grid.truncated(query.history_steps),
        settings.boundary_sd,
        settings.spline_intervals,
    )?;
    let estimates = boundary_estimates(&history, &prior)?;
    let thetas = sample_posterior(post, samples, seed)?;
    let paths = thetas
        .par_iter()
        .map(|&t| conditional_path(t, &history, disc, &estimates, query))
        .collect::<Result<Vec<_>>>()?;
    let last = query.steps_ahead - 1;
    let sigma = obs.noise_sd();
    let mut table = PredictiveTable {
        sensors: query.sensors.clone(),
        values: Vec::new(),
        density: Vec::new(),
        conditional_means: Vec::new(),
        noise_sd: sigma,
    };
    for &tc in &query.sensors {
        let means: Vec<f64> = paths.iter().map(|p| p[last][tc - 2]).collect();
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min) - 9.0 * sigma;
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 9.0 * sigma;
        let ys = linspace(lo, hi, grid_points.max(64));
        let dens = ys
            .iter()
            .map(|&y| {
                means.iter().map(|m| {
                    let z = (y - m) / sigma;
                    (-0.5 * z * z).exp()
                }).sum::<f64>() * INV_SQRT_2PI / (sigma * means.len() as f64)
            })
            .collect();
        table.values.push(ys);
        table.density.push(dens);
        table.conditional_means.push(means);
    }
    Ok(table)
}

/// Fit the Laplace posterior on the history `t_1..t_n`.
pub fn fit_history(obs: &ObservationSet, disc: &Discretization, settings: &FitSettings, n: usize) -> Result<LaplacePosterior> {
    let history = obs.truncated(n)?;
    Ok(fit_setup(&history, &disc.truncated(n), None, settings, false)?.laplace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub sensor: usize,
    pub mean: f64,
    pub sd: f64,
    pub lower95: f64,
    pub upper95: f64,
    pub mass: f64,
}

fn quantile(xs: &[f64], cdf: &[f64], p: f64) -> f64 {
    let total = cdf[cdf.len() - 1];
    let target = p * total;
    let i = cdf.partition_point(|&c| c < target).clamp(1, cdf.len() - 1);
    let span = cdf[i] - cdf[i - 1];
    if span <= 0.0 {
        return xs[i];
    }
    xs[i - 1] + (target - cdf[i - 1]) / span * (xs[i] - xs[i - 1])
}

/// Moments and a central 95% interval of one tabulated density.
pub fn summarize(values: &[f64], density: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mass = trapezoid(values, density);
    let m1: Vec<f64> = values.iter().zip(density).map(|(y, p)| y * p).collect();
    let mean = trapezoid(values, &m1) / mass;
    let m2: Vec<f64> = values.iter().zip(density).map(|(y, p)| (y - mean).powi(2) * p).collect();
    let sd = (trapezoid(values, &m2) / mass).sqrt();
    let cdf = cumulative_trapezoid(values, density);
    (mean, sd, quantile(values, &cdf, 0.025), quantile(values, &cdf, 0.975), mass)
}

pub fn predictive_summary(table: &PredictiveTable) -> Vec<PredictiveSummary> {
    table
        .sensors
        .iter()
        .zip(table.values.iter().zip(&table.density))
        .map(|(&sensor, (v, d))| {
            let (mean, sd, lower95, upper95, mass) = summarize(v, d);
            PredictiveSummary {
                sensor,
                mean,
                sd,
                lower95,
                upper95,
                mass,
            }
        })
        .collect()
}
