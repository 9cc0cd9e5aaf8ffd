//! Command-line driver: run configuration, file formats and the five
//! subcommands `generate | fit | design | predict | field-fit`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{
    eig_grid, fit_setup, information_divergence, replication_seed, restrict_observations, DatasetGenerator,
    ExperimentalSetup, FitSettings, LikelihoodMode,
};
use crate::error::{Error, Result};
use crate::field_hyper::{hyper_log_posterior_grid, hyper_laplace, HyperPrior};
use crate::model::{BoundaryPrior, BoundarySeries, Discretization, InitialCondition, ObservationSet, SpatialMesh, TimeGrid};
use crate::numerics::linspace;
use crate::posterior_scalar::{fit_scalar, BoundaryTreatment, LognormalPrior, ScalarPosterior};
use crate::predictive::{fit_history, predictive_density, predictive_summary, PredictiveQuery, PredictiveSummary};
use crate::synth_data::{make_dataset, make_dataset_b, reference_solve, sample_reference, DatasetSpec, FieldHyper, RobinProblem};

pub const SEED_ENV: &str = "PARAPOST_SEED";

#[derive(Debug, Parser)]
#[command(name = "parapost", version, about = "Posterior inference for a 1D heat-equation diffusivity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Observation CSV.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Synthesize an observation table and its truth sidecar.
    Generate,
    /// Scalar posterior of the diffusivity.
    Fit,
    /// Expected information gain of experimental setups.
    Design,
    /// Predictive densities of future interior readings.
    Predict,
    /// Hyperposterior of a lognormal diffusivity field.
    FieldFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    KnownBc,
    Marginal,
}

impl From<ModeArg> for LikelihoodMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::KnownBc => LikelihoodMode::KnownBc,
            ModeArg::Marginal => LikelihoodMode::Marginal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub dataset: DatasetKind,
    /// Mesh elements; sensors sit on the `elements + 1` nodes.
    pub elements: usize,
    pub steps: usize,
    pub t_end: f64,
    pub x_left: f64,
    pub x_right: f64,
    /// Constant diffusivity of dataset A.
    pub theta_ref: f64,
    pub h_over_kappa: f64,
    pub t_out: f64,
    pub t0: f64,
    pub refinement: usize,
    pub lumped_mass: bool,
    /// Generating hyperparameters of dataset B.
    pub field: FieldHyper,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let p = RobinProblem::dataset_a();
        Self {
            dataset: DatasetKind::A,
            elements: p.theta.len(),
            steps: 60,
            t_end: p.t_end,
            x_left: p.x_left,
            x_right: p.x_right,
            theta_ref: 1.0,
            h_over_kappa: p.h_over_kappa,
            t_out: p.t_out,
            t0: p.t0,
            refinement: p.refinement,
            lumped_mass: false,
            field: FieldHyper::dataset_b(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Likelihood noise sd; `σ_d` when null.
    pub sigma: Option<f64>,
    /// Boundary prior sd.
    pub sigma_p: f64,
    /// Generating noise sd.
    pub sigma_d: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma: None,
            sigma_p: 0.5,
            sigma_d: 0.56,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub nu: f64,
    pub tau: f64,
    /// Field hyperprior; the dataset's default when null.
    pub hyper: Option<HyperPrior>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            nu: 0.1,
            tau: 0.1,
            hyper: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub mode: LikelihoodMode,
    pub bracket: [f64; 2],
    pub scan_points: usize,
    pub spline_intervals: usize,
    /// Range and resolution of the emitted log-posterior curve.
    pub curve: GridAxis,
    /// Grid posterior half-width in Laplace sd.
    pub grid_half_width: f64,
    pub grid_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            mode: LikelihoodMode::Marginal,
            bracket: [0.3, 2.0],
            scan_points: 64,
            spline_intervals: 8,
            curve: GridAxis {
                lo: 0.9,
                hi: 1.1,
                points: 201,
            },
            grid_half_width: 10.0,
            grid_points: 401,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    /// Any of `full`, `es1`, `es2`, `es3`.
    pub setups: Vec<String>,
    pub replications: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            setups: vec!["es1".into(), "es2".into(), "es3".into()],
            replications: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub history_steps: usize,
    pub steps_ahead: usize,
    pub sensors: Vec<usize>,
    pub samples: usize,
    pub grid_points: usize,
    /// Future boundary values; the observed boundary readings when null.
    pub future_left: Option<Vec<f64>>,
    pub future_right: Option<Vec<f64>>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            history_steps: 30,
            steps_ahead: 1,
            sensors: vec![2, 3, 4],
            samples: 200,
            grid_points: 801,
            future_left: None,
            future_right: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.lo, self.hi, self.points)
    }

    /// Centres of `cells` equal cells tiling `[a, b]`.
    pub fn cell_centred(a: f64, b: f64, cells: usize) -> Self {
        let h = (b - a) / cells as f64;
        Self {
            lo: a + 0.5 * h,
            hi: b - 0.5 * h,
            points: cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub mu_grid: Option<GridAxis>,
    pub eta_grid: Option<GridAxis>,
    pub m_ell: usize,
    pub m_z: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            mu_grid: None,
            eta_grid: None,
            m_ell: 32,
            m_z: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RngConfig {
    pub seed: u64,
}

impl Default for RngConfig {
    fn default() -> Self {
        Self { seed: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub noise: NoiseConfig,
    pub prior: PriorConfig,
    pub fit: FitConfig,
    pub design: DesignConfig,
    pub predict: PredictConfig,
    pub field: FieldConfig,
    pub rng: RngConfig,
    pub io: IoConfig,
}

/// Cells per axis of the default hyperparameter grid.
pub const HYPER_GRID_CELLS: usize = 41;

/// `μ` over `loc ± 3 scale`, `η` over `(0, 2 scale]`, both cell-centred.
pub fn default_hyper_axes(hp: &HyperPrior) -> (GridAxis, GridAxis) {
    (
        GridAxis::cell_centred(hp.mu_loc - 3.0 * hp.mu_scale, hp.mu_loc + 3.0 * hp.mu_scale, HYPER_GRID_CELLS),
        GridAxis::cell_centred(0.0, 2.0 * hp.eta_scale, HYPER_GRID_CELLS),
    )
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    pub fn sigma(&self) -> f64 {
        self.noise.sigma.unwrap_or(self.noise.sigma_d)
    }

    pub fn hyper_prior(&self) -> HyperPrior {
        self.prior.hyper.unwrap_or(match self.problem.dataset {
            DatasetKind::A => HyperPrior::dataset_a(),
            DatasetKind::B => HyperPrior::dataset_b(),
        })
    }

    /// Materialize every optional default so the echo reproduces the run.
    pub fn resolved(mut self) -> Self {
        self.noise.sigma = Some(self.sigma());
        let hp = self.hyper_prior();
        self.prior.hyper = Some(hp);
        let (m, e) = default_hyper_axes(&hp);
        self.field.mu_grid.get_or_insert(m);
        self.field.eta_grid.get_or_insert(e);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if p.elements < 2 || p.steps == 0 || p.refinement < 1 {
            return bad("problem needs elements >= 2, steps >= 1 and refinement >= 1");
        }
        if !(p.t_end > 0.0) || !(p.x_right > p.x_left) || !(p.theta_ref > 0.0) || !(p.h_over_kappa > 0.0) {
            return bad("problem needs t_end > 0, x_right > x_left, theta_ref > 0 and h_over_kappa > 0");
        }
        let n = &self.noise;
        if !(self.sigma() > 0.0) || !(n.sigma_p > 0.0) || !(n.sigma_d > 0.0) {
            return bad("noise levels must be positive");
        }
        if !(self.prior.tau > 0.0) || !self.prior.nu.is_finite() {
            return bad("prior needs finite nu and tau > 0");
        }
        self.hyper_prior().validate().map_err(|e| Error::Config(e.to_string()))?;
        let f = &self.fit;
        if !(f.bracket[0] > 0.0 && f.bracket[1] > f.bracket[0]) || f.scan_points < 3 || f.spline_intervals == 0 {
            return bad("fit needs 0 < bracket[0] < bracket[1], scan_points >= 3 and spline_intervals >= 1");
        }
        if !(f.curve.lo > 0.0 && f.curve.hi > f.curve.lo) || f.curve.points < 2 || f.grid_points < 3 || !(f.grid_half_width > 0.0) {
            return bad("fit curve needs 0 < lo < hi with at least 2 points");
        }
        if self.design.replications == 0 || self.design.setups.is_empty() {
            return bad("design needs at least one setup and one replication");
        }
        for s in &self.design.setups {
            setup_family(s, p.elements + 1, p.t_end)?;
        }
        let q = &self.predict;
        if q.sensors.is_empty() {
            return bad("predict.sensors is empty");
        }
        if q.sensors.iter().any(|&s| s < 2 || s > p.elements) {
            return bad("predict.sensors must be interior thermocouple labels");
        }
        if q.history_steps == 0 || q.steps_ahead == 0 || q.history_steps + q.steps_ahead > p.steps || q.samples < 10 {
            return bad("predict needs 1 <= history_steps, 1 <= steps_ahead, a horizon within the grid and samples >= 10");
        }
        let fc = &self.field;
        if fc.m_ell < 8 || fc.m_z < 8 {
            return bad("field budgets m_ell and m_z must be at least 8");
        }
        for a in fc.mu_grid.iter().chain(&fc.eta_grid) {
            if a.points < 3 || !(a.hi > a.lo) {
                return bad("hyperparameter grids need lo < hi and at least 3 points");
            }
        }
        if fc.eta_grid.is_some_and(|a| a.lo < 0.0) {
            return bad("eta grid must be non-negative");
        }
        Ok(())
    }

    pub fn sensor_positions(&self) -> Vec<f64> {
        let p = &self.problem;
        linspace(p.x_left, p.x_right, p.elements + 1)
    }

    pub fn discretization(&self) -> Result<Discretization> {
        let p = &self.problem;
        Ok(Discretization::new(
            SpatialMesh::uniform(p.x_left, p.x_right, p.elements)?,
            TimeGrid::new(p.t_end, p.steps)?,
            p.lumped_mass,
        ))
    }

    pub fn robin_problem(&self) -> RobinProblem {
        let p = &self.problem;
        RobinProblem {
            theta: vec![p.theta_ref; p.elements],
            x_left: p.x_left,
            x_right: p.x_right,
            t_end: p.t_end,
            h_over_kappa: p.h_over_kappa,
            t_out: p.t_out,
            t0: p.t0,
            refinement: p.refinement,
        }
    }

    pub fn dataset_spec(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            sensors: self.sensor_positions(),
            steps: self.problem.steps,
            noise_sd: self.noise.sigma_d,
            seed,
        }
    }

    pub fn fit_settings(&self, mode: LikelihoodMode) -> FitSettings {
        FitSettings {
            mode,
            prior: LognormalPrior {
                nu: self.prior.nu,
                tau: self.prior.tau,
            },
            noise_sd: self.sigma(),
            boundary_sd: self.noise.sigma_p,
            spline_intervals: self.fit.spline_intervals,
            bracket: (self.fit.bracket[0], self.fit.bracket[1]),
            scan_points: self.fit.scan_points,
        }
    }

    pub fn initial(&self) -> InitialCondition {
        InitialCondition::constant(self.problem.t0, self.problem.elements + 1)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Seed used for the field draw of dataset B.
pub fn field_seed(master: u64) -> u64 {
    replication_seed(master, 0xF1E1D)
}

fn setup_family(name: &str, nodes: usize, t_end: f64) -> Result<Vec<ExperimentalSetup>> {
    let setups = match name {
        "full" => vec![ExperimentalSetup::full(nodes, t_end)],
        "es1" => ExperimentalSetup::es1(),
        "es2" => ExperimentalSetup::es2(),
        "es3" => ExperimentalSetup::es3(),
        other => return Err(Error::Config(format!("unknown setup family `{other}`"))),
    };
    for s in &setups {
        s.validate(nodes, t_end).map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(setups)
}

/// Fixed-point rendering with ten significant digits.
pub fn sig10(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0.000000000".into();
    }
    let mag = v.abs().log10().floor() as i64;
    let decimals = (9 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // rounding can carry into an extra digit
    let rounded: f64 = s.parse().unwrap_or(v);
    if decimals > 0 && rounded.abs().log10().floor() as i64 > mag {
        return format!("{v:.prec$}", prec = decimals - 1);
    }
    s
}

/// Scientific rendering for derived tables.
pub fn sci(v: f64) -> String {
    format!("{v:.9e}")
}

/// `t,TC1..TCk` with one row per observation time.
pub fn observations_to_csv(obs: &ObservationSet, grid: &TimeGrid) -> String {
    let mut out = String::from("t");
    for k in 1..=obs.nodes() {
        let _ = write!(out, ",TC{k}");
    }
    out.push('\n');
    for n in 0..obs.steps() {
        out.push_str(&sig10(grid.time(n + 1)));
        for i in 0..obs.nodes() {
            out.push(',');
            out.push_str(&sig10(obs.readings()[(i, n)]));
        }
        out.push('\n');
    }
    out
}

/// Parse the observation CSV into a `sensors × steps` table and its times.
pub fn parse_observations(text: &str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Format("empty observation file".into()))?.split(',').map(str::trim).collect();
    if header.len() < 3 || header[0] != "t" || header[1..].iter().enumerate().any(|(k, h)| *h != format!("TC{}", k + 1)) {
        return Err(Error::Format(format!("header must be t,TC1,...; got {}", header.join(","))));
    }
    let cols = header.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols {
            return Err(Error::Format(format!("row {} has {} fields, expected {cols}", row + 2, fields.len())));
        }
        let parsed = fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::Format(format!("row {}: `{f}`: {e}", row + 2))))
            .collect::<Result<Vec<f64>>>()?;
        if parsed.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("row {} has a non-finite value", row + 2)));
        }
        times.push(parsed[0]);
        values.extend_from_slice(&parsed[1..]);
    }
    if times.is_empty() {
        return Err(Error::Format("no observation rows".into()));
    }
    let steps = times.len();
    Ok((times, DMatrix::from_fn(cols - 1, steps, |i, n| values[n * (cols - 1) + i])))
}

fn load_observations(path: &Path, cfg: &RunConfig) -> Result<ObservationSet> {
    let (times, table) = parse_observations(&read_text(path)?)?;
    let grid = TimeGrid::new(cfg.problem.t_end, cfg.problem.steps)?;
    if table.nrows() != cfg.problem.elements + 1 || times.len() != cfg.problem.steps {
        return Err(Error::Config(format!(
            "data has {} sensors and {} times; the configuration expects {} and {}",
            table.nrows(),
            times.len(),
            cfg.problem.elements + 1,
            cfg.problem.steps
        )));
    }
    if times.iter().enumerate().any(|(n, &t)| (t - grid.time(n + 1)).abs() > 1e-6 * cfg.problem.t_end) {
        return Err(Error::Config("observation times do not match the configured grid".into()));
    }
    ObservationSet::new(table, cfg.sigma(), cfg.initial())
}

fn observed_boundary(obs: &ObservationSet) -> Result<BoundarySeries> {
    let g = obs.initial();
    BoundarySeries::new(obs.left_row(), obs.right_row(), g.left(), g.right())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub dataset: DatasetKind,
    pub seed: u64,
    /// Diffusivity per mesh element.
    pub theta: Vec<f64>,
    pub field_hyper: Option<FieldHyper>,
    pub field_seed: Option<u64>,
    pub noise_sd: f64,
    pub sensors: Vec<f64>,
    pub steps: usize,
    pub t_end: f64,
    pub t0: f64,
    pub t_out: f64,
    pub h_over_kappa: f64,
    pub refinement: usize,
}

/// Regenerate the configured dataset for `seed`.
pub fn generate_dataset(cfg: &RunConfig, seed: u64) -> Result<(ObservationSet, Truth)> {
    let prob = cfg.robin_problem();
    let spec = cfg.dataset_spec(seed);
    let (obs, theta, hyper, fseed) = match cfg.problem.dataset {
        DatasetKind::A => (make_dataset(&prob, &spec)?, prob.theta.clone(), None, None),
        DatasetKind::B => {
            let fs = field_seed(seed);
            let (o, f) = make_dataset_b(&prob, cfg.problem.field, &spec, fs)?;
            (o, f, Some(cfg.problem.field), Some(fs))
        }
    };
    let p = &cfg.problem;
    let truth = Truth {
        dataset: p.dataset,
        seed,
        theta,
        field_hyper: hyper,
        field_seed: fseed,
        noise_sd: cfg.noise.sigma_d,
        sensors: spec.sensors,
        steps: p.steps,
        t_end: p.t_end,
        t0: p.t0,
        t_out: p.t_out,
        h_over_kappa: p.h_over_kappa,
        refinement: p.refinement,
    };
    Ok((obs.with_noise_sd(cfg.sigma())?, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mode: LikelihoodMode,
    pub seed: u64,
    pub map: f64,
    pub laplace_mean: f64,
    pub laplace_sd: f64,
    pub grid_mean: f64,
    pub grid_sd: f64,
    pub total_variation: f64,
    pub log_evidence: f64,
    pub noise_sd: f64,
    pub boundary_sd: f64,
    pub prior_nu: f64,
    pub prior_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub seed: u64,
    pub history_steps: usize,
    pub steps_ahead: usize,
    pub time: f64,
    pub laplace_mean: f64,
    pub laplace_sd: f64,
    pub samples: usize,
    pub sensors: Vec<PredictiveSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperReport {
    pub seed: u64,
    pub m_ell: usize,
    pub m_z: usize,
    pub cells: usize,
    pub map_mu: f64,
    pub map_eta: f64,
    pub local_maxima: usize,
    pub invalid_fraction: f64,
    pub laplace_mean: Option<[f64; 2]>,
    pub laplace_covariance: Option<[[f64; 2]; 2]>,
    pub laplace_error: Option<String>,
}

/// Everything a command needs after flag and environment resolution.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: RunConfig,
    pub seed: u64,
    pub mode: LikelihoodMode,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl Invocation {
    pub fn resolve(cli: &Cli, env_seed: Option<&str>) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                other => other,
            })?,
            None => RunConfig::default(),
        };
        let env_seed = env_seed
            .map(|s| s.trim().parse::<u64>().map_err(|e| Error::Config(format!("{SEED_ENV}=`{s}`: {e}"))))
            .transpose()?;
        let seed = cli.seed.or(env_seed).unwrap_or(config.rng.seed);
        config.rng.seed = seed;
        if let Some(m) = cli.mode {
            config.fit.mode = m.into();
        }
        if cli.data.is_some() {
            config.io.data.clone_from(&cli.data);
        }
        let out = cli.out.clone().or_else(|| config.io.out.clone()).unwrap_or_else(|| PathBuf::from("."));
        config.io.out = Some(out.clone());
        let config = config.resolved();
        config.validate()?;
        if cli.threads == Some(0) {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        Ok(Self {
            command: cli.command,
            mode: config.fit.mode,
            data: config.io.data.clone(),
            config,
            seed,
            out,
            threads: cli.threads,
        })
    }

    fn data_path(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| Error::Config("this command needs --data".into()))
    }

    fn observations(&self) -> Result<ObservationSet> {
        load_observations(self.data_path()?, &self.config)
    }
}

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(out.join(name), contents)?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

/// Run one resolved command, writing its outputs under `inv.out`.
pub fn execute(inv: &Invocation) -> Result<()> {
    fs::create_dir_all(&inv.out)?;
    let echo = to_json(&inv.config)?;
    write(&inv.out, "resolved_config.json", &echo)?;
    match inv.command {
        Command::Generate => cmd_generate(inv),
        Command::Fit => cmd_fit(inv),
        Command::Design => cmd_design(inv),
        Command::Predict => cmd_predict(inv),
        Command::FieldFit => cmd_field_fit(inv),
    }
}

fn cmd_generate(inv: &Invocation) -> Result<()> {
    let (obs, truth) = generate_dataset(&inv.config, inv.seed)?;
    let grid = TimeGrid::new(inv.config.problem.t_end, inv.config.problem.steps)?;
    write(&inv.out, "observations.csv", &observations_to_csv(&obs, &grid))?;
    write(&inv.out, "truth.json", &to_json(&truth)?)
}

fn cmd_fit(inv: &Invocation) -> Result<()> {
    let cfg = &inv.config;
    let obs = inv.observations()?;
    let disc = cfg.discretization()?;
    let settings = cfg.fit_settings(inv.mode);
    let treatment = match inv.mode {
        LikelihoodMode::KnownBc => BoundaryTreatment::Known(observed_boundary(&obs)?),
        LikelihoodMode::Marginal => BoundaryTreatment::Marginal(BoundaryPrior::from_spline_fit(
            &obs,
            &disc.grid,
            settings.boundary_sd,
            settings.spline_intervals,
        )?),
    };
    let post = ScalarPosterior {
        obs: &obs,
        disc: &disc,
        boundary: &treatment,
        prior: settings.prior,
    };
    let fit = fit_scalar(
        |t| post.log_posterior(t),
        settings.bracket.0,
        settings.bracket.1,
        cfg.fit.grid_half_width,
        cfg.fit.grid_points,
    )?;
    let mut curve = String::from("theta,log_likelihood,log_posterior\n");
    for t in cfg.fit.curve.values() {
        curve.push_str(&csv_line(&[sci(t), sci(post.log_likelihood(t)?), sci(post.log_posterior(t)?)]));
    }
    let report = FitReport {
        mode: inv.mode,
        seed: inv.seed,
        map: fit.laplace.theta_hat,
        laplace_mean: fit.laplace.theta_hat,
        laplace_sd: fit.laplace.sd(),
        grid_mean: fit.grid.mean(),
        grid_sd: fit.grid.sd(),
        total_variation: fit.total_variation,
        log_evidence: fit.grid.log_evidence,
        noise_sd: settings.noise_sd,
        boundary_sd: settings.boundary_sd,
        prior_nu: settings.prior.nu,
        prior_tau: settings.prior.tau,
    };
    write(&inv.out, "posterior_curve.csv", &curve)?;
    write(&inv.out, "fit_report.json", &to_json(&report)?)
}

/// Noise-free generating process of the configured dataset.
pub fn dataset_generator(cfg: &RunConfig, seed: u64) -> Result<DatasetGenerator> {
    let mut prob = cfg.robin_problem();
    if cfg.problem.dataset == DatasetKind::B {
        let (_, truth) = generate_dataset(cfg, seed)?;
        prob = prob.with_theta(truth.theta);
    }
    let sol = reference_solve(&prob, cfg.problem.steps)?;
    Ok(DatasetGenerator {
        clean: sample_reference(&sol, &cfg.sensor_positions(), cfg.problem.steps)?,
        initial: cfg.initial(),
        noise_sd: cfg.noise.sigma_d,
        disc: cfg.discretization()?,
    })
}

fn cmd_design(inv: &Invocation) -> Result<()> {
    let cfg = &inv.config;
    let disc = cfg.discretization()?;
    let settings = cfg.fit_settings(inv.mode);
    let generator = dataset_generator(cfg, inv.seed)?;
    let obs = match &inv.data {
        Some(p) => load_observations(p, cfg)?,
        None => generator.draw(inv.seed, cfg.sigma())?,
    };
    let known = observed_boundary(&obs)?;
    let mut table = String::from("family,setup,dkl,eig_mean,eig_std_error,replications,dropped,grid_fallback\n");
    for family in &cfg.design.setups {
        let setups = setup_family(family, cfg.problem.elements + 1, cfg.problem.t_end)?;
        let eig = eig_grid(&setups, &generator, &settings, cfg.design.replications, inv.seed)?;
        for (s, e) in setups.iter().zip(&eig) {
            let restricted = restrict_observations(&obs, s, cfg.problem.t_end)?;
            let fit = fit_setup(&restricted, &disc, Some(&known), &settings, false)?;
            let dkl = information_divergence(&settings.prior, &fit.laplace)?;
            table.push_str(&csv_line(&[
                family.clone(),
                s.label.clone(),
                sci(dkl),
                sci(e.mean),
                sci(e.std_error),
                e.replications.to_string(),
                e.dropped.to_string(),
                e.grid_fallback.to_string(),
            ]));
        }
    }
    write(&inv.out, "eig.csv", &table)
}

fn cmd_predict(inv: &Invocation) -> Result<()> {
    let cfg = &inv.config;
    let q = &cfg.predict;
    let obs = inv.observations()?;
    let disc = cfg.discretization()?;
    let settings = cfg.fit_settings(LikelihoodMode::Marginal);
    let n = q.history_steps;
    let future = |given: &Option<Vec<f64>>, row: Vec<f64>| given.clone().unwrap_or_else(|| row[n..n + q.steps_ahead].to_vec());
    let query = PredictiveQuery {
        history_steps: n,
        steps_ahead: q.steps_ahead,
        future_left: future(&q.future_left, obs.left_row()),
        future_right: future(&q.future_right, obs.right_row()),
        sensors: q.sensors.clone(),
    };
    let post = fit_history(&obs, &disc, &settings, n)?;
    let table = predictive_density(&query, &obs, &disc, &settings, &post, q.samples, inv.seed, q.grid_points)?;
    let mut csv = String::from("sensor,value,density\n");
    for (k, &s) in table.sensors.iter().enumerate() {
        for (v, d) in table.values[k].iter().zip(&table.density[k]) {
            csv.push_str(&csv_line(&[format!("TC{s}"), sci(*v), sci(*d)]));
        }
    }
    let report = PredictReport {
        seed: inv.seed,
        history_steps: n,
        steps_ahead: q.steps_ahead,
        time: disc.grid.time(n + q.steps_ahead),
        laplace_mean: post.theta_hat,
        laplace_sd: post.sd(),
        samples: q.samples,
        sensors: predictive_summary(&table),
    };
    write(&inv.out, "predictive_density.csv", &csv)?;
    write(&inv.out, "predictive_summary.json", &to_json(&report)?)
}

/// Cells allowed to have zero likelihood before field-fit aborts.
pub const MAX_INVALID_FRACTION: f64 = 0.1;

fn cmd_field_fit(inv: &Invocation) -> Result<()> {
    let cfg = &inv.config;
    if inv.mode != LikelihoodMode::Marginal {
        return Err(Error::Config("field-fit supports marginal mode only".into()));
    }
    let obs = inv.observations()?;
    let disc = cfg.discretization()?;
    let hp = cfg.hyper_prior();
    let boundary = BoundaryPrior::from_spline_fit(&obs, &disc.grid, cfg.noise.sigma_p, cfg.fit.spline_intervals)?;
    let (mu_axis, eta_axis) = default_hyper_axes(&hp);
    let mu = cfg.field.mu_grid.unwrap_or(mu_axis).values();
    let eta = cfg.field.eta_grid.unwrap_or(eta_axis).values();
    let grid = hyper_log_posterior_grid(&obs, &disc, &boundary, &hp, &mu, &eta, cfg.field.m_ell, cfg.field.m_z, inv.seed)?;
    let invalid = grid.invalid_fraction();
    if invalid > MAX_INVALID_FRACTION {
        return Err(Error::Numerical(format!(
            "{:.1}% of hyperparameter cells have zero likelihood",
            100.0 * invalid
        )));
    }
    let mut csv = String::from("mu,eta,log_density,std_error\n");
    for (i, &m) in grid.mu.iter().enumerate() {
        for (j, &e) in grid.eta.iter().enumerate() {
            csv.push_str(&csv_line(&[sci(m), sci(e), sci(grid.log_density[i][j]), sci(grid.std_error[i][j])]));
        }
    }
    let fit = hyper_laplace(&grid);
    let report = HyperReport {
        seed: inv.seed,
        m_ell: cfg.field.m_ell,
        m_z: cfg.field.m_z,
        cells: grid.cells(),
        map_mu: grid.map.0,
        map_eta: grid.map.1,
        local_maxima: grid.local_maxima().len(),
        invalid_fraction: invalid,
        laplace_mean: fit.as_ref().ok().map(|f| f.mean),
        laplace_covariance: fit.as_ref().ok().map(|f| f.covariance),
        laplace_error: fit.as_ref().err().map(ToString::to_string),
    };
    write(&inv.out, "hyper_grid.csv", &csv)?;
    write(&inv.out, "hyper_laplace.json", &to_json(&report)?)
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Format(_) => 4,
        _ => 3,
    }
}

/// Parse, resolve and execute; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let result = Invocation::resolve(&cli, env_seed.as_deref()).and_then(|inv| {
        eprintln!("parapost {:?}: seed {}, output {}", inv.command, inv.seed, inv.out.display());
        match inv.threads {
            Some(k) => rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                .install(|| execute(&inv)),
            None => execute(&inv),
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Bracket { scanned, .. } = &e {
                for (t, v) in scanned {
                    eprintln!("  scanned {t} -> {v}");
                }
            }
            exit_code(&e)
        }
    }
}
