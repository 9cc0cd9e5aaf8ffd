#![allow(dead_code)]

pub mod schema;

use nalgebra::{DMatrix, DVector};
use parapost::forward_fem::PropagatorSet;
use parapost::model::{BoundaryPrior, ObservationSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_noise(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).unwrap().sample(rng)
}

/// Dense log-density of the stacked data vector with every boundary value
/// integrated out by hand: `Y ~ N(m, σ² Id + σp² G Gᵀ)`.
pub fn stacked_gaussian_log_marginal(
    props: &PropagatorSet,
    obs: &ObservationSet,
    prior: &BoundaryPrior,
) -> f64 {
    let n = obs.steps();
    let m = obs.interior_len();
    let det = props.deterministic(obs.initial()).unwrap();
    let mut rows: Vec<(DVector<f64>, f64, f64)> = Vec::new();
    let mut mu = DVector::zeros(2 * n);
    for k in 0..n {
        mu[k] = prior.mean_left[k];
        mu[n + k] = prior.mean_right[k];
    }
    for t in 1..=n {
        let al = props.al(t);
        let ar = props.ar(t);
        for j in 0..m {
            if !obs.is_observed(j, t - 1) {
                continue;
            }
            let mut g = DVector::zeros(2 * n);
            for k in 0..n {
                g[k] = al[(j, k)];
                g[n + k] = ar[(j, k)];
            }
            rows.push((g, det[t - 1][j], obs.interior_value(j, t - 1)));
        }
    }
    let (yl, yr) = (obs.left_row(), obs.right_row());
    for k in 0..n {
        let mut g = DVector::zeros(2 * n);
        g[k] = 1.0;
        rows.push((g, 0.0, yl[k]));
        let mut g = DVector::zeros(2 * n);
        g[n + k] = 1.0;
        rows.push((g, 0.0, yr[k]));
    }
    let d = rows.len();
    let gmat = DMatrix::from_fn(d, 2 * n, |i, c| rows[i].0[c]);
    let mean = DVector::from_fn(d, |i, _| rows[i].1 + rows[i].0.dot(&mu));
    let y = DVector::from_fn(d, |i, _| rows[i].2);
    let s2 = obs.noise_sd().powi(2);
    let cov = DMatrix::identity(d, d) * s2 + &gmat * gmat.transpose() * prior.sd.powi(2);
    let chol = cov.cholesky().expect("covariance is SPD");
    let r = y - mean;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d as f64 * LN_2PI + logdet + r.dot(&chol.solve(&r)))
}

use parapost::forward_fem::{assemble, solve_full, FemSystem};
use parapost::model::{BoundarySeries, CoefficientField, InitialCondition, SpatialMesh};
use rand::Rng;

/// A random admissible forward problem.
pub struct Instance {
    pub mesh: SpatialMesh,
    pub coeffs: CoefficientField,
    pub dt: f64,
    pub steps: usize,
    pub initial: InitialCondition,
    pub boundary: BoundarySeries,
    pub lumped: bool,
}

impl Instance {
    pub fn system(&self) -> FemSystem {
        assemble(&self.mesh, &self.coeffs, self.dt, self.lumped).unwrap()
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_elements: usize, max_steps: usize) -> Instance {
    let elements = rng.random_range(2..=max_elements);
    let steps = rng.random_range(1..=max_steps);
    let mut nodes: Vec<f64> = (0..=elements).map(|i| i as f64 + rng.random_range(-0.3..0.3)).collect();
    nodes[0] = 0.0;
    nodes[elements] = elements as f64;
    let scale = rng.random_range(0.5..3.0) / elements as f64;
    let mesh = SpatialMesh::from_nodes(nodes.iter().map(|x| x * scale).collect()).unwrap();
    let coeffs = CoefficientField {
        diffusion: (0..elements).map(|_| rng.random_range(0.2..3.0)).collect(),
        advection: (0..elements).map(|_| rng.random_range(-0.5..0.5)).collect(),
        reaction: (0..elements).map(|_| rng.random_range(0.0..1.0)).collect(),
    };
    let initial = InitialCondition::new((0..=elements).map(|_| rng.random_range(-5.0..5.0)).collect());
    let boundary = BoundarySeries::new(
        (0..steps).map(|_| rng.random_range(-5.0..5.0)).collect(),
        (0..steps).map(|_| rng.random_range(-5.0..5.0)).collect(),
        initial.left(),
        initial.right(),
    )
    .unwrap();
    Instance {
        mesh,
        coeffs,
        dt: rng.random_range(0.001..0.1),
        steps,
        initial,
        boundary,
        lumped: rng.random_bool(0.3),
    }
}

/// Interior history as an affine map of the `2N` boundary unknowns, built
/// by sequential stepping with unit perturbations. Returns the history at
/// zero boundary values and one history per unknown (left block first).
pub fn stepping_affine_map(sys: &FemSystem, initial: &InitialCondition, steps: usize) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let series = |k: Option<usize>| {
        let mut l = vec![0.0; steps];
        let mut r = vec![0.0; steps];
        match k {
            Some(k) if k < steps => l[k] = 1.0,
            Some(k) => r[k - steps] = 1.0,
            None => {}
        }
        BoundarySeries::new(l, r, initial.left(), initial.right()).unwrap()
    };
    let base = solve_full(sys, initial, &series(None)).unwrap();
    let cols = (0..2 * steps).map(|k| solve_full(sys, initial, &series(Some(k))).unwrap() - &base).collect();
    (base, cols)
}

/// Gauss–Hermite nodes and weights for the weight `exp(-x²)` (Golub–Welsch).
pub fn gauss_hermite(k: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = DMatrix::from_fn(k, k, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64 / 2.0).sqrt() } else { 0.0 });
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..k)
        .map(|i| (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Log marginal likelihood by adaptive Gauss–Hermite quadrature over the
/// `2N` boundary unknowns: the tensor rule is centred at the integrand's
/// mode and scaled by its curvature, both found numerically (Newton with
/// central differences). The interior prediction comes from sequential
/// stepping. `k` points per dimension.
pub fn quadrature_log_marginal(sys: &FemSystem, obs: &ObservationSet, prior: &BoundaryPrior, k: usize) -> f64 {
    let n = obs.steps();
    let m = obs.interior_len();
    let (base, cols) = stepping_affine_map(sys, obs.initial(), n);
    let dims = 2 * n;
    let mu: Vec<f64> = prior.mean_left.iter().chain(&prior.mean_right).copied().collect();
    let yb: Vec<f64> = obs.left_row().into_iter().chain(obs.right_row()).collect();
    let s2 = obs.noise_sd().powi(2);
    let p2 = prior.sd.powi(2);
    let obs_idx: Vec<(usize, usize)> = (0..n).flat_map(|t| (0..m).map(move |j| (j, t))).filter(|&(j, t)| obs.is_observed(j, t)).collect();
    let count = (obs_idx.len() + dims) as f64;
    let log_f = |b: &[f64]| -> f64 {
        let mut ss = 0.0;
        for &(j, t) in &obs_idx {
            let pred = base[(j, t)] + (0..dims).map(|d| b[d] * cols[d][(j, t)]).sum::<f64>();
            ss += (obs.interior_value(j, t) - pred).powi(2);
        }
        for d in 0..dims {
            ss += (yb[d] - b[d]).powi(2);
        }
        let pr: f64 = (0..dims).map(|d| (b[d] - mu[d]).powi(2)).sum();
        -0.5 * ss / s2 - 0.5 * count * (LN_2PI + s2.ln()) - 0.5 * pr / p2 - 0.5 * dims as f64 * (LN_2PI + p2.ln())
    };
    let h = 1e-2;
    let derivs = |b: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::zeros(dims);
        let mut hess = DMatrix::zeros(dims, dims);
        let f0 = log_f(b);
        let at = |moves: &[(usize, f64)]| {
            let mut c = b.to_vec();
            for &(d, s) in moves {
                c[d] += s;
            }
            log_f(&c)
        };
        for i in 0..dims {
            let (fp, fm) = (at(&[(i, h)]), at(&[(i, -h)]));
            g[i] = (fp - fm) / (2.0 * h);
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in 0..i {
                let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)]) + at(&[(i, -h), (j, -h)])) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        (g, hess)
    };
    let mut mode = mu.clone();
    let mut hess = DMatrix::zeros(dims, dims);
    for _ in 0..4 {
        let (g, hm) = derivs(&mode);
        let step = (-&hm).cholesky().expect("concave integrand").solve(&g);
        for d in 0..dims {
            mode[d] += step[d];
        }
        hess = hm;
    }
    // b = mode + √2 L x with L Lᵀ = (-H)⁻¹
    let cov = (-hess).cholesky().unwrap().inverse();
    let l = cov.cholesky().unwrap().l() * std::f64::consts::SQRT_2;
    let log_jac = l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let (x, w) = gauss_hermite(k);
    let mut acc = (f64::NEG_INFINITY, 0.0);
    let mut idx = vec![0usize; dims];
    loop {
        let mut b = mode.clone();
        let mut lw = 0.0;
        for c in 0..dims {
            lw += w[idx[c]].ln() + x[idx[c]].powi(2);
            for r in c..dims {
                b[r] += l[(r, c)] * x[idx[c]];
            }
        }
        let v = lw + log_f(&b);
        if v > acc.0 {
            acc.1 = acc.1 * (acc.0 - v).exp() + 1.0;
            acc.0 = v;
        } else {
            acc.1 += (v - acc.0).exp();
        }
        let mut c = 0;
        while c < dims {
            idx[c] += 1;
            if idx[c] < k {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
        if c == dims {
            break;
        }
    }
    acc.0 + acc.1.ln() + log_jac
}

/// Random small marginalization instance: uniform `I`-element mesh, `N`
/// steps, random readings, prior means and noise levels.
pub fn marginal_instance(rng: &mut ChaCha8Rng, elements: usize, steps: usize) -> (FemSystem, ObservationSet, BoundaryPrior) {
    let theta = rng.random_range(0.3..2.0);
    let mesh = SpatialMesh::uniform(0.0, 1.0, elements).unwrap();
    let dt = rng.random_range(0.01..0.2);
    let sys = assemble(&mesh, &CoefficientField::constant(theta, elements), dt, false).unwrap();
    let g = InitialCondition::new((0..=elements).map(|_| rng.random_range(40.0..60.0)).collect());
    let y = DMatrix::from_fn(elements + 1, steps, |_, _| rng.random_range(40.0..60.0));
    let obs = ObservationSet::new(y, rng.random_range(0.5..2.0), g).unwrap();
    let prior = BoundaryPrior::new(
        (0..steps).map(|_| rng.random_range(45.0..55.0)).collect(),
        (0..steps).map(|_| rng.random_range(45.0..55.0)).collect(),
        rng.random_range(0.5..2.0),
    )
    .unwrap();
    (sys, obs, prior)
}

use parapost::forward_fd::FdSystem;
use parapost::forward_fem::build_propagators;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Relative max-norm gap between the propagator representation and
/// sequential stepping.
pub fn propagator_stepping_gap(inst: &Instance) -> f64 {
    let sys = inst.system();
    let stepped = solve_full(&sys, &inst.initial, &inst.boundary).unwrap();
    let props = build_propagators(&sys, inst.steps).unwrap();
    let composed = props.evaluate(&inst.initial, &inst.boundary).unwrap();
    max_abs(&(composed - &stepped)) / max_abs(&stepped).max(1.0)
}

/// Relative gap of `u(αa + βb) = αu(a) + βu(b)` over initial and boundary data.
pub fn superposition_gap(inst: &Instance, rng: &mut ChaCha8Rng) -> f64 {
    let sys = inst.system();
    let props = build_propagators(&sys, inst.steps).unwrap();
    let nodes = inst.initial.values.len();
    let g2 = InitialCondition::new((0..nodes).map(|_| rng.random_range(-5.0..5.0)).collect());
    let b2 = BoundarySeries::new(
        (0..inst.steps).map(|_| rng.random_range(-5.0..5.0)).collect(),
        (0..inst.steps).map(|_| rng.random_range(-5.0..5.0)).collect(),
        g2.left(),
        g2.right(),
    )
    .unwrap();
    let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect::<Vec<f64>>();
    let g = InitialCondition::new(mix(&inst.initial.values, &g2.values));
    let bs = BoundarySeries::new(
        mix(&inst.boundary.left, &b2.left),
        mix(&inst.boundary.right, &b2.right),
        g.left(),
        g.right(),
    )
    .unwrap();
    let u1 = props.evaluate(&inst.initial, &inst.boundary).unwrap();
    let u2 = props.evaluate(&g2, &b2).unwrap();
    let combined = props.evaluate(&g, &bs).unwrap();
    let expect = u1 * a + u2 * b;
    max_abs(&(combined - &expect)) / max_abs(&expect).max(1.0)
}

/// Largest entrywise gap between FD and lumped-mass FEM propagators.
pub fn fd_fem_gap(elements: usize, steps: usize, theta: f64, dt: f64) -> f64 {
    let mesh = SpatialMesh::uniform(0.0, 1.0, elements).unwrap();
    let fem = build_propagators(&assemble(&mesh, &CoefficientField::constant(theta, elements), dt, true).unwrap(), steps).unwrap();
    let fd = FdSystem::new(&mesh, theta, dt).unwrap().fd_propagators(steps).unwrap();
    let mut gap: f64 = 0.0;
    for n in 1..=steps {
        gap = gap
            .max(max_abs(&(fem.b_power(n) - fd.b_power(n))))
            .max(max_abs(&(fem.al(n) - fd.al(n))))
            .max(max_abs(&(fem.ar(n) - fd.ar(n))));
    }
    gap
}

use parapost::posterior_scalar::{Density1d, LaplacePosterior, LognormalPrior};

/// Random lognormal prior and Gaussian posterior pair.
pub fn kl_pair(rng: &mut ChaCha8Rng) -> (LognormalPrior, LaplacePosterior) {
    let prior = LognormalPrior::new(rng.random_range(-0.5..0.5), rng.random_range(0.05..0.5)).unwrap();
    let centre = (prior.nu + rng.random_range(-1.5..1.5) * prior.tau).exp();
    let sd = centre * rng.random_range(0.005..0.1);
    let post = LaplacePosterior {
        theta_hat: centre,
        variance: sd * sd,
        log_norm_const: 0.0,
    };
    (prior, post)
}

/// `KL(N(m1, v1) ‖ N(m2, v2))`.
pub fn gaussian_kl(p: &LaplacePosterior, q: &LaplacePosterior) -> f64 {
    0.5 * ((q.variance / p.variance).ln() + (p.variance + (p.theta_hat - q.theta_hat).powi(2)) / q.variance - 1.0)
}

/// Monte Carlo `E_p[log p − log q]` with its standard error.
pub fn mc_kl<Q: Density1d>(p: &LaplacePosterior, q: &Q, draws: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let normal = Normal::new(p.theta_hat, p.sd()).unwrap();
    let vals: Vec<f64> = (0..draws)
        .map(|_| {
            let x = normal.sample(rng);
            p.log_pdf(x) - q.log_pdf(x)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / draws as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    (mean, (var / draws as f64).sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}
