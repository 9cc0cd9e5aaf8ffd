//! Joint and boundary-marginalized likelihoods.
//!
//! Residuals are affine in the boundary unknowns,
//! `R_n = d_n + A_{L,n} T_L + A_{R,n} T_R` with `d_n = det_n - Y_n`, so with
//! Gaussian priors on `T_L` and `T_R` the integral over all `2N` boundary
//! values is Gaussian. It is evaluated in two stages: integrate `T_L` against
//! `Λ0^{-1} = (1/σ² + 1/σp²) Id + Δ_L/σ²`, then `T_R` against the Schur
//! complement `Λ1^{-1} = (1/σ² + 1/σp²) Id + Δ_R/σ² - A_LRᵀ Λ0 A_LR/σ⁴`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::forward_fem::{assemble, build_propagators, PropagatorSet};
use crate::model::{BoundaryPrior, BoundarySeries, CoefficientField, Discretization, ObservationSet};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Initial-data part of the residuals, `d_n = det_n - Y_n^I`.
#[derive(Debug, Clone)]
pub struct ResidualStack {
    pub deterministic: Vec<DVector<f64>>,
}

impl ResidualStack {
    /// `R_n = d_n + A_{L,n} T_L + A_{R,n} T_R` for `n` in `1..=N`.
    pub fn residual(&self, props: &PropagatorSet, n: usize, b: &BoundarySeries) -> DVector<f64> {
        let mut r = self.deterministic[n - 1].clone();
        for k in 1..=n {
            r.axpy(b.left[k - 1], &props.left_response[n - k], 1.0);
            r.axpy(b.right[k - 1], &props.right_response[n - k], 1.0);
        }
        r
    }
}

fn check_dims(props: &PropagatorSet, obs: &ObservationSet) -> Result<()> {
    if props.steps() != obs.steps() || props.interior() != obs.interior_len() {
        return Err(Error::Dimension(format!(
            "propagators are {}x{}, observations are {}x{}",
            props.interior(),
            props.steps(),
            obs.interior_len(),
            obs.steps()
        )));
    }
    Ok(())
}

pub fn residual_stack(props: &PropagatorSet, obs: &ObservationSet) -> Result<ResidualStack> {
    check_dims(props, obs)?;
    let det = props.deterministic(obs.initial())?;
    let deterministic = det
        .into_iter()
        .enumerate()
        .map(|(n, mut d)| {
            for j in 0..d.len() {
                d[j] -= obs.interior_value(j, n);
            }
            d
        })
        .collect();
    Ok(ResidualStack { deterministic })
}

/// Log of the joint density of all readings given the coefficients and the
/// boundary series, normalizing constants included.
pub fn joint_log_likelihood(
    props: &PropagatorSet,
    obs: &ObservationSet,
    boundary: &BoundarySeries,
) -> Result<f64> {
    let sigma = obs.noise_sd();
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("noise sd must be positive, got {sigma}")));
    }
    check_dims(props, obs)?;
    if boundary.steps() != obs.steps() {
        return Err(Error::Dimension("boundary series length mismatch".into()));
    }
    let hist = props.evaluate(obs.initial(), boundary)?;
    let mut sq = 0.0;
    for n in 0..obs.steps() {
        for j in 0..obs.interior_len() {
            if obs.is_observed(j, n) {
                let r = hist[(j, n)] - obs.interior_value(j, n);
                sq += r * r;
            }
        }
    }
    let (yl, yr) = (obs.left_row(), obs.right_row());
    for n in 0..obs.steps() {
        sq += (boundary.left[n] - yl[n]).powi(2) + (boundary.right[n] - yr[n]).powi(2);
    }
    let count = (obs.observed_interior_count() + 2 * obs.steps()) as f64;
    Ok(-count * (0.5 * LN_2PI + sigma.ln()) - 0.5 * sq / (sigma * sigma))
}

/// Blocks of the closed-form marginal likelihood.
#[derive(Debug, Clone)]
pub struct MarginalLikelihoodParts {
    /// `Δ_L = Σ A_{L,n}ᵀ A_{L,n}` over observed rows.
    pub delta_left: DMatrix<f64>,
    pub delta_right: DMatrix<f64>,
    /// `A_LR = Σ A_{L,n}ᵀ A_{R,n}`.
    pub cross: DMatrix<f64>,
    /// `Δ_{2,L} = Σ A_{L,n}ᵀ (Y_n - det_n)`.
    pub delta2_left: DVector<f64>,
    pub delta2_right: DVector<f64>,
    pub inv_noise_var: f64,
    pub inv_prior_var: f64,
    /// Factor of `Λ0^{-1}`.
    pub lambda0_inv: Cholesky<f64, Dyn>,
    /// Factor of `Λ1^{-1}`.
    pub lambda1_inv: Cholesky<f64, Dyn>,
    /// Linear coefficient of `T_L` with `T_R = 0`.
    pub t_l1: DVector<f64>,
    pub t_r1: DVector<f64>,
    pub t_r2: DVector<f64>,
    pub t_r3: DVector<f64>,
    /// Weighted residual energy `Σ |Y_n - det_n|²` over observed entries.
    pub residual_energy: f64,
    pub log_value: f64,
}

impl MarginalLikelihoodParts {
    /// `xᵀ Λ y` for `Λ` the inverse of a stored factor.
    pub fn quad(chol: &Cholesky<f64, Dyn>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&chol.solve(y))
    }
}

struct Accumulated {
    delta_left: DMatrix<f64>,
    delta_right: DMatrix<f64>,
    cross: DMatrix<f64>,
    delta2_left: DVector<f64>,
    delta2_right: DVector<f64>,
    residual_energy: f64,
}

/// Component-major copy: entry `j * N + p` is component `j` of `v[p]`.
fn transpose_series(v: &[DVector<f64>]) -> Vec<f64> {
    let (n, m) = (v.len(), v[0].len());
    let mut out = vec![0.0; n * m];
    for (p, c) in v.iter().enumerate() {
        for j in 0..m {
            out[j * n + p] = c[j];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Toeplitz accumulation for a fully observed interior block.
fn accumulate_full(props: &PropagatorSet, data: &[DVector<f64>]) -> Accumulated {
    let n_steps = props.steps();
    let m = props.interior();
    let hl = transpose_series(&props.left_response);
    let hr = transpose_series(&props.right_response);
    let y = transpose_series(data);
    let comp = |v: &[f64], j: usize| -> std::ops::Range<usize> {
        debug_assert_eq!(v.len(), m * n_steps);
        j * n_steps..(j + 1) * n_steps
    };
    // prefix[d][p] = Σ_{q <= p} a_{q+d} · b_q
    let mut prod = vec![0.0; n_steps];
    let mut prefix = |a: &[f64], b: &[f64]| -> Vec<Vec<f64>> {
        (0..n_steps)
            .map(|d| {
                let len = n_steps - d;
                prod[..len].iter_mut().for_each(|v| *v = 0.0);
                for j in 0..m {
                    let aj = &a[comp(a, j)][d..];
                    let bj = &b[comp(b, j)][..len];
                    for ((o, x), y) in prod[..len].iter_mut().zip(aj).zip(bj) {
                        *o += x * y;
                    }
                }
                let mut acc = 0.0;
                prod[..len]
                    .iter()
                    .map(|v| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect()
    };
    let ll = prefix(&hl, &hl);
    let rr = prefix(&hr, &hr);
    let lr = prefix(&hl, &hr);
    let rl = prefix(&hr, &hl);
    let last = n_steps - 1;
    let mut delta_left = DMatrix::zeros(n_steps, n_steps);
    let mut delta_right = DMatrix::zeros(n_steps, n_steps);
    let mut cross = DMatrix::zeros(n_steps, n_steps);
    for k in 0..n_steps {
        for j in k..n_steps {
            let d = j - k;
            let vl = ll[d][last - j];
            let vr = rr[d][last - j];
            delta_left[(k, j)] = vl;
            delta_left[(j, k)] = vl;
            delta_right[(k, j)] = vr;
            delta_right[(j, k)] = vr;
            cross[(k, j)] = lr[d][last - j];
            if d > 0 {
                // cross[(j, k)] with j > k: Σ_p hL_p · hR_{p+d}
                cross[(j, k)] = rl[d][last - j];
            }
        }
    }
    // Δ_2[k] = Σ_{n >= k} h_{n-k} · y_n
    let mut delta2_left = DVector::zeros(n_steps);
    let mut delta2_right = DVector::zeros(n_steps);
    for j in 0..m {
        let (lj, rj, yj) = (&hl[comp(&hl, j)], &hr[comp(&hr, j)], &y[comp(&y, j)]);
        for k in 0..n_steps {
            delta2_left[k] += dot(lj, &yj[k..]);
            delta2_right[k] += dot(rj, &yj[k..]);
        }
    }
    let residual_energy = dot(&y, &y);
    Accumulated {
        delta_left,
        delta_right,
        cross,
        delta2_left,
        delta2_right,
        residual_energy,
    }
}

/// `L^{-1} B` by column-oriented forward substitution.
fn forward_substitute(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let ld = l.as_slice();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        let col = &mut x.as_mut_slice()[c * n..(c + 1) * n];
        for k in 0..n {
            let lk = &ld[k * n..(k + 1) * n];
            let v = col[k] / lk[k];
            col[k] = v;
            if v != 0.0 {
                for (o, a) in col[k + 1..].iter_mut().zip(&lk[k + 1..]) {
                    *o -= v * a;
                }
            }
        }
    }
    x
}

/// `XᵀX` filling both triangles from column dot products.
fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = x.shape();
    let data = x.as_slice();
    let mut out = DMatrix::zeros(c, c);
    for i in 0..c {
        let ci = &data[i * r..(i + 1) * r];
        for j in 0..=i {
            let v = dot(ci, &data[j * r..(j + 1) * r]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Row-by-row accumulation honouring the observation mask.
fn accumulate_masked(
    props: &PropagatorSet,
    obs: &ObservationSet,
    data: &[DVector<f64>],
) -> Accumulated {
    let n_steps = props.steps();
    let hl = &props.left_response;
    let hr = &props.right_response;
    let mut delta_left = DMatrix::zeros(n_steps, n_steps);
    let mut delta_right = DMatrix::zeros(n_steps, n_steps);
    let mut cross = DMatrix::zeros(n_steps, n_steps);
    let mut delta2_left = DVector::zeros(n_steps);
    let mut delta2_right = DVector::zeros(n_steps);
    let mut residual_energy = 0.0;
    let mut a = vec![0.0; n_steps];
    let mut b = vec![0.0; n_steps];
    for n in 0..n_steps {
        for j in 0..obs.interior_len() {
            if !obs.is_observed(j, n) {
                continue;
            }
            for k in 0..=n {
                a[k] = hl[n - k][j];
                b[k] = hr[n - k][j];
            }
            let y = data[n][j];
            residual_energy += y * y;
            for k in 0..=n {
                delta2_left[k] += a[k] * y;
                delta2_right[k] += b[k] * y;
                for m in 0..=n {
                    delta_left[(k, m)] += a[k] * a[m];
                    delta_right[(k, m)] += b[k] * b[m];
                    cross[(k, m)] += a[k] * b[m];
                }
            }
        }
    }
    Accumulated {
        delta_left,
        delta_right,
        cross,
        delta2_left,
        delta2_right,
        residual_energy,
    }
}

fn log_det_inverse(chol: &Cholesky<f64, Dyn>) -> f64 {
    // log|Λ| = -log|Λ^{-1}|
    -2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Closed-form marginal likelihood after integrating out `T_L` and `T_R`.
pub fn marginal_parts(
    props: &PropagatorSet,
    obs: &ObservationSet,
    prior: &BoundaryPrior,
) -> Result<MarginalLikelihoodParts> {
    check_dims(props, obs)?;
    let n_steps = obs.steps();
    if prior.steps() != n_steps {
        return Err(Error::Dimension(format!(
            "prior has {} steps, observations have {n_steps}",
            prior.steps()
        )));
    }
    let sigma = obs.noise_sd();
    let sp = prior.sd;
    if !(sp > 0.0) {
        return Err(Error::Domain(format!("prior sd must be positive, got {sp}")));
    }
    let iv = 1.0 / (sigma * sigma);
    let ip = 1.0 / (sp * sp);

    // data_n = Y_n - det_n (the negated deterministic residual)
    let stack = residual_stack(props, obs)?;
    let data: Vec<DVector<f64>> = stack.deterministic.iter().map(|d| -d).collect();
    let acc = if obs.mask().is_none() {
        accumulate_full(props, &data)
    } else {
        accumulate_masked(props, obs, &data)
    };

    let yl = DVector::from_vec(obs.left_row());
    let yr = DVector::from_vec(obs.right_row());
    let mul = DVector::from_column_slice(&prior.mean_left);
    let mur = DVector::from_column_slice(&prior.mean_right);

    let diag = iv + ip;
    let mut l0_inv = &acc.delta_left * iv;
    for k in 0..n_steps {
        l0_inv[(k, k)] += diag;
    }
    let lambda0_inv = Cholesky::new(l0_inv)
        .ok_or_else(|| Error::Numerical("Λ0^{-1} is not positive definite".into()))?;

    let t_l1 = &mul * ip + (&yl + &acc.delta2_left) * iv;
    let t_r2 = &mur * ip + (&yr + &acc.delta2_right) * iv;

    // A_LRᵀ Λ0 A_LR via the factor: X = L0^{-1} A_LR, product XᵀX.
    let x = forward_substitute(lambda0_inv.l_dirty(), &acc.cross);
    let mut l1_inv = &acc.delta_right * iv - gram(&x) * (iv * iv);
    for k in 0..n_steps {
        l1_inv[(k, k)] += diag;
    }
    let lambda1_inv = Cholesky::new(l1_inv)
        .ok_or_else(|| Error::Numerical("Λ1^{-1} is not positive definite".into()))?;

    let lambda0_tl = lambda0_inv.solve(&t_l1);
    let t_r3 = -(acc.cross.tr_mul(&lambda0_tl)) * iv;
    let t_r1 = &t_r2 + &t_r3;

    let n = n_steps as f64;
    let count = (obs.observed_interior_count() + 2 * n_steps) as f64;
    let log_value = -count * (0.5 * LN_2PI + sigma.ln()) - 2.0 * n * (0.5 * LN_2PI + sp.ln())
        + n * LN_2PI
        - 0.5 * ip * (mul.norm_squared() + mur.norm_squared())
        - 0.5 * iv * (yl.norm_squared() + yr.norm_squared() + acc.residual_energy)
        + 0.5 * t_l1.dot(&lambda0_tl)
        + 0.5 * t_r1.dot(&lambda1_inv.solve(&t_r1))
        + 0.5 * log_det_inverse(&lambda0_inv)
        + 0.5 * log_det_inverse(&lambda1_inv);
    if !log_value.is_finite() {
        return Err(Error::Numerical("marginal log-likelihood is not finite".into()));
    }
    Ok(MarginalLikelihoodParts {
        delta_left: acc.delta_left,
        delta_right: acc.delta_right,
        cross: acc.cross,
        delta2_left: acc.delta2_left,
        delta2_right: acc.delta2_right,
        inv_noise_var: iv,
        inv_prior_var: ip,
        lambda0_inv,
        lambda1_inv,
        t_l1,
        t_r1,
        t_r2,
        t_r3,
        residual_energy: acc.residual_energy,
        log_value,
    })
}

/// Assemble, propagate, and marginalize in one call.
pub fn marginal_log_likelihood(
    coeffs: &CoefficientField,
    obs: &ObservationSet,
    prior: &BoundaryPrior,
    disc: &Discretization,
) -> Result<f64> {
    if obs.steps() == 0 {
        return Ok(0.0);
    }
    if disc.grid.steps() != obs.steps() {
        return Err(Error::Dimension(format!(
            "time grid has {} steps, observations have {}",
            disc.grid.steps(),
            obs.steps()
        )));
    }
    let sys = assemble(&disc.mesh, coeffs, disc.grid.dt(), disc.lumped_mass)?;
    let props = build_propagators(&sys, obs.steps())?;
    Ok(marginal_parts(&props, obs, prior)?.log_value)
}

/// Joint log-likelihood with the boundary series held fixed.
pub fn known_boundary_log_likelihood(
    coeffs: &CoefficientField,
    obs: &ObservationSet,
    boundary: &BoundarySeries,
    disc: &Discretization,
) -> Result<f64> {
    if obs.steps() == 0 {
        return Ok(0.0);
    }
    let sys = assemble(&disc.mesh, coeffs, disc.grid.dt(), disc.lumped_mass)?;
    let props = build_propagators(&sys, obs.steps())?;
    joint_log_likelihood(&props, obs, boundary)
}
