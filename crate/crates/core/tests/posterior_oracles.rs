mod common;

use parapost::design::{information_divergence, kl_divergence};
use parapost::posterior_scalar::{fit_scalar, sample_posterior, LaplacePosterior};
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn quadrature_kl_matches_gaussian_closed_form() {
    let mut rng = common::rng(81);
    for _ in 0..10 {
        let (_, p) = common::kl_pair(&mut rng);
        let (_, q0) = common::kl_pair(&mut rng);
        let q = LaplacePosterior {
            theta_hat: p.theta_hat + 2.0 * p.sd() * (q0.theta_hat - 1.0),
            variance: p.variance * (0.5 + q0.theta_hat),
            ..q0
        };
        let w = 30.0 * p.sd();
        let kl = kl_divergence(&p, &q, p.theta_hat - w, p.theta_hat + w).unwrap();
        let exact = common::gaussian_kl(&p, &q);
        assert!((kl - exact).abs() <= 1e-8, "{kl} vs {exact}");
    }
}

#[test]
fn quadrature_kl_matches_monte_carlo() {
    let mut rng = common::rng(82);
    for _ in 0..10 {
        let (prior, post) = common::kl_pair(&mut rng);
        let kl = information_divergence(&prior, &post).unwrap();
        let (mc, se) = common::mc_kl(&post, &prior, 20_000, &mut rng);
        assert!((kl - mc).abs() <= 3.0 * se, "{kl} vs {mc} ± {se}");
    }
}

#[test]
fn posterior_draws_follow_the_laplace_normal() {
    let post = LaplacePosterior {
        theta_hat: 0.98,
        variance: 0.006f64.powi(2),
        log_norm_const: 0.0,
    };
    let draws = sample_posterior(&post, 5000, 4).unwrap();
    let mut xs = draws.clone();
    xs.sort_by(f64::total_cmp);
    let cdf = Normal::new(post.theta_hat, post.sd()).unwrap();
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value
    assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn skewed_posterior_shows_laplace_error() {
    // log-density of a Gamma(3, 1): visibly skewed, Laplace is only approximate
    let f = |x: f64| Ok(if x > 0.0 { 2.0 * x.ln() - x } else { f64::NEG_INFINITY });
    let fit = fit_scalar(f, 0.1, 20.0, 12.0, 4001).unwrap();
    assert!((fit.laplace.theta_hat - 2.0).abs() < 1e-6);
    assert!((fit.laplace.variance - 2.0).abs() < 1e-4);
    assert!(fit.total_variation > 0.05);
}
