mod common;

use common::oracle::{integrate, integrate_2d, ks_critical_001, ks_statistic};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Beta, Continuous, ContinuousCDF, Discrete, Normal, StudentsT};

use margpost::distributions::{
    ln_pdf_normal, ln_pmf_poisson, sample_normal, sample_poisson, Dirichlet, InverseGamma, InverseWishart, MvNormal,
    MvStudentT,
};
use margpost::rng::RngState;

const KS_DRAWS: usize = 5000;

fn ig_cdf(x: f64, shape: f64, rate: f64) -> f64 {
    statrs::distribution::InverseGamma::new(shape, rate).unwrap().cdf(x)
}

#[test]
fn log_pdfs_agree_with_statrs() {
    let n = Normal::new(1.5, 2.0).unwrap();
    let ig = statrs::distribution::InverseGamma::new(3.5, 2.25).unwrap();
    let ours_ig = InverseGamma::new(3.5, 2.25).unwrap();
    let t = StudentsT::new(0.3, 1.7, 5.0).unwrap();
    let ours_t = MvStudentT::new(5.0, DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, 1.7 * 1.7)).unwrap();
    let beta = Beta::new(2.5, 4.0).unwrap();
    let dir = Dirichlet::new(vec![2.5, 4.0]).unwrap();
    for &x in &[0.05, 0.3, 0.9, 1.7, 4.0] {
        assert!((ln_pdf_normal(x, 1.5, 4.0) - n.ln_pdf(x)).abs() < 1e-12);
        assert!((ours_ig.ln_pdf(x) - ig.ln_pdf(x)).abs() < 1e-10);
        assert!((ours_t.ln_pdf(&[x]) - t.ln_pdf(x)).abs() < 1e-10);
    }
    for &w in &[0.05, 0.3, 0.5, 0.9] {
        assert!((dir.ln_pdf(&[w, 1.0 - w]) - beta.ln_pdf(w)).abs() < 1e-10);
    }
    let pois = statrs::distribution::Poisson::new(3.7).unwrap();
    for y in 0..15 {
        assert!((ln_pmf_poisson(y, 3.7) - pois.ln_pmf(y)).abs() < 1e-10);
    }
}

#[test]
fn densities_normalize() {
    let ig = InverseGamma::new(2.0, 3.0).unwrap();
    let total = integrate(|x| if x > 0.0 { ig.ln_pdf(x).exp() } else { 0.0 }, 0.0, 2000.0);
    assert!((total - 1.0).abs() < 1e-2, "inverse gamma integrates to {total}");

    let mvn = MvNormal::new(
        DVector::from_vec(vec![0.5, -1.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]),
    )
    .unwrap();
    let total = integrate_2d(|a, b| mvn.ln_pdf(&[a, b]).exp(), -9.0, 10.0, -12.0, 10.0);
    assert!((total - 1.0).abs() < 1e-2, "bivariate normal integrates to {total}");

    let mvt = MvStudentT::new(
        7.0,
        DVector::from_vec(vec![0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 0.5]),
    )
    .unwrap();
    let total = integrate_2d(|a, b| mvt.ln_pdf(&[a, b]).exp(), -60.0, 60.0, -60.0, 60.0);
    assert!((total - 1.0).abs() < 1e-2, "bivariate t integrates to {total}");

    // Dirichlet on the 2-simplex, parameterized by its first two weights
    let dir = Dirichlet::new(vec![1.5, 2.0, 3.0]).unwrap();
    let total = common::oracle::integrate_tol(
        &|a| common::oracle::integrate_tol(&|b| if a + b < 1.0 { dir.ln_pdf(&[a, b, 1.0 - a - b]).exp() } else { 0.0 }, 0.0, 1.0 - a, 1e-9),
        0.0,
        1.0,
        1e-8,
    );
    assert!((total - 1.0).abs() < 1e-2, "Dirichlet integrates to {total}");

    let iw = InverseWishart::new(5.0, DMatrix::from_element(1, 1, 2.0)).unwrap();
    let total = integrate(|x| if x > 0.0 { iw.ln_pdf_vech(&[x]).exp() } else { 0.0 }, 0.0, 500.0);
    assert!((total - 1.0).abs() < 1e-2, "1x1 inverse Wishart integrates to {total}");

    let mass: f64 = (0..200).map(|y| ln_pmf_poisson(y, 12.5).exp()).sum();
    assert!((mass - 1.0).abs() < 1e-10);
}

#[test]
fn normal_sampler_passes_ks() {
    let mut rng = RngState::new(11);
    let xs: Vec<f64> = (0..KS_DRAWS).map(|_| sample_normal(&mut rng, -2.0, 0.25)).collect();
    let n = Normal::new(-2.0, 0.5).unwrap();
    assert!(ks_statistic(&xs, |x| n.cdf(x)) < ks_critical_001(KS_DRAWS));
}

#[test]
fn inverse_gamma_sampler_passes_ks() {
    let mut rng = RngState::new(12);
    for &(a, b) in &[(0.8, 1.0), (3.0, 0.5), (40.0, 80.0)] {
        let ig = InverseGamma::new(a, b).unwrap();
        let xs: Vec<f64> = (0..KS_DRAWS).map(|_| ig.sample(&mut rng)).collect();
        let d = ks_statistic(&xs, |x| ig_cdf(x, a, b));
        assert!(d < ks_critical_001(KS_DRAWS), "IG({a}, {b}) KS {d}");
    }
}

#[test]
fn dirichlet_marginals_are_beta() {
    let mut rng = RngState::new(13);
    let alpha = [0.7, 2.0, 3.3];
    let dir = Dirichlet::new(alpha.to_vec()).unwrap();
    let draws: Vec<Vec<f64>> = (0..KS_DRAWS).map(|_| dir.sample(&mut rng)).collect();
    let total: f64 = alpha.iter().sum();
    for (j, &a) in alpha.iter().enumerate() {
        let xs: Vec<f64> = draws.iter().map(|w| w[j]).collect();
        let beta = Beta::new(a, total - a).unwrap();
        let d = ks_statistic(&xs, |x| beta.cdf(x));
        assert!(d < ks_critical_001(KS_DRAWS), "component {j} KS {d}");
    }
    assert!(draws.iter().all(|w| (w.iter().sum::<f64>() - 1.0).abs() < 1e-12));
}

#[test]
fn inverse_wishart_one_dim_sampler_matches_inverse_gamma() {
    // IW_1(nu, s) is IG(nu/2, s/2)
    let mut rng = RngState::new(14);
    let iw = InverseWishart::new(6.0, DMatrix::from_element(1, 1, 3.0)).unwrap();
    let xs: Vec<f64> = (0..KS_DRAWS).map(|_| iw.sample(&mut rng)[(0, 0)]).collect();
    let d = ks_statistic(&xs, |x| ig_cdf(x, 3.0, 1.5));
    assert!(d < ks_critical_001(KS_DRAWS), "KS {d}");
}

#[test]
fn inverse_wishart_mean_matches_closed_form() {
    // E[X] = S / (nu - p - 1)
    let mut rng = RngState::new(15);
    let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let nu = 9.0;
    let iw = InverseWishart::new(nu, s.clone()).unwrap();
    let n = 20000;
    let mut acc = DMatrix::zeros(2, 2);
    for _ in 0..n {
        acc += iw.sample(&mut rng);
    }
    let mean = acc / n as f64;
    let expected = s / (nu - 3.0);
    for i in 0..2 {
        for j in 0..2 {
            assert!((mean[(i, j)] - expected[(i, j)]).abs() < 0.02, "entry ({i},{j}): {} vs {}", mean[(i, j)], expected[(i, j)]);
        }
    }
}

#[test]
fn mvnormal_sampler_marginal_and_correlation() {
    let mut rng = RngState::new(16);
    let cov = DMatrix::from_row_slice(2, 2, &[4.0, -1.2, -1.2, 1.0]);
    let mvn = MvNormal::new(DVector::from_vec(vec![1.0, 2.0]), cov).unwrap();
    let draws: Vec<DVector<f64>> = (0..KS_DRAWS).map(|_| mvn.sample(&mut rng)).collect();
    let first: Vec<f64> = draws.iter().map(|d| d[0]).collect();
    let n = Normal::new(1.0, 2.0).unwrap();
    assert!(ks_statistic(&first, |x| n.cdf(x)) < ks_critical_001(KS_DRAWS));
    let cross = draws.iter().map(|d| (d[0] - 1.0) * (d[1] - 2.0)).sum::<f64>() / KS_DRAWS as f64;
    assert!((cross + 1.2).abs() < 0.15, "covariance {cross}");
}

#[test]
fn poisson_sampler_mean_and_variance() {
    let mut rng = RngState::new(17);
    for &rate in &[0.3, 4.0, 60.0] {
        let xs: Vec<f64> = (0..KS_DRAWS).map(|_| sample_poisson(&mut rng, rate).unwrap() as f64).collect();
        let m = margpost::math::mean(&xs);
        let v = margpost::math::variance(&xs);
        let se = (rate / KS_DRAWS as f64).sqrt();
        assert!((m - rate).abs() < 5.0 * se, "rate {rate}: mean {m}");
        assert!((v / rate - 1.0).abs() < 0.1, "rate {rate}: variance {v}");
    }
}
