mod common;

use common::data_dir;
use common::oracle::{integrate, integrate_2d};

use margpost::chain::{label_permute_mixture, mixture_blocks as mb};
use margpost::density::{rao_blackwell, FullConditional, ReducedSample};
use margpost::distributions::{ln_pdf_normal, InverseGamma};
use margpost::estimators::{bias_correct_mixture, EvidenceReport};
use margpost::harness::pipeline::{build_model, mixture_product, LoadedModel};
use margpost::harness::{ModelConfig, Reorder};
use margpost::math::ln_factorial;
use margpost::models::mixture::{
    ComponentMuConditional, LabelSymmetric, MixtureGibbs, MixtureModel, MixturePrior, MuConditional,
};
use margpost::models::run_chain;
use margpost::rng::RngState;

fn galaxy(k: usize, equal_variance: bool) -> MixtureModel {
    match build_model(&ModelConfig::Mixture { k, equal_variance }, &data_dir()).unwrap() {
        LoadedModel::Mixture(m) => m,
        _ => unreachable!(),
    }
}

fn chain_of(m: &MixtureModel, n: usize, seed: u64) -> margpost::chain::ChainSample {
    let mut s = MixtureGibbs { model: m };
    run_chain(&mut s, m.initial_state(), n + 500, 500, seed).unwrap().0
}

#[test]
fn likelihood_and_prior_do_not_depend_on_labels() {
    let m = galaxy(3, false);
    let mu = [10.0, 20.5, 23.0];
    let s2 = [1.0, 4.0, 9.0];
    let w = [0.1, 0.5, 0.4];
    let ll = m.log_likelihood(&mu, &s2, &w);
    let lp = m.log_prior(&mu, &s2, &w);
    for p in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
        let mu_p: Vec<f64> = p.iter().map(|&j| mu[j]).collect();
        let s2_p: Vec<f64> = p.iter().map(|&j| s2[j]).collect();
        let w_p: Vec<f64> = p.iter().map(|&j| w[j]).collect();
        assert!((m.log_likelihood(&mu_p, &s2_p, &w_p) - ll).abs() < 1e-9);
        assert!((m.log_prior(&mu_p, &s2_p, &w_p) - lp).abs() < 1e-12);
    }
}

#[test]
fn single_component_evidence_matches_quadrature() {
    let y = vec![18.2, 21.5, 19.3, 22.9, 20.1, 23.4, 17.8];
    let m = MixtureModel::new(y.clone(), 1, false, MixturePrior::default()).unwrap();
    let p = MixturePrior::default();
    let ig = InverseGamma::new(0.5 * p.nu0, 0.5 * p.delta0).unwrap();
    // outer variable is log s2
    let f = |t: f64, mu: f64| {
        let s2 = t.exp();
        let ll: f64 = y.iter().map(|&v| ln_pdf_normal(v, mu, s2)).sum();
        (ll + ln_pdf_normal(mu, p.mu0, p.s0sq) + ig.ln_pdf(s2) + t).exp()
    };
    let oracle = integrate_2d(f, -6.0, 8.0, -30.0, 70.0).ln();

    let chain = chain_of(&m, 12000, 1);
    let r = mixture_product(&m, &chain, false, 30, 500, 2, Reorder::Systematic).unwrap();
    let err = r.mc_error.unwrap();
    assert!((r.log_evidence - oracle).abs() < 3.0 * err + 0.01, "{} vs {oracle} (error {err})", r.log_evidence);
}

#[test]
fn rao_blackwell_component_mean_density_is_normalized_and_centred() {
    let m = galaxy(2, true);
    let chain = chain_of(&m, 5000, 3);
    let reduced = ReducedSample::draw(&chain, 500, &mut RngState::new(4)).unwrap();
    for j in 0..2 {
        let cond = ComponentMuConditional { model: &m, j };
        let rb = rao_blackwell(cond.block(), &reduced, &cond).unwrap();
        let mass = integrate(|v| rb.ln_pdf(&[v]).exp(), 0.0, 45.0);
        assert!((mass - 1.0).abs() < 1e-6, "component {j}: mass {mass}");
        let rb_mean = integrate(|v| v * rb.ln_pdf(&[v]).exp(), 0.0, 45.0);
        let draws = chain.column(mb::MU, j).unwrap();
        let chain_mean = margpost::math::mean(&draws);
        let sd = margpost::math::variance(&draws).sqrt();
        assert!((rb_mean - chain_mean).abs() < 0.2 * sd, "component {j}: {rb_mean} vs {chain_mean}");
    }
}

#[test]
fn label_symmetric_density_is_symmetric_and_normalized() {
    let m = galaxy(2, false);
    let chain = chain_of(&m, 2000, 5);
    let reduced = ReducedSample::draw(&chain, 100, &mut RngState::new(6)).unwrap();
    let sym = LabelSymmetric::new(Box::new(MuConditional(&m)), 2);
    let d = rao_blackwell(sym.block(), &reduced, &sym).unwrap();
    for (a, b) in [(9.7, 21.4), (20.0, 22.5), (33.0, 19.0)] {
        assert!((d.ln_pdf(&[a, b]) - d.ln_pdf(&[b, a])).abs() < 1e-12);
    }
    let mass = integrate_2d(|a, b| d.ln_pdf(&[a, b]).exp(), 0.0, 45.0, 0.0, 45.0);
    assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
}

#[test]
fn label_permutation_keeps_component_parameters_together() {
    let m = galaxy(3, false);
    let chain = chain_of(&m, 300, 7);
    let permuted = label_permute_mixture(&chain, 3, &mut RngState::new(8)).unwrap();
    let layout = chain.layout();
    for i in 0..chain.len() {
        let (a, b) = (chain.draw(i), permuted.draw(i));
        let triples = |d: margpost::chain::Draw<'_>| {
            let mut t: Vec<(u64, u64, u64)> = (0..3)
                .map(|j| (d.block(mb::MU)[j].to_bits(), d.block(mb::SIGMA2)[j].to_bits(), d.block(mb::W)[j].to_bits()))
                .collect();
            t.sort();
            t
        };
        assert_eq!(triples(a), triples(b));
        // every observation still points at the same component mean
        for (za, zb) in a.block(mb::Z).iter().zip(b.block(mb::Z)) {
            assert_eq!(a.block(mb::MU)[*za as usize], b.block(mb::MU)[*zb as usize]);
        }
    }
    assert_eq!(layout, permuted.layout());
}

#[test]
fn bias_correction_adds_log_k_factorial() {
    let mut r = EvidenceReport::point("simple", "k4", -230.0);
    r.batch_estimates = vec![-230.1, -229.9];
    r.mc_error = Some(0.05);
    let c = bias_correct_mixture(&r, 4);
    let shift = 24f64.ln();
    assert!((ln_factorial(4) - shift).abs() < 1e-12);
    assert!((c.log_evidence - (-230.0 + shift)).abs() < 1e-12);
    assert!((c.batch_estimates[1] - (-229.9 + shift)).abs() < 1e-12);
    assert_eq!(c.mc_error, r.mc_error);
}
