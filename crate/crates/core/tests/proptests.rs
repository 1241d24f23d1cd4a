use proptest::prelude::*;

use margpost::chain::{label_permute_mixture, mixture_blocks as mb, random_permute, systematic_reorder, BlockLayout, ChainSample};
use margpost::estimators::{batch_means, effective_sample_size};
use margpost::math::{log_sum_exp, LogSumExp};
use margpost::rng::RngState;

fn sorted_bits(mut v: Vec<f64>) -> Vec<u64> {
    v.sort_by(f64::total_cmp);
    v.into_iter().map(f64::to_bits).collect()
}

fn block_multiset(chain: &ChainSample, name: &str) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = chain
        .block_rows(name)
        .unwrap()
        .map(|r| r.iter().map(|x| x.to_bits()).collect())
        .collect();
    rows.sort();
    rows
}

fn chain_strategy() -> impl Strategy<Value = ChainSample> {
    (1usize..4, 1usize..4, 2usize..40).prop_flat_map(|(blocks, width, n)| {
        prop::collection::vec(-100.0f64..100.0, blocks * width * n).prop_map(move |v| {
            let spec: Vec<(String, usize)> = (0..blocks).map(|b| (format!("b{b}"), width)).collect();
            ChainSample::new(BlockLayout::new(spec).unwrap(), v, 0, 1).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn log_sum_exp_is_shift_equivariant(xs in prop::collection::vec(-50.0f64..50.0, 1..30), c in -500.0f64..500.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&xs) - c).abs() < 1e-9);
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&xs) - naive).abs() < 1e-9);
    }

    #[test]
    fn streaming_log_sum_exp_matches_batch(xs in prop::collection::vec(-700.0f64..700.0, 1..50)) {
        let mut acc = LogSumExp::default();
        xs.iter().for_each(|&x| acc.push(x));
        prop_assert!((acc.value() - log_sum_exp(&xs)).abs() < 1e-9);
    }

    #[test]
    fn batch_means_is_shift_equivariant(
        xs in prop::collection::vec(-5.0f64..5.0, 60),
        c in -800.0f64..800.0,
        batches in prop::sample::select(vec![2usize, 3, 4, 5, 6, 10, 12, 15, 20, 30]),
    ) {
        let a = batch_means(&xs, batches).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = batch_means(&shifted, batches).unwrap();
        prop_assert!((b.log_evidence - a.log_evidence - c).abs() < 1e-9);
        prop_assert!((b.mc_error - a.mc_error).abs() < 1e-9);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a.log_evidence >= lo - 1e-12 && a.log_evidence <= hi + 1e-12);
    }

    #[test]
    fn effective_sample_size_is_between_one_and_n(xs in prop::collection::vec(-30.0f64..30.0, 1..100)) {
        let ess = effective_sample_size(&xs);
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= xs.len() as f64 + 1e-9);
    }

    #[test]
    fn reordering_keeps_each_block_multiset(chain in chain_strategy(), seed in any::<u64>()) {
        let b = chain.layout().len();
        let sys = systematic_reorder(&chain);
        let kept = chain.truncate(chain.len() - chain.len() % b);
        let perm = random_permute(&chain, &mut RngState::new(seed));
        for block in chain.layout().blocks() {
            prop_assert_eq!(block_multiset(&sys, &block.name), block_multiset(&kept, &block.name));
            prop_assert_eq!(block_multiset(&perm, &block.name), block_multiset(&chain, &block.name));
        }
        // the first block keeps its order
        let first = &chain.layout().blocks()[0].name;
        prop_assert_eq!(perm.block_rows(first).unwrap().collect::<Vec<_>>(), chain.block_rows(first).unwrap().collect::<Vec<_>>());
    }

    #[test]
    fn label_permutation_permutes_within_rows(
        k in 2usize..5,
        rows in prop::collection::vec(prop::collection::vec(0.01f64..50.0, 12), 1..20),
        seed in any::<u64>(),
    ) {
        let n_obs = 3;
        let layout = BlockLayout::new([(mb::MU, k), (mb::SIGMA2, k), (mb::W, k), (mb::Z, n_obs)]).unwrap();
        let mut v = Vec::new();
        for r in &rows {
            v.extend(&r[..3 * k]);
            v.extend((0..n_obs).map(|i| (i % k) as f64));
        }
        let chain = ChainSample::new(layout, v, 0, 0).unwrap();
        let out = label_permute_mixture(&chain, k, &mut RngState::new(seed)).unwrap();
        for i in 0..chain.len() {
            let (a, b) = (chain.draw(i), out.draw(i));
            for name in [mb::MU, mb::SIGMA2, mb::W] {
                prop_assert_eq!(sorted_bits(a.block(name).to_vec()), sorted_bits(b.block(name).to_vec()));
            }
            for (za, zb) in a.block(mb::Z).iter().zip(b.block(mb::Z)) {
                prop_assert_eq!(a.block(mb::MU)[*za as usize], b.block(mb::MU)[*zb as usize]);
                prop_assert_eq!(a.block(mb::W)[*za as usize], b.block(mb::W)[*zb as usize]);
            }
        }
    }
}
