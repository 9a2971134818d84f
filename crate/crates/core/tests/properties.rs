use georank_core::analysis::{entropy_by_category, spearman};
use georank_core::corpus::{generate_corpus, GeneratorConfig};
use georank_core::metrics::rank_descending;
use georank_core::objective::listwise_loss_with_grad;
use georank_core::{AttentionWeights, ChunkTaxonomy, GroupedOptimizer, OptimizerKind};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_instances_are_valid(seed in any::<u64>(), n in 1usize..6, k in 2usize..12, graded in any::<bool>()) {
        let tax = ChunkTaxonomy::builtin();
        let mut cfg = GeneratorConfig::new(seed, n, k);
        cfg.graded = graded;
        let corpus = generate_corpus(&cfg, &tax).unwrap();
        prop_assert_eq!(corpus.len(), n);
        for inst in &corpus {
            prop_assert_eq!(inst.candidates.len(), k);
            inst.validate(tax.len()).unwrap();
            prop_assert_eq!(inst.relevance.is_some(), graded);
        }
    }

    #[test]
    fn same_seed_same_corpus(seed in any::<u64>()) {
        let tax = ChunkTaxonomy::builtin();
        let cfg = GeneratorConfig::new(seed, 4, 5);
        prop_assert_eq!(generate_corpus(&cfg, &tax).unwrap(), generate_corpus(&cfg, &tax).unwrap());
    }

    #[test]
    fn ranking_is_a_sorted_stable_permutation(scores in proptest::collection::vec(-4i32..4, 1..40)) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let r = rank_descending(&scores);
        let mut seen = r.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
        for pair in r.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            prop_assert!(scores[a] > scores[b] || (scores[a] == scores[b] && a < b));
        }
    }

    #[test]
    fn listwise_loss_is_nonnegative_with_zero_sum_gradient(
        scores in proptest::collection::vec(-30.0f64..30.0, 2..20),
        pick in 0usize..100,
    ) {
        let gold = pick % scores.len();
        let (loss, grad) = listwise_loss_with_grad(&scores, gold).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        prop_assert!(grad[gold] <= 0.0);
    }

    #[test]
    fn spearman_is_symmetric_bounded_and_rank_based(
        a in proptest::collection::vec(-100.0f64..100.0, 3..30),
        b_seed in proptest::collection::vec(-100.0f64..100.0, 30),
    ) {
        let b = &b_seed[..a.len()];
        prop_assume!(a.iter().any(|&x| x != a[0]) && b.iter().any(|&x| x != b[0]));
        let r = spearman(&a, b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert_eq!(r, spearman(b, &a).unwrap());
        let cubed: Vec<f64> = a.iter().map(|x| x * x * x + 7.0).collect();
        prop_assert!((spearman(&cubed, b).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_bounded_by_distinct_values(seed in any::<u64>()) {
        let tax = ChunkTaxonomy::builtin();
        let corpus = generate_corpus(&GeneratorConfig::new(seed, 6, 4), &tax).unwrap();
        let h = entropy_by_category(&corpus).unwrap();
        for (cat, bits) in h {
            let mut distinct = std::collections::BTreeSet::new();
            for inst in &corpus {
                for t in std::iter::once(&inst.query).chain(&inst.candidates) {
                    distinct.extend(t.chunks.iter().filter(|c| c.category == cat).map(|c| c.text.clone()));
                }
            }
            prop_assert!(bits >= 0.0);
            prop_assert!(bits <= (distinct.len() as f64).log2() + 1e-12);
        }
    }

    #[test]
    fn frozen_weights_ignore_any_gradient(
        g in proptest::collection::vec(-1e3f64..1e3, 4),
        v in -3.0f64..3.0,
        adam in any::<bool>(),
    ) {
        let kind = if adam { OptimizerKind::default() } else { OptimizerKind::Sgd };
        let mut opt = GroupedOptimizer::new(kind, 1e-2, 0.01).unwrap();
        let mut w = AttentionWeights::new(4, v, 10.0, true).unwrap();
        let mut theta = vec![0.1, 0.2];
        for _ in 0..3 {
            opt.step(&mut theta, &g[..2], &mut w, &g).unwrap();
        }
        prop_assert!(w.w.iter().all(|x| x.to_bits() == v.to_bits()));
    }
}
