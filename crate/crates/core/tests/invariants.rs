//! Property tests over generated streams and whole runs.

use oec_core::coloring::{check_proper, is_total, Transcript};
use oec_core::crs::CrsScheme;
use oec_core::generators::{gen_binomial, gen_random_regular};
use oec_core::graph_stream::{online_degree_profile, Instance};
use oec_core::partial_coloring::{LevelConfig, PartialColoring};
use oec_core::pipeline::{color_bound, greedy_color, plan_levels, run_pipeline, PlanOverrides};
use oec_core::seed::rng_from_seed;
use proptest::prelude::*;

fn binomial() -> impl Strategy<Value = Instance> {
    (2usize..40, 1usize..40, 0.0f64..1.0, 1usize..12, any::<u64>())
        .prop_map(|(n_off, n_on, p, cap, seed)| gen_binomial(n_off, n_on, p, cap, seed).expect("valid params"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_round_trip_and_degree_bound(inst in binomial()) {
        let text = inst.to_text();
        let back = Instance::from_str(&text).unwrap();
        prop_assert_eq!(&back, &inst);
        prop_assert_eq!(back.to_text(), text);
        let ledger = inst.validate(Some(inst.arrivals.len())).unwrap();
        prop_assert!(ledger.max_degree() <= inst.header.delta);
        prop_assert!(inst.edge_count() <= inst.header.n_offline * inst.header.delta);
    }

    #[test]
    fn regular_profile_is_flat(n in 1usize..30, d in 1usize..8, seed in any::<u64>()) {
        let d = d.min(n);
        let inst = gen_random_regular(n, d, seed).unwrap();
        let ledger = inst.validate(None).unwrap();
        prop_assert_eq!(ledger.degree_profile().into_iter().collect::<Vec<_>>(), vec![(d, n)]);
        prop_assert_eq!(online_degree_profile(&inst).into_iter().collect::<Vec<_>>(), vec![(d, n)]);
        prop_assert_eq!(gen_random_regular(n, d, seed).unwrap().to_text(), inst.to_text());
    }

    #[test]
    fn greedy_total_proper_and_bounded(inst in binomial()) {
        let t = greedy_color(&inst, 0);
        prop_assert!(check_proper(&t).is_ok());
        prop_assert!(is_total(&t));
        let d = t.realized_delta();
        prop_assert!(d == 0 || t.colors_used() <= 2 * d - 1);
    }

    #[test]
    fn partial_level_stays_in_palette(inst in binomial(), eps in 0.05f64..1.0, seed in any::<u64>()) {
        let cfg = LevelConfig::new(inst.header.delta as f64, eps, 0).unwrap();
        let mut alg = PartialColoring::new(inst.header.n_offline, cfg, CrsScheme::ExpClock, rng_from_seed(seed));
        let mut t = Transcript::new(inst.header);
        for a in &inst.arrivals {
            let (rec, step) = alg.color_arrival(&a.neighbors);
            // each live neighbor contributes a unit of marginal mass
            let total: f64 = step.loads.iter().sum();
            let live = step.palette_sizes.iter().filter(|&&s| s > 0).count() as f64;
            prop_assert!((total - live).abs() <= 1e-9 * (1.0 + live));
            t.push(rec);
        }
        prop_assert!(check_proper(&t).is_ok());
        prop_assert!(t.colors_used() <= cfg.palette_size());
        for u in 0..inst.header.n_offline {
            let deg = inst.arrivals.iter().filter(|a| a.neighbors.contains(&(u as u32))).count();
            prop_assert_eq!(alg.level().palettes().len(u as u32), cfg.palette_size() - deg);
        }
    }

    #[test]
    fn pipeline_is_deterministic_and_bounded(seed in any::<u64>(), gen_seed in any::<u64>(), d in 4usize..24) {
        let inst = gen_random_regular(60, d, gen_seed).unwrap();
        let plan = plan_levels(60, d, &PlanOverrides { epsilon: Some(0.1), q: Some(0.55), threshold: Some(2.0) }).unwrap();
        let a = run_pipeline(&inst, &plan, CrsScheme::ExpClock, seed).unwrap();
        let b = run_pipeline(&inst, &plan, CrsScheme::ExpClock, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(is_total(&a));
        prop_assert!(a.colors_used() <= color_bound(&plan, &a));
    }

    #[test]
    fn never_selecting_cascade_matches_greedy_guarantee(gen_seed in any::<u64>(), d in 4usize..16) {
        let inst = gen_random_regular(40, d, gen_seed).unwrap();
        let plan = plan_levels(40, d, &PlanOverrides { epsilon: Some(0.1), q: Some(0.55), threshold: Some(2.0) }).unwrap();
        let t = run_pipeline(&inst, &plan, CrsScheme::Never, 1).unwrap();
        let tail: Vec<u32> = t.edges().filter_map(|(_, _, c, _)| c).collect();
        prop_assert_eq!(tail.len(), inst.edge_count());
        prop_assert!(tail.iter().all(|&c| c >= plan.greedy_base));
        prop_assert!(t.colors_used() <= 2 * d - 1);
    }
}
