//! Cross-module properties exercised through the public API.

use proptest::prelude::*;

use gamefam::analysis::{evaluate_mae, robustness_map};
use gamefam::baggfn::{generate_family, BaggfnFamily, GenerationConfig, ParameterRange};
use gamefam::game::{deviation_payoffs_enum, Mixture};
use gamefam::nash::{find_nash_family, ExactOracle, NashSettings};
use gamefam::pipeline::{run_algorithm_one, RunOptions, SamplingConfig};
use gamefam::report::fmt_f64;
use gamefam::sampling::symmetric_dirichlet;
use gamefam::seeding;
use gamefam::surrogate::{init_model, load_model, save_model, NetworkSpec, TrainSettings};

fn players_family(strategies: usize, functions: usize, min: u32, max: u32, seed: u64) -> BaggfnFamily {
    generate_family(&GenerationConfig::new(strategies, functions, ParameterRange::PlayerCount { min, max }, seed))
        .expect("valid family")
}

fn er_family(strategies: usize, functions: usize, players: u32, seed: u64) -> BaggfnFamily {
    let mut cfg =
        GenerationConfig::new(strategies, functions, ParameterRange::ErThreshold { min: 0.0, max: 1.0 }, seed);
    cfg.players = players;
    generate_family(&cfg).expect("valid family")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn binomial_oracle_matches_enumeration(
        seed in any::<u64>(),
        strategies in 2usize..=4,
        functions in 1usize..=5,
        players in 2u32..=8,
        er in any::<bool>(),
        t in 0.0f64..=1.0,
    ) {
        let (fam, v) = if er {
            (er_family(strategies, functions, players, seed), t)
        } else {
            (players_family(strategies, functions, 2, players, seed), players as f64)
        };
        let mix = symmetric_dirichlet(strategies, 1.0, &mut seeding::rng(seed ^ 1));
        let fast = fam.deviation_payoffs_binomial(v, &mix).unwrap();
        let slow = deviation_payoffs_enum(
            |j, s| fam.pure_payoffs(v, s).unwrap().values()[j],
            strategies,
            fam.players_at(v).unwrap(),
            &mix,
        ).unwrap();
        for (a, b) in fast.values().iter().zip(slow.values()) {
            prop_assert!((a - b).abs() / fam.payoff_range() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn player_instances_are_subtables(seed in any::<u64>(), p in 3u32..=15, mseed in any::<u64>()) {
        let fam = players_family(3, 4, 3, 15, seed);
        let solo = fam.standalone_players_instance(p).unwrap();
        let mix = symmetric_dirichlet(3, 0.8, &mut seeding::rng(mseed));
        let a = fam.deviation_payoffs_binomial(p as f64, &mix).unwrap();
        let b = solo.deviation_payoffs_binomial(p as f64, &mix).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn er_edges_are_nested(seed in any::<u64>(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let fam = er_family(4, 6, 10, seed);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = fam.edges_at(lo).unwrap();
        let large = fam.edges_at(hi).unwrap();
        for (x, y) in small.iter().flatten().zip(large.iter().flatten()) {
            prop_assert!(!x || *y);
        }
    }

    #[test]
    fn generation_is_a_function_of_seed(seed in any::<u64>()) {
        let a = players_family(3, 5, 4, 9, seed);
        let b = players_family(3, 5, 4, 9, seed);
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn float_format_round_trips(x in any::<f64>()) {
        let s = fmt_f64(x);
        let back: f64 = s.parse().unwrap();
        if x.is_nan() {
            prop_assert!(back.is_nan());
        } else {
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn model_files_round_trip(
        seed in any::<u64>(),
        trunk in proptest::collection::vec(1usize..12, 1..4),
        head in 1usize..8,
        heads in 1usize..5,
        skip in any::<bool>(),
        vpl in any::<bool>(),
    ) {
        let spec = NetworkSpec {
            trunk_widths: trunk,
            head_width: head,
            num_heads: heads,
            skip_connections: skip,
            includes_parameter_input: vpl,
        };
        let model = init_model(&spec, (2.0, 9.0), (-1.5, 3.0), seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gfsm");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        prop_assert_eq!(back.spec, model.spec);
        for (a, b) in back.network.layers().iter().zip(model.network.layers()) {
            prop_assert_eq!(&a.w, &b.w);
            prop_assert_eq!(&a.b, &b.b);
        }
    }

    #[test]
    fn robustness_frequency_is_monotone_in_epsilon(seed in any::<u64>(), e1 in 0.0f64..0.5, e2 in 0.0f64..0.5) {
        let fam = players_family(3, 4, 4, 8, seed);
        let grid = fam.parameter.grid(5);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let oracle = ExactOracle(&fam);
        let a = robustness_map(&oracle, &grid, 6, lo).unwrap();
        let b = robustness_map(&oracle, &grid, 6, hi).unwrap();
        for (x, y) in a.freq.iter().zip(&b.freq) {
            prop_assert!(x <= y && *y <= grid.len());
        }
    }

    #[test]
    fn exact_oracle_has_zero_mae(seed in any::<u64>()) {
        let fam = players_family(3, 4, 4, 8, seed);
        let grid = fam.parameter.grid(5);
        let report = evaluate_mae(&ExactOracle(&fam), &fam, &grid, 5).unwrap();
        prop_assert_eq!(report.overall_mae, 0.0);
    }

    #[test]
    fn candidates_at_an_instance_ignore_the_rest_of_the_grid(seed in any::<u64>()) {
        let fam = players_family(3, 4, 4, 8, seed);
        let settings = NashSettings { restarts_per_instance: 4, iterations: 60, ..NashSettings::default() };
        let oracle = ExactOracle(&fam);
        let all = find_nash_family(&oracle, &fam.parameter, &[4.0, 6.0, 8.0], &settings, seed).unwrap();
        let one = find_nash_family(&oracle, &fam.parameter, &[6.0], &settings, seed).unwrap();
        let at6: Vec<_> = all.into_iter().filter(|c| c.v == 6.0).collect();
        prop_assert_eq!(at6, one);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn dataset_rows_follow_the_budget(seed in any::<u64>(), init in 20usize..60, resamp in 5usize..20, iters in 0usize..3) {
        let fam = players_family(3, 3, 4, 7, seed);
        let spec = NetworkSpec { trunk_widths: vec![8], head_width: 4, num_heads: 3, skip_connections: true, includes_parameter_input: true };
        let config = SamplingConfig {
            init_queries: init,
            resamp_queries: resamp,
            num_iters: iters,
            nash: NashSettings { restarts_per_instance: 3, iterations: 20, ..NashSettings::default() },
            ..SamplingConfig::new(init)
        };
        let train = TrainSettings { epochs: 1, ..TrainSettings::default() };
        let out = run_algorithm_one(&fam, &spec, &train, &config, seed, RunOptions::default()).unwrap();
        prop_assert_eq!(out.iterations.len(), iters + 1);
        for rec in &out.iterations {
            prop_assert_eq!(rec.rows, init + rec.iteration * resamp);
        }
        prop_assert_eq!(out.dataset.len(), init + iters * resamp);
        prop_assert_eq!(out.dataset.ledger.total(), out.dataset.len());
        prop_assert_eq!(out.dataset.ledger.deliberate_duplicates(), 0);
    }
}

#[test]
fn uniform_mixture_is_a_mixture_for_every_size() {
    for n in 1..10 {
        let u = Mixture::uniform(n);
        assert!(Mixture::new(u.probs().to_vec()).is_ok());
    }
}
