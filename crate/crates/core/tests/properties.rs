use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tvm_core::ballgame::{approach2_move, approach3_init, boxes_from_config, BoxState};
use tvm_core::coupling::{dominates, sample_monotone_pair};
use tvm_core::harness::{fmt_f64, quantiles, stats, time_grid};
use tvm_core::{Configuration, TorusShape};

fn shape() -> impl Strategy<Value = TorusShape> {
    prop_oneof![(1usize..=3, 2usize..=5), (4usize..=5, 2usize..=3)]
        .prop_map(|(d, r)| TorusShape::new(d, r).unwrap())
}

fn config() -> impl Strategy<Value = Configuration> {
    shape().prop_flat_map(|s| {
        let n = s.n();
        proptest::collection::vec(0u8..=1, n)
            .prop_map(move |bits| Configuration::from_bits(&s, &bits).unwrap())
    })
}

proptest! {
    #[test]
    fn flips_keep_counts_consistent(mut cfg in config(), picks in proptest::collection::vec(any::<usize>(), 1..40)) {
        let n = cfg.shape().n();
        for k in picks {
            let x = cfg.shape().vertex(k % n).unwrap();
            let before = cfg.ones_count();
            cfg.flip(x);
            prop_assert_eq!(cfg.ones_count().abs_diff(before), 1);
        }
        prop_assert!(cfg.verify_counts().is_ok());
        prop_assert_eq!(boxes_from_config(&cfg).total(), n as u64);
    }

    #[test]
    fn boxes_count_ones_neighbors(cfg in config()) {
        let b = boxes_from_config(&cfg);
        for x in cfg.shape().vertices() {
            prop_assert!((cfg.ones_nbr(x) as usize) < b.counts.len());
        }
        let weighted: u64 = b.counts.iter().enumerate().map(|(k, c)| k as u64 * c).sum();
        prop_assert_eq!(weighted, cfg.shape().degree() as u64 * cfg.ones_count() as u64);
    }

    #[test]
    fn approach2_conserves_and_grows(counts in proptest::collection::vec(0u64..30, 3usize..=13).prop_filter("odd", |c| c.len() % 2 == 1), seed in any::<u64>()) {
        let mut b = BoxState::from_counts(counts).unwrap();
        let total = b.total();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let before = b.c_hat();
            approach2_move(&mut b, &mut rng);
            prop_assert_eq!(b.total(), total);
            prop_assert!(b.c_hat() >= before);
        }
    }

    #[test]
    fn approach3_lumps_dominate(cfg in config(), p in 0.01f64..0.49) {
        let b = boxes_from_config(&cfg);
        let c = approach3_init(b.clone(), p).unwrap();
        prop_assert_eq!(c.total(), b.total());
        for k in 0..b.counts.len() {
            prop_assert!(c.at_least(k) >= b.at_least(k));
        }
    }

    #[test]
    fn monotone_pairs_are_ordered(s in shape(), p1 in 0.0f64..=1.0, dp in 0.0f64..=1.0, seed in any::<u64>()) {
        let p2 = p1 + (1.0 - p1) * dp;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = sample_monotone_pair(&s, p1, p2, &mut rng).unwrap();
        prop_assert!(dominates(&hi, &lo));
    }

    #[test]
    fn summary_stats_are_sane(xs in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
        let s = stats(&xs);
        let q = quantiles(&xs);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(lo <= q.q10 && q.q10 <= q.q50 && q.q50 <= q.q90 && q.q90 <= q.max);
        prop_assert_eq!(q.q50, s.median);
        prop_assert!(s.mean >= lo - 1e-6 && s.mean <= q.max + 1e-6);
        prop_assert!(s.se >= 0.0);
    }

    #[test]
    fn grid_spans_horizon(h in 1e-3f64..100.0, points in 2usize..200) {
        let g = time_grid(h, points);
        prop_assert_eq!(g.len(), points);
        prop_assert_eq!(g[0], 0.0);
        prop_assert_eq!(*g.last().unwrap(), h);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn csv_floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}
