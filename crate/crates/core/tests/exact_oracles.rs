//! Simulators against exact answers: the transient chain solved by
//! uniformization, and independent closed forms.

use rayon::prelude::*;
use tvm_core::coupling::{coupled_run_monotone, EtaZetaCoupling};
use tvm_core::oracle::{ctmc_mean_ones, death_law, ldp_constants, CtmcModel, InitialLaw};
use tvm_core::{run, Configuration, Engine, FlipRule, RngStream, Simulation, TorusShape};

const TIMES: [f64; 3] = [0.5, 1.0, 2.0];

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// `|A_t|` at [`TIMES`] for `reps` independent runs.
fn sample_ones(shape: &TorusShape, p: f64, engine: Engine, reps: u64, seed: u64) -> Vec<[f64; 3]> {
    (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i).rng();
            let cfg = Configuration::sample_product(shape, p, &mut rng).unwrap();
            let mut sim = Simulation::with_engine(cfg, FlipRule::Threshold, engine);
            let tr = run(&mut sim, 2.0, &mut [], &mut rng);
            let v = tr.ones_at(&TIMES);
            [v[0] as f64, v[1] as f64, v[2] as f64]
        })
        .collect()
}

#[test]
fn engines_match_transient_chain() {
    for r in [3, 4] {
        let shape = TorusShape::new(1, r).unwrap();
        let p = 0.4;
        for (engine, seed) in [(Engine::ActiveSet, 1), (Engine::Uniform, 2)] {
            let runs = sample_ones(&shape, p, engine, 100_000, seed + 10 * r as u64);
            for (j, &t) in TIMES.iter().enumerate() {
                let exact = ctmc_mean_ones(&shape, &InitialLaw::Product(p), t).unwrap();
                let (m, se) = mean_se(&runs.iter().map(|v| v[j]).collect::<Vec<_>>());
                assert!(
                    (m - exact).abs() <= 3.0 * se,
                    "r={r} {engine:?} t={t}: {m} vs {exact} (se {se})"
                );
            }
        }
    }
}

#[test]
fn fixed_state_mean_closed_form() {
    // (1,1,0) on the 3-cycle; the chain lumps by number of ones
    let shape = TorusShape::new(1, 3).unwrap();
    let init = Configuration::parse(&shape, "110").unwrap();
    let exact = ctmc_mean_ones(&shape, &InitialLaw::State(init), 1.0f64).unwrap();
    assert!((exact - (1.8 + 0.2 * (-5.0f64).exp())).abs() < 1e-9);
}

#[test]
fn ctmc_generator_rows_sum_to_zero() {
    let shape = TorusShape::new(2, 3).unwrap();
    let m = CtmcModel::new(&shape).unwrap();
    for s in [0usize, 1, 77, 300, 511] {
        let row = m.generator_row::<f64>(s);
        let sum: f64 = row.iter().map(|(_, q)| q).sum();
        assert!(sum.abs() < 1e-12);
    }
}

#[test]
fn coupled_marginals_have_the_right_laws() {
    let shape = TorusShape::new(1, 4).unwrap();
    let p = 0.5;
    let runs: Vec<(Vec<usize>, Vec<usize>)> = (0..60_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(77, i).rng();
            let cfg = Configuration::sample_product(&shape, p, &mut rng).unwrap();
            let tr = EtaZetaCoupling::new(cfg.clone(), cfg)
                .unwrap()
                .run(2.0, &mut rng);
            (tr.upper.ones_at(&TIMES), tr.lower.ones_at(&TIMES))
        })
        .collect();
    for (j, &t) in TIMES.iter().enumerate() {
        let exact = ctmc_mean_ones(&shape, &InitialLaw::Product(p), t).unwrap();
        let (m, se) = mean_se(&runs.iter().map(|r| r.0[j] as f64).collect::<Vec<_>>());
        // six simultaneous checks here as well
        assert!((m - exact).abs() <= 4.0 * se, "upper t={t}: {m} vs {exact}");
        let law = death_law::<f64>(&shape, p, t).unwrap();
        let (m, se) = mean_se(&runs.iter().map(|r| r.1[j] as f64).collect::<Vec<_>>());
        assert!(
            (m - law.mean).abs() <= 4.0 * se,
            "lower t={t}: {m} vs {}",
            law.mean
        );
    }
}

#[test]
fn monotone_marginals_have_the_right_laws() {
    let shape = TorusShape::new(1, 4).unwrap();
    let (p1, p2) = (0.3, 0.6);
    let runs: Vec<(Vec<usize>, Vec<usize>)> = (0..60_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(88, i).rng();
            let tr = coupled_run_monotone(&shape, p1, p2, 2.0, &mut rng).unwrap();
            (tr.lower.ones_at(&TIMES), tr.upper.ones_at(&TIMES))
        })
        .collect();
    for (j, &t) in TIMES.iter().enumerate() {
        for (p, pick) in [(p1, 0), (p2, 1)] {
            let exact = ctmc_mean_ones(&shape, &InitialLaw::Product(p), t).unwrap();
            let xs: Vec<f64> = runs
                .iter()
                .map(|r| if pick == 0 { r.0[j] } else { r.1[j] } as f64)
                .collect();
            let (m, se) = mean_se(&xs);
            // six simultaneous checks
            assert!((m - exact).abs() <= 4.0 * se, "p={p} t={t}: {m} vs {exact}");
        }
    }
}

#[test]
fn ldp_constants_reference_values() {
    let c = ldp_constants::<f64>(0.3, 2).unwrap();
    assert!((c.k - 0.1743534).abs() < 1e-7);
    let c = ldp_constants::<f64>(0.45, 2).unwrap();
    assert!((c.c - 0.3415484).abs() < 1e-7);
    assert!(c.admissible);
    assert!(!ldp_constants::<f64>(0.1, 2).unwrap().admissible);
    let half = ldp_constants::<f64>(0.5, 3).unwrap();
    assert_eq!(half.k, 0.0);
    let single = ldp_constants::<f32>(0.3, 2).unwrap();
    assert!((f64::from(single.k) - 0.1743534).abs() < 1e-6);
}
