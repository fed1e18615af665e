use proptest::prelude::*;

use riskimit::harness::{aggregate, AggregationMode, RunRecord};
use riskimit::risk::{cvar_alpha, cvar_dual_oracle, rho_lambda, summarize, var_alpha, LossBatch, RiskConfig, RiskSummary};
use riskimit::env::truncated_normal;
use riskimit::rng::{derive_seed, seeded};

fn batch() -> impl Strategy<Value = LossBatch> {
    prop::collection::vec((-50.0f64..50.0, 0.01f64..1.0), 1..60).prop_map(|pairs| {
        let (losses, raw): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let total: f64 = raw.iter().sum();
        LossBatch::weighted(losses, raw.iter().map(|w| w / total).collect()).unwrap()
    })
}

fn alpha() -> impl Strategy<Value = f64> {
    0.01f64..=1.0
}

proptest! {
    #[test]
    fn cvar_sits_above_var_and_mean(b in batch(), a in alpha()) {
        let cvar = cvar_alpha(&b, a).unwrap();
        prop_assert!(cvar >= var_alpha(&b, a).unwrap() - 1e-9);
        prop_assert!(cvar >= b.mean() - 1e-9);
        let max = b.losses().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(cvar <= max + 1e-9);
    }

    #[test]
    fn full_tail_is_the_mean(b in batch()) {
        prop_assert!((cvar_alpha(&b, 1.0).unwrap() - b.mean()).abs() < 1e-9);
    }

    #[test]
    fn cvar_is_nonincreasing_in_alpha(b in batch(), a1 in alpha(), a2 in alpha()) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        prop_assert!(cvar_alpha(&b, lo).unwrap() >= cvar_alpha(&b, hi).unwrap() - 1e-9);
    }

    #[test]
    fn dual_density_is_a_feasible_envelope(b in batch(), a in alpha()) {
        let (value, density) = cvar_dual_oracle(&b, a).unwrap();
        prop_assert!((value - cvar_alpha(&b, a).unwrap()).abs() < 1e-9 * (1.0 + value.abs()));
        let mass: f64 = density.weights.iter().zip(&density.zeta).map(|(w, z)| w * z).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        prop_assert!(density.zeta.iter().all(|&z| (-1e-12..=1.0 / a + 1e-9).contains(&z)));
        let xi = density.xi(0.7);
        let xi_mass: f64 = density.weights.iter().zip(&xi).map(|(w, x)| w * x).sum();
        prop_assert!((xi_mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rho_interpolates_mean_and_cvar(b in batch(), a in alpha(), lambda in 0.0f64..20.0) {
        let cfg = RiskConfig::new(a, lambda, 0.99).unwrap();
        let rho = rho_lambda(&b, &cfg).unwrap();
        let (mean, cvar) = (b.mean(), cvar_alpha(&b, a).unwrap());
        prop_assert!(rho >= mean - 1e-9 && rho <= cvar + 1e-9);
        let s = summarize(&b, &cfg).unwrap();
        prop_assert!((s.rho_lambda - rho).abs() < 1e-12 * (1.0 + rho.abs()));
    }

    #[test]
    fn risk_measures_ignore_sample_order(b in batch(), a in alpha(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..b.len()).collect();
        let mut rng = seeded(seed);
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let shuffled = LossBatch::weighted(idx.iter().map(|&i| b.losses()[i]).collect(), idx.iter().map(|&i| b.weight(i)).collect()).unwrap();
        prop_assert!((cvar_alpha(&b, a).unwrap() - cvar_alpha(&shuffled, a).unwrap()).abs() < 1e-9);
        prop_assert_eq!(var_alpha(&b, a).unwrap(), var_alpha(&shuffled, a).unwrap());
    }

    #[test]
    fn truncated_normal_stays_in_bounds(seed in any::<u64>(), bound in 0.1f64..5.0) {
        let mut rng = seeded(seed);
        for _ in 0..100 {
            prop_assert!(truncated_normal(&mut rng, bound).abs() <= bound);
        }
    }

    #[test]
    fn derived_seeds_differ_across_tags(base in any::<u64>(), t1 in 0u64..1000, t2 in 0u64..1000) {
        prop_assume!(t1 != t2);
        prop_assert_ne!(derive_seed(base, t1), derive_seed(base, t2));
    }

    #[test]
    fn report_ignores_run_order(values in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 8), 2..6), seed in any::<u64>()) {
        let runs: Vec<RunRecord> = values
            .iter()
            .enumerate()
            .map(|(i, v)| RunRecord {
                algo: if i % 2 == 0 { "a".into() } else { "b".into() },
                seed: i as u64,
                stats: v.iter().map(|&x| RiskSummary { mean: x, var_alpha: x, cvar_alpha: x + 1.0, rho_lambda: x + 0.5 }).collect(),
            })
            .collect();
        let mut shuffled = runs.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut seeded(seed));
        for mode in [AggregationMode::LastK, AggregationMode::TopMOfLastK] {
            prop_assert_eq!(aggregate(&runs, mode, 5, 2).unwrap(), aggregate(&shuffled, mode, 5, 2).unwrap());
        }
    }
}
