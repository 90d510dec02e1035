mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tailorder::inference::{chain_feasible, fit_constrained_from, fit_groups, joint_loglik, ordering_statistic};
use tailorder::simulation::simulate_exact_with;
use tailorder::{
    bootstrap_functional, fit_constrained, lrt_ordering, ConstraintLevel, ExactModelSpec, ExceedanceData, Family,
    Functional, HtFit, LevelRule, OrderingSpec,
};

fn two_groups(lo: (Family, f64), hi: (Family, f64), n: usize, seed: u64) -> BTreeMap<String, ExceedanceData> {
    let mut rng = tailorder::replicate_rng(seed, 0);
    let mut m = BTreeMap::new();
    for (label, (f, d)) in [("lo", lo), ("hi", hi)] {
        let spec = ExactModelSpec::new(f, d, 1.0, n).unwrap();
        m.insert(label.to_string(), simulate_exact_with(&spec, &mut rng).unwrap());
    }
    m
}

fn spec(data: &BTreeMap<String, ExceedanceData>) -> OrderingSpec {
    let vmax = data.values().map(ExceedanceData::max_cond).fold(0.0, f64::max);
    OrderingSpec::with_extreme_quantiles(vec!["lo".into(), "hi".into()], ConstraintLevel::from_observed_max(vmax))
        .unwrap()
        .with_level_rule(LevelRule::ObservedMax(1.0), data)
        .unwrap()
}

#[test]
fn constrained_fit_beats_random_feasible_probes() {
    // declared order reversed relative to the generating models
    let data = two_groups((Family::Gaussian, 0.7), (Family::Gaussian, 0.4), 250, 31);
    let spec = spec(&data);
    let unc = fit_groups(&data, &spec).unwrap();
    let con = fit_constrained_from(&data, &spec, &unc).unwrap();
    assert!(chain_feasible(&con, &spec));
    let best = joint_loglik(&con);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut probes, mut tries) = (0, 0);
    while probes < 500 && tries < 200_000 {
        tries += 1;
        let near = probes % 2 == 0;
        let mut fits = BTreeMap::new();
        let mut ok = true;
        for (k, f) in &con {
            let (a, b) = if near {
                (
                    f.params.alpha + rng.gen_range(-0.1..0.1),
                    f.params.beta + rng.gen_range(-0.1..0.1),
                )
            } else {
                (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..0.999))
            };
            match HtFit::at(&data[k], a.clamp(-1.0, 1.0), b.min(1.0 - 1e-6)) {
                Ok(h) => {
                    fits.insert(k.clone(), h);
                }
                Err(_) => ok = false,
            }
        }
        if ok && chain_feasible(&fits, &spec) {
            probes += 1;
            assert!(
                joint_loglik(&fits) <= best + 1e-6,
                "probe beats fit: {} > {best}",
                joint_loglik(&fits)
            );
        }
    }
    assert_eq!(probes, 500, "only {probes} feasible probes in {tries} tries");
}

#[test]
fn active_constraints_move_the_fit() {
    let data = two_groups((Family::Gaussian, 0.8), (Family::Gaussian, 0.2), 250, 4);
    let spec = spec(&data);
    let unc = fit_groups(&data, &spec).unwrap();
    assert!(unc["lo"].params.alpha > unc["hi"].params.alpha);
    let con = fit_constrained_from(&data, &spec, &unc).unwrap();
    assert!(con.iter().any(|(k, f)| f.params != unc[k].params));
}

#[test]
fn inactive_constraints_leave_the_fit() {
    let data = two_groups((Family::Gaussian, 0.2), (Family::Gaussian, 0.8), 250, 4);
    let spec = spec(&data);
    let unc = fit_groups(&data, &spec).unwrap();
    if chain_feasible(&unc, &spec) {
        let con = fit_constrained(&data, &spec).unwrap();
        assert!((joint_loglik(&con) - joint_loglik(&unc)).abs() < 1e-6);
    }
}

#[test]
fn four_group_chain_is_feasible_and_nested() {
    let mut rng = tailorder::replicate_rng(12, 0);
    let mut data = BTreeMap::new();
    let labels = ["a", "b", "c", "d"];
    for (l, rho) in labels.iter().zip([0.5, 0.3, 0.6, 0.4]) {
        let s = ExactModelSpec::new(Family::Gaussian, rho, 1.0, 200).unwrap();
        data.insert(l.to_string(), simulate_exact_with(&s, &mut rng).unwrap());
    }
    let vmax = data.values().map(ExceedanceData::max_cond).fold(0.0, f64::max);
    let spec = OrderingSpec::with_extreme_quantiles(
        labels.iter().map(|s| s.to_string()).collect(),
        ConstraintLevel::from_observed_max(vmax),
    )
    .unwrap();
    let unc = fit_groups(&data, &spec).unwrap();
    let con = fit_constrained_from(&data, &spec, &unc).unwrap();
    assert!(chain_feasible(&con, &spec));
    assert!(joint_loglik(&con) <= joint_loglik(&unc) + 1e-6);
}

#[test]
fn lrt_is_deterministic_and_corrected() {
    let data = two_groups((Family::Gaussian, 0.5), (Family::Gaussian, 0.5), 120, 8);
    let spec = spec(&data);
    let a = lrt_ordering(&data, &spec, 99, 17).unwrap();
    let b = lrt_ordering(&data, &spec, 99, 17).unwrap();
    assert_eq!(a, b);
    assert!(a.p_value > 0.0 && a.p_value <= 1.0);
    let k = a.null_sample.iter().filter(|s| **s >= a.statistic).count();
    assert_eq!(a.p_value, (1 + k) as f64 / 100.0);
    assert!(a.null_sample.iter().all(|s| *s >= 0.0));
}

#[test]
fn bootstrap_interval_covers_generating_alpha() {
    let trials = 50;
    let mut covered = 0;
    for t in 0..trials {
        let data = two_groups((Family::Gaussian, 0.3), (Family::Gaussian, 0.8), 150, 100 + t);
        let spec = spec(&data);
        let f = Functional::Alpha { group: "hi".into() };
        let ci = bootstrap_functional(&data, &spec, &f, 100, t).unwrap();
        if ci.lower95 <= 0.64 && 0.64 <= ci.upper95 {
            covered += 1;
        }
    }
    assert!(covered as f64 >= 0.9 * trials as f64, "covered {covered}/{trials}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn nesting_and_feasibility(seed in 0u64..1_000, r1 in 0.2f64..0.8, r2 in 0.2f64..0.8) {
        let data = two_groups((Family::Gaussian, r1), (Family::Gaussian, r2), 150, seed);
        let spec = spec(&data);
        let (stat, unc, con) = ordering_statistic(&data, &spec).unwrap();
        prop_assert!(stat >= 0.0);
        prop_assert!(chain_feasible(&con, &spec));
        prop_assert!(joint_loglik(&con) <= joint_loglik(&unc) + 1e-6);
    }
}
