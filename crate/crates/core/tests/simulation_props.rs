mod common;

use tailorder::margins::{laplace_quantile, GpdParams, MarginalModel};
use tailorder::simulation::{sample_from_fit, DependentModel, ModelChoice, StudyPair};
use tailorder::stats::median;
use tailorder::{
    fit_unconstrained, ht_sample, replicate_rng, run_rmse_study, sample_exact_residual, simulate_exact, ExactModelSpec,
    ExceedanceData, Family, HtFit, StudyConfig,
};

fn logistic_cdf(z: f64, lam: f64) -> f64 {
    (1.0 + (-z / lam).exp()).powf(lam - 1.0)
}

#[test]
fn embedded_logistic_fit_matches_numerical_integration() {
    let lam = 0.6;
    let u = 1.0;
    // residuals on an exact quantile grid of G
    let m = 100_000;
    let z: Vec<f64> = (0..m)
        .map(|i| sample_exact_residual(Family::Logistic, lam, (i as f64 + 0.5) / m as f64).unwrap())
        .collect();
    let y_cond: Vec<f64> = (0..m).map(|i| u + 1.0 + (i % 7) as f64).collect();
    let y_dep: Vec<f64> = y_cond.iter().zip(&z).map(|(x, z)| x + z).collect();
    let data = ExceedanceData::new(y_cond, y_dep, u).unwrap();
    let fit = HtFit::at(&data, 1.0, 0.0).unwrap();

    let n = 200_000;
    let (_, ys) = sample_from_fit(&fit, u, n, &mut replicate_rng(3, 0));
    for &y in &[1.5, 3.0, 5.0] {
        let est = ys.iter().filter(|v| **v > y).count() as f64 / n as f64;
        // P(Y2 > y | Y1 > u) = int_u^inf e^{-(x-u)} (1 - G(y - x)) dx
        let (steps, top) = (200_000, 60.0);
        let h = top / steps as f64;
        let exact: f64 = (0..steps)
            .map(|i| {
                let x = u + (i as f64 + 0.5) * h;
                (-(x - u)).exp() * (1.0 - logistic_cdf(y - x, lam)) * h
            })
            .sum();
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((est - exact).abs() < 3.0 * se + 1e-4, "y={y}: {est} vs {exact}");
    }
}

#[test]
fn ht_sample_conditions_on_the_threshold() {
    let spec = ExactModelSpec::new(Family::Gaussian, 0.6, 1.0, 400).unwrap();
    let d = simulate_exact(&spec, 2).unwrap();
    let fit = fit_unconstrained(&d).unwrap();
    let body: Vec<f64> = (0..200).map(|i| i as f64 / 10.0).collect();
    let margin = MarginalModel::new(body, 15.0, GpdParams::new(2.0, 0.1).unwrap());
    let cut = margin.from_laplace(1.0);
    let draws = ht_sample(
        &margin,
        &[DependentModel {
            fit,
            margin: margin.clone(),
        }],
        1.0,
        2_000,
        9,
    )
    .unwrap();
    assert_eq!(draws.len(), 2_000);
    assert!(draws.iter().all(|r| r.len() == 2 && r[0] >= cut));
}

#[test]
fn median_alpha_is_consistent_at_desk_scale() {
    for (family, dep, alpha) in [
        (Family::Logistic, 0.6, 1.0),
        (Family::InvertedLogistic, 0.5, 0.0),
        (Family::Gaussian, 0.6, 0.36),
    ] {
        let u = laplace_quantile(0.9).unwrap();
        let spec = ExactModelSpec::new(family, dep, u, 500).unwrap();
        let alphas: Vec<f64> = (0..50)
            .map(|s| {
                fit_unconstrained(&simulate_exact(&spec, 1000 + s).unwrap())
                    .unwrap()
                    .params
                    .alpha
            })
            .collect();
        let m = median(&alphas);
        assert!((m - alpha).abs() < 0.1, "{family}: median alpha {m}");
    }
}

#[test]
fn study_is_seed_deterministic_and_shaped() {
    let mut cfg = StudyConfig::desk(5);
    cfg.pairs = vec![StudyPair {
        higher: ModelChoice::new(Family::Gaussian, 0.7),
        lower: ModelChoice::new(Family::Gaussian, 0.3),
    }];
    cfg.n_replicates = 6;
    cfg.n_per_sample = 200;
    let a = run_rmse_study(&cfg).unwrap();
    assert_eq!(a, run_rmse_study(&cfg).unwrap());
    // groups x q x levels x comparisons
    assert_eq!(a.ratios.len(), 2 * 2 * 2 * 3);
    assert_eq!(a.change_percent.len(), 2 * 3);
    assert!(a.ratios.iter().all(|r| r.ratio > 0.0 && r.ratio.is_finite()));
}

#[test]
fn desk_preset_covers_all_ten_columns() {
    let cfg = StudyConfig::desk(1);
    let mut labels: Vec<String> = cfg
        .pairs
        .iter()
        .flat_map(|p| [p.higher.label(), p.lower.label()])
        .collect();
    labels.sort();
    labels.dedup();
    assert_eq!(labels.len(), 10);
    assert_eq!(StudyConfig::full(1).n_replicates, 1000);
}
