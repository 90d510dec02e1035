//! Sampling from fitted conditional models, exact-model simulation for the
//! logistic, inverted logistic and Gaussian copulas, and the Monte Carlo
//! study comparing unconstrained, asymptotic-dependence constrained and
//! ordering constrained conditional quantile estimates.

use std::collections::BTreeMap;
use std::fmt;

use rand::distributions::Open01;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::constraints::LevelRule;
use crate::error::{Error, Result};
use crate::ht::{fit_unconstrained, ExceedanceData, HtFit};
use crate::inference::{fit_constrained_from, fit_keef_from, OrderingSpec};
use crate::margins::{laplace_quantile, sample_laplace_above, MarginalModel};
use crate::replicate_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    InvertedLogistic,
    Gaussian,
    /// Independent Laplace margins: `alpha = beta = 0` and a Laplace `G`.
    /// Stands in for the Gaussian copula at `rho = 0`, where the Gaussian
    /// residual law collapses to a point mass.
    Independence,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Logistic => "logistic",
            Family::InvertedLogistic => "inverted_logistic",
            Family::Gaussian => "gaussian",
            Family::Independence => "independence",
        }
    }

    fn check(self, dep: f64) -> Result<()> {
        let ok = match self {
            Family::Logistic | Family::InvertedLogistic => dep > 0.0 && dep <= 1.0,
            Family::Gaussian => (0.0..1.0).contains(&dep),
            Family::Independence => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "dependence parameter {dep} outside the {} range",
                self.name()
            )))
        }
    }

    /// The normalising pair `(alpha, beta)` of the limiting conditional law.
    pub fn alpha_beta(self, dep: f64) -> Result<(f64, f64)> {
        self.check(dep)?;
        Ok(match self {
            Family::Logistic => (1.0, 0.0),
            Family::InvertedLogistic => (0.0, 1.0 - dep),
            Family::Gaussian => (dep * dep, 0.5),
            Family::Independence => (0.0, 0.0),
        })
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(Family::Logistic),
            "inverted_logistic" | "inverted-logistic" => Ok(Family::InvertedLogistic),
            "gaussian" => Ok(Family::Gaussian),
            "independence" => Ok(Family::Independence),
            other => Err(format!(
                "unknown family `{other}`; expected logistic, inverted_logistic, gaussian or independence"
            )),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Quantile function `G^{-1}` of the limiting residual distribution.
pub fn sample_exact_residual(family: Family, dep: f64, u01: f64) -> Result<f64> {
    family.check(dep)?;
    if !(u01 > 0.0 && u01 < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0,1), got {u01}")));
    }
    Ok(match family {
        Family::Logistic => {
            if dep == 1.0 {
                return Err(Error::Domain(
                    "the logistic residual law is undefined at lambda = 1".into(),
                ));
            }
            -dep * (u01.powf(1.0 / (dep - 1.0)) - 1.0).ln()
        }
        Family::InvertedLogistic => (-(-u01).ln_1p() / dep).powf(dep),
        Family::Gaussian => {
            let sd = (2.0 * dep * dep * (1.0 - dep * dep)).sqrt();
            if sd == 0.0 {
                0.0
            } else {
                Normal::new(0.0, sd).expect("positive sd").inverse_cdf(u01)
            }
        }
        Family::Independence => laplace_quantile(u01)?,
    })
}

/// `alpha x + x^beta G^{-1}(q)` for the exact model.
pub fn true_conditional_quantile(family: Family, dep: f64, x: f64, q: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("conditioning level must be positive, got {x}")));
    }
    let (a, b) = family.alpha_beta(dep)?;
    Ok(a * x + x.powf(b) * sample_exact_residual(family, dep, q)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactModelSpec {
    pub family: Family,
    pub dep: f64,
    pub threshold_u: f64,
    pub n: usize,
}

impl ExactModelSpec {
    pub fn new(family: Family, dep: f64, threshold_u: f64, n: usize) -> Result<Self> {
        family.check(dep)?;
        if family == Family::Logistic && dep == 1.0 {
            return Err(Error::Domain(
                "the logistic residual law is undefined at lambda = 1".into(),
            ));
        }
        if n == 0 || !(threshold_u >= 0.0) {
            return Err(Error::Domain("need n > 0 and a non-negative threshold".into()));
        }
        Ok(Self {
            family,
            dep,
            threshold_u,
            n,
        })
    }
}

/// Pairs from the exact conditional model, conditioning values above `u`.
pub fn simulate_exact_with<R: Rng + ?Sized>(spec: &ExactModelSpec, rng: &mut R) -> Result<ExceedanceData> {
    let (a, b) = spec.family.alpha_beta(spec.dep)?;
    let mut y_cond = Vec::with_capacity(spec.n);
    let mut y_dep = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x = sample_laplace_above(spec.threshold_u, rng);
        let z = sample_exact_residual(spec.family, spec.dep, rng.sample(Open01))?;
        y_cond.push(x);
        y_dep.push(a * x + x.powf(b) * z);
    }
    ExceedanceData::new(y_cond, y_dep, spec.threshold_u)
}

pub fn simulate_exact(spec: &ExactModelSpec, seed: u64) -> Result<ExceedanceData> {
    simulate_exact_with(spec, &mut replicate_rng(seed, 0))
}

/// Laplace-scale draws from a fitted model: conditioning values from the
/// Laplace tail above `u`, residuals resampled from the fit.
pub fn sample_from_fit<R: Rng + ?Sized>(fit: &HtFit, u: f64, n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let (a, b) = (fit.params.alpha, fit.params.beta);
    let m = fit.residuals.len();
    (0..n)
        .map(|_| {
            let x = sample_laplace_above(u, rng);
            let z = fit.residuals[rng.gen_range(0..m)];
            (x, a * x + x.powf(b) * z)
        })
        .unzip()
}

/// One dependent variable of a fitted conditional model together with its
/// marginal model.
#[derive(Debug, Clone)]
pub struct DependentModel {
    pub fit: HtFit,
    pub margin: MarginalModel,
}

/// Draws on the original scale given that the conditioning variable exceeds
/// its Laplace-scale threshold `u`.
///
/// Each row is `[conditioning, dependent_1, ..., dependent_k]`. Residual
/// vectors are resampled jointly by observation index, so all fits must
/// come from the same conditioning exceedances.
pub fn ht_sample(
    conditioning: &MarginalModel,
    dependents: &[DependentModel],
    u: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let m = match dependents.first() {
        Some(d) => d.fit.residuals.len(),
        None => return Err(Error::Domain("need at least one dependent variable".into())),
    };
    if dependents.iter().any(|d| d.fit.residuals.len() != m) || m == 0 {
        return Err(Error::Domain("dependent fits must share the same exceedances".into()));
    }
    let mut rng = replicate_rng(seed, 0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_laplace_above(u, &mut rng);
        let idx = rng.gen_range(0..m);
        let mut row = Vec::with_capacity(dependents.len() + 1);
        row.push(conditioning.from_laplace(x));
        for d in dependents {
            let y = d.fit.params.alpha * x + x.powf(d.fit.params.beta) * d.fit.residuals[idx];
            row.push(d.margin.from_laplace(y));
        }
        out.push(row);
    }
    Ok(out)
}

/// One exact model in the study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub family: Family,
    pub dep: f64,
    /// Column label, e.g. `gaussian:0` for the independence stand-in.
    #[serde(skip)]
    label_family: Option<Family>,
}

impl ModelChoice {
    pub fn new(family: Family, dep: f64) -> Self {
        Self {
            family,
            dep,
            label_family: None,
        }
    }

    /// The Gaussian copula at `rho = 0`, simulated as independence.
    pub fn gaussian_independent() -> Self {
        Self {
            family: Family::Independence,
            dep: 0.0,
            label_family: Some(Family::Gaussian),
        }
    }

    pub fn label(&self) -> String {
        format!("{}:{}", self.label_family.unwrap_or(self.family), self.dep)
    }
}

/// Two exact models whose conditional tails are ordered, `higher` above `lower`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyPair {
    pub higher: ModelChoice,
    pub lower: ModelChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub pairs: Vec<StudyPair>,
    pub n_per_sample: usize,
    pub n_replicates: usize,
    pub quantiles: Vec<f64>,
    /// Conditioning levels as standard Laplace probabilities.
    pub conditioning_levels: Vec<f64>,
    /// Exceedance threshold as a standard Laplace probability.
    pub threshold_p: f64,
    /// Residual quantiles at which constraints are imposed.
    pub constraint_qs: Vec<f64>,
    /// Constraint level, from the largest conditioning value of a replicate.
    pub level_rule: LevelRule,
    pub seed: u64,
}

/// Fraction of failed replicates above which the study aborts.
const MAX_FAILURE_RATE: f64 = 0.05;
/// Parameter differences above this count as a changed estimate.
const CHANGE_TOL: f64 = 1e-6;

impl StudyConfig {
    pub const DESK_PRESET: &'static str = "paper-table4-desk";

    /// The pairs of the published study at desk scale (`m = 200`).
    pub fn desk(seed: u64) -> Self {
        use Family::*;
        let pair = |h: ModelChoice, l: ModelChoice| StudyPair { higher: h, lower: l };
        let m = ModelChoice::new;
        Self {
            pairs: vec![
                pair(m(Logistic, 0.6), m(Logistic, 0.9)),
                pair(m(InvertedLogistic, 0.3), m(InvertedLogistic, 0.7)),
                pair(m(InvertedLogistic, 0.415), m(InvertedLogistic, 1.0)),
                pair(m(Gaussian, 0.7), m(Gaussian, 0.3)),
                pair(m(Gaussian, 0.5), ModelChoice::gaussian_independent()),
            ],
            n_per_sample: 500,
            n_replicates: 200,
            quantiles: vec![0.2, 0.8],
            conditioning_levels: vec![0.95, 0.999],
            threshold_p: 0.9,
            constraint_qs: vec![0.0, 1.0],
            level_rule: LevelRule::ObservedMax(5.0),
            seed,
        }
    }

    /// As [`StudyConfig::desk`] with the published `m = 1000`.
    pub fn full(seed: u64) -> Self {
        Self {
            n_replicates: 1000,
            ..Self::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() || self.n_per_sample < 10 || self.n_replicates == 0 {
            return Err(Error::Domain("study needs pairs, N >= 10 and m > 0".into()));
        }
        let open = |p: &f64| *p > 0.0 && *p < 1.0;
        if !self.quantiles.iter().all(open)
            || !self.conditioning_levels.iter().all(open)
            || !open(&self.threshold_p)
            || self.threshold_p < 0.5
        {
            return Err(Error::Domain(
                "quantiles and levels must lie in (0,1), threshold probability in [0.5,1)".into(),
            ));
        }
        if self.constraint_qs.is_empty() || self.constraint_qs.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::Domain("constraint quantiles must lie in [0,1]".into()));
        }
        for p in &self.pairs {
            for c in [p.higher, p.lower] {
                ExactModelSpec::new(c.family, c.dep, 0.0, 1)?;
            }
        }
        Ok(())
    }
}

/// The three fitted models compared in the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "HT")]
    Ht,
    #[serde(rename = "AD")]
    Ad,
    #[serde(rename = "SO")]
    So,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Ht, Model::Ad, Model::So];
    pub const COMPARISONS: [(Model, Model); 3] =
        [(Model::Ad, Model::Ht), (Model::So, Model::Ht), (Model::So, Model::Ad)];

    pub fn name(self) -> &'static str {
        match self {
            Model::Ht => "HT",
            Model::Ad => "AD",
            Model::So => "SO",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseEntry {
    pub spec: String,
    pub model: Model,
    pub q: f64,
    pub level: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub spec: String,
    /// e.g. `SO/HT`.
    pub comparison: String,
    pub q: f64,
    pub level: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEntry {
    pub spec: String,
    /// e.g. `AD-HT`.
    pub comparison: String,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseTable {
    pub rmse: Vec<RmseEntry>,
    pub ratios: Vec<RatioEntry>,
    pub change_percent: Vec<ChangeEntry>,
    /// Failed replicates per pair, keyed by `higher|lower` labels.
    pub failures: BTreeMap<String, usize>,
    pub n_replicates: usize,
}

impl RmseTable {
    pub fn ratio(&self, spec: &str, comparison: &str, q: f64, level: f64) -> Option<f64> {
        self.ratios
            .iter()
            .find(|r| r.spec == spec && r.comparison == comparison && r.q == q && r.level == level)
            .map(|r| r.ratio)
    }

    pub fn changed(&self, spec: &str, comparison: &str) -> Option<f64> {
        self.change_percent
            .iter()
            .find(|c| c.spec == spec && c.comparison == comparison)
            .map(|c| c.percent)
    }
}

/// Estimates of one replicate: `[group][model] -> (alpha, beta, quantile grid)`.
struct Replicate {
    params: [[(f64, f64); 3]; 2],
    estimates: [[Vec<f64>; 3]; 2],
}

fn run_replicate(cfg: &StudyConfig, pair: &StudyPair, u: f64, seed: u64, index: u64) -> Result<Replicate> {
    let mut rng = replicate_rng(seed, index);
    let choices = [pair.lower, pair.higher];
    let mut data = BTreeMap::new();
    for (g, c) in choices.iter().enumerate() {
        let spec = ExactModelSpec::new(c.family, c.dep, u, cfg.n_per_sample)?;
        data.insert(format!("g{g}"), simulate_exact_with(&spec, &mut rng)?);
    }
    let v_obs = data
        .values()
        .map(ExceedanceData::max_cond)
        .fold(f64::NEG_INFINITY, f64::max);
    let level = cfg.level_rule.level(v_obs)?;
    let spec = OrderingSpec::new(vec!["g0".into(), "g1".into()], level, cfg.constraint_qs.clone())?;

    let mut ht = BTreeMap::new();
    for (k, d) in &data {
        ht.insert(k.clone(), fit_unconstrained(d)?);
    }
    let mut ad = BTreeMap::new();
    for (k, d) in &data {
        ad.insert(k.clone(), fit_keef_from(d, &level, &cfg.constraint_qs, &ht[k])?);
    }
    let so = fit_constrained_from(&data, &spec, &ht)?;

    let xs: Vec<f64> = cfg
        .conditioning_levels
        .iter()
        .map(|&p| laplace_quantile(p))
        .collect::<Result<_>>()?;
    let grid = |f: &HtFit| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(cfg.quantiles.len() * xs.len());
        for &q in &cfg.quantiles {
            for &x in &xs {
                out.push(f.conditional_quantile(x, q)?);
            }
        }
        Ok(out)
    };
    let mut params = [[(0.0, 0.0); 3]; 2];
    let mut estimates: [[Vec<f64>; 3]; 2] = Default::default();
    for g in 0..2 {
        let key = format!("g{g}");
        for (m, fits) in [&ht, &ad, &so].into_iter().enumerate() {
            let f = &fits[&key];
            params[g][m] = (f.params.alpha, f.params.beta);
            estimates[g][m] = grid(f)?;
        }
    }
    Ok(Replicate { params, estimates })
}

/// Monte Carlo RMSE of conditional quantile estimates under the three
/// models, the ratios between models, and how often constrained fits differ.
pub fn run_rmse_study(cfg: &StudyConfig) -> Result<RmseTable> {
    cfg.validate()?;
    let u = laplace_quantile(cfg.threshold_p)?;
    let xs: Vec<f64> = cfg
        .conditioning_levels
        .iter()
        .map(|&p| laplace_quantile(p))
        .collect::<Result<_>>()?;
    let mut table = RmseTable {
        rmse: Vec::new(),
        ratios: Vec::new(),
        change_percent: Vec::new(),
        failures: BTreeMap::new(),
        n_replicates: cfg.n_replicates,
    };
    for (pi, pair) in cfg.pairs.iter().enumerate() {
        let pair_seed = cfg.seed.wrapping_add((pi as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let results: Vec<Option<Replicate>> = (0..cfg.n_replicates as u64)
            .into_par_iter()
            .map(|i| run_replicate(cfg, pair, u, pair_seed, i).ok())
            .collect();
        let ok: Vec<Replicate> = results.into_iter().flatten().collect();
        let failed = cfg.n_replicates - ok.len();
        let pair_label = format!("{}|{}", pair.higher.label(), pair.lower.label());
        if failed as f64 > MAX_FAILURE_RATE * cfg.n_replicates as f64 {
            return Err(Error::StudyUnstable {
                spec: pair_label,
                failed,
                total: cfg.n_replicates,
            });
        }
        table.failures.insert(pair_label, failed);

        for (g, choice) in [pair.lower, pair.higher].iter().enumerate() {
            let label = choice.label();
            let mut truth = Vec::new();
            for &q in &cfg.quantiles {
                for &x in &xs {
                    truth.push(true_conditional_quantile(choice.family, choice.dep, x, q)?);
                }
            }
            let mut rmse = [vec![0.0; truth.len()], vec![0.0; truth.len()], vec![0.0; truth.len()]];
            for (m, r) in rmse.iter_mut().enumerate() {
                for (cell, t) in truth.iter().enumerate() {
                    let mse = ok
                        .iter()
                        .map(|rep| (rep.estimates[g][m][cell] - t).powi(2))
                        .sum::<f64>()
                        / ok.len() as f64;
                    r[cell] = mse.sqrt();
                }
            }
            for (qi, &q) in cfg.quantiles.iter().enumerate() {
                for (xi, &level) in cfg.conditioning_levels.iter().enumerate() {
                    let cell = qi * xs.len() + xi;
                    for m in Model::ALL {
                        table.rmse.push(RmseEntry {
                            spec: label.clone(),
                            model: m,
                            q,
                            level,
                            rmse: rmse[m as usize][cell],
                        });
                    }
                    for (num, den) in Model::COMPARISONS {
                        table.ratios.push(RatioEntry {
                            spec: label.clone(),
                            comparison: format!("{}/{}", num.name(), den.name()),
                            q,
                            level,
                            ratio: rmse[num as usize][cell] / rmse[den as usize][cell],
                        });
                    }
                }
            }
            for (num, den) in Model::COMPARISONS {
                let changed = ok
                    .iter()
                    .filter(|rep| {
                        let (a, b) = (rep.params[g][num as usize], rep.params[g][den as usize]);
                        (a.0 - b.0).abs() > CHANGE_TOL || (a.1 - b.1).abs() > CHANGE_TOL
                    })
                    .count();
                table.change_percent.push(ChangeEntry {
                    spec: label.clone(),
                    comparison: format!("{}-{}", num.name(), den.name()),
                    percent: 100.0 * changed as f64 / ok.len() as f64,
                });
            }
        }
    }
    Ok(table)
}
