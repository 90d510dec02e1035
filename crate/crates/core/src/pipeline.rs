//! Clinical-trial liver-safety analysis: per-dose log-transform and median
//! regression of post-baseline on baseline labs, tail-dependence
//! diagnostics, conditional fits of ALT/TBL residuals in both conditioning
//! directions with dose-ordered constraints, and joint exceedance
//! probabilities of post-baseline values.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintLevel, LevelRule};
use crate::error::{Error, Result};
use crate::ht::{ExceedanceData, HtFit};
use crate::inference::{fit_constrained_from, fit_groups, OrderingSpec};
use crate::margins::{laplace_quantile, sample_laplace_above, MarginalModel};
use crate::replicate_rng;
use crate::stats::{median, quantile_sorted, ranks, sorted_copy, spearman};

/// ALT upper limit of normal, units/litre.
pub const ULN_ALT: f64 = 36.0;
/// TBL upper limit of normal, micromol/litre.
pub const ULN_TBL: f64 = 21.0;
/// `(3 x ULN_ALT, 2 x ULN_TBL)`.
pub const HYS_LAW_POINT: (f64, f64) = (3.0 * ULN_ALT, 2.0 * ULN_TBL);

pub const CSV_COLUMNS: [&str; 5] = ["dose", "ALT.B", "ALT.M", "TBL.B", "TBL.M"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub dose: String,
    pub alt_baseline: f64,
    pub alt_post: f64,
    pub tbl_baseline: f64,
    pub tbl_post: f64,
}

/// Read trial records from CSV with columns `dose,ALT.B,ALT.M,TBL.B,TBL.M`.
pub fn read_trial_records<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |k: usize| row.get(idx[k]).unwrap_or("");
        let value = |k: usize| -> Result<f64> {
            let raw = field(k);
            let v: f64 = raw.parse().map_err(|_| {
                Error::Schema(format!(
                    "row {}: {} = `{raw}` is not a number",
                    line + 2,
                    CSV_COLUMNS[k]
                ))
            })?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Schema(format!(
                    "row {}: {} = {v} must be positive",
                    line + 2,
                    CSV_COLUMNS[k]
                )));
            }
            Ok(v)
        };
        let dose = field(0).to_string();
        if dose.is_empty() {
            return Err(Error::Schema(format!("row {}: empty dose label", line + 2)));
        }
        out.push(TrialRecord {
            dose,
            alt_baseline: value(1)?,
            alt_post: value(2)?,
            tbl_baseline: value(3)?,
            tbl_post: value(4)?,
        });
    }
    Ok(out)
}

pub fn read_trial_csv(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    read_trial_records(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineAdjustment {
    pub gamma: f64,
    pub delta: f64,
    pub residuals: Vec<f64>,
}

pub fn absolute_loss(y: &[f64], x: &[f64], gamma: f64, delta: f64) -> f64 {
    y.iter().zip(x).map(|(yi, xi)| (yi - gamma - delta * xi).abs()).sum()
}

/// Weighted median: smallest value whose cumulative weight reaches half.
fn weighted_median(mut pairs: Vec<(f64, f64)>) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = pairs.iter().map(|p| p.1).sum::<f64>() / 2.0;
    let mut acc = 0.0;
    for (v, w) in &pairs {
        acc += w;
        if acc >= half {
            return *v;
        }
    }
    pairs.last().map_or(0.0, |p| p.0)
}

/// Least absolute deviations line of `w_post` on `w_base`.
///
/// Exhaustive over pivots, so quadratic in the sample size. The intercept is
/// then reset to the median of `w_post - delta * w_base`, which keeps
/// optimality and centres the residuals.
pub fn median_regression(w_post: &[f64], w_base: &[f64]) -> Result<BaselineAdjustment> {
    if w_post.len() != w_base.len() {
        return Err(Error::Domain("median regression needs paired samples".into()));
    }
    if w_post.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "median regression needs at least 10 pairs, got {}",
            w_post.len()
        )));
    }
    let n = w_post.len();
    // an optimal line passes through some observation, and the best line
    // through a fixed point has the weighted median of the pairwise slopes
    let mut best = (f64::INFINITY, 0.0);
    for pivot in 0..n {
        let (xp, yp) = (w_base[pivot], w_post[pivot]);
        let slopes: Vec<(f64, f64)> = (0..n)
            .filter(|&i| (w_base[i] - xp).abs() > 0.0)
            .map(|i| ((w_post[i] - yp) / (w_base[i] - xp), (w_base[i] - xp).abs()))
            .collect();
        if slopes.is_empty() {
            continue;
        }
        let delta = weighted_median(slopes);
        let loss = absolute_loss(w_post, w_base, yp - delta * xp, delta);
        if loss < best.0 {
            best = (loss, delta);
        }
    }
    let delta = if best.0.is_finite() { best.1 } else { 0.0 };
    let shifted: Vec<f64> = w_post.iter().zip(w_base).map(|(y, x)| y - delta * x).collect();
    let gamma = median(&shifted);
    let residuals = shifted.iter().map(|s| s - gamma).collect();
    Ok(BaselineAdjustment {
        gamma,
        delta,
        residuals,
    })
}

/// Spearman correlation restricted to pairs whose rank-scale coordinates
/// both exceed `1 - level`; `level = 1` is the classical coefficient.
pub fn conditional_spearman(x: &[f64], y: &[f64], level: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Domain("conditional Spearman needs paired samples".into()));
    }
    if x.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 pairs, got {}",
            x.len()
        )));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Domain(format!("level must lie in (0,1], got {level}")));
    }
    let scale = (x.len() + 1) as f64;
    let (rx, ry) = (ranks(x), ranks(y));
    let cut = 1.0 - level;
    let (sx, sy): (Vec<f64>, Vec<f64>) = rx
        .iter()
        .zip(&ry)
        .zip(x.iter().zip(y))
        .filter(|((a, b), _)| *a / scale > cut && *b / scale > cut)
        .map(|(_, (xi, yi))| (*xi, *yi))
        .unzip();
    if sx.len() < 5 {
        return Err(Error::TooFewTailPoints {
            found: sx.len(),
            needed: 5,
        });
    }
    Ok(spearman(&sx, &sy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiMeasures {
    pub p: Vec<f64>,
    /// `P(U > p, V > p) / P(U > p)`.
    pub chi: Vec<f64>,
    /// `2 log P(U > p) / log P(U > p, V > p) - 1`; `-1` when no joint exceedance.
    pub chibar: Vec<f64>,
}

/// Empirical finite-level tail dependence measures on the rank scale.
pub fn chi_measures(x: &[f64], y: &[f64], p_levels: &[f64]) -> Result<ChiMeasures> {
    if x.len() != y.len() {
        return Err(Error::Domain("chi measures need paired samples".into()));
    }
    if x.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "need at least 100 pairs, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let (rx, ry) = (ranks(x), ranks(y));
    let mut out = ChiMeasures {
        p: p_levels.to_vec(),
        chi: Vec::new(),
        chibar: Vec::new(),
    };
    for &p in p_levels {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("level must lie in (0,1), got {p}")));
        }
        let above_x = rx.iter().filter(|r| **r / (n + 1.0) > p).count();
        let joint = rx
            .iter()
            .zip(&ry)
            .filter(|(a, b)| **a / (n + 1.0) > p && **b / (n + 1.0) > p)
            .count();
        if above_x == 0 {
            return Err(Error::Domain(format!("no observations above level {p}")));
        }
        let (pm, pj) = (above_x as f64 / n, joint as f64 / n);
        out.chi.push(pj / pm);
        out.chibar.push(if joint == 0 {
            -1.0
        } else {
            2.0 * pm.ln() / pj.ln() - 1.0
        });
    }
    Ok(out)
}

/// Which residual is the conditioning variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// TBL given large ALT.
    TblGivenAlt,
    /// ALT given large TBL.
    AltGivenTbl,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::TblGivenAlt, Direction::AltGivenTbl];

    /// Index of the conditioning lab variable (0 = ALT, 1 = TBL).
    pub fn conditioning(self) -> usize {
        match self {
            Direction::TblGivenAlt => 0,
            Direction::AltGivenTbl => 1,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::TblGivenAlt => "tbl_given_alt",
            Direction::AltGivenTbl => "alt_given_tbl",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Quantile level of the marginal GP thresholds.
    pub marg_q: f64,
    /// Laplace-scale probability of the dependence threshold.
    pub dep_q: f64,
    pub level_rule: LevelRule,
    pub qs: Vec<f64>,
    /// Doses, lowest conditional tail first.
    pub dose_order: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            marg_q: 0.8,
            dep_q: 0.7,
            level_rule: LevelRule::ObservedMax(5.0),
            qs: vec![0.0, 1.0],
            dose_order: ["A", "B", "C", "D"].map(String::from).to_vec(),
        }
    }
}

/// Per-variable pieces of a dose model: index 0 is ALT, 1 is TBL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoseModel {
    pub dose: String,
    pub n: usize,
    pub adjustments: [BaselineAdjustment; 2],
    pub baseline_margins: [MarginalModel; 2],
    pub residual_margins: [MarginalModel; 2],
    /// Laplace-scale residual pairs `(ALT, TBL)`.
    pub laplace_pairs: Vec<(f64, f64)>,
    /// Spearman correlation of each residual with its own log-baseline.
    pub residual_baseline_spearman: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionFit {
    pub threshold_u: f64,
    pub level: ConstraintLevel,
    pub data: BTreeMap<String, ExceedanceData>,
    pub ht: BTreeMap<String, HtFit>,
    pub so: BTreeMap<String, HtFit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineFit {
    pub config: PipelineConfig,
    pub doses: BTreeMap<String, DoseModel>,
    pub directions: BTreeMap<Direction, DirectionFit>,
    pub records: Vec<TrialRecord>,
}

impl PipelineFit {
    pub fn ordering_spec(&self, direction: Direction) -> Result<OrderingSpec> {
        let d = self
            .directions
            .get(&direction)
            .ok_or_else(|| Error::Domain(format!("direction {direction} not fitted")))?;
        OrderingSpec::new(self.config.dose_order.clone(), d.level, self.config.qs.clone())?
            .with_level_rule(self.config.level_rule, &d.data)
    }
}

fn fit_dose(dose: &str, recs: &[&TrialRecord], cfg: &PipelineConfig) -> Result<DoseModel> {
    let column = |f: fn(&TrialRecord) -> f64| -> Vec<f64> { recs.iter().map(|r| f(r).ln()).collect() };
    let base = [column(|r| r.alt_baseline), column(|r| r.tbl_baseline)];
    let post = [column(|r| r.alt_post), column(|r| r.tbl_post)];
    let adj = [
        median_regression(&post[0], &base[0])?,
        median_regression(&post[1], &base[1])?,
    ];
    let bm = [
        MarginalModel::fit(&base[0], cfg.marg_q)?,
        MarginalModel::fit(&base[1], cfg.marg_q)?,
    ];
    let rm = [
        MarginalModel::fit(&adj[0].residuals, cfg.marg_q)?,
        MarginalModel::fit(&adj[1].residuals, cfg.marg_q)?,
    ];
    let laplace_pairs = adj[0]
        .residuals
        .iter()
        .zip(&adj[1].residuals)
        .map(|(a, t)| (rm[0].to_laplace(*a), rm[1].to_laplace(*t)))
        .collect();
    let rbs = [
        spearman(&adj[0].residuals, &base[0]),
        spearman(&adj[1].residuals, &base[1]),
    ];
    Ok(DoseModel {
        dose: dose.to_string(),
        n: recs.len(),
        adjustments: adj,
        baseline_margins: bm,
        residual_margins: rm,
        laplace_pairs,
        residual_baseline_spearman: rbs,
    })
}

fn exceedances(model: &DoseModel, direction: Direction, u: f64) -> Result<ExceedanceData> {
    let c = direction.conditioning();
    let (yc, yd): (Vec<f64>, Vec<f64>) = model
        .laplace_pairs
        .iter()
        .map(|&(a, t)| if c == 0 { (a, t) } else { (t, a) })
        .filter(|(x, _)| *x > u)
        .unzip();
    ExceedanceData::new(yc, yd, u)
}

/// Fit every stage of the analysis for all doses in `cfg.dose_order`.
pub fn fit_pipeline(records: &[TrialRecord], cfg: &PipelineConfig) -> Result<PipelineFit> {
    if !(cfg.marg_q > 0.0 && cfg.marg_q < 1.0) || !(cfg.dep_q >= 0.5 && cfg.dep_q < 1.0) {
        return Err(Error::Domain("marg_q must lie in (0,1) and dep_q in [0.5,1)".into()));
    }
    let mut doses = BTreeMap::new();
    for dose in &cfg.dose_order {
        let recs: Vec<&TrialRecord> = records.iter().filter(|r| &r.dose == dose).collect();
        if recs.is_empty() {
            return Err(Error::InsufficientData(format!("no records for dose {dose}")));
        }
        doses.insert(dose.clone(), fit_dose(dose, &recs, cfg)?);
    }
    let u = laplace_quantile(cfg.dep_q)?;
    let mut directions = BTreeMap::new();
    for direction in Direction::BOTH {
        let data: BTreeMap<String, ExceedanceData> = doses
            .iter()
            .map(|(k, m)| Ok((k.clone(), exceedances(m, direction, u)?)))
            .collect::<Result<_>>()?;
        let max_cond = data
            .values()
            .map(ExceedanceData::max_cond)
            .fold(f64::NEG_INFINITY, f64::max);
        let level = cfg.level_rule.level(max_cond)?;
        let spec = OrderingSpec::new(cfg.dose_order.clone(), level, cfg.qs.clone())?;
        let ht = fit_groups(&data, &spec)?;
        let so = fit_constrained_from(&data, &spec, &ht)?;
        directions.insert(
            direction,
            DirectionFit {
                threshold_u: u,
                level,
                data,
                ht,
                so,
            },
        );
    }
    Ok(PipelineFit {
        config: cfg.clone(),
        doses,
        directions,
        records: records.to_vec(),
    })
}

/// Which conditional model drives the residual simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "HT")]
    Ht,
    #[serde(rename = "SO")]
    So,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Ht => "HT",
            Variant::So => "SO",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub x_cut: f64,
    pub y_cut: f64,
    pub prob: f64,
    pub ci95: (f64, f64),
}

/// Simulated post-baseline `(ALT, TBL)` for one dose.
///
/// Laplace-scale residuals follow the conditional model given large ALT
/// residuals with the model's exceedance probability, and are resampled
/// from observed pairs below the threshold otherwise. Baselines are drawn
/// from their own marginal models independently of the residuals.
pub fn simulate_post_baseline<R: Rng>(
    fit: &PipelineFit,
    dose: &str,
    variant: Variant,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    let model = fit
        .doses
        .get(dose)
        .ok_or_else(|| Error::UnfittedDose(dose.to_string()))?;
    let dir = fit
        .directions
        .get(&Direction::TblGivenAlt)
        .ok_or_else(|| Error::UnfittedDose(dose.to_string()))?;
    let ht = match variant {
        Variant::Ht => &dir.ht,
        Variant::So => &dir.so,
    }
    .get(dose)
    .ok_or_else(|| Error::UnfittedDose(dose.to_string()))?;
    let u = dir.threshold_u;
    let below: Vec<(f64, f64)> = model.laplace_pairs.iter().copied().filter(|p| p.0 <= u).collect();
    let p_above = 1.0 - fit.config.dep_q;
    let (a, b) = (ht.params.alpha, ht.params.beta);
    let m = ht.residuals.len();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (y1, y2) = if below.is_empty() || rng.gen::<f64>() < p_above {
            let x = sample_laplace_above(u, rng);
            (x, a * x + x.powf(b) * ht.residuals[rng.gen_range(0..m)])
        } else {
            below[rng.gen_range(0..below.len())]
        };
        let xr = [
            model.residual_margins[0].from_laplace(y1),
            model.residual_margins[1].from_laplace(y2),
        ];
        let mut v = [0.0; 2];
        for i in 0..2 {
            let wb = model.baseline_margins[i].sample(rng);
            let adj = &model.adjustments[i];
            v[i] = (adj.gamma + adj.delta * wb + xr[i]).exp();
        }
        out.push((v[0], v[1]));
    }
    Ok(out)
}

fn survival_counts(sample: &[(f64, f64)], x_cut: f64, y_grid: &[f64]) -> Vec<f64> {
    let n = sample.len() as f64;
    y_grid
        .iter()
        .map(|&y| sample.iter().filter(|(a, t)| *a > x_cut && *t > y).count() as f64 / n)
        .collect()
}

/// Resample records with replacement within each dose.
fn resample_records<R: Rng>(records: &[TrialRecord], rng: &mut R) -> Vec<TrialRecord> {
    let mut by_dose: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        by_dose.entry(r.dose.as_str()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(records.len());
    for recs in by_dose.values() {
        for _ in 0..recs.len() {
            out.push(recs[rng.gen_range(0..recs.len())].clone());
        }
    }
    out
}

/// Estimated `P(ALT > x_cut, TBL > y)` over a grid of `y` for one dose and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub dose: String,
    pub variant: Variant,
    pub points: Vec<SurvivalEstimate>,
}

/// Survival curves for several `(dose, variant)` requests, with equal-tail
/// 95% intervals from `n_boot` replays of the whole pipeline on records
/// resampled within dose. Each replay refits once and serves every request.
/// With `n_boot = 0` the intervals are degenerate.
#[allow(clippy::too_many_arguments)]
pub fn predict_survival_curves(
    fit: &PipelineFit,
    requests: &[(String, Variant)],
    x_cut: f64,
    y_grid: &[f64],
    n_sim: usize,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<SurvivalCurve>> {
    if n_sim == 0 {
        return Err(Error::Domain("n_sim must be positive".into()));
    }
    let estimate = |f: &PipelineFit, rng: &mut rand_chacha::ChaCha8Rng| -> Result<Vec<Vec<f64>>> {
        requests
            .iter()
            .map(|(dose, variant)| {
                let s = simulate_post_baseline(f, dose, *variant, n_sim, rng)?;
                Ok(survival_counts(&s, x_cut, y_grid))
            })
            .collect()
    };
    let point = estimate(fit, &mut replicate_rng(seed, 0))?;
    let replays: Vec<Option<Vec<Vec<f64>>>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i + 1);
            let recs = resample_records(&fit.records, &mut rng);
            let refit = fit_pipeline(&recs, &fit.config).ok()?;
            estimate(&refit, &mut rng).ok()
        })
        .collect();
    let ok: Vec<Vec<Vec<f64>>> = replays.into_iter().flatten().collect();
    let failed = n_boot - ok.len();
    if n_boot > 0 && failed * 10 > n_boot {
        return Err(Error::BootstrapUnstable { failed, total: n_boot });
    }
    Ok(requests
        .iter()
        .enumerate()
        .map(|(r, (dose, variant))| SurvivalCurve {
            dose: dose.clone(),
            variant: *variant,
            points: y_grid
                .iter()
                .enumerate()
                .map(|(k, &y)| {
                    let prob = point[r][k];
                    let ci95 = if ok.is_empty() {
                        (prob, prob)
                    } else {
                        let s = sorted_copy(&ok.iter().map(|rep| rep[r][k]).collect::<Vec<_>>());
                        // the percentile interval is widened to cover the point estimate
                        (
                            quantile_sorted(&s, 0.025).min(prob),
                            quantile_sorted(&s, 0.975).max(prob),
                        )
                    };
                    SurvivalEstimate {
                        x_cut,
                        y_cut: y,
                        prob,
                        ci95,
                    }
                })
                .collect(),
        })
        .collect())
}

/// Single-curve form of [`predict_survival_curves`].
#[allow(clippy::too_many_arguments)]
pub fn predict_survival_curve(
    fit: &PipelineFit,
    dose: &str,
    variant: Variant,
    x_cut: f64,
    y_grid: &[f64],
    n_sim: usize,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<SurvivalEstimate>> {
    let mut curves = predict_survival_curves(fit, &[(dose.to_string(), variant)], x_cut, y_grid, n_sim, n_boot, seed)?;
    Ok(curves.remove(0).points)
}

/// Single-point form of [`predict_survival_curve`].
#[allow(clippy::too_many_arguments)]
pub fn predict_survival(
    fit: &PipelineFit,
    dose: &str,
    variant: Variant,
    x_cut: f64,
    y_cut: f64,
    n_sim: usize,
    n_boot: usize,
    seed: u64,
) -> Result<SurvivalEstimate> {
    Ok(predict_survival_curve(fit, dose, variant, x_cut, &[y_cut], n_sim, n_boot, seed)?[0])
}
