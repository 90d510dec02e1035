//! Constrained pseudo-likelihood across ordered groups, the likelihood ratio
//! test for ordered conditional tails with a simulated null, and parametric
//! bootstrap intervals for derived quantities.
//!
//! Constraints enter the simplex search as an infinite barrier. Because the
//! feasible set is not convex, the search is started from a feasible point:
//! a violation measure is minimised first, then the segment from that point
//! towards the unconstrained optimum is bisected to land on the boundary
//! nearest the optimum. Residual quantiles are recomputed from the current
//! `(alpha, beta)` at every evaluation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{
    keef_feasible_at, keef_violation, so_feasible_at, so_feasible_chain, so_violation, ConstraintLevel, LevelRule,
    TailCurve,
};
use crate::error::{Error, Result};
use crate::ht::{self, fit_unconstrained, ExceedanceData, HtFit};
use crate::optim::NelderMead;
use crate::replicate_rng;
use crate::simulation::sample_from_fit;
use crate::stats::{quantile_sorted, sorted_copy};

/// Fitted models keyed by group label.
pub type GroupFits = BTreeMap<String, HtFit>;

/// Declares which conditional tails must be ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingSpec {
    /// Group labels, lowest conditional tail first.
    pub group_order: Vec<String>,
    pub level: ConstraintLevel,
    /// Quantile levels at which the constraints are imposed.
    pub qs: Vec<f64>,
    /// When set, `level` is recomputed from each dataset the spec is
    /// applied to, so simulated datasets follow the same rule as the data.
    #[serde(default)]
    pub level_rule: Option<LevelRule>,
}

impl OrderingSpec {
    pub fn new(group_order: Vec<String>, level: ConstraintLevel, qs: Vec<f64>) -> Result<Self> {
        if group_order.len() < 2 {
            return Err(Error::Domain("an ordering needs at least 2 groups".into()));
        }
        let mut seen = group_order.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != group_order.len() {
            return Err(Error::Domain("group labels must be distinct".into()));
        }
        if qs.is_empty() || qs.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::Domain(
                "quantile levels must be a non-empty subset of [0,1]".into(),
            ));
        }
        Ok(Self {
            group_order,
            level,
            qs,
            level_rule: None,
        })
    }

    /// Spec whose level follows `rule` on every dataset, starting from `data`.
    pub fn with_level_rule(mut self, rule: LevelRule, data: &BTreeMap<String, ExceedanceData>) -> Result<Self> {
        self.level_rule = Some(rule);
        self.level = self.level_for(data)?;
        Ok(self)
    }

    /// The constraint level to use on `data`.
    pub fn level_for(&self, data: &BTreeMap<String, ExceedanceData>) -> Result<ConstraintLevel> {
        match &self.level_rule {
            None => Ok(self.level),
            Some(rule) => {
                let max_cond = self
                    .group_order
                    .iter()
                    .filter_map(|g| data.get(g))
                    .map(ExceedanceData::max_cond)
                    .fold(f64::NEG_INFINITY, f64::max);
                rule.level(max_cond)
            }
        }
    }

    /// Constraints at `q = 0` and `q = 1`.
    pub fn with_extreme_quantiles(group_order: Vec<String>, level: ConstraintLevel) -> Result<Self> {
        Self::new(group_order, level, vec![0.0, 1.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub null_sample: Vec<f64>,
    pub p_value: f64,
    pub n_sim: usize,
}

/// Differences smaller than this are treated as a zero statistic.
const STATISTIC_ZERO: f64 = 1e-6;

/// A constrained maximisation over `(alpha_g, beta_g)` for a set of groups.
struct Problem<'a> {
    groups: Vec<&'a ExceedanceData>,
    ordered: bool,
    level: ConstraintLevel,
    qs: Vec<f64>,
    z_plus: Vec<Vec<f64>>,
    z_minus: Vec<Vec<f64>>,
    extremes_only: bool,
}

#[allow(clippy::needless_range_loop)]
impl<'a> Problem<'a> {
    fn new(groups: Vec<&'a ExceedanceData>, ordered: bool, level: ConstraintLevel, qs: &[f64]) -> Self {
        let z_plus = groups
            .iter()
            .map(|d| qs.iter().map(|&q| quantile_sorted(d.z_plus_sorted(), q)).collect())
            .collect();
        let z_minus = groups
            .iter()
            .map(|d| qs.iter().map(|&q| quantile_sorted(d.z_minus_sorted(), q)).collect())
            .collect();
        Self {
            extremes_only: qs.iter().all(|&q| q == 0.0 || q == 1.0),
            groups,
            ordered,
            level,
            qs: qs.to_vec(),
            z_plus,
            z_minus,
        }
    }

    fn dim(&self) -> usize {
        2 * self.groups.len()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.groups.len())
            .flat_map(|_| [ht::ALPHA_BOUNDS, ht::BETA_BOUNDS])
            .collect()
    }

    /// Profile log-likelihood and residual quantiles at `qs` for group `g`.
    fn group_part(&self, g: usize, a: f64, b: f64) -> (f64, Vec<f64>) {
        let d = self.groups[g];
        let p = ht::profile(d, a, b);
        let zq = if self.extremes_only {
            self.qs
                .iter()
                .map(|&q| if q == 0.0 { p.z_min } else { p.z_max })
                .collect()
        } else {
            let z = sorted_copy(&ht::residuals(a, b, d));
            self.qs.iter().map(|&q| quantile_sorted(&z, q)).collect()
        };
        (p.loglik, zq)
    }

    /// Joint profile log-likelihood and residual quantiles at `qs`.
    fn group_state(&self, theta: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let mut total = 0.0;
        let mut zq = Vec::with_capacity(self.groups.len());
        for g in 0..self.groups.len() {
            let (ll, q) = self.group_part(g, theta[2 * g], theta[2 * g + 1]);
            total += ll;
            zq.push(q);
        }
        (total, zq)
    }

    /// Objective with group `g` at `(a, b)` and every other group taken from
    /// the cached `parts` evaluated at `theta`.
    fn objective_block(&self, theta: &mut [f64], parts: &mut [(f64, Vec<f64>)], g: usize, a: f64, b: f64) -> f64 {
        let saved = std::mem::replace(&mut parts[g], self.group_part(g, a, b));
        let (old_a, old_b) = (theta[2 * g], theta[2 * g + 1]);
        theta[2 * g] = a;
        theta[2 * g + 1] = b;
        let ll: f64 = parts.iter().map(|p| p.0).sum();
        let zq: Vec<Vec<f64>> = parts.iter().map(|p| p.1.clone()).collect();
        let value = if ll.is_finite() && self.feasible_with(theta, &zq) {
            -ll
        } else {
            f64::INFINITY
        };
        theta[2 * g] = old_a;
        theta[2 * g + 1] = old_b;
        parts[g] = saved;
        value
    }

    fn feasible_with(&self, theta: &[f64], zq: &[Vec<f64>]) -> bool {
        let v = self.level.v();
        for g in 0..self.groups.len() {
            let (a, b) = (theta[2 * g], theta[2 * g + 1]);
            for k in 0..self.qs.len() {
                if !keef_feasible_at(a, b, zq[g][k], self.z_plus[g][k], self.z_minus[g][k], v) {
                    return false;
                }
            }
        }
        if self.ordered {
            for g in 0..self.groups.len() - 1 {
                let (lo, hi) = (g, g + 1);
                if theta[2 * hi] < theta[2 * lo] {
                    return false;
                }
                for k in 0..self.qs.len() {
                    let h = (theta[2 * hi], theta[2 * hi + 1], zq[hi][k]);
                    let l = (theta[2 * lo], theta[2 * lo + 1], zq[lo][k]);
                    if !so_feasible_at(h, l, &self.level) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn feasible(&self, theta: &[f64]) -> bool {
        let (_, zq) = self.group_state(theta);
        self.feasible_with(theta, &zq)
    }

    /// Barrier objective: negative joint log-likelihood, infinite outside.
    fn objective(&self, theta: &[f64]) -> f64 {
        let (ll, zq) = self.group_state(theta);
        if !ll.is_finite() || !self.feasible_with(theta, &zq) {
            return f64::INFINITY;
        }
        -ll
    }

    fn violation(&self, theta: &[f64]) -> f64 {
        let (_, zq) = self.group_state(theta);
        let mut total = 0.0;
        for g in 0..self.groups.len() {
            let (a, b) = (theta[2 * g], theta[2 * g + 1]);
            for k in 0..self.qs.len() {
                if !keef_feasible_at(a, b, zq[g][k], self.z_plus[g][k], self.z_minus[g][k], self.level.v()) {
                    total +=
                        keef_violation(a, b, zq[g][k], self.z_plus[g][k], self.z_minus[g][k], &self.level).max(1e-9);
                }
            }
        }
        if self.ordered {
            for g in 0..self.groups.len() - 1 {
                for k in 0..self.qs.len() {
                    let h = (theta[2 * g + 2], theta[2 * g + 3], zq[g + 1][k]);
                    let l = (theta[2 * g], theta[2 * g + 1], zq[g][k]);
                    if !so_feasible_at(h, l, &self.level) {
                        total += so_violation(h, l, &self.level).max(1e-9);
                    }
                }
            }
        }
        total
    }

    fn simplex(&self, step: f64, max_evals: usize) -> NelderMead {
        NelderMead::new(vec![step; self.dim()])
            .with_max_evals(max_evals)
            .with_tolerances(1e-11, 1e-7)
    }

    /// Search for a feasible point starting from each candidate in turn.
    fn feasible_start(&self, candidates: &[Vec<f64>]) -> Option<Vec<f64>> {
        let bounds = self.bounds();
        for c in candidates {
            if self.feasible(c) {
                return Some(c.clone());
            }
        }
        for c in candidates {
            let mut x = c.clone();
            for _ in 0..4 {
                let m = self
                    .simplex(0.1, 400 * self.dim())
                    .minimize(|t| self.violation(t), &x, Some(&bounds));
                x = m.x;
                if self.feasible(&x) {
                    return Some(x);
                }
            }
        }
        None
    }

    /// Largest step from `inside` towards `target` that stays feasible.
    fn toward_boundary(&self, inside: &[f64], target: &[f64]) -> Vec<f64> {
        let at = |t: f64| -> Vec<f64> { inside.iter().zip(target).map(|(a, b)| a + t * (b - a)).collect() };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.feasible(&at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(lo)
    }

    /// Exact-penalty continuation from `start`: every group moves at once,
    /// which block steps cannot do when the binding constraint couples them.
    fn penalty_path(&self, start: &[f64]) -> Vec<f64> {
        let bounds = self.bounds();
        let mut x = start.to_vec();
        for rho in PENALTY_WEIGHTS {
            let m = self.simplex(0.05, 400 * self.dim()).minimize(
                |t| {
                    let (ll, _) = self.group_state(t);
                    if ll.is_finite() {
                        -ll + rho * self.violation(t)
                    } else {
                        f64::INFINITY
                    }
                },
                &x,
                Some(&bounds),
            );
            x = m.x;
        }
        x
    }

    fn polish(&self, start: &[f64]) -> (f64, Vec<f64>) {
        let bounds = self.bounds();
        let mut x = start.to_vec();
        let mut value = self.objective(&x);
        for round in 0..4 {
            let step = if round == 0 { 0.05 } else { 0.02 };
            let m = self
                .simplex(step, 600 * self.dim())
                .minimize(|t| self.objective(t), &x, Some(&bounds));
            let improved = value - m.value;
            if m.value < value {
                value = m.value;
                x = m.x;
            }
            if !(improved > 1e-8) {
                break;
            }
        }
        (value, x)
    }

    /// Best feasible replacement of group `g`'s parameters on a grid, the
    /// other groups held fixed, followed by a simplex polish of that block.
    fn block_step(&self, theta: &[f64], g: usize) -> Option<(f64, Vec<f64>)> {
        let mut work = theta.to_vec();
        let mut parts: Vec<(f64, Vec<f64>)> = (0..self.groups.len())
            .map(|k| self.group_part(k, theta[2 * k], theta[2 * k + 1]))
            .collect();
        let mut best: Option<(f64, f64, f64)> = None;
        let mut consider = |a: f64, b: f64, work: &mut Vec<f64>, parts: &mut Vec<(f64, Vec<f64>)>| {
            let val = self.objective_block(work, parts, g, a, b);
            if val.is_finite() && best.is_none_or(|b| val < b.0) {
                best = Some((val, a, b));
            }
        };
        consider(theta[2 * g], theta[2 * g + 1], &mut work, &mut parts);
        for i in 0..=BLOCK_GRID {
            for j in 0..=BLOCK_GRID {
                let a = -1.0 + 2.0 * i as f64 / BLOCK_GRID as f64;
                let b = BLOCK_BETA_LO + (ht::BETA_BOUNDS.1 - BLOCK_BETA_LO) * j as f64 / BLOCK_GRID as f64;
                consider(a, b, &mut work, &mut parts);
            }
        }
        let (mut value, a0, b0) = best?;
        let bounds = [ht::ALPHA_BOUNDS, ht::BETA_BOUNDS];
        let m = NelderMead::new(vec![0.02; 2])
            .with_max_evals(600)
            .with_tolerances(1e-11, 1e-7)
            .minimize(
                |ab| self.objective_block(&mut work, &mut parts, g, ab[0], ab[1]),
                &[a0, b0],
                Some(&bounds),
            );
        let mut out = theta.to_vec();
        out[2 * g] = a0;
        out[2 * g + 1] = b0;
        if m.value < value {
            out[2 * g] = m.x[0];
            out[2 * g + 1] = m.x[1];
            value = m.value;
        }
        Some((value, out))
    }

    /// Cycle block steps over the groups until a full cycle brings no
    /// improvement, then polish jointly. `fresh` is a group whose block is
    /// already optimal at `start`.
    fn block_search(&self, start: &[f64], fresh: Option<usize>) -> (f64, Vec<f64>) {
        let n = self.groups.len();
        let mut x = start.to_vec();
        let mut value = self.objective(&x);
        let mut idle = usize::from(fresh.is_some());
        let mut g = fresh.map_or(0, |f| (f + 1) % n);
        for _ in 0..BLOCK_SWEEPS * n {
            if idle >= n {
                break;
            }
            match self.block_step(&x, g) {
                Some((v, t)) if v < value - 1e-8 => {
                    value = v;
                    x = t;
                    idle = 1;
                }
                _ => idle += 1,
            }
            g = (g + 1) % n;
        }
        let (v, t) = self.polish(&x);
        if v < value {
            (v, t)
        } else {
            (value, x)
        }
    }

    /// Maximise subject to the constraints, given per-group unconstrained optima.
    fn solve(&self, unconstrained: &[&HtFit]) -> Result<Vec<f64>> {
        let theta_u: Vec<f64> = unconstrained
            .iter()
            .flat_map(|f| [f.params.alpha, f.params.beta])
            .collect();
        if self.feasible(&theta_u) {
            return Ok(theta_u);
        }
        let g = self.groups.len() as f64;
        let mean_a = unconstrained.iter().map(|f| f.params.alpha).sum::<f64>() / g;
        let mean_b = unconstrained.iter().map(|f| f.params.beta).sum::<f64>() / g;
        let common = |a: f64, b: f64| -> Vec<f64> { unconstrained.iter().flat_map(|_| [a, b]).collect() };
        let mut candidates = vec![theta_u.clone()];
        if self.ordered {
            // alphas re-assigned in chain order
            let mut alphas: Vec<f64> = unconstrained.iter().map(|f| f.params.alpha).collect();
            alphas.sort_by(f64::total_cmp);
            candidates.push(
                alphas
                    .iter()
                    .zip(unconstrained)
                    .flat_map(|(&a, f)| [a, f.params.beta])
                    .collect(),
            );
        }
        candidates.push(common(mean_a, mean_b));
        for (a, b) in [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.9, 0.0), (-0.5, 0.0)] {
            candidates.push(common(a, b));
        }

        // starts that move one group only, the others left at their optimum
        let mut starts: Vec<(f64, Vec<f64>, Option<usize>)> = (0..self.groups.len())
            .filter_map(|k| self.block_step(&theta_u, k).map(|(v, t)| (v, t, Some(k))))
            .collect();
        let path = self.penalty_path(&theta_u);
        if self.feasible(&path) {
            starts.push((self.objective(&path), path.clone(), None));
        }
        if let Some(f) = self.feasible_start(&candidates) {
            let near = self.toward_boundary(&f, &theta_u);
            starts.push((self.objective(&near), near, None));
            if !self.feasible(&path) {
                let near_path = self.toward_boundary(&f, &path);
                starts.push((self.objective(&near_path), near_path, None));
            }
            starts.push((self.objective(&f), f, None));
        }
        if starts.is_empty() {
            return Err(Error::InfeasibleStart);
        }
        starts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best: Option<(f64, Vec<f64>)> = None;
        for (_, s, fresh) in starts.iter().take(MAX_STARTS) {
            let r = self.block_search(s, *fresh);
            if best.as_ref().is_none_or(|b| r.0 < b.0) {
                best = Some(r);
            }
        }
        match best {
            Some((v, x)) if v.is_finite() => Ok(x),
            _ => Err(Error::InfeasibleStart),
        }
    }
}

/// Grid intervals per axis in a block step.
const BLOCK_GRID: usize = 40;
/// Lower end of the block-step beta grid; the simplex may go below it.
const BLOCK_BETA_LO: f64 = -1.5;
const BLOCK_SWEEPS: usize = 4;
const MAX_STARTS: usize = 3;
const PENALTY_WEIGHTS: [f64; 5] = [1.0, 10.0, 100.0, 1e3, 1e4];

fn fits_at(groups: &[&ExceedanceData], theta: &[f64]) -> Result<Vec<HtFit>> {
    groups
        .iter()
        .enumerate()
        .map(|(g, d)| HtFit::at(d, theta[2 * g], theta[2 * g + 1]))
        .collect()
}

/// Fit under the asymptotic-dependence bounds alone.
pub fn fit_keef(d: &ExceedanceData, level: &ConstraintLevel, qs: &[f64]) -> Result<HtFit> {
    let unconstrained = fit_unconstrained(d)?;
    fit_keef_from(d, level, qs, &unconstrained)
}

pub fn fit_keef_from(d: &ExceedanceData, level: &ConstraintLevel, qs: &[f64], unconstrained: &HtFit) -> Result<HtFit> {
    let problem = Problem::new(vec![d], false, *level, qs);
    let theta = problem.solve(&[unconstrained])?;
    if theta == [unconstrained.params.alpha, unconstrained.params.beta] {
        return Ok(unconstrained.clone());
    }
    HtFit::at(d, theta[0], theta[1])
}

fn ordered_groups<'a>(
    data: &'a BTreeMap<String, ExceedanceData>,
    spec: &OrderingSpec,
) -> Result<Vec<&'a ExceedanceData>> {
    spec.group_order
        .iter()
        .map(|label| {
            data.get(label)
                .ok_or_else(|| Error::InsufficientData(format!("no data for group `{label}`")))
        })
        .collect()
}

/// Unconstrained fit of every group in the ordering.
pub fn fit_groups(data: &BTreeMap<String, ExceedanceData>, spec: &OrderingSpec) -> Result<BTreeMap<String, HtFit>> {
    spec.group_order
        .iter()
        .map(|label| {
            let d = data
                .get(label)
                .ok_or_else(|| Error::InsufficientData(format!("no data for group `{label}`")))?;
            Ok((label.clone(), fit_unconstrained(d)?))
        })
        .collect()
}

/// Joint maximisation subject to the ordering chain and the
/// asymptotic-dependence bounds of every group.
pub fn fit_constrained(
    data: &BTreeMap<String, ExceedanceData>,
    spec: &OrderingSpec,
) -> Result<BTreeMap<String, HtFit>> {
    let unconstrained = fit_groups(data, spec)?;
    fit_constrained_from(data, spec, &unconstrained)
}

/// As [`fit_constrained`], reusing unconstrained fits already at hand.
pub fn fit_constrained_from(
    data: &BTreeMap<String, ExceedanceData>,
    spec: &OrderingSpec,
    unconstrained: &BTreeMap<String, HtFit>,
) -> Result<BTreeMap<String, HtFit>> {
    let groups = ordered_groups(data, spec)?;
    let unc: Vec<&HtFit> = spec
        .group_order
        .iter()
        .map(|l| {
            unconstrained
                .get(l)
                .ok_or_else(|| Error::InsufficientData(format!("no unconstrained fit for `{l}`")))
        })
        .collect::<Result<_>>()?;
    let level = spec.level_for(data)?;
    let problem = Problem::new(groups.clone(), true, level, &spec.qs);
    let theta = problem.solve(&unc)?;
    let fits = fits_at(&groups, &theta)?;
    let out: BTreeMap<String, HtFit> = spec
        .group_order
        .iter()
        .cloned()
        .zip(fits.into_iter().zip(&unc).map(|(f, u)| {
            if f.params.alpha == u.params.alpha && f.params.beta == u.params.beta {
                (*u).clone()
            } else {
                f
            }
        }))
        .collect();
    debug_assert!(chain_feasible_at(&out, spec, &level));
    Ok(out)
}

/// Whether fits satisfy the ordering chain of `spec` at its stored level.
pub fn chain_feasible(fits: &BTreeMap<String, HtFit>, spec: &OrderingSpec) -> bool {
    chain_feasible_at(fits, spec, &spec.level)
}

pub fn chain_feasible_at(fits: &BTreeMap<String, HtFit>, spec: &OrderingSpec, level: &ConstraintLevel) -> bool {
    let curves: Option<Vec<TailCurve>> = spec
        .group_order
        .iter()
        .map(|l| {
            fits.get(l).map(|f| TailCurve {
                alpha: f.params.alpha,
                beta: f.params.beta,
                summary: &f.residual_summary,
            })
        })
        .collect();
    match curves {
        Some(c) => so_feasible_chain(&c, level, &spec.qs).unwrap_or(false),
        None => false,
    }
}

pub fn joint_loglik(fits: &BTreeMap<String, HtFit>) -> f64 {
    fits.values().map(|f| f.loglik).sum()
}

/// `2 (l_unconstrained - l_constrained)` together with the constrained fits.
pub fn ordering_statistic(
    data: &BTreeMap<String, ExceedanceData>,
    spec: &OrderingSpec,
) -> Result<(f64, GroupFits, GroupFits)> {
    let unconstrained = fit_groups(data, spec)?;
    let constrained = fit_constrained_from(data, spec, &unconstrained)?;
    let (lu, lc) = (joint_loglik(&unconstrained), joint_loglik(&constrained));
    if !lu.is_finite() || !lc.is_finite() {
        return Err(Error::NonFiniteStatistic);
    }
    // the unconstrained supremum is over a superset
    let stat = 2.0 * (lu.max(lc) - lc);
    let stat = if stat < STATISTIC_ZERO { 0.0 } else { stat };
    Ok((stat, unconstrained, constrained))
}

/// Draw a dataset of the observed group sizes from fitted models.
pub fn simulate_groups<R: rand::Rng>(
    data: &BTreeMap<String, ExceedanceData>,
    fits: &BTreeMap<String, HtFit>,
    rng: &mut R,
) -> Result<BTreeMap<String, ExceedanceData>> {
    fits.iter()
        .map(|(label, fit)| {
            let d = &data[label];
            let (c, y) = sample_from_fit(fit, d.threshold_u(), d.len(), rng);
            Ok((label.clone(), ExceedanceData::new(c, y, d.threshold_u())?))
        })
        .collect()
}

/// Likelihood ratio test of the ordering in `spec` against no ordering.
///
/// The null distribution is simulated from the constrained fits: conditioning
/// values are drawn from the Laplace tail above each group's threshold and
/// residuals are resampled from the group's fitted residuals, with group
/// sizes held at their observed values.
pub fn lrt_ordering(
    data: &BTreeMap<String, ExceedanceData>,
    spec: &OrderingSpec,
    n_sim: usize,
    seed: u64,
) -> Result<LrtResult> {
    if n_sim < 99 {
        return Err(Error::Domain(format!("n_sim must be at least 99, got {n_sim}")));
    }
    let (statistic, _, constrained) = ordering_statistic(data, spec)?;
    let null_sample = (0..n_sim)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..4u64 {
                let mut rng = replicate_rng(seed, ((i as u64) << 8) | attempt);
                let sim = simulate_groups(data, &constrained, &mut rng)?;
                if let Ok((s, _, _)) = ordering_statistic(&sim, spec) {
                    return Ok(s);
                }
            }
            Err(Error::NonFiniteStatistic)
        })
        .collect::<Result<Vec<f64>>>()?;
    let exceed = null_sample.iter().filter(|&&s| s >= statistic).count();
    Ok(LrtResult {
        statistic,
        p_value: (1 + exceed) as f64 / (n_sim + 1) as f64,
        null_sample,
        n_sim,
    })
}

/// A scalar derived from a set of fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Functional {
    Alpha { group: String },
    Beta { group: String },
    ConditionalQuantile { group: String, x: f64, q: f64 },
}

impl Functional {
    pub fn evaluate(&self, fits: &BTreeMap<String, HtFit>) -> Result<f64> {
        let get = |g: &str| fits.get(g).ok_or_else(|| Error::Domain(format!("unknown group `{g}`")));
        match self {
            Functional::Alpha { group } => Ok(get(group)?.params.alpha),
            Functional::Beta { group } => Ok(get(group)?.params.beta),
            Functional::ConditionalQuantile { group, x, q } => get(group)?.conditional_quantile(*x, *q),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub estimate: f64,
    pub lower95: f64,
    pub upper95: f64,
}

/// Equal-tail 95% interval from a parametric bootstrap of the constrained
/// model: simulate from the fit, refit, re-evaluate.
///
/// Replicates often exceed the largest observed conditioning value, so a spec
/// without a level rule (fixed `v`) tends to fail with
/// [`Error::BootstrapUnstable`]; attach [`LevelRule::ObservedMax`] instead.
pub fn bootstrap_functional(
    data: &BTreeMap<String, ExceedanceData>,
    spec: &OrderingSpec,
    functional: &Functional,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapInterval> {
    if n_boot < 100 {
        return Err(Error::Domain(format!("n_boot must be at least 100, got {n_boot}")));
    }
    let fits = match fit_constrained(data, spec) {
        Ok(f) => f,
        Err(Error::DegenerateResiduals { .. }) | Err(Error::FitDiverged(_)) => {
            return Err(Error::BootstrapUnstable {
                failed: n_boot,
                total: n_boot,
            })
        }
        Err(e) => return Err(e),
    };
    let estimate = functional.evaluate(&fits)?;
    let draws: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let sim = simulate_groups(data, &fits, &mut rng).ok()?;
            let refit = fit_constrained(&sim, spec).ok()?;
            functional.evaluate(&refit).ok()
        })
        .collect();
    let ok: Vec<f64> = draws.into_iter().flatten().collect();
    let failed = n_boot - ok.len();
    if failed * 10 > n_boot {
        return Err(Error::BootstrapUnstable { failed, total: n_boot });
    }
    let sorted = sorted_copy(&ok);
    Ok(BootstrapInterval {
        estimate,
        lower95: quantile_sorted(&sorted, 0.025),
        upper95: quantile_sorted(&sorted, 0.975),
    })
}
