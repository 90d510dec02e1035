//! Feasibility of conditional-model parameters.
//!
//! Two families of constraints are decided here:
//!
//! * the asymptotic-dependence bounds, which keep a conditional quantile
//!   `alpha x + x^beta z(q)` between the perfect negative and perfect
//!   positive dependence quantiles `-x + z-(q)` and `x + z+(q)` for all
//!   `x > v`;
//! * the stochastic-ordering constraint between two groups, which requires
//!   `D(x) = (a_hi - a_lo) x + x^b_hi z_hi(q) - x^b_lo z_lo(q) >= 0` for all
//!   `x > v`.
//!
//! `D'` has at most one turning point (the unique root `s` of `D''`), so `D`
//! has at most two stationary points. They are located by bisection on the
//! monotone pieces of `D'` and `D` is checked at `v`, at each stationary
//! point, and at the bracket cap [`X_MAX`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ht::ResidualSummary;

/// Upper end of the root-finding bracket.
pub const X_MAX: f64 = 1e8;
/// `D(x) >= -FEASIBILITY_TOL` counts as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Below this `|beta_hi - beta_lo|` the two power terms are merged.
const EQUAL_BETA_TOL: f64 = 1e-9;
/// Interior target used by the violation measures so that points they accept
/// pass the exact checks.
const VIOLATION_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintLevel {
    v: f64,
}

impl ConstraintLevel {
    pub fn new(v: f64) -> Result<Self> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("constraint level must be positive, got {v}")));
        }
        Ok(Self { v })
    }

    /// `max(5, largest observed conditioning value)`.
    pub fn from_observed_max(max_cond: f64) -> Self {
        Self { v: max_cond.max(5.0) }
    }

    pub fn v(&self) -> f64 {
        self.v
    }
}

/// Difference of two conditional quantile curves, high group minus low group.
/// How the constraint level is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum LevelRule {
    Fixed(f64),
    /// `max(floor, largest observed conditioning value)`.
    ObservedMax(f64),
}

impl LevelRule {
    pub fn level(&self, max_cond: f64) -> Result<ConstraintLevel> {
        match *self {
            LevelRule::Fixed(v) => ConstraintLevel::new(v),
            LevelRule::ObservedMax(floor) => ConstraintLevel::new(floor.max(max_cond)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DFunction {
    pub alpha_hi: f64,
    pub alpha_lo: f64,
    pub beta_hi: f64,
    pub beta_lo: f64,
    pub z_hi: f64,
    pub z_lo: f64,
}

impl DFunction {
    pub fn value(&self, x: f64) -> f64 {
        (self.alpha_hi - self.alpha_lo) * x + x.powf(self.beta_hi) * self.z_hi - x.powf(self.beta_lo) * self.z_lo
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.alpha_hi - self.alpha_lo) + self.beta_hi * self.z_hi * x.powf(self.beta_hi - 1.0)
            - self.beta_lo * self.z_lo * x.powf(self.beta_lo - 1.0)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.beta_hi * (self.beta_hi - 1.0) * self.z_hi * x.powf(self.beta_hi - 2.0)
            - self.beta_lo * (self.beta_lo - 1.0) * self.z_lo * x.powf(self.beta_lo - 2.0)
    }

    /// Coefficients of the two power terms of `D'`.
    fn power_coefficients(&self) -> (f64, f64) {
        (self.beta_hi * self.z_hi, self.beta_lo * self.z_lo)
    }

    /// Root of `D''`:
    /// `s = [b_lo (b_lo - 1) z_lo / (b_hi (b_hi - 1) z_hi)]^(1 / (b_hi - b_lo))`,
    /// defined only when both power terms are present, the betas differ and
    /// the base is positive.
    pub fn inflection(&self) -> Option<f64> {
        let (c_hi, c_lo) = self.power_coefficients();
        if c_hi == 0.0 || c_lo == 0.0 || (self.beta_hi - self.beta_lo).abs() < EQUAL_BETA_TOL {
            return None;
        }
        let base = self.beta_lo * (self.beta_lo - 1.0) * self.z_lo / (self.beta_hi * (self.beta_hi - 1.0) * self.z_hi);
        if !(base > 0.0) {
            return None;
        }
        let s = base.powf(1.0 / (self.beta_hi - self.beta_lo));
        s.is_finite().then_some(s)
    }

    /// Whether `lim D(x)` as `x -> inf` is non-negative.
    fn limit_nonnegative(&self) -> bool {
        let slope = self.alpha_hi - self.alpha_lo;
        if slope != 0.0 {
            return slope > 0.0;
        }
        let mut terms = [(self.beta_hi, self.z_hi), (self.beta_lo, -self.z_lo)];
        if (self.beta_hi - self.beta_lo).abs() < EQUAL_BETA_TOL {
            terms = [(self.beta_hi, self.z_hi - self.z_lo), (self.beta_lo, 0.0)];
        }
        let lead = terms
            .iter()
            .filter(|(_, c)| *c != 0.0)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        match lead {
            None => true,
            Some(&(e, c)) if e >= 0.0 => c >= -FEASIBILITY_TOL,
            Some(_) => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub count: usize,
    /// Stationary points of `D` above `v`, ascending.
    pub points: Vec<f64>,
    /// Inflection abscissa when it is real.
    pub s: Option<f64>,
}

fn bisect_root(df: &DFunction, mut a: f64, mut b: f64) -> f64 {
    let mut fa = df.derivative(a);
    for _ in 0..200 {
        let m = (a * b).sqrt();
        let fm = df.derivative(m);
        if fm.abs() < 1e-12 || (b - a) < 1e-10 * m {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    (a * b).sqrt()
}

/// Stationary points of `D` on `(v, X_MAX]`.
pub fn classify_stationary(df: &DFunction, lvl: &ConstraintLevel) -> StationaryReport {
    let v = lvl.v();
    let s = df.inflection();
    let mut knots = vec![v];
    if let Some(s) = s {
        if s > v && s < X_MAX {
            knots.push(s);
        }
    }
    knots.push(X_MAX.max(v));
    let mut points = Vec::with_capacity(2);
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (da, db) = (df.derivative(a), df.derivative(b));
        if da * db < 0.0 {
            points.push(bisect_root(df, a, b));
        } else if db == 0.0 && b < X_MAX && da != 0.0 {
            // D' touches zero exactly at the inflection
            points.push(b);
        }
    }
    StationaryReport {
        count: points.len(),
        points,
        s,
    }
}

/// `D(x) >= 0` for all `x > v`, given `a_hi >= a_lo`.
fn d_nonnegative(df: &DFunction, lvl: &ConstraintLevel) -> bool {
    let v = lvl.v();
    if df.value(v) < -FEASIBILITY_TOL {
        return false;
    }
    let rep = classify_stationary(df, lvl);
    if rep.points.iter().any(|&x| df.value(x) < -FEASIBILITY_TOL) {
        return false;
    }
    df.value(X_MAX.max(v)) >= -FEASIBILITY_TOL && df.limit_nonnegative()
}

/// Normalised shortfall of `D` below a small positive margin at `v`, the
/// stationary points and the bracket cap. Zero means comfortably feasible.
pub(crate) fn d_violation(df: &DFunction, lvl: &ConstraintLevel) -> f64 {
    let v = lvl.v();
    let rep = classify_stationary(df, lvl);
    std::iter::once(v)
        .chain(rep.points.iter().copied())
        .chain(std::iter::once(X_MAX.max(v)))
        .map(|x| ((VIOLATION_MARGIN - df.value(x)) / x).max(0.0))
        .sum()
}

/// One conditional quantile curve: `(alpha, beta)` plus its residual summary.
#[derive(Debug, Clone, Copy)]
pub struct TailCurve<'a> {
    pub alpha: f64,
    pub beta: f64,
    pub summary: &'a ResidualSummary,
}

/// Both asymptotic-dependence cases at one `q`, exactly as the closed-form
/// conditions read. Any NaN arising in a branch makes that branch fail.
pub fn keef_feasible_at(alpha: f64, beta: f64, z: f64, z_plus: f64, z_minus: f64, v: f64) -> bool {
    let vb1 = v.powf(beta - 1.0);
    let exponent = 1.0 / (1.0 - beta);
    let power = -beta / (1.0 - beta);

    // Case I: y(q) <= x + z+(q)
    let c1_slope = 1.0 - beta * z * vb1;
    let c1_level = 1.0 - vb1 * z + z_plus / v;
    let case1_either = alpha <= 1f64.min(c1_slope).min(c1_level);
    let case1_or = c1_slope < alpha
        && alpha <= 1.0
        && (1.0 - 1.0 / beta) * (beta * z).powf(exponent) * (1.0 - alpha).powf(power) + z_plus > 0.0;
    if !(case1_either || case1_or) {
        return false;
    }

    // Case II: y(q) >= -x + z-(q)
    let c2_slope = 1.0 + beta * vb1 * z;
    let c2_level = 1.0 + vb1 * z - z_minus / v;
    let case2_either = -alpha <= 1f64.min(c2_slope).min(c2_level);
    let case2_or = c2_slope < -alpha
        && -alpha <= 1.0
        && (1.0 - 1.0 / beta) * (-beta * z).powf(exponent) * (1.0 + alpha).powf(power) - z_minus > 0.0;
    case2_either || case2_or
}

pub fn keef_feasible(alpha: f64, beta: f64, rs: &ResidualSummary, lvl: &ConstraintLevel, qs: &[f64]) -> bool {
    qs.iter().all(|&q| {
        keef_feasible_at(
            alpha,
            beta,
            rs.z_quantile(q),
            rs.z_plus_quantile(q),
            rs.z_minus_quantile(q),
            lvl.v(),
        )
    })
}

/// The asymptotic-dependence bounds written as two ordering problems against
/// the perfect-dependence curves `(1, 0, z+)` and `(-1, 0, z-)`.
pub(crate) fn keef_violation(alpha: f64, beta: f64, z: f64, z_plus: f64, z_minus: f64, lvl: &ConstraintLevel) -> f64 {
    let upper = DFunction {
        alpha_hi: 1.0,
        beta_hi: 0.0,
        z_hi: z_plus,
        alpha_lo: alpha,
        beta_lo: beta,
        z_lo: z,
    };
    let lower = DFunction {
        alpha_hi: alpha,
        beta_hi: beta,
        z_hi: z,
        alpha_lo: -1.0,
        beta_lo: 0.0,
        z_lo: z_minus,
    };
    d_violation(&upper, lvl) + d_violation(&lower, lvl)
}

/// Ordering at a single `q` given the two curves' residual quantiles.
pub fn so_feasible_at(hi: (f64, f64, f64), lo: (f64, f64, f64), lvl: &ConstraintLevel) -> bool {
    if hi.0 < lo.0 {
        return false;
    }
    d_nonnegative(
        &DFunction {
            alpha_hi: hi.0,
            beta_hi: hi.1,
            z_hi: hi.2,
            alpha_lo: lo.0,
            beta_lo: lo.1,
            z_lo: lo.2,
        },
        lvl,
    )
}

pub(crate) fn so_violation(hi: (f64, f64, f64), lo: (f64, f64, f64), lvl: &ConstraintLevel) -> f64 {
    let df = DFunction {
        alpha_hi: hi.0,
        beta_hi: hi.1,
        z_hi: hi.2,
        alpha_lo: lo.0,
        beta_lo: lo.1,
        z_lo: lo.2,
    };
    10.0 * (lo.0 - hi.0 + VIOLATION_MARGIN).max(0.0) + d_violation(&df, lvl)
}

/// `hi`'s conditional quantiles dominate `lo`'s for every `x > v` and each `q`.
pub fn so_feasible(hi: &TailCurve, lo: &TailCurve, lvl: &ConstraintLevel, qs: &[f64]) -> bool {
    if hi.alpha < lo.alpha {
        return false;
    }
    qs.iter().all(|&q| {
        so_feasible_at(
            (hi.alpha, hi.beta, hi.summary.z_quantile(q)),
            (lo.alpha, lo.beta, lo.summary.z_quantile(q)),
            lvl,
        )
    })
}

/// Groups listed lowest tail first: every adjacent pair must be ordered and
/// every group must satisfy the asymptotic-dependence bounds.
pub fn so_feasible_chain(groups: &[TailCurve], lvl: &ConstraintLevel, qs: &[f64]) -> Result<bool> {
    if groups.len() < 2 {
        return Err(Error::Domain(format!(
            "an ordering chain needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    Ok(groups
        .iter()
        .all(|g| keef_feasible(g.alpha, g.beta, g.summary, lvl, qs))
        && groups.windows(2).all(|w| so_feasible(&w[1], &w[0], lvl, qs)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lvl(v: f64) -> ConstraintLevel {
        ConstraintLevel::new(v).unwrap()
    }

    fn proof_example() -> DFunction {
        DFunction {
            alpha_hi: 0.2,
            alpha_lo: 0.1,
            beta_hi: 0.2,
            beta_lo: 0.5,
            z_hi: 0.6,
            z_lo: 0.6,
        }
    }

    #[test]
    fn two_stationary_points_in_worked_example() {
        let df = proof_example();
        let rep = classify_stationary(&df, &lvl(0.01));
        assert_eq!(rep.count, 2);
        let s = rep.s.unwrap();
        assert!((s - 0.2259).abs() < 1e-3, "s = {s}");
        assert!(df.derivative(s) < 0.0);
        assert!(rep.points[0] < s && s < rep.points[1]);
        for &p in &rep.points {
            assert!(df.derivative(p).abs() < 1e-9);
            assert!(df.derivative(p * 0.99) * df.derivative(p * 1.01) < 0.0);
        }
    }

    #[test]
    fn linear_difference_has_no_stationary_point() {
        let df = DFunction {
            z_hi: 0.0,
            z_lo: 0.0,
            ..proof_example()
        };
        let rep = classify_stationary(&df, &lvl(0.01));
        assert_eq!(rep.count, 0);
        assert!(rep.s.is_none());
    }

    #[test]
    fn equal_betas_give_at_most_one_point() {
        let df = DFunction {
            alpha_hi: 0.3,
            alpha_lo: 0.1,
            beta_hi: 0.4,
            beta_lo: 0.4,
            z_hi: -2.0,
            z_lo: 1.0,
        };
        let rep = classify_stationary(&df, &lvl(0.5));
        assert!(rep.s.is_none());
        assert!(rep.count <= 1);
    }

    #[test]
    fn identical_curves_are_ordered() {
        let rs = ResidualSummary::from_samples(&[-0.4, 0.3, 1.1], &[-2.0, 0.5], &[0.0, 3.0]);
        let c = TailCurve {
            alpha: 0.4,
            beta: 0.3,
            summary: &rs,
        };
        assert!(so_feasible(&c, &c, &lvl(5.0), &[0.0, 1.0]));
    }

    #[test]
    fn alpha_order_is_necessary() {
        let rs = ResidualSummary::from_samples(&[0.0], &[0.0], &[0.0]);
        let hi = TailCurve {
            alpha: 0.2,
            beta: 0.0,
            summary: &rs,
        };
        let lo = TailCurve {
            alpha: 0.3,
            beta: 0.0,
            summary: &rs,
        };
        assert!(!so_feasible(&hi, &lo, &lvl(5.0), &[0.0, 1.0]));
    }

    #[test]
    fn decreasing_difference_without_stationary_point_is_infeasible() {
        // D(x) = 3 - x^0.5 starts positive at v = 1 and never turns.
        let df = DFunction {
            alpha_hi: 0.5,
            alpha_lo: 0.5,
            beta_hi: 0.5,
            beta_lo: 0.0,
            z_hi: -1.0,
            z_lo: -3.0,
        };
        assert_eq!(classify_stationary(&df, &lvl(1.0)).count, 0);
        assert!(!d_nonnegative(&df, &lvl(1.0)));
    }

    #[test]
    fn keef_equality_case_is_feasible() {
        let rs = ResidualSummary::from_samples(&[-1.0, 2.0], &[-1.0, 2.0], &[-10.0, 10.0]);
        assert!(keef_feasible(1.0, 0.0, &rs, &lvl(5.0), &[0.0, 1.0]));
    }

    #[test]
    fn keef_residual_above_ad_bound_is_infeasible() {
        let rs = ResidualSummary::from_samples(&[-1.0, 3.0], &[-1.0, 2.0], &[-10.0, 10.0]);
        assert!(!keef_feasible(1.0, 0.0, &rs, &lvl(5.0), &[0.0, 1.0]));
    }

    #[test]
    fn chain_needs_two_groups() {
        let rs = ResidualSummary::from_samples(&[0.0], &[0.0], &[0.0]);
        let c = TailCurve {
            alpha: 0.0,
            beta: 0.0,
            summary: &rs,
        };
        assert!(matches!(
            so_feasible_chain(&[c], &lvl(5.0), &[0.0, 1.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn chain_of_identical_groups_is_feasible() {
        let rs = ResidualSummary::from_samples(&[-0.5, 0.5], &[-3.0, 1.0], &[-1.0, 4.0]);
        let c = TailCurve {
            alpha: 0.2,
            beta: 0.3,
            summary: &rs,
        };
        assert!(so_feasible_chain(&[c, c, c], &lvl(6.0), &[0.0, 1.0]).unwrap());
        let bad = TailCurve { alpha: 0.1, ..c };
        assert!(!so_feasible_chain(&[c, bad, c], &lvl(6.0), &[0.0, 1.0]).unwrap());
    }

    #[test]
    fn violation_zero_implies_exact_feasibility() {
        let df = proof_example();
        let l = lvl(0.01);
        if d_violation(&df, &l) == 0.0 {
            assert!(d_nonnegative(&df, &l));
        }
        let bad = DFunction { alpha_hi: 0.05, ..df };
        assert!(d_violation(&bad, &l) > 0.0);
    }
}
