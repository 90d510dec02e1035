//! The conditional dependence model `Y_dep = alpha * x + x^beta * Z` for
//! `Y_cond = x > u`, fitted by pseudo-likelihood under a working assumption
//! of Normal residuals.
//!
//! For fixed `(alpha, beta)` the working likelihood is maximised over
//! `(mu, sigma)` in closed form (mean and maximum-likelihood SD of the
//! normalised residuals), so every optimisation here runs on the
//! two-dimensional profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::NelderMead;
use crate::stats::{quantile_sorted, sorted_copy};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub const ALPHA_BOUNDS: (f64, f64) = (-1.0, 1.0);
pub const BETA_BOUNDS: (f64, f64) = (-5.0, 1.0 - 1e-6);
/// Residual SD below which a fit is reported as degenerate.
pub const DEGENERATE_SD: f64 = 1e-8;
/// SD floor inside the objective, keeps the profile finite near collapse.
const SD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HtParams {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Pairs `(y_cond, y_dep)` on the Laplace scale with `y_cond > threshold_u`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawExceedances", into = "RawExceedances")]
pub struct ExceedanceData {
    y_cond: Vec<f64>,
    y_dep: Vec<f64>,
    threshold_u: f64,
    ln_cond: Vec<f64>,
    sum_ln_cond: f64,
    z_plus_sorted: Vec<f64>,
    z_minus_sorted: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawExceedances {
    threshold_u: f64,
    y_cond: Vec<f64>,
    y_dep: Vec<f64>,
}

impl TryFrom<RawExceedances> for ExceedanceData {
    type Error = Error;
    fn try_from(r: RawExceedances) -> Result<Self> {
        ExceedanceData::new(r.y_cond, r.y_dep, r.threshold_u)
    }
}

impl From<ExceedanceData> for RawExceedances {
    fn from(d: ExceedanceData) -> Self {
        RawExceedances {
            threshold_u: d.threshold_u,
            y_cond: d.y_cond,
            y_dep: d.y_dep,
        }
    }
}

impl ExceedanceData {
    pub fn new(y_cond: Vec<f64>, y_dep: Vec<f64>, threshold_u: f64) -> Result<Self> {
        if y_cond.len() != y_dep.len() {
            return Err(Error::Domain("y_cond and y_dep differ in length".into()));
        }
        if y_cond.is_empty() {
            return Err(Error::InsufficientData("no exceedances".into()));
        }
        if !(threshold_u >= 0.0) {
            return Err(Error::Domain(format!(
                "dependence threshold must be non-negative, got {threshold_u}"
            )));
        }
        if let Some(bad) = y_cond.iter().find(|&&y| !(y > threshold_u) || !y.is_finite()) {
            return Err(Error::Domain(format!(
                "conditioning value {bad} does not exceed threshold {threshold_u}"
            )));
        }
        if y_dep.iter().any(|y| !y.is_finite()) {
            return Err(Error::Domain("non-finite dependent value".into()));
        }
        let ln_cond: Vec<f64> = y_cond.iter().map(|y| y.ln()).collect();
        let sum_ln_cond = ln_cond.iter().sum();
        let z_plus: Vec<f64> = y_dep.iter().zip(&y_cond).map(|(d, c)| d - c).collect();
        let z_minus: Vec<f64> = y_dep.iter().zip(&y_cond).map(|(d, c)| d + c).collect();
        Ok(Self {
            z_plus_sorted: sorted_copy(&z_plus),
            z_minus_sorted: sorted_copy(&z_minus),
            y_cond,
            y_dep,
            threshold_u,
            ln_cond,
            sum_ln_cond,
        })
    }

    /// Keep the pairs whose conditioning value exceeds `u`.
    pub fn from_pairs(y_cond: &[f64], y_dep: &[f64], u: f64) -> Result<Self> {
        let (c, d): (Vec<f64>, Vec<f64>) = y_cond
            .iter()
            .zip(y_dep)
            .filter(|(c, _)| **c > u)
            .map(|(c, d)| (*c, *d))
            .unzip();
        Self::new(c, d, u)
    }

    pub fn len(&self) -> usize {
        self.y_cond.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_cond.is_empty()
    }

    pub fn y_cond(&self) -> &[f64] {
        &self.y_cond
    }

    pub fn y_dep(&self) -> &[f64] {
        &self.y_dep
    }

    pub fn threshold_u(&self) -> f64 {
        self.threshold_u
    }

    pub fn max_cond(&self) -> f64 {
        self.y_cond.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn z_plus_sorted(&self) -> &[f64] {
        &self.z_plus_sorted
    }

    pub(crate) fn z_minus_sorted(&self) -> &[f64] {
        &self.z_minus_sorted
    }
}

/// Empirical quantile functions used by the constraint formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    /// Ascending fitted residuals.
    pub z: Vec<f64>,
    /// Ascending `y_dep - y_cond` over the exceedances.
    pub z_plus: Vec<f64>,
    /// Ascending `y_dep + y_cond` over the exceedances.
    pub z_minus: Vec<f64>,
}

impl ResidualSummary {
    pub fn new(residuals: &[f64], data: &ExceedanceData) -> Self {
        Self {
            z: sorted_copy(residuals),
            z_plus: data.z_plus_sorted.clone(),
            z_minus: data.z_minus_sorted.clone(),
        }
    }

    /// Build from explicit samples; each is sorted here.
    pub fn from_samples(z: &[f64], z_plus: &[f64], z_minus: &[f64]) -> Self {
        Self {
            z: sorted_copy(z),
            z_plus: sorted_copy(z_plus),
            z_minus: sorted_copy(z_minus),
        }
    }

    pub fn z_quantile(&self, q: f64) -> f64 {
        quantile_sorted(&self.z, q)
    }

    pub fn z_plus_quantile(&self, q: f64) -> f64 {
        quantile_sorted(&self.z_plus, q)
    }

    pub fn z_minus_quantile(&self, q: f64) -> f64 {
        quantile_sorted(&self.z_minus, q)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HtFit {
    pub params: HtParams,
    pub residuals: Vec<f64>,
    pub loglik: f64,
    pub residual_summary: ResidualSummary,
}

impl HtFit {
    /// Profile `(mu, sigma)` at the given `(alpha, beta)` and assemble the fit.
    pub fn at(data: &ExceedanceData, alpha: f64, beta: f64) -> Result<Self> {
        let z = residuals(alpha, beta, data);
        let p = profile(data, alpha, beta);
        if p.sd < DEGENERATE_SD {
            return Err(Error::DegenerateResiduals { alpha, beta, sd: p.sd });
        }
        Ok(Self {
            params: HtParams {
                alpha,
                beta,
                mu: p.mu,
                sigma: p.sd,
            },
            residual_summary: ResidualSummary::new(&z, data),
            residuals: z,
            loglik: p.loglik,
        })
    }

    pub fn conditional_quantile(&self, x: f64, q: f64) -> Result<f64> {
        conditional_quantile(&self.params, &self.residual_summary, x, q)
    }
}

/// Profiled working likelihood at fixed `(alpha, beta)`.
#[derive(Debug, Clone, Copy)]
pub struct Profile {
    pub mu: f64,
    pub sd: f64,
    pub loglik: f64,
    pub z_min: f64,
    pub z_max: f64,
}

pub fn profile(d: &ExceedanceData, alpha: f64, beta: f64) -> Profile {
    let n = d.len() as f64;
    let mut shift = f64::NAN;
    let (mut s1, mut s2) = (0.0, 0.0);
    let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for ((&x, &y), &lx) in d.y_cond.iter().zip(&d.y_dep).zip(&d.ln_cond) {
        let z = (y - alpha * x) * (-beta * lx).exp();
        if shift.is_nan() {
            shift = z;
        }
        let c = z - shift;
        s1 += c;
        s2 += c * c;
        zmin = zmin.min(z);
        zmax = zmax.max(z);
    }
    let mean_c = s1 / n;
    let var = (s2 / n - mean_c * mean_c).max(0.0);
    let sd = var.sqrt();
    let nll = n * sd.max(SD_FLOOR).ln() + beta * d.sum_ln_cond + n * (0.5 + HALF_LN_2PI);
    Profile {
        mu: shift + mean_c,
        sd,
        loglik: if nll.is_finite() { -nll } else { f64::NEG_INFINITY },
        z_min: zmin,
        z_max: zmax,
    }
}

/// Negative working log-likelihood, including the `(n/2) log 2 pi` constant.
pub fn negloglik(p: &HtParams, d: &ExceedanceData) -> Result<f64> {
    if !(p.sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {}", p.sigma)));
    }
    let mut total = 0.0;
    for ((&x, &y), &lx) in d.y_cond.iter().zip(&d.y_dep).zip(&d.ln_cond) {
        let xb = (p.beta * lx).exp();
        let sd = p.sigma * xb;
        let r = y - p.alpha * x - p.mu * xb;
        total += sd.ln() + r * r / (2.0 * sd * sd);
    }
    Ok(total + d.len() as f64 * HALF_LN_2PI)
}

/// `z_i = (y_dep,i - alpha * y_cond,i) / y_cond,i^beta`.
pub fn residuals(alpha: f64, beta: f64, d: &ExceedanceData) -> Vec<f64> {
    d.y_cond
        .iter()
        .zip(&d.y_dep)
        .zip(&d.ln_cond)
        .map(|((&x, &y), &lx)| (y - alpha * x) * (-beta * lx).exp())
        .collect()
}

/// `alpha * x + x^beta * z(q)`.
pub fn conditional_quantile(p: &HtParams, rs: &ResidualSummary, x: f64, q: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("conditioning level must be positive, got {x}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level must lie in [0,1], got {q}")));
    }
    Ok(p.alpha * x + x.powf(p.beta) * rs.z_quantile(q))
}

/// Profile log-likelihood on an `(alpha, beta)` grid; rows follow `grid_alpha`.
pub fn profile_surface(d: &ExceedanceData, grid_alpha: &[f64], grid_beta: &[f64]) -> Vec<Vec<f64>> {
    grid_alpha
        .iter()
        .map(|&a| grid_beta.iter().map(|&b| profile(d, a, b).loglik).collect())
        .collect()
}

/// The 21 x 21 reference grid over `[-1, 1] x [-3, 1)` used to seed fits.
pub fn reference_grid() -> (Vec<f64>, Vec<f64>) {
    let alphas = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
    let betas = (0..21).map(|j| -3.0 + 4.0 * j as f64 / 21.0).collect();
    (alphas, betas)
}

pub(crate) fn ht_bounds() -> [(f64, f64); 2] {
    [ALPHA_BOUNDS, BETA_BOUNDS]
}

pub(crate) fn simplex_2d() -> NelderMead {
    NelderMead::new(vec![0.1, 0.1])
        .with_max_evals(1500)
        .with_tolerances(1e-11, 1e-7)
}

/// Unconstrained pseudo-likelihood fit.
///
/// Starts from `{-0.5, 0, 0.5} x {0, 0.5}` and the best point of
/// [`reference_grid`]; the best optimum wins, ties going to the earlier start.
pub fn fit_unconstrained(d: &ExceedanceData) -> Result<HtFit> {
    if d.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 exceedances, got {}",
            d.len()
        )));
    }
    let (ga, gb) = reference_grid();
    let mut grid_best = (f64::NEG_INFINITY, [0.0, 0.0]);
    for &a in &ga {
        for &b in &gb {
            let ll = profile(d, a, b).loglik;
            if ll > grid_best.0 {
                grid_best = (ll, [a, b]);
            }
        }
    }
    let mut starts: Vec<[f64; 2]> = Vec::with_capacity(7);
    for a in [-0.5, 0.0, 0.5] {
        for b in [0.0, 0.5] {
            starts.push([a, b]);
        }
    }
    starts.push(grid_best.1);

    let bounds = ht_bounds();
    let nm = simplex_2d();
    let mut best: Option<(f64, [f64; 2])> = None;
    for s in &starts {
        let m = nm.minimize(|p| -profile(d, p[0], p[1]).loglik, s, Some(&bounds));
        let ll = -m.value;
        if ll.is_finite() && best.is_none_or(|(b, _)| ll > b) {
            best = Some((ll, [m.x[0], m.x[1]]));
        }
    }
    let (_, [a, b]) = best.ok_or_else(|| Error::FitDiverged("no start reached a finite likelihood".into()))?;
    HtFit::at(d, a, b)
}
