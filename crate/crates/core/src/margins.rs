//! Semiparametric marginal model (empirical body, generalised Pareto tail)
//! and the probability-integral transform to standard Laplace margins.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::NelderMead;
use crate::stats::{quantile_sorted, sorted_copy};

/// Upper CDF clamp used when a GP tail with `xi < 0` is evaluated at or
/// beyond its finite endpoint.
pub const ENDPOINT_EPS: f64 = 1e-10;

/// Below this `|xi|` the GP formulas switch to their exponential limit.
const XI_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub sigma: f64,
    pub xi: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("GP scale must be positive, got {sigma}")));
        }
        if !(xi > -1.0 && xi.is_finite()) {
            return Err(Error::Domain(format!("GP shape must exceed -1, got {xi}")));
        }
        Ok(Self { sigma, xi })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        let t = self.xi * x / self.sigma;
        if self.xi.abs() < XI_ZERO {
            -self.sigma.ln() - x / self.sigma
        } else if t <= -1.0 {
            f64::NEG_INFINITY
        } else {
            -self.sigma.ln() - (1.0 + 1.0 / self.xi) * t.ln_1p()
        }
    }

    /// P(X > x) for an excess x >= 0.
    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if self.xi.abs() < XI_ZERO {
            return (-x / self.sigma).exp();
        }
        let t = self.xi * x / self.sigma;
        if t <= -1.0 {
            0.0
        } else {
            (-t.ln_1p() / self.xi).exp()
        }
    }

    /// Excess level exceeded with probability `p`.
    pub fn survival_quantile(&self, p: f64) -> f64 {
        if self.xi.abs() < XI_ZERO {
            -self.sigma * p.ln()
        } else {
            self.sigma * (p.powf(-self.xi) - 1.0) / self.xi
        }
    }

    pub fn neg_log_likelihood(&self, excesses: &[f64]) -> f64 {
        -excesses.iter().map(|&x| self.log_density(x)).sum::<f64>()
    }
}

/// Maximum likelihood fit of GP(sigma, xi) to threshold excesses.
///
/// Simplex search over `(log sigma, xi)` from five starts; `xi` outside
/// `(-1, 2]` is rejected.
pub fn fit_gpd(excesses: &[f64]) -> Result<GpdParams> {
    if excesses.is_empty() {
        return Err(Error::InsufficientData("no threshold excesses".into()));
    }
    if excesses.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain("excesses must be positive and finite".into()));
    }
    let n = excesses.len() as f64;
    let mean = excesses.iter().sum::<f64>() / n;
    let var = excesses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let xi_mom = if var > 0.0 {
        (0.5 * (1.0 - mean * mean / var)).clamp(-0.45, 0.9)
    } else {
        0.0
    };
    let sigma_mom = (mean * (1.0 - xi_mom)).max(mean * 0.1);

    let objective = |p: &[f64]| {
        let xi = p[1];
        if !(xi > -1.0 && xi <= 2.0) {
            return f64::INFINITY;
        }
        let gp = GpdParams { sigma: p[0].exp(), xi };
        gp.neg_log_likelihood(excesses)
    };

    let starts = [
        (sigma_mom.ln(), xi_mom),
        (mean.ln(), 0.0),
        (mean.ln(), 0.25),
        (mean.ln(), -0.25),
        ((2.0 * mean).ln(), 0.5),
    ];
    let nm = NelderMead::new(vec![0.2, 0.1])
        .with_max_evals(3000)
        .with_tolerances(1e-12, 1e-10);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (ls, xi) in starts {
        let mut m = nm.minimize(objective, &[ls, xi], None);
        // one restart from the optimum guards against premature collapse
        m = nm.minimize(objective, &m.x, None);
        if m.value.is_finite() && best.as_ref().is_none_or(|(v, _)| m.value < *v) {
            best = Some((m.value, m.x));
        }
    }
    let (_, x) = best.ok_or_else(|| Error::FitDiverged("GP likelihood is not finite at any start".into()))?;
    GpdParams::new(x[0].exp(), x[1])
}

/// Empirical CDF below the threshold, GP tail above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub threshold_u: f64,
    /// 1 - F~(u) where F~ is the empirical CDF with denominator n + 1.
    pub exceed_prob: f64,
    /// Ascending sample behind the empirical CDF.
    pub body_sample: Vec<f64>,
    pub gpd: GpdParams,
}

impl MarginalModel {
    /// Fit with the threshold at the type-7 sample quantile `threshold_level`.
    pub fn fit(sample: &[f64], threshold_level: f64) -> Result<Self> {
        if !(threshold_level > 0.0 && threshold_level < 1.0) {
            return Err(Error::Domain(format!(
                "threshold level must lie in (0,1), got {threshold_level}"
            )));
        }
        if sample.len() < 10 {
            return Err(Error::InsufficientData(format!(
                "marginal fit needs at least 10 values, got {}",
                sample.len()
            )));
        }
        let sorted = sorted_copy(sample);
        let u = quantile_sorted(&sorted, threshold_level);
        let excesses: Vec<f64> = sorted.iter().filter(|&&x| x > u).map(|x| x - u).collect();
        if excesses.len() < 5 {
            return Err(Error::InsufficientData(format!(
                "only {} values above the marginal threshold",
                excesses.len()
            )));
        }
        let gpd = fit_gpd(&excesses)?;
        Ok(Self::new(sorted, u, gpd))
    }

    pub fn new(mut body_sample: Vec<f64>, threshold_u: f64, gpd: GpdParams) -> Self {
        body_sample.sort_by(f64::total_cmp);
        let n = body_sample.len() as f64;
        let at_or_below = body_sample.partition_point(|&x| x <= threshold_u) as f64;
        Self {
            threshold_u,
            exceed_prob: 1.0 - at_or_below / (n + 1.0),
            body_sample,
            gpd,
        }
    }

    fn empirical_cdf(&self, x: f64) -> f64 {
        let k = self.body_sample.partition_point(|&s| s <= x) as f64;
        k / (self.body_sample.len() as f64 + 1.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        semiparametric_cdf(x, self)
    }

    /// Inverse of [`MarginalModel::cdf`]: order statistics in the body,
    /// the GP quantile in the tail.
    pub fn quantile(&self, p: f64) -> f64 {
        let body = 1.0 - self.exceed_prob;
        if p > body {
            let tail = ((1.0 - p) / self.exceed_prob).clamp(f64::MIN_POSITIVE, 1.0);
            return self.threshold_u + self.gpd.survival_quantile(tail);
        }
        let n = self.body_sample.len();
        let k = (p * (n as f64 + 1.0)).ceil() as usize;
        self.body_sample[k.clamp(1, n) - 1]
    }

    pub fn to_laplace(&self, x: f64) -> f64 {
        let p = self.cdf(x).clamp(ENDPOINT_EPS, 1.0 - ENDPOINT_EPS);
        laplace_from_uniform(p)
    }

    pub fn from_laplace(&self, y: f64) -> f64 {
        self.quantile(from_laplace(y))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }
}

/// F^(x): empirical CDF at or below the threshold, GP tail above.
pub fn semiparametric_cdf(x: f64, m: &MarginalModel) -> f64 {
    if x > m.threshold_u {
        let v = 1.0 - m.exceed_prob * m.gpd.survival(x - m.threshold_u);
        v.min(1.0 - ENDPOINT_EPS)
    } else {
        m.empirical_cdf(x).max(ENDPOINT_EPS)
    }
}

/// Standard Laplace value with CDF `p`.
pub fn to_laplace(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0,1), got {p}")));
    }
    Ok(laplace_from_uniform(p))
}

fn laplace_from_uniform(p: f64) -> f64 {
    if p < 0.5 {
        (2.0 * p).ln()
    } else {
        -(2.0 * (1.0 - p)).ln()
    }
}

/// Standard Laplace CDF, the inverse of [`to_laplace`].
pub fn from_laplace(y: f64) -> f64 {
    if y < 0.0 {
        0.5 * y.exp()
    } else {
        1.0 - 0.5 * (-y).exp()
    }
}

pub fn laplace_quantile(p: f64) -> Result<f64> {
    to_laplace(p)
}

/// Draw from the standard Laplace distribution conditioned on exceeding `u`.
pub fn sample_laplace_above<R: Rng + ?Sized>(u: f64, rng: &mut R) -> f64 {
    let e = -rng.sample::<f64, _>(rand::distributions::Open01).ln();
    if u >= 0.0 {
        u + e
    } else {
        let pu = from_laplace(u);
        let p = pu + (1.0 - pu) * rng.gen::<f64>();
        if p <= pu {
            u
        } else {
            laplace_from_uniform(p.min(1.0 - f64::EPSILON))
        }
    }
}
