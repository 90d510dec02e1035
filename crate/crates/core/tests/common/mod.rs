//! Brute-force oracles and random configuration generators shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tailorder::stats::log_grid;
use tailorder::ResidualSummary;

pub const GRID_TOL: f64 = 1e-8;
pub const GRID_TOP: f64 = 1e6;
pub const ORACLE_QS: [f64; 2] = [0.0, 1.0];

#[derive(Debug, Clone)]
pub struct Curve {
    pub alpha: f64,
    pub beta: f64,
    pub summary: ResidualSummary,
}

#[derive(Debug, Clone)]
pub struct KeefCase {
    pub curve: Curve,
    pub v: f64,
}

#[derive(Debug, Clone)]
pub struct SoCase {
    pub hi: Curve,
    pub lo: Curve,
    pub v: f64,
}

fn normal_sample(rng: &mut ChaCha8Rng, mean: f64, sd: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Box-Muller keeps this independent of the crate under test
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            mean + sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

pub fn random_summary(rng: &mut ChaCha8Rng) -> ResidualSummary {
    let n = 20;
    let sd = rng.gen_range(0.1..1.0);
    let mean = rng.gen_range(-1.0..1.0);
    let z = normal_sample(rng, mean, sd, n);
    let mean = rng.gen_range(-2.0..2.0);
    let zp = normal_sample(rng, mean, sd, n);
    let mean = rng.gen_range(-2.0..2.0);
    let zm = normal_sample(rng, mean, sd, n);
    ResidualSummary::from_samples(&z, &zp, &zm)
}

pub fn random_v(rng: &mut ChaCha8Rng) -> f64 {
    (rng.gen_range(0.0f64..20f64.ln())).exp()
}

pub fn random_keef_case(rng: &mut ChaCha8Rng) -> KeefCase {
    KeefCase {
        curve: Curve {
            alpha: rng.gen_range(-1.0..1.0),
            beta: rng.gen_range(-1.0..1.0),
            summary: random_summary(rng),
        },
        v: random_v(rng),
    }
}

pub fn random_so_case(rng: &mut ChaCha8Rng) -> SoCase {
    let alpha_lo: f64 = rng.gen_range(-1.0..1.0);
    let alpha_hi = (alpha_lo + rng.gen_range(-0.1..0.6)).clamp(-1.0, 1.0);
    SoCase {
        hi: Curve {
            alpha: alpha_hi,
            beta: rng.gen_range(-1.0..1.0),
            summary: random_summary(rng),
        },
        lo: Curve {
            alpha: alpha_lo,
            beta: rng.gen_range(-1.0..1.0),
            summary: random_summary(rng),
        },
        v: random_v(rng),
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // type 7, written out independently
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `y_minus(q) <= y(q) <= y_plus(q)` on a log-spaced grid over `[v, 1e6]`.
pub fn keef_brute(c: &Curve, v: f64, qs: &[f64], points: usize) -> bool {
    let grid = log_grid(v, GRID_TOP, points);
    qs.iter().all(|&q| {
        let z = quantile(&c.summary.z, q);
        let zp = quantile(&c.summary.z_plus, q);
        let zm = quantile(&c.summary.z_minus, q);
        grid.iter().all(|&x| {
            let y = c.alpha * x + x.powf(c.beta) * z;
            x + zp - y >= -GRID_TOL && y - (zm - x) >= -GRID_TOL
        })
    })
}

/// `alpha_hi >= alpha_lo` and `y_hi(q) >= y_lo(q)` on a log-spaced grid.
pub fn so_brute(hi: &Curve, lo: &Curve, v: f64, qs: &[f64], points: usize) -> bool {
    if hi.alpha < lo.alpha {
        return false;
    }
    let grid = log_grid(v, GRID_TOP, points);
    qs.iter().all(|&q| {
        let zh = quantile(&hi.summary.z, q);
        let zl = quantile(&lo.summary.z, q);
        grid.iter().all(|&x| {
            let d = hi.alpha * x + x.powf(hi.beta) * zh - lo.alpha * x - x.powf(lo.beta) * zl;
            d >= -GRID_TOL
        })
    })
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    normal_sample(rng, 0.0, 1.0, 1)[0]
}

/// Synthetic four-dose trial in the published CSV layout: log-normal
/// baselines, post-baseline = exp(gamma + delta log(baseline) + error) with
/// error correlation between ALT and TBL increasing with dose.
pub fn synthetic_trial(seed: u64, per_dose: usize) -> Vec<tailorder::TrialRecord> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (k, dose) in ["A", "B", "C", "D"].iter().enumerate() {
        let rho = 0.2 + 0.1 * k as f64;
        for _ in 0..per_dose {
            let (e1, e2) = (gaussian(&mut rng), gaussian(&mut rng));
            let (x1, x2) = (e1, rho * e1 + (1.0 - rho * rho).sqrt() * e2);
            let alt_b = (3.1 + 0.35 * gaussian(&mut rng)).exp();
            let tbl_b = (2.2 + 0.35 * gaussian(&mut rng)).exp();
            out.push(tailorder::TrialRecord {
                dose: dose.to_string(),
                alt_baseline: alt_b,
                alt_post: (0.5 + 0.85 * alt_b.ln() + 0.3 * x1).exp(),
                tbl_baseline: tbl_b,
                tbl_post: (0.4 + 0.8 * tbl_b.ln() + 0.25 * x2).exp(),
            });
        }
    }
    out
}

pub fn trial_csv(records: &[tailorder::TrialRecord]) -> String {
    let mut s = String::from("dose,ALT.B,ALT.M,TBL.B,TBL.M\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.dose, r.alt_baseline, r.alt_post, r.tbl_baseline, r.tbl_post
        ));
    }
    s
}
