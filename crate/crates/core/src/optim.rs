//! Derivative-free Nelder–Mead simplex minimisation with optional box
//! projection.
//!
//! Objectives may return `f64::INFINITY` to reject a point; this is how the
//! constrained fits impose their feasible sets.

#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Convergence when the spread of function values falls below this.
    pub ftol: f64,
    /// ...and the simplex diameter falls below this.
    pub xtol: f64,
    /// Initial simplex step per coordinate.
    pub step: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

impl NelderMead {
    pub fn new(step: Vec<f64>) -> Self {
        Self {
            max_evals: 2000,
            ftol: 1e-10,
            xtol: 1e-8,
            step,
        }
    }

    pub fn with_max_evals(mut self, max_evals: usize) -> Self {
        self.max_evals = max_evals;
        self
    }

    pub fn with_tolerances(mut self, ftol: f64, xtol: f64) -> Self {
        self.ftol = ftol;
        self.xtol = xtol;
        self
    }

    pub fn minimize<F>(&self, mut f: F, x0: &[f64], bounds: Option<&[(f64, f64)]>) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = x0.len();
        assert_eq!(self.step.len(), n, "step length must match dimension");
        let project = |x: &mut [f64]| {
            if let Some(b) = bounds {
                for (xi, &(lo, hi)) in x.iter_mut().zip(b) {
                    *xi = xi.clamp(lo, hi);
                }
            }
        };
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut start = x0.to_vec();
        project(&mut start);
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let v0 = eval(&start, &mut evals);
        simplex.push((start.clone(), v0));
        for i in 0..n {
            let mut p = start.clone();
            p[i] += self.step[i];
            project(&mut p);
            if p[i] == start[i] {
                // pinned against a bound, step the other way
                p[i] -= 2.0 * self.step[i];
                project(&mut p);
            }
            let v = eval(&p, &mut evals);
            simplex.push((p, v));
        }

        let mut converged = false;
        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        while evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            let fspread = if worst.is_finite() {
                (worst - best).abs()
            } else {
                f64::INFINITY
            };
            let diam = simplex[1..]
                .iter()
                .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if fspread <= self.ftol * (1.0 + best.abs()) && diam <= self.xtol {
                converged = true;
                break;
            }

            centroid.iter_mut().for_each(|c| *c = 0.0);
            for (p, _) in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(p) {
                    *c += x / n as f64;
                }
            }
            let along = |coef: f64, out: &mut [f64], worst: &[f64]| {
                for ((o, c), w) in out.iter_mut().zip(&centroid).zip(worst) {
                    *o = c + coef * (c - w);
                }
            };

            along(1.0, &mut trial, &simplex[n].0);
            project(&mut trial);
            let fr = eval(&trial, &mut evals);
            if fr < simplex[0].1 {
                let reflected = trial.clone();
                along(2.0, &mut trial, &simplex[n].0);
                project(&mut trial);
                let fe = eval(&trial, &mut evals);
                simplex[n] = if fe < fr { (trial.clone(), fe) } else { (reflected, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (trial.clone(), fr);
                continue;
            }
            let (coef, reference) = if fr < simplex[n].1 {
                (0.5, fr)
            } else {
                (-0.5, simplex[n].1)
            };
            along(coef, &mut trial, &simplex[n].0);
            project(&mut trial);
            let fc = eval(&trial, &mut evals);
            if fc < reference || (fc.is_finite() && fc <= reference) {
                simplex[n] = (trial.clone(), fc);
                continue;
            }
            // shrink toward the best vertex
            let best_x = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                for (x, b) in vertex.0.iter_mut().zip(&best_x) {
                    *x = b + 0.5 * (*x - b);
                }
                project(&mut vertex.0);
                vertex.1 = eval(&vertex.0, &mut evals);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        Minimum {
            x,
            value,
            evals,
            converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let nm = NelderMead::new(vec![0.5, 0.5]).with_max_evals(5000);
        let m = nm.minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            None,
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn respects_bounds() {
        let nm = NelderMead::new(vec![0.1, 0.1]);
        let m = nm.minimize(
            |x| (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2),
            &[0.0, 0.0],
            Some(&[(-1.0, 1.0), (-1.0, 1.0)]),
        );
        assert!((m.x[0] - 1.0).abs() < 1e-6);
        assert!((m.x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn infinite_barrier_keeps_iterates_feasible() {
        // minimise x+y on the disc x^2+y^2 <= 1
        let nm = NelderMead::new(vec![0.2, 0.2]).with_max_evals(4000);
        let m = nm.minimize(
            |x| {
                if x[0] * x[0] + x[1] * x[1] > 1.0 {
                    f64::INFINITY
                } else {
                    x[0] + x[1]
                }
            },
            &[0.0, 0.0],
            None,
        );
        assert!(m.value.is_finite());
        assert!((m.value + 2f64.sqrt()).abs() < 1e-3, "{}", m.value);
    }
}
