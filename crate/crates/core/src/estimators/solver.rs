//! Damped Newton root finder with a forward-difference Jacobian.

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, solve};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Converged when ‖s(θ)‖∞ ≤ tol·(1 + ‖θ‖∞).
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Additional perturbed starting points tried after a failure.
    pub restarts: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, max_halvings: 20, restarts: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub score_norm: f64,
    /// Index of the successful start (0 = the supplied initial value).
    pub start: usize,
}

/// Forward-difference Jacobian with step 1e-6·(1 + |θ_j|).
pub fn jacobian<F>(f: &F, theta: &[f64], at: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let d = theta.len();
    let mut j = DMatrix::zeros(at.len(), d);
    let mut probe = theta.to_vec();
    for c in 0..d {
        let h = 1e-6 * (1.0 + theta[c].abs());
        probe[c] = theta[c] + h;
        let s = f(&probe);
        probe[c] = theta[c];
        for r in 0..at.len() {
            j[(r, c)] = (s[r] - at[r]) / h;
        }
    }
    j
}

/// Central-difference Jacobian, used to cross-check [`jacobian`].
pub fn central_jacobian<F>(f: &F, theta: &[f64], step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let d = theta.len();
    let m = f(theta).len();
    let mut j = DMatrix::zeros(m, d);
    let mut probe = theta.to_vec();
    for c in 0..d {
        probe[c] = theta[c] + step;
        let hi = f(&probe);
        probe[c] = theta[c] - step;
        let lo = f(&probe);
        probe[c] = theta[c];
        for r in 0..m {
            j[(r, c)] = (hi[r] - lo[r]) / (2.0 * step);
        }
    }
    j
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn converged(s: &[f64], theta: &[f64], tol: f64) -> bool {
    inf_norm(s) <= tol * (1.0 + inf_norm(theta))
}

enum Attempt {
    Root(Solution),
    Failed(f64, Vec<f64>),
}

fn newton<F>(f: &F, init: &[f64], opts: &SolverOptions, start: usize) -> Attempt
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut theta = init.to_vec();
    let mut s = f(&theta);
    for iter in 0..=opts.max_iter {
        if s.iter().any(|v| !v.is_finite()) {
            return Attempt::Failed(f64::INFINITY, theta);
        }
        if converged(&s, &theta, opts.tol) {
            return Attempt::Root(Solution { score_norm: inf_norm(&s), theta, iterations: iter, start });
        }
        if iter == opts.max_iter {
            break;
        }
        let j = jacobian(f, &theta, &s);
        let rhs = -DVector::from_column_slice(&s);
        let Some(step) = solve(&j, &rhs) else {
            return Attempt::Failed(inf_norm(&s), theta);
        };
        let base = l2(&s);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + scale * d).collect();
            let sc = f(&cand);
            if sc.iter().all(|v| v.is_finite()) && (l2(&sc) < base || converged(&sc, &cand, opts.tol)) {
                accepted = Some((cand, sc));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((t, sc)) => {
                theta = t;
                s = sc;
            }
            None => return Attempt::Failed(inf_norm(&s), theta),
        }
    }
    Attempt::Failed(inf_norm(&s), theta)
}

/// Finds a root of `f`, retrying from deterministic perturbations of `init`.
pub fn solve_score<F>(f: F, init: &[f64], opts: &SolverOptions) -> Result<Solution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(0x00c0_ffee);
    for start in 0..=opts.restarts {
        let x0: Vec<f64> = if start == 0 {
            init.to_vec()
        } else {
            init.iter().map(|v| v + rng.random_range(-0.5..0.5) * (1.0 + v.abs())).collect()
        };
        match newton(&f, &x0, opts, start) {
            Attempt::Root(sol) => return Ok(sol),
            Attempt::Failed(norm, iterate) => {
                if best.as_ref().is_none_or(|(b, _)| norm < *b || b.is_nan()) {
                    best = Some((norm, iterate));
                }
            }
        }
        log::debug!("newton start {start} failed");
    }
    let (norm, iterate) = best.unwrap_or((f64::NAN, init.to_vec()));
    Err(Error::NoConvergence { norm, iterate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_root_in_one_step() {
        let sol = solve_score(|t: &[f64]| vec![2.0 * (t[0] - 3.0)], &[0.0], &SolverOptions::default()).unwrap();
        assert_relative_eq!(sol.theta[0], 3.0, epsilon = 1e-9);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn rootless_score_fails() {
        let r = solve_score(|_: &[f64]| vec![1.0], &[0.0], &SolverOptions::default());
        assert!(matches!(r, Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn nonlinear_system() {
        let f = |t: &[f64]| vec![t[0].exp() - 2.0, t[0] * t[1] - 1.0];
        let sol = solve_score(f, &[0.0, 0.0], &SolverOptions::default()).unwrap();
        assert_relative_eq!(sol.theta[0], 2f64.ln(), epsilon = 1e-8);
        assert_relative_eq!(sol.theta[1], 1.0 / 2f64.ln(), epsilon = 1e-7);
    }

    #[test]
    fn forward_matches_central() {
        let f = |t: &[f64]| vec![t[0].sin() * t[1], t[1] * t[1] * t[1]];
        let th = [0.3, 1.2];
        let a = jacobian(&f, &th, &f(&th));
        let b = central_jacobian(&f, &th, 1e-6);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= 1e-4 * y.abs().max(1e-6), "{x} vs {y}");
        }
    }
}
