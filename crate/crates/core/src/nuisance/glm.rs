//! Penalized IRLS for logistic and log-link count regressions with
//! smoothing parameters chosen by generalized cross-validation.

use crate::error::{Error, Result};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Binary response, logit link.
    Logistic,
    /// Nonnegative response, log link, Poisson variance (quasi-count).
    LogLink,
}

/// Penalty `λ · θ[start..start+k]ᵀ S θ[start..start+k]` for one smooth term.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyBlock {
    pub start: usize,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    pub lambda_grid: Vec<f64>,
    pub max_iter: usize,
    /// Relative change in penalized deviance that counts as converged.
    pub tol: f64,
    /// Logistic predictions are reported clipped to `[clip, 1 - clip]`.
    pub prob_clip: f64,
    /// Fail with `SeparationDetected` when more than half of the fitted
    /// probabilities are pinned at the clip bounds.
    pub separation_check: bool,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            lambda_grid: default_lambda_grid(),
            max_iter: 100,
            tol: 1e-8,
            prob_clip: 0.01,
            separation_check: true,
        }
    }
}

/// 9 log-spaced points from 1e-4 to 1e4.
pub fn default_lambda_grid() -> Vec<f64> {
    (-4..=4).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub family: Family,
    pub coefficients: DVector<f64>,
    /// One per penalty block.
    pub lambdas: Vec<f64>,
    pub iterations: usize,
    pub deviance: f64,
    pub edf: f64,
    pub gcv: f64,
    pub prob_clip: f64,
}

impl GlmFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let eta = self.linear_predictor(x);
        match self.family {
            Family::Logistic => expit(eta).clamp(self.prob_clip, 1.0 - self.prob_clip),
            Family::LogLink => eta.min(700.0).exp(),
        }
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Fits a penalized GLM. Weights are normalized to mean one, so multiplying
/// them by a constant leaves the fit unchanged.
///
/// Without penalty blocks a single unpenalized fit is returned. With one block
/// the whole grid is scanned; with several, coordinate-wise grid search runs
/// two sweeps starting from the grid midpoint.
pub fn fit_penalized_glm(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
    family: Family,
    penalties: &[PenaltyBlock],
    options: &GlmOptions,
) -> Result<GlmFit> {
    let n = design.nrows();
    if response.len() != n || weights.len() != n {
        return Err(Error::InvalidConfig("design, response and weights must have equal length".into()));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    match family {
        Family::Logistic if response.iter().any(|&y| y != 0.0 && y != 1.0) => {
            return Err(Error::InvalidConfig("logistic response must be binary".into()))
        }
        Family::LogLink if response.iter().any(|&y| !(y >= 0.0)) => {
            return Err(Error::InvalidConfig("log-link response must be nonnegative".into()))
        }
        _ => {}
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidConfig("weights must be nonnegative with a positive sum".into()));
    }
    let w: Vec<f64> = weights.iter().map(|v| v * n as f64 / wsum).collect();

    if family == Family::Logistic {
        if let Some(fit) = degenerate_logistic(design, response, &w, penalties, options) {
            return Ok(fit);
        }
    }

    let fit = if penalties.is_empty() {
        irls(design, response, &w, family, &[], &[], options, None)?
    } else if options.lambda_grid.is_empty() {
        return Err(Error::InvalidConfig("empty smoothing-parameter grid".into()));
    } else {
        let grid = &options.lambda_grid;
        let mut idx = vec![grid.len() / 2; penalties.len()];
        let sweeps = if penalties.len() == 1 { 1 } else { 2 };
        let mut best: Option<GlmFit> = None;
        for _ in 0..sweeps {
            for b in 0..penalties.len() {
                let mut best_here: Option<(usize, GlmFit)> = None;
                for (g, _) in grid.iter().enumerate() {
                    idx[b] = g;
                    let lambdas: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
                    let warm = best_here.as_ref().map(|(_, f)| f.coefficients.clone());
                    let fit = irls(design, response, &w, family, penalties, &lambdas, options, warm)?;
                    if best_here.as_ref().is_none_or(|(_, f)| fit.gcv < f.gcv) {
                        best_here = Some((g, fit));
                    }
                }
                let (g, fit) = best_here.expect("nonempty grid");
                idx[b] = g;
                best = Some(fit);
            }
        }
        best.expect("at least one block")
    };

    if family == Family::Logistic && options.separation_check {
        let pinned = (0..n)
            .filter(|&i| {
                let p = expit(fit.linear_predictor(design.row(i).clone_owned().as_slice()));
                p <= options.prob_clip || p >= 1.0 - options.prob_clip
            })
            .count();
        let frac = pinned as f64 / n as f64;
        if frac > 0.5 {
            return Err(Error::SeparationDetected(100.0 * frac));
        }
    }
    Ok(fit)
}

/// Constant binary response: the MLE sits at the boundary, so report the
/// clipped probability directly (intercept-only designs).
fn degenerate_logistic(
    design: &DMatrix<f64>,
    response: &[f64],
    w: &[f64],
    penalties: &[PenaltyBlock],
    options: &GlmOptions,
) -> Option<GlmFit> {
    let first = response[0];
    if response.iter().any(|&y| y != first) {
        return None;
    }
    let p = if first == 0.0 { options.prob_clip } else { 1.0 - options.prob_clip };
    let intercept = (0..design.ncols()).find(|&j| design.column(j).iter().all(|&v| v == 1.0))?;
    let mut coefficients = DVector::zeros(design.ncols());
    coefficients[intercept] = logit(p);
    let deviance = (0..response.len()).map(|i| w[i] * bernoulli_dev(first, p)).sum();
    Some(GlmFit {
        family: Family::Logistic,
        coefficients,
        lambdas: vec![options.lambda_grid.first().copied().unwrap_or(0.0); penalties.len()],
        iterations: 0,
        deviance,
        edf: 1.0,
        gcv: f64::NAN,
        prob_clip: options.prob_clip,
    })
}

fn bernoulli_dev(y: f64, mu: f64) -> f64 {
    let mu = mu.clamp(1e-300, 1.0 - 1e-16);
    if y > 0.5 {
        -2.0 * mu.ln()
    } else {
        -2.0 * (1.0 - mu).ln()
    }
}

fn poisson_dev(y: f64, mu: f64) -> f64 {
    let ylogy = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
    2.0 * (ylogy - (y - mu))
}

fn deviance(family: Family, y: &[f64], w: &[f64], eta: &DVector<f64>) -> f64 {
    let mut d = 0.0;
    for i in 0..y.len() {
        if w[i] == 0.0 {
            continue;
        }
        d += w[i]
            * match family {
                Family::Logistic => bernoulli_dev(y[i], expit(eta[i])),
                Family::LogLink => poisson_dev(y[i], eta[i].min(700.0).exp()),
            };
    }
    d
}

fn penalty_matrix(p: usize, penalties: &[PenaltyBlock], lambdas: &[f64]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(p, p);
    for (b, lam) in penalties.iter().zip(lambdas) {
        let k = b.matrix.nrows();
        let mut view = s.view_mut((b.start, b.start), (k, k));
        view += &b.matrix * *lam;
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn irls(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    family: Family,
    penalties: &[PenaltyBlock],
    lambdas: &[f64],
    options: &GlmOptions,
    warm: Option<DVector<f64>>,
) -> Result<GlmFit> {
    let n = x.nrows();
    let p = x.ncols();
    let s = penalty_matrix(p, penalties, lambdas);

    // columns that are identically zero and unpenalized are pinned at zero
    let mut penalized = vec![false; p];
    for b in penalties {
        for j in b.start..b.start + b.matrix.nrows() {
            penalized[j] = true;
        }
    }
    let active: Vec<usize> = (0..p)
        .filter(|&j| penalized[j] || (0..n).any(|i| w[i] > 0.0 && x[(i, j)] != 0.0))
        .collect();
    let xa = x.select_columns(&active);
    let sa = s.select_rows(&active).select_columns(&active);

    let mut eta = match &warm {
        Some(b) => x * b,
        None => DVector::from_iterator(
            n,
            y.iter().map(|&yi| match family {
                Family::Logistic => logit((yi + 0.5) / 2.0),
                Family::LogLink => {
                    let mean = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
                    (0.5 * yi + 0.5 * mean + 0.1).ln()
                }
            }),
        ),
    };
    let mut beta = DVector::<f64>::zeros(active.len());
    let pen = |b: &DVector<f64>| (b.transpose() * &sa * b)[(0, 0)];
    let mut pdev = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut xtwx = DMatrix::zeros(active.len(), active.len());

    for it in 1..=options.max_iter {
        iterations = it;
        let mut ww = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let (mu, dmu) = match family {
                Family::Logistic => {
                    let m = expit(eta[i]);
                    (m, (m * (1.0 - m)).max(1e-10))
                }
                Family::LogLink => {
                    let m = eta[i].min(700.0).exp().max(1e-10);
                    (m, m)
                }
            };
            ww[i] = w[i] * dmu;
            z[i] = eta[i] + (y[i] - mu) / dmu;
        }
        let xw = DMatrix::from_fn(n, active.len(), |i, j| xa[(i, j)] * ww[i]);
        xtwx = xa.transpose() * &xw;
        let lhs = &xtwx + &sa;
        let rhs = xw.transpose() * &z;
        let new_beta = linalg::solve_spd(&lhs, &rhs)
            .ok_or_else(|| Error::IrlsDiverged("singular penalized information matrix".into()))?;

        // step halving on the penalized deviance
        let mut step = 1.0;
        let mut cand = new_beta.clone();
        let mut cand_eta = &xa * &cand;
        let mut cand_pdev = deviance(family, y, w, &cand_eta) + pen(&cand);
        let mut halvings = 0;
        while (!cand_pdev.is_finite() || cand_pdev > pdev + 1e-12 * pdev.abs()) && halvings < 30 && it > 1 {
            step *= 0.5;
            cand = &beta + (&new_beta - &beta) * step;
            cand_eta = &xa * &cand;
            cand_pdev = deviance(family, y, w, &cand_eta) + pen(&cand);
            halvings += 1;
        }
        if !cand_pdev.is_finite() {
            return Err(Error::IrlsDiverged(format!("non-finite deviance at iteration {it}")));
        }
        let dmax = (&cand - &beta).amax();
        let bmax = cand.amax();
        let rel = (pdev - cand_pdev).abs() / (cand_pdev.abs() + 0.1);
        beta = cand;
        eta = cand_eta;
        let first = pdev.is_infinite();
        pdev = cand_pdev;
        if !first && rel < options.tol && (dmax < 1e-9 * (1.0 + bmax) || rel < 1e-14) {
            converged = true;
            break;
        }
    }
    if !converged {
        if family != Family::Logistic {
            return Err(Error::IrlsDiverged(format!("no convergence within {} iterations", options.max_iter)));
        }
        // a diverging logistic fit means (quasi-)separation
        let pinned = eta.iter().filter(|&&e| {
            let p = expit(e);
            p <= options.prob_clip || p >= 1.0 - options.prob_clip
        });
        let frac = pinned.count() as f64 / n as f64;
        if options.separation_check {
            return Err(if frac > 0.5 {
                Error::SeparationDetected(100.0 * frac)
            } else {
                Error::IrlsDiverged(format!("no convergence within {} iterations", options.max_iter))
            });
        }
        log::warn!("logistic fit did not converge ({:.0}% of rows at the clip bounds); using last iterate", 100.0 * frac);
    }
    let dev = deviance(family, y, w, &eta);
    let edf = match linalg::inverse(&(&xtwx + &sa)) {
        Some(inv) => (inv * &xtwx).trace(),
        None => active.len() as f64,
    };
    let nn = w.iter().filter(|v| **v > 0.0).count() as f64;
    let gcv = if nn > edf { nn * dev / (nn - edf).powi(2) } else { f64::INFINITY };
    let mut coefficients = DVector::zeros(p);
    for (k, &j) in active.iter().enumerate() {
        coefficients[j] = beta[k];
    }
    Ok(GlmFit {
        family,
        coefficients,
        lambdas: lambdas.to_vec(),
        iterations,
        deviance: dev,
        edf,
        gcv,
        prob_clip: options.prob_clip,
    })
}

/// GCV score of a fit at fixed smoothing parameters (used to verify grid optimality).
pub fn gcv_at(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
    family: Family,
    penalties: &[PenaltyBlock],
    lambdas: &[f64],
    options: &GlmOptions,
) -> Result<f64> {
    let n = design.nrows();
    let wsum: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|v| v * n as f64 / wsum).collect();
    Ok(irls(design, response, &w, family, penalties, lambdas, options, None)?.gcv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::spline::{SplineBasis, SplineConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn all_zero_logistic_clips_at_lower_bound() {
        let y = vec![0.0; 20];
        let fit = fit_penalized_glm(&ones(20), &y, &[1.0; 20], Family::Logistic, &[], &GlmOptions::default()).unwrap();
        assert!((fit.predict(&[1.0]) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn log_link_intercept_recovers_constant() {
        let y = vec![3.7; 50];
        let fit = fit_penalized_glm(&ones(50), &y, &vec![1.0; 50], Family::LogLink, &[], &GlmOptions::default()).unwrap();
        assert!((fit.predict(&[1.0]) / 3.7 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn logistic_recovers_generating_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = xs.iter().map(|&x| f64::from(u8::from(rng.random::<f64>() < expit(-0.4 + 0.3 * x)))).collect();
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let fit = fit_penalized_glm(&design, &y, &vec![1.0; n], Family::Logistic, &[], &GlmOptions::default()).unwrap();
        // Monte Carlo SEs from the inverse Fisher information at the estimate
        let info = DMatrix::from_fn(2, 2, |a, b| {
            (0..n)
                .map(|i| {
                    let p = expit(fit.linear_predictor(&[1.0, xs[i]]));
                    p * (1.0 - p) * design[(i, a)] * design[(i, b)]
                })
                .sum::<f64>()
        });
        let cov = crate::linalg::inverse(&info).unwrap();
        for (j, truth) in [-0.4, 0.3].into_iter().enumerate() {
            let se = cov[(j, j)].sqrt();
            assert!((fit.coefficients[j] - truth).abs() < 3.0 * se, "coef {j}: {}", fit.coefficients[j]);
        }
    }

    #[test]
    fn binary_response_required() {
        let r = fit_penalized_glm(&ones(2), &[0.0, 2.0], &[1.0, 1.0], Family::Logistic, &[], &GlmOptions::default());
        assert!(r.is_err());
    }

    #[test]
    fn separation_detected() {
        let n = 40;
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i >= 20))).collect();
        let r = fit_penalized_glm(&design, &y, &vec![1.0; n], Family::Logistic, &[], &GlmOptions::default());
        assert!(matches!(r, Err(Error::SeparationDetected(_))), "{r:?}");
    }

    fn smooth_problem() -> (DMatrix<f64>, Vec<f64>, Vec<PenaltyBlock>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let basis = SplineBasis::uniform("x", 0.0, 1.0, SplineConfig::default()).unwrap();
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut design = DMatrix::zeros(n, 10);
        for i in 0..n {
            let b = basis.evaluate(xs[i]);
            design[(i, 0)] = 1.0;
            for j in 0..9 {
                design[(i, j + 1)] = b[j];
            }
        }
        let y: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let mu = (0.5 + (6.0 * x).sin()).exp();
                rand_distr::Distribution::sample(&rand_distr::Poisson::new(mu).unwrap(), &mut rng)
            })
            .collect();
        let pen = basis.penalty();
        let block = PenaltyBlock { start: 1, matrix: pen.view((0, 0), (9, 9)).clone_owned() };
        (design, y, vec![block])
    }

    #[test]
    fn selected_lambda_minimizes_gcv_on_grid() {
        let (design, y, pens) = smooth_problem();
        let w = vec![1.0; y.len()];
        let opts = GlmOptions::default();
        let fit = fit_penalized_glm(&design, &y, &w, Family::LogLink, &pens, &opts).unwrap();
        for &lam in &opts.lambda_grid {
            let g = gcv_at(&design, &y, &w, Family::LogLink, &pens, &[lam], &opts).unwrap();
            assert!(fit.gcv <= g + 1e-9 * g.abs(), "lambda {lam}: {g} < {}", fit.gcv);
        }
    }

    #[test]
    fn reweighting_neutrality() {
        let (design, y, pens) = smooth_problem();
        let opts = GlmOptions::default();
        let w1: Vec<f64> = (0..y.len()).map(|i| 1.0 + (i % 3) as f64).collect();
        let w2: Vec<f64> = w1.iter().map(|v| v * 7.5).collect();
        let a = fit_penalized_glm(&design, &y, &w1, Family::LogLink, &pens, &opts).unwrap();
        let b = fit_penalized_glm(&design, &y, &w2, Family::LogLink, &pens, &opts).unwrap();
        assert!((a.coefficients - b.coefficients).amax() < 1e-10);
    }
}
