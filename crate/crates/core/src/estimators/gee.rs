//! Log-link GEE with independence or exchangeable working correlation.

use super::scores::{dot, Score};
use crate::panel::DesignBundle;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkingCorrelation {
    Independence,
    Exchangeable,
}

/// Poisson-type GEE score for μ = exp{gᵀα + Σ_k A_k Sᵀβ_k}, θ = (α; β_1; …; β_K).
///
/// With exchangeable correlation ρ and m available records, the working
/// inverse is R⁻¹ = (I − c·11ᵀ)/(1 − ρ), c = ρ/(1 + (m − 1)ρ), so each record
/// contributes x_t √μ_t [R⁻¹e]_t with Pearson residuals e = (y − μ)/√μ.
pub struct GeeScore<'a> {
    pub design: &'a DesignBundle,
    pub rho: f64,
}

impl GeeScore<'_> {
    pub(crate) fn covariates(&self, r: usize, out: &mut [f64]) {
        let d = self.design;
        let (p, q) = (d.p(), d.q());
        out[..q].copy_from_slice(d.controls.row(r));
        let s = d.moderators.row(r);
        for k in 0..d.k_arms {
            let a = d.dummy(r, k + 1);
            for (x, v) in out[q + k * p..q + (k + 1) * p].iter_mut().zip(s) {
                *x = a * v;
            }
        }
    }

    /// Pearson residuals of participant `i`'s available records.
    pub(crate) fn pearson(&self, i: usize, theta: &[f64]) -> Vec<f64> {
        let d = self.design;
        let mut x = vec![0.0; self.dim()];
        (d.offsets[i]..d.offsets[i + 1])
            .filter(|&r| d.available[r])
            .map(|r| {
                self.covariates(r, &mut x);
                let mu = dot(&x, theta).exp();
                (d.outcome[r] - mu) / mu.sqrt()
            })
            .collect()
    }
}

impl Score for GeeScore<'_> {
    fn dim(&self) -> usize {
        let d = self.design;
        d.q() + d.p() * d.k_arms
    }

    fn participant_terms(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let d = self.design;
        let dim = self.dim();
        let rows = d.offsets[i]..d.offsets[i + 1];
        let mut x = vec![0.0; dim];
        let (sum_e, m) = if self.rho == 0.0 {
            (0.0, 0usize)
        } else {
            let e = self.pearson(i, theta);
            (e.iter().sum::<f64>(), e.len())
        };
        let c = if m == 0 { 0.0 } else { self.rho / (1.0 + (m as f64 - 1.0) * self.rho) };
        for (j, r) in rows.enumerate() {
            let o = &mut out[j * dim..(j + 1) * dim];
            if !d.available[r] {
                o.fill(0.0);
                continue;
            }
            self.covariates(r, &mut x);
            let mu = dot(&x, theta).exp();
            let w = if self.rho == 0.0 {
                d.outcome[r] - mu
            } else {
                let e = (d.outcome[r] - mu) / mu.sqrt();
                mu.sqrt() * (e - c * sum_e) / (1.0 - self.rho)
            };
            for (a, b) in o.iter_mut().zip(&x) {
                *a = w * b;
            }
        }
    }
}

/// Moment estimate of the exchangeable correlation from Pearson residuals,
/// clamped to the range where every working matrix stays positive definite.
pub fn moment_rho(score: &GeeScore<'_>, theta: &[f64]) -> f64 {
    let d = score.design;
    let mut ss = 0.0;
    let mut cross = 0.0;
    let mut n = 0usize;
    let mut pairs = 0usize;
    let mut max_m = 1usize;
    for i in 0..d.n_participants() {
        let e = score.pearson(i, theta);
        let s: f64 = e.iter().sum();
        let s2: f64 = e.iter().map(|v| v * v).sum();
        ss += s2;
        cross += 0.5 * (s * s - s2);
        n += e.len();
        pairs += e.len() * e.len().saturating_sub(1) / 2;
        max_m = max_m.max(e.len());
    }
    let dim = score.dim();
    if n <= dim || pairs <= dim || ss <= 0.0 {
        return 0.0;
    }
    let phi = ss / (n - dim) as f64;
    let rho = cross / (phi * (pairs - dim) as f64);
    let lower = if max_m > 1 { -1.0 / (max_m as f64 - 1.0) + 1e-6 } else { -0.99 };
    rho.clamp(lower, 0.99)
}
