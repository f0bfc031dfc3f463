//! Averaged scores and the sandwich covariance J⁻¹ M J⁻ᵀ / N.

use super::scores::Score;
use crate::error::{Error, Result};
use crate::linalg::{inverse, min_eigenvalue, symmetrize};
use crate::par::{map_indexed, Execution};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MeatKind {
    /// Σ̂ = N⁻¹ Σ_i Σ_t m_{i,t} m_{i,t}ᵀ (martingale-difference form).
    #[default]
    Record,
    /// Σ̂ = N⁻¹ Σ_i (Σ_t m_{i,t})(Σ_t m_{i,t})ᵀ.
    Cluster,
}

impl std::str::FromStr for MeatKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "record" | "mds" => Ok(MeatKind::Record),
            "cluster" | "participant" => Ok(MeatKind::Cluster),
            other => Err(Error::InvalidConfig(format!("unknown meat `{other}`"))),
        }
    }
}

/// Evaluates a [`Score`] over all participants.
pub struct Evaluator<'a> {
    pub score: &'a dyn Score,
    pub offsets: &'a [usize],
    /// Normalizer N of the averaged score (total record count).
    pub n_norm: f64,
    pub exec: Execution,
}

impl Evaluator<'_> {
    fn n_participants(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Per-participant record terms, in participant order.
    pub fn terms(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let d = self.score.dim();
        map_indexed(self.exec, self.n_participants(), |i| {
            let mut out = vec![0.0; (self.offsets[i + 1] - self.offsets[i]) * d];
            self.score.participant_terms(i, theta, &mut out);
            out
        })
    }

    /// N⁻¹ Σ_i Σ_t m_{i,t}(θ); participant sums are reduced in a fixed order.
    pub fn mean(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.score.dim();
        let sums = map_indexed(self.exec, self.n_participants(), |i| {
            let mut out = vec![0.0; (self.offsets[i + 1] - self.offsets[i]) * d];
            self.score.participant_terms(i, theta, &mut out);
            let mut s = vec![0.0; d];
            for row in out.chunks_exact(d) {
                for (a, b) in s.iter_mut().zip(row) {
                    *a += b;
                }
            }
            s
        });
        let mut total = vec![0.0; d];
        for s in &sums {
            for (a, b) in total.iter_mut().zip(s) {
                *a += b;
            }
        }
        total.iter_mut().for_each(|v| *v /= self.n_norm);
        total
    }

    pub fn meat(&self, theta: &[f64], kind: MeatKind) -> DMatrix<f64> {
        let d = self.score.dim();
        let mut m = DMatrix::zeros(d, d);
        let mut add = |v: &[f64]| {
            for a in 0..d {
                for b in 0..d {
                    m[(a, b)] += v[a] * v[b];
                }
            }
        };
        for t in self.terms(theta) {
            match kind {
                MeatKind::Record => t.chunks_exact(d).for_each(&mut add),
                MeatKind::Cluster => {
                    let mut s = vec![0.0; d];
                    for row in t.chunks_exact(d) {
                        for (a, b) in s.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    add(&s);
                }
            }
        }
        m / self.n_norm
    }
}

/// Cov(θ̂) = J⁻¹ M J⁻ᵀ / N from the averaged-score Jacobian J and meat M.
pub fn sandwich_cov(jacobian: &DMatrix<f64>, meat: &DMatrix<f64>, n_norm: f64) -> Result<DMatrix<f64>> {
    let b = inverse(jacobian).ok_or(Error::SingularBread)?;
    let mut cov = &b * meat * b.transpose() / n_norm;
    symmetrize(&mut cov);
    let scale = cov.diagonal().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let min = min_eigenvalue(&cov);
    if min < -1e-10 * scale {
        return Err(Error::NotPositiveSemidefinite(min));
    }
    Ok(cov)
}
