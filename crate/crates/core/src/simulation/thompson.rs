//! TS-Count: Thompson sampling with a normal approximation to the
//! Poisson-regression posterior, features f(A, Z) = (1, Z, A, A·Z).

use crate::linalg::{inverse, solve_spd};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

const DIM: usize = 4;

fn features(a: u8, z: u8) -> [f64; DIM] {
    let (a, z) = (f64::from(a), f64::from(z));
    [1.0, z, a, a * z]
}

/// Sufficient statistics of the Poisson working model. The features
/// only take six distinct values, so counts and outcome sums per (Z, A)
/// cell determine the likelihood exactly.
#[derive(Debug, Clone, Default)]
pub struct TsState {
    count: [[f64; 2]; 3],
    total: [[f64; 2]; 3],
}

/// Poisson MLE and the inverse information at the MLE.
#[derive(Debug, Clone)]
pub struct TsFit {
    pub beta: DVector<f64>,
    pub info_inv: DMatrix<f64>,
}

impl TsState {
    pub fn record(&mut self, z: u8, a: u8, y: u64) {
        self.count[z as usize][a as usize] += 1.0;
        self.total[z as usize][a as usize] += y as f64;
    }

    fn cells(&self) -> impl Iterator<Item = ([f64; DIM], f64, f64)> + '_ {
        (0..3u8).flat_map(move |z| (0..2u8).map(move |a| (features(a, z), self.count[z as usize][a as usize], self.total[z as usize][a as usize])))
    }

    /// Newton-Raphson on the log-likelihood; `None` when the
    /// information matrix is singular or the iteration fails.
    pub fn fit(&self) -> Option<TsFit> {
        let n: f64 = self.cells().map(|c| c.1).sum();
        let y: f64 = self.cells().map(|c| c.2).sum();
        if n == 0.0 || y == 0.0 {
            return None;
        }
        let mut beta = DVector::zeros(DIM);
        beta[0] = (y / n).ln();
        for _ in 0..100 {
            let mut grad = DVector::zeros(DIM);
            let mut info = DMatrix::zeros(DIM, DIM);
            for (x, cnt, tot) in self.cells() {
                if cnt == 0.0 {
                    continue;
                }
                let xv = DVector::from_column_slice(&x);
                let mu = xv.dot(&beta).exp();
                grad += &xv * (tot - cnt * mu);
                info += &xv * xv.transpose() * (cnt * mu);
            }
            let step = solve_spd(&info, &grad)?;
            beta += &step;
            if !beta.iter().all(|v| v.is_finite()) {
                return None;
            }
            if step.amax() < 1e-10 * (1.0 + beta.amax()) {
                let mut info = DMatrix::zeros(DIM, DIM);
                for (x, cnt, _) in self.cells() {
                    let xv = DVector::from_column_slice(&x);
                    info += &xv * xv.transpose() * (cnt * xv.dot(&beta).exp());
                }
                let info_inv = inverse(&info)?;
                return Some(TsFit { beta, info_inv });
            }
        }
        None
    }
}

/// P(f(1, Z)ᵀβ̃ > f(0, Z)ᵀβ̃) for β̃ ~ N(β̂, α²I⁻¹), clipped to [0.05, 0.95].
pub fn thompson_probability(beta: &DVector<f64>, info_inv: &DMatrix<f64>, z: u8, alpha: f64) -> f64 {
    let d = DVector::from_iterator(DIM, features(1, z).iter().zip(features(0, z)).map(|(a, b)| a - b));
    let mean = d.dot(beta);
    let var = (d.transpose() * info_inv * &d)[(0, 0)];
    let p = if var > 0.0 {
        Normal::standard().cdf(mean / (alpha * var.sqrt()))
    } else if mean > 0.0 {
        1.0
    } else if mean < 0.0 {
        0.0
    } else {
        0.5
    };
    p.clamp(0.05, 0.95)
}
