//! B-spline bases with difference penalties (P-splines).

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    pub size: usize,
    pub degree: usize,
    pub penalty_order: usize,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self { size: 10, degree: 3, penalty_order: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub feature: String,
    pub knots: Vec<f64>,
    pub degree: usize,
    pub penalty_order: usize,
    pub size: usize,
}

impl SplineBasis {
    /// Equally spaced knots spanning `[lo, hi]`, extended by `degree` knots on each side.
    pub fn uniform(feature: impl Into<String>, lo: f64, hi: f64, config: SplineConfig) -> Result<Self> {
        let SplineConfig { size, degree, penalty_order } = config;
        if size < degree + 1 {
            return Err(Error::InvalidConfig(format!("basis size {size} < degree + 1 = {}", degree + 1)));
        }
        if penalty_order >= size {
            return Err(Error::InvalidConfig("penalty order must be below the basis size".into()));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::InvalidConfig(format!("invalid spline range [{lo}, {hi}]")));
        }
        let (lo, hi) = if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let segments = size - degree;
        let dx = (hi - lo) / segments as f64;
        let knots = (0..size + degree + 1).map(|i| lo + (i as f64 - degree as f64) * dx).collect();
        Ok(Self { feature: feature.into(), knots, degree, penalty_order, size })
    }

    pub fn from_values(feature: impl Into<String>, values: &[f64], config: SplineConfig) -> Result<Self> {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self::uniform(feature, lo, hi, config)
    }

    pub fn lower(&self) -> f64 {
        self.knots[self.degree]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.size]
    }

    /// All `size` basis values at `x`; outside the knot range the boundary
    /// value is used (constant extension).
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        self.evaluate_into(x, &mut out);
        out
    }

    pub fn evaluate_into(&self, x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let p = self.degree;
        let u = &self.knots;
        let x = x.clamp(self.lower(), self.upper());
        // span j with u[j] <= x < u[j+1], restricted to p..=size-1
        let mut span = p;
        while span < self.size - 1 && x >= u[span + 1] {
            span += 1;
        }
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        for (j, v) in n.into_iter().enumerate() {
            out[span - p + j] = v;
        }
    }

    /// `DᵀD` for the difference matrix `D` of the configured order.
    pub fn penalty(&self) -> DMatrix<f64> {
        let d = difference_matrix(self.size, self.penalty_order);
        d.transpose() * d
    }
}

pub fn difference_matrix(size: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(size, size);
    for _ in 0..order {
        let rows = d.nrows();
        let mut next = DMatrix::zeros(rows - 1, size);
        for i in 0..rows - 1 {
            for j in 0..size {
                next[(i, j)] = d[(i + 1, j)] - d[(i, j)];
            }
        }
        d = next;
    }
    d
}
