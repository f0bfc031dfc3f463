//! Two-part (hurdle) conditional mean: P(Y > 0 | H) · E[Y | Y > 0, H].

use super::glm::{fit_penalized_glm, Family, GlmFit, GlmOptions};
use super::terms::TermSet;
use crate::error::{Error, Result};
use crate::panel::RowMatrix;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartFit {
    pub coefficients: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub iterations: usize,
    pub deviance: f64,
}

impl From<&GlmFit> for PartFit {
    fn from(f: &GlmFit) -> Self {
        Self {
            coefficients: f.coefficients.iter().cloned().collect(),
            lambdas: f.lambdas.clone(),
            iterations: f.iterations,
            deviance: f.deviance,
        }
    }
}

impl PartFit {
    fn eta(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurdleFit {
    pub arm: usize,
    /// Logistic model for P(Y > 0); `None` when the arm never had a positive outcome.
    pub zero_part: Option<PartFit>,
    /// Log-link model for E[Y | Y > 0] fit on the positive subset.
    pub positive_part: Option<PartFit>,
    pub prob_clip: f64,
    pub n_records: usize,
    pub n_positive: usize,
}

impl HurdleFit {
    /// (P(Y>0), E[Y|Y>0], mean) at an encoded design row.
    pub fn components(&self, x: &[f64]) -> (f64, f64, f64) {
        match (&self.zero_part, &self.positive_part) {
            (Some(z), Some(p)) => {
                let prob = super::glm::expit(z.eta(x)).clamp(self.prob_clip, 1.0 - self.prob_clip);
                let cond = p.eta(x).min(700.0).exp();
                (prob, cond, prob * cond)
            }
            _ => (0.0, 0.0, 0.0),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.components(x).2
    }
}

/// Fits the hurdle mean of one arm on the available records in `rows`.
///
/// `encoded` must hold the term-set encoding of every record; `rows` selects
/// available records with the requested arm.
pub fn fit_hurdle(
    terms: &TermSet,
    raw: &RowMatrix,
    outcome: &[f64],
    rows: &[usize],
    arm: usize,
    options: &GlmOptions,
) -> Result<HurdleFit> {
    if rows.is_empty() {
        return Err(Error::NoRecordsForArm(arm));
    }
    let positive: Vec<usize> = rows.iter().copied().filter(|&r| outcome[r] > 0.0).collect();
    if positive.is_empty() {
        log::warn!("arm {arm}: no positive outcomes, conditional mean set to zero");
        return Ok(HurdleFit {
            arm,
            zero_part: None,
            positive_part: None,
            prob_clip: options.prob_clip,
            n_records: rows.len(),
            n_positive: 0,
        });
    }
    let penalties = terms.penalties();
    let x = terms.encode_rows(raw, rows);
    let y_pos: Vec<f64> = rows.iter().map(|&r| f64::from(u8::from(outcome[r] > 0.0))).collect();
    let w = vec![1.0; rows.len()];
    let zero_opts = GlmOptions { separation_check: false, ..options.clone() };
    let zero = if positive.len() == rows.len() {
        // every outcome positive: P(Y>0) sits at the upper clip bound
        let mut c = DVector::zeros(x.ncols());
        c[0] = super::glm::logit(1.0 - options.prob_clip);
        GlmFit {
            family: Family::Logistic,
            coefficients: c,
            lambdas: vec![],
            iterations: 0,
            deviance: 0.0,
            edf: 1.0,
            gcv: f64::NAN,
            prob_clip: options.prob_clip,
        }
    } else {
        fit_penalized_glm(&x, &y_pos, &w, Family::Logistic, &penalties, &zero_opts)?
    };
    let xp = terms.encode_rows(raw, &positive);
    let yp: Vec<f64> = positive.iter().map(|&r| outcome[r]).collect();
    let pos = fit_penalized_glm(&xp, &yp, &vec![1.0; yp.len()], Family::LogLink, &penalties, options)?;
    Ok(HurdleFit {
        arm,
        zero_part: Some((&zero).into()),
        positive_part: Some((&pos).into()),
        prob_clip: options.prob_clip,
        n_records: rows.len(),
        n_positive: positive.len(),
    })
}
