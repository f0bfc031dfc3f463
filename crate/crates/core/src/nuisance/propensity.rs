//! Treatment propensities p_{t,k}(H_t).

use super::glm::{expit, fit_penalized_glm, Family, GlmOptions};
use super::terms::TermSet;
use crate::error::{Error, Result};
use crate::panel::RowMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropensityMode {
    /// Known probabilities when the panel carries them, sample proportion otherwise.
    Auto,
    Known,
    SampleProportion,
    /// Linear logistic on `propensity_features`.
    Logistic,
    /// Penalized-spline logistic on the nuisance terms.
    SplineLogistic,
}

impl std::str::FromStr for PropensityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "auto" => Ok(Self::Auto),
            "known" | "known-prob" => Ok(Self::Known),
            "sample-proportion" | "proportion" => Ok(Self::SampleProportion),
            "logistic" => Ok(Self::Logistic),
            "spline-logistic" | "gam" => Ok(Self::SplineLogistic),
            other => Err(Error::InvalidConfig(format!("unknown propensity mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for PropensityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Auto => "auto",
            Self::Known => "known",
            Self::SampleProportion => "sample-proportion",
            Self::Logistic => "logistic",
            Self::SplineLogistic => "spline-logistic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PropensityModel {
    /// Stored randomization probabilities are returned verbatim.
    Known,
    /// Constant per-arm probabilities.
    Constant(Vec<f64>),
    /// Continuation-ratio logits: stage k models P(A = k | A ∉ {1..k-1}, H).
    /// For a single active arm this is ordinary logistic regression.
    Logit { terms: TermSet, stages: Vec<Vec<f64>> },
}

impl PropensityModel {
    /// Unclipped per-arm probabilities from an encoded design row.
    pub fn raw_predict(&self, x: &[f64], k_arms: usize) -> Vec<f64> {
        match self {
            PropensityModel::Known => vec![f64::NAN; k_arms],
            PropensityModel::Constant(p) => p.clone(),
            PropensityModel::Logit { stages, .. } => {
                let mut remaining = 1.0;
                let mut out = Vec::with_capacity(stages.len());
                for coef in stages {
                    let eta: f64 = x.iter().zip(coef).map(|(a, b)| a * b).sum();
                    let r = expit(eta);
                    out.push(remaining * r);
                    remaining *= 1.0 - r;
                }
                out
            }
        }
    }
}

/// Clips each probability to `[eps, 1 - eps]` and rescales so the treated
/// total stays at most `1 - eps`.
pub fn clip_probabilities(p: &mut [f64], eps: f64) {
    for v in p.iter_mut() {
        *v = v.clamp(eps, 1.0 - eps);
    }
    let total: f64 = p.iter().sum();
    if total > 1.0 - eps {
        let s = (1.0 - eps) / total;
        p.iter_mut().for_each(|v| *v *= s);
    }
}

/// Availability-weighted sample proportion of each active arm.
pub fn sample_proportions(available: &[bool], arm: &[usize], k_arms: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; k_arms + 1];
    let mut n = 0usize;
    for (a, &av) in arm.iter().zip(available) {
        if av {
            counts[*a] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::DegenerateArm(k));
        }
    }
    Ok(counts[1..].iter().map(|&c| c as f64 / n as f64).collect())
}

/// Fits continuation-ratio logits on the available records.
pub fn fit_logit_propensity(
    terms: TermSet,
    raw: &RowMatrix,
    available: &[bool],
    arm: &[usize],
    k_arms: usize,
    options: &GlmOptions,
) -> Result<PropensityModel> {
    // every arm must be observed
    sample_proportions(available, arm, k_arms)?;
    let penalties = terms.penalties();
    let mut stages = Vec::with_capacity(k_arms);
    for k in 1..=k_arms {
        let rows: Vec<usize> = (0..arm.len()).filter(|&r| available[r] && (arm[r] == 0 || arm[r] >= k)).collect();
        let x = terms.encode_rows(raw, &rows);
        let y: Vec<f64> = rows.iter().map(|&r| f64::from(u8::from(arm[r] == k))).collect();
        let fit = fit_penalized_glm(&x, &y, &vec![1.0; y.len()], Family::Logistic, &penalties, options)?;
        stages.push(fit.coefficients.iter().cloned().collect());
    }
    Ok(PropensityModel::Logit { terms, stages })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_contract() {
        let mut p = vec![0.999];
        clip_probabilities(&mut p, 0.01);
        assert!((p[0] - 0.99).abs() < 1e-15);
        let mut q = vec![0.6, 0.5];
        clip_probabilities(&mut q, 0.01);
        assert!((q.iter().sum::<f64>() - 0.99).abs() < 1e-12);
    }

    #[test]
    fn balanced_proportion_is_exact() {
        let arm: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let p = sample_proportions(&[true; 100], &arm, 1).unwrap();
        assert_eq!(p, vec![0.5]);
    }

    #[test]
    fn unobserved_arm_is_degenerate() {
        let arm = vec![0usize; 10];
        assert!(matches!(sample_proportions(&[true; 10], &arm, 1), Err(Error::DegenerateArm(1))));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("sample_proportion".parse::<PropensityMode>().unwrap(), PropensityMode::SampleProportion);
        assert!("oracle".parse::<PropensityMode>().is_err());
    }
}
