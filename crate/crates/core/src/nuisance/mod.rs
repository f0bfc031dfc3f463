//! Nuisance functions: arm-conditional outcome means μ_k(H_t) from two-part
//! penalized-spline (GAM) hurdle models, and propensities p_{t,k}(H_t).

pub mod glm;
pub mod hurdle;
pub mod propensity;
pub mod spline;
pub mod terms;

pub use glm::{fit_penalized_glm, Family, GlmFit, GlmOptions, PenaltyBlock};
pub use hurdle::{fit_hurdle, HurdleFit};
pub use propensity::{clip_probabilities, PropensityMode, PropensityModel};
pub use spline::{SplineBasis, SplineConfig};
pub use terms::{NuisanceTerm, TermKind, TermSet};

use crate::error::{Error, Result};
use crate::panel::{LagInit, PanelDataset, RowMatrix};
use serde::{Deserialize, Serialize};

const MODEL_FORMAT: &str = "excursion-nuisance";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    /// History features entering the outcome GAMs (an intercept is always included).
    pub terms: Vec<NuisanceTerm>,
    pub spline: SplineConfig,
    pub lambda_grid: Vec<f64>,
    pub propensity: PropensityMode,
    /// Features of the linear logistic propensity model.
    pub propensity_features: Vec<String>,
    /// ε_p: fitted propensities are clipped to [ε_p, 1 − ε_p].
    pub prob_clip: f64,
    /// Clip for P(Y > 0) inside the hurdle model.
    pub hurdle_clip: f64,
    /// Two-fold sample splitting (fit on one half, predict the other).
    pub sample_split: bool,
    pub lag_init: LagInit,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            terms: vec![],
            spline: SplineConfig::default(),
            lambda_grid: glm::default_lambda_grid(),
            propensity: PropensityMode::Auto,
            propensity_features: vec!["1".into()],
            prob_clip: 0.01,
            hurdle_clip: 1e-10,
            sample_split: false,
            lag_init: LagInit::default(),
        }
    }
}

impl NuisanceConfig {
    fn glm_options(&self, clip: f64) -> GlmOptions {
        GlmOptions { lambda_grid: self.lambda_grid.clone(), prob_clip: clip, ..GlmOptions::default() }
    }

    /// The propensity mode actually used for `data`.
    pub fn resolved_mode(&self, data: &PanelDataset) -> PropensityMode {
        match self.propensity {
            PropensityMode::Auto if data.has_rand_prob() => PropensityMode::Known,
            PropensityMode::Auto => PropensityMode::SampleProportion,
            m => m,
        }
    }
}

/// Fitted nuisance predictors; immutable and shareable across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub format: String,
    pub version: u32,
    pub k_arms: usize,
    pub terms: TermSet,
    /// μ̂_0, …, μ̂_K.
    pub mu: Vec<HurdleFit>,
    pub propensity: PropensityModel,
    pub mode: PropensityMode,
    pub prob_clip: f64,
}

/// Per-record nuisance predictions aligned with the design rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceValues {
    /// N × (K+1) arm-conditional means; absent for propensity-only fits.
    pub mu: Option<RowMatrix>,
    /// N × K propensities p_{t,k} (known or fitted).
    pub prob: RowMatrix,
    pub mode: PropensityMode,
}

impl NuisanceValues {
    pub fn n_records(&self) -> usize {
        self.prob.nrows()
    }
}

/// Single-record prediction: (μ̂_0, …, μ̂_K) and (p̂_1, …, p̂_K).
#[derive(Debug, Clone, PartialEq)]
pub struct NuisancePrediction {
    pub mu: Vec<f64>,
    pub prob: Vec<f64>,
}

/// Fits μ̂_0..μ̂_K and the propensity model on the available records of `data`.
pub fn fit_nuisance(data: &PanelDataset, config: &NuisanceConfig) -> Result<NuisanceFit> {
    fit_nuisance_parts(data, config, true)
}

/// Fits the propensity model only (for the parametric estimators).
pub fn fit_propensity(data: &PanelDataset, config: &NuisanceConfig) -> Result<NuisanceFit> {
    fit_nuisance_parts(data, config, false)
}

/// Fits μ̂_a alone.
pub fn fit_hurdle_mean(data: &PanelDataset, arm_index: usize, config: &NuisanceConfig) -> Result<(TermSet, HurdleFit)> {
    let terms = TermSet::build(data, &config.terms, config.spline, &config.lag_init)?;
    let raw = terms.raw(data)?;
    let (available, arm, outcome) = columns(data);
    let rows: Vec<usize> = (0..arm.len()).filter(|&r| available[r] && arm[r] == arm_index).collect();
    let fit = fit_hurdle(&terms, &raw, &outcome, &rows, arm_index, &config.glm_options(config.hurdle_clip))?;
    Ok((terms, fit))
}

fn fit_nuisance_parts(data: &PanelDataset, config: &NuisanceConfig, with_means: bool) -> Result<NuisanceFit> {
    let k = data.k_arms();
    let terms = TermSet::build(data, &config.terms, config.spline, &config.lag_init)?;
    let raw = terms.raw(data)?;
    let (available, arm, outcome) = columns(data);

    let hopts = config.glm_options(config.hurdle_clip);
    let mut mu = Vec::with_capacity(k + 1);
    for a in (0..=k).filter(|_| with_means) {
        let rows: Vec<usize> = (0..arm.len()).filter(|&r| available[r] && arm[r] == a).collect();
        mu.push(fit_hurdle(&terms, &raw, &outcome, &rows, a, &hopts)?);
    }
    let mode = config.resolved_mode(data);
    let propensity = fit_propensity_model(data, config, mode, &terms, &raw, &available, &arm)?;
    Ok(NuisanceFit {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        k_arms: k,
        terms,
        mu,
        propensity,
        mode,
        prob_clip: config.prob_clip,
    })
}

fn columns(data: &PanelDataset) -> (Vec<bool>, Vec<usize>, Vec<f64>) {
    let available = data.records().map(|r| r.available).collect();
    let arm = data.records().map(|r| r.arm).collect();
    let outcome = data.records().map(|r| r.outcome as f64).collect();
    (available, arm, outcome)
}

fn fit_propensity_model(
    data: &PanelDataset,
    config: &NuisanceConfig,
    mode: PropensityMode,
    terms: &TermSet,
    raw: &RowMatrix,
    available: &[bool],
    arm: &[usize],
) -> Result<PropensityModel> {
    let k = data.k_arms();
    let popts = config.glm_options(config.prob_clip);
    match mode {
        PropensityMode::Known => {
            if !data.has_rand_prob() {
                return Err(Error::MissingKnownProbabilities);
            }
            Ok(PropensityModel::Known)
        }
        PropensityMode::SampleProportion | PropensityMode::Auto => {
            Ok(PropensityModel::Constant(propensity::sample_proportions(available, arm, k)?))
        }
        PropensityMode::Logistic => {
            let lin: Vec<NuisanceTerm> = config
                .propensity_features
                .iter()
                .filter(|f| f.trim() != "1")
                .map(|f| NuisanceTerm::new(f.trim(), TermKind::Linear))
                .collect();
            let ts = TermSet::build(data, &lin, config.spline, &config.lag_init)?;
            let raw = ts.raw(data)?;
            propensity::fit_logit_propensity(ts, &raw, available, arm, k, &popts)
        }
        PropensityMode::SplineLogistic => {
            propensity::fit_logit_propensity(terms.clone(), raw, available, arm, k, &popts)
        }
    }
}

impl NuisanceFit {
    /// Predicts μ̂ and p̂ for every record of `data`.
    pub fn values(&self, data: &PanelDataset) -> Result<NuisanceValues> {
        if data.k_arms() != self.k_arms {
            return Err(Error::InvalidConfig(format!(
                "nuisance fit has {} arms, dataset has {}",
                self.k_arms,
                data.k_arms()
            )));
        }
        let k = self.k_arms;
        let n = data.n_records();
        let raw = self.terms.raw(data)?;
        let prop_raw = match &self.propensity {
            PropensityModel::Logit { terms, .. } => Some((terms, terms.raw(data)?)),
            _ => None,
        };
        let mut mu = RowMatrix::zeros(n, k + 1);
        let mut prob = RowMatrix::zeros(n, k);
        let mut buf = Vec::with_capacity(self.terms.ncols());
        let mut pbuf = Vec::new();
        for (r, rec) in data.records().enumerate() {
            if !self.mu.is_empty() {
                self.terms.encode_into(raw.row(r), &mut buf);
                for (a, h) in self.mu.iter().enumerate() {
                    mu.row_mut(r)[a] = h.predict(&buf);
                }
            }
            let p = match (&self.propensity, &prop_raw) {
                (PropensityModel::Known, _) => rec.rand_prob.clone().ok_or(Error::MissingKnownProbabilities)?,
                (model, Some((ts, praw))) => {
                    ts.encode_into(praw.row(r), &mut pbuf);
                    let mut p = model.raw_predict(&pbuf, k);
                    clip_probabilities(&mut p, self.prob_clip);
                    p
                }
                (model, None) => {
                    let mut p = model.raw_predict(&[], k);
                    clip_probabilities(&mut p, self.prob_clip);
                    p
                }
            };
            prob.row_mut(r).copy_from_slice(&p);
        }
        let mu = (!self.mu.is_empty()).then_some(mu);
        Ok(NuisanceValues { mu, prob, mode: self.mode })
    }

    /// Prediction for the record at `idx` of participant `participant` in `data`.
    pub fn predict_record(&self, data: &PanelDataset, participant: usize, idx: usize) -> Result<NuisancePrediction> {
        let records = &data.participants()[participant].records;
        let raw = self.terms.raw_record(data, records, idx)?;
        let mut buf = Vec::new();
        self.terms.encode_into(&raw, &mut buf);
        let mu = self.mu.iter().map(|h| h.predict(&buf)).collect();
        let prob = match &self.propensity {
            PropensityModel::Known => records[idx].rand_prob.clone().ok_or(Error::MissingKnownProbabilities)?,
            PropensityModel::Logit { terms, .. } => {
                let praw = terms.raw_record(data, records, idx)?;
                let mut pb = Vec::new();
                terms.encode_into(&praw, &mut pb);
                let mut p = self.propensity.raw_predict(&pb, self.k_arms);
                clip_probabilities(&mut p, self.prob_clip);
                p
            }
            PropensityModel::Constant(_) => {
                let mut p = self.propensity.raw_predict(&[], self.k_arms);
                clip_probabilities(&mut p, self.prob_clip);
                p
            }
        };
        Ok(NuisancePrediction { mu, prob })
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let fit: NuisanceFit = serde_json::from_str(s)?;
        if fit.format != MODEL_FORMAT {
            return Err(Error::InvalidModelFile(format!("unexpected format `{}`", fit.format)));
        }
        if fit.version != MODEL_VERSION {
            return Err(Error::InvalidModelFile(format!("unsupported version {}", fit.version)));
        }
        Ok(fit)
    }
}

/// Fits nuisances and predicts them for every record, optionally with
/// two-fold sample splitting by participant.
pub fn fit_nuisance_values(
    data: &PanelDataset,
    config: &NuisanceConfig,
    with_means: bool,
) -> Result<(NuisanceValues, Option<NuisanceFit>)> {
    if !config.sample_split {
        let fit = fit_nuisance_parts(data, config, with_means)?;
        let values = fit.values(data)?;
        return Ok((values, Some(fit)));
    }
    let n = data.n();
    if n < 2 {
        return Err(Error::InvalidConfig("sample splitting needs at least two participants".into()));
    }
    let fold = |i: usize| i % 2;
    let subset = |f: usize| -> Result<PanelDataset> {
        let parts = data.participants().iter().enumerate().filter(|(i, _)| fold(*i) == f).map(|(_, p)| p.clone()).collect();
        PanelDataset::new(parts, data.covariate_names().to_vec(), data.k_arms())
    };
    let halves = [subset(0)?, subset(1)?];
    let fits = [fit_nuisance_parts(&halves[0], config, with_means)?, fit_nuisance_parts(&halves[1], config, with_means)?];
    // each half is predicted by the model fit on the other half
    let preds = [fits[1].values(&halves[0])?, fits[0].values(&halves[1])?];
    let k = data.k_arms();
    let mut mu = RowMatrix::zeros(data.n_records(), k + 1);
    let mut prob = RowMatrix::zeros(data.n_records(), k);
    let mut cursor = [0usize; 2];
    let mut row = 0;
    for (i, p) in data.participants().iter().enumerate() {
        let f = fold(i);
        for _ in &p.records {
            if let Some(m) = &preds[f].mu {
                mu.row_mut(row).copy_from_slice(m.row(cursor[f]));
            }
            prob.row_mut(row).copy_from_slice(preds[f].prob.row(cursor[f]));
            cursor[f] += 1;
            row += 1;
        }
    }
    let mu = with_means.then_some(mu);
    Ok((NuisanceValues { mu, prob, mode: config.resolved_mode(data) }, None))
}
