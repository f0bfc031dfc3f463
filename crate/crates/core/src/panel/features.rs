use super::{DecisionRecord, PanelDataset};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// A feature computable from the history available at decision point t.
///
/// Grammar: `1` | `t` | `<covariate>` | `<covariate>_lag<k>` | `outcome_lag<k>`
/// | `arm_lag<k>` (any treatment) | `arm<j>_lag<k>` (treatment j) | `<expr>*<expr>`.
/// The current `outcome` and `arm` are not features: they are not part of H_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureExpr {
    Intercept,
    Time,
    Covariate { index: usize, name: String, lag: u32 },
    OutcomeLag(u32),
    AnyArmLag(u32),
    ArmLag { arm: usize, lag: u32 },
    Product(Box<FeatureExpr>, Box<FeatureExpr>),
}

impl fmt::Display for FeatureExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureExpr::Intercept => write!(f, "1"),
            FeatureExpr::Time => write!(f, "t"),
            FeatureExpr::Covariate { name, lag: 0, .. } => write!(f, "{name}"),
            FeatureExpr::Covariate { name, lag, .. } => write!(f, "{name}_lag{lag}"),
            FeatureExpr::OutcomeLag(k) => write!(f, "outcome_lag{k}"),
            FeatureExpr::AnyArmLag(k) => write!(f, "arm_lag{k}"),
            FeatureExpr::ArmLag { arm, lag } => write!(f, "arm{arm}_lag{lag}"),
            FeatureExpr::Product(a, b) => write!(f, "{a}*{b}"),
        }
    }
}

fn split_lag(s: &str) -> Option<(&str, u32)> {
    let pos = s.rfind("_lag")?;
    let k: u32 = s[pos + 4..].parse().ok()?;
    (k >= 1).then_some((&s[..pos], k))
}

impl FeatureExpr {
    pub fn parse(expr: &str, data: &PanelDataset) -> Result<Self> {
        let expr = expr.trim();
        if let Some((a, b)) = expr.split_once('*') {
            return Ok(FeatureExpr::Product(Box::new(Self::parse(a, data)?), Box::new(Self::parse(b, data)?)));
        }
        if expr == "1" {
            return Ok(FeatureExpr::Intercept);
        }
        if expr == "t" && data.covariate_index("t").is_none() {
            return Ok(FeatureExpr::Time);
        }
        if let Some(index) = data.covariate_index(expr) {
            return Ok(FeatureExpr::Covariate { index, name: expr.to_string(), lag: 0 });
        }
        if let Some((base, k)) = split_lag(expr) {
            if let Some(index) = data.covariate_index(base) {
                return Ok(FeatureExpr::Covariate { index, name: base.to_string(), lag: k });
            }
            match base {
                "outcome" => return Ok(FeatureExpr::OutcomeLag(k)),
                "arm" => return Ok(FeatureExpr::AnyArmLag(k)),
                _ => {}
            }
            if let Some(j) = base.strip_prefix("arm").and_then(|s| s.parse::<usize>().ok()) {
                if j >= 1 && j <= data.k_arms() {
                    return Ok(FeatureExpr::ArmLag { arm: j, lag: k });
                }
            }
        }
        Err(Error::UnknownFeature(expr.to_string()))
    }

    /// Name used to look up a declared initial value for lagged features.
    fn lag_base(&self) -> Option<String> {
        match self {
            FeatureExpr::Covariate { name, lag, .. } if *lag > 0 => Some(name.clone()),
            FeatureExpr::OutcomeLag(_) => Some("outcome".into()),
            FeatureExpr::AnyArmLag(_) => Some("arm".into()),
            FeatureExpr::ArmLag { arm, .. } => Some(format!("arm{arm}")),
            _ => None,
        }
    }

    /// Evaluates the feature at position `idx` of one participant's records.
    pub fn eval(&self, records: &[DecisionRecord], idx: usize, init: &LagInit) -> Result<f64> {
        let lagged = |lag: u32| -> Option<&DecisionRecord> { idx.checked_sub(lag as usize).map(|j| &records[j]) };
        let before_start = || -> Result<f64> {
            let base = self.lag_base().unwrap_or_default();
            init.value(&base).ok_or_else(|| Error::LagBeforeStart { feature: self.to_string() })
        };
        Ok(match self {
            FeatureExpr::Intercept => 1.0,
            FeatureExpr::Time => records[idx].t as f64,
            FeatureExpr::Covariate { index, lag, .. } => match lagged(*lag) {
                Some(r) => r.covariates[*index],
                None => before_start()?,
            },
            FeatureExpr::OutcomeLag(k) => match lagged(*k) {
                Some(r) => r.outcome as f64,
                None => before_start()?,
            },
            FeatureExpr::AnyArmLag(k) => match lagged(*k) {
                Some(r) => f64::from(u8::from(r.arm != 0)),
                None => before_start()?,
            },
            FeatureExpr::ArmLag { arm, lag } => match lagged(*lag) {
                Some(r) => f64::from(u8::from(r.arm == *arm)),
                None => before_start()?,
            },
            FeatureExpr::Product(a, b) => a.eval(records, idx, init)? * b.eval(records, idx, init)?,
        })
    }
}

/// Initial values substituted for lags that reach before the first record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagInit {
    pub values: BTreeMap<String, f64>,
    /// Used for any base without an explicit entry; `None` makes such lags an error.
    pub default: Option<f64>,
}

impl Default for LagInit {
    fn default() -> Self {
        Self { values: BTreeMap::new(), default: Some(0.0) }
    }
}

impl LagInit {
    pub fn strict() -> Self {
        Self { values: BTreeMap::new(), default: None }
    }

    pub fn value(&self, base: &str) -> Option<f64> {
        self.values.get(base).copied().or(self.default)
    }
}

/// Declarative description of the effect model: moderators S_t (or f(H_t))
/// and the control features g(H_t) of the parametric working models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectModelSpec {
    pub moderators: Vec<String>,
    pub controls: Vec<String>,
    /// Prepend an intercept to the moderator list when it lacks one.
    pub moderator_intercept: bool,
    /// Prepend an intercept to the control list when it lacks one.
    pub control_intercept: bool,
    pub lag_init: LagInit,
}

impl Default for EffectModelSpec {
    fn default() -> Self {
        Self {
            moderators: vec!["1".into()],
            controls: vec!["1".into()],
            moderator_intercept: false,
            control_intercept: false,
            lag_init: LagInit::default(),
        }
    }
}

impl EffectModelSpec {
    pub fn new<S: Into<String>>(moderators: impl IntoIterator<Item = S>, controls: impl IntoIterator<Item = S>) -> Self {
        Self {
            moderators: moderators.into_iter().map(Into::into).collect(),
            controls: controls.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub(crate) fn resolved_moderators(&self) -> Vec<String> {
        with_intercept(&self.moderators, self.moderator_intercept)
    }

    pub(crate) fn resolved_controls(&self) -> Vec<String> {
        with_intercept(&self.controls, self.control_intercept)
    }
}

fn with_intercept(list: &[String], flag: bool) -> Vec<String> {
    let mut out = Vec::with_capacity(list.len() + 1);
    if flag && !list.iter().any(|s| s.trim() == "1") {
        out.push("1".to_string());
    }
    out.extend(list.iter().cloned());
    out
}
