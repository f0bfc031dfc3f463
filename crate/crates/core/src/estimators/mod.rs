//! Causal excursion effect estimators and sandwich inference.

pub mod gee;
mod report;
pub mod sandwich;
pub mod scores;
pub mod solver;
pub mod weights;

pub use gee::WorkingCorrelation;
pub use report::{EstimateReport, ParameterEstimate};
pub use sandwich::MeatKind;
pub use solver::{solve_score, SolverOptions};
pub use weights::{blip_down, h_marginal, weight_ktilde, weight_w};

use crate::error::{Error, Result};
use crate::linalg::rank;
use crate::nuisance::propensity::sample_proportions;
use crate::nuisance::{fit_nuisance_values, NuisanceConfig, NuisanceValues};
use crate::panel::{build_design, DesignBundle, EffectModelSpec, PanelDataset, RowMatrix};
use crate::par::Execution;
use gee::GeeScore;
use sandwich::{sandwich_cov, Evaluator};
use scores::{DrEmeeNonP, Ece, EceNonP, Emee, EmeeNonP, Score, ScoreData};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    Ece,
    EceNonP,
    Emee,
    EmeeNonP,
    DrEmeeNonP,
    GeeInd,
    GeeExch,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Ece,
        EstimatorKind::EceNonP,
        EstimatorKind::Emee,
        EstimatorKind::EmeeNonP,
        EstimatorKind::DrEmeeNonP,
        EstimatorKind::GeeInd,
        EstimatorKind::GeeExch,
    ];

    /// Uses the fitted outcome means μ̂_0..μ̂_K.
    pub fn needs_means(self) -> bool {
        matches!(self, EstimatorKind::EceNonP | EstimatorKind::EmeeNonP | EstimatorKind::DrEmeeNonP)
    }

    /// Uses p_t (known or fitted).
    pub fn needs_propensity(self) -> bool {
        !self.is_gee()
    }

    pub fn is_gee(self) -> bool {
        matches!(self, EstimatorKind::GeeInd | EstimatorKind::GeeExch)
    }

    /// Parametric estimators carry the control coefficients α in θ.
    pub fn has_controls(self) -> bool {
        matches!(self, EstimatorKind::Ece | EstimatorKind::Emee | EstimatorKind::GeeInd | EstimatorKind::GeeExch)
    }

    /// Only defined for a binary treatment.
    pub fn binary_only(self) -> bool {
        matches!(self, EstimatorKind::Ece | EstimatorKind::EceNonP)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Ece => "ECE",
            EstimatorKind::EceNonP => "ECE-NonP",
            EstimatorKind::Emee => "EMEE",
            EstimatorKind::EmeeNonP => "EMEE-NonP",
            EstimatorKind::DrEmeeNonP => "DR-EMEE-NonP",
            EstimatorKind::GeeInd => "GEE-IND",
            EstimatorKind::GeeExch => "GEE-EXCH",
        })
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "ece" => EstimatorKind::Ece,
            "ecenonp" => EstimatorKind::EceNonP,
            "emee" => EstimatorKind::Emee,
            "emeenonp" => EstimatorKind::EmeeNonP,
            "dremeenonp" | "dr" => EstimatorKind::DrEmeeNonP,
            "geeind" | "gee" => EstimatorKind::GeeInd,
            "geeexch" => EstimatorKind::GeeExch,
            _ => return Err(Error::InvalidConfig(format!("unknown estimator `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EstimandKind {
    /// φ on f(H_t).
    Conditional,
    /// β on S_t.
    #[default]
    Marginal,
}

impl fmt::Display for EstimandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimandKind::Conditional => "conditional",
            EstimandKind::Marginal => "marginal",
        })
    }
}

impl std::str::FromStr for EstimandKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conditional" => Ok(EstimandKind::Conditional),
            "marginal" => Ok(EstimandKind::Marginal),
            other => Err(Error::InvalidConfig(format!("unknown estimand `{other}`"))),
        }
    }
}

/// Policy for the reference probabilities p̃_t(S_t).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum ReferenceProb {
    /// Availability-weighted sample proportion of each arm.
    #[default]
    SampleProportion,
    /// Fixed per-arm values.
    Constant(Vec<f64>),
}

impl std::str::FromStr for ReferenceProb {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("sample-proportion") || s.eq_ignore_ascii_case("sample_proportion") {
            return Ok(ReferenceProb::SampleProportion);
        }
        let values = s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidConfig(format!("bad reference probability `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReferenceProb::Constant(values))
    }
}

impl fmt::Display for ReferenceProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceProb::SampleProportion => f.write_str("sample-proportion"),
            ReferenceProb::Constant(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub kind: EstimandKind,
    pub estimator: EstimatorKind,
    pub model: EffectModelSpec,
    pub reference: ReferenceProb,
    pub solver: SolverOptions,
    pub meat: MeatKind,
    /// Use a t critical value on (records − dim) degrees of freedom.
    pub t_critical: bool,
    pub execution: Execution,
}

impl EstimandSpec {
    pub fn new(estimator: EstimatorKind, model: EffectModelSpec) -> Self {
        Self {
            kind: EstimandKind::Marginal,
            estimator,
            model,
            reference: ReferenceProb::default(),
            solver: SolverOptions::default(),
            meat: MeatKind::default(),
            t_critical: false,
            execution: Execution::default(),
        }
    }
}

/// A fully materialized estimating-equation instance.
pub struct Problem {
    pub estimator: EstimatorKind,
    pub design: DesignBundle,
    pub prob: Option<RowMatrix>,
    pub ref_prob: RowMatrix,
    pub mu: Option<RowMatrix>,
    /// K̃ premultiplier for ECE-NonP.
    pub ktilde: bool,
    /// Exchangeable working correlation for GEE-EXCH (0 = independence).
    pub rho: f64,
}

impl Problem {
    pub fn new(data: &PanelDataset, spec: &EstimandSpec, values: Option<&NuisanceValues>) -> Result<Self> {
        let est = spec.estimator;
        let design = build_design(data, &spec.model)?;
        let k = design.k_arms;
        if est.binary_only() && k != 1 {
            return Err(Error::Unsupported {
                estimator: est.to_string(),
                reason: format!("defined for a binary treatment only, dataset has {k} arms"),
            });
        }
        if design.n_available() == 0 {
            return Err(Error::EmptyDataset);
        }
        let ref_prob = reference_matrix(&design, &spec.reference)?;
        if est.has_controls() {
            let rows: Vec<usize> = (0..design.n_records()).filter(|&r| design.available[r]).collect();
            let g = nalgebra::DMatrix::from_fn(rows.len(), design.q(), |i, j| design.controls.get(rows[i], j));
            if design.q() == 0 || rank(&g, 1e-10) < design.q() {
                return Err(Error::RankDeficientControls);
            }
        }
        let prob = if est.needs_propensity() {
            let v = values.ok_or_else(|| Error::MissingNuisance("propensity".into()))?;
            check_rows(v.prob.nrows(), design.n_records())?;
            Some(v.prob.clone())
        } else {
            None
        };
        let mu = if est.needs_means() {
            let m = values.and_then(|v| v.mu.as_ref()).ok_or_else(|| Error::MissingNuisance("outcome means".into()))?;
            check_rows(m.nrows(), design.n_records())?;
            Some(m.clone())
        } else {
            None
        };
        Ok(Self { estimator: est, design, prob, ref_prob, mu, ktilde: true, rho: 0.0 })
    }

    pub fn dim(&self) -> usize {
        let d = &self.design;
        let effect = d.p() * d.k_arms;
        if self.estimator.has_controls() {
            d.q() + effect
        } else {
            effect
        }
    }

    /// Number of leading control coefficients in θ.
    pub fn n_controls(&self) -> usize {
        if self.estimator.has_controls() {
            self.design.q()
        } else {
            0
        }
    }

    pub fn with_score<R>(&self, f: impl FnOnce(&dyn Score) -> R) -> R {
        if self.estimator.is_gee() {
            return f(&GeeScore { design: &self.design, rho: self.rho });
        }
        let prob = self.prob.as_ref().expect("propensity present");
        let data = ScoreData { design: &self.design, prob, ref_prob: &self.ref_prob, mu: self.mu.as_ref() };
        match self.estimator {
            EstimatorKind::Ece => f(&Ece { data }),
            EstimatorKind::EceNonP => f(&EceNonP { data, ktilde: self.ktilde }),
            EstimatorKind::Emee => f(&Emee { data }),
            EstimatorKind::EmeeNonP => f(&EmeeNonP { data }),
            EstimatorKind::DrEmeeNonP => f(&DrEmeeNonP { data }),
            EstimatorKind::GeeInd | EstimatorKind::GeeExch => unreachable!(),
        }
    }

    pub fn n_norm(&self) -> f64 {
        self.design.n_records() as f64
    }

    /// Averaged score N⁻¹ Σ m_{i,t}(θ).
    pub fn mean_score(&self, theta: &[f64], exec: Execution) -> Vec<f64> {
        self.with_score(|s| Evaluator { score: s, offsets: &self.design.offsets, n_norm: self.n_norm(), exec }.mean(theta))
    }

    /// Starting value: zeros, with an intercept control at the log mean of
    /// untreated available outcomes.
    pub fn initial(&self) -> Vec<f64> {
        let mut init = vec![0.0; self.dim()];
        let d = &self.design;
        let rows: Vec<usize> = (0..d.n_records()).filter(|&r| d.available[r] && d.arm[r] == 0).collect();
        let mean = rows.iter().map(|&r| d.outcome[r]).sum::<f64>() / rows.len().max(1) as f64;
        for j in 0..self.n_controls() {
            if mean > 0.0 && (0..d.n_records()).all(|r| d.controls.get(r, j) == 1.0) {
                init[j] = mean.ln();
                break;
            }
        }
        init
    }

    /// Solves the estimating equation and computes the sandwich covariance.
    pub fn solve(&self, spec: &EstimandSpec, init: &[f64]) -> Result<(solver::Solution, nalgebra::DMatrix<f64>)> {
        let exec = spec.execution;
        self.with_score(|s| {
            let ev = Evaluator { score: s, offsets: &self.design.offsets, n_norm: self.n_norm(), exec };
            let f = |t: &[f64]| ev.mean(t);
            let sol = solve_score(f, init, &spec.solver)?;
            let j = solver::jacobian(&f, &sol.theta, &ev.mean(&sol.theta));
            let meat_kind = if self.estimator.is_gee() { MeatKind::Cluster } else { spec.meat };
            let cov = sandwich_cov(&j, &ev.meat(&sol.theta, meat_kind), self.n_norm())?;
            Ok((sol, cov))
        })
    }
}

fn check_rows(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::MissingNuisance(format!("nuisance values cover {got} records, design has {want}")));
    }
    Ok(())
}

fn reference_matrix(design: &DesignBundle, policy: &ReferenceProb) -> Result<RowMatrix> {
    let k = design.k_arms;
    let values = match policy {
        ReferenceProb::SampleProportion => sample_proportions(&design.available, &design.arm, k)?,
        ReferenceProb::Constant(v) => {
            if v.len() != k || v.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || v.iter().sum::<f64>() >= 1.0 {
                return Err(Error::InvalidConfig(format!("reference probabilities {v:?} invalid for {k} arms")));
            }
            v.clone()
        }
    };
    let mut m = RowMatrix::zeros(design.n_records(), k);
    for r in 0..design.n_records() {
        m.row_mut(r).copy_from_slice(&values);
    }
    Ok(m)
}

/// Fits the nuisance functions the estimator needs, then estimates.
pub fn estimate(data: &PanelDataset, spec: &EstimandSpec, nuisance: &NuisanceConfig) -> Result<EstimateReport> {
    let values = if spec.estimator.is_gee() {
        None
    } else {
        Some(fit_nuisance_values(data, nuisance, spec.estimator.needs_means())?.0)
    };
    estimate_with_values(data, spec, values.as_ref())
}

/// Estimates with precomputed nuisance predictions (shared across estimators).
pub fn estimate_with_values(data: &PanelDataset, spec: &EstimandSpec, values: Option<&NuisanceValues>) -> Result<EstimateReport> {
    let mut problem = Problem::new(data, spec, values)?;
    let mode = values.map(|v| v.mode.to_string()).unwrap_or_else(|| "none".into());
    let d = &problem.design;
    if (0..d.n_records()).all(|r| !d.available[r] || d.outcome[r] == 0.0) {
        log::warn!("all available outcomes are zero; log-ratio effect undefined");
        return Ok(EstimateReport::degenerate(spec, &problem, mode));
    }
    let init = problem.initial();
    let (mut sol, mut cov) = problem.solve(spec, &init)?;
    let mut rho = None;
    if spec.estimator == EstimatorKind::GeeExch {
        // alternate moment updates of ρ with re-solves at fixed ρ
        for _ in 0..25 {
            let next = gee::moment_rho(&GeeScore { design: &problem.design, rho: problem.rho }, &sol.theta);
            let delta = (next - problem.rho).abs();
            problem.rho = next;
            let init = sol.theta.clone();
            (sol, cov) = problem.solve(spec, &init)?;
            if delta < 1e-8 {
                break;
            }
        }
        rho = Some(problem.rho);
    }
    Ok(EstimateReport::build(spec, &problem, &sol, &cov, mode, rho))
}
