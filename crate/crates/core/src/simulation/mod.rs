//! Synthetic panels for the four benchmark scenarios, analytic ground truth,
//! and a replication harness reporting Bias/SE/SD/RMSE/CP.

mod generate;
mod replicate;
mod thompson;
mod truth;

pub use generate::{gen_decay, gen_scenario, oracle_nuisance, DecayConfig, GenDiagnostics};
pub use replicate::{
    run_replicates, run_replications, summarize_estimates, summarize_outcomes, EstimatorSummary, ParameterSummary, ReplicateOutcome, ReplicationPlan,
    ReplicationSummary,
};
pub use thompson::{thompson_probability, TsState};
pub use truth::{true_effect, true_effect_monte_carlo, MonteCarloEffect};

pub use crate::nuisance::glm::expit;

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    /// MRT with known expit randomization.
    S1,
    /// Observational: randomization probabilities withheld.
    S2,
    /// MRT with Thompson-sampling randomization.
    S3,
    /// Two active treatments.
    S4,
}

impl ScenarioId {
    pub fn k_arms(self) -> usize {
        if self == ScenarioId::S4 {
            2
        } else {
            1
        }
    }

    pub fn number(self) -> u8 {
        match self {
            ScenarioId::S1 => 1,
            ScenarioId::S2 => 2,
            ScenarioId::S3 => 3,
            ScenarioId::S4 => 4,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches(['s', 'S']) {
            "1" => Ok(ScenarioId::S1),
            "2" => Ok(ScenarioId::S2),
            "3" => Ok(ScenarioId::S3),
            "4" => Ok(ScenarioId::S4),
            other => Err(Error::InvalidConfig(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioId,
    pub n: usize,
    pub t: u32,
    /// NB dispersion r.
    pub dispersion: f64,
    /// Thompson-sampling tuning α.
    pub ts_alpha: f64,
    /// Warm-up decision points randomized at 0.5.
    pub ts_t0: u32,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioId, n: usize, t: u32, seed: u64) -> Self {
        Self { scenario, n, t, dispersion: 1.0, ts_alpha: 1.0, ts_t0: 20, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.t < 1 {
            return Err(Error::InvalidConfig("n and T must be at least 1".into()));
        }
        if !(self.dispersion > 0.0 && self.dispersion.is_finite()) {
            return Err(Error::InvalidConfig("dispersion r must be positive".into()));
        }
        if self.scenario == ScenarioId::S3 {
            if self.t <= self.ts_t0 {
                return Err(Error::InvalidConfig(format!("scenario 3 needs T > T0 = {}", self.ts_t0)));
            }
            if !(self.ts_alpha > 0.0) {
                return Err(Error::InvalidConfig("TS tuning alpha must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Draws Y = O·L with O ~ Bernoulli(π) and L ~ NB(mean μ, dispersion r),
/// the latter as Poisson with a Gamma(shape r, scale μ/r) rate.
pub fn sample_zinb<R: Rng + ?Sized>(pi: f64, mu: f64, r: f64, rng: &mut R) -> u64 {
    if !rng.random_bool(pi.clamp(0.0, 1.0)) || mu <= 0.0 {
        return 0;
    }
    let rate = Gamma::new(r, mu / r).expect("valid gamma").sample(rng);
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("valid poisson").sample(rng) as u64
}
