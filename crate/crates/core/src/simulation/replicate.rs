use super::generate::{gen_scenario, oracle_nuisance};
use super::truth::true_effect;
use super::ScenarioConfig;
use crate::error::{Error, Result};
use crate::estimators::{estimate_with_values, EstimandKind, EstimandSpec, EstimatorKind, MeatKind};
use crate::nuisance::{fit_nuisance_values, NuisanceConfig, NuisanceTerm, TermKind};
use crate::panel::EffectModelSpec;
use crate::par::{map_indexed, Execution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationPlan {
    pub config: ScenarioConfig,
    pub reps: usize,
    pub estimators: Vec<EstimatorKind>,
    pub estimand: EstimandKind,
    pub model: EffectModelSpec,
    pub nuisance: NuisanceConfig,
    pub meat: MeatKind,
    /// Plug in the generating μ and propensities instead of fitting them.
    pub oracle_nuisance: bool,
    /// Replicates run in parallel; each fit inside runs sequentially.
    pub execution: Execution,
    /// Every replicate reuses stream 0 (degenerate runs for testing).
    pub same_stream: bool,
}

impl ReplicationPlan {
    pub fn new(config: ScenarioConfig, reps: usize, estimators: Vec<EstimatorKind>, estimand: EstimandKind) -> Self {
        let model = match estimand {
            EstimandKind::Marginal => EffectModelSpec::new(["1"], ["1", "Z"]),
            EstimandKind::Conditional => EffectModelSpec::new(["1", "Z"], ["1", "Z"]),
        };
        let nuisance = NuisanceConfig {
            terms: vec![NuisanceTerm::new("Z", TermKind::Auto), NuisanceTerm::new("arm_lag1", TermKind::Auto)],
            ..NuisanceConfig::default()
        };
        Self {
            config,
            reps,
            estimators,
            estimand,
            model,
            nuisance,
            meat: MeatKind::default(),
            oracle_nuisance: false,
            execution: Execution::default(),
            same_stream: false,
        }
    }

    fn rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(if self.same_stream { 0 } else { rep as u64 });
        rng
    }
}

/// One estimator applied to one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub rep: usize,
    pub estimator: EstimatorKind,
    /// (estimates, standard errors) or the error message.
    pub result: std::result::Result<(Vec<f64>, Vec<f64>), String>,
    pub min_prob: f64,
    pub max_prob: f64,
    pub ts_fallbacks: usize,
}

fn run_one(plan: &ReplicationPlan, rep: usize) -> Vec<ReplicateOutcome> {
    let outcome = |estimator, result, diag: (f64, f64, usize)| ReplicateOutcome {
        rep,
        estimator,
        result,
        min_prob: diag.0,
        max_prob: diag.1,
        ts_fallbacks: diag.2,
    };
    let fail_all = |msg: String, diag| plan.estimators.iter().map(|&e| outcome(e, Err(msg.clone()), diag)).collect();
    let (data, gd) = match gen_scenario(&plan.config, &mut plan.rng(rep)) {
        Ok(v) => v,
        Err(e) => return fail_all(e.to_string(), (f64::NAN, f64::NAN, 0)),
    };
    let diag = (gd.min_prob, gd.max_prob, gd.ts_fallbacks);
    let needs_means = plan.estimators.iter().any(|e| e.needs_means());
    let values = if plan.estimators.iter().all(|e| e.is_gee()) {
        None
    } else if plan.oracle_nuisance {
        match oracle_nuisance(&data, plan.config.scenario) {
            Ok(v) => Some(v),
            Err(e) => return fail_all(e.to_string(), diag),
        }
    } else {
        match fit_nuisance_values(&data, &plan.nuisance, needs_means) {
            Ok((v, _)) => Some(v),
            Err(e) => return fail_all(format!("nuisance: {e}"), diag),
        }
    };
    plan.estimators
        .iter()
        .map(|&est| {
            let mut spec = EstimandSpec::new(est, plan.model.clone());
            spec.kind = plan.estimand;
            spec.meat = plan.meat;
            // replicates are the parallel unit
            spec.execution = Execution::Sequential;
            let res = estimate_with_values(&data, &spec, values.as_ref())
                .map(|r| (r.estimates(), r.standard_errors()))
                .map_err(|e| e.to_string());
            outcome(est, res, diag)
        })
        .collect()
}

/// Runs every replicate; replicate k draws from stream k of the seeded
/// generator, so results do not depend on which other replicates run.
pub fn run_replicates(plan: &ReplicationPlan) -> Vec<ReplicateOutcome> {
    map_indexed(plan.execution, plan.reps, |rep| run_one(plan, rep)).into_iter().flatten().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    /// Mean estimated standard error.
    pub se: f64,
    /// Standard deviation of the estimates (R − 1 denominator).
    pub sd: f64,
    pub rmse: f64,
    /// Coverage of the 95% Wald interval.
    pub cp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub parameters: Vec<ParameterSummary>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub scenario: u8,
    pub n: usize,
    pub t: u32,
    pub reps: usize,
    pub seed: u64,
    pub estimand: String,
    pub estimators: Vec<EstimatorSummary>,
    /// `rep <k> <estimator>: <message>` for every failed fit.
    pub failure_log: Vec<String>,
    pub min_prob: f64,
    pub max_prob: f64,
    pub ts_fallbacks: usize,
}

/// Bias/SE/SD/RMSE/CP over successful replicates. `estimates[r]` and
/// `ses[r]` hold replicate r's parameter vector.
pub fn summarize_estimates(names: &[String], truth: &[f64], estimates: &[Vec<f64>], ses: &[Vec<f64>], critical: f64) -> Vec<ParameterSummary> {
    let r = estimates.len() as f64;
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let tv = truth[j];
            let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / r;
            let sd = if estimates.len() > 1 {
                (estimates.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
            } else {
                f64::NAN
            };
            let rmse = (estimates.iter().map(|e| (e[j] - tv).powi(2)).sum::<f64>() / r).sqrt();
            let covered = estimates.iter().zip(ses).filter(|(e, s)| (e[j] - tv).abs() <= critical * s[j]).count();
            ParameterSummary {
                name: name.clone(),
                truth: tv,
                bias: mean - tv,
                se: ses.iter().map(|s| s[j]).sum::<f64>() / r,
                sd,
                rmse,
                cp: covered as f64 / r,
            }
        })
        .collect()
}

fn parameter_names(plan: &ReplicationPlan) -> Vec<String> {
    let mods = &plan.model.moderators;
    let k = plan.config.scenario.k_arms();
    if k == 1 {
        return mods.clone();
    }
    (1..=k).flat_map(|a| mods.iter().map(move |m| format!("arm{a}:{m}"))).collect()
}

/// Aggregates replicate outcomes against `truth`.
pub fn summarize_outcomes(plan: &ReplicationPlan, truth: &[f64], outcomes: &[ReplicateOutcome]) -> Result<ReplicationSummary> {
    let names = parameter_names(plan);
    if names.len() != truth.len() {
        return Err(Error::InvalidConfig(format!("truth has {} entries, model has {} parameters", truth.len(), names.len())));
    }
    let crit = Normal::standard().inverse_cdf(0.975);
    let mut failure_log = Vec::new();
    let mut sorted: Vec<&ReplicateOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.rep);
    let estimators = plan
        .estimators
        .iter()
        .map(|&est| {
            let (mut e, mut s, mut failures) = (Vec::new(), Vec::new(), 0);
            for o in sorted.iter().filter(|o| o.estimator == est) {
                match &o.result {
                    Ok((theta, se)) if theta.iter().chain(se).all(|v| v.is_finite()) => {
                        e.push(theta.clone());
                        s.push(se.clone());
                    }
                    Ok(_) => {
                        failures += 1;
                        failure_log.push(format!("rep {} {est}: non-finite estimate", o.rep));
                    }
                    Err(msg) => {
                        failures += 1;
                        failure_log.push(format!("rep {} {est}: {msg}", o.rep));
                    }
                }
            }
            let parameters = if e.is_empty() { Vec::new() } else { summarize_estimates(&names, truth, &e, &s, crit) };
            EstimatorSummary { estimator: est.to_string(), parameters, successes: e.len(), failures }
        })
        .collect::<Vec<_>>();
    if estimators.iter().all(|e| e.successes == 0) {
        for line in &failure_log {
            log::error!("{line}");
        }
        return Err(Error::AllReplicatesFailed(plan.reps));
    }
    let probs = || sorted.iter().filter(|o| o.min_prob.is_finite());
    Ok(ReplicationSummary {
        scenario: plan.config.scenario.number(),
        n: plan.config.n,
        t: plan.config.t,
        reps: plan.reps,
        seed: plan.config.seed,
        estimand: plan.estimand.to_string(),
        estimators,
        failure_log,
        min_prob: probs().map(|o| o.min_prob).fold(f64::INFINITY, f64::min),
        max_prob: probs().map(|o| o.max_prob).fold(f64::NEG_INFINITY, f64::max),
        ts_fallbacks: sorted.iter().filter(|o| Some(&o.estimator) == plan.estimators.first()).map(|o| o.ts_fallbacks).sum(),
    })
}

/// Runs the plan against the analytic truth of its scenario.
pub fn run_replications(plan: &ReplicationPlan) -> Result<ReplicationSummary> {
    if plan.reps < 2 {
        return Err(Error::InvalidConfig("replications need R >= 2".into()));
    }
    plan.config.validate()?;
    let truth = true_effect(plan.config.scenario, plan.estimand);
    summarize_outcomes(plan, &truth, &run_replicates(plan))
}

const COLUMNS: [&str; 8] = ["Estimator", "Time Length", "Parameter", "Bias", "SE", "SD", "RMSE", "CP"];

impl ReplicationSummary {
    fn rows(&self, prec: usize) -> Vec<[String; 8]> {
        let f = |v: f64| format!("{v:.prec$}");
        self.estimators
            .iter()
            .flat_map(|e| {
                e.parameters.iter().map(move |p| {
                    [e.estimator.clone(), self.t.to_string(), p.name.clone(), f(p.bias), f(p.se), f(p.sd), f(p.rmse), f(p.cp)]
                })
            })
            .collect()
    }

    /// Comma-separated rows for several summaries (typically one per T).
    pub fn to_csv(summaries: &[ReplicationSummary]) -> String {
        let mut out = COLUMNS.join(",");
        out.push('\n');
        for s in summaries {
            for row in s.rows(6) {
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }

    /// Aligned text table, three decimals.
    pub fn to_table(summaries: &[ReplicationSummary]) -> String {
        let rows: Vec<[String; 8]> = summaries.iter().flat_map(|s| s.rows(3)).collect();
        let mut width: Vec<usize> = COLUMNS.iter().map(|c| c.len()).collect();
        for row in &rows {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: Vec<&str>| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&width).enumerate() {
                if i < 3 {
                    let _ = write!(s, "{c:<w$}  ");
                } else {
                    let _ = write!(s, "{c:>w$}  ");
                }
            }
            out.push_str(s.trim_end());
            out.push('\n');
        };
        line(COLUMNS.to_vec());
        for row in &rows {
            line(row.iter().map(String::as_str).collect());
        }
        out
    }

    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::ScenarioId;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("b{i}")).collect()
    }

    #[test]
    fn injected_constant_estimator() {
        let est = vec![vec![0.6]; 10];
        let se = vec![vec![0.2]; 10];
        let s = &summarize_estimates(&names(1), &[0.5], &est, &se, 1.96)[0];
        assert!((s.bias - 0.1).abs() < 1e-12);
        assert!((s.rmse - 0.1).abs() < 1e-12);
        assert!(s.sd.abs() < 1e-12);
        assert_eq!(s.cp, 1.0);
        let se = vec![vec![0.01]; 10];
        assert_eq!(summarize_estimates(&names(1), &[0.5], &est, &se, 1.96)[0].cp, 0.0);
    }

    #[test]
    fn rmse_decomposition() {
        let est: Vec<Vec<f64>> = (0..37).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64).sqrt()]).collect();
        let se = vec![vec![0.3, 0.3]; 37];
        for (j, s) in summarize_estimates(&names(2), &[0.1, 3.0], &est, &se, 1.96).iter().enumerate() {
            let r = 37.0;
            let lhs = s.rmse * s.rmse;
            let rhs = s.bias * s.bias + s.sd * s.sd * (r - 1.0) / r;
            assert!((lhs - rhs).abs() < 1e-10, "{j}");
            assert!((0.0..=1.0).contains(&s.cp));
        }
    }

    #[test]
    fn identical_streams_give_zero_sd() {
        let cfg = ScenarioConfig::new(ScenarioId::S1, 30, 10, 3);
        let mut plan = ReplicationPlan::new(cfg, 2, vec![EstimatorKind::EmeeNonP], EstimandKind::Marginal);
        plan.same_stream = true;
        let s = run_replications(&plan).unwrap();
        let p = &s.estimators[0].parameters[0];
        assert_eq!(p.sd, 0.0);
        assert!(p.cp == 0.0 || p.cp == 1.0);
    }

    #[test]
    fn all_failures_surface() {
        let cfg = ScenarioConfig::new(ScenarioId::S4, 10, 5, 3);
        // ECE is binary-only, so every fit fails on a two-arm scenario
        let plan = ReplicationPlan::new(cfg, 3, vec![EstimatorKind::Ece], EstimandKind::Marginal);
        let outcomes = run_replicates(&plan);
        assert_eq!(outcomes.len(), 3);
        assert!(matches!(run_replications(&plan), Err(Error::AllReplicatesFailed(3))));
    }
}
