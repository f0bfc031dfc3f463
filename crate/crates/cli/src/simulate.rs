use crate::settings::{layered, parsed_list, set_flag, set_list, set_opt, value};
use crate::{Failure, SimulateArgs};
use excursion_core::config::KvConfig;
use excursion_core::estimators::{EstimandKind, EstimatorKind, MeatKind};
use excursion_core::nuisance::{NuisanceTerm, PropensityMode};
use excursion_core::par::{with_workers, Execution};
use excursion_core::simulation::{run_replicates, summarize_outcomes, true_effect, ReplicationPlan};
use excursion_core::{Error, ReplicationSummary, ScenarioConfig, ScenarioId};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

const DEFAULTS: &[(&str, &str)] = &[
    ("scenario", "1"),
    ("n", "100"),
    ("t", "30"),
    ("reps", "200"),
    ("seed", "2024"),
    ("estimators", ""),
    ("estimand", "marginal"),
    ("dispersion", "1"),
    ("ts_alpha", "1"),
    ("ts_t0", "20"),
    ("propensity", "auto"),
    ("nuisance_terms", "Z, arm_lag1"),
    ("oracle_nuisance", "false"),
    ("meat", "record"),
];

fn flags(args: &SimulateArgs) -> KvConfig {
    let mut f = KvConfig::new();
    set_opt(&mut f, "scenario", &args.scenario);
    set_opt(&mut f, "n", &args.n);
    set_list(&mut f, "t", &args.t);
    set_opt(&mut f, "reps", &args.reps);
    set_opt(&mut f, "seed", &args.seed);
    set_list(&mut f, "estimators", &args.estimators);
    set_opt(&mut f, "estimand", &args.estimand);
    set_opt(&mut f, "dispersion", &args.dispersion);
    set_opt(&mut f, "ts_alpha", &args.ts_alpha);
    set_opt(&mut f, "propensity", &args.propensity);
    set_list(&mut f, "nuisance_terms", &args.nuisance_terms);
    set_flag(&mut f, "oracle_nuisance", args.oracle_nuisance);
    set_opt(&mut f, "meat", &args.meat);
    f
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::input(path.display(), e))
}

pub fn run(args: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = layered(DEFAULTS, args.config.as_deref(), &flags(&args))?;
    let scenario: ScenarioId = value(&cfg, "scenario")?;
    if cfg.list("estimators").is_empty() {
        // everything that applies to the scenario's arm count
        let all: Vec<String> = EstimatorKind::ALL
            .iter()
            .filter(|e| scenario.k_arms() == 1 || !e.binary_only())
            .map(ToString::to_string)
            .collect();
        cfg.set("estimators", all.join(", "));
    }
    let estimators: Vec<EstimatorKind> = parsed_list(&cfg, "estimators")?;
    let lengths: Vec<u32> = parsed_list(&cfg, "t")?;
    let reps: usize = value(&cfg, "reps")?;
    if reps < 2 {
        return Err(Failure::Input("replications need R >= 2".into()));
    }
    if lengths.is_empty() {
        return Err(Failure::Input("no decision-point count T given".into()));
    }
    let estimand: EstimandKind = value(&cfg, "estimand")?;
    // where results go is not part of the reproducible config
    let out_dir = args.output_dir.clone().unwrap_or_else(|| PathBuf::from("excursion-sim"));
    let terms = cfg
        .list("nuisance_terms")
        .iter()
        .map(|s| NuisanceTerm::parse(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::from_core("nuisance_terms", e))?;

    let mut plans = Vec::new();
    for &t in &lengths {
        let config = ScenarioConfig {
            scenario,
            n: value(&cfg, "n")?,
            t,
            dispersion: value(&cfg, "dispersion")?,
            ts_alpha: value(&cfg, "ts_alpha")?,
            ts_t0: value(&cfg, "ts_t0")?,
            seed: value(&cfg, "seed")?,
        };
        config.validate().map_err(|e| Failure::from_core("config", e))?;
        let mut plan = ReplicationPlan::new(config, reps, estimators.clone(), estimand);
        plan.nuisance.terms = terms.clone();
        plan.nuisance.propensity = value::<PropensityMode>(&cfg, "propensity")?;
        plan.oracle_nuisance = value(&cfg, "oracle_nuisance")?;
        plan.meat = value::<MeatKind>(&cfg, "meat")?;
        plan.execution = Execution::Parallel;
        plans.push(plan);
    }

    fs::create_dir_all(&out_dir).map_err(|e| Failure::input(out_dir.display(), e))?;
    let header = cfg.to_header();
    let mut failures = String::new();
    let mut summaries = Vec::new();
    let mut fatal = None;
    with_workers(args.workers.unwrap_or(0), || {
        for plan in &plans {
            let truth = true_effect(plan.config.scenario, plan.estimand);
            let outcomes = run_replicates(plan);
            match summarize_outcomes(plan, &truth, &outcomes) {
                Ok(s) => {
                    for line in &s.failure_log {
                        let _ = writeln!(failures, "T={} {line}", plan.config.t);
                    }
                    summaries.push(s);
                }
                Err(e) => {
                    for o in outcomes.iter().filter(|o| o.result.is_err()) {
                        let msg = o.result.as_ref().err().cloned().unwrap_or_default();
                        let _ = writeln!(failures, "T={} rep {} {}: {msg}", plan.config.t, o.rep, o.estimator);
                    }
                    fatal = Some(e);
                    break;
                }
            }
        }
    });
    write(&out_dir.join("failures.log"), &format!("{header}{failures}"))?;
    write(&out_dir.join("run.conf"), &cfg.to_text())?;
    if let Some(e) = fatal {
        let log = out_dir.join("failures.log");
        return Err(match e {
            Error::AllReplicatesFailed(_) => Failure::Estimation(format!("{e} (see {})", log.display())),
            other => Failure::from_core("simulate", other),
        });
    }

    let mut notes = String::new();
    for s in &summaries {
        let failed: usize = s.estimators.iter().map(|e| e.failures).sum();
        let _ = writeln!(
            notes,
            "# T={}: {} replicates, {failed} failed fits, realized probabilities in [{:.4}, {:.4}], {} TS fallbacks",
            s.t, s.reps, s.min_prob, s.max_prob, s.ts_fallbacks
        );
    }
    let csv = format!("{header}{}", ReplicationSummary::to_csv(&summaries));
    let table = format!("{header}{notes}{}", ReplicationSummary::to_table(&summaries));
    write(&out_dir.join("summary.csv"), &csv)?;
    write(&out_dir.join("summary.txt"), &table)?;
    print!("{}", ReplicationSummary::to_table(&summaries));
    Ok(())
}
