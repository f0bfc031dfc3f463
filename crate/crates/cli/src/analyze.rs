use crate::settings::{layered, parsed_list, set_flag, set_list, set_opt, value};
use crate::{AnalyzeArgs, Failure};
use excursion_core::config::KvConfig;
use excursion_core::estimators::{estimate_with_values, EstimandKind, EstimandSpec, EstimatorKind, MeatKind, ReferenceProb};
use excursion_core::nuisance::{fit_nuisance_values, NuisanceFit, NuisanceTerm, NuisanceValues, PropensityMode};
use excursion_core::panel::load_panel;
use excursion_core::par::{with_workers, Execution};
use excursion_core::{EffectModelSpec, EstimateReport, NuisanceConfig, PanelDataset, PanelSchema};
use std::fs;
use std::path::{Path, PathBuf};

const DEFAULTS: &[(&str, &str)] = &[
    ("input", ""),
    ("participant_col", "participant"),
    ("t_col", "t"),
    ("availability_col", "availability"),
    ("arm_col", "arm"),
    ("outcome_col", "outcome"),
    ("prob_cols", ""),
    ("arms", ""),
    ("estimators", "EMEE-NonP"),
    ("estimand", "marginal"),
    ("moderators", "1"),
    ("controls", "1"),
    ("reference", "sample-proportion"),
    ("propensity", "auto"),
    ("propensity_features", "1"),
    ("nuisance_terms", ""),
    ("nuisance_model", ""),
    ("meat", "record"),
    ("t_critical", "false"),
    ("sample_split", "false"),
];

fn flags(args: &AnalyzeArgs) -> KvConfig {
    let mut f = KvConfig::new();
    set_opt(&mut f, "input", &args.input.as_ref().map(|p| p.display()));
    set_opt(&mut f, "participant_col", &args.participant_col);
    set_opt(&mut f, "t_col", &args.t_col);
    set_opt(&mut f, "availability_col", &args.availability_col);
    set_opt(&mut f, "arm_col", &args.arm_col);
    set_opt(&mut f, "outcome_col", &args.outcome_col);
    set_list(&mut f, "prob_cols", &args.prob_cols);
    set_opt(&mut f, "arms", &args.arms);
    set_list(&mut f, "estimators", &args.estimators);
    set_opt(&mut f, "estimand", &args.estimand);
    set_list(&mut f, "moderators", &args.moderators);
    set_list(&mut f, "controls", &args.controls);
    set_opt(&mut f, "reference", &args.reference);
    set_opt(&mut f, "propensity", &args.propensity);
    set_list(&mut f, "propensity_features", &args.propensity_features);
    set_list(&mut f, "nuisance_terms", &args.nuisance_terms);
    set_opt(&mut f, "nuisance_model", &args.nuisance_model.as_ref().map(|p| p.display()));
    set_opt(&mut f, "meat", &args.meat);
    set_flag(&mut f, "t_critical", args.t_critical);
    set_flag(&mut f, "sample_split", args.sample_split);
    f
}

fn schema(cfg: &KvConfig) -> Result<PanelSchema, Failure> {
    let arms = match cfg.get("arms") {
        Some("") | None => None,
        Some(_) => Some(value::<usize>(cfg, "arms")?),
    };
    Ok(PanelSchema {
        participant: value(cfg, "participant_col")?,
        t: value(cfg, "t_col")?,
        availability: value(cfg, "availability_col")?,
        arm: value(cfg, "arm_col")?,
        outcome: value(cfg, "outcome_col")?,
        probabilities: cfg.list("prob_cols"),
        k_arms: arms,
    })
}

fn nuisance_config(cfg: &KvConfig) -> Result<NuisanceConfig, Failure> {
    let terms = cfg
        .list("nuisance_terms")
        .iter()
        .map(|s| NuisanceTerm::parse(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::from_core("nuisance_terms", e))?;
    Ok(NuisanceConfig {
        terms,
        propensity: value::<PropensityMode>(cfg, "propensity")?,
        propensity_features: cfg.list("propensity_features"),
        sample_split: value(cfg, "sample_split")?,
        ..NuisanceConfig::default()
    })
}

/// Nuisance predictions shared by all requested estimators; the fitted model
/// is returned so it can be saved for reuse.
fn nuisance_values(
    data: &PanelDataset,
    cfg: &KvConfig,
    estimators: &[EstimatorKind],
) -> Result<(Option<NuisanceValues>, Option<NuisanceFit>), Failure> {
    if estimators.iter().all(|e| e.is_gee()) {
        return Ok((None, None));
    }
    if let Some(path) = cfg.get("nuisance_model").filter(|p| !p.is_empty()) {
        let text = fs::read_to_string(path).map_err(|e| Failure::input(path, e))?;
        let fit = NuisanceFit::from_text(&text).map_err(|e| Failure::from_core(path, e))?;
        let values = fit.values(data).map_err(|e| Failure::from_core(path, e))?;
        return Ok((Some(values), None));
    }
    let with_means = estimators.iter().any(|e| e.needs_means());
    let (values, fit) = fit_nuisance_values(data, &nuisance_config(cfg)?, with_means).map_err(|e| Failure::from_core("nuisance", e))?;
    Ok((Some(values), fit))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::input(path.display(), e))
}

pub fn run(args: AnalyzeArgs) -> Result<(), Failure> {
    let cfg = layered(DEFAULTS, args.config.as_deref(), &flags(&args))?;
    let input = cfg.get("input").unwrap_or_default().to_string();
    if input.is_empty() {
        return Err(Failure::Input("no input panel given (use --input)".into()));
    }
    let estimators: Vec<EstimatorKind> = parsed_list(&cfg, "estimators")?;
    if estimators.is_empty() {
        return Err(Failure::Input("no estimator selected".into()));
    }
    let mut model = EffectModelSpec::new(cfg.list("moderators"), cfg.list("controls"));
    if model.moderators.is_empty() {
        model.moderators.push("1".into());
    }
    let kind: EstimandKind = value(&cfg, "estimand")?;
    let reference: ReferenceProb = value(&cfg, "reference")?;
    let meat: MeatKind = value(&cfg, "meat")?;
    let t_critical: bool = value(&cfg, "t_critical")?;
    // where results go is not part of the reproducible config
    let out_dir = args.output_dir.clone().unwrap_or_else(|| PathBuf::from("excursion-out"));
    let data = load_panel(&input, &schema(&cfg)?).map_err(|e| Failure::from_core(&input, e))?;

    let reports = with_workers(args.workers.unwrap_or(0), || -> Result<Vec<EstimateReport>, Failure> {
        let (values, fit) = nuisance_values(&data, &cfg, &estimators)?;
        if let Some(fit) = fit {
            fs::create_dir_all(&out_dir).map_err(|e| Failure::input(out_dir.display(), e))?;
            let text = fit.to_text().map_err(|e| Failure::from_core("nuisance", e))?;
            write(&out_dir.join("nuisance.json"), &text)?;
        }
        estimators
            .iter()
            .map(|&est| {
                let mut spec = EstimandSpec::new(est, model.clone());
                spec.kind = kind;
                spec.reference = reference.clone();
                spec.meat = meat;
                spec.t_critical = t_critical;
                spec.execution = Execution::Parallel;
                estimate_with_values(&data, &spec, values.as_ref()).map_err(|e| Failure::from_core(&est.to_string(), e))
            })
            .collect()
    })?;

    fs::create_dir_all(&out_dir).map_err(|e| Failure::input(out_dir.display(), e))?;
    let mut table = cfg.to_header();
    for r in &reports {
        table.push('\n');
        table.push_str(&r.to_table());
    }
    write(&out_dir.join("report.txt"), &table)?;
    let config: serde_json::Map<String, serde_json::Value> =
        cfg.keys().map(|k| (k.to_string(), serde_json::Value::from(cfg.get(k).unwrap_or_default()))).collect();
    let json = serde_json::json!({ "config": config, "reports": reports });
    let mut json = serde_json::to_string_pretty(&json).map_err(|e| Failure::Estimation(e.to_string()))?;
    json.push('\n');
    write(&out_dir.join("report.json"), &json)?;
    write(&out_dir.join("run.conf"), &cfg.to_text())?;
    for r in &reports {
        print!("{}", r.to_table());
    }
    Ok(())
}
