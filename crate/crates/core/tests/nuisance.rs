mod common;

use common::*;
use excursion_core::nuisance::{
    fit_hurdle_mean, fit_nuisance, NuisanceConfig, NuisanceFit, NuisanceTerm, PropensityMode, PropensityModel, TermKind,
};
use excursion_core::panel::{DecisionRecord, Participant};
use excursion_core::simulation::sample_zinb;
use excursion_core::{PanelDataset, ScenarioId};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn terms(names: &[&str]) -> Vec<NuisanceTerm> {
    names.iter().map(|n| NuisanceTerm::new(*n, TermKind::Auto)).collect()
}

/// μ̂ of `arm` at a raw feature row.
fn mu_at(data: &PanelDataset, arm: usize, cfg: &NuisanceConfig, raw: &[f64]) -> (f64, f64, f64) {
    let (ts, fit) = fit_hurdle_mean(data, arm, cfg).unwrap();
    let mut x = Vec::new();
    ts.encode_into(raw, &mut x);
    fit.components(&x)
}

#[test]
fn saturated_design_reproduces_cell_means() {
    let data = scenario(ScenarioId::S1, 40, 30, 21);
    let cfg = NuisanceConfig { terms: terms(&["Z"]), lambda_grid: vec![1e-12], ..NuisanceConfig::default() };
    for arm in 0..=1 {
        let (ts, fit) = fit_hurdle_mean(&data, arm, &cfg).unwrap();
        let mut x = Vec::new();
        for z in 0..3 {
            let ys: Vec<f64> = data
                .records()
                .filter(|r| r.available && r.arm == arm && r.covariates[0] == f64::from(z))
                .map(|r| r.outcome as f64)
                .collect();
            let cell = ys.iter().sum::<f64>() / ys.len() as f64;
            ts.encode_into(&[f64::from(z)], &mut x);
            let got = fit.predict(&x);
            assert!((got - cell).abs() <= 1e-8, "arm {arm} z {z}: {got} vs {cell}");
        }
    }
}

#[test]
fn hurdle_composition_holds_for_every_record() {
    let data = scenario(ScenarioId::S1, 30, 40, 22);
    let cfg = NuisanceConfig { terms: terms(&["Z", "arm_lag1"]), ..NuisanceConfig::default() };
    for arm in 0..=1 {
        let (ts, fit) = fit_hurdle_mean(&data, arm, &cfg).unwrap();
        let raw = ts.raw(&data).unwrap();
        let mut x = Vec::new();
        for r in 0..raw.nrows() {
            ts.encode_into(raw.row(r), &mut x);
            let (p, cond, mean) = fit.components(&x);
            assert!(p > 0.0 && p < 1.0);
            assert!(mean >= 0.0 && mean <= cond);
            assert_eq!(mean, p * cond);
        }
    }
}

fn no_covariates(ys: &[u64], arm: usize) -> PanelDataset {
    let records = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| DecisionRecord { t: i as u32 + 1, available: true, arm, rand_prob: None, covariates: vec![], outcome: y })
        .collect();
    PanelDataset::new(vec![Participant { id: "x".into(), records }], vec![], 1).unwrap()
}

#[test]
fn zero_inflated_mean_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let ys: Vec<u64> = (0..10_000).map(|_| sample_zinb(0.6, 3.0, 1.0, &mut rng)).collect();
    let data = no_covariates(&ys, 0);
    let (_, _, mu) = mu_at(&data, 0, &NuisanceConfig::default(), &[]);
    let mean = ys.iter().sum::<u64>() as f64 / ys.len() as f64;
    let sd = (ys.iter().map(|&y| (y as f64 - mean).powi(2)).sum::<f64>() / (ys.len() - 1) as f64).sqrt();
    let se = sd / (ys.len() as f64).sqrt();
    assert!((mu - 1.8).abs() <= 3.0 * se, "{mu} vs 1.8 ± {}", 3.0 * se);
}

#[test]
fn all_zero_arm_has_zero_mean() {
    let data = no_covariates(&[0; 50], 1);
    let (p, _, mu) = mu_at(&data, 1, &NuisanceConfig::default(), &[]);
    assert_eq!(mu, 0.0);
    assert_eq!(p, 0.0);
}

#[test]
fn scenario1_treated_mean_error() {
    let data = scenario(ScenarioId::S1, 100, 150, 24);
    let cfg = NuisanceConfig { terms: terms(&["Z"]), ..NuisanceConfig::default() };
    let base = [2.2, 2.5, 2.4];
    let mut mae = 0.0;
    for z in 0..3 {
        let zf = f64::from(z);
        let truth = (-0.4 * (zf + 0.1) + 0.1 * zf).exp() * base[z as usize] * (0.1 + 0.3 * zf).exp();
        mae += (mu_at(&data, 1, &cfg, &[zf]).2 - truth).abs() / 3.0;
    }
    assert!(mae <= 0.05, "MAE {mae}");
}

#[test]
fn logistic_propensity_recovers_design() {
    let data = scenario(ScenarioId::S1, 100, 100, 25);
    let cfg = NuisanceConfig {
        propensity: PropensityMode::Logistic,
        propensity_features: vec!["1".into(), "arm_lag1".into(), "Z".into()],
        ..NuisanceConfig::default()
    };
    let fit = fit_nuisance(&data, &cfg).unwrap();
    let PropensityModel::Logit { terms, stages } = &fit.propensity else { panic!("expected a logistic model") };
    let coef = &stages[0];
    // Fisher information at the estimate
    let raw = terms.raw(&data).unwrap();
    let mut info = DMatrix::<f64>::zeros(3, 3);
    let mut x = Vec::new();
    for r in 0..raw.nrows() {
        terms.encode_into(raw.row(r), &mut x);
        let xv = DVector::from_column_slice(&x);
        let p = 1.0 / (1.0 + (-xv.dot(&DVector::from_column_slice(coef))).exp());
        info += p * (1.0 - p) * &xv * xv.transpose();
    }
    let cov = info.try_inverse().unwrap();
    for (j, truth) in [0.0, -0.5, 0.5].into_iter().enumerate() {
        let se = cov[(j, j)].sqrt();
        assert!((coef[j] - truth).abs() <= 3.0 * se, "coef {j}: {} vs {truth} (se {se})", coef[j]);
    }
}

#[test]
fn known_probabilities_pass_through() {
    let data = scenario(ScenarioId::S3, 20, 40, 26);
    let cfg = NuisanceConfig { propensity: PropensityMode::Known, ..NuisanceConfig::default() };
    let values = fit_nuisance(&data, &cfg).unwrap().values(&data).unwrap();
    for (r, rec) in data.records().enumerate() {
        assert_eq!(values.prob.row(r), rec.rand_prob.as_deref().unwrap());
    }
}

#[test]
fn record_prediction_matches_bulk_values() {
    let data = scenario(ScenarioId::S4, 15, 20, 27);
    for propensity in [PropensityMode::SampleProportion, PropensityMode::Logistic, PropensityMode::Known] {
        let cfg = NuisanceConfig {
            terms: terms(&["Z", "arm_lag1"]),
            propensity,
            propensity_features: vec!["1".into(), "Z".into()],
            ..NuisanceConfig::default()
        };
        let fit = fit_nuisance(&data, &cfg).unwrap();
        let values = fit.values(&data).unwrap();
        let mu = values.mu.as_ref().unwrap();
        let mut r = 0;
        for (i, part) in data.participants().iter().enumerate() {
            for idx in 0..part.records.len() {
                let pred = fit.predict_record(&data, i, idx).unwrap();
                assert_eq!(pred.mu, mu.row(r));
                assert_eq!(pred.prob, values.prob.row(r));
                assert!(pred.prob.iter().all(|&p| (0.01..=0.99).contains(&p)));
                r += 1;
            }
        }
    }
}

#[test]
fn saved_fit_round_trips() {
    let data = scenario(ScenarioId::S1, 20, 30, 28);
    let cfg = NuisanceConfig {
        terms: terms(&["Z", "arm_lag1"]),
        propensity: PropensityMode::Logistic,
        propensity_features: vec!["1".into(), "Z".into()],
        ..NuisanceConfig::default()
    };
    let fit = fit_nuisance(&data, &cfg).unwrap();
    let back = NuisanceFit::from_text(&fit.to_text().unwrap()).unwrap();
    assert_eq!(back, fit);
    assert_eq!(back.values(&data).unwrap(), fit.values(&data).unwrap());
}

#[test]
fn spline_term_extrapolates_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let records = (0..400)
        .map(|i| {
            let x: f64 = rng.random_range(0.0..10.0);
            let y = sample_zinb(0.7, (0.2 + 0.1 * x).exp(), 1.0, &mut rng);
            DecisionRecord { t: i + 1, available: true, arm: 0, rand_prob: None, covariates: vec![x], outcome: y }
        })
        .collect();
    let data = PanelDataset::new(vec![Participant { id: "s".into(), records }], vec!["x".into()], 1).unwrap();
    let cfg = NuisanceConfig { terms: terms(&["x"]), ..NuisanceConfig::default() };
    let (ts, fit) = fit_hurdle_mean(&data, 0, &cfg).unwrap();
    let hi = ts.raw(&data).unwrap();
    let top = (0..hi.nrows()).map(|r| hi.get(r, 0)).fold(f64::MIN, f64::max);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    ts.encode_into(&[top], &mut a);
    ts.encode_into(&[top + 50.0], &mut b);
    assert_eq!(fit.predict(&a), fit.predict(&b));
    assert!(fit.predict(&b).is_finite());
}
