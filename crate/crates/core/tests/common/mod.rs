#![allow(dead_code)]

use excursion_core::estimators::{EstimandKind, EstimandSpec, EstimatorKind, ReferenceProb};
use excursion_core::nuisance::{NuisanceValues, PropensityMode};
use excursion_core::panel::{DecisionRecord, Participant, RowMatrix};
use excursion_core::simulation::gen_scenario;
use excursion_core::{EffectModelSpec, PanelDataset, ScenarioConfig, ScenarioId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn scenario(s: ScenarioId, n: usize, t: u32, seed: u64) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_scenario(&ScenarioConfig::new(s, n, t, seed), &mut rng).unwrap().0
}

pub fn marginal() -> EffectModelSpec {
    EffectModelSpec::new(["1"], ["1", "Z"])
}

pub fn conditional() -> EffectModelSpec {
    EffectModelSpec::new(["1", "Z"], ["1", "Z"])
}

pub fn spec(est: EstimatorKind, model: EffectModelSpec, kind: EstimandKind) -> EstimandSpec {
    let mut s = EstimandSpec::new(est, model);
    s.kind = kind;
    s
}

/// One participant with records (arm, outcome, p) and no covariates.
pub fn tiny(records: &[(usize, u64, f64)]) -> PanelDataset {
    let recs = records
        .iter()
        .enumerate()
        .map(|(i, &(arm, y, p))| DecisionRecord {
            t: i as u32 + 1,
            available: true,
            arm,
            rand_prob: Some(vec![p]),
            covariates: vec![],
            outcome: y,
        })
        .collect();
    PanelDataset::new(vec![Participant { id: "a".into(), records: recs }], vec![], 1).unwrap()
}

/// Constant nuisance rows.
pub fn constant_values(n: usize, mu: &[f64], prob: &[f64]) -> NuisanceValues {
    let mut m = RowMatrix::zeros(n, mu.len());
    let mut p = RowMatrix::zeros(n, prob.len());
    for r in 0..n {
        m.row_mut(r).copy_from_slice(mu);
        p.row_mut(r).copy_from_slice(prob);
    }
    NuisanceValues { mu: Some(m), prob: p, mode: PropensityMode::Known }
}

pub fn half() -> ReferenceProb {
    ReferenceProb::Constant(vec![0.5])
}
