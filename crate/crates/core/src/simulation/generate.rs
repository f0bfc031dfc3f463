use super::thompson::{thompson_probability, TsState};
use super::{expit, sample_zinb, ScenarioConfig, ScenarioId};
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceValues, PropensityMode};
use crate::panel::{DecisionRecord, PanelDataset, Participant, RowMatrix};
use rand::Rng;

const BASE: [f64; 3] = [2.2, 2.5, 2.4];

/// P(O = 1 | Z, A).
pub(crate) fn pi(z: u8, arm: usize) -> f64 {
    let zf = f64::from(z);
    let treated = f64::from(u8::from(arm != 0));
    (-0.4 * (zf + 0.1) + 0.1 * zf * treated).exp()
}

/// NB mean of the nonzero part given (Z, A).
pub(crate) fn nb_mean(s: ScenarioId, z: u8, arm: usize) -> f64 {
    let zf = f64::from(z);
    let a1 = f64::from(u8::from(arm == 1));
    let a2 = f64::from(u8::from(arm == 2));
    match s {
        ScenarioId::S1 | ScenarioId::S3 => BASE[z as usize] * (a1 * (0.1 + 0.3 * zf)).exp(),
        ScenarioId::S2 => (0.2 + 0.5 * zf + a1 * (0.1 + 0.3 * zf)).exp(),
        ScenarioId::S4 => BASE[z as usize] * (a1 * (0.1 + 0.3 * zf) + a2 * (0.1 + 0.1 * zf)).exp(),
    }
}

/// Per-arm randomization probabilities for the expit designs; the previous
/// decision counts as treated for any active arm (A_0 = 0).
pub(crate) fn design_probs(s: ScenarioId, z: u8, prev_arm: usize) -> Vec<f64> {
    let base = expit(-0.5 * f64::from(u8::from(prev_arm != 0)) + 0.5 * f64::from(z));
    match s {
        ScenarioId::S4 => vec![0.5 * base, 0.5 * base],
        _ => vec![base],
    }
}

fn draw_arm<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k + 1;
        }
    }
    0
}

/// Counters from the Thompson-sampling randomizer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GenDiagnostics {
    /// Decision points where the MLE was unavailable and p fell back to 0.5.
    pub ts_fallbacks: usize,
    pub min_prob: f64,
    pub max_prob: f64,
}

/// Generates one synthetic panel. Availability is always 1; Z_t is uniform on
/// {0, 1, 2}; outcomes are zero-inflated negative binomial.
pub fn gen_scenario<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<(PanelDataset, GenDiagnostics)> {
    config.validate()?;
    let s = config.scenario;
    let n = config.n;
    let width = n.to_string().len();
    let mut records: Vec<Vec<DecisionRecord>> = vec![Vec::with_capacity(config.t as usize); n];
    let mut prev = vec![0usize; n];
    // one bandit per participant, learning from that participant's history only
    let mut ts = vec![TsState::default(); n];
    let mut diag = GenDiagnostics { ts_fallbacks: 0, min_prob: 1.0, max_prob: 0.0 };
    for t in 1..=config.t {
        for i in 0..n {
            let fit = (s == ScenarioId::S3 && t > config.ts_t0).then(|| ts[i].fit());
            let z: u8 = rng.random_range(0..3);
            let probs = match (s, &fit) {
                (ScenarioId::S3, None) => vec![0.5],
                (ScenarioId::S3, Some(None)) => {
                    diag.ts_fallbacks += 1;
                    vec![0.5]
                }
                (ScenarioId::S3, Some(Some(f))) => vec![thompson_probability(&f.beta, &f.info_inv, z, config.ts_alpha)],
                _ => design_probs(s, z, prev[i]),
            };
            for p in &probs {
                diag.min_prob = diag.min_prob.min(*p);
                diag.max_prob = diag.max_prob.max(*p);
            }
            let arm = draw_arm(&probs, rng);
            let y = sample_zinb(pi(z, arm), nb_mean(s, z, arm), config.dispersion, rng);
            if s == ScenarioId::S3 {
                ts[i].record(z, u8::from(arm != 0), y);
            }
            prev[i] = arm;
            records[i].push(DecisionRecord {
                t,
                available: true,
                arm,
                rand_prob: (s != ScenarioId::S2).then_some(probs),
                covariates: vec![f64::from(z)],
                outcome: y,
            });
        }
    }
    if diag.ts_fallbacks > 0 {
        log::warn!("Thompson sampling fell back to p = 0.5 at {} decision points", diag.ts_fallbacks);
    }
    let participants = records
        .into_iter()
        .enumerate()
        .map(|(i, recs)| Participant { id: format!("p{:0width$}", i + 1), records: recs })
        .collect();
    let data = PanelDataset::new(participants, vec!["Z".into()], s.k_arms())?;
    Ok((data, diag))
}

/// Exact nuisance functions of the generating model: μ_a(Z) = π(Z, a)·μ(Z, a)
/// and the true randomization probabilities.
pub fn oracle_nuisance(data: &PanelDataset, scenario: ScenarioId) -> Result<NuisanceValues> {
    let zi = data.covariate_index("Z").ok_or_else(|| Error::MissingColumn("Z".into()))?;
    let k = data.k_arms();
    let n = data.n_records();
    let mut mu = RowMatrix::zeros(n, k + 1);
    let mut prob = RowMatrix::zeros(n, k);
    let mut row = 0;
    for p in data.participants() {
        let mut prev = 0;
        for r in &p.records {
            let z = r.covariates[zi] as u8;
            for a in 0..=k {
                mu.row_mut(row)[a] = pi(z, a) * nb_mean(scenario, z, a);
            }
            let pr = match (&r.rand_prob, scenario) {
                (Some(v), ScenarioId::S3) => v.clone(),
                _ => design_probs(scenario, z, prev),
            };
            prob.row_mut(row).copy_from_slice(&pr);
            prev = r.arm;
            row += 1;
        }
    }
    Ok(NuisanceValues { mu: Some(mu), prob, mode: PropensityMode::Known })
}

/// Binary MRT whose log-ratio effect decays linearly in
/// `days_since_download` = t − 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayConfig {
    pub n: usize,
    pub t: u32,
    pub intercept: f64,
    pub slope: f64,
    pub prob: f64,
    pub pi: f64,
    pub base_mean: f64,
    pub dispersion: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self { n: 300, t: 30, intercept: 0.4, slope: -0.03, prob: 0.5, pi: 0.6, base_mean: 2.0, dispersion: 1.0 }
    }
}

pub fn gen_decay<R: Rng + ?Sized>(config: &DecayConfig, rng: &mut R) -> Result<PanelDataset> {
    if config.n == 0 || config.t == 0 || !(config.prob > 0.0 && config.prob < 1.0) {
        return Err(Error::InvalidConfig("invalid decay configuration".into()));
    }
    let width = config.n.to_string().len();
    let participants = (0..config.n)
        .map(|i| {
            let records = (1..=config.t)
                .map(|t| {
                    let d = f64::from(t - 1);
                    let arm = usize::from(rng.random_bool(config.prob));
                    let effect = arm as f64 * (config.intercept + config.slope * d);
                    let y = sample_zinb(config.pi, config.base_mean * effect.exp(), config.dispersion, rng);
                    DecisionRecord { t, available: true, arm, rand_prob: Some(vec![config.prob]), covariates: vec![d], outcome: y }
                })
                .collect();
            Participant { id: format!("u{:0width$}", i + 1), records }
        })
        .collect();
    PanelDataset::new(participants, vec!["days_since_download".into()], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(s: ScenarioId, n: usize, t: u32, seed: u64) -> (PanelDataset, GenDiagnostics) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gen_scenario(&ScenarioConfig::new(s, n, t, seed), &mut rng).unwrap()
    }

    #[test]
    fn scenario1_propensity_cell() {
        let (d, _) = data(ScenarioId::S1, 2000, 30, 11);
        let (mut hit, mut tot) = (0.0, 0.0);
        for p in d.participants() {
            for w in p.records.windows(2) {
                if w[1].covariates[0] == 2.0 && w[0].arm == 0 {
                    tot += 1.0;
                    hit += w[1].arm as f64;
                }
            }
        }
        assert!((hit / tot - expit(1.0)).abs() < 0.01, "{}", hit / tot);
    }

    #[test]
    fn scenario1_untreated_z0_mean() {
        let (d, _) = data(ScenarioId::S1, 2000, 300, 12);
        let cell: Vec<f64> = d.records().filter(|r| r.covariates[0] == 0.0 && r.arm == 0).map(|r| r.outcome as f64).collect();
        assert!(cell.len() >= 100_000, "{}", cell.len());
        let m = cell.iter().sum::<f64>() / cell.len() as f64;
        assert!((m - (-0.04f64).exp() * 2.2).abs() < 0.02, "{m}");
    }

    #[test]
    fn scenario3_probabilities_clipped_and_warmup_exact() {
        let (d, diag) = data(ScenarioId::S3, 50, 60, 13);
        let (mut halves, mut adaptive) = (0, 0);
        for p in d.participants() {
            for r in &p.records {
                let pr = r.rand_prob.as_ref().unwrap()[0];
                assert!((0.05..=0.95).contains(&pr));
                if r.t <= 20 {
                    assert_eq!(pr, 0.5);
                } else if pr == 0.5 {
                    halves += 1;
                } else {
                    adaptive += 1;
                }
            }
        }
        // a failed per-participant fit falls back to 0.5
        assert!(diag.ts_fallbacks <= halves);
        assert!(diag.ts_fallbacks < adaptive / 10, "{} fallbacks", diag.ts_fallbacks);
    }

    #[test]
    fn scenario2_withholds_probabilities() {
        let (d, _) = data(ScenarioId::S2, 5, 10, 14);
        assert!(!d.has_rand_prob());
        assert!(data(ScenarioId::S4, 5, 10, 14).0.has_rand_prob());
    }

    #[test]
    fn scenario4_assignment_frequencies() {
        let (d, _) = data(ScenarioId::S4, 1000, 100, 15);
        // cells (Z, A_lag treated)
        let mut count = [[[0.0f64; 3]; 2]; 3];
        for p in d.participants() {
            let mut prev = 0;
            for r in &p.records {
                let z = r.covariates[0] as usize;
                count[z][usize::from(prev != 0)][r.arm] += 1.0;
                prev = r.arm;
            }
        }
        for z in 0..3 {
            for lag in 0..2 {
                let tot: f64 = count[z][lag].iter().sum();
                let want = 0.5 * expit(-0.5 * lag as f64 + 0.5 * z as f64);
                for arm in 1..=2 {
                    let got = count[z][lag][arm] / tot;
                    let se = (want * (1.0 - want) / tot).sqrt();
                    assert!((got - want).abs() < 3.0 * se, "z={z} lag={lag} arm={arm}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn identical_seed_identical_data() {
        assert_eq!(data(ScenarioId::S3, 10, 30, 4).0, data(ScenarioId::S3, 10, 30, 4).0);
    }
}
