use super::generate::{nb_mean, pi};
use super::{sample_zinb, ScenarioId};
use crate::estimators::EstimandKind;
use crate::par::{map_indexed, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (1/3)·Σ_z π(z, a)·μ(z, a): the marginal mean outcome under forced arm a.
fn marginal_mean(s: ScenarioId, arm: usize) -> f64 {
    (0..3u8).map(|z| pi(z, arm) * nb_mean(s, z, arm)).sum::<f64>() / 3.0
}

/// Ground-truth effects of the generating model.
///
/// Marginal: one log ratio per active arm. Conditional: the (intercept, Z)
/// coefficients of the log ratio, stacked arm by arm.
pub fn true_effect(scenario: ScenarioId, estimand: EstimandKind) -> Vec<f64> {
    let arms = 1..=scenario.k_arms();
    match estimand {
        EstimandKind::Marginal => {
            let base = marginal_mean(scenario, 0);
            arms.map(|a| (marginal_mean(scenario, a) / base).ln()).collect()
        }
        EstimandKind::Conditional => arms
            .flat_map(|a| {
                let lr = |z: u8| (pi(z, a) * nb_mean(scenario, z, a) / (pi(z, 0) * nb_mean(scenario, z, 0))).ln();
                let b0 = lr(0);
                [b0, lr(1) - b0]
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEffect {
    pub estimate: Vec<f64>,
    /// Delta-method standard errors of the log ratios.
    pub se: Vec<f64>,
    pub draws: usize,
}

const CHUNK: usize = 1 << 16;

/// Simulates (Z, A, Y) under each forced arm, `draws` triples in total split
/// evenly over the arms, and returns log ratios of the arm means against arm 0.
pub fn true_effect_monte_carlo(scenario: ScenarioId, draws: usize, seed: u64, exec: Execution) -> MonteCarloEffect {
    let k = scenario.k_arms();
    let per_arm = draws / (k + 1);
    let chunks = per_arm.div_ceil(CHUNK);
    // (sum, sum of squares) per arm
    let moments: Vec<[f64; 2]> = (0..=k)
        .map(|arm| {
            let parts = map_indexed(exec, chunks, |c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((arm * chunks + c) as u64);
                let len = CHUNK.min(per_arm - c * CHUNK);
                let (mut s, mut ss) = (0.0, 0.0);
                for _ in 0..len {
                    let z: u8 = rng.random_range(0..3);
                    let y = sample_zinb(pi(z, arm), nb_mean(scenario, z, arm), 1.0, &mut rng) as f64;
                    s += y;
                    ss += y * y;
                }
                [s, ss]
            });
            parts.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]])
        })
        .collect();
    let n = per_arm as f64;
    let stats: Vec<(f64, f64)> = moments
        .iter()
        .map(|m| {
            let mean = m[0] / n;
            let var = (m[1] - n * mean * mean) / (n - 1.0);
            (mean, var / (n * mean * mean))
        })
        .collect();
    let (m0, rv0) = stats[0];
    let estimate = stats[1..].iter().map(|(m, _)| (m / m0).ln()).collect();
    let se = stats[1..].iter().map(|(_, rv)| (rv + rv0).sqrt()).collect();
    MonteCarloEffect { estimate, se, draws: per_arm * (k + 1) }
}
