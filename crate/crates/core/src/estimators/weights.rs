//! Scalar building blocks shared by the estimating functions.

/// U = y·exp(−effect), with `effect` = A_t·S_tᵀβ (or A_t·f(H_t)ᵀφ).
pub fn blip_down(y: f64, arm_effect: f64) -> f64 {
    if arm_effect == 0.0 {
        y
    } else {
        y * (-arm_effect).exp()
    }
}

/// Change-of-randomization weight for a binary treatment.
pub fn weight_w(p_tilde: f64, p: f64, treated: bool) -> f64 {
    if treated {
        p_tilde / p
    } else {
        (1.0 - p_tilde) / (1.0 - p)
    }
}

/// Multi-arm weight; `arm` = 0 is no treatment.
pub fn weight_w_multi(p_tilde: &[f64], p: &[f64], arm: usize) -> f64 {
    if arm == 0 {
        let pt: f64 = p_tilde.iter().sum();
        let pp: f64 = p.iter().sum();
        (1.0 - pt) / (1.0 - pp)
    } else {
        p_tilde[arm - 1] / p[arm - 1]
    }
}

/// K̃ = −e^effect / (e^effect·p + 1 − p), written so that K̃ is exactly −1
/// at zero effect.
pub fn weight_ktilde(effect: f64, p: f64) -> f64 {
    let e = effect.exp();
    -e / (1.0 + p * (e - 1.0))
}

/// h = μ1·e^{−effect}·p̃ + μ0·(1 − p̃).
pub fn h_marginal(mu1: f64, mu0: f64, p_tilde: f64, s_effect: f64) -> f64 {
    mu1 * (-s_effect).exp() * p_tilde + mu0 * (1.0 - p_tilde)
}

/// Multi-arm h: μ0·(1 − Σp̃) + Σ_k μ_k·e^{−effect_k}·p̃_k.
/// `mu` has K+1 entries (arm 0 first).
pub fn h_multi(mu: &[f64], p_tilde: &[f64], effects: &[f64]) -> f64 {
    let pt: f64 = p_tilde.iter().sum();
    let mut h = mu[0] * (1.0 - pt);
    for k in 0..p_tilde.len() {
        h += mu[k + 1] * (-effects[k]).exp() * p_tilde[k];
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn blip_examples() {
        assert_eq!(blip_down(5.0, 0.0), 5.0);
        assert_relative_eq!(blip_down(3.0, 3f64.ln()), 1.0, epsilon = 1e-15);
        assert_relative_eq!(blip_down(2.0, 0.46), 1.262_567_291_013_852, epsilon = 1e-14);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weight_w(0.5, 0.5, true), 1.0);
        assert_eq!(weight_w(0.5, 0.5, false), 1.0);
        assert_relative_eq!(weight_w(0.4, 0.8, true), 0.5);
        assert_relative_eq!(weight_w(0.4, 0.8, false), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn ktilde_examples() {
        assert_eq!(weight_ktilde(0.0, 0.3), -1.0);
        assert_relative_eq!(weight_ktilde(2f64.ln(), 0.5), -4.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(weight_ktilde(1.7, 1.0), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn h_examples() {
        assert_eq!(h_marginal(1.3, 1.3, 0.4, 0.0), 1.3);
        assert_relative_eq!(h_marginal(2.0, 1.0, 0.3, 2f64.ln()), 1.0, epsilon = 1e-15);
        assert_eq!(h_marginal(2.0, 1.0, 0.0, 0.2), 1.0);
    }

    proptest! {
        #[test]
        fn weight_is_one_at_equal_probabilities(p in 0.01f64..0.99, treated: bool) {
            prop_assert_eq!(weight_w(p, p, treated), 1.0);
        }

        #[test]
        fn ktilde_negative(e in -5.0f64..5.0, p in 0.01f64..0.99) {
            prop_assert!(weight_ktilde(e, p) < 0.0);
        }

        #[test]
        fn h_is_between_blipped_means(mu1 in 0.0f64..10.0, mu0 in 0.0f64..10.0, p in 0.0f64..1.0, e in -2.0f64..2.0) {
            let h = h_marginal(mu1, mu0, p, e);
            let a = mu1 * (-e).exp();
            prop_assert!(h >= a.min(mu0) - 1e-12 && h <= a.max(mu0) + 1e-12);
        }

        #[test]
        fn single_arm_forms_agree(p in 0.01f64..0.99, pt in 0.01f64..0.99, arm in 0usize..2, mu0 in 0.0f64..5.0, mu1 in 0.0f64..5.0, e in -2.0f64..2.0) {
            prop_assert_eq!(weight_w_multi(&[pt], &[p], arm), weight_w(pt, p, arm == 1));
            prop_assert_eq!(h_multi(&[mu0, mu1], &[pt], &[e]), h_marginal(mu1, mu0, pt, e));
        }
    }
}
