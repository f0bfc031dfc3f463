//! Estimating functions, evaluated record by record.
//!
//! Every score writes the contribution m_{i,t}(θ) of each record of one
//! participant; unavailable records always contribute exactly zero. The
//! averaged score and the sandwich meat are built from these terms.

use super::weights::{blip_down, h_marginal, h_multi, weight_ktilde, weight_w, weight_w_multi};
use crate::panel::{DesignBundle, RowMatrix};

/// Per-record estimating function over a design.
pub trait Score: Sync {
    fn dim(&self) -> usize;

    /// Fills `out` (records × dim, row-major) with participant `i`'s terms.
    fn participant_terms(&self, i: usize, theta: &[f64], out: &mut [f64]);
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inputs shared by the semiparametric scores.
#[derive(Clone, Copy)]
pub struct ScoreData<'a> {
    pub design: &'a DesignBundle,
    /// p_{t,k}: known or fitted randomization probabilities (N × K).
    pub prob: &'a RowMatrix,
    /// p̃_{t,k}(S_t) (N × K).
    pub ref_prob: &'a RowMatrix,
    /// μ̂_0..μ̂_K (N × (K+1)), when fitted.
    pub mu: Option<&'a RowMatrix>,
}

impl ScoreData<'_> {
    fn rows(&self, i: usize) -> std::ops::Range<usize> {
        self.design.offsets[i]..self.design.offsets[i + 1]
    }

    fn arm_effects(&self, r: usize, theta: &[f64], out: &mut [f64]) {
        let s = self.design.moderators.row(r);
        let p = s.len();
        for (k, e) in out.iter_mut().enumerate() {
            *e = dot(s, &theta[k * p..(k + 1) * p]);
        }
    }
}

/// Two-arm EMEE-NonP record term: I·W·(U − h)·(A − p̃)·S.
#[allow(clippy::too_many_arguments)]
pub fn emee_nonp_record_binary(y: f64, treated: bool, s: &[f64], beta: &[f64], mu0: f64, mu1: f64, p_tilde: f64, p: f64, out: &mut [f64]) {
    let eff = dot(s, beta);
    let u = if treated { blip_down(y, eff) } else { blip_down(y, 0.0) };
    let h = h_marginal(mu1, mu0, p_tilde, eff);
    let w = weight_w(p_tilde, p, treated);
    let r = w * (u - h) * (f64::from(u8::from(treated)) - p_tilde);
    for (o, v) in out.iter_mut().zip(s) {
        *o = r * v;
    }
}

/// EMEE-NonP for any number of arms; θ = (β_1; …; β_K).
pub struct EmeeNonP<'a> {
    pub data: ScoreData<'a>,
}

impl Score for EmeeNonP<'_> {
    fn dim(&self) -> usize {
        self.data.design.p() * self.data.design.k_arms
    }

    fn participant_terms(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let d = self.data.design;
        let mu = self.data.mu.expect("EMEE-NonP requires outcome means");
        let (p, k) = (d.p(), d.k_arms);
        let mut eff = vec![0.0; k];
        for (j, r) in self.data.rows(i).enumerate() {
            let o = &mut out[j * p * k..(j + 1) * p * k];
            if !d.available[r] {
                o.fill(0.0);
                continue;
            }
            self.data.arm_effects(r, theta, &mut eff);
            let a = d.arm[r];
            let u = if a == 0 { blip_down(d.outcome[r], 0.0) } else { blip_down(d.outcome[r], eff[a - 1]) };
            let pt = self.data.ref_prob.row(r);
            let h = h_multi(mu.row(r), pt, &eff);
            let w = weight_w_multi(pt, self.data.prob.row(r), a);
            let resid = w * (u - h);
            let s = d.moderators.row(r);
            for kk in 0..k {
                let c = resid * (d.dummy(r, kk + 1) - pt[kk]);
                for (x, v) in o[kk * p..(kk + 1) * p].iter_mut().zip(s) {
                    *x = c * v;
                }
            }
        }
    }
}

/// DR-EMEE-NonP: I·W·[U − μ_A e^{−A Sᵀβ}](A − p̃)S plus the augmentation
/// I·p̃(1 − p̃)[μ1 e^{−Sᵀβ} − μ0]S (generalized to p̃_k(m_k − h) for K ≥ 2).
pub struct DrEmeeNonP<'a> {
    pub data: ScoreData<'a>,
}

impl Score for DrEmeeNonP<'_> {
    fn dim(&self) -> usize {
        self.data.design.p() * self.data.design.k_arms
    }

    fn participant_terms(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let d = self.data.design;
        let mu = self.data.mu.expect("DR-EMEE-NonP requires outcome means");
        let (p, k) = (d.p(), d.k_arms);
        let mut eff = vec![0.0; k];
        let mut m = vec![0.0; k];
        for (j, r) in self.data.rows(i).enumerate() {
            let o = &mut out[j * p * k..(j + 1) * p * k];
            if !d.available[r] {
                o.fill(0.0);
                continue;
            }
            self.data.arm_effects(r, theta, &mut eff);
            let a = d.arm[r];
            let mur = mu.row(r);
            let pt = self.data.ref_prob.row(r);
            let (u, fitted) = if a == 0 {
                (d.outcome[r], mur[0])
            } else {
                (blip_down(d.outcome[r], eff[a - 1]), blip_down(mur[a], eff[a - 1]))
            };
            let w = weight_w_multi(pt, self.data.prob.row(r), a);
            let resid = w * (u - fitted);
            for kk in 0..k {
                m[kk] = blip_down(mur[kk + 1], eff[kk]);
            }
            let s = d.moderators.row(r);
            for kk in 0..k {
                let aug = if k == 1 {
                    pt[0] * (1.0 - pt[0]) * (m[0] - mur[0])
                } else {
                    pt[kk] * (m[kk] - h_multi(mur, pt, &eff))
                };
                let c = resid * (d.dummy(r, kk + 1) - pt[kk]) + aug;
                for (x, v) in o[kk * p..(kk + 1) * p].iter_mut().zip(s) {
                    *x = c * v;
                }
            }
        }
    }
}

/// ECE-NonP (binary treatment): I·K̃·(U − h)(A − p)f with h built from p.
pub struct EceNonP<'a> {
    pub data: ScoreData<'a>,
    /// Include the K̃ premultiplier (the default); off only for identity checks.
    pub ktilde: bool,
}

impl Score for EceNonP<'_> {
    fn dim(&self) -> usize {
        self.data.design.p()
    }

    fn participant_terms(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let d = self.data.design;
        let mu = self.data.mu.expect("ECE-NonP requires outcome means");
        let p = d.p();
        for (j, r) in self.data.rows(i).enumerate() {
            let o = &mut out[j * p..(j + 1) * p];
            if !d.available[r] {
                o.fill(0.0);
                continue;
            }
            let f = d.moderators.row(r);
            let eff = dot(f, theta);
            let treated = d.arm[r] == 1;
            let pr = self.data.prob.get(r, 0);
            let u = if treated { blip_down(d.outcome[r], eff) } else { d.outcome[r] };
            let h = h_marginal(mu.get(r, 1), mu.get(r, 0), pr, eff);
            let kt = if self.ktilde { weight_ktilde(eff, pr) } else { 1.0 };
            let c = kt * (u - h) * (f64::from(u8::from(treated)) - pr);
            for (x, v) in o.iter_mut().zip(f) {
                *x = c * v;
            }
        }
    }
}

/// Parametric EMEE: θ = (α; β_1; …; β_K),
/// I·e^{−A Sᵀβ}[Y − e^{gᵀα + A Sᵀβ}]·W·[g; (A_k − p̃_k)S].
pub struct Emee<'a> {
    pub data: ScoreData<'a>,
}

impl Score for Emee<'_> {
    fn dim(&self) -> usize {
        let d = self.data.design;
        d.q() + d.p() * d.k_arms
    }

    fn participant_terms(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let d = self.data.design;
        let (p, q, k) = (d.p(), d.q(), d.k_arms);
        let dim = self.dim();
        let (alpha, beta) = theta.split_at(q);
        let mut eff = vec![0.0; k];
        for (j, r) in self.data.rows(i).enumerate() {
            let o = &mut out[j * dim..(j + 1) * dim];
            if !d.available[r] {
                o.fill(0.0);
                continue;
            }
            self.data.arm_effects(r, beta, &mut eff);
            let a = d.arm[r];
            let ae = if a == 0 { 0.0 } else { eff[a - 1] };
            let g = d.controls.row(r);
            let pt = self.data.ref_prob.row(r);
            let w = weight_w_multi(pt, self.data.prob.row(r), a);
            let resid = (-ae).exp() * (d.outcome[r] - (dot(g, alpha) + ae).exp()) * w;
            for (x, v) in o[..q].iter_mut().zip(g) {
                *x = resid * v;
            }
            let s = d.moderators.row(r);
            for kk in 0..k {
                let c = resid * (d.dummy(r, kk + 1) - pt[kk]);
                for (x, v) in o[q + kk * p..q + (kk + 1) * p].iter_mut().zip(s) {
                    *x = c * v;
                }
            }
        }
    }
}

/// Parametric ECE (binary treatment): θ = (α; φ),
/// I·e^{−A fᵀφ}[Y − e^{gᵀα + A fᵀφ}]·K̃·[g; (A − p)f].
pub struct Ece<'a> {
    pub data: ScoreData<'a>,
}

impl Score for Ece<'_> {
    fn dim(&self) -> usize {
        self.data.design.q() + self.data.design.p()
    }

    fn participant_terms(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let d = self.data.design;
        let q = d.q();
        let dim = self.dim();
        let (alpha, phi) = theta.split_at(q);
        for (j, r) in self.data.rows(i).enumerate() {
            let o = &mut out[j * dim..(j + 1) * dim];
            if !d.available[r] {
                o.fill(0.0);
                continue;
            }
            let f = d.moderators.row(r);
            let g = d.controls.row(r);
            let eff = dot(f, phi);
            let a = f64::from(u8::from(d.arm[r] == 1));
            let pr = self.data.prob.get(r, 0);
            let resid = (-a * eff).exp() * (d.outcome[r] - (dot(g, alpha) + a * eff).exp()) * weight_ktilde(eff, pr);
            for (x, v) in o[..q].iter_mut().zip(g) {
                *x = resid * v;
            }
            let c = resid * (a - pr);
            for (x, v) in o[q..].iter_mut().zip(f) {
                *x = c * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_record(arm: usize, y: f64) -> (DesignBundle, RowMatrix, RowMatrix, RowMatrix) {
        let design = DesignBundle {
            k_arms: 1,
            offsets: vec![0, 1],
            available: vec![true],
            arm: vec![arm],
            outcome: vec![y],
            moderators: RowMatrix::from_rows(&[vec![1.0]]),
            moderator_names: vec!["1".into()],
            controls: RowMatrix::from_rows(&[vec![1.0]]),
            control_names: vec!["1".into()],
            rand_prob: None,
        };
        let half = RowMatrix::from_rows(&[vec![0.5]]);
        let mu = RowMatrix::from_rows(&[vec![2.0, 4.0]]);
        (design, half.clone(), half, mu)
    }

    fn eval(score: &dyn Score, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; score.dim()];
        score.participant_terms(0, theta, &mut out);
        out
    }

    #[test]
    fn one_record_roots_at_ln2() {
        let (design, prob, ref_prob, mu) = one_record(1, 4.0);
        let data = ScoreData { design: &design, prob: &prob, ref_prob: &ref_prob, mu: Some(&mu) };
        let ln2 = 2f64.ln();
        assert!(eval(&EmeeNonP { data }, &[ln2])[0].abs() < 1e-15);
        assert!(eval(&DrEmeeNonP { data }, &[ln2])[0].abs() < 1e-15);
        assert!(eval(&EmeeNonP { data }, &[0.0])[0].abs() > 0.1);
        assert!(eval(&DrEmeeNonP { data }, &[0.0])[0].abs() > 0.1);
    }

    #[test]
    fn binary_and_general_forms_are_bit_identical() {
        for arm in [0, 1] {
            let (design, prob, ref_prob, mu) = one_record(arm, 3.0);
            let data = ScoreData { design: &design, prob: &prob, ref_prob: &ref_prob, mu: Some(&mu) };
            for beta in [-0.7, 0.0, 0.31] {
                let mut b = [0.0];
                emee_nonp_record_binary(3.0, arm == 1, &[1.0], &[beta], 2.0, 4.0, 0.5, 0.5, &mut b);
                assert_eq!(eval(&EmeeNonP { data }, &[beta])[0].to_bits(), b[0].to_bits());
            }
        }
    }

    #[test]
    fn unavailable_records_contribute_zero() {
        let (mut design, prob, ref_prob, mu) = one_record(0, 1e6);
        design.available[0] = false;
        let data = ScoreData { design: &design, prob: &prob, ref_prob: &ref_prob, mu: Some(&mu) };
        let scores: Vec<Box<dyn Score>> = vec![
            Box::new(EmeeNonP { data }),
            Box::new(DrEmeeNonP { data }),
            Box::new(EceNonP { data, ktilde: true }),
            Box::new(Emee { data }),
            Box::new(Ece { data }),
        ];
        for s in &scores {
            let theta = vec![0.3; s.dim()];
            assert!(eval(s.as_ref(), &theta).iter().all(|v| *v == 0.0));
        }
    }
}
