use super::solver::Solution;
use super::{EstimandSpec, Problem};
use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub estimand: String,
    pub parameters: Vec<ParameterEstimate>,
    /// Sandwich covariance of the effect parameters.
    pub covariance: Vec<Vec<f64>>,
    /// Working-model coefficients α of the parametric estimators.
    pub controls: Vec<(String, f64)>,
    pub critical_value: f64,
    pub iterations: usize,
    pub score_norm: f64,
    pub solver_start: usize,
    pub nuisance_mode: String,
    pub meat: String,
    pub working_correlation: Option<f64>,
    pub n_participants: usize,
    pub n_records: usize,
    pub n_available: usize,
    /// All available outcomes were zero: estimates are 0 with infinite SE.
    pub degenerate: bool,
}

fn effect_names(problem: &Problem) -> Vec<String> {
    let d = &problem.design;
    if d.k_arms == 1 {
        return d.moderator_names.clone();
    }
    (1..=d.k_arms).flat_map(|k| d.moderator_names.iter().map(move |m| format!("arm{k}:{m}"))).collect()
}

fn critical(spec: &EstimandSpec, df: f64) -> (f64, Option<StudentsT>) {
    if spec.t_critical && df >= 1.0 {
        let t = StudentsT::new(0.0, 1.0, df).expect("valid t");
        (t.inverse_cdf(0.975), Some(t))
    } else {
        (Normal::standard().inverse_cdf(0.975), None)
    }
}

impl EstimateReport {
    fn header(spec: &EstimandSpec, problem: &Problem, mode: String) -> Self {
        let d = &problem.design;
        Self {
            estimator: spec.estimator.to_string(),
            estimand: spec.kind.to_string(),
            parameters: vec![],
            covariance: vec![],
            controls: vec![],
            critical_value: f64::NAN,
            iterations: 0,
            score_norm: 0.0,
            solver_start: 0,
            nuisance_mode: mode,
            meat: format!("{:?}", if spec.estimator.is_gee() { super::MeatKind::Cluster } else { spec.meat }).to_lowercase(),
            working_correlation: None,
            n_participants: d.n_participants(),
            n_records: d.n_records(),
            n_available: d.n_available(),
            degenerate: false,
        }
    }

    pub(crate) fn degenerate(spec: &EstimandSpec, problem: &Problem, mode: String) -> Self {
        let mut r = Self::header(spec, problem, mode);
        let names = effect_names(problem);
        let m = names.len();
        r.critical_value = critical(spec, (r.n_available as f64) - problem.dim() as f64).0;
        r.parameters = names
            .into_iter()
            .map(|name| ParameterEstimate {
                name,
                estimate: 0.0,
                se: f64::INFINITY,
                ci_lower: f64::NEG_INFINITY,
                ci_upper: f64::INFINITY,
                p_value: 1.0,
            })
            .collect();
        r.covariance = (0..m).map(|i| (0..m).map(|j| if i == j { f64::INFINITY } else { 0.0 }).collect()).collect();
        r.degenerate = true;
        r
    }

    pub(crate) fn build(spec: &EstimandSpec, problem: &Problem, sol: &Solution, cov: &DMatrix<f64>, mode: String, rho: Option<f64>) -> Self {
        let mut r = Self::header(spec, problem, mode);
        let q = problem.n_controls();
        let names = effect_names(problem);
        let df = r.n_available as f64 - problem.dim() as f64;
        let (crit, t) = critical(spec, df);
        let normal = Normal::standard();
        r.critical_value = crit;
        r.parameters = names
            .into_iter()
            .enumerate()
            .map(|(j, name)| {
                let est = sol.theta[q + j];
                let se = cov[(q + j, q + j)].max(0.0).sqrt();
                let z = est / se;
                let tail = match &t {
                    Some(t) => 1.0 - t.cdf(z.abs()),
                    None => 1.0 - normal.cdf(z.abs()),
                };
                ParameterEstimate { name, estimate: est, se, ci_lower: est - crit * se, ci_upper: est + crit * se, p_value: 2.0 * tail }
            })
            .collect();
        let m = r.parameters.len();
        r.covariance = (0..m).map(|a| (0..m).map(|b| cov[(q + a, q + b)]).collect()).collect();
        r.controls = problem.design.control_names.iter().take(q).cloned().zip(sol.theta[..q].iter().copied()).collect();
        r.iterations = sol.iterations;
        r.score_norm = sol.score_norm;
        r.solver_start = sol.start;
        r.working_correlation = rho;
        r
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.estimate).collect()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.se).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned table with columns Estimate, SE, 95% CI, p-Value.
    pub fn to_table(&self) -> String {
        let rows: Vec<[String; 5]> = self
            .parameters
            .iter()
            .map(|p| {
                [
                    p.name.clone(),
                    format!("{:.3}", p.estimate),
                    format!("{:.3}", p.se),
                    format!("({:.3}, {:.3})", p.ci_lower, p.ci_upper),
                    format!("{:.3}", p.p_value),
                ]
            })
            .collect();
        let head = ["Parameter", "Estimate", "SE", "95% CI", "p-Value"];
        let mut width: Vec<usize> = head.iter().map(|h| h.len()).collect();
        for row in &rows {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "{} ({} effect)", self.estimator, self.estimand);
        let line = |cells: &[&str]| -> String {
            let mut s = format!("{:<w$}", cells[0], w = width[0]);
            for (c, w) in cells[1..].iter().zip(&width[1..]) {
                let _ = write!(s, "  {c:>w$}");
            }
            s
        };
        let _ = writeln!(out, "{}", line(&head));
        for row in &rows {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            let _ = writeln!(out, "{}", line(&cells));
        }
        out
    }
}
