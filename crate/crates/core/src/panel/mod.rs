//! Longitudinal data model for MRT-style panels.
//!
//! A [`PanelDataset`] holds one [`DecisionRecord`] per (participant, decision
//! point). Participants are kept sorted by id and records by decision index,
//! so every downstream computation sees a canonical order regardless of how
//! the input rows were arranged.

mod design;
mod features;
mod io;

pub use design::{build_design, feature_matrix, DesignBundle, RowMatrix};
pub use features::{EffectModelSpec, FeatureExpr, LagInit};
pub use io::{load_panel, read_panel, write_panel, write_panel_to, PanelSchema};

use crate::error::{Error, Result};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    /// Decision index, 1-based.
    pub t: u32,
    pub available: bool,
    /// 0 = no treatment, k = k-th active treatment.
    pub arm: usize,
    /// Randomization probabilities of arms 1..=K, when known.
    pub rand_prob: Option<Vec<f64>>,
    /// Values aligned with [`PanelDataset::covariate_names`].
    pub covariates: Vec<f64>,
    pub outcome: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: String,
    pub records: Vec<DecisionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    participants: Vec<Participant>,
    covariate_names: Vec<String>,
    k_arms: usize,
}

impl PanelDataset {
    /// Validates and canonicalizes a panel.
    ///
    /// Participants are sorted by id and records by `t`. Error row numbers
    /// refer to the flattened input order (participant by participant).
    pub fn new(
        mut participants: Vec<Participant>,
        covariate_names: Vec<String>,
        k_arms: usize,
    ) -> Result<Self> {
        if k_arms == 0 {
            return Err(Error::InvalidConfig("number of active arms must be at least 1".into()));
        }
        let mut row = 0usize;
        for p in &participants {
            for r in &p.records {
                validate_record(r, row, k_arms, covariate_names.len())?;
                row += 1;
            }
        }
        participants.sort_by(|a, b| a.id.cmp(&b.id));
        for w in participants.windows(2) {
            if w[0].id == w[1].id {
                // merged ids indicate rows split across two groups
                return Err(Error::InvalidConfig(format!(
                    "participant `{}` appears in two separate groups",
                    w[0].id
                )));
            }
        }
        for p in &mut participants {
            p.records.sort_by_key(|r| r.t);
            for w in p.records.windows(2) {
                if w[0].t == w[1].t {
                    return Err(Error::DuplicateDecisionPoint { participant: p.id.clone(), t: w[0].t });
                }
            }
        }
        participants.retain(|p| !p.records.is_empty());
        Ok(Self { participants, covariate_names, k_arms })
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Participant count.
    pub fn n(&self) -> usize {
        self.participants.len()
    }

    pub fn t_max(&self) -> u32 {
        self.records().map(|r| r.t).max().unwrap_or(0)
    }

    pub fn k_arms(&self) -> usize {
        self.k_arms
    }

    pub fn n_records(&self) -> usize {
        self.participants.iter().map(|p| p.records.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &DecisionRecord> {
        self.participants.iter().flat_map(|p| p.records.iter())
    }

    /// True when every record carries randomization probabilities.
    pub fn has_rand_prob(&self) -> bool {
        self.n_records() > 0 && self.records().all(|r| r.rand_prob.is_some())
    }

    /// Returns a copy with the stored randomization probabilities removed,
    /// turning an MRT panel into an observational one.
    pub fn without_rand_prob(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.participants {
            for r in &mut p.records {
                r.rand_prob = None;
            }
        }
        out
    }

    /// Mutable access for in-place edits that preserve the structural
    /// invariants (ordering, uniqueness). Values are re-validated.
    pub fn map_records(&self, mut f: impl FnMut(&str, &mut DecisionRecord)) -> Result<Self> {
        let mut parts = self.participants.clone();
        for p in &mut parts {
            for r in &mut p.records {
                f(&p.id, r);
            }
        }
        Self::new(parts, self.covariate_names.clone(), self.k_arms)
    }
}

fn validate_record(r: &DecisionRecord, row: usize, k_arms: usize, n_cov: usize) -> Result<()> {
    if r.t == 0 {
        return Err(Error::InvalidRecord { row, message: "decision index must be >= 1".into() });
    }
    if r.arm > k_arms {
        return Err(Error::InvalidRecord {
            row,
            message: format!("arm {} exceeds the number of active arms {k_arms}", r.arm),
        });
    }
    if !r.available && r.arm != 0 {
        return Err(Error::InvalidRecord {
            row,
            message: "treatment recorded at an unavailable decision point".into(),
        });
    }
    if r.covariates.len() != n_cov {
        return Err(Error::InvalidRecord { row, message: "covariate count mismatch".into() });
    }
    if let Some(ps) = &r.rand_prob {
        if ps.len() != k_arms {
            return Err(Error::InvalidRecord {
                row,
                message: format!("expected {k_arms} randomization probabilities, found {}", ps.len()),
            });
        }
        for &p in ps {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::ProbabilityOutOfRange { row, value: p });
            }
        }
        let total: f64 = ps.iter().sum();
        if total >= 1.0 {
            return Err(Error::ProbabilityOutOfRange { row, value: total });
        }
    }
    Ok(())
}

/// Descriptive summary of a panel's outcome distribution.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PanelSummary {
    pub n: usize,
    pub t_max: u32,
    pub records: usize,
    pub availability_rate: f64,
    pub zero_proportion: f64,
    pub mean_outcome: f64,
    pub arms: Vec<ArmSummary>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ArmSummary {
    pub arm: usize,
    /// Available records assigned to this arm.
    pub count: usize,
    pub zero_proportion: f64,
    pub mean_outcome: f64,
}

/// Zero-outcome proportion and mean outcome per arm (available records only)
/// plus the availability rate.
pub fn summarize(data: &PanelDataset) -> Result<PanelSummary> {
    let total = data.n_records();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let k = data.k_arms();
    let mut count = vec![0usize; k + 1];
    let mut zeros = vec![0usize; k + 1];
    let mut sum = vec![0f64; k + 1];
    let mut available = 0usize;
    let mut all_zero = 0usize;
    let mut all_sum = 0f64;
    for r in data.records() {
        if r.outcome == 0 {
            all_zero += 1;
        }
        all_sum += r.outcome as f64;
        if !r.available {
            continue;
        }
        available += 1;
        count[r.arm] += 1;
        sum[r.arm] += r.outcome as f64;
        if r.outcome == 0 {
            zeros[r.arm] += 1;
        }
    }
    let arms = (0..=k)
        .map(|a| ArmSummary {
            arm: a,
            count: count[a],
            zero_proportion: if count[a] > 0 { zeros[a] as f64 / count[a] as f64 } else { 0.0 },
            mean_outcome: if count[a] > 0 { sum[a] / count[a] as f64 } else { 0.0 },
        })
        .collect();
    Ok(PanelSummary {
        n: data.n(),
        t_max: data.t_max(),
        records: total,
        availability_rate: available as f64 / total as f64,
        zero_proportion: all_zero as f64 / total as f64,
        mean_outcome: all_sum / total as f64,
        arms,
    })
}
