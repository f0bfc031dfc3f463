use super::{DecisionRecord, PanelDataset, Participant};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

/// Maps the semantic roles of a panel onto CSV column names.
///
/// Every column that is not claimed by a role becomes a numeric covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub participant: String,
    pub t: String,
    pub availability: String,
    pub arm: String,
    pub outcome: String,
    /// One column per active arm, in arm order. Empty when probabilities are unknown.
    pub probabilities: Vec<String>,
    /// Number of active arms; inferred from `probabilities` or the largest arm when `None`.
    pub k_arms: Option<usize>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            participant: "participant".into(),
            t: "t".into(),
            availability: "availability".into(),
            arm: "arm".into(),
            outcome: "outcome".into(),
            probabilities: vec![],
            k_arms: None,
        }
    }
}

impl PanelSchema {
    /// Default column names with `prob1..probK` probability columns.
    pub fn with_probabilities(k: usize) -> Self {
        Self { probabilities: (1..=k).map(|a| format!("prob{a}")).collect(), k_arms: Some(k), ..Self::default() }
    }
}

pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_panel(file, schema)
}

pub fn read_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c_id = find(&schema.participant)?;
    let c_t = find(&schema.t)?;
    let c_av = find(&schema.availability)?;
    let c_arm = find(&schema.arm)?;
    let c_y = find(&schema.outcome)?;
    let c_probs = schema.probabilities.iter().map(|p| find(p)).collect::<Result<Vec<_>>>()?;
    if let Some(k) = schema.k_arms {
        if !c_probs.is_empty() && c_probs.len() != k {
            return Err(Error::InvalidConfig(format!(
                "{} probability columns given for {k} arms",
                c_probs.len()
            )));
        }
    }
    let claimed: Vec<usize> = [c_id, c_t, c_av, c_arm, c_y].into_iter().chain(c_probs.iter().cloned()).collect();
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|i| !claimed.contains(i)).collect();
    let covariate_names: Vec<String> = cov_cols.iter().map(|&i| headers[i].to_string()).collect();

    let mut groups: BTreeMap<String, Vec<DecisionRecord>> = BTreeMap::new();
    let mut max_arm = 0usize;
    for (idx, row) in rdr.records().enumerate() {
        let row = row?;
        // header is line 1
        let line = idx + 2;
        let field = |c: usize| row.get(c).unwrap_or("");
        let bad = |what: &str, v: &str| Error::InvalidRecord { row: line, message: format!("{what} `{v}` is not valid") };

        let t: u32 = field(c_t).parse().map_err(|_| bad("decision index", field(c_t)))?;
        let available = match field(c_av) {
            "1" => true,
            "0" => false,
            v => return Err(bad("availability", v)),
        };
        let arm: usize = field(c_arm).parse().map_err(|_| bad("arm", field(c_arm)))?;
        max_arm = max_arm.max(arm);
        let outcome = parse_count(field(c_y)).ok_or_else(|| Error::NonIntegerOutcome {
            row: line,
            value: field(c_y).to_string(),
        })?;
        let rand_prob = if c_probs.is_empty() {
            None
        } else {
            let mut ps = Vec::with_capacity(c_probs.len());
            for &c in &c_probs {
                let v: f64 = field(c).parse().map_err(|_| bad("probability", field(c)))?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::ProbabilityOutOfRange { row: line, value: v });
                }
                ps.push(v);
            }
            let s: f64 = ps.iter().sum();
            if s >= 1.0 {
                return Err(Error::ProbabilityOutOfRange { row: line, value: s });
            }
            Some(ps)
        };
        let covariates = cov_cols
            .iter()
            .map(|&c| field(c).parse::<f64>().map_err(|_| bad(&format!("covariate {}", &headers[c]), field(c))))
            .collect::<Result<Vec<_>>>()?;
        groups.entry(field(c_id).to_string()).or_default().push(DecisionRecord {
            t,
            available,
            arm,
            rand_prob,
            covariates,
            outcome,
        });
    }
    let k_arms = schema.k_arms.unwrap_or_else(|| if c_probs.is_empty() { max_arm.max(1) } else { c_probs.len() });
    let participants = groups.into_iter().map(|(id, records)| Participant { id, records }).collect();
    PanelDataset::new(participants, covariate_names, k_arms)
}

fn parse_count(s: &str) -> Option<u64> {
    if let Ok(v) = s.parse::<u64>() {
        return Some(v);
    }
    let v: f64 = s.parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v < 9.0e15).then_some(v as u64)
}

pub fn write_panel(data: &PanelDataset, path: impl AsRef<Path>, schema: &PanelSchema) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_panel_to(data, std::io::BufWriter::new(file), schema)
}

/// Writes the panel as CSV. Floats use Rust's shortest round-trip formatting,
/// so `read_panel(write_panel(d))` reproduces every value bit-for-bit.
pub fn write_panel_to<W: Write>(data: &PanelDataset, writer: W, schema: &PanelSchema) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_probs = data.has_rand_prob();
    let prob_cols: Vec<String> = if with_probs {
        if schema.probabilities.len() == data.k_arms() {
            schema.probabilities.clone()
        } else {
            (1..=data.k_arms()).map(|a| format!("prob{a}")).collect()
        }
    } else {
        vec![]
    };
    let mut header = vec![
        schema.participant.clone(),
        schema.t.clone(),
        schema.availability.clone(),
        schema.arm.clone(),
    ];
    header.extend(prob_cols.iter().cloned());
    header.extend(data.covariate_names().iter().cloned());
    header.push(schema.outcome.clone());
    w.write_record(&header)?;
    for p in data.participants() {
        for r in &p.records {
            let mut row = vec![
                p.id.clone(),
                r.t.to_string(),
                u8::from(r.available).to_string(),
                r.arm.to_string(),
            ];
            if with_probs {
                row.extend(r.rand_prob.as_ref().into_iter().flatten().map(|v| v.to_string()));
            }
            row.extend(r.covariates.iter().map(|v| v.to_string()));
            row.push(r.outcome.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> PanelSchema {
        PanelSchema::with_probabilities(1)
    }

    #[test]
    fn minimal_well_formed_input() {
        let csv = "participant,t,availability,arm,prob1,outcome\n1,1,1,0,0.6,0\n1,2,1,1,0.6,3\n1,3,1,0,0.6,1\n";
        let ds = read_panel(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.n(), 1);
        assert_eq!(ds.t_max(), 3);
        assert_eq!(ds.k_arms(), 1);
        assert!(ds.has_rand_prob());
    }

    #[test]
    fn probability_one_is_rejected() {
        let csv = "participant,t,availability,arm,prob1,outcome\n1,1,1,1,1.0,0\n";
        assert!(matches!(read_panel(csv.as_bytes(), &schema()), Err(Error::ProbabilityOutOfRange { .. })));
    }

    #[test]
    fn duplicate_decision_point() {
        let csv = "participant,t,availability,arm,prob1,outcome\n7,4,1,1,0.5,0\n7,4,1,0,0.5,2\n";
        match read_panel(csv.as_bytes(), &schema()) {
            Err(Error::DuplicateDecisionPoint { participant, t }) => {
                assert_eq!(participant, "7");
                assert_eq!(t, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "participant,t,arm,outcome\n1,1,0,0\n";
        match read_panel(csv.as_bytes(), &PanelSchema::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "availability"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fractional_outcome_is_rejected() {
        let csv = "participant,t,availability,arm,outcome\n1,1,1,0,2.5\n";
        assert!(matches!(read_panel(csv.as_bytes(), &PanelSchema::default()), Err(Error::NonIntegerOutcome { .. })));
        let csv = "participant,t,availability,arm,outcome\n1,1,1,0,-1\n";
        assert!(matches!(read_panel(csv.as_bytes(), &PanelSchema::default()), Err(Error::NonIntegerOutcome { .. })));
    }

    #[test]
    fn rows_are_regrouped_and_sorted() {
        let csv = "participant,t,availability,arm,outcome,z\n2,2,1,0,1,0.5\n1,1,1,0,0,1\n2,1,1,1,3,2\n";
        let ds = read_panel(csv.as_bytes(), &PanelSchema::default()).unwrap();
        assert_eq!(ds.covariate_names(), &["z".to_string()]);
        assert_eq!(ds.participants()[1].records[0].covariates, vec![2.0]);
        assert!(!ds.has_rand_prob());
    }
}
