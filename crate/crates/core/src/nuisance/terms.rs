//! Encoding of history features into GAM design columns.

use super::spline::{SplineBasis, SplineConfig};
use crate::error::{Error, Result};
use crate::panel::{feature_matrix, DecisionRecord, FeatureExpr, LagInit, PanelDataset, RowMatrix};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::glm::PenaltyBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    /// Categorical when integer-valued with at most 10 levels, spline when it
    /// has at least 20 distinct values, linear otherwise.
    Auto,
    Linear,
    Categorical,
    Spline,
}

impl std::str::FromStr for TermKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(TermKind::Auto),
            "linear" | "lin" => Ok(TermKind::Linear),
            "categorical" | "cat" => Ok(TermKind::Categorical),
            "spline" | "smooth" => Ok(TermKind::Spline),
            other => Err(Error::InvalidConfig(format!("unknown term kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceTerm {
    pub feature: String,
    pub kind: TermKind,
}

impl NuisanceTerm {
    pub fn new(feature: impl Into<String>, kind: TermKind) -> Self {
        Self { feature: feature.into(), kind }
    }

    /// Parses `feature` or `feature:kind`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.rsplit_once(':') {
            Some((f, k)) => Ok(Self::new(f.trim(), k.trim().parse()?)),
            None => Ok(Self::new(s.trim(), TermKind::Auto)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TermEncoder {
    Linear,
    /// One dummy per level after the first (reference) level.
    Categorical { levels: Vec<f64> },
    /// B-spline basis without its last column (absorbed by the intercept).
    Spline { basis: SplineBasis },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedTerm {
    pub feature: String,
    pub encoder: TermEncoder,
}

impl EncodedTerm {
    fn width(&self) -> usize {
        match &self.encoder {
            TermEncoder::Linear => 1,
            TermEncoder::Categorical { levels } => levels.len().saturating_sub(1),
            TermEncoder::Spline { basis } => basis.size - 1,
        }
    }
}

/// An intercept followed by the encoded columns of each term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSet {
    pub terms: Vec<EncodedTerm>,
    pub lag_init: LagInit,
}

impl TermSet {
    /// Resolves term kinds and encoders from the values observed on available records.
    pub fn build(data: &PanelDataset, terms: &[NuisanceTerm], spline: SplineConfig, lag_init: &LagInit) -> Result<Self> {
        let exprs = terms.iter().map(|t| FeatureExpr::parse(&t.feature, data)).collect::<Result<Vec<_>>>()?;
        let raw = feature_matrix(data, &exprs, lag_init)?;
        let avail: Vec<usize> = data.records().enumerate().filter(|(_, r)| r.available).map(|(i, _)| i).collect();
        let mut encoded = Vec::with_capacity(terms.len());
        for (j, term) in terms.iter().enumerate() {
            let values: Vec<f64> = avail.iter().map(|&i| raw.get(i, j)).collect();
            let mut distinct = values.clone();
            distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite feature"));
            distinct.dedup();
            let kind = match term.kind {
                TermKind::Auto => {
                    let integral = distinct.iter().all(|v| v.fract() == 0.0);
                    if integral && distinct.len() <= 10 {
                        TermKind::Categorical
                    } else if distinct.len() >= 20 {
                        TermKind::Spline
                    } else {
                        TermKind::Linear
                    }
                }
                k => k,
            };
            let encoder = match kind {
                TermKind::Linear | TermKind::Auto => TermEncoder::Linear,
                TermKind::Categorical => TermEncoder::Categorical { levels: distinct },
                TermKind::Spline => TermEncoder::Spline { basis: SplineBasis::from_values(&term.feature, &values, spline)? },
            };
            encoded.push(EncodedTerm { feature: term.feature.clone(), encoder });
        }
        Ok(Self { terms: encoded, lag_init: lag_init.clone() })
    }

    pub fn intercept_only() -> Self {
        Self { terms: vec![], lag_init: LagInit::default() }
    }

    pub fn ncols(&self) -> usize {
        1 + self.terms.iter().map(EncodedTerm::width).sum::<usize>()
    }

    fn exprs(&self, data: &PanelDataset) -> Result<Vec<FeatureExpr>> {
        self.terms.iter().map(|t| FeatureExpr::parse(&t.feature, data)).collect()
    }

    /// Raw (unencoded) feature values for every record of `data`.
    pub fn raw(&self, data: &PanelDataset) -> Result<RowMatrix> {
        feature_matrix(data, &self.exprs(data)?, &self.lag_init)
    }

    pub fn raw_record(&self, data: &PanelDataset, records: &[DecisionRecord], idx: usize) -> Result<Vec<f64>> {
        self.exprs(data)?.iter().map(|e| e.eval(records, idx, &self.lag_init)).collect()
    }

    pub fn encode_into(&self, raw: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        for (t, &v) in self.terms.iter().zip(raw) {
            match &t.encoder {
                TermEncoder::Linear => out.push(v),
                TermEncoder::Categorical { levels } => {
                    out.extend(levels.iter().skip(1).map(|l| f64::from(u8::from(*l == v))));
                }
                TermEncoder::Spline { basis } => {
                    let b = basis.evaluate(v);
                    out.extend_from_slice(&b[..basis.size - 1]);
                }
            }
        }
    }

    pub fn encode_rows(&self, raw: &RowMatrix, rows: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows.len(), self.ncols());
        let mut buf = Vec::with_capacity(self.ncols());
        for (i, &r) in rows.iter().enumerate() {
            self.encode_into(raw.row(r), &mut buf);
            for (j, v) in buf.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn penalties(&self) -> Vec<PenaltyBlock> {
        let mut out = vec![];
        let mut col = 1;
        for t in &self.terms {
            if let TermEncoder::Spline { basis } = &t.encoder {
                let k = basis.size - 1;
                out.push(PenaltyBlock { start: col, matrix: basis.penalty().view((0, 0), (k, k)).clone_owned() });
            }
            col += t.width();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Participant;

    fn data() -> PanelDataset {
        let recs = (1..=30)
            .map(|t| DecisionRecord {
                t,
                available: true,
                arm: 0,
                rand_prob: None,
                covariates: vec![f64::from(t % 3), f64::from(t) * 0.37],
                outcome: 0,
            })
            .collect();
        PanelDataset::new(vec![Participant { id: "a".into(), records: recs }], vec!["Z".into(), "x".into()], 1).unwrap()
    }

    #[test]
    fn auto_kinds() {
        let ts = TermSet::build(
            &data(),
            &[NuisanceTerm::parse("Z").unwrap(), NuisanceTerm::parse("x").unwrap(), NuisanceTerm::parse("arm_lag1").unwrap()],
            SplineConfig::default(),
            &LagInit::default(),
        )
        .unwrap();
        assert!(matches!(ts.terms[0].encoder, TermEncoder::Categorical { .. }));
        assert!(matches!(ts.terms[1].encoder, TermEncoder::Spline { .. }));
        assert!(matches!(ts.terms[2].encoder, TermEncoder::Categorical { .. }));
        assert_eq!(ts.ncols(), (1 + 2 + 9));
        assert_eq!(ts.penalties().len(), 1);
        assert_eq!(ts.penalties()[0].start, 3);
    }

    #[test]
    fn categorical_dummies() {
        let ts = TermSet::build(&data(), &[NuisanceTerm::parse("Z:cat").unwrap()], SplineConfig::default(), &LagInit::default()).unwrap();
        let mut buf = vec![];
        ts.encode_into(&[2.0], &mut buf);
        assert_eq!(buf, vec![1.0, 0.0, 1.0]);
        ts.encode_into(&[0.0], &mut buf);
        assert_eq!(buf, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn bad_kind_rejected() {
        assert!(NuisanceTerm::parse("Z:wavelet").is_err());
    }
}
