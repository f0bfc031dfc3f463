use super::features::{EffectModelSpec, FeatureExpr, LagInit};
use super::PanelDataset;
use crate::error::{Error, Result};

/// Dense row-major matrix used for per-record feature vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowMatrix {
    data: Vec<f64>,
    ncols: usize,
}

impl RowMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { data: vec![0.0; nrows * ncols], ncols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { data, ncols }
    }

    pub fn nrows(&self) -> usize {
        if self.ncols == 0 {
            0
        } else {
            self.data.len() / self.ncols
        }
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.nrows(), self.ncols, &self.data)
    }
}

/// Everything the estimating functions need, flattened to one row per
/// decision record in canonical (participant, t) order.
#[derive(Debug, Clone)]
pub struct DesignBundle {
    pub k_arms: usize,
    /// `offsets[i]..offsets[i + 1]` are participant i's rows.
    pub offsets: Vec<usize>,
    pub available: Vec<bool>,
    pub arm: Vec<usize>,
    pub outcome: Vec<f64>,
    /// S_t (marginal) or f(H_t) (conditional); one column per moderator.
    pub moderators: RowMatrix,
    pub moderator_names: Vec<String>,
    /// g(H_t) for the parametric working models.
    pub controls: RowMatrix,
    pub control_names: Vec<String>,
    /// Known randomization probabilities (N x K), when every record has them.
    pub rand_prob: Option<RowMatrix>,
}

impl DesignBundle {
    pub fn n_records(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_participants(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_available(&self) -> usize {
        self.available.iter().filter(|a| **a).count()
    }

    pub fn p(&self) -> usize {
        self.moderators.ncols()
    }

    pub fn q(&self) -> usize {
        self.controls.ncols()
    }

    /// Arm dummy A_{t,k} for k in 1..=K.
    pub fn dummy(&self, r: usize, k: usize) -> f64 {
        f64::from(u8::from(self.arm[r] == k))
    }
}

/// Evaluates a list of features for every record.
pub fn feature_matrix(data: &PanelDataset, exprs: &[FeatureExpr], init: &LagInit) -> Result<RowMatrix> {
    let n = data.n_records();
    let mut m = RowMatrix::zeros(n, exprs.len());
    let mut row = 0;
    for p in data.participants() {
        for idx in 0..p.records.len() {
            let out = m.row_mut(row);
            for (j, e) in exprs.iter().enumerate() {
                out[j] = e.eval(&p.records, idx, init)?;
            }
            row += 1;
        }
    }
    Ok(m)
}

pub fn parse_features(data: &PanelDataset, names: &[String]) -> Result<Vec<FeatureExpr>> {
    names.iter().map(|s| FeatureExpr::parse(s, data)).collect()
}

/// Materializes moderator and control matrices. Unavailable records are kept
/// (flagged through `available`) and contribute zero to every score.
pub fn build_design(data: &PanelDataset, spec: &EffectModelSpec) -> Result<DesignBundle> {
    let moderator_names = spec.resolved_moderators();
    if moderator_names.is_empty() {
        return Err(Error::InvalidConfig("moderator list must be nonempty".into()));
    }
    let control_names = spec.resolved_controls();
    let mods = parse_features(data, &moderator_names)?;
    let ctrls = parse_features(data, &control_names)?;
    let moderators = feature_matrix(data, &mods, &spec.lag_init)?;
    let controls = feature_matrix(data, &ctrls, &spec.lag_init)?;

    let n = data.n_records();
    let k = data.k_arms();
    let mut offsets = Vec::with_capacity(data.n() + 1);
    offsets.push(0);
    let mut available = Vec::with_capacity(n);
    let mut arm = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let has_probs = data.has_rand_prob();
    let mut probs = has_probs.then(|| RowMatrix::zeros(n, k));
    let mut row = 0;
    for p in data.participants() {
        for r in &p.records {
            available.push(r.available);
            arm.push(r.arm);
            outcome.push(r.outcome as f64);
            if let (Some(pm), Some(rp)) = (probs.as_mut(), r.rand_prob.as_ref()) {
                pm.row_mut(row).copy_from_slice(rp);
            }
            row += 1;
        }
        offsets.push(row);
    }
    Ok(DesignBundle {
        k_arms: k,
        offsets,
        available,
        arm,
        outcome,
        moderators,
        moderator_names,
        controls,
        control_names,
        rand_prob: probs.take(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{DecisionRecord, Participant};

    fn data() -> PanelDataset {
        let recs = (1..=3)
            .map(|t| DecisionRecord {
                t,
                available: true,
                arm: (t % 2) as usize,
                rand_prob: None,
                covariates: vec![f64::from(t) + 1.0],
                outcome: u64::from(t),
            })
            .collect();
        PanelDataset::new(vec![Participant { id: "a".into(), records: recs }], vec!["Z".into()], 1).unwrap()
    }

    #[test]
    fn intercept_only_moderators() {
        let d = build_design(&data(), &EffectModelSpec::new(["1"], ["1"])).unwrap();
        assert_eq!(d.p(), 1);
        assert!((0..3).all(|r| d.moderators.get(r, 0) == 1.0));
    }

    #[test]
    fn direct_mapping() {
        let d = build_design(&data(), &EffectModelSpec::new(["1", "Z"], ["1"])).unwrap();
        assert_eq!(d.moderators.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn lag_uses_declared_initial_value() {
        let d = build_design(&data(), &EffectModelSpec::new(["1"], ["outcome_lag1", "arm_lag1", "Z_lag1"])).unwrap();
        assert_eq!(d.controls.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(d.controls.row(1), &[1.0, 1.0, 2.0]);
    }

    #[test]
    fn strict_lag_without_initial_errors() {
        let mut spec = EffectModelSpec::new(["1"], ["outcome_lag1"]);
        spec.lag_init = LagInit::strict();
        assert!(matches!(build_design(&data(), &spec), Err(Error::LagBeforeStart { .. })));
        spec.lag_init.values.insert("outcome".into(), 5.0);
        let d = build_design(&data(), &spec).unwrap();
        assert_eq!(d.controls.get(0, 0), 5.0);
    }

    #[test]
    fn unknown_and_future_features_rejected() {
        for bad in ["W", "outcome", "arm", "arm3_lag1"] {
            let spec = EffectModelSpec::new(["1", bad], ["1"]);
            assert!(matches!(build_design(&data(), &spec), Err(Error::UnknownFeature(_))), "{bad}");
        }
    }

    #[test]
    fn products_and_intercept_flags() {
        let mut spec = EffectModelSpec::new(["Z*t"], ["Z"]);
        spec.moderator_intercept = true;
        spec.control_intercept = true;
        let d = build_design(&data(), &spec).unwrap();
        assert_eq!(d.moderator_names, vec!["1", "Z*t"]);
        assert_eq!(d.moderators.row(2), &[1.0, 12.0]);
        assert_eq!(d.control_names, vec!["1", "Z"]);
    }
}
