//! Cox proportional-hazards modelling: partial-likelihood fitting, the
//! L1-penalised coefficient path, cross-validated feature selection and
//! Harrell's concordance index.
//!
//! Ties in event times use the Breslow approximation throughout.

mod cindex;
mod cox;
mod cv;
mod lasso;
mod risk;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cindex::{concordance_counts, concordance_index, Concordance};
pub use cox::{cox_fit, risk_score, CoxFitOptions, CoxModel};
pub use cv::{
    select_features_cv, stratified_folds, train_val_test_split, CvOptions, CvPoint, CvSelection,
    Split,
};
pub use lasso::{
    lambda_grid, lambda_max, lasso_cox_path, lasso_cox_path_with_lambdas, LassoOptions, LassoPath,
};
pub use risk::{CoxData, Derivatives};

/// Recurrence-free survival outcome for one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub patient_id: String,
    /// Days from end of treatment to recurrence or censoring.
    pub time: f64,
    /// `true` when recurrence was observed, `false` when censored.
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(patient_id: impl Into<String>, time: f64, event: bool) -> Result<Self> {
        let r = SurvivalRecord {
            patient_id: patient_id.into(),
            time,
            event,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time.is_finite() && self.time > 0.0) {
            return Err(Error::Data(format!(
                "patient {}: survival time must be positive and finite, got {}",
                self.patient_id, self.time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OutcomeRow {
    patient_id: String,
    rfs_days: f64,
    event: u8,
}

/// Read `patient_id,rfs_days,event` rows.
pub fn read_outcomes(path: impl AsRef<Path>) -> Result<Vec<SurvivalRecord>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: OutcomeRow = row?;
        let event = match row.event {
            0 => false,
            1 => true,
            v => {
                return Err(Error::Data(format!(
                    "patient {}: event must be 0 or 1, got {v}",
                    row.patient_id
                )))
            }
        };
        out.push(SurvivalRecord::new(row.patient_id, row.rfs_days, event)?);
    }
    Ok(out)
}

pub fn write_outcomes(path: impl AsRef<Path>, records: &[SurvivalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in records {
        w.serialize(OutcomeRow {
            patient_id: r.patient_id.clone(),
            rfs_days: r.time,
            event: r.event as u8,
        })?;
    }
    w.flush()?;
    Ok(())
}
