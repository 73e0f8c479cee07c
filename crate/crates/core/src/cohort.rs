//! Clinical encoding, CT/PET feature tagging, design matrices and scaling.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiomics::FeatureVector;

/// Weight used when the clinical record has none.
pub const DEFAULT_WEIGHT_KG: f64 = 75.0;

pub const CLINICAL_COLUMNS: [&str; 8] = [
    "clinical.gender",
    "clinical.age",
    "clinical.weight",
    "clinical.tobacco",
    "clinical.alcohol",
    "clinical.hpv",
    "clinical.surgery",
    "clinical.chemotherapy",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub patient_id: String,
    pub gender: Option<Gender>,
    pub age: Option<f64>,
    pub weight: Option<f64>,
    /// Binary statuses: `Some(true)` positive, `Some(false)` negative.
    pub tobacco: Option<bool>,
    pub alcohol: Option<bool>,
    pub hpv: Option<bool>,
    pub surgery: Option<bool>,
    pub chemotherapy: Option<bool>,
    pub performance_status: String,
    pub center_id: String,
}

impl ClinicalRecord {
    pub fn new(patient_id: impl Into<String>) -> Self {
        ClinicalRecord {
            patient_id: patient_id.into(),
            gender: None,
            age: None,
            weight: None,
            tobacco: None,
            alcohol: None,
            hpv: None,
            surgery: None,
            chemotherapy: None,
            performance_status: String::new(),
            center_id: String::new(),
        }
    }
}

fn ternary(s: Option<bool>) -> f64 {
    match s {
        Some(true) => 1.0,
        Some(false) => -1.0,
        None => 0.0,
    }
}

/// Eight clinical covariates; `age_fill` stands in for a missing age.
pub fn encode_clinical(r: &ClinicalRecord, age_fill: f64) -> FeatureVector {
    let gender = match r.gender {
        Some(Gender::M) => 0.0,
        Some(Gender::F) => 1.0,
        None => 0.5,
    };
    let vals = [
        gender,
        r.age.unwrap_or(age_fill),
        r.weight.unwrap_or(DEFAULT_WEIGHT_KG),
        ternary(r.tobacco),
        ternary(r.alcohol),
        ternary(r.hpv),
        ternary(r.surgery),
        ternary(r.chemotherapy),
    ];
    CLINICAL_COLUMNS
        .iter()
        .map(|n| n.to_string())
        .zip(vals)
        .collect()
}

/// Encoded clinical vectors in input order plus the ids whose age was imputed.
#[derive(Clone, Debug, PartialEq)]
pub struct ClinicalEncoding {
    pub vectors: Vec<FeatureVector>,
    pub age_median: f64,
    pub age_imputed: Vec<String>,
}

/// Encode a whole cohort, imputing missing ages with the median of the known ones.
pub fn encode_cohort(records: &[ClinicalRecord]) -> ClinicalEncoding {
    let mut ages: Vec<f64> = records.iter().filter_map(|r| r.age).collect();
    ages.sort_by(f64::total_cmp);
    let age_median = match ages.len() {
        0 => 0.0,
        n if n % 2 == 1 => ages[n / 2],
        n => 0.5 * (ages[n / 2 - 1] + ages[n / 2]),
    };
    ClinicalEncoding {
        vectors: records
            .iter()
            .map(|r| encode_clinical(r, age_median))
            .collect(),
        age_median,
        age_imputed: records
            .iter()
            .filter(|r| r.age.is_none())
            .map(|r| r.patient_id.clone())
            .collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ClinicalRow {
    patient_id: String,
    gender: String,
    age: String,
    weight: String,
    tobacco: String,
    alcohol: String,
    hpv: String,
    surgery: String,
    chemotherapy: String,
    performance_status: String,
    center_id: String,
}

fn parse_opt_f64(id: &str, field: &str, s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Data(format!(
            "patient {id}: {field} {s:?} is not a number"
        ))),
    }
}

fn parse_binary(id: &str, field: &str, s: &str) -> Result<Option<bool>> {
    match s.trim() {
        "" => Ok(None),
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        v => Err(Error::Data(format!(
            "patient {id}: {field} must be 0, 1 or empty, got {v:?}"
        ))),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn fmt_binary(v: Option<bool>) -> String {
    v.map_or(String::new(), |b| (b as u8).to_string())
}

pub fn read_clinical(path: impl AsRef<Path>) -> Result<Vec<ClinicalRecord>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.deserialize() {
        let row: ClinicalRow = row?;
        let id = row.patient_id.trim().to_string();
        if id.is_empty() {
            return Err(Error::Data("empty patient_id in clinical table".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!(
                "duplicate patient_id {id} in clinical table"
            )));
        }
        let gender = match row.gender.trim() {
            "" => None,
            "M" => Some(Gender::M),
            "F" => Some(Gender::F),
            g => {
                return Err(Error::Data(format!(
                    "patient {id}: gender must be M, F or empty, got {g:?}"
                )))
            }
        };
        out.push(ClinicalRecord {
            gender,
            age: parse_opt_f64(&id, "age", &row.age)?,
            weight: parse_opt_f64(&id, "weight", &row.weight)?,
            tobacco: parse_binary(&id, "tobacco", &row.tobacco)?,
            alcohol: parse_binary(&id, "alcohol", &row.alcohol)?,
            hpv: parse_binary(&id, "hpv", &row.hpv)?,
            surgery: parse_binary(&id, "surgery", &row.surgery)?,
            chemotherapy: parse_binary(&id, "chemotherapy", &row.chemotherapy)?,
            performance_status: row.performance_status,
            center_id: row.center_id,
            patient_id: id,
        });
    }
    Ok(out)
}

pub fn write_clinical(path: impl AsRef<Path>, records: &[ClinicalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in records {
        w.serialize(ClinicalRow {
            patient_id: r.patient_id.clone(),
            gender: match r.gender {
                Some(Gender::M) => "M".into(),
                Some(Gender::F) => "F".into(),
                None => String::new(),
            },
            age: fmt_opt(r.age),
            weight: fmt_opt(r.weight),
            tobacco: fmt_binary(r.tobacco),
            alcohol: fmt_binary(r.alcohol),
            hpv: fmt_binary(r.hpv),
            surgery: fmt_binary(r.surgery),
            chemotherapy: fmt_binary(r.chemotherapy),
            performance_status: r.performance_status.clone(),
            center_id: r.center_id.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

fn same_names(ct: &FeatureVector, pet: &FeatureVector) -> Result<()> {
    if !ct.names().eq(pet.names()) {
        return Err(Error::Argument(
            "CT and PET feature vectors have different names".into(),
        ));
    }
    Ok(())
}

/// Equal values become one `common.<name>`; others split into `ct.<name>` and `pet.<name>`.
pub fn tag_modalities(ct: &FeatureVector, pet: &FeatureVector) -> Result<FeatureVector> {
    tag_modalities_with_tolerance(ct, pet, 0.0)
}

/// As [`tag_modalities`], treating `|ct - pet| <= eps` as equal.
pub fn tag_modalities_with_tolerance(
    ct: &FeatureVector,
    pet: &FeatureVector,
    eps: f64,
) -> Result<FeatureVector> {
    same_names(ct, pet)?;
    let mut out = FeatureVector::new();
    for ((name, a), b) in ct.iter().zip(pet.values()) {
        if (a - b).abs() <= eps {
            out.push(format!("common.{name}"), a)?;
        } else {
            out.push(format!("ct.{name}"), a)?;
            out.push(format!("pet.{name}"), b)?;
        }
    }
    Ok(out)
}

/// Tag a cohort so that every patient gets the same columns: a feature is
/// common only if CT and PET agree for every patient.
pub fn tag_cohort(ct: &[FeatureVector], pet: &[FeatureVector]) -> Result<Vec<FeatureVector>> {
    if ct.len() != pet.len() {
        return Err(Error::Argument(format!(
            "{} CT vectors but {} PET vectors",
            ct.len(),
            pet.len()
        )));
    }
    let Some(first) = ct.first() else {
        return Ok(vec![]);
    };
    let names: Vec<String> = first.names().map(String::from).collect();
    for (c, p) in ct.iter().zip(pet) {
        same_names(c, p)?;
        if !c.names().eq(names.iter().map(String::as_str)) {
            return Err(Error::Argument(
                "feature names differ between patients".into(),
            ));
        }
    }
    let common: Vec<bool> = (0..names.len())
        .map(|k| {
            ct.iter()
                .zip(pet)
                .all(|(c, p)| c.value_at(k) == p.value_at(k))
        })
        .collect();
    ct.iter()
        .zip(pet)
        .map(|(c, p)| {
            let mut out = FeatureVector::new();
            for (k, name) in names.iter().enumerate() {
                if common[k] {
                    out.push(format!("common.{name}"), c.value_at(k))?;
                } else {
                    out.push(format!("ct.{name}"), c.value_at(k))?;
                    out.push(format!("pet.{name}"), p.value_at(k))?;
                }
            }
            Ok(out)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Clinical,
    Ct,
    Pet,
    Common,
}

impl Block {
    pub fn prefix(self) -> &'static str {
        match self {
            Block::Clinical => "clinical.",
            Block::Ct => "ct.",
            Block::Pet => "pet.",
            Block::Common => "common.",
        }
    }

    pub fn is_imaging(self) -> bool {
        self != Block::Clinical
    }
}

impl std::str::FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clinical" => Ok(Block::Clinical),
            "ct" => Ok(Block::Ct),
            "pet" => Ok(Block::Pet),
            "common" => Ok(Block::Common),
            _ => Err(Error::Argument(format!("unknown feature block {s:?}"))),
        }
    }
}

/// One patient's inputs to [`assemble_design_matrix`].
#[derive(Clone, Debug, PartialEq)]
pub struct CohortEntry {
    pub patient_id: String,
    pub clinical: FeatureVector,
    /// Tagged imaging features, or the error that prevented extraction.
    pub imaging: std::result::Result<FeatureVector, Exclusion>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub patient_id: String,
    /// Error kind, e.g. `EmptyRoiError`.
    pub reason: String,
    pub message: String,
}

impl Exclusion {
    pub fn from_error(patient_id: impl Into<String>, e: &Error) -> Self {
        Exclusion {
            patient_id: patient_id.into(),
            reason: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub patient_ids: Vec<String>,
    pub column_names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(
        patient_ids: Vec<String>,
        column_names: Vec<String>,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        if values.nrows() != patient_ids.len() || values.ncols() != column_names.len() {
            return Err(Error::Argument(format!(
                "matrix is {}x{} but has {} ids and {} names",
                values.nrows(),
                values.ncols(),
                patient_ids.len(),
                column_names.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = column_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Argument(format!("duplicate column {dup}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(
                "design matrix contains non-finite values".into(),
            ));
        }
        Ok(DesignMatrix {
            patient_ids,
            column_names,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    /// Rows for the given patients, in the order given.
    pub fn select_rows(&self, ids: &[String]) -> Result<DesignMatrix> {
        let pos: BTreeMap<&str, usize> = self
            .patient_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let rows: Vec<usize> = ids
            .iter()
            .map(|id| {
                pos.get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Cohort(format!("no row for patient {id}")))
            })
            .collect::<Result<_>>()?;
        Ok(DesignMatrix {
            patient_ids: ids.to_vec(),
            column_names: self.column_names.clone(),
            values: DMatrix::from_fn(rows.len(), self.n_cols(), |i, j| self.values[(rows[i], j)]),
        })
    }

    /// Columns by index, in the order given.
    pub fn select_columns(&self, cols: &[usize]) -> DesignMatrix {
        DesignMatrix {
            patient_ids: self.patient_ids.clone(),
            column_names: cols.iter().map(|&j| self.column_names[j].clone()).collect(),
            values: DMatrix::from_fn(self.n_rows(), cols.len(), |i, j| self.values[(i, cols[j])]),
        }
    }
}

/// Concatenate the requested blocks (in clinical, ct, pet, common order) with
/// rows sorted by patient id. Patients whose imaging failed are excluded when
/// any imaging block is requested.
pub fn assemble_design_matrix(
    entries: &[CohortEntry],
    blocks: &[Block],
) -> Result<(DesignMatrix, Vec<Exclusion>)> {
    let mut blocks = blocks.to_vec();
    blocks.sort();
    blocks.dedup();
    if blocks.is_empty() {
        return Err(Error::Argument("no feature blocks requested".into()));
    }
    let imaging = blocks.iter().any(|b| b.is_imaging());
    let mut sorted: Vec<&CohortEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    if let Some(w) = sorted
        .windows(2)
        .find(|w| w[0].patient_id == w[1].patient_id)
    {
        return Err(Error::Cohort(format!(
            "duplicate patient {}",
            w[0].patient_id
        )));
    }

    let mut exclusions = Vec::new();
    let mut rows: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    for e in sorted {
        let mut row: Vec<(String, f64)> = Vec::new();
        for &b in &blocks {
            let src = match (b, &e.imaging) {
                (Block::Clinical, _) => &e.clinical,
                (_, Ok(f)) => f,
                (_, Err(_)) => continue,
            };
            row.extend(
                src.iter()
                    .filter(|(n, _)| n.starts_with(b.prefix()))
                    .map(|(n, v)| (n.to_string(), v)),
            );
        }
        match (&e.imaging, imaging) {
            (Err(x), true) => exclusions.push(x.clone()),
            _ => rows.push((e.patient_id.clone(), row)),
        }
    }
    let Some((_, first)) = rows.first() else {
        return Err(Error::Cohort("no patients left after exclusions".into()));
    };
    let names: Vec<String> = first.iter().map(|(n, _)| n.clone()).collect();
    for (id, r) in &rows {
        if r.len() != names.len() || r.iter().zip(&names).any(|((a, _), b)| a != b) {
            return Err(Error::Cohort(format!(
                "patient {id} has a different feature set"
            )));
        }
    }
    let values = DMatrix::from_fn(rows.len(), names.len(), |i, j| rows[i].1[j].1);
    let ids = rows.into_iter().map(|(id, _)| id).collect();
    Ok((DesignMatrix::new(ids, names, values)?, exclusions))
}

/// Per-column z-scoring learnt on one matrix and reusable on others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub column_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Constant columns removed from the output.
    pub dropped: Vec<String>,
}

impl Standardizer {
    pub fn apply(&self, dm: &DesignMatrix) -> Result<DesignMatrix> {
        let cols: Vec<usize> = self
            .column_names
            .iter()
            .map(|n| {
                dm.column_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::Argument(format!("missing column {n}")))
            })
            .collect::<Result<_>>()?;
        let values = DMatrix::from_fn(dm.n_rows(), cols.len(), |i, j| {
            (dm.values[(i, cols[j])] - self.means[j]) / self.stds[j]
        });
        Ok(DesignMatrix {
            patient_ids: dm.patient_ids.clone(),
            column_names: self.column_names.clone(),
            values,
        })
    }
}

/// Z-score columns with the population standard deviation; constant columns are dropped.
pub fn standardize(dm: &DesignMatrix) -> (DesignMatrix, Standardizer) {
    let n = dm.n_rows() as f64;
    let mut st = Standardizer {
        column_names: vec![],
        means: vec![],
        stds: vec![],
        dropped: vec![],
    };
    for (j, name) in dm.column_names.iter().enumerate() {
        let col = dm.values.column(j);
        if col.iter().all(|v| *v == col[0]) {
            st.dropped.push(name.clone());
            continue;
        }
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        st.column_names.push(name.clone());
        st.means.push(mean);
        st.stds.push(sd);
    }
    let out = st.apply(dm).expect("columns come from the same matrix");
    (out, st)
}

/// Write `patient_id,<names...>` rows; every vector must carry the same names.
pub fn write_feature_csv(path: impl AsRef<Path>, rows: &[(String, FeatureVector)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let names: Vec<&str> = rows
        .first()
        .map(|(_, f)| f.names().collect())
        .unwrap_or_default();
    w.write_record(std::iter::once("patient_id").chain(names.iter().copied()))?;
    for (id, f) in rows {
        if !f.names().eq(names.iter().copied()) {
            return Err(Error::Argument(format!(
                "patient {id} has a different feature set"
            )));
        }
        w.write_record(std::iter::once(id.clone()).chain(f.values().map(|v| v.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<Vec<(String, FeatureVector)>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("patient_id") {
        return Err(Error::Format(
            "feature CSV must start with a patient_id column".into(),
        ));
    }
    let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec[0].to_string();
        let mut f = FeatureVector::new();
        for (name, cell) in names.iter().zip(rec.iter().skip(1)) {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Format(format!("patient {id}: {name} = {cell:?}")))?;
            f.push(name.clone(), v)?;
        }
        out.push((id, f));
    }
    Ok(out)
}
