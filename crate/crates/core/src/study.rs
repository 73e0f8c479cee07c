//! Experiment orchestration: preprocessing, per-variant extraction, feature
//! block combinations and the segmentation-quality table.
//!
//! Every cell shares one event-stratified train/validation/test split of the
//! whole cohort, drawn from the seed. Patients whose extraction fails in a
//! cell are dropped from all three parts of that cell.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{
    assemble_design_matrix, encode_cohort, read_clinical, standardize, tag_cohort, Block,
    ClinicalRecord, CohortEntry, DesignMatrix, Exclusion,
};
use crate::error::{Error, Result};
use crate::morphology::{ball_element, dilate, erode};
use crate::radiomics::{extract_all, ExtractionParams, FeatureVector, DEFAULT_BIN_WIDTH};
use crate::survival::{
    concordance_index, read_outcomes, select_features_cv, train_val_test_split, CvOptions,
    LassoOptions, SurvivalRecord,
};
use crate::volume::{
    crop, merge_labels, read_labels, read_volume, resample, union_bounding_box, BoundingBox,
    Interpolation, Mask, VoxelGrid, PAD_CT, PAD_PET,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskVariant {
    GroundTruth,
    Eroded(u32),
    Dilated(u32),
}

impl MaskVariant {
    pub fn label(self) -> String {
        match self {
            MaskVariant::GroundTruth => "Ground truth".into(),
            MaskVariant::Eroded(r) => format!("Eroded r={r}"),
            MaskVariant::Dilated(r) => format!("Dilated r={r}"),
        }
    }

    pub fn apply(self, m: &Mask) -> Result<Mask> {
        match self {
            MaskVariant::GroundTruth => Ok(m.clone()),
            MaskVariant::Eroded(r) => Ok(erode(m, &ball_element(r)?)),
            MaskVariant::Dilated(r) => Ok(dilate(m, &ball_element(r)?)),
        }
    }

    pub fn radius(self) -> u32 {
        match self {
            MaskVariant::GroundTruth => 0,
            MaskVariant::Eroded(r) | MaskVariant::Dilated(r) => r,
        }
    }
}

impl std::str::FromStr for MaskVariant {
    type Err = Error;

    /// `gt`, `eroded:R` or `dilated:R`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Argument(format!(
                "mask variant {s:?}: expected gt, eroded:R or dilated:R"
            ))
        };
        if s == "gt" || s == "ground_truth" {
            return Ok(MaskVariant::GroundTruth);
        }
        let (kind, r) = s.split_once(':').ok_or_else(bad)?;
        let r: u32 = r.parse().map_err(|_| bad())?;
        if r < 1 {
            return Err(Error::Argument("morphology radius must be >= 1".into()));
        }
        match kind {
            "eroded" => Ok(MaskVariant::Eroded(r)),
            "dilated" => Ok(MaskVariant::Dilated(r)),
            _ => Err(bad()),
        }
    }
}

/// Feature-block combinations of the results table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Clinical,
    CtClinical,
    PetClinical,
    CtPetClinical,
}

impl FeatureSet {
    pub const IMAGING: [FeatureSet; 3] = [
        FeatureSet::CtClinical,
        FeatureSet::PetClinical,
        FeatureSet::CtPetClinical,
    ];

    /// Modality-common features (e.g. shape) belong to every imaging set.
    pub fn blocks(self) -> Vec<Block> {
        match self {
            FeatureSet::Clinical => vec![Block::Clinical],
            FeatureSet::CtClinical => vec![Block::Clinical, Block::Ct, Block::Common],
            FeatureSet::PetClinical => vec![Block::Clinical, Block::Pet, Block::Common],
            FeatureSet::CtPetClinical => {
                vec![Block::Clinical, Block::Ct, Block::Pet, Block::Common]
            }
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FeatureSet::Clinical => "Clinical",
            FeatureSet::CtClinical => "CT + Clinical",
            FeatureSet::PetClinical => "PET + Clinical",
            FeatureSet::CtPetClinical => "CT + PET + Clinical",
        }
    }

    pub fn uses_imaging(self) -> bool {
        self != FeatureSet::Clinical
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub features: FeatureSet,
    pub mask: MaskVariant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// CT bin width (HU).
    pub bin_width: f64,
    /// PET bin width (uptake units).
    pub pet_bin_width: f64,
    pub glcm_distance: u32,
    /// Isotropic resampling target, mm.
    pub target_spacing: f64,
    pub k: usize,
    pub lasso: LassoOptions,
    /// Train, validation, test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    /// A cell is reported only if at least this fraction of patients survives extraction.
    pub min_included_fraction: f64,
    pub erode_radii: Vec<u32>,
    pub dilate_radii: Vec<u32>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            bin_width: DEFAULT_BIN_WIDTH,
            pet_bin_width: 0.5,
            glcm_distance: 1,
            target_spacing: 2.0,
            k: 8,
            lasso: LassoOptions::default(),
            split: [0.85, 0.075, 0.075],
            seed: 0,
            min_included_fraction: 0.8,
            erode_radii: vec![1],
            dilate_radii: vec![1, 2],
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        ExtractionParams::new(self.bin_width, self.glcm_distance, "CT")?;
        ExtractionParams::new(self.pet_bin_width, self.glcm_distance, "PET")?;
        self.lasso.validate()?;
        if !(self.target_spacing.is_finite() && self.target_spacing > 0.0) {
            return Err(Error::Argument("target_spacing must be positive".into()));
        }
        if self.k < 2 {
            return Err(Error::Argument("k must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.min_included_fraction) {
            return Err(Error::Argument(
                "min_included_fraction must lie in [0, 1]".into(),
            ));
        }
        if self
            .erode_radii
            .iter()
            .chain(&self.dilate_radii)
            .any(|&r| r < 1)
        {
            return Err(Error::Argument("morphology radii must be >= 1".into()));
        }
        Ok(())
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            k: self.k,
            seed: self.seed,
            lasso: self.lasso.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Extraction parameters for `CT` or `PET`.
    pub fn extraction_params(&self, modality: &str) -> ExtractionParams {
        let w = if modality == "PET" {
            self.pet_bin_width
        } else {
            self.bin_width
        };
        ExtractionParams {
            bin_width: w,
            glcm_distance: self.glcm_distance,
            modality: modality.into(),
        }
    }
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub spec: ExperimentSpec,
    /// `ok`, `extraction failed` or `undefined`.
    pub status: String,
    pub n_patients: usize,
    pub n_excluded: usize,
    pub exclusions: Vec<Exclusion>,
    pub selected: Vec<String>,
    pub lambda: Option<f64>,
    pub c_index_train: Option<f64>,
    pub c_index_validation: Option<f64>,
    pub c_index_test: Option<f64>,
}

impl ResultRow {
    pub fn n_selected(&self) -> usize {
        self.selected.len()
    }
}

/// Clinical data and outcomes of a cohort directory, sorted by patient id.
#[derive(Clone, Debug)]
pub struct CohortData {
    pub dir: PathBuf,
    pub clinical: Vec<ClinicalRecord>,
    pub outcomes: Vec<SurvivalRecord>,
}

impl CohortData {
    pub fn ids(&self) -> Vec<String> {
        self.outcomes.iter().map(|r| r.patient_id.clone()).collect()
    }
}

pub fn load_cohort(dir: impl AsRef<Path>) -> Result<CohortData> {
    let dir = dir.as_ref();
    let mut clinical = read_clinical(dir.join("clinical.csv"))?;
    let mut outcomes = read_outcomes(dir.join("outcomes.csv"))?;
    clinical.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    outcomes.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let a: Vec<&str> = clinical.iter().map(|r| r.patient_id.as_str()).collect();
    let b: Vec<&str> = outcomes.iter().map(|r| r.patient_id.as_str()).collect();
    if a != b {
        return Err(Error::Cohort(
            "clinical.csv and outcomes.csv list different patients".into(),
        ));
    }
    if b.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Cohort("duplicate patient in outcomes.csv".into()));
    }
    if clinical.is_empty() {
        return Err(Error::Cohort("empty cohort".into()));
    }
    Ok(CohortData {
        dir: dir.to_path_buf(),
        clinical,
        outcomes,
    })
}

/// Co-registered images and merged mask on one isotropic lattice.
#[derive(Clone, Debug)]
pub struct PreparedCase {
    pub ct: VoxelGrid,
    pub pet: VoxelGrid,
    pub mask: Mask,
}

/// Resample CT and PET (spline) and labels (nearest) to `spacing`, merge the
/// labels and crop all three to the box covering both CT and PET.
pub fn preprocess(
    ct: &VoxelGrid,
    pet: &VoxelGrid,
    labels: &crate::volume::LabelMap,
    spacing: f64,
) -> Result<PreparedCase> {
    if labels.geometry() != ct.geometry() {
        return Err(Error::Argument(
            "label map must share the CT geometry".into(),
        ));
    }
    let t = [spacing; 3];
    let ct = resample(ct, t, Interpolation::Spline)?;
    let pet = resample(pet, t, Interpolation::Spline)?;
    let mask = resample(&merge_labels(labels)?, t, Interpolation::Nearest)?;
    let bbox = union_bounding_box(&ct, &pet);
    let ct = crop(&ct, &bbox, PAD_CT)?;
    let pet = crop(&pet, &bbox, PAD_PET)?;
    let mask = crop(&mask, &bbox, false)?;
    if ct.geometry() != pet.geometry() {
        return Err(Error::Argument(format!(
            "CT and PET lattices do not coincide after resampling (origins {:?} vs {:?})",
            ct.geometry().origin,
            pet.geometry().origin
        )));
    }
    Ok(PreparedCase { ct, pet, mask })
}

/// Shrink a prepared case to the mask's bounding box plus `margin` voxels,
/// clipped to the lattice. Features are unchanged as long as the margin
/// covers any later dilation.
pub fn crop_to_roi(case: &PreparedCase, margin: usize) -> Result<PreparedCase> {
    let g = *case.mask.geometry();
    let fg = case.mask.foreground();
    if fg.is_empty() {
        return Ok(case.clone());
    }
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for i in fg {
        let c = g.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let lo = [0, 1, 2].map(|a| lo[a].saturating_sub(margin));
    let hi = [0, 1, 2].map(|a| (hi[a] + margin).min(g.dims[a] - 1));
    let bbox = BoundingBox::new(
        [0, 1, 2].map(|a| g.origin[a] + (lo[a] as f64 - 0.5) * g.spacing[a]),
        [0, 1, 2].map(|a| g.origin[a] + (hi[a] as f64 + 0.5) * g.spacing[a]),
    )?;
    Ok(PreparedCase {
        ct: crop(&case.ct, &bbox, PAD_CT)?,
        pet: crop(&case.pet, &bbox, PAD_PET)?,
        mask: crop(&case.mask, &bbox, false)?,
    })
}

pub fn load_case(dir: &Path, patient_id: &str, spacing: f64) -> Result<PreparedCase> {
    let ct = read_volume(dir.join("volumes").join(format!("{patient_id}_ct.nii")))?;
    let pet = read_volume(dir.join("volumes").join(format!("{patient_id}_pet.nii")))?;
    let labels = read_labels(dir.join("labels").join(format!("{patient_id}.nii")))?;
    preprocess(&ct, &pet, &labels, spacing)
}

/// CT and PET features for one case, or the ROI-level error that stopped extraction.
pub fn extract_case(
    case: &PreparedCase,
    variant: MaskVariant,
    cfg: &StudyConfig,
) -> Result<(FeatureVector, FeatureVector)> {
    let m = variant.apply(&case.mask)?;
    let ct = extract_all(&case.ct, &m, &cfg.extraction_params("CT"))?;
    let pet = extract_all(&case.pet, &m, &cfg.extraction_params("PET"))?;
    Ok((ct, pet))
}

fn is_roi_failure(e: &Error) -> bool {
    matches!(e, Error::EmptyRoi(_) | Error::DegenerateTexture(_))
}

/// Extract every patient under one mask variant and tag the survivors at
/// cohort level. ROI failures become exclusions; other errors abort.
pub fn extract_variant(
    cases: &[(String, PreparedCase)],
    variant: MaskVariant,
    cfg: &StudyConfig,
) -> Result<Vec<(String, std::result::Result<FeatureVector, Exclusion>)>> {
    let raw: Vec<Result<(FeatureVector, FeatureVector)>> = cases
        .par_iter()
        .map(|(_, c)| extract_case(c, variant, cfg))
        .collect();
    let mut ok_ct = Vec::new();
    let mut ok_pet = Vec::new();
    let mut slots = Vec::with_capacity(cases.len());
    for ((id, _), r) in cases.iter().zip(raw) {
        match r {
            Ok((ct, pet)) => {
                slots.push(None);
                ok_ct.push(ct);
                ok_pet.push(pet);
            }
            Err(e) if is_roi_failure(&e) => slots.push(Some(Exclusion::from_error(
                id,
                &e.with_context(format!("patient {id}")),
            ))),
            Err(e) => return Err(e),
        }
    }
    let mut tagged = tag_cohort(&ok_ct, &ok_pet)?.into_iter();
    Ok(cases
        .iter()
        .zip(slots)
        .map(|((id, _), slot)| {
            let r = match slot {
                Some(x) => Err(x),
                None => Ok(tagged.next().expect("one tagged vector per success")),
            };
            (id.clone(), r)
        })
        .collect())
}

/// Event-stratified split of the whole cohort, as patient-id sets.
pub fn cohort_split(outcomes: &[SurvivalRecord], cfg: &StudyConfig) -> Result<[Vec<String>; 3]> {
    let mut sorted = outcomes.to_vec();
    sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let s = train_val_test_split(&sorted, cfg.split, cfg.seed)?;
    let ids = |v: &[usize]| v.iter().map(|&i| sorted[i].patient_id.clone()).collect();
    Ok([ids(&s.train), ids(&s.validation), ids(&s.test)])
}

fn cindex_of(
    dm: &DesignMatrix,
    beta: &[f64],
    cols: &[usize],
    y: &BTreeMap<&str, &SurvivalRecord>,
) -> Option<f64> {
    if dm.n_rows() == 0 {
        return None;
    }
    let scores: Vec<f64> = (0..dm.n_rows())
        .map(|i| {
            cols.iter()
                .zip(beta)
                .map(|(&j, b)| b * dm.values[(i, j)])
                .sum()
        })
        .collect();
    let recs: Vec<SurvivalRecord> = dm
        .patient_ids
        .iter()
        .map(|id| y[id.as_str()].clone())
        .collect();
    concordance_index(&scores, &recs).ok()
}

/// Assemble, standardise on the training rows, select by CV, refit and score
/// one cell. `entries` carries clinical and tagged imaging features per patient.
pub fn evaluate_cell(
    spec: ExperimentSpec,
    entries: &[CohortEntry],
    outcomes: &[SurvivalRecord],
    cfg: &StudyConfig,
) -> Result<ResultRow> {
    let (dm, exclusions) = assemble_design_matrix(entries, &spec.features.blocks())?;
    let n_total = entries.len();
    let mut row = ResultRow {
        spec,
        status: "ok".into(),
        n_patients: dm.n_rows(),
        n_excluded: exclusions.len(),
        exclusions,
        selected: vec![],
        lambda: None,
        c_index_train: None,
        c_index_validation: None,
        c_index_test: None,
    };
    if (dm.n_rows() as f64) < cfg.min_included_fraction * n_total as f64 {
        row.status = "extraction failed".into();
        return Ok(row);
    }
    let y: BTreeMap<&str, &SurvivalRecord> = outcomes
        .iter()
        .map(|r| (r.patient_id.as_str(), r))
        .collect();
    let included: HashSet<&str> = dm.patient_ids.iter().map(String::as_str).collect();
    let [train, val, test] = cohort_split(outcomes, cfg)?;
    let keep = |ids: &[String]| -> Vec<String> {
        ids.iter()
            .filter(|id| included.contains(id.as_str()))
            .cloned()
            .collect()
    };
    let (train, val, test) = (keep(&train), keep(&val), keep(&test));
    for x in &row.exclusions {
        debug_assert!(!train.contains(&x.patient_id) && !test.contains(&x.patient_id));
    }

    let (xtr, st) = standardize(&dm.select_rows(&train)?);
    let xva = st.apply(&dm.select_rows(&val)?)?;
    let xte = st.apply(&dm.select_rows(&test)?)?;
    let ytr: Vec<SurvivalRecord> = train.iter().map(|id| y[id.as_str()].clone()).collect();
    let sel = select_features_cv(&xtr.values, &ytr, &xtr.column_names, &cfg.cv_options())?;
    let cols = sel.selected_indices.clone();
    let beta = sel.model.beta.clone();
    row.selected = sel.selected;
    row.lambda = Some(sel.lambda);
    row.c_index_train = cindex_of(&xtr, &beta, &cols, &y);
    row.c_index_validation = cindex_of(&xva, &beta, &cols, &y);
    row.c_index_test = cindex_of(&xte, &beta, &cols, &y);
    if row.c_index_train.is_none() || row.c_index_test.is_none() {
        row.status = "undefined".into();
    }
    Ok(row)
}

fn clinical_entries(data: &CohortData) -> Vec<(String, FeatureVector)> {
    let enc = encode_cohort(&data.clinical);
    data.clinical
        .iter()
        .map(|r| r.patient_id.clone())
        .zip(enc.vectors)
        .collect()
}

fn entries_for(
    clinical: &[(String, FeatureVector)],
    imaging: Option<&[(String, std::result::Result<FeatureVector, Exclusion>)]>,
) -> Vec<CohortEntry> {
    clinical
        .iter()
        .enumerate()
        .map(|(i, (id, c))| CohortEntry {
            patient_id: id.clone(),
            clinical: c.clone(),
            imaging: match imaging {
                Some(im) => im[i].1.clone(),
                None => Ok(FeatureVector::new()),
            },
        })
        .collect()
}

/// Load and preprocess every case, cropped with room for `margin` voxels of dilation.
pub fn prepare_cases(
    data: &CohortData,
    cfg: &StudyConfig,
    margin: usize,
) -> Result<Vec<(String, PreparedCase)>> {
    data.ids()
        .par_iter()
        .map(|id| {
            let c = load_case(&data.dir, id, cfg.target_spacing)?;
            Ok((id.clone(), crop_to_roi(&c, margin)?))
        })
        .collect()
}

/// Run one cell on a cohort directory. Uses the current rayon pool.
pub fn run_experiment(
    cohort_dir: impl AsRef<Path>,
    spec: ExperimentSpec,
    cfg: &StudyConfig,
) -> Result<ResultRow> {
    cfg.validate()?;
    let data = load_cohort(cohort_dir)?;
    let clinical = clinical_entries(&data);
    if !spec.features.uses_imaging() {
        return evaluate_cell(spec, &entries_for(&clinical, None), &data.outcomes, cfg);
    }
    let cases = prepare_cases(&data, cfg, spec.mask.radius() as usize + 1)?;
    let imaging = extract_variant(&cases, spec.mask, cfg)?;
    evaluate_cell(
        spec,
        &entries_for(&clinical, Some(&imaging)),
        &data.outcomes,
        cfg,
    )
}

/// Mask variants of the table in row order.
pub fn study_variants(cfg: &StudyConfig) -> Vec<MaskVariant> {
    let mut v = vec![MaskVariant::GroundTruth];
    v.extend(cfg.erode_radii.iter().map(|&r| MaskVariant::Eroded(r)));
    v.extend(cfg.dilate_radii.iter().map(|&r| MaskVariant::Dilated(r)));
    v
}

/// Table rows with the wall time spent on each, in row order.
pub struct StudyOutput {
    pub rows: Vec<ResultRow>,
    pub timings: Vec<(String, f64)>,
}

/// The clinical-only baseline followed by every imaging feature set under
/// every mask variant (13 rows with the default radii).
pub fn run_perturbation_study(
    cohort_dir: impl AsRef<Path>,
    cfg: &StudyConfig,
) -> Result<StudyOutput> {
    cfg.validate()?;
    let data = load_cohort(cohort_dir)?;
    let clinical = clinical_entries(&data);
    let variants = study_variants(cfg);
    let margin = variants.iter().map(|v| v.radius()).max().unwrap_or(0) as usize + 1;
    let mut timings = Vec::new();
    let t0 = Instant::now();
    let cases = prepare_cases(&data, cfg, margin)?;
    timings.push(("preprocess".to_string(), t0.elapsed().as_secs_f64()));

    let mut rows = Vec::new();
    let t = Instant::now();
    let spec = ExperimentSpec {
        features: FeatureSet::Clinical,
        mask: MaskVariant::GroundTruth,
    };
    rows.push(evaluate_cell(
        spec,
        &entries_for(&clinical, None),
        &data.outcomes,
        cfg,
    )?);
    timings.push((cell_name(&spec), t.elapsed().as_secs_f64()));
    for v in variants {
        let t = Instant::now();
        let imaging = extract_variant(&cases, v, cfg)?;
        timings.push((format!("extract {}", v.label()), t.elapsed().as_secs_f64()));
        let entries = entries_for(&clinical, Some(&imaging));
        for fs in FeatureSet::IMAGING {
            let t = Instant::now();
            let spec = ExperimentSpec {
                features: fs,
                mask: v,
            };
            rows.push(evaluate_cell(spec, &entries, &data.outcomes, cfg)?);
            timings.push((cell_name(&spec), t.elapsed().as_secs_f64()));
        }
    }
    Ok(StudyOutput { rows, timings })
}

fn cell_name(spec: &ExperimentSpec) -> String {
    format!("{} / {}", spec.features.label(), spec.mask.label())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub const RESULT_COLUMNS: [&str; 12] = [
    "model",
    "mask",
    "status",
    "n_patients",
    "n_excluded",
    "exclusions",
    "n_selected",
    "selected",
    "lambda",
    "c_index_train",
    "c_index_validation",
    "c_index_test",
];

/// One CSV line per row; exclusions as `id:reason` joined by `;`.
pub fn write_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        let ex: Vec<String> = r
            .exclusions
            .iter()
            .map(|x| format!("{}:{}", x.patient_id, x.reason))
            .collect();
        w.write_record([
            r.spec.features.label().to_string(),
            r.spec.mask.label(),
            r.status.clone(),
            r.n_patients.to_string(),
            r.n_excluded.to_string(),
            ex.join(";"),
            r.n_selected().to_string(),
            r.selected.join(";"),
            fmt_opt(r.lambda),
            fmt_opt(r.c_index_train),
            fmt_opt(r.c_index_validation),
            fmt_opt(r.c_index_test),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table for terminals.
pub fn render_table(rows: &[ResultRow]) -> String {
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            let c = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
            let (train, test) = if r.status == "extraction failed" {
                (
                    "extraction failed".to_string(),
                    "extraction failed".to_string(),
                )
            } else {
                (c(r.c_index_train), c(r.c_index_test))
            };
            [
                r.spec.features.label().to_string(),
                r.spec.mask.label(),
                train,
                test,
                r.n_selected().to_string(),
                r.n_patients.to_string(),
                r.n_excluded.to_string(),
            ]
        })
        .collect();
    let header = [
        "Model",
        "Mask",
        "C-index (Train)",
        "C-index (Test)",
        "Selected",
        "Patients",
        "Excluded",
    ];
    let widths: Vec<usize> = (0..7)
        .map(|j| {
            cells
                .iter()
                .map(|c| c[j].len())
                .chain([header[j].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, vals: &[&str]| {
        let parts: Vec<String> = vals
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for c in &cells {
        line(&mut out, &c.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Contents of `manifest.json` written next to every run's outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub timings: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new<C: Serialize>(
        command: &str,
        seed: u64,
        config: &C,
        timings: Vec<(String, f64)>,
    ) -> Result<Self> {
        let json = serde_json::to_string(config)?;
        Ok(RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash: Sha256::digest(json.as_bytes())
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect(),
            config: serde_json::from_str(&json)?,
            timings,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Feature-level variant of a cell: imaging features are given directly.
pub fn evaluate_features(
    features: FeatureSet,
    clinical: &[ClinicalRecord],
    imaging: &[(String, FeatureVector)],
    outcomes: &[SurvivalRecord],
    cfg: &StudyConfig,
) -> Result<ResultRow> {
    let enc = encode_cohort(clinical);
    let im: BTreeMap<&str, &FeatureVector> =
        imaging.iter().map(|(id, f)| (id.as_str(), f)).collect();
    let entries: Vec<CohortEntry> = clinical
        .iter()
        .zip(enc.vectors)
        .map(|(r, c)| {
            let f = im
                .get(r.patient_id.as_str())
                .ok_or_else(|| Error::Cohort(format!("no imaging for {}", r.patient_id)))?;
            Ok(CohortEntry {
                patient_id: r.patient_id.clone(),
                clinical: c,
                imaging: Ok((*f).clone()),
            })
        })
        .collect::<Result<_>>()?;
    evaluate_cell(
        ExperimentSpec {
            features,
            mask: MaskVariant::GroundTruth,
        },
        &entries,
        outcomes,
        cfg,
    )
}

/// Risk scores of rows of a design matrix under `beta` over `cols`.
pub fn linear_scores(x: &DMatrix<f64>, cols: &[usize], beta: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| cols.iter().zip(beta).map(|(&j, b)| b * x[(i, j)]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{write_cohort, PhantomParams};
    use crate::volume::{Geometry, LabelMap};

    #[test]
    fn blocks_per_feature_set() {
        assert_eq!(FeatureSet::Clinical.blocks(), vec![Block::Clinical]);
        assert_eq!(FeatureSet::CtPetClinical.blocks().len(), 4);
        let cfg = StudyConfig::default();
        assert_eq!(study_variants(&cfg).len(), 4);
        assert_eq!(1 + 3 * study_variants(&cfg).len(), 13);
    }

    #[test]
    fn preprocess_aligns_lattices() {
        let cg = Geometry::new([8, 8, 8], [2.0; 3], [0.0; 3]).unwrap();
        let pg = Geometry::new([4, 4, 5], [4.0; 3], [0.0; 3]).unwrap();
        let ct = VoxelGrid::filled(cg, 40.0);
        let pet = VoxelGrid::filled(pg, 1.5);
        let labels = LabelMap::from_fn(cg, |c| u8::from(c == [3, 3, 3]));
        let p = preprocess(&ct, &pet, &labels, 2.0).unwrap();
        assert_eq!(p.ct.geometry(), p.pet.geometry());
        assert_eq!(p.mask.geometry(), p.ct.geometry());
        // PET covers 2 mm further in z than CT: padded CT slices
        assert_eq!(p.ct.dims()[2], 10);
        assert!(p.ct.values().iter().any(|v| *v == PAD_CT));
        assert_eq!(p.mask.count(), 1);
        let r = crop_to_roi(&p, 1).unwrap();
        assert_eq!(r.mask.dims(), [3, 3, 3]);
        assert_eq!(r.mask.count(), 1);
    }

    #[test]
    fn parse_variants() {
        assert_eq!(
            "gt".parse::<MaskVariant>().unwrap(),
            MaskVariant::GroundTruth
        );
        assert_eq!(
            "dilated:2".parse::<MaskVariant>().unwrap(),
            MaskVariant::Dilated(2)
        );
        assert!("eroded:0".parse::<MaskVariant>().is_err());
        assert!("opened:1".parse::<MaskVariant>().is_err());
    }

    #[test]
    fn variants_are_monotone() {
        let g = Geometry::new([16; 3], [2.0; 3], [0.0; 3]).unwrap();
        let m = Mask::from_fn(g, |c| {
            c.iter().map(|&v| (v as f64 - 7.6).powi(2)).sum::<f64>() <= 16.0
        });
        let n = |v: MaskVariant| v.apply(&m).unwrap().count();
        assert!(n(MaskVariant::Eroded(1)) <= n(MaskVariant::GroundTruth));
        assert!(n(MaskVariant::GroundTruth) <= n(MaskVariant::Dilated(1)));
        assert!(n(MaskVariant::Dilated(1)) <= n(MaskVariant::Dilated(2)));
    }

    #[test]
    fn small_cohort_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let p = PhantomParams {
            n_patients: 40,
            dims: [28, 28, 28],
            semi_axes_range: [3.0, 5.0],
            fragile_fraction: 0.1,
            seed: 3,
            ..Default::default()
        };
        write_cohort(dir.path(), &p).unwrap();
        let cfg = StudyConfig {
            k: 4,
            lasso: LassoOptions {
                n_lambdas: 20,
                ..Default::default()
            },
            seed: 3,
            ..Default::default()
        };
        let spec = ExperimentSpec {
            features: FeatureSet::CtPetClinical,
            mask: MaskVariant::Eroded(2),
        };
        let row = run_experiment(dir.path(), spec, &cfg).unwrap();
        assert!(row.n_excluded >= 1);
        assert!(row.exclusions.iter().all(|x| x.reason == "EmptyRoiError"));
        assert_eq!(row.n_patients + row.n_excluded, 40);
        let again = run_experiment(dir.path(), spec, &cfg).unwrap();
        assert_eq!(row, again);

        let clin = ExperimentSpec {
            features: FeatureSet::Clinical,
            mask: MaskVariant::Dilated(1),
        };
        let a = run_experiment(dir.path(), clin, &cfg).unwrap();
        let b = run_experiment(
            dir.path(),
            ExperimentSpec {
                mask: MaskVariant::GroundTruth,
                ..clin
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(a.c_index_test, b.c_index_test);
        assert_eq!(a.n_excluded, 0);
    }

    #[test]
    fn table_rendering() {
        let row = ResultRow {
            spec: ExperimentSpec {
                features: FeatureSet::PetClinical,
                mask: MaskVariant::Eroded(2),
            },
            status: "extraction failed".into(),
            n_patients: 3,
            n_excluded: 7,
            exclusions: vec![],
            selected: vec![],
            lambda: None,
            c_index_train: None,
            c_index_validation: None,
            c_index_test: None,
        };
        let t = render_table(&[row.clone()]);
        assert!(t.lines().next().unwrap().starts_with("Model"));
        assert!(t.contains("extraction failed"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_results_csv(&p, &[row]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&RESULT_COLUMNS.join(",")));
        assert!(text.contains("PET + Clinical,Eroded r=2,extraction failed,3,7"));
    }
}
