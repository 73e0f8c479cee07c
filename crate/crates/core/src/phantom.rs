//! Synthetic cohorts with known hazards.
//!
//! Each patient has three latent scores `z` (standard units) that drive the
//! tumour size, the PET texture strength and the PET uptake. Survival times
//! follow `h(t) = h0 k t^(k-1) exp(beta . z)` (exponential for `k = 1`).
//! Every patient draws from its own ChaCha8 stream, so generation does not
//! depend on scheduling.

use std::fs;
use std::path::Path;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{write_clinical, ClinicalRecord, Gender};
use crate::error::{Error, Result};
use crate::radiomics::FeatureVector;
use crate::survival::{write_outcomes, SurvivalRecord};
use crate::volume::{write_labels, write_volume, Geometry, LabelMap, VoxelGrid};

const CENTERS: [&str; 5] = ["CHUM", "CHUS", "HGJ", "HMR", "CHUP"];

// stream offsets within one seed
const STREAM_IMAGE: u64 = 0;
const STREAM_SURVIVAL: u64 = 1 << 32;

fn patient_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn patient_id(index: usize) -> String {
    format!("P{:04}", index + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomParams {
    pub n_patients: usize,
    /// CT lattice size.
    pub dims: [usize; 3],
    pub ct_spacing: f64,
    pub pet_spacing: f64,
    /// PET slices beyond the CT field of view along z.
    pub pet_extra_slices: usize,
    /// Range of the mean tumour semi-axis, in CT voxels.
    pub semi_axes_range: [f64; 2],
    /// Fraction of patients given a radius-2-voxel sphere instead.
    pub fragile_fraction: f64,
    pub ct_sigma_range: [f64; 2],
    pub pet_sigma_range: [f64; 2],
    pub uptake_range: [f64; 2],
    /// Add a small nodal volume (label 2).
    pub nodal: bool,
    /// Coefficients on the latent (size, PET texture, PET uptake) scores.
    pub beta: [f64; 3],
    /// Baseline hazard scale, per day.
    pub h0: f64,
    pub weibull_shape: f64,
    /// Administrative censoring time, days.
    pub horizon: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            n_patients: 100,
            dims: [64, 64, 64],
            ct_spacing: 2.0,
            pet_spacing: 4.0,
            pet_extra_slices: 4,
            semi_axes_range: [4.0, 9.0],
            fragile_fraction: 0.0,
            ct_sigma_range: [5.0, 40.0],
            pet_sigma_range: [0.2, 2.0],
            uptake_range: [2.0, 12.0],
            nodal: false,
            beta: [1.0, -0.5, 0.8],
            h0: 5e-4,
            weibull_shape: 1.0,
            horizon: 1825.0,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1]) {
        return Err(Error::Argument(format!(
            "{name} must satisfy {min} <= lo <= hi, got {r:?}"
        )));
    }
    Ok(())
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::Argument("n_patients must be positive".into()));
        }
        if !(self.ct_spacing > 0.0 && self.pet_spacing > 0.0) {
            return Err(Error::Argument("spacings must be positive".into()));
        }
        check_range("semi_axes_range", self.semi_axes_range, 1.0)?;
        check_range("ct_sigma_range", self.ct_sigma_range, 0.0)?;
        check_range("pet_sigma_range", self.pet_sigma_range, 0.0)?;
        check_range("uptake_range", self.uptake_range, 0.0)?;
        if !(0.0..=1.0).contains(&self.fragile_fraction) {
            return Err(Error::Argument(
                "fragile_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(self.h0 > 0.0 && self.weibull_shape > 0.0 && self.horizon > 0.0) {
            return Err(Error::Argument(
                "h0, weibull_shape and horizon must be positive".into(),
            ));
        }
        // the tumour (and node) must fit inside the body with a margin
        let reach =
            self.semi_axes_range[1] * 1.15f64.powi(2) + if self.nodal { 10.0 } else { 0.0 } + 3.0;
        if self.dims.iter().any(|&d| (d as f64) / 2.0 < reach) {
            return Err(Error::Argument(format!(
                "grid {:?} too small for tumours of semi-axis {}",
                self.dims, self.semi_axes_range[1]
            )));
        }
        Ok(())
    }

    pub fn ct_geometry(&self) -> Geometry {
        Geometry::new(self.dims, [self.ct_spacing; 3], [0.0; 3]).expect("validated")
    }

    /// Same origin as CT, coarser spacing, longer in z.
    pub fn pet_geometry(&self) -> Geometry {
        let n = |d: usize| ((d as f64 * self.ct_spacing / self.pet_spacing) - 1e-9).ceil() as usize;
        let dims = [
            n(self.dims[0]),
            n(self.dims[1]),
            n(self.dims[2]) + self.pet_extra_slices,
        ];
        Geometry::new(dims, [self.pet_spacing; 3], [0.0; 3]).expect("validated")
    }
}

/// Ground truth behind one synthetic patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratingFeatures {
    pub patient_id: String,
    /// Latent (size, PET texture, PET uptake) scores, each with zero mean and unit variance.
    pub z: [f64; 3],
    pub semi_axes: [f64; 3],
    pub center: [f64; 3],
    pub ct_sigma: f64,
    pub pet_sigma: f64,
    pub uptake: f64,
    pub fragile: bool,
    pub primary_voxels: usize,
    pub nodal_voxels: usize,
}

#[derive(Clone, Debug)]
pub struct PhantomCase {
    pub ct: VoxelGrid,
    pub pet: VoxelGrid,
    pub labels: LabelMap,
    pub truth: GeneratingFeatures,
    pub clinical: ClinicalRecord,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn lerp(r: [f64; 2], u: f64) -> f64 {
    r[0] + u * (r[1] - r[0])
}

/// Unit-variance correlated noise: white Gaussian noise smoothed by a
/// separable (1, 2, 1) / 4 kernel, edges clamped.
fn texture(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dims.iter().product()).map(|_| normal(rng)).collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for a in 0..3 {
        let src = v.clone();
        for (i, out) in v.iter_mut().enumerate() {
            let c = (i / strides[a]) % dims[a];
            let prev = if c > 0 { src[i - strides[a]] } else { src[i] };
            let next = if c + 1 < dims[a] {
                src[i + strides[a]]
            } else {
                src[i]
            };
            *out = 0.25 * prev + 0.5 * src[i] + 0.25 * next;
        }
    }
    // variance of the interior response is (3/8)^3
    let k = (0.375f64).powi(3).sqrt();
    v.iter_mut().for_each(|x| *x /= k);
    v
}

fn inside_ellipsoid(p: [f64; 3], c: [f64; 3], axes: [f64; 3]) -> bool {
    (0..3)
        .map(|a| ((p[a] - c[a]) / axes[a]).powi(2))
        .sum::<f64>()
        <= 1.0
}

/// One patient's images, labels, clinical record and generating truth.
pub fn generate_case(params: &PhantomParams, index: usize) -> Result<PhantomCase> {
    params.validate()?;
    if index >= params.n_patients {
        return Err(Error::Argument(format!(
            "patient index {index} >= {}",
            params.n_patients
        )));
    }
    let mut rng = patient_rng(params.seed, STREAM_IMAGE + index as u64);
    let u: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
    let z = u.map(|v| (v - 0.5) * 12f64.sqrt());
    let fragile = rng.random::<f64>() < params.fragile_fraction;
    let (k1, k2) = (rng.random_range(0.85..1.15), rng.random_range(0.85..1.15));
    let r = lerp(params.semi_axes_range, u[0]);
    let semi_axes = if fragile {
        [2.0; 3]
    } else {
        [r * k1, r * k2, r / (k1 * k2)]
    };
    let pet_sigma = lerp(params.pet_sigma_range, u[1]);
    let uptake = lerp(params.uptake_range, u[2]);
    let ct_sigma = lerp(params.ct_sigma_range, rng.random::<f64>());
    // centre near the middle of the grid, off the lattice by a fraction of a voxel
    let center: [f64; 3] = std::array::from_fn(|a| {
        let mid = (params.dims[a] / 2) as f64 - if params.nodal && a == 0 { 5.0 } else { 0.0 };
        mid + rng.random_range(0.1..0.9)
    });
    let node_center = [center[0] + semi_axes[0] + 6.0, center[1], center[2]];

    let cg = params.ct_geometry();
    let body_axes = params.dims.map(|d| 0.45 * d as f64);
    let body_center = params.dims.map(|d| (d as f64 - 1.0) / 2.0);
    let mut labels = vec![0u8; cg.len()];
    for (i, l) in labels.iter_mut().enumerate() {
        let c = cg.coords(i).map(|v| v as f64);
        if inside_ellipsoid(c, center, semi_axes) {
            *l = 1;
        } else if params.nodal && inside_ellipsoid(c, node_center, [2.5; 3]) {
            *l = 2;
        }
    }
    let ct_tex = texture(params.dims, &mut rng);
    let ct: Vec<f64> = (0..cg.len())
        .map(|i| {
            let c = cg.coords(i).map(|v| v as f64);
            let n = 10.0 * normal(&mut rng);
            if labels[i] != 0 {
                60.0 + ct_sigma * ct_tex[i]
            } else if inside_ellipsoid(c, body_center, body_axes) {
                40.0 + n
            } else {
                -1000.0 + n
            }
        })
        .map(|v: f64| v as f32 as f64)
        .collect();

    let pg = params.pet_geometry();
    let pet_tex = texture(pg.dims, &mut rng);
    let scale = params.pet_spacing / params.ct_spacing;
    let pet: Vec<f64> = (0..pg.len())
        .map(|i| {
            // PET voxel centre in CT voxel units
            let c = pg.coords(i).map(|v| v as f64 * scale);
            let bg = (0.5 + 0.05 * normal(&mut rng)).max(0.0);
            let in_node = params.nodal && inside_ellipsoid(c, node_center, [2.5; 3]);
            if inside_ellipsoid(c, center, semi_axes) || in_node {
                (uptake + pet_sigma * pet_tex[i]).max(0.0)
            } else {
                bg
            }
        })
        .map(|v: f64| v as f32 as f64)
        .collect();

    let id = patient_id(index);
    let truth = GeneratingFeatures {
        patient_id: id.clone(),
        z,
        semi_axes,
        center,
        ct_sigma,
        pet_sigma,
        uptake,
        fragile,
        primary_voxels: labels.iter().filter(|&&l| l == 1).count(),
        nodal_voxels: labels.iter().filter(|&&l| l == 2).count(),
    };
    let clinical = clinical_record(&id, z, &mut rng);
    Ok(PhantomCase {
        ct: VoxelGrid::new(cg, ct)?,
        pet: VoxelGrid::new(pg, pet)?,
        labels: LabelMap::new(cg, labels)?,
        truth,
        clinical,
    })
}

/// Clinical variables weakly tied to the latent size and uptake scores.
fn clinical_record(id: &str, z: [f64; 3], rng: &mut ChaCha8Rng) -> ClinicalRecord {
    let mut r = ClinicalRecord::new(id);
    let mut missing = |p: f64| rng.random::<f64>() < p;
    let (m_age, m_weight, m_tob, m_alc, m_hpv, m_sur, m_che) = (
        missing(0.05),
        missing(0.1),
        missing(0.1),
        missing(0.1),
        missing(0.1),
        missing(0.1),
        missing(0.1),
    );
    r.gender = Some(if rng.random::<f64>() < 0.75 {
        Gender::M
    } else {
        Gender::F
    });
    let age = 62.0 + 8.0 * (0.5 * z[0] + 0.85 * normal(rng));
    r.age = (!m_age).then_some((age * 10.0).round() / 10.0);
    let weight = 75.0 + 12.0 * normal(rng);
    r.weight = (!m_weight).then_some((weight * 10.0).round() / 10.0);
    let tobacco = 0.5 * z[2] + normal(rng) > 0.0;
    let alcohol = rng.random::<f64>() < 0.4;
    let hpv = -0.6 * z[0] + 0.8 * normal(rng) > 0.0;
    let surgery = rng.random::<f64>() < 0.3;
    let chemo = rng.random::<f64>() < 0.6;
    r.tobacco = (!m_tob).then_some(tobacco);
    r.alcohol = (!m_alc).then_some(alcohol);
    r.hpv = (!m_hpv).then_some(hpv);
    r.surgery = (!m_sur).then_some(surgery);
    r.chemotherapy = (!m_che).then_some(chemo);
    r.performance_status = rng.random_range(0..3u8).to_string();
    r.center_id = CENTERS[rng.random_range(0..CENTERS.len())].to_string();
    r
}

/// Draw `T` by inverting the survival function, then censor at `horizon`.
pub fn simulate_survival_with(
    rng: &mut impl Rng,
    patient_id: &str,
    z: &[f64],
    beta: &[f64],
    h0: f64,
    weibull_shape: f64,
    horizon: f64,
) -> Result<SurvivalRecord> {
    if z.len() != beta.len() {
        return Err(Error::Argument(format!(
            "{} scores for {} coefficients",
            z.len(),
            beta.len()
        )));
    }
    if !(h0 > 0.0 && weibull_shape > 0.0 && horizon > 0.0) {
        return Err(Error::Argument(
            "h0, shape and horizon must be positive".into(),
        ));
    }
    let eta: f64 = z.iter().zip(beta).map(|(a, b)| a * b).sum();
    let u: f64 = rng.sample(Open01);
    let t = (-u.ln() / (h0 * eta.exp())).powf(1.0 / weibull_shape);
    // t underflows to 0 only for astronomically high risk
    let t = t.max(f64::MIN_POSITIVE);
    SurvivalRecord::new(patient_id, t.min(horizon), t <= horizon)
}

/// Exponential-baseline survival for one patient from a seed.
pub fn simulate_survival(
    z: &[f64],
    beta: &[f64],
    h0: f64,
    horizon: f64,
    seed: u64,
) -> Result<SurvivalRecord> {
    simulate_survival_with(
        &mut ChaCha8Rng::seed_from_u64(seed),
        "P",
        z,
        beta,
        h0,
        1.0,
        horizon,
    )
}

/// Contents of `truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortTruth {
    pub params: PhantomParams,
    pub patients: Vec<GeneratingFeatures>,
    /// `beta . z` per patient, the oracle risk score.
    pub linear_predictor: Vec<f64>,
}

/// Outcome for patient `index`, drawn from its own survival stream.
pub fn case_outcome(
    params: &PhantomParams,
    truth: &GeneratingFeatures,
    index: usize,
) -> Result<SurvivalRecord> {
    let mut rng = patient_rng(params.seed, STREAM_SURVIVAL + index as u64);
    simulate_survival_with(
        &mut rng,
        &truth.patient_id,
        &truth.z,
        &params.beta,
        params.h0,
        params.weibull_shape,
        params.horizon,
    )
}

/// Write a cohort directory: `volumes/<id>_ct.nii`, `volumes/<id>_pet.nii`,
/// `labels/<id>.nii`, `clinical.csv`, `outcomes.csv` and `truth.json`.
/// Patients are generated on the current rayon pool.
pub fn write_cohort(dir: impl AsRef<Path>, params: &PhantomParams) -> Result<CohortTruth> {
    params.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("volumes"))?;
    fs::create_dir_all(dir.join("labels"))?;
    let rows: Vec<(GeneratingFeatures, ClinicalRecord, SurvivalRecord)> = (0..params.n_patients)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let case = generate_case(params, i)?;
            let id = &case.truth.patient_id;
            write_volume(dir.join("volumes").join(format!("{id}_ct.nii")), &case.ct)?;
            write_volume(dir.join("volumes").join(format!("{id}_pet.nii")), &case.pet)?;
            write_labels(dir.join("labels").join(format!("{id}.nii")), &case.labels)?;
            let outcome = case_outcome(params, &case.truth, i)?;
            Ok((case.truth, case.clinical, outcome))
        })
        .collect::<Result<_>>()?;
    let clinical: Vec<ClinicalRecord> = rows.iter().map(|r| r.1.clone()).collect();
    let outcomes: Vec<SurvivalRecord> = rows.iter().map(|r| r.2.clone()).collect();
    write_clinical(dir.join("clinical.csv"), &clinical)?;
    write_outcomes(dir.join("outcomes.csv"), &outcomes)?;
    let patients: Vec<GeneratingFeatures> = rows.into_iter().map(|r| r.0).collect();
    let linear_predictor = patients
        .iter()
        .map(|p| p.z.iter().zip(&params.beta).map(|(a, b)| a * b).sum())
        .collect();
    let truth = CohortTruth {
        params: params.clone(),
        patients,
        linear_predictor,
    };
    fs::write(
        dir.join("truth.json"),
        serde_json::to_string_pretty(&truth)?,
    )?;
    Ok(truth)
}

/// Settings for a cohort simulated directly at the feature level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturePhantomParams {
    pub n_patients: usize,
    pub n_noise: usize,
    pub beta: [f64; 3],
    /// Standard deviation of the measurement error on informative features.
    pub measurement_noise: f64,
    pub h0: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for FeaturePhantomParams {
    fn default() -> Self {
        FeaturePhantomParams {
            n_patients: 300,
            n_noise: 27,
            beta: [1.0, -0.5, 0.8],
            measurement_noise: 0.1,
            h0: 5e-4,
            horizon: 1825.0,
            seed: 0,
        }
    }
}

/// Names of the three informative features in a feature-level cohort.
pub const INFORMATIVE_FEATURES: [&str; 3] = [
    "common.shape.voxel_volume",
    "pet.firstorder.variance",
    "pet.firstorder.mean",
];

#[derive(Clone, Debug)]
pub struct FeatureCohort {
    pub clinical: Vec<ClinicalRecord>,
    /// Tagged imaging features per patient: the three informative columns
    /// followed by noise columns alternating between `ct.` and `pet.`.
    pub imaging: Vec<(String, FeatureVector)>,
    pub outcomes: Vec<SurvivalRecord>,
    /// `beta . z` from the true latent scores.
    pub oracle_scores: Vec<f64>,
}

/// Latent scores are standard normal; the informative features observe them
/// with measurement error and the noise features are independent of everything.
pub fn simulate_feature_cohort(p: &FeaturePhantomParams) -> Result<FeatureCohort> {
    if p.n_patients == 0 || !(p.h0 > 0.0 && p.horizon > 0.0) || !(p.measurement_noise >= 0.0) {
        return Err(Error::Argument("invalid feature phantom parameters".into()));
    }
    let mut out = FeatureCohort {
        clinical: vec![],
        imaging: vec![],
        outcomes: vec![],
        oracle_scores: vec![],
    };
    for i in 0..p.n_patients {
        let id = patient_id(i);
        let mut rng = patient_rng(p.seed, STREAM_IMAGE + i as u64);
        let z: [f64; 3] = std::array::from_fn(|_| normal(&mut rng));
        let mut f = FeatureVector::new();
        for (k, name) in INFORMATIVE_FEATURES.iter().enumerate() {
            f.push(*name, z[k] + p.measurement_noise * normal(&mut rng))?;
        }
        for k in 0..p.n_noise {
            let modality = if k % 2 == 0 { "ct" } else { "pet" };
            f.push(format!("{modality}.noise.n{:02}", k + 1), normal(&mut rng))?;
        }
        out.clinical.push(clinical_record(&id, z, &mut rng));
        let mut srng = patient_rng(p.seed, STREAM_SURVIVAL + i as u64);
        out.outcomes.push(simulate_survival_with(
            &mut srng, &id, &z, &p.beta, p.h0, 1.0, p.horizon,
        )?);
        out.oracle_scores
            .push(z.iter().zip(&p.beta).map(|(a, b)| a * b).sum());
        out.imaging.push((id, f));
    }
    Ok(out)
}
