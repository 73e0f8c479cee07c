//! Python bindings: volumes and masks, morphology, feature extraction, Cox
//! fitting, the concordance index, synthetic cohorts and the study grid.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

use radsurv::study::{ExperimentSpec, FeatureSet, MaskVariant, ResultRow, StudyConfig};
use radsurv::survival::{LassoOptions, SurvivalRecord};
use radsurv::{morphology, phantom, radiomics, study, survival, volume, Error};

create_exception!(
    radsurv,
    RadsurvError,
    PyException,
    "Domain error raised by the pipeline."
);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Argument(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => RadsurvError::new_err(format!("[{}] {e}", e.kind())),
    }
}

fn geometry(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> PyResult<radsurv::Geometry> {
    radsurv::Geometry::new(dims, spacing, origin).map_err(py_err)
}

/// Scalar volume on a regular lattice; values in x-fastest order.
#[pyclass(name = "VoxelGrid", frozen)]
struct PyVoxelGrid(radsurv::VoxelGrid);

#[pymethods]
impl PyVoxelGrid {
    #[new]
    #[pyo3(signature = (values, dims, spacing = [1.0; 3], origin = [0.0; 3]))]
    fn new(
        values: Vec<f64>,
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
    ) -> PyResult<Self> {
        Ok(PyVoxelGrid(
            radsurv::VoxelGrid::new(geometry(dims, spacing, origin)?, values).map_err(py_err)?,
        ))
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(PyVoxelGrid(volume::read_volume(path).map_err(py_err)?))
    }

    fn write(&self, path: &str) -> PyResult<()> {
        volume::write_volume(path, &self.0).map_err(py_err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.0.geometry().spacing
    }

    #[getter]
    fn origin(&self) -> [f64; 3] {
        self.0.geometry().origin
    }

    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    /// Resample to `spacing` mm with cubic B-splines (`nearest=True` for labels).
    #[pyo3(signature = (spacing, nearest = false))]
    fn resample(&self, spacing: [f64; 3], nearest: bool) -> PyResult<Self> {
        let how = if nearest {
            volume::Interpolation::Nearest
        } else {
            volume::Interpolation::Spline
        };
        Ok(PyVoxelGrid(
            volume::resample(&self.0, spacing, how).map_err(py_err)?,
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "VoxelGrid(dims={:?}, spacing={:?})",
            self.0.dims(),
            self.0.geometry().spacing
        )
    }
}

#[pyclass(name = "Mask", frozen)]
struct PyMask(radsurv::Mask);

#[pymethods]
impl PyMask {
    #[new]
    #[pyo3(signature = (values, dims, spacing = [1.0; 3], origin = [0.0; 3]))]
    fn new(
        values: Vec<bool>,
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
    ) -> PyResult<Self> {
        Ok(PyMask(
            radsurv::Mask::new(geometry(dims, spacing, origin)?, values).map_err(py_err)?,
        ))
    }

    /// Union of all non-zero labels in a label file.
    #[staticmethod]
    fn read_labels(path: &str) -> PyResult<Self> {
        let labels = volume::read_labels(path).map_err(py_err)?;
        Ok(PyMask(volume::merge_labels(&labels).map_err(py_err)?))
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    fn count(&self) -> usize {
        self.0.count()
    }

    fn values(&self) -> Vec<bool> {
        self.0.values().to_vec()
    }

    fn erode(&self, radius: u32) -> PyResult<Self> {
        Ok(PyMask(morphology::erode(
            &self.0,
            &morphology::ball_element(radius).map_err(py_err)?,
        )))
    }

    fn dilate(&self, radius: u32) -> PyResult<Self> {
        Ok(PyMask(morphology::dilate(
            &self.0,
            &morphology::ball_element(radius).map_err(py_err)?,
        )))
    }

    fn __repr__(&self) -> String {
        format!("Mask(dims={:?}, count={})", self.0.dims(), self.0.count())
    }
}

/// Offsets of the digitised ball of radius `r` voxels.
#[pyfunction]
fn ball_element(r: u32) -> PyResult<Vec<[i64; 3]>> {
    Ok(morphology::ball_element(r)
        .map_err(py_err)?
        .offsets()
        .to_vec())
}

/// The 36 features as an ordered `{name: value}` dict.
#[pyfunction]
#[pyo3(signature = (image, mask, bin_width = 25.0, glcm_distance = 1, modality = "CT"))]
fn extract_features(
    py: Python<'_>,
    image: &PyVoxelGrid,
    mask: &PyMask,
    bin_width: f64,
    glcm_distance: u32,
    modality: &str,
) -> PyResult<Vec<(String, f64)>> {
    let params =
        radiomics::ExtractionParams::new(bin_width, glcm_distance, modality).map_err(py_err)?;
    let f = py
        .detach(|| radiomics::extract_all(&image.0, &mask.0, &params))
        .map_err(py_err)?;
    Ok(f.iter().map(|(n, v)| (n.to_string(), v)).collect())
}

#[pyfunction]
fn feature_names() -> Vec<String> {
    radiomics::feature_names()
}

fn records(time: &[f64], event: &[bool]) -> PyResult<Vec<SurvivalRecord>> {
    if time.len() != event.len() {
        return Err(PyValueError::new_err("time and event lengths differ"));
    }
    time.iter()
        .zip(event)
        .enumerate()
        .map(|(i, (t, e))| SurvivalRecord::new(format!("s{i}"), *t, *e).map_err(py_err))
        .collect()
}

fn matrix(rows: &[Vec<f64>], n: usize) -> PyResult<DMatrix<f64>> {
    if rows.len() != n {
        return Err(PyValueError::new_err(format!(
            "{} rows for {n} subjects",
            rows.len()
        )));
    }
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("ragged covariate rows"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

/// Fit by Newton-Raphson; returns `{names, beta, converged, iterations, log_partial_likelihood}`.
#[pyfunction]
#[pyo3(signature = (x, time, event, names = None))]
fn cox_fit(
    x: Vec<Vec<f64>>,
    time: Vec<f64>,
    event: Vec<bool>,
    names: Option<Vec<String>>,
) -> PyResult<BTreeMap<String, Py<PyAny>>> {
    let y = records(&time, &event)?;
    let x = matrix(&x, y.len())?;
    let names = names.unwrap_or_else(|| (0..x.ncols()).map(|j| format!("x{j}")).collect());
    let m =
        survival::cox_fit(&x, &y, &names, &survival::CoxFitOptions::default()).map_err(py_err)?;
    Python::attach(|py| {
        let mut out = BTreeMap::new();
        out.insert(
            "names".into(),
            m.covariate_names.into_pyobject(py)?.into_any().unbind(),
        );
        out.insert("beta".into(), m.beta.into_pyobject(py)?.into_any().unbind());
        out.insert(
            "converged".into(),
            m.converged
                .into_pyobject(py)?
                .to_owned()
                .into_any()
                .unbind(),
        );
        out.insert(
            "iterations".into(),
            m.iterations.into_pyobject(py)?.into_any().unbind(),
        );
        out.insert(
            "log_partial_likelihood".into(),
            m.log_partial_likelihood
                .into_pyobject(py)?
                .into_any()
                .unbind(),
        );
        Ok(out)
    })
}

#[pyfunction]
fn concordance_index(scores: Vec<f64>, time: Vec<f64>, event: Vec<bool>) -> PyResult<f64> {
    survival::concordance_index(&scores, &records(&time, &event)?).map_err(py_err)
}

/// `(lambdas, betas)` along the LASSO-Cox path.
#[pyfunction]
#[pyo3(signature = (x, time, event, n_lambdas = 100, ratio = 0.01))]
fn lasso_path(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    time: Vec<f64>,
    event: Vec<bool>,
    n_lambdas: usize,
    ratio: f64,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let y = records(&time, &event)?;
    let x = matrix(&x, y.len())?;
    let opts = LassoOptions {
        n_lambdas,
        ratio,
        ..Default::default()
    };
    let path = py
        .detach(|| survival::lasso_cox_path(&x, &y, &opts))
        .map_err(py_err)?;
    Ok((path.lambdas, path.betas))
}

/// Write a synthetic cohort directory; returns the number of patients.
#[pyfunction]
#[pyo3(signature = (out_dir, n_patients = 100, seed = 0, dims = [64, 64, 64], fragile_fraction = 0.0))]
fn simulate_cohort(
    py: Python<'_>,
    out_dir: &str,
    n_patients: usize,
    seed: u64,
    dims: [usize; 3],
    fragile_fraction: f64,
) -> PyResult<usize> {
    let p = phantom::PhantomParams {
        n_patients,
        seed,
        dims,
        fragile_fraction,
        ..Default::default()
    };
    let truth = py
        .detach(|| phantom::write_cohort(out_dir, &p))
        .map_err(py_err)?;
    Ok(truth.patients.len())
}

fn row_dict(r: &ResultRow) -> BTreeMap<String, String> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    BTreeMap::from([
        ("model".into(), r.spec.features.label().to_string()),
        ("mask".into(), r.spec.mask.label()),
        ("status".into(), r.status.clone()),
        ("n_patients".into(), r.n_patients.to_string()),
        ("n_excluded".into(), r.n_excluded.to_string()),
        ("selected".into(), r.selected.join(";")),
        ("c_index_train".into(), opt(r.c_index_train)),
        ("c_index_test".into(), opt(r.c_index_test)),
    ])
}

fn feature_set(s: &str) -> PyResult<FeatureSet> {
    match s {
        "clinical" => Ok(FeatureSet::Clinical),
        "ct" => Ok(FeatureSet::CtClinical),
        "pet" => Ok(FeatureSet::PetClinical),
        "ct+pet" => Ok(FeatureSet::CtPetClinical),
        _ => Err(PyValueError::new_err(format!(
            "feature set {s:?}: expected clinical, ct, pet or ct+pet"
        ))),
    }
}

/// One table cell. `features` is clinical, ct, pet or ct+pet (clinical is always
/// included); `mask` is gt, eroded:R or dilated:R.
#[pyfunction]
#[pyo3(signature = (cohort_dir, features = "ct+pet", mask = "gt", seed = 0))]
fn run_experiment(
    py: Python<'_>,
    cohort_dir: &str,
    features: &str,
    mask: &str,
    seed: u64,
) -> PyResult<BTreeMap<String, String>> {
    let spec = ExperimentSpec {
        features: feature_set(features)?,
        mask: mask.parse::<MaskVariant>().map_err(py_err)?,
    };
    let cfg = StudyConfig {
        seed,
        ..Default::default()
    };
    let row = py
        .detach(|| study::run_experiment(cohort_dir, spec, &cfg))
        .map_err(py_err)?;
    Ok(row_dict(&row))
}

/// The 13-row segmentation-quality table as a list of dicts.
#[pyfunction]
#[pyo3(signature = (cohort_dir, seed = 0))]
fn run_perturbation_study(
    py: Python<'_>,
    cohort_dir: &str,
    seed: u64,
) -> PyResult<Vec<BTreeMap<String, String>>> {
    let cfg = StudyConfig {
        seed,
        ..Default::default()
    };
    let out = py
        .detach(|| study::run_perturbation_study(cohort_dir, &cfg))
        .map_err(py_err)?;
    Ok(out.rows.iter().map(row_dict).collect())
}

#[pymodule]
#[pyo3(name = "radsurv")]
fn radsurv_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RadsurvError", m.py().get_type::<RadsurvError>())?;
    m.add_class::<PyVoxelGrid>()?;
    m.add_class::<PyMask>()?;
    m.add_function(wrap_pyfunction!(ball_element, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(feature_names, m)?)?;
    m.add_function(wrap_pyfunction!(cox_fit, m)?)?;
    m.add_function(wrap_pyfunction!(concordance_index, m)?)?;
    m.add_function(wrap_pyfunction!(lasso_path, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_perturbation_study, m)?)?;
    Ok(())
}
