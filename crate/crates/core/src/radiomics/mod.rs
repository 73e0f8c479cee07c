//! Radiomics feature extraction from an image restricted to a binary mask.
//!
//! 36 features are produced per (image, mask) pair, in a fixed order:
//! 8 `shape.*`, 16 `firstorder.*`, 6 `glcm.*` and 6 `glszm.*`. Texture
//! features operate on intensities discretised with a fixed bin width,
//! `level = floor((x - min_roi) / width) + 1`.

mod firstorder;
mod glcm;
mod glszm;
mod shape;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Geometry, Mask, VoxelGrid};

pub use firstorder::first_order_features;
pub use glcm::{glcm_features, GLCM_DIRECTIONS};
pub use glszm::{glszm_features, size_zones};
pub use shape::{shape_features, surface_area};

/// Bin width used when none is configured.
pub const DEFAULT_BIN_WIDTH: f64 = 25.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub bin_width: f64,
    pub glcm_distance: u32,
    pub modality: String,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            bin_width: DEFAULT_BIN_WIDTH,
            glcm_distance: 1,
            modality: "CT".into(),
        }
    }
}

impl ExtractionParams {
    pub fn new(bin_width: f64, glcm_distance: u32, modality: impl Into<String>) -> Result<Self> {
        let p = ExtractionParams {
            bin_width,
            glcm_distance,
            modality: modality.into(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return Err(Error::Argument(format!(
                "bin_width must be > 0, got {}",
                self.bin_width
            )));
        }
        if self.glcm_distance < 1 {
            return Err(Error::Argument("glcm_distance must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ordered, uniquely named feature values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(String, f64)>,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::Data(format!(
                "feature {name} is not finite ({value})"
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::Data(format!("duplicate feature name {name}")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    /// Value of the `k`-th entry in emission order.
    pub fn value_at(&self, k: usize) -> f64 {
        self.entries[k].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, v)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }

    /// Copy with every name prefixed by `prefix.`.
    pub fn prefixed(&self, prefix: &str) -> FeatureVector {
        FeatureVector {
            entries: self
                .entries
                .iter()
                .map(|(n, v)| (format!("{prefix}.{n}"), *v))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: FeatureVector) -> Result<()> {
        for (n, v) in other.entries {
            self.push(n, v)?;
        }
        Ok(())
    }
}

impl FromIterator<(String, f64)> for FeatureVector {
    /// Builds without validation; prefer [`FeatureVector::push`] for untrusted input.
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        FeatureVector {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Gray levels of the ROI voxels after fixed-bin-width discretisation.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedRoi {
    geometry: Geometry,
    // dense over the lattice; 0 marks voxels outside the ROI
    dense: Vec<u32>,
    roi: Vec<usize>,
    n_levels: u32,
}

impl DiscretizedRoi {
    /// Build from explicit levels on a lattice (0 = outside the ROI).
    pub fn from_levels(geometry: Geometry, dense: Vec<u32>) -> Result<Self> {
        if dense.len() != geometry.len() {
            return Err(Error::Data("level array does not match geometry".into()));
        }
        let roi: Vec<usize> = dense
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l > 0).then_some(i))
            .collect();
        if roi.is_empty() {
            return Err(Error::EmptyRoi(None));
        }
        let n_levels = *dense.iter().max().unwrap();
        Ok(DiscretizedRoi {
            geometry,
            dense,
            roi,
            n_levels,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn n_levels(&self) -> u32 {
        self.n_levels
    }

    /// Number of ROI voxels.
    pub fn len(&self) -> usize {
        self.roi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roi.is_empty()
    }

    /// Linear indices of ROI voxels, ascending.
    pub fn voxel_indices(&self) -> &[usize] {
        &self.roi
    }

    /// Levels of the ROI voxels, aligned with [`voxel_indices`](Self::voxel_indices).
    pub fn levels(&self) -> Vec<u32> {
        self.roi.iter().map(|&i| self.dense[i]).collect()
    }

    #[inline]
    pub(crate) fn level_at(&self, idx: usize) -> u32 {
        self.dense[idx]
    }
}

fn check_pair(img: &VoxelGrid, m: &Mask) -> Result<()> {
    if img.geometry() != m.geometry() {
        return Err(Error::Argument(format!(
            "image geometry {:?} does not match mask geometry {:?}",
            img.geometry(),
            m.geometry()
        )));
    }
    if m.is_empty_roi() {
        return Err(Error::EmptyRoi(None));
    }
    Ok(())
}

/// Intensities of the foreground voxels, in lattice order.
pub(crate) fn roi_values(img: &VoxelGrid, m: &Mask) -> Result<Vec<f64>> {
    check_pair(img, m)?;
    Ok(m.foreground()
        .into_iter()
        .map(|i| img.values()[i])
        .collect())
}

pub fn discretize(img: &VoxelGrid, m: &Mask, bin_width: f64) -> Result<DiscretizedRoi> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::Argument(format!(
            "bin_width must be > 0, got {bin_width}"
        )));
    }
    let values = roi_values(img, m)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut dense = vec![0u32; img.geometry().len()];
    for i in m.foreground() {
        dense[i] = ((img.values()[i] - min) / bin_width).floor() as u32 + 1;
    }
    DiscretizedRoi::from_levels(*img.geometry(), dense)
}

/// Histogram probabilities of the discretised levels (levels with zero count omitted).
pub(crate) fn level_probabilities(d: &DiscretizedRoi) -> Vec<f64> {
    let mut counts = vec![0usize; d.n_levels() as usize + 1];
    for &i in d.voxel_indices() {
        counts[d.level_at(i) as usize] += 1;
    }
    let n = d.len() as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| c as f64 / n)
        .collect()
}

/// Canonical feature names in emission order, including family prefixes.
pub fn feature_names() -> Vec<String> {
    let mut out = Vec::with_capacity(36);
    out.extend(shape::NAMES.iter().map(|n| format!("shape.{n}")));
    out.extend(firstorder::NAMES.iter().map(|n| format!("firstorder.{n}")));
    out.extend(glcm::NAMES.iter().map(|n| format!("glcm.{n}")));
    out.extend(glszm::NAMES.iter().map(|n| format!("glszm.{n}")));
    out
}

/// All 36 features for one image/mask pair.
pub fn extract_all(img: &VoxelGrid, m: &Mask, params: &ExtractionParams) -> Result<FeatureVector> {
    params.validate()?;
    let ctx = |e: Error| e.with_context(format!("modality {}", params.modality));
    check_pair(img, m).map_err(ctx)?;
    let disc = discretize(img, m, params.bin_width).map_err(ctx)?;
    let mut out = shape_features(m).map_err(ctx)?.prefixed("shape");
    out.extend(
        first_order_features(img, m, params)
            .map_err(ctx)?
            .prefixed("firstorder"),
    )?;
    out.extend(
        glcm_features(&disc, params.glcm_distance)
            .map_err(ctx)?
            .prefixed("glcm"),
    )?;
    out.extend(glszm_features(&disc).map_err(ctx)?.prefixed("glszm"))?;
    Ok(out)
}
