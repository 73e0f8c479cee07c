//! Volumetric data model: images, masks and label maps on an axis-aligned
//! voxel lattice, plus the preprocessing steps applied before extraction
//! (isotropic resampling, field-of-view cropping, label merging).
//!
//! Values are stored x-fastest: `index = x + nx * (y + ny * z)`.

mod nifti;
mod rawjson;
mod resample;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nifti::{read_nifti, write_nifti, NiftiDatatype};
pub use rawjson::{read_raw_json, write_raw_json};
pub use resample::{resample, Interpolation};

/// Crop pad value for CT (air in Hounsfield units).
pub const PAD_CT: f64 = -1024.0;
/// Crop pad value for PET.
pub const PAD_PET: f64 = 0.0;

/// Lattice geometry shared by every volume type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    /// mm per voxel.
    pub spacing: [f64; 3],
    /// World position (mm) of the centre of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Argument(format!(
                "dims must be positive, got {dims:?}"
            )));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Argument(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Argument(format!(
                "origin must be finite, got {origin:?}"
            )));
        }
        Ok(Geometry {
            dims,
            spacing,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Index of `(x, y, z) + offset` if it lies inside the lattice.
    #[inline]
    pub fn offset_index(&self, c: [usize; 3], o: [i64; 3]) -> Option<usize> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as i64 + o[a];
            if v < 0 || v >= self.dims[a] as i64 {
                return None;
            }
            out[a] = v as usize;
        }
        Some(self.index(out[0], out[1], out[2]))
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn world(&self, c: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + c[a] as f64 * self.spacing[a])
    }

    /// Full world-space extent, from the outer face of the first voxel to the
    /// outer face of the last one.
    pub fn extent(&self) -> BoundingBox {
        BoundingBox {
            min_corner: [0, 1, 2].map(|a| self.origin[a] - 0.5 * self.spacing[a]),
            max_corner: [0, 1, 2]
                .map(|a| self.origin[a] + (self.dims[a] as f64 - 0.5) * self.spacing[a]),
        }
    }
}

/// Per-voxel scalar type stored in a [`Volume`].
pub trait Voxel: Copy + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    /// Whether cubic B-spline interpolation is meaningful for this type.
    const SPLINE: bool;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn is_valid(self) -> bool {
        true
    }
}

impl Voxel for f64 {
    const SPLINE: bool = true;
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn is_valid(self) -> bool {
        self.is_finite()
    }
}

impl Voxel for bool {
    const SPLINE: bool = false;
    fn to_f64(self) -> f64 {
        if self {
            1.0
        } else {
            0.0
        }
    }
    fn from_f64(v: f64) -> Self {
        v >= 0.5
    }
}

impl Voxel for u8 {
    const SPLINE: bool = false;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }
}

/// A 3D array of voxels with world geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    geometry: Geometry,
    values: Vec<T>,
}

/// Scalar intensity image (CT in HU, PET uptake).
pub type VoxelGrid = Volume<f64>;
/// Binary region of interest.
pub type Mask = Volume<bool>;
/// Annotation labels: 0 background, 1 GTVp, 2 GTVn.
pub type LabelMap = Volume<u8>;

impl<T: Voxel> Volume<T> {
    pub fn new(geometry: Geometry, values: Vec<T>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::Data(format!(
                "dims {:?} need {} values, got {}",
                geometry.dims,
                geometry.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_valid()) {
            return Err(Error::Data(format!("non-finite voxel value at index {i}")));
        }
        Ok(Volume { geometry, values })
    }

    pub fn filled(geometry: Geometry, value: T) -> Self {
        Volume {
            values: vec![value; geometry.len()],
            geometry,
        }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut([usize; 3]) -> T) -> Self {
        let values = (0..geometry.len()).map(|i| f(geometry.coords(i))).collect();
        Volume { geometry, values }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.values[self.geometry.index(x, y, z)]
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            geometry: self.geometry,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl VoxelGrid {
    /// Add a constant to every voxel.
    pub fn shifted(&self, c: f64) -> VoxelGrid {
        self.map(|v| v + c)
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_empty_roi(&self) -> bool {
        !self.values.iter().any(|&v| v)
    }

    /// Linear indices of foreground voxels, ascending.
    pub fn foreground(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
            .collect()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.values
            .iter()
            .zip(&other.values)
            .all(|(&a, &b)| !a || b)
    }

    pub fn complement(&self) -> Mask {
        self.map(|v| !v)
    }
}

/// Axis-aligned world-space box (mm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_corner: [f64; 3],
    pub max_corner: [f64; 3],
}

impl BoundingBox {
    pub fn new(min_corner: [f64; 3], max_corner: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(min_corner[a] <= max_corner[a])) {
            return Err(Error::Argument(format!(
                "bounding box min {min_corner:?} exceeds max {max_corner:?}"
            )));
        }
        Ok(BoundingBox {
            min_corner,
            max_corner,
        })
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            min_corner: [0, 1, 2].map(|a| self.min_corner[a].min(other.min_corner[a])),
            max_corner: [0, 1, 2].map(|a| self.max_corner[a].max(other.max_corner[a])),
        }
    }
}

/// Smallest box containing the full extents of both volumes.
pub fn union_bounding_box<A, B>(a: &Volume<A>, b: &Volume<B>) -> BoundingBox {
    a.geometry.extent().union(&b.geometry.extent())
}

// Snap to the nearest integer when within rounding noise, so that box faces
// placed exactly on voxel boundaries behave predictably.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Restrict (or extend) a volume to the voxels of its lattice whose centres
/// fall in `[min, max)` of the box. Voxels outside the source are set to `pad`.
pub fn crop<T: Voxel>(vol: &Volume<T>, bbox: &BoundingBox, pad: T) -> Result<Volume<T>> {
    let g = &vol.geometry;
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for a in 0..3 {
        let u = snap((bbox.min_corner[a] - g.origin[a]) / g.spacing[a]);
        let v = snap((bbox.max_corner[a] - g.origin[a]) / g.spacing[a]);
        lo[a] = u.ceil() as i64;
        hi[a] = v.ceil() as i64;
        if hi[a] <= lo[a] {
            return Err(Error::Argument(format!(
                "bounding box contains no voxel centres on axis {a}"
            )));
        }
        if hi[a] <= 0 || lo[a] >= g.dims[a] as i64 {
            return Err(Error::Argument(
                "bounding box does not overlap the volume".into(),
            ));
        }
    }
    let dims = [0, 1, 2].map(|a| (hi[a] - lo[a]) as usize);
    let origin = [0, 1, 2].map(|a| g.origin[a] + lo[a] as f64 * g.spacing[a]);
    let out_geom = Geometry::new(dims, g.spacing, origin)?;
    let out = Volume::from_fn(out_geom, |c| {
        let src = [0, 1, 2].map(|a| c[a] as i64 + lo[a]);
        if (0..3).all(|a| src[a] >= 0 && src[a] < g.dims[a] as i64) {
            vol.get(src[0] as usize, src[1] as usize, src[2] as usize)
        } else {
            pad
        }
    });
    Ok(out)
}

/// Union of GTVp (1) and GTVn (2) as a single binary mask.
pub fn merge_labels(labels: &LabelMap) -> Result<Mask> {
    if let Some(bad) = labels.values.iter().find(|&&l| l > 2) {
        return Err(Error::Data(format!("label {bad} outside {{0,1,2}}")));
    }
    Ok(labels.map(|l| l == 1 || l == 2))
}

fn extension(path: &Path) -> String {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.to_ascii_lowercase())
        .unwrap_or_default()
}

/// Read a scalar volume from a `.nii` file or a raw-JSON fixture (`.json`).
pub fn read_volume(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let path = path.as_ref();
    let name = extension(path);
    if name.ends_with(".nii.gz") {
        return Err(Error::Format(
            "compressed NIfTI (.nii.gz) is not supported; decompress to .nii first".into(),
        ));
    }
    if name.ends_with(".json") {
        read_raw_json(path)
    } else {
        read_nifti(path)
    }
}

/// Write a scalar volume; `.json` selects the raw-JSON fixture format,
/// anything else is written as single-file float32 NIfTI-1.
pub fn write_volume(path: impl AsRef<Path>, grid: &VoxelGrid) -> Result<()> {
    let path = path.as_ref();
    if extension(path).ends_with(".json") {
        write_raw_json(path, grid)
    } else {
        write_nifti(path, grid, NiftiDatatype::Float32)
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let grid = read_volume(path)?;
    if let Some(v) = grid
        .values()
        .iter()
        .find(|v| v.fract() != 0.0 || **v < 0.0 || **v > 255.0)
    {
        return Err(Error::Data(format!(
            "label value {v} is not a small non-negative integer"
        )));
    }
    Ok(grid.map(|v| v as u8))
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_nifti(
        path.as_ref(),
        &labels.map(|v| v as f64),
        NiftiDatatype::Uint8,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(dims: [usize; 3]) -> Geometry {
        Geometry::new(dims, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn union_of_identical_extents_is_own_extent() {
        let g = VoxelGrid::filled(geom([4, 5, 6]), 1.0);
        assert_eq!(union_bounding_box(&g, &g), g.geometry().extent());
    }

    #[test]
    fn union_of_overlapping_and_disjoint_intervals() {
        // 10 voxels at 1mm, origin 0.5 -> extent [0,10]
        let a = VoxelGrid::filled(
            Geometry::new([10, 1, 1], [1.0; 3], [0.5, 0.5, 0.5]).unwrap(),
            0.0,
        );
        let b = VoxelGrid::filled(
            Geometry::new([15, 1, 1], [1.0; 3], [5.5, 0.5, 0.5]).unwrap(),
            0.0,
        );
        let bb = union_bounding_box(&a, &b);
        assert_eq!(bb.min_corner[0], 0.0);
        assert_eq!(bb.max_corner[0], 20.0);

        let a = VoxelGrid::filled(
            Geometry::new([5, 1, 1], [1.0; 3], [0.5, 0.5, 0.5]).unwrap(),
            0.0,
        );
        let b = VoxelGrid::filled(
            Geometry::new([10, 1, 1], [1.0; 3], [10.5, 0.5, 0.5]).unwrap(),
            0.0,
        );
        let bb = union_bounding_box(&a, &b);
        assert_eq!((bb.min_corner[0], bb.max_corner[0]), (0.0, 20.0));
    }

    #[test]
    fn crop_to_own_extent_is_identity() {
        let g = Geometry::new([4, 3, 5], [2.0, 1.5, 3.0], [-7.0, 3.25, 11.0]).unwrap();
        let v = VoxelGrid::from_fn(g, |c| (c[0] * 100 + c[1] * 10 + c[2]) as f64);
        let out = crop(&v, &union_bounding_box(&v, &v), PAD_CT).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn crop_inside_keeps_source_values() {
        let v = VoxelGrid::from_fn(geom([6, 6, 6]), |c| (c[0] + 10 * c[1] + 100 * c[2]) as f64);
        // centres 2..=3 on each axis
        let bb = BoundingBox::new([1.5; 3], [3.5; 3]).unwrap();
        let out = crop(&v, &bb, PAD_CT).unwrap();
        assert_eq!(out.dims(), [2, 2, 2]);
        assert_eq!(out.geometry().origin, [2.0; 3]);
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(out.get(x, y, z), v.get(x + 2, y + 2, z + 2));
                }
            }
        }
    }

    #[test]
    fn crop_beyond_edge_pads() {
        let v = VoxelGrid::filled(geom([4, 4, 4]), 30.0);
        // two extra voxels past +x
        let mut bb = v.geometry().extent();
        bb.max_corner[0] += 2.0;
        let out = crop(&v, &bb, PAD_CT).unwrap();
        assert_eq!(out.dims(), [6, 4, 4]);
        for z in 0..4 {
            for y in 0..4 {
                assert_eq!(out.get(4, y, z), -1024.0);
                assert_eq!(out.get(5, y, z), -1024.0);
                assert_eq!(out.get(3, y, z), 30.0);
            }
        }
    }

    #[test]
    fn crop_without_overlap_fails() {
        let v = VoxelGrid::filled(geom([4, 4, 4]), 0.0);
        let bb = BoundingBox::new([10.0; 3], [20.0; 3]).unwrap();
        assert!(matches!(crop(&v, &bb, 0.0), Err(Error::Argument(_))));
    }

    #[test]
    fn merge_labels_counts() {
        let g = geom([5, 5, 5]);
        let zero = LabelMap::filled(g, 0);
        assert!(merge_labels(&zero).unwrap().is_empty_roi());

        let mut vals = vec![0u8; 125];
        vals[..10].iter_mut().for_each(|v| *v = 1);
        vals[50..57].iter_mut().for_each(|v| *v = 2);
        let lm = LabelMap::new(g, vals.clone()).unwrap();
        assert_eq!(merge_labels(&lm).unwrap().count(), 17);

        vals[100] = 3;
        let lm = LabelMap::new(g, vals).unwrap();
        assert!(matches!(merge_labels(&lm), Err(Error::Data(_))));
    }

    #[test]
    fn non_finite_values_rejected() {
        let g = geom([2, 1, 1]);
        assert!(matches!(
            VoxelGrid::new(g, vec![0.0, f64::NAN]),
            Err(Error::Data(_))
        ));
        assert!(Geometry::new([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
    }
}
