//! Minimal single-file NIfTI-1 (`.nii`) support: little-endian, 3D,
//! uint8 / int16 / float32 voxels, axis-aligned geometry.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use super::{Geometry, VoxelGrid};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NiftiDatatype {
    Uint8,
    Int16,
    Float32,
}

impl NiftiDatatype {
    fn code(self) -> i16 {
        match self {
            NiftiDatatype::Uint8 => 2,
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Float32 => 16,
        }
    }

    fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(NiftiDatatype::Uint8),
            4 => Ok(NiftiDatatype::Int16),
            16 => Ok(NiftiDatatype::Float32),
            other => Err(Error::Format(format!(
                "unsupported NIfTI datatype code {other} (supported: 2 uint8, 4 int16, 16 float32)"
            ))),
        }
    }

    fn bytes(self) -> usize {
        match self {
            NiftiDatatype::Uint8 => 1,
            NiftiDatatype::Int16 => 2,
            NiftiDatatype::Float32 => 4,
        }
    }
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn truncated(what: &str) -> Error {
    Error::Io(io::Error::new(
        io::ErrorKind::UnexpectedEof,
        format!("truncated NIfTI file: {what}"),
    ))
}

pub fn read_nifti(path: &Path) -> Result<VoxelGrid> {
    let bytes = fs::read(path)?;
    parse_nifti(&bytes)
}

pub(crate) fn parse_nifti(bytes: &[u8]) -> Result<VoxelGrid> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        return Err(Error::Format(
            "gzip-compressed NIfTI is not supported; decompress to .nii first".into(),
        ));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(truncated("header"));
    }
    let sizeof_hdr = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::Format(format!(
            "sizeof_hdr is {sizeof_hdr}; only little-endian NIfTI-1 (348) is supported"
        )));
    }
    if &bytes[344..348] != MAGIC {
        return Err(Error::Format(
            "bad magic: expected single-file NIfTI-1 \"n+1\\0\"".into(),
        ));
    }
    let ndim = i16_at(bytes, 40);
    if ndim != 3 {
        return Err(Error::Format(format!(
            "dims[0] = {ndim}; only 3D volumes are supported"
        )));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let v = i16_at(bytes, 42 + 2 * a);
        if v <= 0 {
            return Err(Error::Format(format!(
                "non-positive dimension {v} on axis {a}"
            )));
        }
        *d = v as usize;
    }
    let datatype = NiftiDatatype::from_code(i16_at(bytes, 70))?;
    let mut spacing = [0f64; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        *s = f32_at(bytes, 80 + 4 * a) as f64;
    }
    let vox_offset = f32_at(bytes, 108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("invalid vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let slope = f32_at(bytes, 112) as f64;
    let inter = f32_at(bytes, 116) as f64;

    let qform = i16_at(bytes, 252);
    let sform = i16_at(bytes, 254);
    let origin = if sform > 0 {
        [f32_at(bytes, 292), f32_at(bytes, 308), f32_at(bytes, 324)].map(|v| v as f64)
    } else if qform > 0 {
        [f32_at(bytes, 268), f32_at(bytes, 272), f32_at(bytes, 276)].map(|v| v as f64)
    } else {
        [0.0; 3]
    };

    let geometry = Geometry::new(dims, spacing, origin)
        .map_err(|e| Error::Format(format!("invalid geometry in header: {e}")))?;
    let n = geometry.len();
    let need = vox_offset + n * datatype.bytes();
    if bytes.len() < need {
        return Err(truncated(&format!(
            "need {need} bytes, have {}",
            bytes.len()
        )));
    }
    let data = &bytes[vox_offset..need];
    let raw: Vec<f64> = match datatype {
        NiftiDatatype::Uint8 => data.iter().map(|&b| b as f64).collect(),
        NiftiDatatype::Int16 => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        NiftiDatatype::Float32 => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    let values = if slope != 0.0 && slope.is_finite() {
        raw.into_iter().map(|v| v * slope + inter).collect()
    } else {
        raw
    };
    VoxelGrid::new(geometry, values)
}

pub fn write_nifti(path: &Path, grid: &VoxelGrid, datatype: NiftiDatatype) -> Result<()> {
    let bytes = encode_nifti(grid, datatype)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn encode_nifti(grid: &VoxelGrid, datatype: NiftiDatatype) -> Result<Vec<u8>> {
    let g = grid.geometry();
    if g.dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Argument(format!(
            "dims {:?} exceed NIfTI-1 limits",
            g.dims
        )));
    }
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 =
        |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 =
        |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    put_i16(&mut h, 40, 3);
    for a in 0..3 {
        put_i16(&mut h, 42 + 2 * a, g.dims[a] as i16);
    }
    for a in 3..7 {
        put_i16(&mut h, 42 + 2 * a, 1);
    }
    put_i16(&mut h, 70, datatype.code());
    put_i16(&mut h, 72, (datatype.bytes() * 8) as i16);
    put_f32(&mut h, 76, 1.0);
    for a in 0..3 {
        put_f32(&mut h, 80 + 4 * a, g.spacing[a] as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    h[123] = 2; // mm
    put_i16(&mut h, 252, 0);
    put_i16(&mut h, 254, 1);
    // srow_x, srow_y, srow_z: diagonal spacing + translation
    for a in 0..3 {
        let row = 280 + 16 * a;
        put_f32(&mut h, row + 4 * a, g.spacing[a] as f32);
        put_f32(&mut h, row + 12, g.origin[a] as f32);
    }
    h[344..348].copy_from_slice(MAGIC);

    h.reserve(grid.values().len() * datatype.bytes());
    for &v in grid.values() {
        match datatype {
            NiftiDatatype::Uint8 => {
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::Argument(format!(
                        "value {v} not representable as uint8"
                    )));
                }
                h.push(v as u8);
            }
            NiftiDatatype::Int16 => {
                if !(i16::MIN as f64..=i16::MAX as f64).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::Argument(format!(
                        "value {v} not representable as int16"
                    )));
                }
                h.extend_from_slice(&(v as i16).to_le_bytes());
            }
            NiftiDatatype::Float32 => h.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_4cube() -> Vec<u8> {
        let g = Geometry::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let grid = VoxelGrid::new(g, (0..64).map(|v| v as f64).collect()).unwrap();
        encode_nifti(&grid, NiftiDatatype::Float32).unwrap()
    }

    #[test]
    fn x_fastest_layout() {
        let bytes = fixture_4cube();
        // voxel (1,0,0) is the second float after the offset
        assert_eq!(f32::from_le_bytes(bytes[356..360].try_into().unwrap()), 1.0);
        let g = parse_nifti(&bytes).unwrap();
        assert_eq!(g.values()[1], 1.0);
        assert_eq!(g.get(0, 1, 0), 4.0);
        assert_eq!(g.get(0, 0, 1), 16.0);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = fixture_4cube();
        bytes[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn gzip_is_format_error() {
        let mut bytes = fixture_4cube();
        bytes[0] = 0x1f;
        bytes[1] = 0x8b;
        let err = parse_nifti(&bytes).unwrap_err();
        assert!(err.to_string().contains("gzip"));
    }

    #[test]
    fn truncated_is_io_error() {
        let bytes = fixture_4cube();
        assert!(matches!(parse_nifti(&bytes[..400]), Err(Error::Io(_))));
        assert!(matches!(parse_nifti(&bytes[..100]), Err(Error::Io(_))));
    }

    #[test]
    fn unsupported_datatype() {
        let mut bytes = fixture_4cube();
        bytes[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_voxel_is_data_error() {
        let mut bytes = fixture_4cube();
        bytes[352..356].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(parse_nifti(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn int16_with_scaling() {
        let g = Geometry::new([2, 1, 1], [2.0; 3], [1.0, 2.0, 3.0]).unwrap();
        let grid = VoxelGrid::new(g, vec![-1000.0, 40.0]).unwrap();
        let mut bytes = encode_nifti(&grid, NiftiDatatype::Int16).unwrap();
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&(-1.0f32).to_le_bytes());
        let back = parse_nifti(&bytes).unwrap();
        assert_eq!(back.values(), &[-2001.0, 79.0]);
        assert_eq!(back.geometry().origin, [1.0, 2.0, 3.0]);
        assert_eq!(back.geometry().spacing, [2.0; 3]);
    }

    #[test]
    fn uint8_round_trip() {
        let g = Geometry::new([3, 2, 1], [1.0; 3], [0.0; 3]).unwrap();
        let grid = VoxelGrid::new(g, vec![0.0, 1.0, 2.0, 0.0, 2.0, 1.0]).unwrap();
        let bytes = encode_nifti(&grid, NiftiDatatype::Uint8).unwrap();
        assert_eq!(parse_nifti(&bytes).unwrap(), grid);
    }
}
