//! Raw-JSON fixture format: `<name>.json` metadata next to a `<name>.raw`
//! payload of little-endian float32 values in x-fastest order.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Geometry, VoxelGrid};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
    data_file: String,
}

pub fn read_raw_json(path: &Path) -> Result<VoxelGrid> {
    let text = fs::read_to_string(path)?;
    let header: RawHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("raw-JSON header {}: {e}", path.display())))?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!(
            "raw-JSON dtype {:?} unsupported (expected \"f32\")",
            header.dtype
        )));
    }
    let geometry = Geometry::new(header.dims, header.spacing, header.origin)
        .map_err(|e| Error::Format(format!("invalid geometry: {e}")))?;
    let data_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file);
    let bytes = fs::read(&data_path)?;
    let need = geometry.len() * 4;
    if bytes.len() < need {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            format!(
                "{}: need {need} bytes, have {}",
                data_path.display(),
                bytes.len()
            ),
        )));
    }
    let values = bytes[..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    VoxelGrid::new(geometry, values)
}

/// Writes `path` (JSON) and a sibling `.raw` file. Every value must be exactly
/// representable as float32 so that reading back is bit-exact.
pub fn write_raw_json(path: &Path, grid: &VoxelGrid) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Argument(format!("bad output path {}", path.display())))?;
    let data_file = format!("{stem}.raw");
    let mut payload = Vec::with_capacity(grid.values().len() * 4);
    for (i, &v) in grid.values().iter().enumerate() {
        let f = v as f32;
        if f as f64 != v {
            return Err(Error::Argument(format!(
                "value {v} at index {i} is not exactly representable as float32"
            )));
        }
        payload.extend_from_slice(&f.to_le_bytes());
    }
    let g = grid.geometry();
    let header = RawHeader {
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        dtype: "f32".into(),
        data_file: data_file.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&header)?)?;
    fs::write(
        path.parent()
            .unwrap_or_else(|| Path::new("."))
            .join(data_file),
        payload,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.json");
        let g = Geometry::new(
            [3, 2, 2],
            [0.1, 2.0 / 3.0, 1.7],
            [-12.345678901234, 0.1, 1e-7],
        )
        .unwrap();
        let grid =
            VoxelGrid::new(g, (0..12).map(|i| (i as f32 * 0.37 - 1.1) as f64).collect()).unwrap();
        write_raw_json(&p, &grid).unwrap();
        assert_eq!(read_raw_json(&p).unwrap(), grid);
    }

    #[test]
    fn bad_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        fs::write(&p, r#"{"dims":[1,1,1],"spacing":[1,1,1],"origin":[0,0,0],"dtype":"f64","data_file":"a.raw"}"#).unwrap();
        assert!(matches!(read_raw_json(&p), Err(Error::Format(_))));
    }

    #[test]
    fn unrepresentable_value_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([1, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let grid = VoxelGrid::new(g, vec![0.1]).unwrap();
        assert!(write_raw_json(&dir.path().join("x.json"), &grid).is_err());
    }
}
