//! Gray-level size-zone features over 26-connected zones of equal level.

use std::collections::BTreeMap;

use super::{DiscretizedRoi, FeatureVector, GLCM_DIRECTIONS};
use crate::error::{Error, Result};

pub(super) const NAMES: [&str; 6] = [
    "small_area_emphasis",
    "large_area_emphasis",
    "zone_percentage",
    "gray_level_nonuniformity",
    "size_zone_nonuniformity",
    "zone_entropy",
];

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// `(level, size)` of every zone, sorted.
pub fn size_zones(d: &DiscretizedRoi) -> Vec<(u32, usize)> {
    let g = d.geometry();
    let roi = d.voxel_indices();
    let pos: std::collections::HashMap<usize, usize> =
        roi.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut parent: Vec<usize> = (0..roi.len()).collect();
    for (k, &idx) in roi.iter().enumerate() {
        let level = d.level_at(idx);
        let c = g.coords(idx);
        // the 13 forward offsets plus their negation cover all 26 neighbours;
        // unions are symmetric so forward offsets suffice
        for o in GLCM_DIRECTIONS {
            if let Some(j) = g.offset_index(c, o) {
                if d.level_at(j) == level {
                    let (a, b) = (find(&mut parent, k), find(&mut parent, pos[&j]));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut sizes: BTreeMap<usize, (u32, usize)> = BTreeMap::new();
    for (k, &idx) in roi.iter().enumerate() {
        let r = find(&mut parent, k);
        sizes.entry(r).or_insert((d.level_at(idx), 0)).1 += 1;
    }
    let mut zones: Vec<(u32, usize)> = sizes.into_values().collect();
    zones.sort_unstable();
    zones
}

pub fn glszm_features(d: &DiscretizedRoi) -> Result<FeatureVector> {
    if d.is_empty() {
        return Err(Error::EmptyRoi(None));
    }
    let zones = size_zones(d);
    let nz = zones.len() as f64;
    let np = d.len() as f64;
    let mut matrix: BTreeMap<(u32, usize), f64> = BTreeMap::new();
    let mut by_level: BTreeMap<u32, f64> = BTreeMap::new();
    let mut by_size: BTreeMap<usize, f64> = BTreeMap::new();
    let (mut sae, mut lae) = (0.0, 0.0);
    for &(level, size) in &zones {
        let s = size as f64;
        sae += 1.0 / (s * s);
        lae += s * s;
        *matrix.entry((level, size)).or_default() += 1.0;
        *by_level.entry(level).or_default() += 1.0;
        *by_size.entry(size).or_default() += 1.0;
    }
    let entropy = -matrix
        .values()
        .map(|&c| (c / nz) * (c / nz).log2())
        .sum::<f64>();
    let values = [
        sae / nz,
        lae / nz,
        nz / np,
        by_level.values().map(|c| c * c).sum::<f64>() / nz,
        by_size.values().map(|c| c * c).sum::<f64>() / nz,
        entropy + 0.0,
    ];
    let mut f = FeatureVector::new();
    for (name, v) in NAMES.iter().zip(values) {
        f.push(*name, v)?;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn roi(dims: [usize; 3], levels: Vec<u32>) -> DiscretizedRoi {
        DiscretizedRoi::from_levels(Geometry::new(dims, [1.0; 3], [0.0; 3]).unwrap(), levels)
            .unwrap()
    }

    #[test]
    fn two_zones_of_two() {
        // 1 x 2 x 2 with rows [1,1] and [2,2]
        let d = roi([1, 2, 2], vec![1, 1, 2, 2]);
        assert_eq!(size_zones(&d), vec![(1, 2), (2, 2)]);
        let f = glszm_features(&d).unwrap();
        assert!((f.get("small_area_emphasis").unwrap() - 0.25).abs() < 1e-12);
        assert!((f.get("zone_percentage").unwrap() - 0.5).abs() < 1e-12);
        assert!((f.get("zone_entropy").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_singleton_zones() {
        // no two 26-neighbours share a level: level = 1 + (x%2) + 2(y%2) + 4(z%2)
        let g = Geometry::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let levels: Vec<u32> = (0..64)
            .map(|i| {
                let c = g.coords(i);
                1 + (c[0] % 2) as u32 + 2 * (c[1] % 2) as u32 + 4 * (c[2] % 2) as u32
            })
            .collect();
        let f = glszm_features(&roi([4, 4, 4], levels)).unwrap();
        assert_eq!(f.get("small_area_emphasis"), Some(1.0));
        assert_eq!(f.get("zone_percentage"), Some(1.0));
    }

    #[test]
    fn single_zone() {
        let f = glszm_features(&roi([5, 2, 1], vec![3; 10])).unwrap();
        assert!((f.get("zone_percentage").unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(f.get("large_area_emphasis"), Some(100.0));
    }

    #[test]
    fn diagonal_voxels_connect() {
        // (0,0,0) and (1,1,1) touch only at a corner
        let mut l = vec![0; 8];
        l[0] = 1;
        l[7] = 1;
        assert_eq!(size_zones(&roi([2, 2, 2], l)), vec![(1, 2)]);
    }
}
