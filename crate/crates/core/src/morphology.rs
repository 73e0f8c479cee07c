//! Binary morphology with digitised Euclidean balls, used to simulate
//! under-segmentation (erosion) and over-segmentation (dilation).
//!
//! Voxels outside the lattice count as background for both operations, so
//! erosion also peels masks that touch the volume boundary.

use crate::error::{Error, Result};
use crate::volume::Mask;

/// Ball of radius `r` in voxel index units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    radius: u32,
    offsets: Vec<[i64; 3]>,
}

impl StructuringElement {
    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn offsets(&self) -> &[[i64; 3]] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// All integer offsets with `dx² + dy² + dz² <= r²`.
pub fn ball_element(r: u32) -> Result<StructuringElement> {
    if r < 1 {
        return Err(Error::Argument(
            "structuring element radius must be >= 1".into(),
        ));
    }
    let ri = r as i64;
    let mut offsets = Vec::new();
    for dz in -ri..=ri {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if dx * dx + dy * dy + dz * dz <= ri * ri {
                    offsets.push([dx, dy, dz]);
                }
            }
        }
    }
    Ok(StructuringElement { radius: r, offsets })
}

pub fn dilate(m: &Mask, e: &StructuringElement) -> Mask {
    let g = *m.geometry();
    let mut out = vec![false; g.len()];
    for idx in m.foreground() {
        let c = g.coords(idx);
        for &o in e.offsets() {
            if let Some(j) = g.offset_index(c, o) {
                out[j] = true;
            }
        }
    }
    Mask::new(g, out).expect("geometry preserved")
}

pub fn erode(m: &Mask, e: &StructuringElement) -> Mask {
    let g = *m.geometry();
    let vals = m.values();
    let mut out = vec![false; g.len()];
    for idx in m.foreground() {
        let c = g.coords(idx);
        out[idx] = e
            .offsets()
            .iter()
            .all(|&o| g.offset_index(c, o).is_some_and(|j| vals[j]));
    }
    Mask::new(g, out).expect("geometry preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn geom(n: usize) -> Geometry {
        Geometry::new([n; 3], [1.0; 3], [0.0; 3]).unwrap()
    }

    fn single(n: usize, c: [usize; 3]) -> Mask {
        Mask::from_fn(geom(n), |p| p == c)
    }

    #[test]
    fn ball_sizes() {
        assert_eq!(ball_element(1).unwrap().len(), 7);
        // brute-force count of integer points with norm^2 <= 4
        let mut n = 0;
        for x in -3i32..=3 {
            for y in -3i32..=3 {
                for z in -3i32..=3 {
                    if x * x + y * y + z * z <= 4 {
                        n += 1;
                    }
                }
            }
        }
        assert_eq!(n, 33);
        assert_eq!(ball_element(2).unwrap().len(), 33);
        assert!(ball_element(0).is_err());
    }

    #[test]
    fn ball_is_symmetric() {
        for r in 1..4 {
            let e = ball_element(r).unwrap();
            assert!(e.offsets().contains(&[0, 0, 0]));
            for o in e.offsets() {
                assert!(e.offsets().contains(&[-o[0], -o[1], -o[2]]));
            }
        }
    }

    #[test]
    fn dilate_cases() {
        let e = ball_element(1).unwrap();
        assert!(dilate(&Mask::filled(geom(5), false), &e).is_empty_roi());
        assert_eq!(dilate(&single(5, [2, 2, 2]), &e).count(), 7);
        // corner voxel: itself + 3 in-bounds face neighbours
        assert_eq!(dilate(&single(5, [0, 0, 0]), &e).count(), 4);
    }

    #[test]
    fn erode_cases() {
        let e = ball_element(1).unwrap();
        assert!(erode(&single(5, [2, 2, 2]), &e).is_empty_roi());

        let ball = Mask::from_fn(geom(15), |c| {
            let d: i64 = c.iter().map(|&v| (v as i64 - 7).pow(2)).sum();
            d <= 25
        });
        let er = erode(&ball, &e);
        assert!(!er.is_empty_roi());
        assert!(er.is_subset_of(&ball) && er.count() < ball.count());

        let full = Mask::filled(geom(6), true);
        let er = erode(&full, &e);
        assert_eq!(er.count(), 4 * 4 * 4);
        let g = geom(6);
        for (i, &v) in er.values().iter().enumerate() {
            let c = g.coords(i);
            let border = c.iter().any(|&x| x == 0 || x == 5);
            assert_eq!(v, !border);
        }
    }
}
