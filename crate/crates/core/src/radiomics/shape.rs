//! Mask-only shape descriptors.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen};

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::volume::Mask;

pub(super) const NAMES: [&str; 8] = [
    "voxel_volume",
    "surface_area",
    "sphericity",
    "surface_to_volume_ratio",
    "max_3d_diameter",
    "elongation",
    "flatness",
    "least_axis_length",
];

/// Area (mm²) of the boundary surface between foreground and background
/// voxel centres.
///
/// The surface is a dual (surface-net) triangulation of the marching-cubes
/// cells: every cube of eight neighbouring voxel centres with mixed corners
/// holds one vertex, placed at the mean of the midpoints of its crossing
/// edges. Each lattice edge joining a foreground and a background voxel is
/// crossed by the quad of the four cubes sharing it; quads are split along
/// the diagonal giving the smaller area. Out-of-lattice voxels are background.
pub fn surface_area(m: &Mask) -> f64 {
    let g = m.geometry();
    let fg = m.foreground();
    if fg.is_empty() {
        return 0.0;
    }
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for &i in &fg {
        let c = g.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a] as i64);
            hi[a] = hi[a].max(c[a] as i64);
        }
    }
    let inside = |c: [i64; 3]| -> bool {
        (0..3).all(|a| c[a] >= 0 && c[a] < g.dims[a] as i64)
            && m.values()[g.index(c[0] as usize, c[1] as usize, c[2] as usize)]
    };
    let s = g.spacing;
    let mut vertices: HashMap<[i64; 3], [f64; 3]> = HashMap::new();
    let mut vertex = |cube: [i64; 3]| -> [f64; 3] {
        *vertices
            .entry(cube)
            .or_insert_with(|| cube_vertex(cube, &inside, s))
    };

    let mut area = 0.0;
    for z in lo[2] - 1..=hi[2] {
        for y in lo[1] - 1..=hi[1] {
            for x in lo[0] - 1..=hi[0] {
                let p = [x, y, z];
                let here = inside(p);
                for a in 0..3 {
                    let mut q = p;
                    q[a] += 1;
                    if here == inside(q) {
                        continue;
                    }
                    let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                    let quad = [(0, 0), (1, 0), (1, 1), (0, 1)].map(|(db, dc)| {
                        let mut cube = p;
                        cube[b] -= db;
                        cube[c] -= dc;
                        vertex(cube)
                    });
                    area += quad_area(&quad);
                }
            }
        }
    }
    area
}

fn cube_vertex(cube: [i64; 3], inside: &impl Fn([i64; 3]) -> bool, s: [f64; 3]) -> [f64; 3] {
    let corner = |k: usize| [(k & 1) as i64, ((k >> 1) & 1) as i64, ((k >> 2) & 1) as i64];
    let state: [bool; 8] = std::array::from_fn(|k| {
        let o = corner(k);
        inside([cube[0] + o[0], cube[1] + o[1], cube[2] + o[2]])
    });
    let mut acc = [0.0; 3];
    let mut n = 0.0;
    for a in 0..8usize {
        for bit in [1usize, 2, 4] {
            let b = a | bit;
            if b != a && state[a] != state[b] {
                let (pa, pb) = (corner(a), corner(b));
                for i in 0..3 {
                    acc[i] += 0.5 * (pa[i] + pb[i]) as f64;
                }
                n += 1.0;
            }
        }
    }
    [0, 1, 2].map(|i| (cube[i] as f64 + acc[i] / n) * s[i])
}

fn triangle_area(p: &[f64; 3], q: &[f64; 3], r: &[f64; 3]) -> f64 {
    let u = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
    let v = [r[0] - p[0], r[1] - p[1], r[2] - p[2]];
    let c = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

fn quad_area(q: &[[f64; 3]; 4]) -> f64 {
    let split_ac = triangle_area(&q[0], &q[1], &q[2]) + triangle_area(&q[0], &q[2], &q[3]);
    let split_bd = triangle_area(&q[0], &q[1], &q[3]) + triangle_area(&q[1], &q[2], &q[3]);
    split_ac.min(split_bd)
}

/// `π^(1/3) (6V)^(2/3) / A`; exactly 1 for a Euclidean sphere.
pub(crate) fn sphericity(volume: f64, area: f64) -> f64 {
    std::f64::consts::PI.cbrt() * (6.0 * volume).powf(2.0 / 3.0) / area
}

fn max_boundary_distance(m: &Mask) -> f64 {
    let g = m.geometry();
    let vals = m.values();
    let neighbours = [
        [1, 0, 0],
        [-1, 0, 0],
        [0, 1, 0],
        [0, -1, 0],
        [0, 0, 1],
        [0, 0, -1],
    ];
    let boundary: Vec<[f64; 3]> = m
        .foreground()
        .into_iter()
        .filter(|&i| {
            let c = g.coords(i);
            neighbours
                .iter()
                .any(|&o| g.offset_index(c, o).is_none_or(|j| !vals[j]))
        })
        .map(|i| {
            let c = g.coords(i);
            [0, 1, 2].map(|a| c[a] as f64 * g.spacing[a])
        })
        .collect();
    let mut best = 0.0f64;
    for (i, p) in boundary.iter().enumerate() {
        for q in &boundary[i + 1..] {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            best = best.max(d);
        }
    }
    best.sqrt()
}

/// Eigenvalues of the population covariance of foreground voxel centres (mm), descending.
fn principal_moments(m: &Mask) -> [f64; 3] {
    let g = m.geometry();
    let pts: Vec<[f64; 3]> = m
        .foreground()
        .into_iter()
        .map(|i| {
            let c = g.coords(i);
            [0, 1, 2].map(|a| c[a] as f64 * g.spacing[a])
        })
        .collect();
    let n = pts.len() as f64;
    let mean = [0, 1, 2].map(|a| pts.iter().map(|p| p[a]).sum::<f64>() / n);
    let mut cov = Matrix3::<f64>::zeros();
    for p in &pts {
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += (p[r] - mean[r]) * (p[c] - mean[c]);
            }
        }
    }
    cov /= n;
    let mut ev: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

pub fn shape_features(m: &Mask) -> Result<FeatureVector> {
    let count = m.count();
    if count == 0 {
        return Err(Error::EmptyRoi(None));
    }
    let volume = count as f64 * m.geometry().voxel_volume();
    let area = surface_area(m);
    let [l1, l2, l3] = principal_moments(m);
    // a single voxel (or any point-like set) has no preferred axis
    let (elongation, flatness) = if l1 > 0.0 {
        ((l2 / l1).sqrt(), (l3 / l1).sqrt())
    } else {
        (1.0, 1.0)
    };

    let mut f = FeatureVector::new();
    f.push(NAMES[0], volume)?;
    f.push(NAMES[1], area)?;
    f.push(NAMES[2], sphericity(volume, area))?;
    f.push(NAMES[3], area / volume)?;
    f.push(NAMES[4], max_boundary_distance(m))?;
    f.push(NAMES[5], elongation)?;
    f.push(NAMES[6], flatness)?;
    f.push(NAMES[7], 4.0 * l3.sqrt())?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn ball(n: usize, r: f64, spacing: f64) -> Mask {
        let c = (n as f64 - 1.0) / 2.0;
        Mask::from_fn(
            Geometry::new([n; 3], [spacing; 3], [0.0; 3]).unwrap(),
            |p| p.iter().map(|&v| (v as f64 - c).powi(2)).sum::<f64>() <= r * r,
        )
    }

    #[test]
    fn analytic_sphere_has_unit_sphericity() {
        for r in [0.5, 1.0, 7.3, 100.0] {
            let v = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
            let a = 4.0 * std::f64::consts::PI * r * r;
            assert!((sphericity(v, a) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_voxel() {
        let g = Geometry::new([3, 3, 3], [2.0; 3], [0.0; 3]).unwrap();
        let m = Mask::from_fn(g, |c| c == [1, 1, 1]);
        let f = shape_features(&m).unwrap();
        assert_eq!(f.get("voxel_volume"), Some(8.0));
        // vertices at the centre +- 1/6 voxel on each axis: cube of side 2/3 mm
        let want = 6.0 * (2.0f64 / 3.0).powi(2);
        assert!((f.get("surface_area").unwrap() - want).abs() < 1e-12);
        assert_eq!(f.get("max_3d_diameter"), Some(0.0));
        assert_eq!(f.get("elongation"), Some(1.0));
    }

    #[test]
    fn axis_aligned_slab_is_exact() {
        // a slab spanning the full x/y extent: flat top and bottom faces plus
        // the side walls, all axis aligned
        let g = Geometry::new([6, 6, 6], [1.0; 3], [0.0; 3]).unwrap();
        let big = Mask::from_fn(g, |c| c[2] >= 1 && c[2] <= 3);
        let two = Mask::from_fn(g, |c| c[2] >= 1 && c[2] <= 4);
        // one extra layer adds exactly its side-wall band
        let band = surface_area(&two) - surface_area(&big);
        assert!(band > 0.0 && band < 4.0 * 6.0 + 1e-9, "{band}");
    }

    #[test]
    fn digitized_ball_sphericity_close_to_one() {
        let m = ball(35, 15.0, 1.0);
        let f = shape_features(&m).unwrap();
        let s = f.get("sphericity").unwrap();
        assert!((0.95..=1.02).contains(&s), "sphericity {s}");
        let area = f.get("surface_area").unwrap();
        let analytic = 4.0 * std::f64::consts::PI * 225.0;
        assert!(
            (area / analytic - 1.0).abs() < 0.06,
            "area {area} vs {analytic}"
        );
        assert!((f.get("max_3d_diameter").unwrap() - 30.0).abs() < 1e-9);
        assert!((f.get("elongation").unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn elongated_box() {
        let g = Geometry::new([12, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let m = Mask::from_fn(g, |c| {
            c[0] >= 1 && c[0] <= 10 && c[1] >= 1 && c[1] <= 2 && c[2] >= 1 && c[2] <= 2
        });
        let f = shape_features(&m).unwrap();
        // variances: x over 10 points = 99/12, y,z over 2 points = 1/4
        let want = (0.25f64 / (99.0 / 12.0)).sqrt();
        assert!((f.get("elongation").unwrap() - want).abs() < 1e-9);
        assert!((f.get("least_axis_length").unwrap() - 2.0).abs() < 1e-9);
    }
}
