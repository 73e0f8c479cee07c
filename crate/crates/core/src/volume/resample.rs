//! Resampling onto a new voxel spacing with the origin held fixed.
//!
//! Spline mode is interpolating cubic B-spline: coefficients are obtained by
//! solving the tridiagonal interpolation system along each axis, with the
//! natural end condition (zero second derivative), equivalently an
//! antisymmetric coefficient extension `c[-1] = 2c[0] - c[1]`. Affine
//! intensity ramps are therefore reproduced exactly up to the grid edges.
//! Sample positions outside `[0, n-1]` are clamped to the nearest edge.

use serde::{Deserialize, Serialize};

use super::{Geometry, Volume, Voxel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Spline,
    Nearest,
}

pub fn resample<T: Voxel>(
    vol: &Volume<T>,
    target_spacing: [f64; 3],
    mode: Interpolation,
) -> Result<Volume<T>> {
    if target_spacing.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::Argument(format!(
            "target spacing must be positive, got {target_spacing:?}"
        )));
    }
    if mode == Interpolation::Spline && !T::SPLINE {
        return Err(Error::Argument(
            "spline interpolation requested for a mask/label volume; use nearest".into(),
        ));
    }
    let g = vol.geometry();
    let dims_out = [0, 1, 2].map(|a| {
        let n = g.dims[a] as f64 * g.spacing[a] / target_spacing[a];
        ((n - 1e-9).ceil() as usize).max(1)
    });
    let out_geom = Geometry::new(dims_out, target_spacing, g.origin)?;
    // continuous input index of each output index, per axis
    let pos: [Vec<f64>; 3] = [0, 1, 2].map(|a| {
        (0..dims_out[a])
            .map(|i| i as f64 * target_spacing[a] / g.spacing[a])
            .collect()
    });

    match mode {
        Interpolation::Nearest => {
            let pick: [Vec<usize>; 3] = [0, 1, 2].map(|a| {
                pos[a]
                    .iter()
                    .map(|&x| (x.round().max(0.0) as usize).min(g.dims[a] - 1))
                    .collect()
            });
            Ok(Volume::from_fn(out_geom, |c| {
                vol.get(pick[0][c[0]], pick[1][c[1]], pick[2][c[2]])
            }))
        }
        Interpolation::Spline => {
            let mut data: Vec<f64> = vol.values().iter().map(|v| v.to_f64()).collect();
            let mut dims = g.dims;
            for a in 0..3 {
                prefilter_axis(&mut data, dims, a);
            }
            for a in 0..3 {
                let taps: Vec<Vec<(usize, f64)>> =
                    pos[a].iter().map(|&x| spline_taps(dims[a], x)).collect();
                data = evaluate_axis(&data, dims, a, &taps);
                dims[a] = dims_out[a];
            }
            Volume::new(out_geom, data.into_iter().map(T::from_f64).collect())
        }
    }
}

fn strides(dims: [usize; 3]) -> [usize; 3] {
    [1, dims[0], dims[0] * dims[1]]
}

/// Replace samples along `axis` with interpolating B-spline coefficients.
fn prefilter_axis(data: &mut [f64], dims: [usize; 3], axis: usize) {
    let n = dims[axis];
    if n < 3 {
        return; // c = f for n <= 2 under the natural end condition
    }
    let st = strides(dims);
    let step = st[axis];
    let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (p, q) = (others[0], others[1]);
    let mut line = vec![0.0; n];
    let mut cprime = vec![0.0; n];
    for j in 0..dims[q] {
        for i in 0..dims[p] {
            let base = i * st[p] + j * st[q];
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[base + k * step];
            }
            solve_natural(&mut line, &mut cprime);
            for (k, v) in line.iter().enumerate() {
                data[base + k * step] = *v;
            }
        }
    }
}

/// Solve c[k-1] + 4c[k] + c[k+1] = 6 f[k] for 1 <= k <= n-2 with the ends
/// pinned (c[0] = f[0], c[n-1] = f[n-1]). Overwrites `f` with `c`.
fn solve_natural(f: &mut [f64], scratch: &mut [f64]) {
    let n = f.len();
    let m = n - 2;
    // rhs for interior unknowns, with known ends moved over
    let mut d: Vec<f64> = (1..n - 1).map(|k| 6.0 * f[k]).collect();
    d[0] -= f[0];
    d[m - 1] -= f[n - 1];
    // Thomas algorithm with diagonal 4, off-diagonals 1
    let cp = &mut scratch[..m];
    cp[0] = 1.0 / 4.0;
    d[0] /= 4.0;
    for k in 1..m {
        let denom = 4.0 - cp[k - 1];
        cp[k] = 1.0 / denom;
        d[k] = (d[k] - d[k - 1]) / denom;
    }
    for k in (0..m - 1).rev() {
        d[k] -= cp[k] * d[k + 1];
    }
    f[1..n - 1].copy_from_slice(&d);
}

/// Coefficient indices and weights for sampling at continuous index `x`
/// on an axis of length `n`, with the antisymmetric extension folded in.
fn spline_taps(n: usize, x: f64) -> Vec<(usize, f64)> {
    if n == 1 {
        return vec![(0, 1.0)];
    }
    let x = x.clamp(0.0, (n - 1) as f64);
    let i = (x.floor() as usize).min(n - 2);
    let t = x - i as f64;
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ];
    let mut taps: Vec<(usize, f64)> = Vec::with_capacity(6);
    let mut add = |idx: usize, wt: f64| {
        if let Some(e) = taps.iter_mut().find(|e| e.0 == idx) {
            e.1 += wt;
        } else {
            taps.push((idx, wt));
        }
    };
    for (k, &wk) in w.iter().enumerate() {
        let idx = i as i64 - 1 + k as i64;
        if idx < 0 {
            add(0, 2.0 * wk);
            add(1, -wk);
        } else if idx >= n as i64 {
            add(n - 1, 2.0 * wk);
            add(n - 2, -wk);
        } else {
            add(idx as usize, wk);
        }
    }
    taps
}

fn evaluate_axis(
    data: &[f64],
    dims: [usize; 3],
    axis: usize,
    taps: &[Vec<(usize, f64)>],
) -> Vec<f64> {
    let mut out_dims = dims;
    out_dims[axis] = taps.len();
    let st_in = strides(dims);
    let st_out = strides(out_dims);
    let mut out = vec![0.0; out_dims.iter().product()];
    for z in 0..out_dims[2] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                let c = [x, y, z];
                let mut base = 0;
                for a in 0..3 {
                    if a != axis {
                        base += c[a] * st_in[a];
                    }
                }
                let v: f64 = taps[c[axis]]
                    .iter()
                    .map(|&(k, w)| w * data[base + k * st_in[axis]])
                    .sum();
                out[x * st_out[0] + y * st_out[1] + z * st_out[2]] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Mask, VoxelGrid};

    fn grid(dims: [usize; 3], spacing: [f64; 3], f: impl Fn([usize; 3]) -> f64) -> VoxelGrid {
        VoxelGrid::from_fn(Geometry::new(dims, spacing, [1.0, -2.0, 3.0]).unwrap(), f)
    }

    #[test]
    fn constant_is_preserved() {
        let g = grid([7, 5, 4], [1.0, 1.5, 3.0], |_| 42.5);
        for t in [[2.0; 3], [0.7, 1.3, 2.2]] {
            let out = resample(&g, t, Interpolation::Spline).unwrap();
            assert!(out.values().iter().all(|v| (v - 42.5).abs() < 1e-9));
        }
    }

    #[test]
    fn output_dims_use_ceil() {
        let g = grid([10, 3, 3], [1.0; 3], |_| 0.0);
        let out = resample(&g, [2.0, 1.0, 1.0], Interpolation::Spline).unwrap();
        assert_eq!(out.dims(), [5, 3, 3]);
        let g = grid([7, 3, 3], [1.0; 3], |_| 0.0);
        assert_eq!(
            resample(&g, [2.0, 1.0, 1.0], Interpolation::Nearest)
                .unwrap()
                .dims()[0],
            4
        );
        assert_eq!(out.geometry().origin, g.geometry().origin);
    }

    #[test]
    fn identity_spacing_reproduces_samples() {
        let g = grid([6, 5, 7], [2.0; 3], |c| {
            ((c[0] * 31 + c[1] * 17 + c[2] * 7) % 13) as f64 * 3.3 - 4.0
        });
        for mode in [Interpolation::Spline, Interpolation::Nearest] {
            let out = resample(&g, [2.0; 3], mode).unwrap();
            assert_eq!(out.dims(), g.dims());
            for (a, b) in out.values().iter().zip(g.values()) {
                assert!((a - b).abs() < 1e-9, "{mode:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn affine_ramp_reproduced_off_grid() {
        let f = |x: f64, y: f64, z: f64| 3.0 + 0.5 * x - 1.25 * y + 2.0 * z;
        let g = grid([9, 8, 7], [1.0; 3], |c| {
            f(c[0] as f64, c[1] as f64, c[2] as f64)
        });
        let out = resample(&g, [0.7, 0.45, 1.3], Interpolation::Spline).unwrap();
        let og = out.geometry();
        for i in 0..og.len() {
            let c = og.coords(i);
            let p = [0, 1, 2].map(|a| c[a] as f64 * og.spacing[a]);
            if p[0] > 8.0 || p[1] > 7.0 || p[2] > 6.0 {
                continue; // clamped region outside the sampled extent
            }
            let want = f(p[0], p[1], p[2]);
            assert!((out.values()[i] - want).abs() < 1e-6, "{c:?}");
        }
    }

    #[test]
    fn mask_rules() {
        let m = Mask::from_fn(Geometry::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap(), |c| {
            c[0] > 1
        });
        assert!(matches!(
            resample(&m, [2.0; 3], Interpolation::Spline),
            Err(Error::Argument(_))
        ));
        assert!(resample(&m, [0.6; 3], Interpolation::Nearest).is_ok());
        assert!(matches!(
            resample(&m, [0.0, 1.0, 1.0], Interpolation::Nearest),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn taps_sum_to_one() {
        for n in 1..6 {
            for k in 0..=40 {
                let x = k as f64 * (n as f64) / 40.0 - 0.3;
                let s: f64 = spline_taps(n, x).iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
