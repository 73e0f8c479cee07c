//! Gray-level co-occurrence texture features, averaged over the 13 unique
//! 3D directions.

use super::{DiscretizedRoi, FeatureVector};
use crate::error::{Error, Result};

pub(super) const NAMES: [&str; 6] = [
    "contrast",
    "joint_energy",
    "joint_entropy",
    "homogeneity",
    "correlation",
    "dissimilarity",
];

/// One representative of each ± direction pair in the 26-neighbourhood.
pub const GLCM_DIRECTIONS: [[i64; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

/// Symmetric co-occurrence counts for one offset, `n_levels x n_levels`
/// row-major with level `l` at index `l - 1`.
pub(crate) fn cooccurrence(d: &DiscretizedRoi, offset: [i64; 3]) -> Vec<f64> {
    let n = d.n_levels() as usize;
    let g = d.geometry();
    let mut p = vec![0.0; n * n];
    for &idx in d.voxel_indices() {
        let i = d.level_at(idx) as usize;
        if let Some(j) = g
            .offset_index(g.coords(idx), offset)
            .map(|k| d.level_at(k) as usize)
        {
            if j > 0 {
                p[(i - 1) * n + (j - 1)] += 1.0;
                p[(j - 1) * n + (i - 1)] += 1.0;
            }
        }
    }
    p
}

fn direction_features(p: &[f64], n: usize) -> [f64; 6] {
    let total: f64 = p.iter().sum();
    let mut mu = 0.0;
    for i in 0..n {
        for j in 0..n {
            mu += (i + 1) as f64 * p[i * n + j] / total;
        }
    }
    let mut var = 0.0;
    let mut cov = 0.0;
    let (mut contrast, mut energy, mut entropy, mut homog, mut dissim) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let q = p[i * n + j] / total;
            if q == 0.0 {
                continue;
            }
            let (fi, fj) = ((i + 1) as f64, (j + 1) as f64);
            let diff = (fi - fj).abs();
            contrast += diff * diff * q;
            energy += q * q;
            entropy -= q * q.log2();
            homog += q / (1.0 + diff);
            dissim += diff * q;
            var += (fi - mu) * (fi - mu) * q;
            cov += (fi - mu) * (fj - mu) * q;
        }
    }
    // the matrix is symmetric so sigma_i = sigma_j
    let correlation = if var > 0.0 { cov / var } else { 1.0 };
    [contrast, energy, entropy + 0.0, homog, correlation, dissim]
}

pub fn glcm_features(d: &DiscretizedRoi, distance: u32) -> Result<FeatureVector> {
    if distance < 1 {
        return Err(Error::Argument("glcm distance must be >= 1".into()));
    }
    let n = d.n_levels() as usize;
    let mut sums = [0.0; 6];
    let mut used = 0usize;
    for dir in GLCM_DIRECTIONS {
        let offset = dir.map(|v| v * distance as i64);
        let p = cooccurrence(d, offset);
        if p.iter().all(|&v| v == 0.0) {
            continue;
        }
        used += 1;
        for (s, v) in sums.iter_mut().zip(direction_features(&p, n)) {
            *s += v;
        }
    }
    if used == 0 {
        return Err(Error::DegenerateTexture(None));
    }
    let mut f = FeatureVector::new();
    for (name, s) in NAMES.iter().zip(sums) {
        f.push(*name, s / used as f64)?;
    }
    Ok(f)
}
