//! Histogram / intensity statistics over the ROI.

use super::{discretize, level_probabilities, roi_values, ExtractionParams, FeatureVector};
use crate::error::Result;
use crate::volume::{Mask, VoxelGrid};

pub(super) const NAMES: [&str; 16] = [
    "mean",
    "median",
    "min",
    "max",
    "range",
    "p10",
    "p90",
    "interquartile_range",
    "variance",
    "skewness",
    "kurtosis",
    "energy",
    "rms",
    "mad",
    "entropy",
    "uniformity",
];

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn first_order_features(
    img: &VoxelGrid,
    m: &Mask,
    params: &ExtractionParams,
) -> Result<FeatureVector> {
    let x = roi_values(img, m)?;
    let n = x.len() as f64;
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);

    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4, mut mad) = (0.0, 0.0, 0.0, 0.0);
    for &v in &x {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += d.abs();
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;
    // moments of a constant ROI are defined as zero
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let energy: f64 = x.iter().map(|v| v * v).sum();

    let probs = level_probabilities(&discretize(img, m, params.bin_width)?);
    let entropy = -probs.iter().map(|p| p * p.log2()).sum::<f64>();
    let uniformity = probs.iter().map(|p| p * p).sum::<f64>();

    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let values = [
        mean,
        percentile(&sorted, 0.5),
        min,
        max,
        max - min,
        percentile(&sorted, 0.1),
        percentile(&sorted, 0.9),
        percentile(&sorted, 0.75) - percentile(&sorted, 0.25),
        m2,
        skewness,
        kurtosis,
        energy,
        (energy / n).sqrt(),
        mad,
        // -0.0 for a single level; keep the output canonical
        entropy + 0.0,
        uniformity,
    ];
    let mut f = FeatureVector::new();
    for (name, v) in NAMES.iter().zip(values) {
        f.push(*name, v)?;
    }
    Ok(f)
}
