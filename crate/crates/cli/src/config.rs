use std::path::Path;

use radsurv::phantom::PhantomParams;
use radsurv::study::StudyConfig;
use radsurv::survival::LassoOptions;
use serde::{Deserialize, Serialize};

/// Flat run configuration. Every key is optional in the file; flags win.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,

    pub n_patients: usize,
    pub dims: [usize; 3],
    pub semi_axes_range: [f64; 2],
    pub fragile_fraction: f64,
    pub nodal: bool,
    pub beta: [f64; 3],
    pub h0: f64,
    pub weibull_shape: f64,
    pub horizon: f64,

    pub bin_width: f64,
    pub pet_bin_width: f64,
    pub glcm_distance: u32,
    pub target_spacing: f64,

    pub k: usize,
    pub n_lambdas: usize,
    pub lambda_ratio: f64,
    pub lasso_tol: f64,
    pub split: [f64; 3],

    pub min_included_fraction: f64,
    pub erode_radii: Vec<u32>,
    pub dilate_radii: Vec<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PhantomParams::default();
        let s = StudyConfig::default();
        RunConfig {
            seed: 0,
            n_patients: p.n_patients,
            dims: p.dims,
            semi_axes_range: p.semi_axes_range,
            fragile_fraction: p.fragile_fraction,
            nodal: p.nodal,
            beta: p.beta,
            h0: p.h0,
            weibull_shape: p.weibull_shape,
            horizon: p.horizon,
            bin_width: s.bin_width,
            pet_bin_width: s.pet_bin_width,
            glcm_distance: s.glcm_distance,
            target_spacing: s.target_spacing,
            k: s.k,
            n_lambdas: s.lasso.n_lambdas,
            lambda_ratio: s.lasso.ratio,
            lasso_tol: s.lasso.tol,
            split: s.split,
            min_included_fraction: s.min_included_fraction,
            erode_radii: s.erode_radii,
            dilate_radii: s.dilate_radii,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn phantom(&self) -> PhantomParams {
        PhantomParams {
            n_patients: self.n_patients,
            dims: self.dims,
            semi_axes_range: self.semi_axes_range,
            fragile_fraction: self.fragile_fraction,
            nodal: self.nodal,
            beta: self.beta,
            h0: self.h0,
            weibull_shape: self.weibull_shape,
            horizon: self.horizon,
            seed: self.seed,
            ..PhantomParams::default()
        }
    }

    pub fn study(&self) -> StudyConfig {
        StudyConfig {
            bin_width: self.bin_width,
            pet_bin_width: self.pet_bin_width,
            glcm_distance: self.glcm_distance,
            target_spacing: self.target_spacing,
            k: self.k,
            lasso: LassoOptions {
                n_lambdas: self.n_lambdas,
                ratio: self.lambda_ratio,
                tol: self.lasso_tol,
                ..LassoOptions::default()
            },
            split: self.split,
            seed: self.seed,
            min_included_fraction: self.min_included_fraction,
            erode_radii: self.erode_radii.clone(),
            dilate_radii: self.dilate_radii.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 3\nbin_widht = 10").is_err());
        let c: RunConfig = toml::from_str("seed = 3\ndilate_radii = [1]").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.dilate_radii, vec![1]);
        assert_eq!(c.k, 8);
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
        assert_eq!(c.study(), StudyConfig::default());
        assert_eq!(c.phantom(), PhantomParams::default());
    }
}
