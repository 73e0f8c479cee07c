use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use radsurv::cohort::{
    read_clinical, read_feature_csv, write_clinical, write_feature_csv, ClinicalRecord, Gender,
};
use radsurv::morphology::{ball_element, dilate, erode};
use radsurv::radiomics::{extract_all, ExtractionParams};
use radsurv::survival::{
    concordance_counts, lasso_cox_path, read_outcomes, write_outcomes, CoxData, LassoOptions,
    SurvivalRecord,
};
use radsurv::volume::{read_volume, write_volume};
use radsurv::{FeatureVector, Geometry, Mask, VoxelGrid};

fn mask_strategy(max_dim: usize) -> impl Strategy<Value = Mask> {
    (prop::array::uniform3(2..=max_dim), 0.05f64..0.95).prop_flat_map(|(dims, density)| {
        let n = dims[0] * dims[1] * dims[2];
        prop::collection::vec(prop::bool::weighted(density), n).prop_map(move |bits| {
            Mask::new(Geometry::new(dims, [1.0; 3], [0.0; 3]).unwrap(), bits).unwrap()
        })
    })
}

fn interior(g: &Geometry, i: usize, r: usize) -> bool {
    let c = g.coords(i);
    (0..3).all(|a| c[a] >= r && c[a] + r < g.dims[a])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn morphology_laws(m in mask_strategy(10), r in 1u32..=2) {
        let e = ball_element(r).unwrap();
        let er = erode(&m, &e);
        let di = dilate(&m, &e);
        prop_assert!(er.is_subset_of(&m));
        prop_assert!(m.is_subset_of(&di));
        prop_assert!(dilate(&er, &e).is_subset_of(&m));
        let closed = erode(&di, &e);
        let g = *m.geometry();
        let ru = r as usize;
        for i in 0..g.len() {
            if interior(&g, i, ru) {
                prop_assert!(!m.values()[i] || closed.values()[i]);
                prop_assert_eq!(er.values()[i], !dilate(&m.complement(), &e).values()[i]);
            }
        }
        prop_assert!(dilate(&m, &ball_element(r + 1).unwrap()).count() >= di.count());
    }

    #[test]
    fn morphology_monotone(a in mask_strategy(8), keep in prop::collection::vec(any::<bool>(), 512)) {
        let b = Mask::new(*a.geometry(), a.values().iter().zip(keep.iter().cycle()).map(|(x, k)| *x && *k).collect()).unwrap();
        let e = ball_element(1).unwrap();
        prop_assert!(erode(&b, &e).is_subset_of(&erode(&a, &e)));
        prop_assert!(dilate(&b, &e).is_subset_of(&dilate(&a, &e)));
    }

    #[test]
    fn cindex_matches_pairwise_count(
        recs in prop::collection::vec((1u32..20, any::<bool>(), -3i32..3), 2..40)
    ) {
        let y: Vec<SurvivalRecord> = recs.iter().enumerate()
            .map(|(i, (t, e, _))| SurvivalRecord::new(format!("p{i}"), *t as f64, *e).unwrap())
            .collect();
        let s: Vec<f64> = recs.iter().map(|r| r.2 as f64).collect();
        let (mut conc, mut tied, mut comp) = (0u64, 0u64, 0u64);
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i].event && y[i].time < y[j].time {
                    comp += 1;
                    if s[i] > s[j] { conc += 1 } else if s[i] == s[j] { tied += 1 }
                }
            }
        }
        let c = concordance_counts(&s, &y).unwrap();
        prop_assert_eq!((c.concordant, c.tied, c.comparable), (conc, tied, comp));
    }

    #[test]
    fn gradient_matches_finite_differences(seed in 0u64..1000) {
        let (x, y) = random_cox_data(30, 3, seed);
        let d = CoxData::new(x, &y).unwrap();
        let beta = DVector::from_fn(3, |j, _| ((seed as usize * 7 + j * 13) % 11) as f64 / 11.0 - 0.5);
        let g = d.derivatives(&beta);
        let h = 1e-6;
        for j in 0..3 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (d.loglik(&up) - d.loglik(&dn)) / (2.0 * h);
            prop_assert!((fd - g.gradient[j]).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn lasso_path_shrinks(seed in 0u64..1000) {
        let (x, y) = random_cox_data(60, 4, seed);
        let opts = LassoOptions { n_lambdas: 25, ..Default::default() };
        let path = lasso_cox_path(&x, &y, &opts).unwrap();
        prop_assert!(path.betas[0].iter().all(|b| *b == 0.0));
        let norms: Vec<f64> = path.betas.iter().map(|b| b.iter().map(|v| v.abs()).sum()).collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8);
        }
    }

    #[test]
    fn texture_features_shift_invariant(vals in prop::collection::vec(-500i32..500, 27), c in -2000i32..2000) {
        let g = Geometry::new([3, 3, 3], [1.0; 3], [0.0; 3]).unwrap();
        let img = VoxelGrid::new(g, vals.iter().map(|v| *v as f64).collect()).unwrap();
        let m = Mask::filled(g, true);
        let p = ExtractionParams::new(25.0, 1, "CT").unwrap();
        let a = extract_all(&img, &m, &p).unwrap();
        let b = extract_all(&img.shifted(c as f64), &m, &p).unwrap();
        for (name, v) in a.iter().filter(|(n, _)| n.starts_with("glcm.") || n.starts_with("glszm.")) {
            prop_assert_eq!(Some(v), b.get(name), "{}", name);
        }
    }

    #[test]
    fn volume_round_trip(vals in prop::collection::vec(-3000.0f32..3000.0, 24), json in any::<bool>()) {
        let g = Geometry::new([2, 3, 4], [0.5, 1.0, 2.5], [-10.0, 0.0, 3.25]).unwrap();
        let v = VoxelGrid::new(g, vals.iter().map(|x| *x as f64).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(if json { "v.json" } else { "v.nii" });
        write_volume(&p, &v).unwrap();
        prop_assert_eq!(read_volume(&p).unwrap(), v);
    }

    #[test]
    fn tables_round_trip(
        rows in prop::collection::vec((1.0f64..5000.0, any::<bool>(), prop::option::of(20.0f64..90.0), -1e6f64..1e6), 1..20)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let y: Vec<SurvivalRecord> = rows.iter().enumerate()
            .map(|(i, r)| SurvivalRecord::new(format!("P{i:03}"), r.0, r.1).unwrap()).collect();
        write_outcomes(dir.path().join("o.csv"), &y).unwrap();
        prop_assert_eq!(read_outcomes(dir.path().join("o.csv")).unwrap(), y);

        let clin: Vec<ClinicalRecord> = rows.iter().enumerate().map(|(i, r)| {
            let mut c = ClinicalRecord::new(format!("P{i:03}"));
            c.age = r.2;
            c.gender = if r.1 { Some(Gender::F) } else { None };
            c.hpv = Some(r.1);
            c
        }).collect();
        write_clinical(dir.path().join("c.csv"), &clin).unwrap();
        prop_assert_eq!(read_clinical(dir.path().join("c.csv")).unwrap(), clin);

        let feats: Vec<(String, FeatureVector)> = rows.iter().enumerate().map(|(i, r)| {
            let mut f = FeatureVector::new();
            f.push("ct.a", r.3).unwrap();
            f.push("pet.b", r.0).unwrap();
            (format!("P{i:03}"), f)
        }).collect();
        write_feature_csv(dir.path().join("f.csv"), &feats).unwrap();
        prop_assert_eq!(read_feature_csv(dir.path().join("f.csv")).unwrap(), feats);
    }
}

fn random_cox_data(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<SurvivalRecord>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let y = (0..n)
        .map(|i| {
            let eta = 0.8 * x[(i, 0)] - 0.5 * x[(i, 1 % p)];
            let t = -(1.0 - rng.random::<f64>()).ln() / f64::exp(eta);
            let c = rng.random::<f64>() * 2.0;
            SurvivalRecord::new(format!("p{i}"), t.min(c), t <= c).unwrap()
        })
        .collect();
    (x, y)
}
