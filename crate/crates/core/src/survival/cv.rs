//! Seeded splits and k-fold cross-validated LASSO selection.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cindex::concordance_index;
use super::cox::{cox_fit, CoxFitOptions, CoxModel};
use super::lasso::{lambda_grid, lambda_max, lasso_cox_path_with_lambdas, LassoOptions};
use super::risk::CoxData;
use super::SurvivalRecord;
use crate::error::{Error, Result};

// RNG streams, so splits and folds drawn from one seed are independent
const STREAM_SPLIT: u64 = 1;
const STREAM_FOLDS: u64 = 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Shuffle events and censored subjects separately and interleave them so
/// that every prefix of the result has close to the overall event rate.
fn stratified_order(y: &[SurvivalRecord], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut ev: Vec<usize> = (0..y.len()).filter(|&i| y[i].event).collect();
    let mut ce: Vec<usize> = (0..y.len()).filter(|&i| !y[i].event).collect();
    ev.shuffle(rng);
    ce.shuffle(rng);
    let (ne, nc) = (ev.len(), ce.len());
    let mut keyed: Vec<(f64, usize)> = ev
        .iter()
        .enumerate()
        .map(|(k, &i)| ((k as f64 + 0.5) / ne as f64, i))
        .chain(
            ce.iter()
                .enumerate()
                .map(|(k, &i)| ((k as f64 + 0.5) / nc as f64, i)),
        )
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(y[b.1].event.cmp(&y[a.1].event)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Fold id in `0..k` for each subject. Events are dealt round-robin first,
/// then censored subjects continue the rotation, so fold sizes differ by at
/// most one and event counts differ by at most one.
pub fn stratified_folds(y: &[SurvivalRecord], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {k}")));
    }
    if y.len() < k {
        return Err(Error::Argument(format!(
            "{} subjects for {k} folds",
            y.len()
        )));
    }
    let mut r = rng(seed, STREAM_FOLDS);
    let mut ev: Vec<usize> = (0..y.len()).filter(|&i| y[i].event).collect();
    let mut ce: Vec<usize> = (0..y.len()).filter(|&i| !y[i].event).collect();
    if ev.len() < k {
        return Err(Error::Fold(format!(
            "{} events cannot cover {k} folds",
            ev.len()
        )));
    }
    ev.shuffle(&mut r);
    ce.shuffle(&mut r);
    let mut fold = vec![0; y.len()];
    for (pos, &i) in ev.iter().chain(&ce).enumerate() {
        fold[i] = pos % k;
    }
    Ok(fold)
}

/// Index sets of a train/validation/test partition (each sorted ascending).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Event-stratified random partition with `ratios = (train, validation, test)`.
pub fn train_val_test_split(y: &[SurvivalRecord], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Argument(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let n = y.len();
    let n_test = (ratios[2] * n as f64).round() as usize;
    let n_val = (ratios[1] * n as f64).round() as usize;
    if n_test + n_val >= n {
        return Err(Error::Argument(format!(
            "{n} subjects leave no training data"
        )));
    }
    let order = stratified_order(y, &mut rng(seed, STREAM_SPLIT));
    let mut test = order[..n_test].to_vec();
    let mut validation = order[n_test..n_test + n_val].to_vec();
    let mut train = order[n_test + n_val..].to_vec();
    test.sort_unstable();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(Split {
        train,
        validation,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    pub lasso: LassoOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            k: 8,
            seed: 0,
            lasso: LassoOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    /// Mean over folds whose validation C-index is defined; NaN when none is.
    pub mean_cindex: f64,
    pub folds_used: usize,
    /// Non-zero coefficients on the full-data path at this lambda.
    pub nonzero: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub selected: Vec<String>,
    pub selected_indices: Vec<usize>,
    pub lambda: f64,
    pub curve: Vec<CvPoint>,
    /// Unpenalised Cox refit on the selected columns over all subjects.
    pub model: CoxModel,
}

/// Column means and population standard deviations; zero spread maps to scale 1.
fn column_scaling(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    (0..x.ncols())
        .map(|j| {
            let c = x.column(j);
            let mean = c.sum() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 0.0 { sd } else { 1.0 })
        })
        .unzip()
}

fn scale(x: &DMatrix<f64>, mean: &[f64], sd: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - mean[j]) / sd[j])
}

fn take_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// LASSO-Cox with k-fold CV over a lambda grid built on all subjects.
///
/// For each lambda the validation C-index of every fold is averaged; the
/// lambda with the highest mean wins, ties going to the larger lambda. The
/// columns non-zero on the full-data path at that lambda are refit without
/// penalty. Each fold's training split is z-scored on its own statistics.
pub fn select_features_cv(
    x: &DMatrix<f64>,
    y: &[SurvivalRecord],
    names: &[String],
    opts: &CvOptions,
) -> Result<CvSelection> {
    if names.len() != x.ncols() {
        return Err(Error::Argument(format!(
            "{} names for {} columns",
            names.len(),
            x.ncols()
        )));
    }
    opts.lasso.validate()?;
    let folds = stratified_folds(y, opts.k, opts.seed)?;

    let (mean, sd) = column_scaling(x);
    let xs = scale(x, &mean, &sd);
    let full = CoxData::new(xs.clone(), y)?;
    let lmax = lambda_max(&full);
    if x.ncols() == 0 || !(lmax > 0.0) {
        // nothing can enter the model
        let model = cox_fit(
            &DMatrix::zeros(y.len(), 0),
            y,
            &[],
            &CoxFitOptions::default(),
        )?;
        return Ok(CvSelection {
            selected: vec![],
            selected_indices: vec![],
            lambda: 0.0,
            curve: vec![],
            model,
        });
    }
    let lambdas = lambda_grid(lmax, opts.lasso.n_lambdas, opts.lasso.ratio);
    let full_path = lasso_cox_path_with_lambdas(&xs, y, &lambdas, &opts.lasso)?;

    let fold_scores: Vec<Vec<Option<f64>>> = (0..opts.k)
        .into_par_iter()
        .map(|f| -> Result<Vec<Option<f64>>> {
            let tr: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
            let va: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
            let xtr_raw = take_rows(x, &tr);
            let (m, s) = column_scaling(&xtr_raw);
            let xtr = scale(&xtr_raw, &m, &s);
            let xva = scale(&take_rows(x, &va), &m, &s);
            let ytr: Vec<SurvivalRecord> = tr.iter().map(|&i| y[i].clone()).collect();
            let yva: Vec<SurvivalRecord> = va.iter().map(|&i| y[i].clone()).collect();
            let path = lasso_cox_path_with_lambdas(&xtr, &ytr, &lambdas, &opts.lasso)?;
            Ok(path
                .betas
                .iter()
                .map(|b| {
                    let scores: Vec<f64> = (0..xva.nrows())
                        .map(|i| (0..b.len()).map(|j| b[j] * xva[(i, j)]).sum())
                        .collect();
                    concordance_index(&scores, &yva).ok()
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut curve = Vec::with_capacity(lambdas.len());
    for (l, &lambda) in lambdas.iter().enumerate() {
        let vals: Vec<f64> = fold_scores.iter().filter_map(|f| f[l]).collect();
        let mean_cindex = if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        curve.push(CvPoint {
            lambda,
            mean_cindex,
            folds_used: vals.len(),
            nonzero: full_path.nonzero_counts[l],
        });
    }
    let mut best = 0;
    for (l, pt) in curve.iter().enumerate() {
        if pt.mean_cindex > curve[best].mean_cindex
            || curve[best].mean_cindex.is_nan() && !pt.mean_cindex.is_nan()
        {
            best = l;
        }
    }

    let selected_indices: Vec<usize> = full_path.betas[best]
        .iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(j, _)| j)
        .collect();
    let selected: Vec<String> = selected_indices.iter().map(|&j| names[j].clone()).collect();
    let xsel = DMatrix::from_fn(x.nrows(), selected_indices.len(), |i, j| {
        x[(i, selected_indices[j])]
    });
    let model = cox_fit(&xsel, y, &selected, &CoxFitOptions::default())?;
    Ok(CvSelection {
        selected,
        selected_indices,
        lambda: lambdas[best],
        curve,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(n: usize, event_every: usize) -> Vec<SurvivalRecord> {
        (0..n)
            .map(|i| {
                SurvivalRecord::new(format!("p{i}"), 1.0 + i as f64, i % event_every == 0).unwrap()
            })
            .collect()
    }

    #[test]
    fn fold_sizes_for_488() {
        let y = cohort(488, 3);
        let f = stratified_folds(&y, 8, 42).unwrap();
        for k in 0..8 {
            let size = f.iter().filter(|&&v| v == k).count();
            assert!((60..=62).contains(&size), "fold {k} has {size}");
            assert!(f.iter().zip(&y).any(|(&v, r)| v == k && r.event));
        }
        assert_eq!(f, stratified_folds(&y, 8, 42).unwrap());
        assert_ne!(f, stratified_folds(&y, 8, 43).unwrap());
    }

    #[test]
    fn too_few_events() {
        let y = cohort(40, 10);
        assert!(matches!(stratified_folds(&y, 8, 0), Err(Error::Fold(_))));
        assert!(matches!(
            stratified_folds(&y[..5], 8, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn split_partitions_subjects() {
        let y = cohort(200, 4);
        let s = train_val_test_split(&y, [0.85, 0.075, 0.075], 7).unwrap();
        assert_eq!(s.test.len(), 15);
        assert_eq!(s.validation.len(), 15);
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.validation)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        let test_events = s.test.iter().filter(|&&i| y[i].event).count();
        assert!((3..=5).contains(&test_events), "{test_events}");
        assert_eq!(
            s,
            train_val_test_split(&y, [0.85, 0.075, 0.075], 7).unwrap()
        );
    }

    #[test]
    fn scaling_handles_constant_columns() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let (m, s) = column_scaling(&x);
        assert_eq!(m, vec![2.0, 5.0]);
        assert_eq!(s[1], 1.0);
        let z = scale(&x, &m, &s);
        assert!(z.column(1).iter().all(|v| *v == 0.0));
    }
}
