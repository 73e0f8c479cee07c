//! L1-penalised Cox path by coordinate descent on the IRLS quadratic.
//!
//! Minimises `-(1/n) L(beta) + lambda |beta|_1`. Each outer iteration takes
//! the per-subject gradient and diagonal Hessian of `L` at the current linear
//! predictor and runs cyclic coordinate descent on the resulting weighted
//! least-squares surrogate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::risk::CoxData;
use super::SurvivalRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LassoOptions {
    pub n_lambdas: usize,
    /// Smallest lambda as a fraction of lambda_max.
    pub ratio: f64,
    /// Convergence threshold on the largest `curvature * change^2` over coefficients.
    pub tol: f64,
    pub max_outer: usize,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            n_lambdas: 100,
            ratio: 0.01,
            tol: 1e-7,
            max_outer: 100,
            max_sweeps: 1000,
        }
    }
}

impl LassoOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambdas < 1 {
            return Err(Error::Argument("n_lambdas must be at least 1".into()));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Argument(format!(
                "lambda ratio must lie in (0, 1), got {}",
                self.ratio
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Argument("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
    pub nonzero_counts: Vec<usize>,
    /// Per-lambda convergence of the solver.
    pub converged: Vec<bool>,
}

/// `max_j |(1/n) dL/d beta_j|` at `beta = 0`.
pub fn lambda_max(data: &CoxData) -> f64 {
    let n = data.n() as f64;
    let (g, _) = data.eta_derivatives(&DVector::zeros(data.n()));
    // same summation order as the coordinate update, so beta(lambda_max) is exactly 0
    (0..data.p())
        .map(|j| {
            (data
                .x()
                .column(j)
                .iter()
                .zip(&g)
                .map(|(v, gi)| v * gi)
                .sum::<f64>()
                / n)
                .abs()
        })
        .fold(0.0, f64::max)
}

/// `n` log-spaced values from `lmax` down to `ratio * lmax`.
pub fn lambda_grid(lmax: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lmax];
    }
    let step = ratio.ln() / (n - 1) as f64;
    (0..n)
        .map(|k| {
            if k == 0 {
                lmax
            } else {
                lmax * (step * k as f64).exp()
            }
        })
        .collect()
}

pub fn lasso_cox_path(
    x: &DMatrix<f64>,
    y: &[SurvivalRecord],
    opts: &LassoOptions,
) -> Result<LassoPath> {
    opts.validate()?;
    let data = CoxData::new(x.clone(), y)?;
    let lmax = lambda_max(&data);
    if !(lmax > 0.0) {
        return Err(Error::Data(
            "score is zero for every covariate at beta = 0; no lambda path".into(),
        ));
    }
    solve_path(&data, &lambda_grid(lmax, opts.n_lambdas, opts.ratio), opts)
}

/// Path over caller-supplied lambdas (decreasing), e.g. a grid shared across folds.
pub fn lasso_cox_path_with_lambdas(
    x: &DMatrix<f64>,
    y: &[SurvivalRecord],
    lambdas: &[f64],
    opts: &LassoOptions,
) -> Result<LassoPath> {
    opts.validate()?;
    if lambdas.is_empty() || lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::Argument(
            "lambdas must be positive and finite".into(),
        ));
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Argument(
            "lambdas must be strictly decreasing".into(),
        ));
    }
    let data = CoxData::new(x.clone(), y)?;
    solve_path(&data, lambdas, opts)
}

fn solve_path(data: &CoxData, lambdas: &[f64], opts: &LassoOptions) -> Result<LassoPath> {
    let p = data.p();
    let mut beta = DVector::<f64>::zeros(p);
    let mut betas = Vec::with_capacity(lambdas.len());
    let mut nonzero_counts = Vec::with_capacity(lambdas.len());
    let mut converged = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let ok = solve_one(data, &mut beta, lambda, opts);
        nonzero_counts.push(beta.iter().filter(|b| **b != 0.0).count());
        betas.push(beta.iter().copied().collect());
        converged.push(ok);
    }
    Ok(LassoPath {
        lambdas: lambdas.to_vec(),
        betas,
        nonzero_counts,
        converged,
    })
}

fn objective(data: &CoxData, beta: &DVector<f64>, lambda: f64) -> f64 {
    -data.loglik(beta) / data.n() as f64 + lambda * beta.lp_norm(1)
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Warm-started solve at one lambda; returns whether it converged.
fn solve_one(data: &CoxData, beta: &mut DVector<f64>, lambda: f64, opts: &LassoOptions) -> bool {
    let n = data.n() as f64;
    let x = data.x();
    let p = data.p();
    let mut f_old = objective(data, beta, lambda);
    for _ in 0..opts.max_outer {
        let eta0 = data.linear_predictor(beta);
        let (grad, w) = data.eta_derivatives(&eta0);
        // working residual r_i = grad_i - w_i (eta_i - eta0_i)
        let mut r = grad;
        let curv: Vec<f64> = (0..p)
            .map(|j| {
                x.column(j)
                    .iter()
                    .zip(&w)
                    .map(|(v, wi)| wi * v * v)
                    .sum::<f64>()
                    / n
            })
            .collect();
        let start = beta.clone();
        let all: Vec<usize> = (0..p).collect();
        let mut sweeps = 0;
        // full sweeps alternate with sweeps over the active set until both settle
        while sweeps < opts.max_sweeps {
            let d = sweep(x, &all, &curv, &w, &mut r, beta, lambda, n);
            sweeps += 1;
            if d < opts.tol {
                break;
            }
            let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            while sweeps < opts.max_sweeps {
                sweeps += 1;
                if sweep(x, &active, &curv, &w, &mut r, beta, lambda, n) < opts.tol {
                    break;
                }
            }
        }
        // the surrogate is a local model: backtrack if the true objective rose
        let mut f_new = objective(data, beta, lambda);
        let mut halvings = 0;
        while !(f_new <= f_old + 1e-15 * f_old.abs()) && halvings < 30 {
            *beta = &start + (&*beta - &start) * 0.5;
            f_new = objective(data, beta, lambda);
            halvings += 1;
        }
        if !(f_new <= f_old + 1e-15 * f_old.abs()) {
            *beta = start;
            return false;
        }
        let change = (0..p)
            .map(|j| curv[j] * (beta[j] - start[j]).powi(2))
            .fold(0.0, f64::max);
        f_old = f_new;
        if change < opts.tol {
            return true;
        }
    }
    false
}

/// One cyclic pass over `cols`; returns the largest curvature-weighted squared change.
#[allow(clippy::too_many_arguments)]
fn sweep(
    x: &DMatrix<f64>,
    cols: &[usize],
    curv: &[f64],
    w: &[f64],
    r: &mut [f64],
    beta: &mut DVector<f64>,
    lambda: f64,
    n: f64,
) -> f64 {
    let mut max_delta = 0.0f64;
    for &j in cols {
        let new = if curv[j] <= 0.0 {
            0.0
        } else {
            let z = x
                .column(j)
                .iter()
                .zip(r.iter())
                .map(|(v, ri)| v * ri)
                .sum::<f64>()
                / n
                + curv[j] * beta[j];
            soft_threshold(z, lambda) / curv[j]
        };
        let d = new - beta[j];
        if d != 0.0 {
            beta[j] = new;
            update(x, j, d, w, r);
            max_delta = max_delta.max(curv[j] * d * d);
        }
    }
    max_delta
}

fn update(x: &DMatrix<f64>, j: usize, d: f64, w: &[f64], r: &mut [f64]) {
    for (i, v) in x.column(j).iter().enumerate() {
        r[i] -= w[i] * v * d;
    }
}
