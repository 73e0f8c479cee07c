//! Unpenalised Cox regression by Newton–Raphson with step halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::risk::CoxData;
use super::SurvivalRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxFitOptions {
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Stop when the log-likelihood gain of an accepted step falls below this.
    pub tol: f64,
}

impl Default for CoxFitOptions {
    fn default() -> Self {
        CoxFitOptions {
            max_iter: 100,
            max_halvings: 10,
            tol: 1e-9,
        }
    }
}

/// Fitted proportional-hazards model `h(t, x) = h0(t) exp(beta · x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub covariate_names: Vec<String>,
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_partial_likelihood: f64,
    /// Breslow cumulative baseline hazard `(t, H0(t))` at each distinct event time.
    pub baseline: Vec<(f64, f64)>,
    pub diagnostics: Vec<String>,
}

impl CoxModel {
    /// Log relative hazard for one covariate row.
    pub fn risk_score(&self, x: &[f64]) -> Result<f64> {
        risk_score(self, x)
    }

    /// Cumulative baseline hazard at time `t` (step function, 0 before the first event).
    pub fn cumulative_baseline(&self, t: f64) -> f64 {
        self.baseline
            .iter()
            .take_while(|(s, _)| *s <= t)
            .last()
            .map_or(0.0, |(_, h)| *h)
    }
}

/// `Σ β_i x_i`.
pub fn risk_score(model: &CoxModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.beta.len() {
        return Err(Error::Argument(format!(
            "expected {} covariates, got {}",
            model.beta.len(),
            x.len()
        )));
    }
    Ok(model.beta.iter().zip(x).map(|(b, v)| b * v).sum())
}

/// Solve `A d = g` for symmetric positive semi-definite `A`, adding the
/// smallest ridge that makes the Cholesky factorisation succeed.
pub(crate) fn solve_psd(a: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(g);
    }
    let scale = a.diagonal().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut ridge = 1e-10 * scale;
    loop {
        let mut reg = a.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        if let Some(ch) = reg.cholesky() {
            return ch.solve(g);
        }
        ridge *= 10.0;
    }
}

/// Maximise the Breslow log partial likelihood starting from `beta = 0`.
pub fn cox_fit(
    x: &DMatrix<f64>,
    y: &[SurvivalRecord],
    names: &[String],
    opts: &CoxFitOptions,
) -> Result<CoxModel> {
    if names.len() != x.ncols() {
        return Err(Error::Argument(format!(
            "{} names for {} columns",
            names.len(),
            x.ncols()
        )));
    }
    let data = CoxData::new(x.clone(), y)?;
    let p = data.p();
    let mut diagnostics = Vec::new();
    if p >= data.n_events() {
        diagnostics.push(format!(
            "{p} covariates for {} events; estimates may be unstable",
            data.n_events()
        ));
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut d = data.derivatives(&beta);
    let mut converged = p == 0;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let step = solve_psd(&(-&d.hessian), &d.gradient);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &beta + &step * t;
            let ll = data.loglik(&cand);
            if ll.is_finite() && ll >= d.loglik {
                accepted = Some((cand, ll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, ll)) = accepted else {
            // no ascent direction left at floating-point resolution
            converged = d.gradient.amax() < 1e-6;
            if !converged {
                diagnostics.push(format!("step halving exhausted at iteration {iterations}"));
            }
            break;
        };
        let gain = ll - d.loglik;
        beta = cand;
        d = data.derivatives(&beta);
        assert!(
            d.loglik >= ll - 1e-9 * ll.abs().max(1.0),
            "Newton iterate decreased the likelihood"
        );
        if gain.abs() < opts.tol {
            converged = true;
        }
    }
    if !converged && iterations >= opts.max_iter {
        diagnostics.push(format!("no convergence after {} iterations", opts.max_iter));
    }
    if beta.iter().any(|b| !b.is_finite()) || !d.loglik.is_finite() {
        converged = false;
        diagnostics.push("non-finite likelihood or coefficients (separation?)".into());
    }
    // monotone likelihood: the fit drifts towards infinite hazard ratios
    for j in 0..p {
        let col = x.column(j);
        let sd = (col.map(|v| v * v).mean() - col.mean().powi(2))
            .max(0.0)
            .sqrt();
        if (beta[j] * sd).abs() > 20.0 {
            converged = false;
            diagnostics.push(format!(
                "coefficient {} diverging (possible separation)",
                names[j]
            ));
        }
    }

    let baseline = breslow_baseline(x, y, &beta);
    Ok(CoxModel {
        covariate_names: names.to_vec(),
        beta: beta.iter().copied().collect(),
        converged,
        iterations,
        log_partial_likelihood: d.loglik,
        baseline,
        diagnostics,
    })
}

fn breslow_baseline(
    x: &DMatrix<f64>,
    y: &[SurvivalRecord],
    beta: &DVector<f64>,
) -> Vec<(f64, f64)> {
    let eta = x * beta;
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[a].time.total_cmp(&y[b].time));
    let mut out = Vec::new();
    let mut cum = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let t = y[idx[k]].time;
        let mut end = k;
        while end < idx.len() && y[idx[end]].time == t {
            end += 1;
        }
        let d = idx[k..end].iter().filter(|&&i| y[i].event).count();
        if d > 0 {
            let s0: f64 = idx[k..].iter().map(|&i| eta[i].exp()).sum();
            cum += d as f64 / s0;
            out.push((t, cum));
        }
        k = end;
    }
    out
}
