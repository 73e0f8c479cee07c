//! Risk-set bookkeeping for the Breslow partial likelihood.

use nalgebra::{DMatrix, DVector};

use super::SurvivalRecord;
use crate::error::{Error, Result};

/// Covariates and outcomes with subjects grouped by distinct time.
#[derive(Clone, Debug)]
pub struct CoxData {
    x: DMatrix<f64>,
    events: Vec<bool>,
    // subject indices sorted by descending time
    order: Vec<usize>,
    // [start, end) ranges into `order`, one per distinct time, descending
    groups: Vec<(usize, usize)>,
    n_events: usize,
}

/// Log partial likelihood with gradient and Hessian.
#[derive(Clone, Debug)]
pub struct Derivatives {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl CoxData {
    pub fn new(x: DMatrix<f64>, y: &[SurvivalRecord]) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Argument(format!(
                "{} covariate rows but {} outcomes",
                x.nrows(),
                y.len()
            )));
        }
        for r in y {
            r.validate()?;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite covariate value".into()));
        }
        let times: Vec<f64> = y.iter().map(|r| r.time).collect();
        let events: Vec<bool> = y.iter().map(|r| r.event).collect();
        let n_events = events.iter().filter(|&&e| e).count();
        if n_events == 0 {
            return Err(Error::NoEvents);
        }
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=order.len() {
            if k == order.len() || times[order[k]] != times[order[start]] {
                groups.push((start, k));
                start = k;
            }
        }
        Ok(CoxData {
            x,
            events,
            order,
            groups,
            n_events,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn linear_predictor(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.x * beta
    }

    /// Breslow log partial likelihood at linear predictor `eta`.
    pub fn loglik_eta(&self, eta: &DVector<f64>) -> f64 {
        let shift = eta.max();
        let mut s0 = 0.0;
        let mut ll = 0.0;
        for &(a, b) in &self.groups {
            let mut d = 0.0;
            for &i in &self.order[a..b] {
                s0 += (eta[i] - shift).exp();
                if self.events[i] {
                    ll += eta[i];
                    d += 1.0;
                }
            }
            if d > 0.0 {
                ll -= d * (s0.ln() + shift);
            }
        }
        ll
    }

    pub fn loglik(&self, beta: &DVector<f64>) -> f64 {
        self.loglik_eta(&self.linear_predictor(beta))
    }

    pub fn derivatives(&self, beta: &DVector<f64>) -> Derivatives {
        let p = self.p();
        let eta = self.linear_predictor(beta);
        let shift = eta.max();
        let mut s0 = 0.0;
        let mut s1 = DVector::<f64>::zeros(p);
        let mut s2 = DMatrix::<f64>::zeros(p, p);
        let mut ll = 0.0;
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for &(a, b) in &self.groups {
            let mut d = 0.0;
            for &i in &self.order[a..b] {
                let w = (eta[i] - shift).exp();
                let xi = self.x.row(i).transpose();
                s0 += w;
                s1.axpy(w, &xi, 1.0);
                s2.ger(w, &xi, &xi, 1.0);
                if self.events[i] {
                    ll += eta[i];
                    grad += &xi;
                    d += 1.0;
                }
            }
            if d > 0.0 {
                ll -= d * (s0.ln() + shift);
                let mean = &s1 / s0;
                grad.axpy(-d, &mean, 1.0);
                hess -= (&s2 / s0 - &mean * mean.transpose()) * d;
            }
        }
        Derivatives {
            loglik: ll,
            gradient: grad,
            hessian: hess,
        }
    }

    /// Gradient and diagonal Hessian of the log partial likelihood with respect
    /// to each subject's linear predictor: `(d L / d eta_i, -d² L / d eta_i²)`.
    pub fn eta_derivatives(&self, eta: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let shift = eta.max();
        let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
        // descending sweep: risk-set sums at each distinct time
        let mut s0 = 0.0;
        let mut per_group = Vec::with_capacity(self.groups.len());
        for &(a, b) in &self.groups {
            let mut d = 0.0;
            for &i in &self.order[a..b] {
                s0 += w[i];
                if self.events[i] {
                    d += 1.0;
                }
            }
            per_group.push((d / s0, d / (s0 * s0)));
        }
        // ascending sweep: accumulate over event times <= t_i
        let mut grad = vec![0.0; n];
        let mut hdiag = vec![0.0; n];
        let (mut acc1, mut acc2) = (0.0, 0.0);
        for (g, &(a, b)) in self.groups.iter().enumerate().rev() {
            acc1 += per_group[g].0;
            acc2 += per_group[g].1;
            for &i in &self.order[a..b] {
                let e = if self.events[i] { 1.0 } else { 0.0 };
                grad[i] = e - w[i] * acc1;
                hdiag[i] = (w[i] * acc1 - w[i] * w[i] * acc2).max(0.0);
            }
        }
        (grad, hdiag)
    }
}
