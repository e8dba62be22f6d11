use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: DVector<f64>,
    /// Ridge strength on the mean log-loss scale; nonzero only after a separation refit.
    pub ridge: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &DVector<f64>) -> f64 {
        self.intercept + self.coefficients.dot(x)
    }

    pub fn prob(&self, x: &DVector<f64>) -> f64 {
        sigmoid(self.linear_predictor(x))
    }

    /// Probability clipped into `[eps, 1 - eps]`, with a flag for whether clipping bit.
    pub fn prob_clipped(&self, x: &DVector<f64>, eps: f64) -> (f64, bool) {
        let p = self.prob(x);
        let c = p.clamp(eps, 1.0 - eps);
        (c, c != p)
    }
}

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
const SEPARATION_RIDGE: f64 = 1e-3;

pub fn fit_logistic(x: &DMatrix<f64>, labels: &[bool]) -> Result<LogisticModel> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::dim("logistic labels", n, labels.len()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass);
    }
    match newton(x, labels, 0.0) {
        Some(m) if m.converged && !separates(&m, x, labels) => Ok(m),
        _ => newton(x, labels, SEPARATION_RIDGE).ok_or(Error::SingularDesign),
    }
}

/// A fitted predictor that strictly orders the classes means the data are
/// separable and the unpenalized optimum lies at infinity.
fn separates(m: &LogisticModel, x: &DMatrix<f64>, labels: &[bool]) -> bool {
    let (mut lo_pos, mut hi_neg) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &l) in labels.iter().enumerate() {
        let eta = m.intercept + m.coefficients.dot(&x.row(i).transpose());
        if l {
            lo_pos = lo_pos.min(eta);
        } else {
            hi_neg = hi_neg.max(eta);
        }
    }
    lo_pos > hi_neg
}

/// Mean penalized log-loss.
fn loss(xa: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = xa * beta;
    let n = y.len() as f64;
    let data: f64 = eta.iter().zip(y.iter()).map(|(e, yi)| softplus(*e) - yi * e).sum::<f64>() / n;
    data + 0.5 * ridge * beta.rows(1, beta.len() - 1).norm_squared()
}

/// Damped Newton iterations. Returns `None` when the Hessian cannot be factored.
fn newton(x: &DMatrix<f64>, labels: &[bool], ridge: f64) -> Option<LogisticModel> {
    let n = x.nrows();
    let p = x.ncols();
    let mut xa = DMatrix::from_element(n, p + 1, 1.0);
    xa.view_mut((0, 1), (n, p)).copy_from(x);
    let y = DVector::from_iterator(n, labels.iter().map(|&l| if l { 1.0 } else { 0.0 }));
    let rate: f64 = y.mean();
    let mut beta = DVector::zeros(p + 1);
    beta[0] = (rate / (1.0 - rate)).ln();
    let nf = n as f64;
    let mut current = loss(&xa, &y, &beta, ridge);
    for iter in 0..MAX_ITER {
        let eta = &xa * &beta;
        let prob = eta.map(sigmoid);
        let mut grad = xa.tr_mul(&(&prob - &y)) / nf;
        let w = prob.map(|q| q * (1.0 - q));
        let mut xw = xa.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut hess = xa.tr_mul(&xw) / nf;
        for j in 1..=p {
            grad[j] += ridge * beta[j];
            hess[(j, j)] += ridge;
        }
        if grad.norm() < GRAD_TOL {
            return Some(model(beta, ridge, iter, true));
        }
        let step = hess.cholesky()?.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta - &step * t;
            let l = loss(&xa, &y, &cand, ridge);
            if l <= current {
                beta = cand;
                current = l;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || beta.amax() > 1e8 {
            return Some(model(beta, ridge, iter + 1, false));
        }
    }
    Some(model(beta, ridge, MAX_ITER, false))
}

fn model(beta: DVector<f64>, ridge: f64, iterations: usize, converged: bool) -> LogisticModel {
    LogisticModel {
        intercept: beta[0],
        coefficients: beta.rows(1, beta.len() - 1).into_owned(),
        ridge,
        iterations,
        converged,
    }
}
