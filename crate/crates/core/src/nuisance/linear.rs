//! Least squares and cross-validated lasso.
//!
//! The lasso minimizes `(1/2n)‖y − a − Zb‖² + λ‖b‖₁` over standardized columns
//! `Z` (population standard deviation) and reports coefficients on the
//! original scale. Coordinate descent runs on the Gram matrix, which lets the
//! CV folds reuse per-fold sufficient statistics.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regularization {
    None,
    Ridge(f64),
    Lasso(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: DVector<f64>,
    pub regularization: Regularization,
}

impl LinearModel {
    pub fn constant(value: f64, p: usize) -> Self {
        Self {
            intercept: value,
            coefficients: DVector::zeros(p),
            regularization: Regularization::None,
        }
    }

    pub fn predict(&self, x: &DVector<f64>) -> f64 {
        self.intercept + self.coefficients.dot(x)
    }

    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut out = x * &self.coefficients;
        out.add_scalar_mut(self.intercept);
        out
    }
}

/// Relative eigenvalue floor below which the Gram matrix counts as singular.
const SINGULAR_RCOND: f64 = 1e-12;
const JITTER: f64 = 1e-8;

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn centered(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    xc
}

/// OLS for several targets sharing one design, with ridge jitter when the
/// Gram matrix is numerically singular.
pub fn fit_ols_multi(x: &DMatrix<f64>, y: &DMatrix<f64>, jitter: bool) -> Result<Vec<LinearModel>> {
    let n = x.nrows();
    if n == 0 || y.nrows() != n {
        return Err(if n == 0 {
            Error::SingularDesign
        } else {
            Error::dim("regression targets", n, y.nrows())
        });
    }
    let p = x.ncols();
    let xm = column_means(x);
    let ym = column_means(y);
    if p == 0 {
        return Ok(ym.iter().map(|&m| LinearModel::constant(m, 0)).collect());
    }
    let xc = centered(x, &xm);
    let yc = centered(y, &ym);
    let mut gram = xc.tr_mul(&xc);
    let rhs = xc.tr_mul(&yc);

    let eig = gram.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    let mut regularization = Regularization::None;
    if max_ev <= 0.0 || min_ev <= SINGULAR_RCOND * max_ev {
        if !jitter {
            return Err(Error::SingularDesign);
        }
        let ridge = JITTER * max_ev.max(f64::MIN_POSITIVE) + f64::MIN_POSITIVE;
        for i in 0..p {
            gram[(i, i)] += ridge;
        }
        regularization = Regularization::Ridge(ridge);
    }
    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).ok_or(Error::SingularDesign)?,
    };
    Ok((0..y.ncols())
        .map(|c| {
            let coef = beta.column(c).into_owned();
            LinearModel {
                intercept: ym[c] - coef.dot(&xm),
                coefficients: coef,
                regularization,
            }
        })
        .collect())
}

pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearModel> {
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    Ok(fit_ols_multi(x, &y, true)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoCvConfig {
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub n_folds: usize,
    /// Explicit grid; overrides `n_lambda`/`lambda_min_ratio` when set.
    pub grid: Option<Vec<f64>>,
}

impl Default for LassoCvConfig {
    fn default() -> Self {
        Self {
            n_lambda: 50,
            lambda_min_ratio: 1e-4,
            n_folds: 5,
            grid: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoCvFit {
    pub model: LinearModel,
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub cv_mse: Vec<f64>,
}

/// Centered moments of a sample: `Σx`, `Σxxᵀ`, `Σy`, `Σxy`, count.
#[derive(Debug, Clone)]
struct Moments {
    n: f64,
    sx: DVector<f64>,
    sxx: DMatrix<f64>,
    sy: f64,
    sxy: DVector<f64>,
}

impl Moments {
    fn of(x: &DMatrix<f64>, y: &DVector<f64>, rows: Option<&[usize]>) -> Self {
        let p = x.ncols();
        match rows {
            None => Moments {
                n: x.nrows() as f64,
                sx: DVector::from_iterator(p, x.column_iter().map(|c| c.sum())),
                sxx: x.tr_mul(x),
                sy: y.sum(),
                sxy: x.tr_mul(y),
            },
            Some(rows) => {
                let sub = x.select_rows(rows);
                let ys = y.select_rows(rows);
                Moments::of(&sub, &ys, None)
            }
        }
    }

    fn minus(&self, other: &Moments) -> Moments {
        Moments {
            n: self.n - other.n,
            sx: &self.sx - &other.sx,
            sxx: &self.sxx - &other.sxx,
            sy: self.sy - other.sy,
            sxy: &self.sxy - &other.sxy,
        }
    }
}

/// Standardized Gram problem built from moments.
struct Problem {
    keep: Vec<usize>,
    means: DVector<f64>,
    sds: Vec<f64>,
    ybar: f64,
    c_mat: DMatrix<f64>,
    c_vec: DVector<f64>,
}

fn zero_variance(sd: f64, mean: f64) -> bool {
    !(sd > 1e-10 * (1.0 + mean.abs()))
}

impl Problem {
    fn from_moments(m: &Moments) -> Problem {
        let n = m.n;
        let p = m.sx.len();
        let means = &m.sx / n;
        let ybar = m.sy / n;
        let mut keep = Vec::new();
        let mut sds = Vec::new();
        for j in 0..p {
            let var = (m.sxx[(j, j)] / n - means[j] * means[j]).max(0.0);
            let sd = var.sqrt();
            if !zero_variance(sd, means[j]) {
                keep.push(j);
                sds.push(sd);
            }
        }
        let q = keep.len();
        let mut c_mat = DMatrix::zeros(q, q);
        let mut c_vec = DVector::zeros(q);
        for (a, &ja) in keep.iter().enumerate() {
            c_vec[a] = (m.sxy[ja] / n - means[ja] * ybar) / sds[a];
            for (b, &jb) in keep.iter().enumerate().skip(a) {
                let v = (m.sxx[(ja, jb)] / n - means[ja] * means[jb]) / (sds[a] * sds[b]);
                c_mat[(a, b)] = v;
                c_mat[(b, a)] = v;
            }
        }
        Problem {
            keep,
            means,
            sds,
            ybar,
            c_mat,
            c_vec,
        }
    }

    fn lambda_max(&self) -> f64 {
        self.c_vec.amax()
    }

    /// Map standardized coefficients back to the original scale. `shift_x`
    /// and `shift_y` undo the global centering applied before the moments.
    fn to_model(&self, b: &DVector<f64>, p: usize, shift_x: &DVector<f64>, shift_y: f64, lambda: f64) -> LinearModel {
        let mut coef = DVector::zeros(p);
        for (a, &j) in self.keep.iter().enumerate() {
            coef[j] = b[a] / self.sds[a];
        }
        let intercept = self.ybar + shift_y - coef.dot(&(&self.means + shift_x));
        LinearModel {
            intercept,
            coefficients: coef,
            regularization: Regularization::Lasso(lambda),
        }
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Largest violation of the lasso optimality conditions for gradient `r = c − Cb`.
fn kkt_violation(r: &DVector<f64>, b: &DVector<f64>, lambda: f64) -> f64 {
    r.iter()
        .zip(b.iter())
        .map(|(&g, &bj)| {
            if bj != 0.0 {
                (g - lambda * bj.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Cyclic coordinate descent on the standardized Gram problem, warm-started from `b`.
fn coordinate_descent(c_mat: &DMatrix<f64>, c_vec: &DVector<f64>, lambda: f64, b: &mut DVector<f64>, tol: f64) {
    let q = c_vec.len();
    if q == 0 {
        return;
    }
    let mut r = c_vec - c_mat * &*b;
    for _ in 0..200_000 {
        for j in 0..q {
            let cjj = c_mat[(j, j)];
            if cjj <= 0.0 {
                continue;
            }
            let old = b[j];
            let new = soft_threshold(r[j] + cjj * old, lambda) / cjj;
            if new != old {
                let delta = new - old;
                b[j] = new;
                r.axpy(-delta, &c_mat.column(j), 1.0);
            }
        }
        r = c_vec - c_mat * &*b;
        if kkt_violation(&r, b, lambda) < tol {
            break;
        }
    }
}

fn tolerance(problem: &Problem, tight: bool) -> f64 {
    let scale = problem.c_vec.amax().max(1.0);
    if tight {
        1e-11 * scale
    } else {
        1e-7 * scale
    }
}

/// Lasso at a single `λ` on standardized columns.
pub fn fit_lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LinearModel> {
    if x.nrows() == 0 {
        return Err(Error::SingularDesign);
    }
    if x.nrows() != y.len() {
        return Err(Error::dim("lasso targets", x.nrows(), y.len()));
    }
    let (xc, xm, yc, ym) = globally_centered(x, y);
    let problem = Problem::from_moments(&Moments::of(&xc, &yc, None));
    let mut b = DVector::zeros(problem.keep.len());
    coordinate_descent(&problem.c_mat, &problem.c_vec, lambda, &mut b, tolerance(&problem, true));
    Ok(problem.to_model(&b, x.ncols(), &xm, ym, lambda))
}

fn globally_centered(x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
    let xm = column_means(x);
    let ym = y.mean();
    let xc = centered(x, &xm);
    let yc = y.add_scalar(-ym);
    (xc, xm, yc, ym)
}

fn make_grid(lambda_max: f64, cfg: &LassoCvConfig) -> Result<Vec<f64>> {
    if let Some(grid) = &cfg.grid {
        if grid.is_empty() || grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::EmptyGrid);
        }
        let mut g = grid.clone();
        g.sort_by(|a, b| b.total_cmp(a));
        return Ok(g);
    }
    if cfg.n_lambda == 0 {
        return Err(Error::EmptyGrid);
    }
    if cfg.n_lambda == 1 {
        return Ok(vec![lambda_max]);
    }
    let ratio = cfg.lambda_min_ratio;
    Ok((0..cfg.n_lambda)
        .map(|i| lambda_max * ratio.powf(i as f64 / (cfg.n_lambda - 1) as f64))
        .collect())
}

/// Lasso with `λ` chosen by k-fold CV mean squared error. Fold assignment is
/// a seeded permutation, so the fit is a pure function of `(x, y, cfg, seed)`.
pub fn fit_lasso_cv(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &LassoCvConfig, seed: u64) -> Result<LassoCvFit> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::SingularDesign);
    }
    if n != y.len() {
        return Err(Error::dim("lasso targets", n, y.len()));
    }
    let p = x.ncols();
    let (xc, xm, yc, ym) = globally_centered(x, y);
    let total = Moments::of(&xc, &yc, None);
    let full = Problem::from_moments(&total);
    let lambda_max = full.lambda_max();
    let grid = make_grid(lambda_max, cfg)?;
    if lambda_max == 0.0 || full.keep.is_empty() {
        let model = full.to_model(&DVector::zeros(full.keep.len()), p, &xm, ym, lambda_max);
        return Ok(LassoCvFit {
            model,
            lambda: grid[0],
            cv_mse: vec![0.0; grid.len()],
            grid,
        });
    }

    let k = cfg.n_folds.min(n);
    let mut cv_sse = vec![0.0; grid.len()];
    if k >= 2 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng_from(seed));
        let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (pos, &i) in perm.iter().enumerate() {
            folds[pos % k].push(i);
        }
        for fold in folds.iter_mut() {
            fold.sort_unstable();
        }
        for rows in &folds {
            let held = Moments::of(&xc, &yc, Some(rows));
            let train = Problem::from_moments(&total.minus(&held));
            let x_test = xc.select_rows(rows);
            let y_test = yc.select_rows(rows);
            let zero = DVector::zeros(p);
            let tol = tolerance(&train, false);
            let mut b = DVector::zeros(train.keep.len());
            for (li, &lambda) in grid.iter().enumerate() {
                coordinate_descent(&train.c_mat, &train.c_vec, lambda, &mut b, tol);
                let model = train.to_model(&b, p, &zero, 0.0, lambda);
                let resid = &y_test - model.predict_matrix(&x_test);
                cv_sse[li] += resid.norm_squared();
            }
        }
    }
    let cv_mse: Vec<f64> = cv_sse.iter().map(|s| s / n as f64).collect();
    let best = if k >= 2 {
        cv_mse
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc })
            .0
    } else {
        grid.len() - 1
    };

    let mut b = DVector::zeros(full.keep.len());
    let loose = tolerance(&full, false);
    for &lambda in &grid[..best] {
        coordinate_descent(&full.c_mat, &full.c_vec, lambda, &mut b, loose);
    }
    coordinate_descent(&full.c_mat, &full.c_vec, grid[best], &mut b, tolerance(&full, true));
    Ok(LassoCvFit {
        model: full.to_model(&b, p, &xm, ym, grid[best]),
        lambda: grid[best],
        grid,
        cv_mse,
    })
}
