//! Binary Gaussian-process classification with a logistic link and the
//! Laplace approximation.
//!
//! Mode finding is damped Newton in the curvature-scaled form
//! `B = I + W^½ K W^½`, so `K` is never inverted. The predictive Gaussian at
//! evaluation inputs `W*` is
//!
//! ```text
//! mean = K(W*, W) ∇log p(y | η̂)                 (= K(W*, W) K⁻¹ η̂ at the mode)
//! cov  = K(W*, W*) − K(W*, W) (K + ∇⁻¹)⁻¹ K(W, W*)
//! ```

use faer::{Mat, MatRef};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{se_symmetric, GramMatrices, KernelSpec};
use crate::linalg;
use crate::rng::{Purpose, StreamKey};

/// Logistic function `1 / (1 + e^{-t})`.
pub fn link(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Bernoulli-logistic log-likelihood with its gradient and the (positive)
/// diagonal curvature `Ψ(η)(1 − Ψ(η))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikTerms {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub curvature: Vec<f64>,
}

pub fn log_lik_terms(eta: &[f64], y: &[f64]) -> Result<LogLikTerms> {
    if eta.len() != y.len() {
        return Err(Error::shape(format!("eta has {} entries, y has {}", eta.len(), y.len())));
    }
    Ok(log_lik_unchecked(eta, y))
}

fn log_lik_unchecked(eta: &[f64], y: &[f64]) -> LogLikTerms {
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(eta.len());
    let mut curvature = Vec::with_capacity(eta.len());
    for (&e, &yi) in eta.iter().zip(y) {
        let p = link(e);
        value += yi * e - log1p_exp(e);
        gradient.push(yi - p);
        curvature.push(p * (1.0 - p));
    }
    LogLikTerms {
        value,
        gradient,
        curvature,
    }
}

fn log_lik_value(eta: &[f64], y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(&e, &yi)| yi * e - log1p_exp(e)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Tolerance on `‖∇log p(y|η) − K⁻¹η‖∞`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// Newton state at the (approximate) mode for a training covariance `K`.
#[derive(Debug, Clone)]
pub(crate) struct Mode {
    pub f: Vec<f64>,
    pub alpha: Vec<f64>,
    pub terms: LogLikTerms,
    pub sqrt_w: Vec<f64>,
    /// Lower Cholesky factor of `I + W^½ K W^½` at the mode.
    pub chol_b: Mat<f64>,
    pub log_ml: f64,
    pub converged: bool,
    pub iterations: usize,
    pub stationarity: f64,
    pub objective_trace: Vec<f64>,
}

fn chol_b(k: MatRef<'_, f64>, sqrt_w: &[f64]) -> Result<Mat<f64>> {
    let n = k.nrows();
    let b = Mat::from_fn(n, n, |i, j| {
        let v = sqrt_w[i] * k[(i, j)] * sqrt_w[j];
        if i == j {
            1.0 + v
        } else {
            v
        }
    });
    linalg::cholesky(b.as_ref()).ok_or_else(|| Error::numeric("I + W^1/2 K W^1/2 is not positive definite"))
}

fn objective(alpha: &[f64], f: &[f64], y: &[f64]) -> f64 {
    -0.5 * linalg::dot(alpha, f) + log_lik_value(f, y)
}

fn stationarity(gradient: &[f64], alpha: &[f64]) -> f64 {
    gradient
        .iter()
        .zip(alpha)
        .map(|(g, a)| (g - a).abs())
        .fold(0.0, f64::max)
}

/// Damped Newton for `argmax_η log p(y|η) − ½ ηᵀK⁻¹η`, parameterized by
/// `α = K⁻¹η`. `alpha0` warm-starts the iteration.
pub(crate) fn find_mode(k: MatRef<'_, f64>, y: &[f64], alpha0: Option<&[f64]>, opts: &NewtonOptions) -> Result<Mode> {
    let n = y.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::shape(format!("covariance is {}x{}, y has {n} entries", k.nrows(), k.ncols())));
    }
    let mut alpha = match alpha0 {
        Some(a) if a.len() == n => a.to_vec(),
        _ => vec![0.0; n],
    };
    let mut f = linalg::matvec(k, &alpha);
    let mut obj = objective(&alpha, &f, y);
    if !obj.is_finite() {
        alpha = vec![0.0; n];
        f = vec![0.0; n];
        obj = objective(&alpha, &f, y);
    }
    let mut trace = vec![obj];
    let mut iterations = 0;
    let mut converged = false;
    let mut terms = log_lik_unchecked(&f, y);
    let mut stat = stationarity(&terms.gradient, &alpha);
    loop {
        if stat <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let sqrt_w: Vec<f64> = terms.curvature.iter().map(|w| w.sqrt()).collect();
        let l = chol_b(k, &sqrt_w)?;
        let b: Vec<f64> = (0..n).map(|i| terms.curvature[i] * f[i] + terms.gradient[i]).collect();
        let kb = linalg::matvec(k, &b);
        let rhs: Vec<f64> = (0..n).map(|i| sqrt_w[i] * kb[i]).collect();
        let c = linalg::solve_lower_vec(l.as_ref(), &rhs);
        let u = linalg::solve_lower_transpose_vec(l.as_ref(), &c);
        let direction: Vec<f64> = (0..n).map(|i| b[i] - sqrt_w[i] * u[i] - alpha[i]).collect();

        let slack = 1e-12 * (1.0 + obj.abs());
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-10 {
            let a_t: Vec<f64> = alpha.iter().zip(&direction).map(|(a, d)| a + step * d).collect();
            let f_t = linalg::matvec(k, &a_t);
            let obj_t = objective(&a_t, &f_t, y);
            if obj_t.is_finite() && obj_t >= obj - slack {
                accepted = Some((a_t, f_t, obj_t));
                break;
            }
            step *= 0.5;
        }
        let Some((a_t, f_t, obj_t)) = accepted else {
            break;
        };
        alpha = a_t;
        f = f_t;
        obj = obj_t;
        trace.push(obj);
        terms = log_lik_unchecked(&f, y);
        stat = stationarity(&terms.gradient, &alpha);
    }
    let sqrt_w: Vec<f64> = terms.curvature.iter().map(|w| w.sqrt()).collect();
    let l = chol_b(k, &sqrt_w)?;
    let log_ml = obj - linalg::log_diag_sum(l.as_ref());
    Ok(Mode {
        f,
        alpha,
        terms,
        sqrt_w,
        chol_b: l,
        log_ml,
        converged,
        iterations,
        stationarity: stat,
        objective_trace: trace,
    })
}

/// Laplace approximation of a GP binary classifier at its posterior mode.
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    /// Posterior mode `η̂` at the training inputs.
    pub eta_hat: Vec<f64>,
    /// Diagonal of the negative log-likelihood Hessian at `η̂`.
    pub nabla: Vec<f64>,
    /// `∇log p(y | η̂)`.
    pub gradient: Vec<f64>,
    /// `K⁻¹η̂` as carried by the Newton iteration.
    pub alpha: Vec<f64>,
    pub gram: GramMatrices,
    /// Laplace approximation of the log marginal likelihood.
    pub log_ml: f64,
    pub converged: bool,
    pub iterations: usize,
    pub stationarity: f64,
    /// Newton objective after each accepted step.
    pub objective_trace: Vec<f64>,
    chol_b: Mat<f64>,
    sqrt_w: Vec<f64>,
}

impl LaplaceFit {
    /// Mode and evidence as JSON, for diagnostics.
    pub fn diagnostics_json(&self) -> serde_json::Value {
        serde_json::json!({
            "eta_hat": self.eta_hat,
            "log_ml": self.log_ml,
            "converged": self.converged,
            "iterations": self.iterations,
            "stationarity": self.stationarity,
        })
    }
}

pub fn fit_laplace(gram: GramMatrices, y: &[f64], opts: &NewtonOptions) -> Result<LaplaceFit> {
    for (i, &v) in y.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::Validation {
                row: i + 1,
                message: format!("outcome must be 0 or 1, got {v}"),
            });
        }
    }
    let mode = find_mode(gram.k_train.as_ref(), y, None, opts)?;
    Ok(LaplaceFit {
        eta_hat: mode.f,
        nabla: mode.terms.curvature,
        gradient: mode.terms.gradient,
        alpha: mode.alpha,
        gram,
        log_ml: mode.log_ml,
        converged: mode.converged,
        iterations: mode.iterations,
        stationarity: mode.stationarity,
        objective_trace: mode.objective_trace,
        chol_b: mode.chol_b,
        sqrt_w: mode.sqrt_w,
    })
}

/// Predictive mean and covariance at the evaluation inputs (not yet factorized).
#[derive(Debug, Clone)]
pub struct PredictiveMoments {
    pub mean: Vec<f64>,
    pub cov: Mat<f64>,
}

pub fn predict_moments(fit: &LaplaceFit) -> PredictiveMoments {
    let g = &fit.gram;
    let mean = linalg::matvec(g.k_cross.as_ref(), &fit.gradient);
    let n = fit.eta_hat.len();
    let m = g.k_cross.nrows();
    // V = L⁻¹ W^½ K(W, W*), so cov = K(W*, W*) − VᵀV.
    let mut v = Mat::from_fn(n, m, |i, j| fit.sqrt_w[i] * g.k_cross[(j, i)]);
    linalg::solve_lower(fit.chol_b.as_ref(), v.as_mut());
    let mut cov = g.k_eval.clone();
    linalg::mul_add(cov.as_mut(), v.transpose(), v.as_ref(), -1.0);
    linalg::symmetrize(&mut cov);
    PredictiveMoments { mean, cov }
}

/// The predictive mean by the literal formula `K(W*, W) K(W, W)⁻¹ η̂`.
pub fn predict_mean_literal(fit: &LaplaceFit) -> Result<Vec<f64>> {
    let l = linalg::cholesky(fit.gram.k_train.as_ref())
        .ok_or_else(|| Error::numeric("training covariance is singular despite jitter"))?;
    let k_inv_eta = linalg::cholesky_solve_vec(l.as_ref(), &fit.eta_hat);
    Ok(linalg::matvec(fit.gram.k_cross.as_ref(), &k_inv_eta))
}

/// Gaussian approximation of the latent function at the evaluation inputs.
#[derive(Debug, Clone)]
pub struct PredictiveGaussian {
    pub mean: Vec<f64>,
    pub cov: Mat<f64>,
    /// Lower factor of `cov + jitter·I`.
    pub chol: Mat<f64>,
    pub jitter: f64,
}

/// Default jitter added to the predictive covariance before factorization.
pub const SAMPLING_JITTER: f64 = 1e-8;

impl PredictiveGaussian {
    pub fn from_moments(moments: PredictiveMoments, jitter: f64) -> Result<Self> {
        let PredictiveMoments { mean, mut cov } = moments;
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::shape("predictive covariance does not match mean"));
        }
        linalg::symmetrize(&mut cov);
        let (chol, used) = linalg::cholesky_jittered(cov.as_ref(), jitter, 8)?;
        Ok(PredictiveGaussian {
            mean,
            cov,
            chol,
            jitter: used,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn predict(fit: &LaplaceFit) -> Result<PredictiveGaussian> {
    PredictiveGaussian::from_moments(predict_moments(fit), SAMPLING_JITTER)
}

/// Moments of `T η*` for a sparse linear map given row by row as `(index, coefficient)` lists.
pub fn map_moments(moments: &PredictiveMoments, rows: &[Vec<(usize, f64)>]) -> PredictiveMoments {
    let mean = rows
        .iter()
        .map(|r| r.iter().map(|&(i, c)| c * moments.mean[i]).sum())
        .collect();
    let k = rows.len();
    let mut cov = Mat::<f64>::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let mut s = 0.0;
            for &(i, ci) in &rows[a] {
                for &(j, cj) in &rows[b] {
                    s += ci * cj * moments.cov[(i, j)];
                }
            }
            cov[(a, b)] = s;
            cov[(b, a)] = s;
        }
    }
    PredictiveMoments { mean, cov }
}

fn draws_from_normals(pred: &PredictiveGaussian, z: Mat<f64>) -> Mat<f64> {
    let m = pred.dim();
    let b = z.ncols();
    let x = linalg::mul(pred.chol.as_ref(), z.as_ref());
    Mat::from_fn(b, m, |s, i| pred.mean[i] + x[(i, s)])
}

/// `B` independent draws (rows) from the predictive Gaussian.
pub fn sample_functions<R: Rng + ?Sized>(pred: &PredictiveGaussian, b: usize, rng: &mut R) -> Result<Mat<f64>> {
    if b == 0 {
        return Err(Error::config("number of posterior draws must be at least 1"));
    }
    let m = pred.dim();
    let mut z = Mat::<f64>::zeros(m, b);
    for s in 0..b {
        for i in 0..m {
            z[(i, s)] = rng.sample(StandardNormal);
        }
    }
    Ok(draws_from_normals(pred, z))
}

/// Like [`sample_functions`], but draw `s` uses its own stream
/// `(key, FunctionDraw, s)`, so any subset of draws can be regenerated independently.
pub fn sample_functions_streamed(pred: &PredictiveGaussian, b: usize, key: StreamKey) -> Result<Mat<f64>> {
    if b == 0 {
        return Err(Error::config("number of posterior draws must be at least 1"));
    }
    let m = pred.dim();
    let mut z = Mat::<f64>::zeros(m, b);
    for s in 0..b {
        let mut rng = key.stream(Purpose::FunctionDraw, s as u64);
        for i in 0..m {
            z[(i, s)] = rng.sample(StandardNormal);
        }
    }
    Ok(draws_from_normals(pred, z))
}

/// Laplace log marginal likelihood of an uncorrected SE kernel and its
/// gradient with respect to `(log ν², log a_l for l in active)`.
pub(crate) struct EvidenceEval {
    pub log_ml: f64,
    pub gradient: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub(crate) fn log_ml_only(
    spec: &KernelSpec,
    points: MatRef<'_, f64>,
    y: &[f64],
    alpha0: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<(f64, Vec<f64>, bool)> {
    let k = se_symmetric(spec, points, spec.default_jitter());
    let mode = find_mode(k.as_ref(), y, alpha0, opts)?;
    Ok((mode.log_ml, mode.alpha, mode.converged))
}

pub(crate) fn log_ml_with_gradient(
    spec: &KernelSpec,
    points: MatRef<'_, f64>,
    y: &[f64],
    active: &[usize],
    alpha0: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<EvidenceEval> {
    let n = y.len();
    let k = se_symmetric(spec, points, spec.default_jitter());
    let mode = find_mode(k.as_ref(), y, alpha0, opts)?;
    let l = mode.chol_b.as_ref();
    let sw = &mode.sqrt_w;

    // R = W^½ B⁻¹ W^½ = MᵀM with M = L⁻¹ diag(W^½).
    let mut msq = Mat::from_fn(n, n, |i, j| if i == j { sw[i] } else { 0.0 });
    linalg::solve_lower(l, msq.as_mut());
    let r = linalg::mul_tn(msq.as_ref(), msq.as_ref());
    // C = L⁻¹ W^½ K; diag(K) − diag(CᵀC) is the posterior latent variance.
    // s2 = −½ ∂log|B|/∂η̂ = ½ Σ_ii ∂³log p, since ∂W/∂η = −∂³log p.
    let mut c = Mat::from_fn(n, n, |i, j| sw[i] * k[(i, j)]);
    linalg::solve_lower(l, c.as_mut());
    let grad = &mode.terms.gradient;
    let s2: Vec<f64> = (0..n)
        .map(|j| {
            let ctc: f64 = (0..n).map(|i| c[(i, j)] * c[(i, j)]).sum();
            let p = link(mode.f[j]);
            let third = -p * (1.0 - p) * (1.0 - 2.0 * p);
            0.5 * (k[(j, j)] - ctc) * third
        })
        .collect();
    let a = &mode.alpha;

    let mut gradient = Vec::with_capacity(active.len() + 1);
    let mut push_component = |dk: &dyn Fn(usize, usize) -> f64| {
        let mut quad = 0.0;
        let mut trace = 0.0;
        let mut bvec = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                let v = dk(i, j);
                if v == 0.0 {
                    continue;
                }
                quad += a[i] * v * a[j];
                trace += r[(i, j)] * v;
                bvec[i] += v * grad[j];
            }
        }
        let rb = linalg::matvec(r.as_ref(), &bvec);
        let krb = linalg::matvec(k.as_ref(), &rb);
        let implicit: f64 = (0..n).map(|i| s2[i] * (bvec[i] - krb[i])).sum();
        gradient.push(0.5 * quad - 0.5 * trace + implicit);
    };
    push_component(&|i, j| k[(i, j)]);
    let inv = spec.inv_lengthscales();
    for &dim in active {
        let a2 = inv[dim] * inv[dim];
        push_component(&|i, j| {
            if i == j {
                0.0
            } else {
                let t = points[(i, dim)] - points[(j, dim)];
                -k[(i, j)] * a2 * t * t
            }
        });
    }
    Ok(EvidenceEval {
        log_ml: mode.log_ml,
        gradient,
        alpha: mode.alpha,
    })
}
