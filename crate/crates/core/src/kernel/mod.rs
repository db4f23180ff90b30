//! Squared-exponential covariance, the rank-one corrected covariance, and
//! Gram-matrix assembly.
//!
//! Kernel inputs are points `w = (d, x_1, ..., x_p)` with the treatment in
//! slot 0. For inverse lengthscales `a_0, ..., a_p` and variance `ν²`,
//!
//! ```text
//! K(w, w')   = ν² exp(-½ Σ_l a_l² (w_l - w'_l)²)
//! K_c(w, w') = K(w, w') + σ² γ(w) γ(w')
//! ```
//!
//! where `γ` is an evaluable correction direction (a Riesz representer).

mod optimize;

use std::fmt;
use std::sync::Arc;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use optimize::{
    optimize_hyperparameters, search_hyperparameters, HyperFit, HyperSearch, SearchMethod,
};

/// An evaluable correction direction `γ(w)` on kernel inputs `w = (d, x)`.
pub trait Correction: Send + Sync {
    fn gamma(&self, w: &[f64]) -> f64;
}

impl<F> Correction for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn gamma(&self, w: &[f64]) -> f64 {
        self(w)
    }
}

/// Serializable hyperparameters of a [`KernelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub nu2: f64,
    pub inv_lengthscales: Vec<f64>,
    #[serde(default)]
    pub sigma_n: f64,
}

#[derive(Clone)]
pub struct KernelSpec {
    nu2: f64,
    inv_lengthscales: Vec<f64>,
    sigma_n: f64,
    correction: Option<Arc<dyn Correction>>,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("nu2", &self.nu2)
            .field("inv_lengthscales", &self.inv_lengthscales)
            .field("sigma_n", &self.sigma_n)
            .field("correction", &self.correction.is_some())
            .finish()
    }
}

impl KernelSpec {
    /// Uncorrected squared-exponential kernel on `inv_lengthscales.len()` inputs.
    pub fn se(nu2: f64, inv_lengthscales: Vec<f64>) -> Result<Self> {
        if !(nu2 > 0.0 && nu2.is_finite()) {
            return Err(Error::config(format!("kernel variance must be positive, got {nu2}")));
        }
        if inv_lengthscales.is_empty() {
            return Err(Error::config("kernel needs at least one input dimension"));
        }
        if let Some(a) = inv_lengthscales.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return Err(Error::config(format!("inverse lengthscales must be finite and >= 0, got {a}")));
        }
        Ok(KernelSpec {
            nu2,
            inv_lengthscales,
            sigma_n: 0.0,
            correction: None,
        })
    }

    /// Starting point for hyperparameter search: unit variance, treatment
    /// scale 1 and covariate scales `1 / (sd_l √p)` so that typical squared
    /// distances are O(1).
    pub fn initial_for(x: MatRef<'_, f64>, include_treatment: bool) -> Self {
        let p = x.ncols();
        let n = x.nrows() as f64;
        let mut a = Vec::with_capacity(p + 1);
        a.push(if include_treatment { 1.0 } else { 0.0 });
        for j in 0..p {
            let mean = (0..x.nrows()).map(|i| x[(i, j)]).sum::<f64>() / n;
            let var = (0..x.nrows()).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            a.push(1.0 / (sd * (p.max(1) as f64).sqrt()));
        }
        KernelSpec::se(1.0, a).expect("initial spec is valid")
    }

    /// Adds the rank-one term `σ² γ(w) γ(w')`.
    pub fn with_correction(mut self, sigma_n: f64, correction: Arc<dyn Correction>) -> Result<Self> {
        if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
            return Err(Error::config(format!("correction weight must be finite and >= 0, got {sigma_n}")));
        }
        self.sigma_n = sigma_n;
        self.correction = Some(correction);
        Ok(self)
    }

    pub fn without_correction(&self) -> Self {
        KernelSpec {
            nu2: self.nu2,
            inv_lengthscales: self.inv_lengthscales.clone(),
            sigma_n: 0.0,
            correction: None,
        }
    }

    pub fn from_hyper(h: &KernelHyper) -> Result<Self> {
        if h.sigma_n != 0.0 {
            return Err(Error::config("a nonzero correction weight needs an evaluable correction"));
        }
        Self::se(h.nu2, h.inv_lengthscales.clone())
    }

    pub fn hyper(&self) -> KernelHyper {
        KernelHyper {
            nu2: self.nu2,
            inv_lengthscales: self.inv_lengthscales.clone(),
            sigma_n: self.sigma_n,
        }
    }

    pub fn nu2(&self) -> f64 {
        self.nu2
    }

    pub fn inv_lengthscales(&self) -> &[f64] {
        &self.inv_lengthscales
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    pub fn correction(&self) -> Option<&Arc<dyn Correction>> {
        self.correction.as_ref()
    }

    /// Input dimension `p + 1`.
    pub fn dim(&self) -> usize {
        self.inv_lengthscales.len()
    }

    /// Default diagonal jitter, `1e-8 ν²`.
    pub fn default_jitter(&self) -> f64 {
        1e-8 * self.nu2
    }

    fn is_corrected(&self) -> bool {
        self.sigma_n > 0.0 && self.correction.is_some()
    }

    pub(crate) fn with_log_params(&self, theta: &[f64], active: &[usize]) -> KernelSpec {
        let mut a = self.inv_lengthscales.clone();
        for (k, &l) in active.iter().enumerate() {
            a[l] = theta[k + 1].exp();
        }
        KernelSpec {
            nu2: theta[0].exp(),
            inv_lengthscales: a,
            sigma_n: 0.0,
            correction: None,
        }
    }
}

fn check_dims(w: &[f64], w2: &[f64], spec: &KernelSpec) -> Result<()> {
    if w.len() != spec.dim() || w2.len() != spec.dim() {
        return Err(Error::shape(format!(
            "kernel expects points of length {}, got {} and {}",
            spec.dim(),
            w.len(),
            w2.len()
        )));
    }
    Ok(())
}

fn se_unchecked(w: &[f64], w2: &[f64], spec: &KernelSpec) -> f64 {
    let q: f64 = w
        .iter()
        .zip(w2)
        .zip(&spec.inv_lengthscales)
        .map(|((u, v), a)| {
            let t = (u - v) * a;
            t * t
        })
        .sum();
    spec.nu2 * (-0.5 * q).exp()
}

/// Squared-exponential covariance between two inputs.
pub fn se_kernel(w: &[f64], w2: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_dims(w, w2, spec)?;
    Ok(se_unchecked(w, w2, spec))
}

/// `se_kernel(w, w') + σ² γ(w) γ(w')`.
pub fn corrected_kernel(w: &[f64], w2: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_dims(w, w2, spec)?;
    let base = se_unchecked(w, w2, spec);
    Ok(match (&spec.correction, spec.sigma_n) {
        (Some(c), s) if s > 0.0 => base + s * s * (c.gamma(w) * c.gamma(w2)),
        _ => base,
    })
}

/// Prior covariance blocks at training inputs `W` and evaluation inputs `W*`.
#[derive(Debug, Clone)]
pub struct GramMatrices {
    /// `K_c(W, W) + jitter·I`, `n × n`.
    pub k_train: Mat<f64>,
    /// `K_c(W*, W)`, `m × n`.
    pub k_cross: Mat<f64>,
    /// `K_c(W*, W*) + jitter·I`, `m × m`.
    pub k_eval: Mat<f64>,
    pub jitter: f64,
}

fn scaled_rows(points: MatRef<'_, f64>, a: &[f64]) -> Vec<f64> {
    let (n, k) = (points.nrows(), points.ncols());
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        for l in 0..k {
            out[i * k + l] = points[(i, l)] * a[l];
        }
    }
    out
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let t = a - b;
            t * t
        })
        .sum()
}

/// Uncorrected SE block between two point sets (no jitter).
pub(crate) fn se_block(spec: &KernelSpec, rows: MatRef<'_, f64>, cols: MatRef<'_, f64>) -> Mat<f64> {
    let k = spec.dim();
    let ur = scaled_rows(rows, &spec.inv_lengthscales);
    let uc = scaled_rows(cols, &spec.inv_lengthscales);
    Mat::from_fn(rows.nrows(), cols.nrows(), |i, j| {
        spec.nu2 * (-0.5 * sq_dist(&ur[i * k..(i + 1) * k], &uc[j * k..(j + 1) * k])).exp()
    })
}

/// Uncorrected symmetric SE block on one point set, with `jitter` on the diagonal.
pub(crate) fn se_symmetric(spec: &KernelSpec, points: MatRef<'_, f64>, jitter: f64) -> Mat<f64> {
    let n = points.nrows();
    let k = spec.dim();
    let u = scaled_rows(points, &spec.inv_lengthscales);
    let mut m = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = spec.nu2 + jitter;
        let uj = &u[j * k..(j + 1) * k];
        for i in (j + 1)..n {
            let v = spec.nu2 * (-0.5 * sq_dist(&u[i * k..(i + 1) * k], uj)).exp();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

pub(crate) fn correction_values(spec: &KernelSpec, points: MatRef<'_, f64>) -> Option<Vec<f64>> {
    if !spec.is_corrected() {
        return None;
    }
    let c = spec.correction.as_ref()?;
    let k = points.ncols();
    let mut row = vec![0.0; k];
    Some(
        (0..points.nrows())
            .map(|i| {
                for l in 0..k {
                    row[l] = points[(i, l)];
                }
                c.gamma(&row)
            })
            .collect(),
    )
}

fn add_rank_one(m: &mut Mat<f64>, s2: f64, g_rows: &[f64], g_cols: &[f64]) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] += s2 * (g_rows[i] * g_cols[j]);
        }
    }
}

fn ensure_finite(m: &Mat<f64>, what: &str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::numeric(format!("non-finite kernel value in {what} at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Corrected training covariance `K_c(W, W) + jitter·I`.
pub fn train_gram(spec: &KernelSpec, w_train: MatRef<'_, f64>, jitter: f64) -> Result<Mat<f64>> {
    if w_train.ncols() != spec.dim() {
        return Err(Error::shape(format!(
            "training points have {} columns, kernel expects {}",
            w_train.ncols(),
            spec.dim()
        )));
    }
    let mut k = se_symmetric(spec, w_train, jitter);
    if let Some(g) = correction_values(spec, w_train) {
        add_rank_one(&mut k, spec.sigma_n * spec.sigma_n, &g, &g);
    }
    ensure_finite(&k, "training Gram")?;
    Ok(k)
}

/// All three covariance blocks, populated entrywise by the corrected kernel.
/// Jitter is added to the diagonals of the two square blocks only.
pub fn gram(spec: &KernelSpec, w_train: MatRef<'_, f64>, w_eval: MatRef<'_, f64>, jitter: f64) -> Result<GramMatrices> {
    if w_eval.ncols() != spec.dim() {
        return Err(Error::shape(format!(
            "evaluation points have {} columns, kernel expects {}",
            w_eval.ncols(),
            spec.dim()
        )));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::config(format!("jitter must be finite and >= 0, got {jitter}")));
    }
    let k_train = train_gram(spec, w_train, jitter)?;
    let mut k_cross = se_block(spec, w_eval, w_train);
    let mut k_eval = se_symmetric(spec, w_eval, jitter);
    if let (Some(gt), Some(ge)) = (correction_values(spec, w_train), correction_values(spec, w_eval)) {
        let s2 = spec.sigma_n * spec.sigma_n;
        add_rank_one(&mut k_cross, s2, &ge, &gt);
        add_rank_one(&mut k_eval, s2, &ge, &ge);
    }
    ensure_finite(&k_cross, "cross Gram")?;
    ensure_finite(&k_eval, "evaluation Gram")?;
    Ok(GramMatrices {
        k_train,
        k_cross,
        k_eval,
        jitter,
    })
}

/// Evaluation inputs `[(1, X); (0, X)]`, the treated block stacked above the control block.
pub fn stacked_arm_points(x: MatRef<'_, f64>) -> Mat<f64> {
    let n = x.nrows();
    Mat::from_fn(2 * n, x.ncols() + 1, |i, j| {
        let r = i % n;
        if j == 0 {
            if i < n {
                1.0
            } else {
                0.0
            }
        } else {
            x[(r, j - 1)]
        }
    })
}

/// Theoretical rescaling rate `(n / ln n)^{1/(2s + p)}` for smoothness `s`
/// in dimension `p`; a reference formula only, not a default.
pub fn rescaling_rate(n: usize, p: usize, smoothness: f64) -> f64 {
    let n = n as f64;
    (n / n.ln()).powf(1.0 / (2.0 * smoothness + p as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_gamma() -> Arc<dyn Correction> {
        // Constant propensity 0.5: γ = d/0.5 - (1-d)/0.5.
        Arc::new(|w: &[f64]| w[0] / 0.5 - (1.0 - w[0]) / 0.5)
    }

    #[test]
    fn zero_distance_gives_variance() {
        let s = KernelSpec::se(2.5, vec![1.0, 0.3]).unwrap();
        assert_eq!(se_kernel(&[0.2, 1.0], &[0.2, 1.0], &s).unwrap(), 2.5);
    }

    #[test]
    fn unit_distance_closed_form() {
        let s = KernelSpec::se(1.0, vec![1.0, 1.0]).unwrap();
        let v = se_kernel(&[1.0, 0.0], &[0.0, 0.0], &s).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn zero_rescaling_ignores_treatment() {
        let s = KernelSpec::se(1.0, vec![0.0, 1.0]).unwrap();
        let a = se_kernel(&[1.0, 0.3], &[0.0, 0.3], &s).unwrap();
        assert_eq!(a, 1.0);
        assert_eq!(
            se_kernel(&[5.0, 0.1], &[-3.0, 0.7], &s).unwrap(),
            se_kernel(&[0.0, 0.1], &[0.0, 0.7], &s).unwrap()
        );
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let s = KernelSpec::se(1.0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(se_kernel(&[1.0], &[0.0, 0.0], &s), Err(Error::Shape(_))));
        assert!(matches!(corrected_kernel(&[1.0, 2.0, 3.0], &[0.0, 0.0], &s), Err(Error::Shape(_))));
    }

    #[test]
    fn corrected_kernel_with_symmetric_propensity() {
        let base = KernelSpec::se(1.0, vec![1.0, 1.0]).unwrap();
        let off = base.clone().with_correction(0.0, half_gamma()).unwrap();
        let on = base.clone().with_correction(1.0, half_gamma()).unwrap();
        let (w, w2) = ([1.0, 0.4], [0.0, -0.2]);
        let se = se_kernel(&w, &w2, &base).unwrap();
        assert_eq!(corrected_kernel(&w, &w2, &off).unwrap(), se);
        assert!((corrected_kernel(&w, &w2, &on).unwrap() - (se - 4.0)).abs() < 1e-14);
        assert!((corrected_kernel(&w, &w, &on).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::se(0.0, vec![1.0]).is_err());
        assert!(KernelSpec::se(1.0, vec![-1.0]).is_err());
        assert!(KernelSpec::se(1.0, vec![]).is_err());
        let s = KernelSpec::se(1.0, vec![1.0]).unwrap();
        assert!(s.with_correction(-0.1, half_gamma()).is_err());
    }

    #[test]
    fn one_point_shapes() {
        let s = KernelSpec::se(1.0, vec![1.0, 1.0]).unwrap();
        let x = Mat::from_fn(1, 1, |_, _| 0.3);
        let w = Mat::from_fn(1, 2, |_, j| if j == 0 { 1.0 } else { 0.3 });
        let g = gram(&s, w.as_ref(), stacked_arm_points(x.as_ref()).as_ref(), 0.0).unwrap();
        assert_eq!((g.k_train.nrows(), g.k_train.ncols()), (1, 1));
        assert_eq!((g.k_cross.nrows(), g.k_cross.ncols()), (2, 1));
        assert_eq!((g.k_eval.nrows(), g.k_eval.ncols()), (2, 2));
    }

    #[test]
    fn stacked_points_layout() {
        let x = Mat::from_fn(2, 1, |i, _| i as f64 + 0.5);
        let w = stacked_arm_points(x.as_ref());
        assert_eq!(w.nrows(), 4);
        assert_eq!((w[(0, 0)], w[(1, 0)], w[(2, 0)], w[(3, 0)]), (1.0, 1.0, 0.0, 0.0));
        assert_eq!((w[(0, 1)], w[(2, 1)], w[(3, 1)]), (0.5, 0.5, 1.5));
    }

    #[test]
    fn jitter_only_on_square_diagonals() {
        let s = KernelSpec::se(1.0, vec![1.0, 1.0]).unwrap();
        let w = Mat::from_fn(2, 2, |i, j| (i + j) as f64);
        let g0 = gram(&s, w.as_ref(), w.as_ref(), 0.0).unwrap();
        let g1 = gram(&s, w.as_ref(), w.as_ref(), 0.25).unwrap();
        assert_eq!(g1.k_train[(0, 0)] - g0.k_train[(0, 0)], 0.25);
        assert_eq!(g1.k_eval[(1, 1)] - g0.k_eval[(1, 1)], 0.25);
        assert_eq!(g1.k_cross[(0, 0)], g0.k_cross[(0, 0)]);
        assert_eq!(g1.k_train[(0, 1)], g0.k_train[(0, 1)]);
    }

    #[test]
    fn hyper_round_trips_through_json() {
        let s = KernelSpec::se(1.7, vec![0.5, 0.25, 2.0]).unwrap();
        let text = serde_json::to_string(&s.hyper()).unwrap();
        let back = KernelSpec::from_hyper(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.hyper(), s.hyper());
    }

    #[test]
    fn rescaling_rate_grows_with_n() {
        assert!(rescaling_rate(1000, 5, 2.0) > rescaling_rate(100, 5, 2.0));
    }
}
