//! Pilot nuisance estimates: the propensity score, the uncorrected outcome
//! regression, Riesz representers for the supported functionals and the
//! correction-weight rule.

use std::fmt;
use std::sync::Arc;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::{find_mode, link, NewtonOptions};
use crate::kernel::{se_block, search_hyperparameters, train_gram, Correction, HyperSearch, KernelSpec};
use crate::linalg;

/// Propensity evaluations are clipped to `[PROPENSITY_CLIP, 1 − PROPENSITY_CLIP]`.
pub const PROPENSITY_CLIP: f64 = 1e-4;
/// Floor on the covariate density estimate in the policy-effect representer.
pub const DENSITY_FLOOR: f64 = 1e-3;
/// Coefficient size beyond which a logistic fit is flagged as separated.
const SEPARATION_BOUND: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Functional {
    /// Average treatment effect.
    Ate,
    /// Average policy effect of a covariate-distribution shift.
    Ape,
    /// Average derivative in a continuous treatment.
    Ad,
    /// Outcome mean under missingness at random.
    Mar,
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Functional::Ate => "ate",
            Functional::Ape => "ape",
            Functional::Ad => "ad",
            Functional::Mar => "mar",
        })
    }
}

/// Anything evaluable at `(d, x)`: outcome regressions, representers, draws.
pub trait Evaluable: Send + Sync {
    fn at(&self, d: f64, x: &[f64]) -> f64;
}

impl<F> Evaluable for F
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync,
{
    fn at(&self, d: f64, x: &[f64]) -> f64 {
        self(d, x)
    }
}

/// Posterior-mean regression from a Laplace GP fit, kept in the gradient
/// form `mean(w) = Σ_j K(w, w_j) ∇log p(y_j | η̂_j)`.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    spec: KernelSpec,
    points: Mat<f64>,
    gradient: Vec<f64>,
    converged: bool,
}

impl OutcomeModel {
    pub(crate) fn fit(spec: &KernelSpec, points: Mat<f64>, y: &[f64], opts: &NewtonOptions) -> Result<Self> {
        let spec = spec.without_correction();
        let k = train_gram(&spec, points.as_ref(), spec.default_jitter())?;
        let mode = find_mode(k.as_ref(), y, None, opts)?;
        Ok(OutcomeModel {
            spec,
            points,
            gradient: mode.terms.gradient,
            converged: mode.converged,
        })
    }

    /// Latent posterior means at kernel inputs `(d, x)`, one per row.
    pub fn latent_means(&self, eval: MatRef<'_, f64>) -> Result<Vec<f64>> {
        if eval.ncols() != self.spec.dim() {
            return Err(Error::shape(format!(
                "evaluation points have {} columns, model expects {}",
                eval.ncols(),
                self.spec.dim()
            )));
        }
        let k = se_block(&self.spec, eval, self.points.as_ref());
        Ok(linalg::matvec(k.as_ref(), &self.gradient))
    }

    /// `m̂(d, x) = Ψ(mean(d, x))`.
    pub fn evaluate(&self, d: f64, x: &[f64]) -> f64 {
        let w = Mat::from_fn(1, x.len() + 1, |_, j| if j == 0 { d } else { x[j - 1] });
        match self.latent_means(w.as_ref()) {
            Ok(v) => link(v[0]),
            Err(_) => f64::NAN,
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "source": "uncorrected-gp-posterior-mean",
            "hyperparameters": self.spec.hyper(),
            "converged": self.converged,
            "training_size": self.points.nrows(),
        })
    }
}

impl Evaluable for OutcomeModel {
    fn at(&self, d: f64, x: &[f64]) -> f64 {
        self.evaluate(d, x)
    }
}

/// `m̂(d, x) = Ψ(predictive mean of the uncorrected GP at (d, x))`.
pub fn fit_pilot_outcome(data: &Dataset, spec: &KernelSpec) -> Result<OutcomeModel> {
    OutcomeModel::fit(spec, data.design_points(), data.y(), &NewtonOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PropensityKind {
    #[default]
    LogisticRegression,
    GpClassifier,
}

#[derive(Debug, Clone)]
enum PropensityParams {
    /// Intercept first.
    Logistic(Vec<f64>),
    Gp(Box<OutcomeModel>),
}

#[derive(Debug, Clone)]
pub struct PropensityModel {
    kind: PropensityKind,
    params: PropensityParams,
    separation: bool,
}

impl PropensityModel {
    /// Clipped `π̂(x)`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let raw = match &self.params {
            PropensityParams::Logistic(beta) => link(beta[0] + linalg::dot(&beta[1..], x)),
            PropensityParams::Gp(m) => m.evaluate(0.0, x),
        };
        raw.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
    }

    /// Clipped `π̂` at every row of `x`.
    pub fn evaluate_rows(&self, x: MatRef<'_, f64>) -> Vec<f64> {
        match &self.params {
            PropensityParams::Logistic(_) => (0..x.nrows())
                .map(|i| {
                    let row: Vec<f64> = (0..x.ncols()).map(|j| x[(i, j)]).collect();
                    self.evaluate(&row)
                })
                .collect(),
            PropensityParams::Gp(m) => {
                let w = Mat::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { 0.0 } else { x[(i, j - 1)] });
                m.latent_means(w.as_ref())
                    .map(|v| v.into_iter().map(|e| link(e).clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)).collect())
                    .unwrap_or_else(|_| vec![f64::NAN; x.nrows()])
            }
        }
    }

    pub fn kind(&self) -> PropensityKind {
        self.kind
    }

    /// Logistic coefficients, intercept first.
    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.params {
            PropensityParams::Logistic(b) => Some(b),
            PropensityParams::Gp(_) => None,
        }
    }

    /// Whether the fit looked separated (diverging coefficients or no convergence).
    pub fn separation(&self) -> bool {
        self.separation
    }

    pub fn to_json(&self) -> serde_json::Value {
        match &self.params {
            PropensityParams::Logistic(b) => serde_json::json!({
                "kind": self.kind,
                "coefficients": b,
                "separation": self.separation,
            }),
            PropensityParams::Gp(m) => serde_json::json!({
                "kind": self.kind,
                "model": m.to_json(),
                "separation": self.separation,
            }),
        }
    }
}

fn logistic_loglik(x1: &Mat<f64>, d: &[f64], beta: &[f64]) -> f64 {
    let eta = linalg::matvec(x1.as_ref(), beta);
    eta.iter()
        .zip(d)
        .map(|(&e, &di)| di * e - crate::gp::log1p_exp(e))
        .sum()
}

/// Newton maximum likelihood for `P(D = 1 | x) = Ψ(β₀ + xᵀβ)`.
/// Returns the coefficients and whether the iteration converged.
pub(crate) fn logistic_mle(x: MatRef<'_, f64>, d: &[f64]) -> (Vec<f64>, bool) {
    let (n, p) = (x.nrows(), x.ncols());
    let x1 = Mat::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let mut beta = vec![0.0; p + 1];
    let mut ll = logistic_loglik(&x1, d, &beta);
    for _ in 0..200 {
        let eta = linalg::matvec(x1.as_ref(), &beta);
        let pi: Vec<f64> = eta.iter().map(|&e| link(e)).collect();
        let resid: Vec<f64> = d.iter().zip(&pi).map(|(a, b)| a - b).collect();
        let grad = linalg::matvec(x1.transpose(), &resid);
        let wx = Mat::from_fn(n, p + 1, |i, j| pi[i] * (1.0 - pi[i]) * x1[(i, j)]);
        let h = linalg::mul_tn(x1.as_ref(), wx.as_ref());
        let Ok((l, _)) = linalg::cholesky_jittered(h.as_ref(), 1e-10, 12) else {
            return (beta, false);
        };
        let step = linalg::cholesky_solve_vec(l.as_ref(), &grad);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let ll_c = logistic_loglik(&x1, d, &cand);
            if ll_c.is_finite() && ll_c >= ll - 1e-12 * (1.0 + ll.abs()) {
                let size = step.iter().fold(0.0f64, |m, s| m.max((t * s).abs()));
                beta = cand;
                ll = ll_c;
                moved = true;
                if size < 1e-9 {
                    return (beta, true);
                }
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return (beta, true);
        }
        if beta.iter().any(|b| b.abs() > 1.5 * SEPARATION_BOUND) {
            return (beta, false);
        }
    }
    (beta, false)
}

pub fn fit_propensity(data: &Dataset, kind: PropensityKind) -> Result<PropensityModel> {
    data.require_binary_treatment()?;
    match kind {
        PropensityKind::LogisticRegression => {
            if data.n() <= data.p() + 1 {
                return Err(Error::DegenerateSample(format!(
                    "logistic propensity needs more observations ({}) than parameters ({})",
                    data.n(),
                    data.p() + 1
                )));
            }
            let (beta, converged) = logistic_mle(data.x().as_ref(), data.d());
            let separation = !converged || beta.iter().any(|b| b.abs() > SEPARATION_BOUND);
            Ok(PropensityModel {
                kind,
                params: PropensityParams::Logistic(beta),
                separation,
            })
        }
        PropensityKind::GpClassifier => {
            let points = data.points_at(0.0);
            let init = KernelSpec::initial_for(data.x().as_ref(), false);
            let fit = search_hyperparameters(points.as_ref(), data.d(), &init, &HyperSearch::default())?;
            let model = OutcomeModel::fit(&fit.spec, points, data.d(), &NewtonOptions::default())?;
            let separation = !model.converged();
            Ok(PropensityModel {
                kind,
                params: PropensityParams::Gp(Box::new(model)),
                separation,
            })
        }
    }
}

/// A density on covariate space.
pub trait Density: Send + Sync {
    fn density(&self, x: &[f64]) -> f64;
}

impl<F> Density for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn density(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Product of independent normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianProduct {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl GaussianProduct {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        if mean.len() != sd.len() || mean.is_empty() {
            return Err(Error::config("Gaussian density needs matching, nonempty mean and sd vectors"));
        }
        if sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("Gaussian density standard deviations must be positive"));
        }
        Ok(GaussianProduct { mean, sd })
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Density for GaussianProduct {
    fn density(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.sd)
            .zip(x)
            .map(|((m, s), v)| {
                let z = (v - m) / s;
                INV_SQRT_2PI * (-0.5 * z * z).exp() / s
            })
            .product()
    }
}

/// Product Gaussian-kernel density estimate with Silverman bandwidths
/// `h_l = σ_l (4 / ((p + 2) n))^{1/(p + 4)}`.
#[derive(Debug, Clone)]
pub struct Kde {
    points: Mat<f64>,
    bandwidth: Vec<f64>,
}

impl Kde {
    pub fn silverman(x: MatRef<'_, f64>) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if n < 2 {
            return Err(Error::DegenerateSample("density estimate needs at least two rows".into()));
        }
        let factor = (4.0 / ((p as f64 + 2.0) * n as f64)).powf(1.0 / (p as f64 + 4.0));
        let mut bandwidth = Vec::with_capacity(p);
        for j in 0..p {
            let mean = (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            if var <= 0.0 {
                return Err(Error::DegenerateSample(format!("covariate {j} is constant")));
            }
            bandwidth.push(var.sqrt() * factor);
        }
        Ok(Kde {
            points: x.to_owned(),
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }
}

impl Density for Kde {
    fn density(&self, x: &[f64]) -> f64 {
        let n = self.points.nrows();
        let norm: f64 = self.bandwidth.iter().map(|h| INV_SQRT_2PI / h).product();
        let total: f64 = (0..n)
            .map(|i| {
                let q: f64 = self
                    .bandwidth
                    .iter()
                    .enumerate()
                    .map(|(l, h)| {
                        let z = (x[l] - self.points[(i, l)]) / h;
                        z * z
                    })
                    .sum();
                (-0.5 * q).exp()
            })
            .sum();
        norm * total / n as f64
    }
}

/// An evaluable Riesz representer `γ̂(d, x)` with the largest absolute value
/// it takes on the sample it was built for.
#[derive(Clone)]
pub struct RieszRepresenter {
    functional: Functional,
    gamma: Arc<dyn Correction>,
    sup_bound: f64,
}

impl fmt::Debug for RieszRepresenter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RieszRepresenter")
            .field("functional", &self.functional)
            .field("sup_bound", &self.sup_bound)
            .finish()
    }
}

impl RieszRepresenter {
    fn build(functional: Functional, gamma: Arc<dyn Correction>, data: &Dataset) -> Result<Self> {
        let points = data.design_points();
        let mut sup: f64 = 0.0;
        let mut row = vec![0.0; points.ncols()];
        for i in 0..points.nrows() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = points[(i, j)];
            }
            let v = gamma.gamma(&row);
            if !v.is_finite() {
                return Err(Error::numeric(format!("representer is not finite at data row {}", i + 1)));
            }
            sup = sup.max(v.abs());
        }
        Ok(RieszRepresenter {
            functional,
            gamma,
            sup_bound: sup,
        })
    }

    pub fn evaluate(&self, d: f64, x: &[f64]) -> f64 {
        let mut w = Vec::with_capacity(x.len() + 1);
        w.push(d);
        w.extend_from_slice(x);
        self.gamma.gamma(&w)
    }

    /// `γ̂` at every row of a kernel-input matrix `(d, x)`.
    pub fn values_at(&self, points: MatRef<'_, f64>) -> Vec<f64> {
        let mut row = vec![0.0; points.ncols()];
        (0..points.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = points[(i, j)];
                }
                self.gamma.gamma(&row)
            })
            .collect()
    }

    pub fn correction(&self) -> Arc<dyn Correction> {
        Arc::clone(&self.gamma)
    }

    pub fn functional(&self) -> Functional {
        self.functional
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }
}

impl Evaluable for RieszRepresenter {
    fn at(&self, d: f64, x: &[f64]) -> f64 {
        self.evaluate(d, x)
    }
}

/// `γ̂(d, x) = d / π̂(x) − (1 − d) / (1 − π̂(x))`.
pub fn riesz_ate(pm: &PropensityModel, data: &Dataset) -> Result<RieszRepresenter> {
    let pm = pm.clone();
    let gamma = move |w: &[f64]| {
        let p = pm.evaluate(&w[1..]);
        w[0] / p - (1.0 - w[0]) / (1.0 - p)
    };
    RieszRepresenter::build(Functional::Ate, Arc::new(gamma), data)
}

/// `γ̂(d, x) = d / π̂(x)`.
pub fn riesz_mar(pm: &PropensityModel, data: &Dataset) -> Result<RieszRepresenter> {
    let pm = pm.clone();
    let gamma = move |w: &[f64]| if w[0] == 0.0 { 0.0 } else { w[0] / pm.evaluate(&w[1..]) };
    RieszRepresenter::build(Functional::Mar, Arc::new(gamma), data)
}

/// `γ̂(x) = (g1(x) − g0(x)) / f̂(x)` with `f̂` floored at [`DENSITY_FLOOR`]
/// and the result clipped to `±1 / DENSITY_FLOOR`. Without a user density
/// the covariate density is a [`Kde`], available for `p ≤ 3`.
pub fn riesz_ape(
    g1: Arc<dyn Density>,
    g0: Arc<dyn Density>,
    data: &Dataset,
    density: Option<Arc<dyn Density>>,
) -> Result<RieszRepresenter> {
    let f_hat: Arc<dyn Density> = match density {
        Some(f) => f,
        None => {
            if data.p() > 3 {
                return Err(Error::UnsupportedDimension(format!(
                    "kernel density estimate supports at most 3 covariates, got {}; supply a covariate density",
                    data.p()
                )));
            }
            Arc::new(Kde::silverman(data.x().as_ref())?)
        }
    };
    let bound = 1.0 / DENSITY_FLOOR;
    let gamma = move |w: &[f64]| {
        let x = &w[1..];
        let f = f_hat.density(x).max(DENSITY_FLOOR);
        ((g1.density(x) - g0.density(x)) / f).clamp(-bound, bound)
    };
    RieszRepresenter::build(Functional::Ape, Arc::new(gamma), data)
}

/// Gaussian linear location model `D | X = x ~ N(β₀ + xᵀβ, s²)` by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentDensity {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub variance: f64,
}

impl TreatmentDensity {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let (n, p) = (data.n(), data.p());
        if n <= p + 1 {
            return Err(Error::DegenerateSample(format!(
                "treatment regression needs more observations ({n}) than parameters ({})",
                p + 1
            )));
        }
        let x = data.x();
        let x1 = Mat::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let xtx = linalg::mul_tn(x1.as_ref(), x1.as_ref());
        let xtd = linalg::matvec(x1.transpose(), data.d());
        let (l, _) = linalg::cholesky_jittered(xtx.as_ref(), 1e-12, 6)?;
        let coefficients = linalg::cholesky_solve_vec(l.as_ref(), &xtd);
        let fitted = linalg::matvec(x1.as_ref(), &coefficients);
        let rss: f64 = data.d().iter().zip(&fitted).map(|(d, f)| (d - f).powi(2)).sum();
        let variance = rss / (n - p - 1) as f64;
        if variance < 1e-8 {
            return Err(Error::DegenerateTreatment(format!(
                "residual treatment variance {variance:.3e} is below 1e-8"
            )));
        }
        Ok(TreatmentDensity { coefficients, variance })
    }

    pub fn location(&self, x: &[f64]) -> f64 {
        self.coefficients[0] + linalg::dot(&self.coefficients[1..], x)
    }

    /// `−∂_d log π̂(d | x) = (d − location(x)) / s²`.
    pub fn riesz(&self, d: f64, x: &[f64]) -> f64 {
        (d - self.location(x)) / self.variance
    }
}

/// Representer for the average derivative under the Gaussian linear
/// treatment model. Integration by parts gives `E[∂_d h] = E[γ h]` with
/// `γ = −∂_d log π(d | x) = (d − xᵀβ̂) / ŝ²`.
pub fn riesz_ad(data: &Dataset) -> Result<RieszRepresenter> {
    riesz_ad_from(TreatmentDensity::fit(data)?, data)
}

/// Average-derivative representer from an already fitted treatment model.
pub fn riesz_ad_from(model: TreatmentDensity, data: &Dataset) -> Result<RieszRepresenter> {
    let gamma = move |w: &[f64]| model.riesz(w[0], &w[1..]);
    RieszRepresenter::build(Functional::Ad, Arc::new(gamma), data)
}

/// `σₙ = c_σ √(p n ln n) / Σᵢ |γ̂(Dᵢ, Xᵢ)|`.
pub fn sigma_rule(p: usize, n: usize, gamma_abs_sum: f64, c_sigma: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::config(format!("correction weight needs n >= 2, got {n}")));
    }
    if !(gamma_abs_sum > 0.0 && gamma_abs_sum.is_finite()) {
        return Err(Error::config(format!(
            "sum of absolute representer values must be positive and finite, got {gamma_abs_sum}"
        )));
    }
    if !(c_sigma >= 0.0 && c_sigma.is_finite()) {
        return Err(Error::config(format!("c_sigma must be finite and >= 0, got {c_sigma}")));
    }
    let (p, n) = (p as f64, n as f64);
    Ok(c_sigma * (p * n * n.ln()).sqrt() / gamma_abs_sum)
}
