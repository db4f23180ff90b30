//! Frequentist comparators: AIPW with influence-function standard errors
//! and the plug-in mean contrast.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::Evaluable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequentistMethod {
    Aipw,
    PlugIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequentistEstimate {
    pub method: FrequentistMethod,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
}

impl FrequentistEstimate {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }

    pub fn length(&self) -> f64 {
        self.ci_upper - self.ci_lower
    }
}

/// `z_{1 − α/2}`.
pub fn normal_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(z.inverse_cdf(1.0 - alpha / 2.0))
}

/// Mean of per-observation terms with a Wald interval; the standard error is
/// `sd(terms) / √n` with the `1/n` variance.
fn wald(method: FrequentistMethod, terms: &[f64], alpha: f64) -> Result<FrequentistEstimate> {
    if terms.is_empty() {
        return Err(Error::DegenerateSample("no observations".into()));
    }
    let z = normal_critical(alpha)?;
    let n = terms.len() as f64;
    let estimate = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - estimate).powi(2)).sum::<f64>() / n;
    let se = (var / n).sqrt();
    if !(estimate.is_finite() && se.is_finite()) {
        return Err(Error::numeric("non-finite frequentist estimate"));
    }
    Ok(FrequentistEstimate {
        method,
        estimate,
        se,
        ci_lower: estimate - z * se,
        ci_upper: estimate + z * se,
        alpha,
    })
}

/// AIPW terms `m̂(1,Xᵢ) − m̂(0,Xᵢ) + γ̂ᵢ (Yᵢ − m̂(Dᵢ,Xᵢ))` from precomputed pieces.
pub fn aipw_terms(y: &[f64], d: &[f64], m1: &[f64], m0: &[f64], gamma: &[f64]) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let md = if d[i] == 1.0 { m1[i] } else { m0[i] };
            m1[i] - m0[i] + gamma[i] * (y[i] - md)
        })
        .collect()
}

pub fn aipw_from_parts(y: &[f64], d: &[f64], m1: &[f64], m0: &[f64], gamma: &[f64], alpha: f64) -> Result<FrequentistEstimate> {
    let n = y.len();
    if [d.len(), m1.len(), m0.len(), gamma.len()].iter().any(|&l| l != n) {
        return Err(Error::shape("AIPW inputs must all have one entry per observation"));
    }
    wald(FrequentistMethod::Aipw, &aipw_terms(y, d, m1, m0, gamma), alpha)
}

pub fn plug_in_from_parts(m1: &[f64], m0: &[f64], alpha: f64) -> Result<FrequentistEstimate> {
    if m1.len() != m0.len() {
        return Err(Error::shape("arm predictions differ in length"));
    }
    let c: Vec<f64> = m1.iter().zip(m0).map(|(a, b)| a - b).collect();
    wald(FrequentistMethod::PlugIn, &c, alpha)
}

fn arms(data: &Dataset, m_hat: &dyn Evaluable) -> (Vec<f64>, Vec<f64>) {
    (0..data.n())
        .map(|i| {
            let x = data.covariate_row(i);
            (m_hat.at(1.0, &x), m_hat.at(0.0, &x))
        })
        .unzip()
}

/// Augmented inverse-probability-weighted estimate of the ATE.
pub fn aipw(data: &Dataset, m_hat: &dyn Evaluable, gamma_hat: &dyn Evaluable, alpha: f64) -> Result<FrequentistEstimate> {
    let (m1, m0) = arms(data, m_hat);
    let gamma: Vec<f64> = (0..data.n()).map(|i| gamma_hat.at(data.d()[i], &data.covariate_row(i))).collect();
    aipw_from_parts(data.y(), data.d(), &m1, &m0, &gamma, alpha)
}

/// Mean contrast `m̂(1, Xᵢ) − m̂(0, Xᵢ)`.
pub fn plug_in(data: &Dataset, m_hat: &dyn Evaluable, alpha: f64) -> Result<FrequentistEstimate> {
    let (m1, m0) = arms(data, m_hat);
    plug_in_from_parts(&m1, &m0, alpha)
}
