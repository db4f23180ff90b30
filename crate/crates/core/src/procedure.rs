//! The doubly robust Bayesian procedure.
//!
//! 1. Pilot fits: hyperparameters and `m̂` from the uncorrected GP, a Riesz
//!    representer `γ̂`, and the correction weight `σₙ`.
//! 2. Posterior draws `m_s` under the prior `K + σₙ² γ̂ γ̂ᵀ`, each paired with
//!    its own Bayesian bootstrap weight vector to give a plug-in draw `χˢ`.
//! 3. Recentering `χ̌ˢ = χˢ − b̂ˢ` and a quantile credible interval.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use faer::{Mat, MatRef};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::data::{make_split_keyed, Dataset, SplitMode, SplitPlan};
use crate::error::{Error, Result};
use crate::gp::{
    fit_laplace, link, map_moments, predict_moments, sample_functions_streamed, NewtonOptions, PredictiveGaussian,
    SAMPLING_JITTER,
};
use crate::kernel::{gram, search_hyperparameters, stacked_arm_points, HyperSearch, KernelHyper, KernelSpec};
use crate::nuisance::{
    fit_propensity, riesz_ad_from, riesz_ape, riesz_ate, riesz_mar, sigma_rule, Density, Evaluable, Functional,
    OutcomeModel, PropensityKind, RieszRepresenter, TreatmentDensity,
};
use crate::rng::{Purpose, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain GP prior, no recentering.
    Uncorrected,
    /// Corrected prior, no recentering.
    PriorCorrected,
    /// Corrected prior and recentered draws.
    DoublyRobust,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Uncorrected => "uncorrected",
            Variant::PriorCorrected => "prior-corrected",
            Variant::DoublyRobust => "doubly-robust",
        })
    }
}

/// Posterior draws of a functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDraws {
    pub functional: Functional,
    pub variant: Variant,
    pub seed: u64,
    /// `χˢ`, before recentering.
    pub plug_in: Vec<f64>,
    /// `b̂ˢ`; all zero unless the variant is doubly robust.
    pub recenterings: Vec<f64>,
    /// `χ̌ˢ = χˢ − b̂ˢ`.
    pub values: Vec<f64>,
}

impl FunctionalDraws {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with columns `s, plug_in, recentering, value`, `s` counting from 1.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("s,plug_in,recentering,value\n");
        for s in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s + 1,
                self.plug_in[s],
                self.recenterings[s],
                self.values[s]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(self.to_csv_string().as_bytes()).map_err(io)
    }
}

/// Posterior mean and equal-tailed quantile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleSummary {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub length: f64,
}

impl CredibleSummary {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Normalized Exp(1) draws, i.e. one Dirichlet(1, ..., 1) vector.
pub fn bootstrap_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1).max(f64::MIN_POSITIVE)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// `Σᵢ Mᵢ (m_s(1, Xᵢ) − m_s(0, Xᵢ))`.
pub fn plug_in_draw(m_s: &dyn Evaluable, weights: &[f64], x: MatRef<'_, f64>) -> f64 {
    let mut row = vec![0.0; x.ncols()];
    (0..x.nrows())
        .map(|i| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = x[(i, j)];
            }
            weights[i] * (m_s.at(1.0, &row) - m_s.at(0.0, &row))
        })
        .sum()
}

/// `b̂ = (1/n) Σᵢ [Δ(1, Xᵢ) − Δ(0, Xᵢ) − γ̂(Dᵢ, Xᵢ) Δ(Dᵢ, Xᵢ)]` with `Δ = m_s − m̂`.
pub fn recentering_term(m_s: &dyn Evaluable, m_hat: &dyn Evaluable, gamma: &dyn Evaluable, data: &Dataset) -> f64 {
    recentering_on_rows(m_s, m_hat, gamma, data.d(), data.x().as_ref())
}

/// [`recentering_term`] on raw treatment values and covariate rows.
pub fn recentering_on_rows(
    m_s: &dyn Evaluable,
    m_hat: &dyn Evaluable,
    gamma: &dyn Evaluable,
    d: &[f64],
    x: MatRef<'_, f64>,
) -> f64 {
    let n = d.len();
    let delta = |d: f64, x: &[f64]| m_s.at(d, x) - m_hat.at(d, x);
    (0..n)
        .map(|i| {
            let xi: Vec<f64> = (0..x.ncols()).map(|j| x[(i, j)]).collect();
            delta(1.0, &xi) - delta(0.0, &xi) - gamma.at(d[i], &xi) * delta(d[i], &xi)
        })
        .sum::<f64>()
        / n as f64
}

/// Type-7 quantile (linear interpolation between order statistics) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64], alpha: f64) -> Result<CredibleSummary> {
    if values.len() < 2 {
        return Err(Error::config(format!("need at least 2 draws to summarize, got {}", values.len())));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite posterior draw"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lower = quantile_sorted(&sorted, alpha / 2.0);
    let upper = quantile_sorted(&sorted, 1.0 - alpha / 2.0);
    let point = values.iter().sum::<f64>() / values.len() as f64;
    Ok(CredibleSummary {
        point,
        lower,
        upper,
        alpha,
        length: upper - lower,
    })
}

/// How `∫ m d(G1 − G0)` is computed for the policy effect.
#[derive(Clone, Default)]
pub enum ApeIntegration {
    /// `(1/n) Σᵢ m(Xᵢ) γ̂(Xᵢ)`, the sample reweighted by `(g1 − g0) / f̂`.
    #[default]
    Reweighting,
    /// Averages over sample points drawn from `G1` and from `G0`.
    Quadrature { g1_points: Mat<f64>, g0_points: Mat<f64> },
}

/// Policy densities for the average policy effect.
#[derive(Clone)]
pub struct ApeSetup {
    pub g1: Arc<dyn Density>,
    pub g0: Arc<dyn Density>,
    /// Covariate density; a kernel density estimate when absent.
    pub density: Option<Arc<dyn Density>>,
    pub integration: ApeIntegration,
}

impl fmt::Debug for ApeSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ApeSetup")
            .field("user_density", &self.density.is_some())
            .field(
                "integration",
                &match self.integration {
                    ApeIntegration::Reweighting => "reweighting",
                    ApeIntegration::Quadrature { .. } => "quadrature",
                },
            )
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct ProcedureConfig {
    pub functional: Functional,
    /// Number of posterior draws `B`.
    pub draws: usize,
    pub alpha: f64,
    pub c_sigma: f64,
    pub split_mode: SplitMode,
    pub seed: u64,
    pub propensity: PropensityKind,
    pub hyper_search: HyperSearch,
    pub newton: NewtonOptions,
    /// Finite-difference step for the average derivative, as a multiple of sd(D).
    pub ad_step: f64,
    pub ape: Option<ApeSetup>,
    /// Hyperparameters to use instead of searching.
    pub hyper: Option<KernelHyper>,
}

impl Default for ProcedureConfig {
    fn default() -> Self {
        ProcedureConfig {
            functional: Functional::Ate,
            draws: 1000,
            alpha: 0.05,
            c_sigma: 1.0,
            split_mode: SplitMode::FullReuse,
            seed: 0,
            propensity: PropensityKind::LogisticRegression,
            hyper_search: HyperSearch::default(),
            newton: NewtonOptions::default(),
            ad_step: 1e-3,
            ape: None,
            hyper: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub functional: Functional,
    pub n: usize,
    pub n_pilot: usize,
    pub n_inference: usize,
    pub hyperparameters: KernelHyper,
    pub pilot_log_ml: Option<f64>,
    pub hyper_evaluations: usize,
    pub sigma_n: f64,
    pub gamma_abs_sum: f64,
    pub gamma_sup: f64,
    pub propensity_separation: bool,
    pub laplace_fits: usize,
    pub laplace_nonconverged: usize,
    pub sampling_jitter: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ProcedureOutput {
    pub draws: FunctionalDraws,
    pub summary: CredibleSummary,
}

/// Pilot fits plus the quantities the frequentist comparators need on the inference sample.
#[derive(Debug, Clone)]
pub struct Nuisance {
    pub plan: SplitPlan,
    pub inference: Dataset,
    pub outcome: OutcomeModel,
    pub riesz: RieszRepresenter,
    /// `γ̂(Dᵢ, Xᵢ)` on the inference sample.
    pub gamma: Vec<f64>,
    /// `m̂(1, Xᵢ)` and `m̂(0, Xᵢ)` on the inference sample (binary-treatment functionals only).
    pub m_hat_arms: Option<(Vec<f64>, Vec<f64>)>,
    pub spec: KernelSpec,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub outputs: Vec<(Variant, ProcedureOutput)>,
    pub diagnostics: Diagnostics,
    pub nuisance: Nuisance,
}

impl RunOutput {
    pub fn get(&self, v: Variant) -> Option<&ProcedureOutput> {
        self.outputs.iter().find(|(k, _)| *k == v).map(|(_, o)| o)
    }
}

/// Evaluation layout: which latent values a draw carries and how to turn
/// them into a plug-in value and a recentering.
struct Layout {
    functional: Functional,
    n: usize,
    d: Vec<f64>,
    gamma: Vec<f64>,
    /// Sizes of the `G1` and `G0` quadrature blocks after the sample block.
    quadrature: Option<(usize, usize)>,
    map: Option<Vec<Vec<(usize, f64)>>>,
}

impl Layout {
    /// `(χˢ, b̂ˢ)` for one draw of latent values `eta`, with `eta_hat` the pilot latent means.
    fn evaluate(&self, eta: &[f64], eta_hat: &[f64], weights: &[f64]) -> (f64, f64) {
        let n = self.n;
        let nf = n as f64;
        match self.functional {
            Functional::Ate | Functional::Mar => {
                let mut plug = 0.0;
                let mut rec = 0.0;
                for i in 0..n {
                    let (m1, m0) = (link(eta[i]), link(eta[n + i]));
                    let (h1, h0) = (link(eta_hat[i]), link(eta_hat[n + i]));
                    let (d1, d0) = (m1 - h1, m0 - h0);
                    let dd = if self.d[i] == 1.0 { d1 } else { d0 };
                    if self.functional == Functional::Ate {
                        plug += weights[i] * (m1 - m0);
                        rec += d1 - d0 - self.gamma[i] * dd;
                    } else {
                        plug += weights[i] * m1;
                        rec += d1 - self.gamma[i] * dd;
                    }
                }
                (plug, rec / nf)
            }
            Functional::Ad => {
                let mut plug = 0.0;
                let mut rec = 0.0;
                for i in 0..n {
                    let m = link(eta[i]);
                    let dm = m * (1.0 - m) * eta[n + i];
                    let h = link(eta_hat[i]);
                    let dh = h * (1.0 - h) * eta_hat[n + i];
                    plug += weights[i] * dm;
                    rec += dm - dh - self.gamma[i] * (m - h);
                }
                (plug, rec / nf)
            }
            Functional::Ape => {
                let integral = |f: &dyn Fn(usize) -> f64| -> f64 {
                    match self.quadrature {
                        Some((q1, q0)) => {
                            let a = (n..n + q1).map(f).sum::<f64>() / q1 as f64;
                            let b = (n + q1..n + q1 + q0).map(f).sum::<f64>() / q0 as f64;
                            a - b
                        }
                        None => (0..n).map(|i| self.gamma[i] * f(i)).sum::<f64>() / nf,
                    }
                };
                let plug = integral(&|k| link(eta[k]));
                let delta = |k: usize| link(eta[k]) - link(eta_hat[k]);
                let weighted = (0..n).map(|i| self.gamma[i] * delta(i)).sum::<f64>() / nf;
                (plug, integral(&delta) - weighted)
            }
        }
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn vstack(blocks: &[MatRef<'_, f64>]) -> Mat<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks[0].ncols();
    let mut out = Mat::<f64>::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        for i in 0..b.nrows() {
            for j in 0..cols {
                out[(r0 + i, j)] = b[(i, j)];
            }
        }
        r0 += b.nrows();
    }
    out
}

fn validate(data: &Dataset, config: &ProcedureConfig, variants: &[Variant]) -> Result<()> {
    if config.draws < 2 {
        return Err(Error::config(format!("need at least 2 posterior draws, got {}", config.draws)));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {}", config.alpha)));
    }
    if variants.is_empty() {
        return Err(Error::config("no variant requested"));
    }
    match config.functional {
        Functional::Ate | Functional::Mar => data.require_binary_treatment()?,
        Functional::Ad => {
            if !(config.ad_step > 0.0 && config.ad_step.is_finite()) {
                return Err(Error::config("derivative step must be positive"));
            }
        }
        Functional::Ape => {
            if config.ape.is_none() {
                return Err(Error::config("the policy effect needs policy densities g1 and g0"));
            }
        }
    }
    Ok(())
}

/// Runs the procedure for one variant with streams keyed by `config.seed`.
pub fn run_procedure(data: &Dataset, config: &ProcedureConfig, variant: Variant) -> Result<(ProcedureOutput, Diagnostics)> {
    let mut run = run_variants(data, config, &[variant])?;
    let (_, out) = run.outputs.remove(0);
    Ok((out, run.diagnostics))
}

/// Runs several variants on shared pilot fits and shared random streams.
pub fn run_variants(data: &Dataset, config: &ProcedureConfig, variants: &[Variant]) -> Result<RunOutput> {
    run_variants_keyed(data, config, variants, StreamKey::new(config.seed))
}

pub(crate) fn run_variants_keyed(
    data: &Dataset,
    config: &ProcedureConfig,
    variants: &[Variant],
    key: StreamKey,
) -> Result<RunOutput> {
    validate(data, config, variants)?;
    let functional = config.functional;
    let plan = make_split_keyed(data.n(), config.split_mode, key)?;
    let pilot = data.subset(&plan.pilot_indices)?;
    let inference = data.subset(&plan.inference_indices)?;
    let x_only = functional == Functional::Ape;
    let kernel_points = |d: &Dataset| if x_only { d.points_at(0.0) } else { d.design_points() };

    // Hyperparameters and pilot outcome regression from the uncorrected model.
    let pilot_points = kernel_points(&pilot);
    let (spec, pilot_log_ml, hyper_evaluations) = match &config.hyper {
        Some(h) => (KernelSpec::from_hyper(h)?, None, 0),
        None => {
            let init = KernelSpec::initial_for(pilot.x().as_ref(), !x_only);
            let fit = search_hyperparameters(pilot_points.as_ref(), pilot.y(), &init, &config.hyper_search)?;
            (fit.spec, Some(fit.log_ml), fit.evaluations)
        }
    };
    if spec.dim() != data.p() + 1 {
        return Err(Error::config(format!(
            "kernel has {} inputs, data need {}",
            spec.dim(),
            data.p() + 1
        )));
    }
    let outcome = OutcomeModel::fit(&spec, pilot_points, pilot.y(), &config.newton)?;

    // Representer from the pilot sample.
    let mut separation = false;
    let riesz = match functional {
        Functional::Ate | Functional::Mar => {
            let pm = fit_propensity(&pilot, config.propensity)?;
            separation = pm.separation();
            if functional == Functional::Ate {
                riesz_ate(&pm, &inference)?
            } else {
                riesz_mar(&pm, &inference)?
            }
        }
        Functional::Ad => riesz_ad_from(TreatmentDensity::fit(&pilot)?, &inference)?,
        Functional::Ape => {
            let ape = config.ape.as_ref().expect("validated");
            riesz_ape(ape.g1.clone(), ape.g0.clone(), &pilot, ape.density.clone())?
        }
    };
    let train = kernel_points(&inference);
    let gamma = riesz.values_at(train.as_ref());
    if gamma.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("representer is not finite on the inference sample"));
    }
    let gamma_abs_sum: f64 = gamma.iter().map(|g| g.abs()).sum();
    let n = inference.n();
    let sigma_n = if config.c_sigma == 0.0 {
        0.0
    } else if gamma_abs_sum == 0.0 {
        // A representer that vanishes on the sample leaves nothing to correct.
        0.0
    } else {
        sigma_rule(data.p(), n, gamma_abs_sum, config.c_sigma)?
    };

    // Evaluation points and the optional linear map applied to latent draws.
    let x = inference.x();
    let (eval, map, quadrature) = match functional {
        Functional::Ate | Functional::Mar => (stacked_arm_points(x.as_ref()), None, None),
        Functional::Ad => {
            let h = config.ad_step * sample_sd(inference.d());
            if !(h > 0.0) {
                return Err(Error::DegenerateTreatment("treatment has zero variance".into()));
            }
            let shifted = |delta: f64| {
                let mut w = inference.design_points();
                for i in 0..n {
                    w[(i, 0)] += delta;
                }
                w
            };
            let (up, down, at) = (shifted(h), shifted(-h), inference.design_points());
            let eval = vstack(&[up.as_ref(), down.as_ref(), at.as_ref()]);
            let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(2 * n + i, 1.0)]).collect();
            rows.extend((0..n).map(|i| vec![(i, 0.5 / h), (n + i, -0.5 / h)]));
            (eval, Some(rows), None)
        }
        Functional::Ape => {
            let ape = config.ape.as_ref().expect("validated");
            match &ape.integration {
                ApeIntegration::Reweighting => (train.clone(), None, None),
                ApeIntegration::Quadrature { g1_points, g0_points } => {
                    if g1_points.ncols() != data.p() || g0_points.ncols() != data.p() {
                        return Err(Error::shape("quadrature points must have one column per covariate"));
                    }
                    if g1_points.nrows() == 0 || g0_points.nrows() == 0 {
                        return Err(Error::config("quadrature needs points from both policy distributions"));
                    }
                    let lift = |z: &Mat<f64>| Mat::from_fn(z.nrows(), z.ncols() + 1, |i, j| if j == 0 { 0.0 } else { z[(i, j - 1)] });
                    let eval = vstack(&[train.as_ref(), lift(g1_points).as_ref(), lift(g0_points).as_ref()]);
                    (eval, None, Some((g1_points.nrows(), g0_points.nrows())))
                }
            }
        }
    };
    let apply_map = |v: Vec<f64>| -> Vec<f64> {
        match &map {
            Some(rows) => rows.iter().map(|r| r.iter().map(|&(i, c)| c * v[i]).sum()).collect(),
            None => v,
        }
    };
    let eta_hat = apply_map(outcome.latent_means(eval.as_ref())?);
    let layout = Layout {
        functional,
        n,
        d: inference.d().to_vec(),
        gamma: gamma.clone(),
        quadrature,
        map: map.clone(),
    };

    let mut fits = 1usize;
    let mut nonconverged = usize::from(!outcome.converged());
    let mut jitters = Vec::new();
    let mut draw_variant = |corrected: bool| -> Result<(Vec<f64>, Vec<f64>)> {
        let s = if corrected && sigma_n > 0.0 {
            spec.clone().with_correction(sigma_n, riesz.correction())?
        } else {
            spec.without_correction()
        };
        let g = gram(&s, train.as_ref(), eval.as_ref(), spec.default_jitter())?;
        let fit = fit_laplace(g, inference.y(), &config.newton)?;
        fits += 1;
        if !fit.converged {
            nonconverged += 1;
        }
        let mut moments = predict_moments(&fit);
        if let Some(rows) = &layout.map {
            moments = map_moments(&moments, rows);
        }
        let pred = PredictiveGaussian::from_moments(moments, SAMPLING_JITTER)?;
        jitters.push(pred.jitter);
        let eta = sample_functions_streamed(&pred, config.draws, key)?;
        let mut plug = Vec::with_capacity(config.draws);
        let mut rec = Vec::with_capacity(config.draws);
        let mut row = vec![0.0; eta.ncols()];
        for s in 0..config.draws {
            for (j, r) in row.iter_mut().enumerate() {
                *r = eta[(s, j)];
            }
            let w = bootstrap_weights(n, &mut key.stream(Purpose::Bootstrap, s as u64));
            let (p, b) = layout.evaluate(&row, &eta_hat, &w);
            plug.push(p);
            rec.push(b);
        }
        Ok((plug, rec))
    };

    let mut uncorrected = None;
    let mut corrected = None;
    if variants.contains(&Variant::Uncorrected) {
        uncorrected = Some(draw_variant(false)?);
    }
    if variants.iter().any(|v| *v != Variant::Uncorrected) {
        corrected = Some(draw_variant(true)?);
    }
    if nonconverged > 0 {
        return Err(Error::FailureBudget {
            what: "Laplace fits",
            failures: nonconverged,
            attempts: fits,
            budget: 1.0,
        });
    }

    let mut outputs = Vec::with_capacity(variants.len());
    for &v in variants {
        let (plug, rec) = match v {
            Variant::Uncorrected => uncorrected.as_ref(),
            _ => corrected.as_ref(),
        }
        .expect("computed above");
        let (values, recenterings) = if v == Variant::DoublyRobust {
            (plug.iter().zip(rec).map(|(p, b)| p - b).collect(), rec.clone())
        } else {
            (plug.clone(), vec![0.0; plug.len()])
        };
        let summary = summarize(&values, config.alpha)?;
        outputs.push((
            v,
            ProcedureOutput {
                draws: FunctionalDraws {
                    functional,
                    variant: v,
                    seed: config.seed,
                    plug_in: plug.clone(),
                    recenterings,
                    values,
                },
                summary,
            },
        ));
    }

    let m_hat_arms = match functional {
        Functional::Ate | Functional::Mar => Some((
            eta_hat[..n].iter().map(|&e| link(e)).collect(),
            eta_hat[n..2 * n].iter().map(|&e| link(e)).collect(),
        )),
        _ => None,
    };
    let diagnostics = Diagnostics {
        functional,
        n: data.n(),
        n_pilot: pilot.n(),
        n_inference: n,
        hyperparameters: spec.hyper(),
        pilot_log_ml,
        hyper_evaluations,
        sigma_n,
        gamma_abs_sum,
        gamma_sup: gamma.iter().fold(0.0, |m, g| m.max(g.abs())),
        propensity_separation: separation,
        laplace_fits: fits,
        laplace_nonconverged: nonconverged,
        sampling_jitter: jitters,
    };
    Ok(RunOutput {
        outputs,
        diagnostics,
        nuisance: Nuisance {
            plan,
            inference,
            outcome,
            riesz,
            gamma,
            m_hat_arms,
            spec,
        },
    })
}
