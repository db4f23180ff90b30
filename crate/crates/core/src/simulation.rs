//! Synthetic designs, their true average treatment effects, and the Monte
//! Carlo harness that produces bias / coverage / interval-length tables.
//!
//! Both designs draw `X ~ N(0, I_p)`, `D | X ~ Bernoulli(Ψ(Σ_j x_j / j))` and
//! `Y | D, X ~ Bernoulli(Ψ(μ(X) + D τ(X)))` with
//!
//! ```text
//! Design I:  μ(x) = −2 + 0.2 Σ_{j≤p} x_j,                τ(x) = 1 + 0.1 Σ_{j≤5} x_j
//! Design II: μ(x) = −2 + 0.4 Σ_{j≤p} sin(x_j) / j^{1/3},  τ(x) = Σ_{j≤3} cos(x_j) / j
//! ```

use std::collections::HashMap;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitMode};
use crate::error::{Error, Result};
use crate::frequentist::{aipw_from_parts, plug_in_from_parts};
use crate::gp::link;
use crate::procedure::{run_variants_keyed, ProcedureConfig, Variant};
use crate::rng::{Purpose, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Design {
    I,
    II,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::I => "I",
            Design::II => "II",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl DesignSpec {
    pub fn new(design: Design, n: usize, p: usize, seed: u64) -> Result<Self> {
        let min_p = match design {
            Design::I => 5,
            Design::II => 3,
        };
        if p < min_p {
            return Err(Error::config(format!("design {design} needs p >= {min_p}, got {p}")));
        }
        if n < 2 {
            return Err(Error::config(format!("sample size must be at least 2, got {n}")));
        }
        Ok(DesignSpec { design, n, p, seed })
    }

    /// Propensity index `g(x) = Σ_j x_j / j`.
    pub fn g(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(j, v)| v / (j + 1) as f64).sum()
    }

    pub fn mu(&self, x: &[f64]) -> f64 {
        match self.design {
            Design::I => -2.0 + 0.2 * x.iter().sum::<f64>(),
            Design::II => {
                -2.0 + 0.4
                    * x.iter()
                        .enumerate()
                        .map(|(j, v)| v.sin() / ((j + 1) as f64).cbrt())
                        .sum::<f64>()
            }
        }
    }

    pub fn tau(&self, x: &[f64]) -> f64 {
        match self.design {
            Design::I => 1.0 + 0.1 * x[..5].iter().sum::<f64>(),
            Design::II => x[..3].iter().enumerate().map(|(j, v)| v.cos() / (j + 1) as f64).sum(),
        }
    }

    /// `m₀(d, x) = Ψ(μ(x) + d τ(x))`.
    pub fn outcome_probability(&self, d: f64, x: &[f64]) -> f64 {
        link(self.mu(x) + d * self.tau(x))
    }
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// Draws `n` observations from a design using one stream.
pub fn generate_n<R: Rng + ?Sized>(spec: &DesignSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    let p = spec.p;
    let mut x = Mat::<f64>::zeros(n, p);
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = rng.sample(StandardNormal);
            x[(i, j)] = *r;
        }
        let di = bernoulli(rng, link(spec.g(&row)));
        d.push(di);
        y.push(bernoulli(rng, spec.outcome_probability(di, &row)));
    }
    Dataset::new(y, d, x)
}

pub fn generate<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> Result<Dataset> {
    generate_n(spec, spec.n, rng)
}

/// Monte Carlo value of a population effect with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEffect {
    pub value: f64,
    pub se: f64,
    pub points: usize,
}

/// `E[f(X)]` for standard normal `X`, optionally with antithetic pairs `(X, −X)`.
pub fn normal_expectation<F>(f: F, p: usize, points: usize, antithetic: bool, seed: u64) -> Result<TrueEffect>
where
    F: Fn(&[f64]) -> f64,
{
    if points < 2 || p == 0 {
        return Err(Error::config("expectation needs at least 2 points and 1 dimension"));
    }
    let mut rng = StreamKey::new(seed).stream(Purpose::TrueEffect, 0);
    let mut x = vec![0.0; p];
    let mut neg = vec![0.0; p];
    let units = if antithetic { points / 2 } else { points };
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..units {
        for j in 0..p {
            x[j] = rng.sample(StandardNormal);
            neg[j] = -x[j];
        }
        let v = if antithetic { 0.5 * (f(&x) + f(&neg)) } else { f(&x) };
        sum += v;
        sum_sq += v * v;
    }
    let m = units as f64;
    let value = sum / m;
    let var = (sum_sq / m - value * value).max(0.0) * m / (m - 1.0);
    Ok(TrueEffect {
        value,
        se: (var / m).sqrt(),
        points: if antithetic { 2 * units } else { units },
    })
}

/// `χ₀ = E[Ψ(μ(X) + τ(X)) − Ψ(μ(X))]` by antithetic Monte Carlo.
pub fn true_ate(spec: &DesignSpec, mc_points: usize) -> Result<TrueEffect> {
    normal_expectation(
        |x| spec.outcome_probability(1.0, x) - spec.outcome_probability(0.0, x),
        spec.p,
        mc_points,
        true,
        spec.seed,
    )
}

/// Points used for the cached ground truth.
pub const TRUTH_POINTS: usize = 1_000_000;
const TRUTH_SEED: u64 = 20_240_601;

/// `χ₀` at [`TRUTH_POINTS`] points, computed once per `(design, p)`.
pub fn cached_true_ate(design: Design, p: usize) -> Result<TrueEffect> {
    static CACHE: OnceLock<Mutex<HashMap<(Design, usize), TrueEffect>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().expect("truth cache poisoned").get(&(design, p)) {
        return Ok(*t);
    }
    let spec = DesignSpec::new(design, 2, p, TRUTH_SEED)?;
    let t = true_ate(&spec, TRUTH_POINTS)?;
    cache.lock().expect("truth cache poisoned").insert((design, p), t);
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bayes,
    PcBayes,
    DrBayes,
    Aipw,
    PlugIn,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Bayes, Method::PcBayes, Method::DrBayes, Method::Aipw, Method::PlugIn];

    pub fn label(&self, split: bool) -> String {
        let base = match self {
            Method::Bayes => "Bayes",
            Method::PcBayes => "PC Bayes",
            Method::DrBayes => "DR Bayes",
            Method::Aipw => "AIPW",
            Method::PlugIn => "Plug-in",
        };
        if split {
            format!("{base}-S")
        } else {
            base.to_string()
        }
    }

    fn variant(&self) -> Option<Variant> {
        match self {
            Method::Bayes => Some(Variant::Uncorrected),
            Method::PcBayes => Some(Variant::PriorCorrected),
            Method::DrBayes => Some(Variant::DoublyRobust),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub replications: usize,
    pub methods: Vec<Method>,
    /// Per-replication procedure settings; `seed` is replaced by the design seed.
    pub procedure: ProcedureConfig,
    /// Largest tolerated fraction of failed replications.
    pub failure_budget: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            replications: 200,
            methods: Method::ALL.to_vec(),
            procedure: ProcedureConfig::default(),
            failure_budget: 0.05,
        }
    }
}

/// Point estimate and interval of one method in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    /// One entry per configured method, in order; `None` marks a failure.
    pub results: Vec<Option<Interval>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub bias: f64,
    pub cp: f64,
    /// Monte Carlo standard error of `cp`, `√(cp (1 − cp) / R)`.
    pub cp_se: f64,
    pub cil: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub c_sigma: f64,
    pub split_mode: SplitMode,
    pub draws: usize,
    pub alpha: f64,
    pub truth: TrueEffect,
    pub replications: usize,
    pub rows: Vec<MethodRow>,
}

impl McReport {
    pub fn row(&self, label: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("design,n,p,c_sigma,split,method,bias,cp,cp_se,cil,successes,failures\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{:.4},{:.4},{:.6},{},{}\n",
                self.design,
                self.n,
                self.p,
                self.c_sigma,
                split_label(self.split_mode),
                r.method,
                r.bias,
                r.cp,
                r.cp_se,
                r.cil,
                r.successes,
                r.failures
            ));
        }
        out
    }

    /// Aligned text table with Bias, CP and CIL columns.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "Design {}  n={}  p={}  c_sigma={}  split={}  B={}  replications={}\ntrue ATE {:.5} (MC se {:.1e})\n",
            self.design,
            self.n,
            self.p,
            self.c_sigma,
            split_label(self.split_mode),
            self.draws,
            self.replications,
            self.truth.value,
            self.truth.se
        );
        out.push_str(&format!(
            "{:<12} {:>9} {:>7} {:>7} {:>7} {:>6} {:>6}\n",
            "method", "Bias", "CP", "(se)", "CIL", "ok", "fail"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>9.4} {:>7.3} {:>7.3} {:>7.3} {:>6} {:>6}\n",
                r.method, r.bias, r.cp, r.cp_se, r.cil, r.successes, r.failures
            ));
        }
        out
    }
}

fn split_label(mode: SplitMode) -> &'static str {
    match mode {
        SplitMode::FullReuse => "full",
        SplitMode::HalfSplit => "half",
    }
}

/// Runs every configured method on one replication's dataset.
pub fn replicate(spec: &DesignSpec, config: &McConfig, replication: usize) -> ReplicationRecord {
    let key = StreamKey::replication(spec.seed, replication as u64);
    let split = config.procedure.split_mode == SplitMode::HalfSplit;
    let size = if split { 2 * spec.n } else { spec.n };
    let failed = |e: Error| ReplicationRecord {
        replication,
        results: vec![None; config.methods.len()],
        error: Some(e.to_string()),
    };
    let data = match generate_n(spec, size, &mut key.stream(Purpose::Data, 0)) {
        Ok(d) => d,
        Err(e) => return failed(e),
    };
    let variants: Vec<Variant> = config.methods.iter().filter_map(|m| m.variant()).collect();
    let mut proc = config.procedure.clone();
    proc.seed = spec.seed;
    // Frequentist-only runs still need pilot fits; a prior-corrected pass is the cheapest carrier.
    let run_variants_list = if variants.is_empty() { vec![Variant::PriorCorrected] } else { variants };
    let run = match run_variants_keyed(&data, &proc, &run_variants_list, key) {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    let inf = &run.nuisance.inference;
    let alpha = proc.alpha;
    let results = config
        .methods
        .iter()
        .map(|m| match m.variant() {
            Some(v) => run.get(v).map(|o| Interval {
                point: o.summary.point,
                lower: o.summary.lower,
                upper: o.summary.upper,
            }),
            None => {
                let (m1, m0) = run.nuisance.m_hat_arms.as_ref()?;
                let est = match m {
                    Method::Aipw => aipw_from_parts(inf.y(), inf.d(), m1, m0, &run.nuisance.gamma, alpha),
                    _ => plug_in_from_parts(m1, m0, alpha),
                };
                est.ok().map(|e| Interval {
                    point: e.estimate,
                    lower: e.ci_lower,
                    upper: e.ci_upper,
                })
            }
        })
        .collect();
    ReplicationRecord {
        replication,
        results,
        error: None,
    }
}

/// Bias, coverage and mean interval length per method over successful replications.
pub fn aggregate(labels: &[String], truth: f64, records: &[ReplicationRecord]) -> Vec<MethodRow> {
    labels
        .iter()
        .enumerate()
        .map(|(k, label)| {
            let ok: Vec<&Interval> = records.iter().filter_map(|r| r.results[k].as_ref()).collect();
            let m = ok.len();
            let mf = m.max(1) as f64;
            let bias = ok.iter().map(|i| i.point - truth).sum::<f64>() / mf;
            let cp = ok.iter().filter(|i| i.lower <= truth && truth <= i.upper).count() as f64 / mf;
            let cil = ok.iter().map(|i| i.upper - i.lower).sum::<f64>() / mf;
            MethodRow {
                method: label.clone(),
                bias: if m == 0 { f64::NAN } else { bias },
                cp: if m == 0 { f64::NAN } else { cp },
                cp_se: (cp * (1.0 - cp) / mf).sqrt(),
                cil: if m == 0 { f64::NAN } else { cil },
                successes: m,
                failures: records.len() - m,
            }
        })
        .collect()
}

/// Monte Carlo study of one design. Replications run in parallel on
/// independent streams, so the report does not depend on the worker count.
pub fn run_mc(spec: &DesignSpec, config: &McConfig) -> Result<McReport> {
    let (report, _) = run_mc_with_records(spec, config)?;
    Ok(report)
}

pub fn run_mc_with_records(spec: &DesignSpec, config: &McConfig) -> Result<(McReport, Vec<ReplicationRecord>)> {
    if config.replications == 0 {
        return Err(Error::config("replications must be at least 1"));
    }
    if config.methods.is_empty() {
        return Err(Error::config("no methods selected"));
    }
    if !(0.0..=1.0).contains(&config.failure_budget) {
        return Err(Error::config("failure budget must be a fraction in [0, 1]"));
    }
    let truth = cached_true_ate(spec.design, spec.p)?;
    let records: Vec<ReplicationRecord> = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(spec, config, r))
        .collect();
    let failed = records.iter().filter(|r| r.results.iter().any(|x| x.is_none())).count();
    if failed as f64 > config.failure_budget * config.replications as f64 {
        return Err(Error::FailureBudget {
            what: "replications",
            failures: failed,
            attempts: config.replications,
            budget: 100.0 * config.failure_budget,
        });
    }
    let split = config.procedure.split_mode == SplitMode::HalfSplit;
    let labels: Vec<String> = config.methods.iter().map(|m| m.label(split)).collect();
    let rows = aggregate(&labels, truth.value, &records);
    Ok((
        McReport {
            design: spec.design,
            n: spec.n,
            p: spec.p,
            c_sigma: config.procedure.c_sigma,
            split_mode: config.procedure.split_mode,
            draws: config.procedure.draws,
            alpha: config.procedure.alpha,
            truth,
            replications: config.replications,
            rows,
        },
        records,
    ))
}
