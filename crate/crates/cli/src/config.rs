//! Run configuration: a JSON file with every field defaulted, overridden by flags.

use std::path::{Path, PathBuf};

use drbayes::nuisance::GaussianProduct;
use drbayes::{
    ColumnSchema, Design, Error, Functional, HyperSearch, KernelHyper, Method, PropensityKind, SplitMode, Variant,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV for `estimate`.
    pub input: Option<PathBuf>,
    /// Column mapping; when absent the outcome is `y`, the treatment `d`, and
    /// every other column a covariate.
    pub columns: Option<ColumnSchema>,
    /// Output directory.
    pub out: PathBuf,
    pub functional: Functional,
    /// Posterior variants to report; the first one is written to `draws.csv`.
    pub variants: Vec<Variant>,
    pub draws: usize,
    pub alpha: f64,
    pub c_sigma: f64,
    /// Propensity-score overlap bounds; `null` disables trimming.
    pub trim: Option<[f64; 2]>,
    pub split: SplitMode,
    pub seed: u64,
    pub propensity: PropensityKind,
    pub hyper_search: HyperSearch,
    /// Fixed kernel hyperparameters, skipping the marginal-likelihood search.
    pub hyperparameters: Option<KernelHyper>,
    /// Finite-difference step for the average derivative, in units of sd(D).
    pub ad_step: f64,
    /// Covariate distributions for the policy effect.
    pub policy: Option<PolicyConfig>,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            columns: None,
            out: PathBuf::from("out"),
            functional: Functional::Ate,
            variants: vec![Variant::DoublyRobust],
            draws: 1000,
            alpha: 0.05,
            c_sigma: 1.0,
            trim: Some([0.05, 0.95]),
            split: SplitMode::FullReuse,
            seed: 0,
            propensity: PropensityKind::LogisticRegression,
            hyper_search: HyperSearch::default(),
            hyperparameters: None,
            ad_step: 1e-3,
            policy: None,
            simulation: SimulationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub g1: GaussianProduct,
    pub g0: GaussianProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub replications: usize,
    /// Correction weights to sweep; empty means the top-level `c_sigma`.
    pub c_sigma_sweep: Vec<f64>,
    /// Split modes to sweep; empty means the top-level `split`.
    pub split_modes: Vec<SplitMode>,
    pub methods: Vec<Method>,
    pub failure_budget: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            design: Design::I,
            n: 250,
            p: 15,
            replications: 200,
            c_sigma_sweep: Vec::new(),
            split_modes: Vec::new(),
            methods: Method::ALL.to_vec(),
            failure_budget: 0.05,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.draws < 2 {
            return bad(format!("draws must be at least 2, got {}", self.draws));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.c_sigma >= 0.0 && self.c_sigma.is_finite()) {
            return bad(format!("c_sigma must be finite and >= 0, got {}", self.c_sigma));
        }
        if let Some([lo, hi]) = self.trim {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return bad(format!("trim bounds must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]"));
            }
        }
        if self.variants.is_empty() {
            return bad("at least one variant is required".into());
        }
        if self.simulation.c_sigma_sweep.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return bad("c_sigma_sweep entries must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a flag value through the same serde names the JSON file uses.
pub fn parse_named<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}
