//! Doubly robust Bayesian inference for treatment effects with binary
//! outcomes, built on Gaussian-process classification with a corrected
//! prior and recentered posterior draws.

pub mod data;
pub mod error;
pub mod frequentist;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod nuisance;
pub mod procedure;
pub mod rng;
pub mod simulation;

pub use data::{load_csv, make_split, trim_by_overlap, ColumnSchema, Dataset, SplitMode, SplitPlan};
pub use error::{Error, Result};
pub use frequentist::{aipw, plug_in, FrequentistEstimate, FrequentistMethod};
pub use gp::{LaplaceFit, NewtonOptions, PredictiveGaussian};
pub use kernel::{GramMatrices, HyperSearch, KernelHyper, KernelSpec, SearchMethod};
pub use nuisance::{Functional, OutcomeModel, PropensityKind, PropensityModel, RieszRepresenter};
pub use procedure::{
    run_procedure, run_variants, CredibleSummary, Diagnostics, FunctionalDraws, ProcedureConfig, ProcedureOutput,
    RunOutput, Variant,
};
pub use rng::{Purpose, StreamKey};
pub use simulation::{run_mc, Design, DesignSpec, McConfig, McReport, Method};
