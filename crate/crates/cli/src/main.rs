mod config;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use drbayes::frequentist::{aipw_from_parts, plug_in_from_parts};
use drbayes::nuisance::fit_propensity;
use drbayes::procedure::{ApeIntegration, ApeSetup};
use drbayes::simulation::{cached_true_ate, generate, run_mc};
use drbayes::{
    load_csv, trim_by_overlap, ColumnSchema, Design, DesignSpec, Error, Functional, McConfig, Method, ProcedureConfig,
    PropensityKind, Purpose, SplitMode, StreamKey, Variant,
};
use serde_json::json;

use config::{parse_named, RunConfig};

#[derive(Parser)]
#[command(name = "drbayes", version, about = "Doubly robust Bayesian treatment-effect estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a treatment effect from a CSV file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study on a synthetic design.
    Simulate(SimulateArgs),
    /// Overlay the posterior draws of two estimate runs as an SVG histogram.
    Plot(PlotArgs),
    /// Write one synthetic dataset to CSV.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Posterior draws B.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Multiplier of the correction-weight rule.
    #[arg(long)]
    c_sigma: Option<f64>,
    /// full-reuse or half-split.
    #[arg(long, value_parser = parse_named::<SplitMode>)]
    split: Option<SplitMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// logistic-regression or gp-classifier.
    #[arg(long, value_parser = parse_named::<PropensityKind>)]
    propensity: Option<PropensityKind>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Input CSV with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// ate, ape, ad or mar.
    #[arg(long, value_parser = parse_named::<Functional>)]
    functional: Option<Functional>,
    /// uncorrected, prior-corrected or doubly-robust; repeat for several.
    #[arg(long = "variant", value_parser = parse_named::<Variant>)]
    variants: Vec<Variant>,
    /// Overlap bounds as LO,HI.
    #[arg(long, value_delimiter = ',')]
    trim: Option<Vec<f64>>,
    /// Skip overlap trimming.
    #[arg(long, conflicts_with = "trim")]
    no_trim: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// I or II.
    #[arg(long, value_parser = parse_named::<Design>)]
    design: Option<Design>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    /// Correction weights to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    c_sigma_sweep: Option<Vec<f64>>,
    /// Split modes to sweep, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_named::<SplitMode>)]
    split_modes: Option<Vec<SplitMode>>,
    /// Methods to report, comma separated (bayes, pc-bayes, dr-bayes, aipw, plug-in).
    #[arg(long, value_delimiter = ',', value_parser = parse_named::<Method>)]
    methods: Option<Vec<Method>>,
}

#[derive(Args)]
struct PlotArgs {
    /// Two draws.csv files.
    #[arg(num_args = 2, required = true)]
    draws: Vec<PathBuf>,
    #[arg(long, default_value = "plot.svg")]
    out: PathBuf,
    /// Legend labels, comma separated.
    #[arg(long, value_delimiter = ',', default_values = ["first", "second"])]
    labels: Vec<String>,
    /// Position of the vertical reference line, e.g. the true effect.
    #[arg(long)]
    reference: Option<f64>,
    #[arg(long, default_value_t = 40)]
    bins: usize,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_named::<Design>, default_value = "I")]
    design: Design,
    #[arg(long, default_value_t = 250)]
    n: usize,
    #[arg(long, default_value_t = 15)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = c.draws {
        cfg.draws = v;
    }
    if let Some(v) = c.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = c.c_sigma {
        cfg.c_sigma = v;
    }
    if let Some(v) = c.split {
        cfg.split = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.propensity {
        cfg.propensity = v;
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Schema(_) | Error::Parse { .. } | Error::Validation { .. } => 3,
        Error::FailureBudget { .. } => 5,
        _ => 4,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn prepare_out(cfg: &RunConfig) -> Result<(), Error> {
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    write(&cfg.out.join("effective_config.json"), &(cfg.to_json() + "\n"))
}

fn metadata() -> serde_json::Value {
    json!({ "tool": "drbayes", "version": env!("CARGO_PKG_VERSION") })
}

fn procedure_config(cfg: &RunConfig) -> ProcedureConfig {
    ProcedureConfig {
        functional: cfg.functional,
        draws: cfg.draws,
        alpha: cfg.alpha,
        c_sigma: cfg.c_sigma,
        split_mode: cfg.split,
        seed: cfg.seed,
        propensity: cfg.propensity,
        hyper_search: cfg.hyper_search,
        newton: cfg.hyper_search.newton,
        ad_step: cfg.ad_step,
        ape: cfg.policy.as_ref().map(|p| ApeSetup {
            g1: Arc::new(p.g1.clone()),
            g0: Arc::new(p.g0.clone()),
            density: None,
            integration: ApeIntegration::Reweighting,
        }),
        hyper: cfg.hyperparameters.clone(),
    }
}

/// Header-driven default mapping: `y`, `d`, everything else a covariate.
fn infer_schema(path: &Path) -> Result<ColumnSchema, Error> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => Error::Schema(format!("{}: {other:?}", path.display())),
        })?;
    let headers = reader.headers().map_err(|e| Error::Schema(format!("cannot read header: {e}")))?;
    let covariates: Vec<String> = headers.iter().filter(|h| *h != "y" && *h != "d").map(String::from).collect();
    Ok(ColumnSchema {
        y: "y".into(),
        d: "d".into(),
        covariates,
    })
}

fn estimate(args: EstimateArgs) -> Result<(), Error> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    apply_common(&mut cfg, &args.common);
    if let Some(v) = args.input {
        cfg.input = Some(v);
    }
    if let Some(v) = args.functional {
        cfg.functional = v;
    }
    if !args.variants.is_empty() {
        cfg.variants = args.variants;
    }
    if let Some(t) = args.trim {
        let [lo, hi] = t[..] else {
            return Err(Error::Config(format!("--trim takes two bounds LO,HI, got {} values", t.len())));
        };
        cfg.trim = Some([lo, hi]);
    }
    if args.no_trim {
        cfg.trim = None;
    }
    cfg.validate()?;
    let input = cfg.input.clone().ok_or_else(|| Error::Config("estimate needs an input CSV (--input)".into()))?;
    let schema = match &cfg.columns {
        Some(s) => s.clone(),
        None => infer_schema(&input)?,
    };
    let data = load_csv(&input, &schema)?;
    prepare_out(&cfg)?;

    // Trimming happens once, on the full sample, before any split.
    let binary = matches!(cfg.functional, Functional::Ate | Functional::Mar);
    let (data_used, trim_info) = match cfg.trim {
        Some([lo, hi]) if binary => {
            let ps = fit_propensity(&data, cfg.propensity)?;
            let scores = ps.evaluate_rows(data.x().as_ref());
            let (trimmed, kept) = trim_by_overlap(&data, &scores, lo, hi)?;
            let info = json!({ "bounds": [lo, hi], "kept": kept.len(), "dropped": data.n() - kept.len() });
            (trimmed, info)
        }
        _ => (data.clone(), serde_json::Value::Null),
    };

    let pc = procedure_config(&cfg);
    let run = drbayes::run_variants(&data_used, &pc, &cfg.variants)?;

    let mut results = Vec::new();
    for (i, (variant, out)) in run.outputs.iter().enumerate() {
        let csv = out.draws.to_csv_string();
        if i == 0 {
            write(&cfg.out.join("draws.csv"), &csv)?;
        }
        if run.outputs.len() > 1 {
            write(&cfg.out.join(format!("draws-{variant}.csv")), &csv)?;
        }
        results.push(json!({ "variant": variant, "summary": out.summary }));
    }

    let mut frequentist = Vec::new();
    if cfg.functional == Functional::Ate {
        if let Some((m1, m0)) = &run.nuisance.m_hat_arms {
            let inf = &run.nuisance.inference;
            frequentist.push(aipw_from_parts(inf.y(), inf.d(), m1, m0, &run.nuisance.gamma, cfg.alpha)?);
            frequentist.push(plug_in_from_parts(m1, m0, cfg.alpha)?);
        }
    }

    let summary = json!({
        "metadata": metadata(),
        "input": input,
        "functional": cfg.functional,
        "n_input": data.n(),
        "n_used": data_used.n(),
        "trim": trim_info,
        "results": results,
        "frequentist": frequentist,
        "diagnostics": run.diagnostics,
    });
    write(&cfg.out.join("summary.json"), &(serde_json::to_string_pretty(&summary).unwrap() + "\n"))?;
    for (variant, out) in &run.outputs {
        let s = out.summary;
        println!(
            "{} {variant}: {:.4} [{:.4}, {:.4}]",
            cfg.functional, s.point, s.lower, s.upper
        );
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), Error> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    apply_common(&mut cfg, &args.common);
    let sim = &mut cfg.simulation;
    if let Some(v) = args.design {
        sim.design = v;
    }
    if let Some(v) = args.n {
        sim.n = v;
    }
    if let Some(v) = args.p {
        sim.p = v;
    }
    if let Some(v) = args.replications {
        sim.replications = v;
    }
    if let Some(v) = args.c_sigma_sweep {
        sim.c_sigma_sweep = v;
    }
    if let Some(v) = args.split_modes {
        sim.split_modes = v;
    }
    if let Some(v) = args.methods {
        sim.methods = v;
    }
    cfg.validate()?;
    if cfg.simulation.replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    let sim = cfg.simulation.clone();
    let spec = DesignSpec::new(sim.design, sim.n, sim.p, cfg.seed)?;
    prepare_out(&cfg)?;

    let weights = if sim.c_sigma_sweep.is_empty() { vec![cfg.c_sigma] } else { sim.c_sigma_sweep.clone() };
    let splits = if sim.split_modes.is_empty() { vec![cfg.split] } else { sim.split_modes.clone() };
    let mut csv = String::new();
    let mut text = String::new();
    for &split in &splits {
        for &c in &weights {
            let mut run_cfg = cfg.clone();
            run_cfg.c_sigma = c;
            run_cfg.split = split;
            let mc = McConfig {
                replications: sim.replications,
                methods: sim.methods.clone(),
                procedure: procedure_config(&run_cfg),
                failure_budget: sim.failure_budget,
            };
            let report = run_mc(&spec, &mc)?;
            let part = report.to_csv();
            if csv.is_empty() {
                csv.push_str(&part);
            } else {
                csv.push_str(part.split_once('\n').map(|(_, rows)| rows).unwrap_or(""));
            }
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&report.to_text());
        }
    }
    write(&cfg.out.join("report.csv"), &csv)?;
    write(&cfg.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn plot_cmd(args: PlotArgs) -> Result<(), Error> {
    if args.labels.len() != 2 {
        return Err(Error::Config(format!("--labels takes two names, got {}", args.labels.len())));
    }
    let a = plot::read_draws(&args.draws[0])?;
    let b = plot::read_draws(&args.draws[1])?;
    let svg = plot::render_svg([&a, &b], [&args.labels[0], &args.labels[1]], args.reference, args.bins)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write(&args.out, &svg)?;
    if let Some(r) = args.reference {
        let [da, db] = plot::distances([&a, &b], r);
        println!("|mean - reference|: {} {da:.5}, {} {db:.5}", args.labels[0], args.labels[1]);
    }
    Ok(())
}

fn generate_cmd(args: GenerateArgs) -> Result<(), Error> {
    let spec = DesignSpec::new(args.design, args.n, args.p, args.seed)?;
    let data = generate(&spec, &mut StreamKey::new(args.seed).stream(Purpose::Data, 0))?;
    data.write_csv(&args.out)?;
    let truth = cached_true_ate(args.design, args.p)?;
    println!("{}", json!({ "design": args.design, "n": args.n, "p": args.p, "seed": args.seed, "true_ate": truth.value, "true_ate_se": truth.se }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::Plot(a) => plot_cmd(a),
        Command::Generate(a) => generate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
