//! The `crkbs` command line: embed, extract, fit, analyze and eval over JSON
//! artifacts and CSV/JSON datasets.
//!
//! Exit codes: 0 on success, 2 for malformed input or usage, 3 when the
//! numerics fail (degenerate weighting, dead pool, extraction residual).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde_json::{json, Value};

use crkbs::analysis::{constant_function, eliminate_bias, path_norms, rademacher_complexity};
use crkbs::bridge::{network_norm_bounds, DEFAULT_PIVOT_THRESHOLD};
use crkbs::erm::generate_candidates;
use crkbs::io::{self, Artifact};
use crkbs::{
    embed_network, eval_chain_batch, extract_network, fit_erm, ChainFunction, ComplexityKind, Dataset, Error,
    FitConfig, LayerSpec, NoiseDraws, Result, WeightingSpec,
};

#[derive(Parser, Debug)]
#[command(name = "crkbs", version, about = "Neural chain RKBS toolkit")]
pub struct Cli {
    /// Seed for candidate sampling and noise draws.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Relative pivot threshold for basis selection.
    #[arg(long, global = true)]
    pub pivot_threshold: Option<f64>,

    /// Output file, or output prefix for commands writing several files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a network file into a measure file and print its norm bound.
    Embed { network: PathBuf },
    /// Rebuild a network of width at most N from a measure file and a dataset.
    Extract { measure: PathBuf, data: PathBuf },
    /// Fit the regularized least-squares problem; writes <out>.{network,measure,metrics}.json.
    Fit { data: PathBuf, config: PathBuf },
    /// Norm and capacity diagnostics for a network or measure file.
    Analyze(AnalyzeArgs),
    /// Evaluate a network or measure file on a dataset, CSV out.
    Eval { model: PathBuf, data: PathBuf },
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    pub model: PathBuf,

    /// Dataset whose inputs define the empirical complexity.
    #[arg(long)]
    pub data: Option<PathBuf>,

    #[arg(long)]
    pub path_norm: bool,

    #[arg(long)]
    pub complexity: bool,

    #[arg(long)]
    pub eliminate_bias: bool,

    /// Number of sampled noise vectors.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,

    /// Average over all 2^N sign vectors instead of sampling.
    #[arg(long)]
    pub exhaustive: bool,

    #[arg(long, value_enum, default_value_t = NoiseKind::Rademacher)]
    pub kind: NoiseKind,

    /// Sampled candidates per layer in the complexity pool.
    #[arg(long, default_value_t = 64)]
    pub pool_size: usize,

    /// Top-layer weighting after bias elimination; defaults to the current one.
    #[arg(long)]
    pub bias_free_weighting: Option<WeightingSpec>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NoiseKind {
    Rademacher,
    Gaussian,
}

impl From<NoiseKind> for ComplexityKind {
    fn from(k: NoiseKind) -> Self {
        match k {
            NoiseKind::Rademacher => ComplexityKind::Rademacher,
            NoiseKind::Gaussian => ComplexityKind::Gaussian,
        }
    }
}

pub fn exit_code(err: &Error) -> u8 {
    if err.is_runtime() {
        3
    } else {
        2
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

/// `base` with `suffix` appended to its file name.
fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("metrics serialize");
    text.push('\n');
    Ok(fs::write(path, text)?)
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let pivot = cli.pivot_threshold.unwrap_or(DEFAULT_PIVOT_THRESHOLD);
    match &cli.command {
        Command::Embed { network } => embed(network, cli.out.as_deref(), stdout),
        Command::Extract { measure, data } => extract(measure, data, pivot, cli.out.as_deref(), stdout),
        Command::Fit { data, config } => fit(data, config, cli, stdout),
        Command::Analyze(args) => analyze(args, cli, pivot, stdout),
        Command::Eval { model, data } => eval(model, data, cli.out.as_deref(), stdout),
    }
}

fn embed(network: &Path, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let net = io::read_network(network)?;
    let functions = embed_network(&net)?;
    if let Some(out) = out {
        io::write_measure(out, &functions)?;
    }
    for f in &functions {
        writeln!(stdout, "{}", crkbs::norm_upper_bound(f))?;
    }
    Ok(())
}

fn extract(measure: &Path, data: &Path, pivot: f64, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let functions = io::read_measure(measure)?;
    let data = io::read_dataset(data)?;
    let ex = extract_network(&functions, data.x(), pivot)?;
    let predicted = ex.network.forward_batch(data.x())?;
    let mut max_error: f64 = 0.0;
    let mut max_relative: f64 = 0.0;
    for (o, f) in functions.iter().enumerate() {
        let want = eval_chain_batch(f, data.x())?;
        for (w, p) in want.iter().zip(predicted.column(o)) {
            max_error = max_error.max((w - p).abs());
            max_relative = max_relative.max((w - p).abs() / w.abs().max(1.0));
        }
    }
    let widths = ex.network.widths();
    writeln!(
        stdout,
        "widths: {}",
        widths.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
    )?;
    for n in &ex.norms {
        writeln!(stdout, "norm: {n}")?;
    }
    if let Some(out) = out {
        io::write_network(out, &ex.network)?;
        write_json(
            &out.with_extension("metrics.json"),
            &json!({
                "widths": widths,
                "norms": ex.norms,
                "ranks": ex.selections.iter().map(|s| s.rank()).collect::<Vec<_>>(),
                "pivot_threshold": pivot,
                "max_abs_error": max_error,
                "max_rel_error": max_relative,
            }),
        )?;
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<FitConfig> {
    let text = fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = e.path().iter().map(|seg| format!("/{seg}")).collect::<String>();
        Error::Schema {
            pointer: if pointer.is_empty() { "/".into() } else { pointer },
            message: e.inner().to_string(),
        }
    })
}

fn fit(data: &Path, config: &Path, cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let data = io::read_dataset(data)?;
    if data.y().is_none() {
        return Err(usage("fitting needs target columns y_1.. in the dataset"));
    }
    let mut config = read_config(config)?;
    if let Some(seed) = cli.seed {
        config.sampler.seed = seed;
    }
    if let Some(p) = cli.pivot_threshold {
        config.pivot_threshold = p;
    }
    let result = fit_erm(&data, &config)?;
    let prefix = cli.out.clone().unwrap_or_else(|| PathBuf::from("fit"));
    io::write_network(with_suffix(&prefix, ".network.json"), &result.network)?;
    io::write_measure(with_suffix(&prefix, ".measure.json"), &result.functions)?;
    let widths = result.hidden_widths();
    write_json(
        &with_suffix(&prefix, ".metrics.json"),
        &json!({
            "seed": config.sampler.seed,
            "lambda": config.lambda,
            "config": serde_json::to_value(&config).expect("config serializes"),
            "objective": result.objective(),
            "objective_trace": result.objective_trace,
            "converged": result.converged,
            "support_size": result.support_size,
            "norm": result.norm,
            "penalty": result.penalty,
            "hidden_widths": widths,
            "pool_ranks": result.pool_ranks,
            "train_residual": result.train_residual,
            "extraction_error": result.extraction_error,
        }),
    )?;
    writeln!(stdout, "objective: {}", result.objective())?;
    writeln!(stdout, "support: {}", result.support_size)?;
    writeln!(stdout, "norm: {}", result.norm)?;
    writeln!(
        stdout,
        "widths: {}",
        widths.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
    )?;
    if !result.converged {
        eprintln!("warning: coordinate descent hit max_iterations before meeting the tolerance");
    }
    Ok(())
}

/// Chain functions of an artifact; networks are embedded first.
fn functions_of(artifact: &Artifact) -> Result<Vec<ChainFunction>> {
    match artifact {
        Artifact::Network(net) => embed_network(net),
        Artifact::Measure(fs) => Ok(fs.clone()),
    }
}

fn layout_of(artifact: &Artifact) -> Result<(Vec<LayerSpec>, Option<usize>)> {
    Ok(match artifact {
        Artifact::Network(net) => (net.layer_specs(), Some(net.input_dim())),
        Artifact::Measure(fs) => (fs[0].layer_specs(), fs[0].input_dim()?),
    })
}

fn analyze(args: &AnalyzeArgs, cli: &Cli, pivot: f64, stdout: &mut dyn Write) -> Result<()> {
    if !(args.path_norm || args.complexity || args.eliminate_bias) {
        return Err(usage("nothing to analyze: pass --path-norm, --complexity or --eliminate-bias"));
    }
    if args.complexity && args.data.is_none() {
        return Err(usage("--complexity needs --data"));
    }
    let artifact = io::read_artifact(&args.model)?;
    let mut metrics = serde_json::Map::new();
    let norm_bounds = match &artifact {
        Artifact::Network(net) => network_norm_bounds(net)?,
        Artifact::Measure(fs) => fs.iter().map(crkbs::norm_upper_bound).collect(),
    };
    metrics.insert("norm_bound".into(), json!(norm_bounds));

    if args.path_norm {
        let Artifact::Network(net) = &artifact else {
            return Err(usage("--path-norm needs a network file"));
        };
        let norms = path_norms(net);
        let total: f64 = norms.iter().sum();
        writeln!(stdout, "path_norm: {total}")?;
        metrics.insert("path_norm".into(), json!(total));
        metrics.insert("path_norm_per_output".into(), json!(norms));
    }

    if args.complexity {
        let data = io::read_dataset(args.data.as_ref().expect("checked above"))?;
        let (specs, input_dim) = layout_of(&artifact)?;
        if input_dim.is_some_and(|d| d != data.input_dim()) {
            return Err(usage(format!(
                "model expects inputs of dimension {}, data has {}",
                input_dim.unwrap_or(0),
                data.input_dim()
            )));
        }
        let (estimates, csv) = complexity(&data, &specs, args, cli.seed.unwrap_or(0), pivot)?;
        for (layer, est) in estimates.iter().enumerate() {
            writeln!(
                stdout,
                "complexity_layer_{}: {} (se {})",
                layer + 1,
                est["value"],
                est["standard_error"]
            )?;
        }
        metrics.insert("complexity".into(), Value::Array(estimates));
        if let Some(out) = &cli.out {
            fs::write(with_suffix(out, ".draws.csv"), csv)?;
        }
    }

    if args.eliminate_bias {
        let functions = functions_of(&artifact)?;
        let (specs, input_dim) = layout_of(&artifact)?;
        if specs.len() < 2 {
            return Err(usage("--eliminate-bias needs depth at least 2"));
        }
        let beta1 = args.bias_free_weighting.unwrap_or(specs[specs.len() - 1].weighting);
        let constant = constant_function(functions[0].registry(), &specs[..specs.len() - 1], input_dim.unwrap_or(1))?;
        let mut outputs = Vec::with_capacity(functions.len());
        let mut reports = Vec::with_capacity(functions.len());
        for f in &functions {
            let r = eliminate_bias(f, beta1, &constant)?;
            writeln!(stdout, "sup_ratio: {}", r.sup_ratio)?;
            reports.push(json!({
                "sup_ratio": r.sup_ratio,
                "input_total_variation": r.input_total_variation,
                "output_total_variation": r.output_total_variation,
            }));
            outputs.push(r.function);
        }
        metrics.insert("bias_elimination".into(), Value::Array(reports));
        if let Some(out) = &cli.out {
            io::write_measure(with_suffix(out, ".bias_free.json"), &outputs)?;
        }
    }

    if let Some(out) = &cli.out {
        write_json(&with_suffix(out, ".metrics.json"), &Value::Object(metrics))?;
    }
    Ok(())
}

/// One estimate per layer over the ERM candidate pools, plus the per-draw CSV.
fn complexity(
    data: &Dataset,
    specs: &[LayerSpec],
    args: &AnalyzeArgs,
    seed: u64,
    pivot: f64,
) -> Result<(Vec<Value>, String)> {
    let mut config = FitConfig::new(specs.len())
        .with_layers(specs.to_vec())
        .with_pool_sizes(vec![args.pool_size.max(1); specs.len()])
        .with_seed(seed);
    config.pivot_threshold = pivot;
    let pools = generate_candidates(&config, data.x())?;
    let draws = if args.exhaustive {
        NoiseDraws::Exhaustive
    } else {
        NoiseDraws::Sampled { count: args.draws, seed }
    };
    let mut estimates = Vec::with_capacity(specs.len());
    let mut csv = String::from("layer,draw,sup\n");
    for (l, pool) in pools.layers.iter().enumerate() {
        let est = rademacher_complexity(
            l + 1,
            specs[l],
            &pools.registry,
            data.x(),
            pool.atoms(),
            draws,
            args.kind.into(),
        )?;
        for (k, s) in est.per_draw_sups.iter().enumerate() {
            csv.push_str(&format!("{},{k},{s:?}\n", l + 1));
        }
        let mut value = serde_json::to_value(&est).expect("estimate serializes");
        value["layer"] = json!(l + 1);
        estimates.push(value);
    }
    Ok((estimates, csv))
}

fn eval(model: &Path, data: &Path, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let artifact = io::read_artifact(model)?;
    let data = io::read_dataset(data)?;
    let values = match &artifact {
        Artifact::Network(net) => net.forward_batch(data.x())?,
        Artifact::Measure(fs) => {
            let mut values = Array2::zeros((data.len(), fs.len()));
            for (o, f) in fs.iter().enumerate() {
                if f.input_dim()?.is_some_and(|d| d != data.input_dim()) {
                    return Err(usage("dataset dimension does not match the measure"));
                }
                values.column_mut(o).assign(&eval_chain_batch(f, data.x())?);
            }
            values
        }
    };
    let csv = io::predictions_to_csv(values.view());
    match out {
        Some(out) => fs::write(out, csv)?,
        None => stdout.write_all(csv.as_bytes())?,
    }
    Ok(())
}
