use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use flowselect::config::{Dataset, RunConfig};
use flowselect::container::{Container, MAGIC_FLOW, MAGIC_FOREST, MAGIC_LASSO, MAGIC_MLP, MAGIC_NULLS};
use flowselect::error::Error;
use flowselect::experiments::{replicate_with_library, ResponseTemplate};
use flowselect::flow::FlowModel;
use flowselect::hrt::{build_null_library, fit_flow_stage, run_pipeline, Correction, SamplerKind, StageTiming};
use flowselect::models::{Model, StatisticKind};
use flowselect::sampler::NullSamples;
use flowselect::seed::{derive_seed, stream};

const EXIT_INTERNAL: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser)]
#[command(name = "flowselect", version, about = "Conditional randomization tests with flow-based null samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the joint density on the training rows and write a checkpoint.
    FitFlow(RunArgs),
    /// Draw null features for every tested column into the cache.
    SampleNulls(RunArgs),
    /// Run the full test and write per-feature p-values.
    Test(RunArgs),
    /// Repeat the test with fresh simulated responses.
    Experiment(RunArgs),
    /// Describe a binary artifact.
    InspectCheckpoint {
        path: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run manifest.
    config: PathBuf,
    /// Null draws per observation.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    correction: Option<Correction>,
    #[arg(long)]
    statistic: Option<StatisticKind>,
    /// Draw nulls from the known mixture's exact conditionals.
    #[arg(long)]
    oracle_conditional: bool,
    /// Reuse cached artifacts from an earlier run.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, overriding the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    version: &'static str,
    seed: u64,
    seeds: Seeds,
    config: String,
    artifacts: Vec<PathBuf>,
    timings: Vec<StageTiming>,
}

#[derive(Serialize)]
struct Seeds {
    split: u64,
    flow: u64,
    chain: u64,
    response: u64,
}

impl RunManifest {
    fn new(command: &'static str, cfg: &RunConfig) -> Self {
        let s = cfg.seed;
        RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: s,
            seeds: Seeds {
                split: derive_seed(s, &[stream::SPLIT]),
                flow: derive_seed(s, &[stream::FLOW_INIT]),
                chain: derive_seed(s, &[stream::CHAIN]),
                response: derive_seed(s, &[stream::RESPONSE]),
            },
            config: cfg.to_toml(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        }
    }

    fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return EXIT_INTERNAL;
    };
    match e.root() {
        Error::InvalidInput(_) | Error::Csv { .. } | Error::Format { .. } | Error::Config(_) => EXIT_INPUT,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_INPUT,
        Error::Mismatch(_) => EXIT_MISMATCH,
        _ => EXIT_INTERNAL,
    }
}

/// Load the manifest and apply command-line overrides.
fn load_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(k) = args.k {
        cfg.mcmc.k = k;
    }
    if let Some(g) = args.gamma {
        cfg.test.gamma = g;
    }
    if let Some(c) = args.correction {
        cfg.test.correction = c;
    }
    if let Some(s) = args.statistic {
        cfg.test.statistic = s;
    }
    if args.oracle_conditional {
        cfg.test.sampler = SamplerKind::MixtureExact;
    }
    if args.threads.is_some() {
        cfg.test.threads = args.threads;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output.dir).with_context(|| format!("creating {}", cfg.output.dir.display()))?;
    Ok(cfg)
}

fn load_data(cfg: &RunConfig, timings: &mut Vec<StageTiming>) -> anyhow::Result<Dataset> {
    let t = Instant::now();
    let data = cfg.load_dataset()?;
    timings.push(StageTiming {
        stage: "load".into(),
        seconds: t.elapsed().as_secs_f64(),
    });
    info!("loaded {} rows, {} features", data.features.n_rows(), data.features.n_cols());
    Ok(data)
}

fn fit_flow(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(args)?;
    let mut manifest = RunManifest::new("fit-flow", &cfg);
    let data = load_data(&cfg, &mut manifest.timings)?;
    let t = Instant::now();
    let trained = fit_flow_stage(&data.features, &cfg.pipeline_config())?;
    manifest.timings.push(StageTiming {
        stage: "flow".into(),
        seconds: t.elapsed().as_secs_f64(),
    });
    let ckpt = cfg.output.checkpoint.clone().unwrap_or_else(|| cfg.output.dir.join("flow.fsfl"));
    trained.model.save(&ckpt)?;
    let metrics = cfg.output.dir.join("flow_metrics.csv");
    trained.write_metrics_csv(&metrics)?;
    info!("best validation NLL {:.4}", trained.best_val_nll);
    manifest.artifacts = vec![ckpt, metrics];
    manifest.write(&cfg.output.dir)
}

fn sample_nulls(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(args)?;
    let mut manifest = RunManifest::new("sample-nulls", &cfg);
    let data = load_data(&cfg, &mut manifest.timings)?;
    let mut pc = cfg.pipeline_config();
    pc.resume = args.resume;
    let lib = build_null_library(&data.features, &pc)?;
    manifest.timings.extend(lib.timings.iter().cloned());
    let cache = pc.cache_dir.expect("cache dir");
    manifest.artifacts = lib.features.iter().map(|j| cache.join(format!("nulls_{j}.fsns"))).collect();
    manifest.write(&cfg.output.dir)
}

fn test(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(args)?;
    let mut manifest = RunManifest::new("test", &cfg);
    let data = load_data(&cfg, &mut manifest.timings)?;
    let y = data.response.as_ref().context("the test needs a response")?;
    let mut pc = cfg.pipeline_config();
    pc.resume = args.resume;
    let report = run_pipeline(&data.features, y.view(), &pc)?;
    manifest.timings.extend(report.timings.iter().cloned());
    let dir = &cfg.output.dir;
    let (csv, summary, manhattan) = (dir.join("pvalues.csv"), dir.join("summary.json"), dir.join("manhattan.tsv"));
    report.write_csv(&csv)?;
    report.write_summary_json(&summary)?;
    report.write_manhattan_tsv(&manhattan, None)?;
    let selected = report.selected();
    info!("{} of {} features selected", selected.len(), report.features.len());
    println!("{}", selected.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" "));
    manifest.artifacts = vec![csv, summary, manhattan];
    manifest.write(dir)
}

fn experiment(args: &RunArgs) -> anyhow::Result<u8> {
    let cfg = load_config(args)?;
    let mut manifest = RunManifest::new("experiment", &cfg);
    let data = load_data(&cfg, &mut manifest.timings)?;
    let mut pc = cfg.pipeline_config();
    pc.resume = args.resume;
    let lib = build_null_library(&data.features, &pc)?;
    manifest.timings.extend(lib.timings.iter().cloned());
    let template = ResponseTemplate {
        null: cfg.replicate.global_null,
        ..cfg.dataset.response_template()
    };
    let t = Instant::now();
    let result = replicate_with_library(&data.features, &lib, &template, &pc, &cfg.replicate.gammas, cfg.replicate.count)?;
    manifest.timings.push(StageTiming {
        stage: "replicates".into(),
        seconds: t.elapsed().as_secs_f64(),
    });
    let dir = &cfg.output.dir;
    let (csv, agg) = (dir.join("replicates.csv"), dir.join("aggregate.json"));
    result.write_replicates_csv(&csv)?;
    result.write_aggregate_json(&agg)?;
    for a in &result.aggregate {
        println!(
            "gamma={} fdr={:.4} power={}",
            a.gamma,
            a.mean_fdp,
            a.mean_power.map_or("NA".into(), |p| format!("{p:.4}"))
        );
    }
    manifest.artifacts = vec![csv, agg];
    manifest.write(dir)?;
    if result.failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("{} of {} replicates failed", result.failures.len(), result.n_replicates);
        Ok(EXIT_INTERNAL)
    }
}

fn inspect(path: &Path) -> anyhow::Result<()> {
    let bytes = std::fs::read(path).map_err(Error::from)?;
    let c = Container::decode(&bytes)?;
    let mut out = serde_json::json!({
        "magic": String::from_utf8_lossy(&c.magic),
        "version": c.version,
        "header": c.header,
        "arrays": c.arrays.iter().map(Vec::len).collect::<Vec<_>>(),
    });
    let detail = match c.magic {
        MAGIC_FLOW => {
            let f = FlowModel::from_container(&c)?;
            serde_json::json!({"kind": "flow", "dim": f.dim(), "clusters": f.clusters(), "hidden": f.hidden_sizes()})
        }
        MAGIC_NULLS => {
            let s = NullSamples::from_container(&c)?;
            serde_json::json!({"kind": "nulls", "feature": s.feature, "rows": s.n_rows(), "k": s.k()})
        }
        MAGIC_LASSO | MAGIC_FOREST | MAGIC_MLP => {
            let m = Model::from_container(&c)?;
            serde_json::json!({"kind": m.kind(), "features": flowselect::models::Predictor::n_features(&m)})
        }
        other => return Err(Error::Format { kind: "container", message: format!("unknown magic {:?}", String::from_utf8_lossy(&other)) }.into()),
    };
    out["model"] = detail;
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let threads = match &cli.command {
        Command::FitFlow(a) | Command::SampleNulls(a) | Command::Test(a) | Command::Experiment(a) => a.threads,
        Command::InspectCheckpoint { .. } => None,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()).into());
        }
        rayon_pool(t)?;
    }
    match &cli.command {
        Command::FitFlow(a) => fit_flow(a).map(|_| 0),
        Command::SampleNulls(a) => sample_nulls(a).map(|_| 0),
        Command::Test(a) => test(a).map(|_| 0),
        Command::Experiment(a) => experiment(a),
        Command::InspectCheckpoint { path } => inspect(path).map(|_| 0),
    }
}

fn rayon_pool(threads: usize) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
