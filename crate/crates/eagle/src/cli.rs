//! Command-line interface.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eagle_core::{AreaMode, Generation, InfluenceVariant, ObjectiveMode};

use crate::bench::{synth_bench, SynthBenchOptions};
use crate::bundle::SYNTH_BENCH_FILE;
use crate::canonical;
use crate::config::{parse_fill, RunConfig, ORACLE_URL_ENV};
use crate::error::{Error, Result};
use crate::formats::{Manifest, ManifestEntry};
use crate::pipeline::{
    run_attribute, run_hallucinate, run_metrics, run_partition, OracleSource, TargetRequest,
};
use crate::serve::{serve, ServeOptions, ServeState};
use crate::targets::TargetSpec;

#[derive(Debug, Parser)]
#[command(
    name = "eagle",
    version,
    about = "Black-box region attribution for multimodal language models"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base URL of a model shim.
    #[arg(long, global = true, env = ORACLE_URL_ENV)]
    pub oracle_url: Option<String>,
    /// Target number of superpixel regions.
    #[arg(long, global = true)]
    pub regions: Option<usize>,
    /// Color painted over removed regions, `R,G,B` or `#rrggbb`.
    #[arg(long, global = true)]
    pub fill: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split an image into superpixels and write the partition with a boundary preview.
    Partition { image: PathBuf },
    /// Rank image regions by their effect on selected generated tokens.
    Attribute(AttributeArgs),
    /// Faithfulness and pointing-game metrics over stored bundles.
    Metrics(MetricsArgs),
    /// Explain and correct hallucinated yes/no answers from a JSON-lines case file.
    Hallucinate(HallucinateArgs),
    /// Planted-object benchmark on generated images with a coverage oracle.
    SynthBench(SynthBenchArgs),
    /// Serve the explorer API and static UI assets.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Full,
    InsightOnly,
    NecessityOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InfluenceArg {
    MinAnchored,
    MaxAnchored,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AmcrModeArg {
    Area,
    RegionCount,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    pub image: PathBuf,
    /// Prompt; defaults to the configured caption prompt.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Comma-separated token positions to explain.
    #[arg(long, value_delimiter = ',', group = "selection")]
    pub positions: Option<Vec<usize>>,
    /// Comma-separated words; every token overlapping them is explained.
    #[arg(long, value_delimiter = ',', group = "selection")]
    pub words: Option<Vec<String>>,
    /// Explain every generated token (the default).
    #[arg(long, group = "selection")]
    pub all_tokens: bool,
    /// Explain tokens whose probability drops by more than the sensitivity threshold without the image.
    #[arg(long, group = "selection")]
    pub sensitive: bool,
    /// Use this generation instead of decoding one; needs --generated-text.
    #[arg(long, value_delimiter = ',', requires = "generated_text")]
    pub generated_ids: Option<Vec<u32>>,
    #[arg(long, requires = "generated_ids")]
    pub generated_text: Option<String>,
    /// Number of regions to rank.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long, value_enum)]
    pub influence: Option<InfluenceArg>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// JSON manifest `{"samples": [{"bundle": ..., "ground_truth": ...}]}`.
    #[arg(long, conflicts_with_all = ["bundle", "ground_truth"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "ground_truth")]
    pub bundle: Option<PathBuf>,
    #[arg(long, requires = "bundle")]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HallucinateArgs {
    pub cases: PathBuf,
    #[arg(long, value_enum)]
    pub amcr_mode: Option<AmcrModeArg>,
}

#[derive(Debug, Args)]
pub struct SynthBenchArgs {
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    /// Side length of the generated square images.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory of the built explorer UI.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Attribution jobs running at once.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
}

/// Config file (or defaults) with the global flags applied.
pub fn load_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(url) = &global.oracle_url {
        config.oracle.url = Some(url.clone());
        config.oracle.synthetic = None;
    }
    if let Some(n) = global.regions {
        config.region_count = n;
    }
    if let Some(fill) = &global.fill {
        config.fill = parse_fill(fill)?;
    }
    if let Some(out) = &global.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn selection(args: &AttributeArgs) -> TargetSpec {
    if let Some(p) = &args.positions {
        TargetSpec::Positions(p.clone())
    } else if let Some(w) = &args.words {
        TargetSpec::Words(w.clone())
    } else if args.sensitive {
        TargetSpec::Sensitive
    } else {
        TargetSpec::All
    }
}

fn attribute(mut config: RunConfig, args: &AttributeArgs) -> Result<PathBuf> {
    if args.budget.is_some() {
        config.budget = args.budget;
    }
    if let Some(o) = args.objective {
        config.objective = match o {
            ObjectiveArg::Full => ObjectiveMode::Full,
            ObjectiveArg::InsightOnly => ObjectiveMode::InsightOnly,
            ObjectiveArg::NecessityOnly => ObjectiveMode::NecessityOnly,
        };
    }
    if let Some(v) = args.influence {
        config.influence_variant = match v {
            InfluenceArg::MinAnchored => InfluenceVariant::MinAnchored,
            InfluenceArg::MaxAnchored => InfluenceVariant::MaxAnchored,
        };
    }
    config.validate()?;
    let generation = match (&args.generated_ids, &args.generated_text) {
        (Some(ids), Some(text)) => Some(Generation {
            text: text.clone(),
            token_ids: ids.clone(),
        }),
        _ => None,
    };
    let request = TargetRequest {
        prompt: args.prompt.clone(),
        generation,
        selection: selection(args),
    };
    run_attribute(
        &config,
        &args.image,
        &OracleSource::from_config(&config.oracle)?,
        &request,
    )
}

fn metrics(config: &RunConfig, args: &MetricsArgs) -> Result<PathBuf> {
    match (&args.manifest, &args.bundle, &args.ground_truth) {
        (Some(path), _, _) => {
            let manifest: Manifest = canonical::read_file(path)?;
            run_metrics(config, &manifest, path.parent().unwrap_or(Path::new(".")))
        }
        (None, Some(bundle), Some(truth)) => {
            let manifest = Manifest {
                samples: vec![ManifestEntry {
                    bundle: bundle.clone(),
                    ground_truth: truth.clone(),
                }],
            };
            run_metrics(config, &manifest, Path::new("."))
        }
        _ => Err(Error::Usage(
            "metrics needs --manifest or --bundle with --ground-truth".into(),
        )),
    }
}

fn hallucinate(mut config: RunConfig, args: &HallucinateArgs) -> Result<PathBuf> {
    if let Some(mode) = args.amcr_mode {
        config.metrics.amcr_mode = match mode {
            AmcrModeArg::Area => AreaMode::Area,
            AmcrModeArg::RegionCount => AreaMode::RegionCount,
        };
    }
    let source = OracleSource::from_config(&config.oracle).ok();
    run_hallucinate(&config, &args.cases, source.as_ref())
}

fn bench(config: &RunConfig, args: &SynthBenchArgs) -> Result<PathBuf> {
    let options = SynthBenchOptions {
        images: args.images,
        width: args.size,
        height: args.size,
        seed: args.seed,
    };
    let report = synth_bench(config, &options)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let path = config.out_dir.join(SYNTH_BENCH_FILE);
    canonical::write_file(&path, &report)?;
    eprintln!(
        "pointing hit rate {:.3}, top region = planted region {:.3}, insertion AUC {:.4}, deletion AUC {:.4}",
        report.pointing_hit_rate, report.top_region_rate, report.mean_insertion_auc, report.mean_deletion_auc
    );
    Ok(path)
}

fn serve_forever(config: RunConfig, args: &ServeArgs) -> Result<PathBuf> {
    let source = OracleSource::from_config(&config.oracle)?;
    let addr = format!("{}:{}", args.host, args.port);
    let addr: SocketAddr = addr
        .parse()
        .map_err(|e| Error::Usage(format!("bad listen address {addr}: {e}")))?;
    let options = ServeOptions {
        static_dir: args.static_dir.clone(),
        job_workers: args.workers,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(addr.to_string(), e))?;
        eprintln!(
            "serving on http://{}",
            listener
                .local_addr()
                .map_err(|e| Error::io(addr.to_string(), e))?
        );
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, ServeState::new(config, source, options), shutdown).await
    })?;
    Ok(PathBuf::new())
}

/// Runs one parsed command; returns the main output file.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let config = load_config(&cli.global)?;
    match &cli.command {
        Command::Partition { image } => run_partition(&config, image).map(|o| o.partition),
        Command::Attribute(args) => attribute(config, args),
        Command::Metrics(args) => metrics(&config, args),
        Command::Hallucinate(args) => hallucinate(config, args),
        Command::SynthBench(args) => bench(&config, args),
        Command::Serve(args) => serve_forever(config, args),
    }
}

/// Entry point of the binary: prints the output path, or the error on stderr.
/// Usage errors exit with 2, everything else with 1.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(path) => {
            if !path.as_os_str().is_empty() {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Usage(_)) { 2 } else { 1 })
        }
    }
}
