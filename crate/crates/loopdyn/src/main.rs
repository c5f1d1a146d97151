use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use loopdyn::backends::{
    EmbeddingBackend, HttpEmbeddingBackend, HttpLlmBackend, LlmBackend, LookupEmbeddingBackend,
    StubEmbeddingBackend, TranscriptBackend, ENV_EMBED_URL, ENV_LLM_URL,
};
use loopdyn::batch::{analyze_grid, expand_grid};
use loopdyn::calibration::{
    fit_isotonic, hcs_threshold, parse_dataset, normalize_scores, CalibrationMap,
    CalibrationPair, DatasetRow, Similarity,
};
use loopdyn::clustering::ClusterParams;
use loopdyn::dynamics::comparative_summary;
use loopdyn::geometry::{normalize, raw_cosine};
use loopdyn::report::{
    drift_csv, emit_drift_svg, emit_timeline_svg, timeline_layout, AnalysisReport,
    TimelinePlotConfig,
};
use loopdyn::runner::{preset, run_loop, Clock, LoopConfig};
use loopdyn::synthgen::{generate, SynthRegime, SynthSpec};
use loopdyn::trajectory::{
    read_records, write_records, Trajectory, TrajectoryRecord, TrajectoryStore,
};

#[derive(Parser)]
#[command(
    name = "loopdyn",
    about = "Run iterative LLM loops and analyze their embedding-space dynamics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an isotonic calibration map from a TSV dataset and derive the
    /// high-confidence similarity threshold
    Calibrate(CalibrateArgs),
    /// Execute a loop against an LLM backend and persist the trajectory
    Run(RunArgs),
    /// Detect clusters, classify the regime and emit reports over a
    /// parameter grid
    Analyze(AnalyzeArgs),
    /// Re-render figures from an existing analysis report
    Plot(PlotArgs),
    /// Generate a synthetic trajectory with a known ground-truth regime
    Synth(SynthArgs),
}

#[derive(Args)]
struct EmbedderArgs {
    /// Embedding backend kind
    #[arg(long, value_enum)]
    embedder: Option<EmbedderKind>,
    /// Base URL for the HTTP embedding backend (or env LOOPDYN_EMBED_URL)
    #[arg(long)]
    embed_url: Option<String>,
    /// Model name for the HTTP embedding backend
    #[arg(long, default_value = "nomic-embed-text")]
    embed_model: String,
    /// JSONL lookup file of precomputed embeddings keyed by exact text
    #[arg(long)]
    embed_file: Option<PathBuf>,
    /// Dimension of the deterministic stub embedder
    #[arg(long, default_value_t = 256)]
    embed_dim: usize,
    /// Seed of the deterministic stub embedder
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmbedderKind {
    Stub,
    Http,
    Lookup,
}

impl EmbedderArgs {
    fn build(&self) -> Result<Option<Box<dyn EmbeddingBackend>>> {
        let backend: Box<dyn EmbeddingBackend> = match self.embedder {
            None => return Ok(None),
            Some(EmbedderKind::Stub) => {
                Box::new(StubEmbeddingBackend::new(self.embed_dim, self.embed_seed))
            }
            Some(EmbedderKind::Http) => {
                let url = self
                    .embed_url
                    .clone()
                    .or_else(|| std::env::var(ENV_EMBED_URL).ok())
                    .context("http embedder needs --embed-url or LOOPDYN_EMBED_URL")?;
                Box::new(HttpEmbeddingBackend::new(url, self.embed_model.clone()))
            }
            Some(EmbedderKind::Lookup) => {
                let path = self
                    .embed_file
                    .as_ref()
                    .context("lookup embedder needs --embed-file")?;
                Box::new(LookupEmbeddingBackend::from_file(path)?)
            }
        };
        Ok(Some(backend))
    }
}

#[derive(Args)]
struct SimilarityArgs {
    /// Use raw cosine directly instead of a calibration map
    #[arg(long, conflicts_with = "calibration")]
    identity: bool,
    /// Path to a fitted calibration map (JSON)
    #[arg(long)]
    calibration: Option<PathBuf>,
}

impl SimilarityArgs {
    fn build(&self) -> Result<Similarity> {
        match (&self.calibration, self.identity) {
            (Some(path), _) => Ok(Similarity::Calibrated(
                CalibrationMap::load(path)
                    .with_context(|| format!("loading calibration map {}", path.display()))?,
            )),
            (None, true) => Ok(Similarity::Identity),
            (None, false) => bail!("choose --identity or --calibration <path>"),
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// TSV dataset: (raw_cosine, human_score) or (sentence_a, sentence_b,
    /// human_score), header row required
    #[arg(long)]
    dataset: PathBuf,
    /// Minimum normalized human score for a pair to count as highly similar
    #[arg(long, default_value_t = 0.8)]
    cut: f64,
    /// Quantile of calibrated similarity among highly similar pairs
    #[arg(long, default_value_t = 0.05)]
    quantile: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in loop preset (contractive | exploratory)
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Loop config file (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the iteration horizon T
    #[arg(long)]
    horizon: Option<usize>,
    /// Replay generations from a transcript file instead of calling an LLM
    #[arg(long, conflicts_with = "llm_url")]
    transcript: Option<PathBuf>,
    /// Base URL of the generation backend (or env LOOPDYN_LLM_URL)
    #[arg(long)]
    llm_url: Option<String>,
    /// Output trajectory path; defaults to <loop-id>-<config-hash>.jsonl
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record this fixed timestamp instead of wall-clock time
    #[arg(long)]
    fixed_timestamp: Option<String>,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    trajectory: PathBuf,
    /// Consecutive-similarity thresholds (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "0.8")]
    lambda: Vec<f64>,
    /// Dispersion thresholds (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3")]
    rho: Vec<f64>,
    /// Patience values (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "2")]
    kappa: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    min_members: usize,
    /// Embed trajectory texts first (requires --embedder)
    #[arg(long)]
    embed: bool,
    /// Vertical scaling of the timeline figure
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    similarity: SimilarityArgs,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    trajectory: PathBuf,
    /// Analysis report JSON produced by `analyze`
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Output timeline SVG
    #[arg(long)]
    out: PathBuf,
    /// Optional drift-series SVG
    #[arg(long)]
    drift_out: Option<PathBuf>,
    #[command(flatten)]
    similarity: SimilarityArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    regime: SynthRegimeKind,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Contractive pull strength in (0, 1]
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    /// Gaussian jitter applied before renormalization
    #[arg(long, default_value_t = 0.02)]
    sigma: f64,
    /// Number of orthogonal oscillation centers
    #[arg(long, default_value_t = 2)]
    centers: usize,
    /// Iterations spent at each center before switching
    #[arg(long, default_value_t = 10)]
    block_len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthRegimeKind {
    Contractive,
    Oscillatory,
    Exploratory,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Run(args) => cmd_run(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Plot(args) => cmd_plot(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let content = fs::read_to_string(&args.dataset)
        .with_context(|| format!("reading dataset {}", args.dataset.display()))?;
    let rows = parse_dataset(&content)?;

    let scores: Vec<f64> = rows
        .iter()
        .map(|r| match r {
            DatasetRow::Raw { score, .. } => *score,
            DatasetRow::Sentences { score, .. } => *score,
        })
        .collect();
    let targets = normalize_scores(&scores);

    let embedder = args.embedder.build()?;
    let mut pairs = Vec::with_capacity(rows.len());
    for (row, target) in rows.iter().zip(targets) {
        let raw = match row {
            DatasetRow::Raw { raw, .. } => *raw,
            DatasetRow::Sentences { a, b, .. } => {
                let backend = embedder
                    .as_deref()
                    .context("sentence-pair dataset needs --embedder to compute cosines")?;
                let ea = normalize(&backend.embed(a)?)?;
                let eb = normalize(&backend.embed(b)?)?;
                raw_cosine(&ea, &eb)?
            }
        };
        pairs.push(CalibrationPair::new(raw, target)?);
    }

    let mut map = fit_isotonic(&pairs)?;
    let tau = hcs_threshold(&pairs, &map, args.cut, args.quantile)?;
    map.tau_hcs = Some(tau);
    map.save(&args.out)?;
    println!(
        "calibrated {} pairs -> {} knots, tau_hcs = {tau} (cut {}, quantile {})",
        pairs.len(),
        map.knots.len(),
        args.cut,
        args.quantile
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = match (&args.preset, &args.config) {
        (Some(name), None) => {
            preset(name).with_context(|| format!("unknown preset {name:?}"))?
        }
        (None, Some(path)) => LoopConfig::from_file(path)?,
        _ => bail!("choose exactly one of --preset or --config"),
    };
    if let Some(horizon) = args.horizon {
        config.horizon = horizon;
    }
    config.validate()?;

    let mut llm: Box<dyn LlmBackend> = match (&args.transcript, &args.llm_url) {
        (Some(path), None) => Box::new(TranscriptBackend::from_file(path)?),
        (None, url) => {
            let url = url
                .clone()
                .or_else(|| std::env::var(ENV_LLM_URL).ok())
                .context("need --transcript, --llm-url or LOOPDYN_LLM_URL")?;
            Box::new(HttpLlmBackend::new(url))
        }
        _ => unreachable!("clap forbids both"),
    };
    let embedder = args.embedder.build()?;

    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}-{}.jsonl", config.id, config.short_hash())));
    let clock = match args.fixed_timestamp {
        Some(ts) => Clock::Fixed(ts),
        None => Clock::System,
    };
    let mut store = TrajectoryStore::create(&out)?;
    let records = run_loop(&config, llm.as_mut(), embedder.as_deref(), &mut store, &clock)
        .with_context(|| format!("loop aborted; partial trajectory kept at {}", out.display()))?;
    println!(
        "ran loop {:?} for {} iterations ({} records) -> {}",
        config.id,
        config.horizon,
        records.len(),
        out.display()
    );
    Ok(())
}

fn grid_tag(p: &ClusterParams) -> String {
    format!("l{}_r{}_k{}", p.lambda, p.rho, p.kappa)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let sim = args.similarity.build()?;
    let mut records = read_records(&args.trajectory)?;
    if args.embed {
        let embedder = args
            .embedder
            .build()?
            .context("--embed requires --embedder")?;
        loopdyn::runner::embed_trajectory(&mut records, embedder.as_ref())?;
        write_records(&args.trajectory, &records)?;
    }
    let traj = Trajectory::from_records(&records)?;

    for &lambda in &args.lambda {
        for &rho in &args.rho {
            for &kappa in &args.kappa {
                // validate each grid point before any output is written
                ClusterParams::new(lambda, rho, kappa, args.min_members)?;
            }
        }
    }
    let grid = expand_grid(&args.lambda, &args.rho, &args.kappa, args.min_members);
    let reports = analyze_grid(&traj, &grid, &sim)?;

    fs::create_dir_all(&args.out_dir)?;
    let plot_cfg = TimelinePlotConfig { alpha: args.alpha, ..Default::default() };
    for (params, regime) in grid.iter().zip(&reports) {
        let tag = grid_tag(params);
        let report = AnalysisReport { regime: regime.clone() };
        fs::write(args.out_dir.join(format!("report_{tag}.json")), report.to_json())?;
        let layout = timeline_layout(&regime.clusters, &traj, &sim, params.rho, &plot_cfg)?;
        fs::write(
            args.out_dir.join(format!("timeline_{tag}.svg")),
            emit_timeline_svg(&layout, &plot_cfg),
        )?;
        fs::write(args.out_dir.join(format!("drift_{tag}.csv")), drift_csv(&regime.drift))?;
        fs::write(
            args.out_dir.join(format!("drift_{tag}.svg")),
            emit_drift_svg(&regime.drift, plot_cfg.width, plot_cfg.height),
        )?;
    }

    let rows = comparative_summary(&reports);
    let mut summary = String::from("config,mean_local,final_global,clusters,regime\n");
    println!("config            mean_local  final_global  clusters  regime");
    for (params, row) in grid.iter().zip(&rows) {
        let tag = grid_tag(params);
        summary.push_str(&format!(
            "{tag},{},{},{},{}\n",
            row.mean_local, row.final_global, row.cluster_count, row.regime
        ));
        println!(
            "{tag:<16}  {:>10.4}  {:>12.4}  {:>8}  {}",
            row.mean_local, row.final_global, row.cluster_count, row.regime
        );
    }
    fs::write(args.out_dir.join("summary.csv"), summary)?;
    println!("wrote {} configurations to {}", grid.len(), args.out_dir.display());
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let sim = args.similarity.build()?;
    let records = read_records(&args.trajectory)?;
    let traj = Trajectory::from_records(&records)?;
    let doc = fs::read_to_string(&args.report)
        .with_context(|| format!("reading report {}", args.report.display()))?;
    let report = AnalysisReport::from_json(&doc)?;

    let cfg = TimelinePlotConfig { alpha: args.alpha, ..Default::default() };
    let layout =
        timeline_layout(&report.regime.clusters, &traj, &sim, report.regime.params.rho, &cfg)?;
    fs::write(&args.out, emit_timeline_svg(&layout, &cfg))?;
    println!("wrote {}", args.out.display());
    if let Some(path) = args.drift_out {
        fs::write(&path, emit_drift_svg(&report.regime.drift, cfg.width, cfg.height))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let regime = match args.regime {
        SynthRegimeKind::Contractive => SynthRegime::Contractive {
            beta: args.beta,
            sigma: args.sigma,
        },
        SynthRegimeKind::Oscillatory => SynthRegime::Oscillatory {
            centers: args.centers,
            block_len: args.block_len,
            sigma: args.sigma,
        },
        SynthRegimeKind::Exploratory => SynthRegime::Exploratory,
    };
    let spec = SynthSpec {
        regime,
        dim: args.dim,
        horizon: args.horizon,
        seed: args.seed,
    };
    let traj = generate(&spec)?;
    let label = spec.regime.label().to_string();
    let records: Vec<TrajectoryRecord> = traj
        .points()
        .iter()
        .map(|p| TrajectoryRecord {
            t: p.t,
            text: p.text.clone(),
            phase_texts: vec![],
            prompt_id: format!("synthetic:{label}"),
            model: "synthgen".into(),
            temperature: 0.0,
            seed: Some(args.seed),
            timestamp_utc: "1970-01-01T00:00:00Z".into(),
            embedding: Some(p.embedding.values().to_vec()),
            aborted_reason: None,
        })
        .collect();
    write_records(&args.out, &records)?;
    println!(
        "generated {label} trajectory: dim {}, horizon {}, seed {} -> {}",
        args.dim,
        args.horizon,
        args.seed,
        args.out.display()
    );
    Ok(())
}
