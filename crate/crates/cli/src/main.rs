use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dagprompt::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, EncoderParams, GloraMode};
use dagprompt::graphstore::{
    fraction_split, fraction_split_set, histogram, homophily_ratio, kshot_split, kshot_split_set, load_dataset,
    local_hop_homophily, save_dataset, synth_rewire, Dataset, SplitSpec,
};
use dagprompt::harness::{emit_report, union_graph, ExperimentConfig, Harness, Mode, ReportFormat, RunReport};
use dagprompt::numcore::AdamConfig;
use dagprompt::pretrain::{run_pretrain, PretrainConfig};
use dagprompt::prompt::{run_prompt_tune, PromptConfig};
use dagprompt::{Error, Result};
use log::info;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gpt", version, about = "Graph pre-training and hop-specific prompting")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the global homophily ratio and per-hop local histograms as JSON.
    Homophily {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        hop: usize,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Rewire a node dataset to a target homophily ratio, keeping degrees.
    Synth {
        dir: PathBuf,
        #[arg(long)]
        target_h: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train an encoder on link prediction and write a checkpoint.
    Pretrain(PretrainArgs),
    /// Prompt-tune a checkpoint on a few-shot split.
    Tune(TuneArgs),
    /// Run one configured experiment.
    Experiment(ReportArgs),
    /// Run the full model and its three ablations.
    Ablate(ReportArgs),
    /// Prompt a target dataset with an untrained encoder and one pre-trained on a source dataset.
    Transfer {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        dst: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Rewire a base graph across target ratios and compare modes at each.
    SweepH {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
        targets: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "dagprompt,prototype")]
        modes: Vec<Mode>,
        #[arg(long, default_value_t = 0)]
        rewire_seed: u64,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Args)]
struct PretrainArgs {
    dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    negatives: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, conflicts_with = "train_fraction")]
    shots: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 8)]
    rank: usize,
    #[arg(long, default_value = "full")]
    glora: GloraMode,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON file with experiment settings; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory, overriding the config's.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output file; `.csv` selects CSV, anything else JSON. Prints JSON to
    /// stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl ReportArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json(&read(path)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn emit(&self, reports: &[RunReport]) -> Result<()> {
        match &self.report {
            Some(path) => {
                let format = if path.extension().is_some_and(|e| e == "csv") { ReportFormat::Csv } else { ReportFormat::Json };
                emit_report(reports, path, format)?;
                info!("wrote {}", path.display());
            }
            None => emit(&dagprompt::harness::report_json(reports)?)?,
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(Error::Io { path: PathBuf::from("<stdout>"), source: e })
        }
        _ => Ok(()),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))
}

fn dataset_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn node_graph(data: Dataset, path: &Path) -> Result<dagprompt::graphstore::Graph> {
    match data {
        Dataset::Node(g) => Ok(g),
        Dataset::Graphs(_) => Err(Error::Config(format!("{} holds a graph-level task; a node dataset is required", path.display()))),
    }
}

#[derive(Serialize)]
struct HopHistogram {
    hop: usize,
    defined_nodes: usize,
    histogram: Vec<usize>,
}

#[derive(Serialize)]
struct HomophilySummary {
    dataset: String,
    global: f64,
    bins: usize,
    hops: Vec<HopHistogram>,
}

fn homophily(dir: &Path, hop: usize, bins: usize) -> Result<()> {
    if hop == 0 || bins == 0 {
        return Err(Error::Config("hop and bins must be at least 1".into()));
    }
    let g = node_graph(load_dataset(dir)?, dir)?;
    let hops = (1..=hop)
        .map(|k| {
            let local = local_hop_homophily(&g, k)?;
            Ok(HopHistogram { hop: k, defined_nodes: local.iter().flatten().count(), histogram: histogram(&local, bins) })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = HomophilySummary { dataset: dataset_name(dir), global: homophily_ratio(&g)?, bins, hops };
    emit(&to_json(&summary)?)?;
    Ok(())
}

fn synth(dir: &Path, target: f64, seed: u64, out: &Path) -> Result<()> {
    let g = node_graph(load_dataset(dir)?, dir)?;
    let rewired = synth_rewire(&g, target, seed)?;
    let achieved = homophily_ratio(&rewired)?;
    let name = dataset_name(out);
    let written = save_dataset(out, &name, &Dataset::Node(rewired))?;
    emit(&to_json(&serde_json::json!({ "target_h": target, "achieved_h": achieved, "out": written }))?)?;
    Ok(())
}

fn losses_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".losses.csv");
    PathBuf::from(s)
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    let data = load_dataset(&a.dir)?;
    let g = match &data {
        Dataset::Node(g) => g.clone(),
        Dataset::Graphs(s) => union_graph(s)?,
    };
    let cfg = EncoderConfig::new(g.num_features(), a.hidden, a.layers);
    let pcfg = PretrainConfig {
        tau: a.tau,
        negatives: a.negatives,
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig::with_lr(a.lr),
        seed: a.seed,
    };
    let out = run_pretrain(&g, &cfg, &pcfg)?;
    save_checkpoint(&a.out, &cfg, &out.params)?;
    let curve = losses_path(&a.out);
    write(&curve, &out.losses.to_csv())?;
    info!("pre-trained in {:.1}s, loss {:?} -> {:?}", out.seconds, out.losses.first(), out.losses.last());
    emit(&to_json(&serde_json::json!({
        "checkpoint": a.out,
        "losses": curve,
        "first_loss": out.losses.first(),
        "last_loss": out.losses.last(),
        "seconds": out.seconds,
    }))?)?;
    Ok(())
}

#[derive(Serialize)]
struct TuneReport {
    dataset: String,
    checkpoint: PathBuf,
    config: PromptConfig,
    shots: Option<usize>,
    train_fraction: Option<f64>,
    accuracy: f64,
    encoder_trainable: usize,
    prompt_trainable: usize,
    gamma: Vec<f64>,
    losses: Vec<f64>,
    test_ids: Vec<usize>,
    predictions: Vec<usize>,
    seconds: f64,
}

fn split_for(data: &Dataset, shots: Option<usize>, fraction: Option<f64>, seed: u64) -> Result<SplitSpec> {
    Ok(match (data, fraction) {
        (Dataset::Node(g), Some(f)) => fraction_split(g, f, seed)?,
        (Dataset::Graphs(s), Some(f)) => fraction_split_set(s, f, seed)?,
        (Dataset::Node(g), None) => kshot_split(g, shots.unwrap_or(5), seed)?,
        (Dataset::Graphs(s), None) => kshot_split_set(s, shots.unwrap_or(5), seed)?,
    })
}

fn tune(a: &TuneArgs) -> Result<()> {
    let (cfg, params): (EncoderConfig, EncoderParams) = load_checkpoint(&a.model)?;
    let data = load_dataset(&a.data)?;
    let split = split_for(&data, a.shots, a.train_fraction, a.seed)?;
    let pcfg = PromptConfig {
        glora: a.glora,
        rank: a.rank,
        alpha: a.alpha,
        tau: a.tau,
        epochs: a.epochs,
        adam: AdamConfig { weight_decay: a.weight_decay, ..AdamConfig::with_lr(a.lr) },
        seed: a.seed,
        ..PromptConfig::default()
    };
    let out = run_prompt_tune(&params, &cfg, &data, &split, &pcfg)?;
    let report = TuneReport {
        dataset: dataset_name(&a.data),
        checkpoint: a.model.clone(),
        config: pcfg,
        shots: if a.train_fraction.is_some() { None } else { Some(a.shots.unwrap_or(5)) },
        train_fraction: a.train_fraction,
        accuracy: out.accuracy,
        encoder_trainable: out.encoder_trainable,
        prompt_trainable: out.prompt_trainable,
        gamma: out.gamma,
        losses: out.losses,
        test_ids: out.test_ids,
        predictions: out.predictions,
        seconds: out.seconds,
    };
    let body = to_json(&report)?;
    match &a.report {
        Some(path) => write(path, &body)?,
        None => emit(&body)?,
    }
    info!("accuracy {:.4}", report.accuracy);
    Ok(())
}

fn experiment(a: &ReportArgs) -> Result<()> {
    let cfg = a.config()?;
    let data = load_dataset(&cfg.dataset)?;
    let report = Harness::new().run_on(&data, &cfg, &dataset_name(&cfg.dataset))?;
    a.emit(&[report])
}

fn ablate(a: &ReportArgs) -> Result<()> {
    let cfg = a.config()?;
    let data = load_dataset(&cfg.dataset)?;
    let reports = Harness::new().run_ablation(&data, &cfg, &dataset_name(&cfg.dataset))?;
    a.emit(&reports)
}

fn transfer(src: &Path, dst: &Path, a: &ReportArgs) -> Result<()> {
    let cfg = a.config()?;
    let (s, d) = (load_dataset(src)?, load_dataset(dst)?);
    let (scratch, cross) = Harness::new().run_transfer(&s, &d, &cfg, (&dataset_name(src), &dataset_name(dst)))?;
    a.emit(&[scratch, cross])
}

fn sweep(data: Option<&Path>, targets: &[f64], modes: &[Mode], rewire_seed: u64, a: &ReportArgs) -> Result<()> {
    let cfg = a.config()?;
    let path = data.unwrap_or(&cfg.dataset).to_path_buf();
    let base = node_graph(load_dataset(&path)?, &path)?;
    let result = Harness::new().run_heterophily_sweep(&base, targets, &cfg, modes, rewire_seed)?;
    for s in &result.skipped {
        log::warn!("target {} skipped: {}", s.target_h, s.reason);
    }
    let reports: Vec<RunReport> = result.points.iter().flat_map(|p| p.reports.iter().cloned()).collect();
    if reports.is_empty() {
        return Err(Error::Infeasible("no target ratio was reachable".into()));
    }
    a.emit(&reports)?;
    let series: Vec<_> = modes.iter().map(|&m| serde_json::json!({ "mode": m.to_string(), "points": result.series(m) })).collect();
    eprintln!("{}", to_json(&serde_json::json!({ "series": series, "skipped": result.skipped }))?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Homophily { dir, hop, bins } => homophily(&dir, hop, bins),
        Command::Synth { dir, target_h, seed, out } => synth(&dir, target_h, seed, &out),
        Command::Pretrain(a) => pretrain(&a),
        Command::Tune(a) => tune(&a),
        Command::Experiment(a) => experiment(&a),
        Command::Ablate(a) => ablate(&a),
        Command::Transfer { src, dst, report } => transfer(&src, &dst, &report),
        Command::SweepH { data, targets, modes, rewire_seed, report } => {
            sweep(data.as_deref(), &targets, &modes, rewire_seed, &report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
