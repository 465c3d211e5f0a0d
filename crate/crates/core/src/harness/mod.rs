//! Experiment orchestration: seeded k-shot runs over a hyperparameter grid,
//! baselines, ablations, transfer, heterophily sweeps and reports.

mod baselines;
mod report;

pub use baselines::{run_supervised, SupervisedConfig, SupervisedOutcome};
pub use report::{
    emit_report, mean_std, report_csv, report_json, ReportFile, ReportFormat, RunReport, Timing, CSV_HEADER,
    SCHEMA_VERSION,
};

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{trainable_count_formula, AdapterTarget, EncoderConfig, EncoderParams, GloraMode, Stage};
use crate::graphstore::{
    fraction_split, fraction_split_set, homophily_ratio, kshot_split, kshot_split_set, load_dataset, synth_rewire,
    Dataset, Graph, GraphError, GraphSet, SplitSpec, TaskKind,
};
use crate::numcore::{AdamConfig, Tensor};
use crate::pretrain::{run_pretrain, PretrainConfig, PretrainOutcome};
use crate::prompt::{run_prompt_tune, GammaMode, LayerScope, PromptConfig};
use crate::{Error, Result};

pub const STANDARD_LR: [f64; 5] = [1e-5, 5e-5, 1e-4, 5e-4, 1e-3];
pub const STANDARD_WEIGHT_DECAY: [f64; 3] = [0.0, 2.5e-6, 5e-6];
pub const STANDARD_HIDDEN: [usize; 2] = [128, 256];
pub const STANDARD_RANK: [usize; 3] = [8, 16, 32];
pub const STANDARD_ALPHA: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const MAX_EPOCHS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoGlora,
    LastLayerOnly,
    FixedGamma,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dagprompt,
    ScratchGcn,
    FinetuneLp,
    /// Class-mean cosine classifier on the frozen pre-trained encoder.
    Prototype,
    Ablation(Ablation),
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Dagprompt => "dagprompt",
            Mode::ScratchGcn => "scratch_gcn",
            Mode::FinetuneLp => "finetune_lp",
            Mode::Prototype => "prototype",
            Mode::Ablation(Ablation::NoGlora) => "no_glora",
            Mode::Ablation(Ablation::LastLayerOnly) => "last_layer_only",
            Mode::Ablation(Ablation::FixedGamma) => "fixed_gamma",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dagprompt" => Mode::Dagprompt,
            "scratch_gcn" => Mode::ScratchGcn,
            "finetune_lp" => Mode::FinetuneLp,
            "prototype" => Mode::Prototype,
            "no_glora" => Mode::Ablation(Ablation::NoGlora),
            "last_layer_only" => Mode::Ablation(Ablation::LastLayerOnly),
            "fixed_gamma" => Mode::Ablation(Ablation::FixedGamma),
            other => return Err(Error::Config(format!("unknown mode {other:?}"))),
        })
    }
}

impl Mode {
    fn uses_pretraining(self) -> bool {
        self != Mode::ScratchGcn
    }

    fn is_supervised(self) -> bool {
        matches!(self, Mode::ScratchGcn | Mode::FinetuneLp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub hidden: Vec<usize>,
    pub rank: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl Grid {
    pub fn standard() -> Self {
        Self {
            lr: STANDARD_LR.to_vec(),
            weight_decay: STANDARD_WEIGHT_DECAY.to_vec(),
            hidden: STANDARD_HIDDEN.to_vec(),
            rank: STANDARD_RANK.to_vec(),
            alpha: STANDARD_ALPHA.to_vec(),
        }
    }

    pub fn single(point: GridPoint) -> Self {
        Self {
            lr: vec![point.lr],
            weight_decay: vec![point.weight_decay],
            hidden: vec![point.hidden],
            rank: vec![point.rank],
            alpha: vec![point.alpha],
        }
    }

    /// Grid points relevant to `mode`; dimensions a mode ignores are pinned
    /// to their first value.
    pub fn points(&self, mode: Mode) -> Vec<GridPoint> {
        let pin = |v: &[f64], keep: bool| if keep { v.to_vec() } else { v[..1].to_vec() };
        let trains = mode != Mode::Prototype;
        let adapters = !mode.is_supervised() && !matches!(mode, Mode::Prototype | Mode::Ablation(Ablation::NoGlora));
        let gamma = !mode.is_supervised()
            && !matches!(mode, Mode::Ablation(Ablation::LastLayerOnly | Ablation::FixedGamma));
        let ranks = if adapters { self.rank.clone() } else { self.rank[..1].to_vec() };
        let mut out = Vec::new();
        for &hidden in &self.hidden {
            for &rank in &ranks {
                for &lr in &pin(&self.lr, trains) {
                    for &weight_decay in &pin(&self.weight_decay, trains) {
                        for &alpha in &pin(&self.alpha, gamma) {
                            out.push(GridPoint { lr, weight_decay, hidden, rank, alpha });
                        }
                    }
                }
            }
        }
        out
    }

    fn is_empty(&self) -> bool {
        self.lr.is_empty()
            || self.weight_decay.is_empty()
            || self.hidden.is_empty()
            || self.rank.is_empty()
            || self.alpha.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub rank: usize,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest mean test accuracy.
    TestAccuracy,
    /// Lowest mean training loss; never looks at test labels.
    TrainLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub negatives: usize,
    /// Shared pre-training seed; when absent each run seed pre-trains its own
    /// encoder.
    pub seed: Option<u64>,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        let d = PretrainConfig::default();
        Self { epochs: d.epochs, lr: d.adam.lr, batch_size: d.batch_size, tau: d.tau, negatives: d.negatives, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub task: Option<TaskKind>,
    pub mode: Mode,
    /// Training items per class.
    pub shots: Option<usize>,
    /// Fraction of each class used for training, instead of `shots`.
    pub train_fraction: Option<f64>,
    pub seeds: Vec<u64>,
    pub grid: Grid,
    /// Permit grid values and epoch counts outside the standard sets.
    pub allow_off_grid: bool,
    pub layers: usize,
    pub epochs: usize,
    pub tau: f64,
    pub glora: GloraMode,
    pub pretrain: PretrainSettings,
    pub selection: Selection,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            task: None,
            mode: Mode::Dagprompt,
            shots: Some(5),
            train_fraction: None,
            seeds: (0..10).collect(),
            grid: Grid::standard(),
            allow_off_grid: false,
            layers: 2,
            epochs: MAX_EPOCHS,
            tau: 0.5,
            glora: GloraMode::Full,
            pretrain: PretrainSettings::default(),
            selection: Selection::TestAccuracy,
            workers: None,
        }
    }
}

fn within<T: Copy + PartialEq + fmt::Debug>(name: &str, values: &[T], allowed: &[T]) -> Result<()> {
    match values.iter().find(|v| !allowed.contains(v)) {
        Some(v) => Err(Error::Config(format!("{name} value {v:?} outside {allowed:?}; set allow_off_grid to override"))),
        None => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("every grid dimension needs at least one value".into()));
        }
        match (self.shots, self.train_fraction) {
            (Some(0), _) => return Err(Error::Config("shots must be at least 1".into())),
            (Some(_), None) => {}
            (None, Some(f)) if f > 0.0 && f < 1.0 => {}
            (None, Some(f)) => return Err(Error::Config(format!("train fraction {f} outside (0, 1)"))),
            _ => return Err(Error::Config("set exactly one of shots and train_fraction".into())),
        }
        if self.layers == 0 {
            return Err(Error::Config("need at least one layer".into()));
        }
        if !self.allow_off_grid {
            within("lr", &self.grid.lr, &STANDARD_LR)?;
            within("weight_decay", &self.grid.weight_decay, &STANDARD_WEIGHT_DECAY)?;
            within("hidden", &self.grid.hidden, &STANDARD_HIDDEN)?;
            within("rank", &self.grid.rank, &STANDARD_RANK)?;
            within("alpha", &self.grid.alpha, &STANDARD_ALPHA)?;
            if self.epochs > MAX_EPOCHS || self.pretrain.epochs > MAX_EPOCHS {
                return Err(Error::Config(format!("epochs above {MAX_EPOCHS}; set allow_off_grid to override")));
            }
        }
        if !(self.tau > 0.0) || !(self.pretrain.tau > 0.0) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn encoder_config(&self, in_features: usize, point: &GridPoint, glora: GloraMode) -> EncoderConfig {
        EncoderConfig::new(in_features, point.hidden, self.layers).with_glora(glora, point.rank)
    }

    fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            tau: self.pretrain.tau,
            negatives: self.pretrain.negatives,
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
            adam: AdamConfig::with_lr(self.pretrain.lr),
            seed: self.pretrain.seed.unwrap_or(seed),
        }
    }

    fn prompt_config(&self, mode: Mode, point: &GridPoint, seed: u64) -> PromptConfig {
        let mut pc = PromptConfig {
            glora: self.glora,
            rank: point.rank,
            alpha: point.alpha,
            tau: self.tau,
            epochs: self.epochs,
            adam: AdamConfig { weight_decay: point.weight_decay, ..AdamConfig::with_lr(point.lr) },
            seed,
            ..PromptConfig::default()
        };
        match mode {
            Mode::Prototype => {
                pc = PromptConfig { alpha: point.alpha, tau: self.tau, seed, ..PromptConfig::prototype() };
            }
            Mode::Ablation(Ablation::NoGlora) => pc.glora = GloraMode::Off,
            Mode::Ablation(Ablation::LastLayerOnly) => pc.scope = LayerScope::LastOnly,
            Mode::Ablation(Ablation::FixedGamma) => pc.gamma = GammaMode::Fixed,
            _ => {}
        }
        pc
    }
}

/// Where the encoder of a prompting run comes from.
#[derive(Clone, Copy)]
pub enum EncoderSource<'a> {
    /// Pre-trained on the task's own dataset.
    SameDataset,
    /// Pre-trained on another dataset with the same feature width.
    Dataset(&'a Dataset),
    /// Randomly initialized, never pre-trained.
    Untrained,
}

/// Disjoint union of the member graphs, used to pre-train for graph tasks.
pub fn union_graph(set: &GraphSet) -> Result<Graph> {
    let mut edges = Vec::new();
    let mut rows = Vec::new();
    let mut offset = 0;
    for g in set.graphs() {
        edges.extend(g.edges().iter().map(|&(u, v)| (u + offset, v + offset)));
        rows.extend_from_slice(g.features().data());
        offset += g.num_nodes();
    }
    let features = Tensor::new(offset, set.num_features(), rows)?;
    Ok(Graph::new(offset, edges, features, None, set.num_classes())?)
}

fn pretrain_graph(data: &Dataset) -> Result<std::borrow::Cow<'_, Graph>> {
    Ok(match data {
        Dataset::Node(g) => std::borrow::Cow::Borrowed(g),
        Dataset::Graphs(s) => std::borrow::Cow::Owned(union_graph(s)?),
    })
}

fn split_for(data: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<SplitSpec> {
    let split = match (data, cfg.shots, cfg.train_fraction) {
        (Dataset::Node(g), Some(k), _) => kshot_split(g, k, seed)?,
        (Dataset::Graphs(s), Some(k), _) => kshot_split_set(s, k, seed)?,
        (Dataset::Node(g), None, Some(f)) => fraction_split(g, f, seed)?,
        (Dataset::Graphs(s), None, Some(f)) => fraction_split_set(s, f, seed)?,
        _ => return Err(Error::Config("set exactly one of shots and train_fraction".into())),
    };
    for w in &split.warnings {
        warn!("seed {seed}: {w}");
    }
    if split.test_ids.is_empty() {
        return Err(Error::Infeasible("split leaves no test items".into()));
    }
    Ok(split)
}

#[derive(Clone, Debug)]
struct SeedResult {
    accuracy: f64,
    train_loss: f64,
    encoder_trainable: usize,
    prompt_trainable: usize,
    tune_seconds: f64,
    peak_bytes: usize,
}

/// Runs experiments and keeps pre-trained encoders keyed by dataset, encoder
/// config, pre-training config and seed, so grid points and modes share them.
#[derive(Default)]
pub struct Harness {
    cache: Mutex<HashMap<String, Arc<PretrainOutcome>>>,
}

impl Harness {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cached_checkpoints(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn cache_key(data: &Dataset, cfg: &EncoderConfig, pcfg: &PretrainConfig) -> String {
        let enc = serde_json::to_string(&(cfg.in_features, cfg.hidden, cfg.layers)).expect("serializable");
        let pre = serde_json::to_string(pcfg).expect("serializable");
        format!("{}|{enc}|{pre}", data.content_hash())
    }

    /// Pre-trains (or fetches) the encoder for `data`.
    pub fn pretrained(&self, data: &Dataset, cfg: &EncoderConfig, pcfg: &PretrainConfig) -> Result<Arc<PretrainOutcome>> {
        let key = Self::cache_key(data, cfg, pcfg);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let g = pretrain_graph(data)?;
        let out = Arc::new(run_pretrain(&g, cfg, pcfg)?);
        info!("pre-trained hidden={} seed={} in {:.1}s", cfg.hidden, pcfg.seed, out.seconds);
        let mut cache = self.cache.lock().expect("cache lock");
        Ok(Arc::clone(cache.entry(key).or_insert(out)))
    }

    fn pool(&self, workers: Option<usize>) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = workers {
            b = b.num_threads(w.max(1));
        }
        b.build().map_err(|e| Error::Config(format!("worker pool: {e}")))
    }

    fn run_one(
        &self,
        data: &Dataset,
        cfg: &ExperimentConfig,
        mode: Mode,
        point: &GridPoint,
        seed: u64,
        source: EncoderSource,
    ) -> Result<SeedResult> {
        let split = split_for(data, cfg, seed)?;
        let enc = cfg.encoder_config(data.num_features(), point, cfg.glora);
        let pretrained = |src: &Dataset| -> Result<EncoderParams> {
            if src.num_features() != data.num_features() {
                return Err(Error::Infeasible(format!(
                    "feature widths differ: source {} vs target {}",
                    src.num_features(),
                    data.num_features()
                )));
            }
            Ok(self.pretrained(src, &enc, &cfg.pretrain_config(seed))?.params.clone())
        };
        let base = match (mode, source) {
            (Mode::ScratchGcn, _) | (_, EncoderSource::Untrained) => EncoderParams::init(&enc, seed)?,
            (_, EncoderSource::SameDataset) => pretrained(data)?,
            (_, EncoderSource::Dataset(src)) => pretrained(src)?,
        };
        if mode.is_supervised() {
            let sc = SupervisedConfig {
                epochs: cfg.epochs,
                adam: AdamConfig { weight_decay: point.weight_decay, ..AdamConfig::with_lr(point.lr) },
                seed,
            };
            let out = run_supervised(&base, &enc, data, &split, &sc)?;
            return Ok(SeedResult {
                accuracy: out.accuracy,
                train_loss: out.losses.iter().copied().fold(f64::INFINITY, f64::min),
                encoder_trainable: out.trainable,
                prompt_trainable: 0,
                tune_seconds: out.seconds,
                peak_bytes: out.peak_tape_bytes,
            });
        }
        let pc = cfg.prompt_config(mode, point, seed);
        let out = run_prompt_tune(&base, &enc, data, &split, &pc)?;
        Ok(SeedResult {
            accuracy: out.accuracy,
            train_loss: out.losses.iter().copied().fold(f64::INFINITY, f64::min),
            encoder_trainable: out.encoder_trainable,
            prompt_trainable: out.prompt_trainable,
            tune_seconds: out.seconds,
            peak_bytes: out.peak_tape_bytes,
        })
    }

    /// Runs `cfg.mode` on an in-memory dataset.
    pub fn run_on(&self, data: &Dataset, cfg: &ExperimentConfig, name: &str) -> Result<RunReport> {
        self.run_with_source(data, cfg, cfg.mode, name, EncoderSource::SameDataset, &cfg.mode.to_string())
    }

    pub fn run_with_source(
        &self,
        data: &Dataset,
        cfg: &ExperimentConfig,
        mode: Mode,
        name: &str,
        source: EncoderSource,
        label: &str,
    ) -> Result<RunReport> {
        cfg.validate()?;
        if let Some(task) = cfg.task {
            if task != data.task() {
                return Err(Error::Config(format!("config task {task:?} but dataset task {:?}", data.task())));
            }
        }
        let points = cfg.grid.points(mode);
        let pool = self.pool(cfg.workers)?;
        let pretrains = mode.uses_pretraining() && !matches!(source, EncoderSource::Untrained);
        let pretrain_secs = Mutex::new(0.0f64);
        if pretrains {
            let src = match source {
                EncoderSource::Dataset(d) => d,
                _ => data,
            };
            let mut keys: Vec<(usize, u64)> = points
                .iter()
                .flat_map(|p| cfg.seeds.iter().map(move |&s| (p.hidden, cfg.pretrain.seed.unwrap_or(s))))
                .collect();
            keys.sort_unstable();
            keys.dedup();
            if src.num_features() == data.num_features() {
                pool.install(|| {
                    keys.par_iter().try_for_each(|&(hidden, seed)| {
                        let enc = EncoderConfig::new(src.num_features(), hidden, cfg.layers);
                        match self.pretrained(src, &enc, &cfg.pretrain_config(seed)) {
                            Ok(out) => *pretrain_secs.lock().expect("lock") += out.seconds,
                            Err(e) if e.is_numeric() => warn!("pre-training hidden={hidden} seed={seed}: {e}"),
                            Err(e) => return Err(e),
                        }
                        Ok(())
                    })
                })?;
            }
        }
        let jobs: Vec<(usize, u64)> =
            (0..points.len()).flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s))).collect();
        let outcomes: Vec<Result<SeedResult>> =
            pool.install(|| jobs.par_iter().map(|&(p, seed)| self.run_one(data, cfg, mode, &points[p], seed, source)).collect());
        let mut per_point: Vec<Option<Vec<SeedResult>>> = Vec::with_capacity(points.len());
        let mut first_failure = None;
        let mut outcomes = outcomes.into_iter();
        for point in &points {
            let mut rs = Vec::with_capacity(cfg.seeds.len());
            let mut failed = false;
            for (&seed, out) in cfg.seeds.iter().zip(outcomes.by_ref()) {
                match out {
                    Ok(r) => rs.push(r),
                    Err(e) if e.is_numeric() => {
                        warn!("dropping grid point {point:?}: seed {seed}: {e}");
                        first_failure.get_or_insert(e);
                        failed = true;
                    }
                    Err(e) => return Err(e),
                }
            }
            per_point.push((!failed).then_some(rs));
        }
        let score = |rs: &[SeedResult]| -> f64 {
            match cfg.selection {
                Selection::TestAccuracy => mean_std(&rs.iter().map(|r| r.accuracy).collect::<Vec<_>>()).0,
                Selection::TrainLoss => -mean_std(&rs.iter().map(|r| r.train_loss).collect::<Vec<_>>()).0,
            }
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, rs) in per_point.iter().enumerate() {
            if let Some(rs) = rs {
                let s = score(rs);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
        }
        let Some((best, _)) = best else {
            return Err(first_failure.expect("every point failed with a recorded error"));
        };
        let grid_points_failed = per_point.iter().filter(|p| p.is_none()).count();
        let results: Vec<&SeedResult> = per_point.iter().flatten().flatten().collect();
        let chosen = per_point[best].as_deref().expect("selected point succeeded");
        let point = points[best];
        let accuracies: Vec<f64> = chosen.iter().map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&accuracies);
        let enc = cfg.encoder_config(data.num_features(), &point, cfg.glora);
        let pretrain_trainable = if pretrains { trainable_count_formula(&enc, Stage::Pretrain, &AdapterTarget::ProjectionOnly) } else { 0 };
        let encoder_trainable = chosen.iter().map(|r| r.encoder_trainable).max().unwrap_or(0);
        let prompt_trainable = chosen[0].prompt_trainable;
        Ok(RunReport {
            schema_version: SCHEMA_VERSION,
            label: label.to_string(),
            mode,
            dataset: name.to_string(),
            seeds: cfg.seeds.clone(),
            accuracies,
            mean,
            std,
            grid_point: point,
            selection: cfg.selection,
            selection_uses_test_labels: cfg.selection == Selection::TestAccuracy && points.len() > 1,
            grid_points_evaluated: points.len(),
            grid_points_failed,
            pretrain_trainable,
            downstream_encoder_trainable: encoder_trainable,
            downstream_prompt_trainable: prompt_trainable,
            downstream_trainable: encoder_trainable + prompt_trainable,
            peak_memory_bytes: results.iter().map(|r| r.peak_bytes).max().unwrap_or(0),
            timing: Timing {
                pretrain_seconds: pretrain_secs.into_inner().expect("lock"),
                tune_seconds: results.iter().map(|r| r.tune_seconds).sum(),
            },
        })
    }

    /// Full model plus the three ablations, in that order.
    pub fn run_ablation(&self, data: &Dataset, cfg: &ExperimentConfig, name: &str) -> Result<Vec<RunReport>> {
        let modes = [
            Mode::Dagprompt,
            Mode::Ablation(Ablation::NoGlora),
            Mode::Ablation(Ablation::LastLayerOnly),
            Mode::Ablation(Ablation::FixedGamma),
        ];
        modes
            .iter()
            .map(|&m| self.run_with_source(data, cfg, m, name, EncoderSource::SameDataset, &m.to_string()))
            .collect()
    }

    /// Prompting on `dst` with an untrained encoder (`-Scratch`) and with one
    /// pre-trained on `src` (`-Cross`).
    pub fn run_transfer(
        &self,
        src: &Dataset,
        dst: &Dataset,
        cfg: &ExperimentConfig,
        names: (&str, &str),
    ) -> Result<(RunReport, RunReport)> {
        if src.num_features() != dst.num_features() {
            return Err(Error::Infeasible(format!(
                "transfer needs equal feature widths, source has {} and target {}",
                src.num_features(),
                dst.num_features()
            )));
        }
        let dst_name = names.1;
        let scratch = self.run_with_source(dst, cfg, Mode::Dagprompt, dst_name, EncoderSource::Untrained, "DAGPrompT-Scratch")?;
        let cross = self.run_with_source(dst, cfg, Mode::Dagprompt, dst_name, EncoderSource::Dataset(src), "DAGPrompT-Cross")?;
        info!("transfer {} -> {dst_name}: scratch {:.4}, cross {:.4}", names.0, scratch.mean, cross.mean);
        Ok((scratch, cross))
    }

    /// Rewires `base` to each target ratio and runs every mode with half of
    /// each class used for training. Unreachable targets are skipped.
    pub fn run_heterophily_sweep(
        &self,
        base: &Graph,
        targets: &[f64],
        cfg: &ExperimentConfig,
        modes: &[Mode],
        rewire_seed: u64,
    ) -> Result<SweepResult> {
        let cfg = ExperimentConfig { shots: None, train_fraction: Some(0.5), ..cfg.clone() };
        let mut points = Vec::new();
        let mut skipped = Vec::new();
        for &t in targets {
            let g = match synth_rewire(base, t, rewire_seed) {
                Ok(g) => g,
                Err(e @ (GraphError::Infeasible { .. } | GraphError::Parameter(_))) => {
                    warn!("skipping target {t}: {e}");
                    skipped.push(SkippedTarget { target_h: t, reason: e.to_string() });
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let achieved = homophily_ratio(&g)?;
            let data = Dataset::Node(g);
            let name = format!("synthetic-h{t}");
            let reports = modes.iter().map(|&m| self.run_with_source(&data, &cfg, m, &name, EncoderSource::SameDataset, &m.to_string())).collect::<Result<Vec<_>>>()?;
            points.push(SweepPoint { target_h: t, achieved_h: achieved, reports });
        }
        Ok(SweepResult { points, skipped })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub target_h: f64,
    pub achieved_h: f64,
    pub reports: Vec<RunReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedTarget {
    pub target_h: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub skipped: Vec<SkippedTarget>,
}

impl SweepResult {
    /// `(target, achieved, mean accuracy)` for one mode.
    pub fn series(&self, mode: Mode) -> Vec<(f64, f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.reports.iter().find(|r| r.mode == mode).map(|r| (p.target_h, p.achieved_h, r.mean)))
            .collect()
    }
}

/// Loads `cfg.dataset` and runs `cfg.mode` on it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    let name = cfg.dataset.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Harness::new().run_on(&data, cfg, &name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_size() {
        let g = Grid::standard();
        assert_eq!(g.points(Mode::Dagprompt).len(), 5 * 3 * 2 * 3 * 5);
        assert_eq!(g.points(Mode::ScratchGcn).len(), 5 * 3 * 2);
        assert_eq!(g.points(Mode::Prototype).len(), 2 * 5);
        assert_eq!(g.points(Mode::Ablation(Ablation::NoGlora)).len(), 5 * 3 * 2 * 5);
        assert_eq!(g.points(Mode::Ablation(Ablation::FixedGamma)).len(), 5 * 3 * 2 * 3);
        assert_eq!(g.points(Mode::Ablation(Ablation::LastLayerOnly)).len(), 5 * 3 * 2 * 3);
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.grid.hidden = vec![64];
        assert!(c.validate().is_err());
        c.allow_off_grid = true;
        assert!(c.validate().is_ok());
        let both = ExperimentConfig { train_fraction: Some(0.5), ..ExperimentConfig::default() };
        assert!(both.validate().is_err());
        let none = ExperimentConfig { seeds: vec![], ..ExperimentConfig::default() };
        assert!(none.validate().is_err());
        let long = ExperimentConfig { epochs: 500, ..ExperimentConfig::default() };
        assert!(long.validate().is_err());
    }

    #[test]
    fn json_config_roundtrip() {
        let c = ExperimentConfig { mode: Mode::Ablation(Ablation::FixedGamma), ..ExperimentConfig::default() };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("{\"ablation\":\"fixed_gamma\"}"));
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        let sparse = ExperimentConfig::from_json(r#"{"dataset": "data/x", "mode": "scratch_gcn", "seeds": [1, 2]}"#).unwrap();
        assert_eq!(sparse.mode, Mode::ScratchGcn);
        assert_eq!(sparse.shots, Some(5));
        assert!(ExperimentConfig::from_json(r#"{"mode": "nope"}"#).is_err());
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in [
            Mode::Dagprompt,
            Mode::ScratchGcn,
            Mode::FinetuneLp,
            Mode::Prototype,
            Mode::Ablation(Ablation::NoGlora),
            Mode::Ablation(Ablation::LastLayerOnly),
            Mode::Ablation(Ablation::FixedGamma),
        ] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
    }
}
