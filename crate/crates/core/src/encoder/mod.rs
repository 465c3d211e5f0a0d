//! GCN backbone with dual low-rank adaptation of the layer weights and the
//! normalized adjacency, parameter bookkeeping and checkpoint I/O.

mod checkpoint;
mod forward;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, load_checkpoint_for, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use forward::{bind, encoder_forward, forward_on_tape, AdjView, EmbeddingStack, EncoderVars};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numcore::Tensor;
use crate::{Error, Result};

/// Standard deviation of the Gaussian factors at adapter initialization.
pub const GLORA_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GloraMode {
    Off,
    Full,
    #[serde(alias = "edges")]
    EdgeSubset,
}

impl FromStr for GloraMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(GloraMode::Off),
            "full" => Ok(GloraMode::Full),
            "edges" | "edge_subset" => Ok(GloraMode::EdgeSubset),
            other => Err(Error::Config(format!("unknown glora mode {other:?} (off, full, edges)"))),
        }
    }
}

impl fmt::Display for GloraMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GloraMode::Off => "off",
            GloraMode::Full => "full",
            GloraMode::EdgeSubset => "edges",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_features: usize,
    pub hidden: usize,
    pub layers: usize,
    pub rank: usize,
    pub glora: GloraMode,
}

impl EncoderConfig {
    pub fn new(in_features: usize, hidden: usize, layers: usize) -> Self {
        Self { in_features, hidden, layers, rank: 8, glora: GloraMode::Full }
    }

    pub fn with_glora(mut self, mode: GloraMode, rank: usize) -> Self {
        self.glora = mode;
        self.rank = rank;
        self
    }

    /// `[F, d, …, d]` with `layers + 1` entries.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_features).chain(std::iter::repeat_n(self.hidden, self.layers)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.in_features == 0 {
            return Err(Error::Config(format!("encoder needs positive sizes, got {:?}", self.dims())));
        }
        if self.glora != GloraMode::Off && self.rank == 0 {
            return Err(Error::Config("glora rank must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether two configs describe the same base weights.
    pub fn same_backbone(&self, other: &EncoderConfig) -> bool {
        self.dims() == other.dims()
    }
}

/// Which parameters a training stage updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Base weights train; adapters do not exist yet.
    Pretrain,
    /// Adapters train; base weights are frozen.
    Prompt,
    /// Every parameter trains.
    FineTune,
}

/// What the adjacency half of the adapter acts on.
#[derive(Clone, Debug, PartialEq)]
pub enum AdapterTarget {
    /// Projection factors only.
    ProjectionOnly,
    /// A rank-one term over all `n` nodes.
    Nodes(usize),
    /// One weight per listed undirected edge.
    Edges(Vec<(usize, usize)>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum AdjAdapter {
    RankOne { pa: Tensor, qa: Tensor },
    Edges { weights: Tensor },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GloraFactors {
    /// `d_in × r`.
    pub p: Tensor,
    /// `d_out × r`.
    pub q: Tensor,
    pub adj: Option<AdjAdapter>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub w0: Tensor,
    pub glora: Option<GloraFactors>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// Input map producing the layer-0 embeddings.
    pub w_in: Tensor,
    pub layers: Vec<LayerParams>,
    /// Edges carrying adapter weights in edge-subset mode, `u < v`.
    pub selected_edges: Option<Arc<[(usize, usize)]>>,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(rows, cols, data).expect("finite init")
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("valid std");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::new(rows, cols, data).expect("finite init")
}

impl EncoderParams {
    /// Xavier-uniform base weights without adapters.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_in = xavier(&mut rng, cfg.in_features, cfg.hidden);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams { w0: xavier(&mut rng, cfg.hidden, cfg.hidden), glora: None })
            .collect();
        Ok(Self { w_in, layers, selected_edges: None })
    }

    /// Adds freshly initialized adapters: `P` Gaussian and `Q = 0`, `PA`
    /// Gaussian and `QA = 0`, edge weights zero. The adapted encoder starts
    /// out computing exactly what the base encoder computes.
    pub fn attach_glora(&mut self, cfg: &EncoderConfig, target: &AdapterTarget, seed: u64) -> Result<()> {
        cfg.validate()?;
        if cfg.glora == GloraMode::Off {
            return Err(Error::Config("cannot attach adapters with glora mode off".into()));
        }
        match (cfg.glora, target) {
            (GloraMode::Full, AdapterTarget::Edges(_)) | (GloraMode::EdgeSubset, AdapterTarget::Nodes(_)) => {
                return Err(Error::Config(format!("adapter target {target:?} does not fit mode {}", cfg.glora)));
            }
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = cfg.rank;
        for layer in &mut self.layers {
            let (d_in, d_out) = layer.w0.shape();
            let p = gaussian(&mut rng, d_in, r, GLORA_INIT_STD);
            let q = Tensor::zeros(d_out, r);
            let adj = match target {
                AdapterTarget::ProjectionOnly => None,
                AdapterTarget::Nodes(n) => {
                    Some(AdjAdapter::RankOne { pa: gaussian(&mut rng, *n, 1, GLORA_INIT_STD), qa: Tensor::zeros(*n, 1) })
                }
                AdapterTarget::Edges(edges) => Some(AdjAdapter::Edges { weights: Tensor::zeros(edges.len(), 1) }),
            };
            layer.glora = Some(GloraFactors { p, q, adj });
        }
        self.selected_edges = match target {
            AdapterTarget::Edges(edges) => {
                if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= v) {
                    return Err(Error::Config(format!("selected edge ({u}, {v}) must satisfy u < v")));
                }
                Some(edges.clone().into())
            }
            _ => None,
        };
        Ok(())
    }

    pub fn has_glora(&self) -> bool {
        self.layers.iter().any(|l| l.glora.is_some())
    }

    /// Drops every adapter, leaving the base encoder.
    pub fn base(&self) -> Self {
        let layers = self.layers.iter().map(|l| LayerParams { w0: l.w0.clone(), glora: None }).collect();
        Self { w_in: self.w_in.clone(), layers, selected_edges: None }
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("w_in".to_string(), &self.w_in)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.w0"), &layer.w0));
            if let Some(g) = &layer.glora {
                out.push((format!("layer{l}.p"), &g.p));
                out.push((format!("layer{l}.q"), &g.q));
                match &g.adj {
                    Some(AdjAdapter::RankOne { pa, qa }) => {
                        out.push((format!("layer{l}.pa"), pa));
                        out.push((format!("layer{l}.qa"), qa));
                    }
                    Some(AdjAdapter::Edges { weights }) => out.push((format!("layer{l}.edge_w"), weights)),
                    None => {}
                }
            }
        }
        out
    }

    /// Mutable counterpart of [`named_tensors`](Self::named_tensors), same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("w_in".to_string(), &mut self.w_in)];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.w0"), &mut layer.w0));
            if let Some(g) = &mut layer.glora {
                out.push((format!("layer{l}.p"), &mut g.p));
                out.push((format!("layer{l}.q"), &mut g.q));
                match &mut g.adj {
                    Some(AdjAdapter::RankOne { pa, qa }) => {
                        out.push((format!("layer{l}.pa"), pa));
                        out.push((format!("layer{l}.qa"), qa));
                    }
                    Some(AdjAdapter::Edges { weights }) => out.push((format!("layer{l}.edge_w"), weights)),
                    None => {}
                }
            }
        }
        out
    }

    /// Rounds every tensor to the precision checkpoints store.
    pub fn round_to_f32(&mut self) {
        for (_, t) in self.named_tensors_mut() {
            *t = t.to_f32_precision();
        }
    }
}

fn is_base(name: &str) -> bool {
    name == "w_in" || name.ends_with(".w0")
}

/// Names of trainable and frozen tensors for `stage`. Adapters are not part
/// of the model during pre-training and appear in neither list.
pub fn partition_params(params: &EncoderParams, stage: Stage) -> (Vec<String>, Vec<String>) {
    let mut trainable = Vec::new();
    let mut frozen = Vec::new();
    for (name, _) in params.named_tensors() {
        match (stage, is_base(&name)) {
            (Stage::Pretrain, true) | (Stage::Prompt, false) | (Stage::FineTune, _) => trainable.push(name),
            (Stage::Prompt, true) => frozen.push(name),
            (Stage::Pretrain, false) => {}
        }
    }
    (trainable, frozen)
}

pub fn count_trainable(params: &EncoderParams, stage: Stage) -> usize {
    let (trainable, _) = partition_params(params, stage);
    params.named_tensors().into_iter().filter(|(n, _)| trainable.contains(n)).map(|(_, t)| t.len()).sum()
}

/// Closed-form trainable count of the encoder for `stage`.
pub fn trainable_count_formula(cfg: &EncoderConfig, stage: Stage, target: &AdapterTarget) -> usize {
    let (f, d, l, r) = (cfg.in_features, cfg.hidden, cfg.layers, cfg.rank);
    let base = f * d + l * d * d;
    let adapters = if cfg.glora == GloraMode::Off {
        0
    } else {
        let adj = match target {
            AdapterTarget::ProjectionOnly => 0,
            AdapterTarget::Nodes(n) => 2 * n,
            AdapterTarget::Edges(e) => e.len(),
        };
        l * (r * (d + d) + adj)
    };
    match stage {
        Stage::Pretrain => base,
        Stage::Prompt => adapters,
        Stage::FineTune => base + adapters,
    }
}
