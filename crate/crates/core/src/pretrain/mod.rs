//! Contrastive link-prediction pre-training: triplet sampling, the
//! two-way softmax loss over cosine similarities, and the training loop.

use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{bind, forward_on_tape, AdjView, EncoderConfig, EncoderParams, Stage};
use crate::graphstore::{normalize_adjacency, Graph};
use crate::numcore::{AdamConfig, AdamState, NumError, SparseMatrix, Tape, Tensor, Var};
use crate::{Error, Result};

/// Anchor `v`, linked positive `a`, unlinked negative `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub v: usize,
    pub a: usize,
    pub b: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub tau: f64,
    pub negatives: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { tau: 0.5, negatives: 1, epochs: 200, batch_size: 512, adam: AdamConfig::default(), seed: 0 }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.negatives == 0 || self.batch_size == 0 {
            return Err(Error::Config("negatives and batch size must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// One uniformly drawn neighbor per node, each paired with `k` uniformly
/// drawn non-neighbors. Nodes without neighbors or without non-neighbors
/// are skipped.
pub fn build_triplets(g: &Graph, k: usize, seed: u64) -> Result<Vec<Triplet>> {
    if k == 0 {
        return Err(Error::Config("need at least one negative per positive".into()));
    }
    if g.num_edges() == 0 {
        return Err(Error::Infeasible("pre-training needs at least one edge".into()));
    }
    let n = g.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * k);
    let mut saturated = 0usize;
    for v in 0..n {
        let nbrs = g.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let free = n - 1 - nbrs.len();
        if free == 0 {
            saturated += 1;
            continue;
        }
        let a = nbrs[rng.random_range(0..nbrs.len())];
        if 2 * nbrs.len() < n {
            for _ in 0..k {
                let b = loop {
                    let b = rng.random_range(0..n);
                    if b != v && nbrs.binary_search(&b).is_err() {
                        break b;
                    }
                };
                out.push(Triplet { v, a, b });
            }
        } else {
            let pool: Vec<usize> = (0..n).filter(|&b| b != v && nbrs.binary_search(&b).is_err()).collect();
            for _ in 0..k {
                out.push(Triplet { v, a, b: pool[rng.random_range(0..pool.len())] });
            }
        }
    }
    if saturated > 0 {
        warn!("{saturated} nodes skipped: adjacent to every other node");
    }
    if out.is_empty() {
        return Err(Error::Infeasible("no node has both a neighbor and a non-neighbor".into()));
    }
    Ok(out)
}

/// Mean over triplets of `−ln softmax` of the positive similarity against
/// the negative one, with embeddings `s = adj · h` and cosine similarity.
pub fn pretrain_loss(tape: &mut Tape, adj: &Arc<SparseMatrix>, h: Var, triplets: &[Triplet], tau: f64) -> Result<Var> {
    if triplets.is_empty() {
        return Err(Error::Config("empty triplet batch".into()));
    }
    let s = tape.spmm(adj, h)?;
    let vs: Vec<usize> = triplets.iter().map(|t| t.v).collect();
    let as_: Vec<usize> = triplets.iter().map(|t| t.a).collect();
    let bs: Vec<usize> = triplets.iter().map(|t| t.b).collect();
    let sv = tape.gather_rows(s, &vs)?;
    let sa = tape.gather_rows(s, &as_)?;
    let sb = tape.gather_rows(s, &bs)?;
    let pos = tape.rowwise_cosine(sv, sa)?;
    let neg = tape.rowwise_cosine(sv, sb)?;
    let scores = tape.concat_cols(&[pos, neg])?;
    Ok(tape.softmax_nll(scores, &vec![0; triplets.len()], tau)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    /// Mean training loss per epoch, in order.
    pub epoch_means: Vec<f64>,
}

impl LossCurve {
    pub fn first(&self) -> Option<f64> {
        self.epoch_means.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epoch_means.last().copied()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (e, l) in self.epoch_means.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", e + 1));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub config: EncoderConfig,
    /// Trained base weights, rounded to checkpoint precision.
    pub params: EncoderParams,
    pub losses: LossCurve,
    pub seconds: f64,
    pub peak_tape_bytes: usize,
}

fn diverged(epoch: usize, lr: f64, err: Error) -> Error {
    match err {
        Error::Num(e @ NumError::NonFinite { .. }) => {
            Error::Diverged { stage: "pre-training", epoch, lr, detail: e.to_string() }
        }
        other => other,
    }
}

/// Trains the input map and layer weights on the contrastive objective.
pub fn run_pretrain(g: &Graph, cfg: &EncoderConfig, pcfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    pcfg.validate()?;
    if g.num_features() != cfg.in_features {
        return Err(Error::Config(format!(
            "graph has {} features, encoder expects {}",
            g.num_features(),
            cfg.in_features
        )));
    }
    let start = Instant::now();
    let mut params = EncoderParams::init(cfg, pcfg.seed)?.base();
    let adj = Arc::new(normalize_adjacency(g));
    let view = AdjView::full(Arc::clone(&adj));
    let mut adam = {
        let refs: Vec<&Tensor> = params.named_tensors().into_iter().map(|(_, t)| t).collect();
        AdamState::new(pcfg.adam.clone(), &refs)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(pcfg.seed ^ 0x7072_6574_7261_696e);
    let mut curve = Vec::with_capacity(pcfg.epochs);
    let mut peak = 0usize;
    for epoch in 1..=pcfg.epochs {
        let mut triplets = build_triplets(g, pcfg.negatives, rng.random())?;
        triplets.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in triplets.chunks(pcfg.batch_size) {
            let step = || -> Result<(f64, Vec<Tensor>, usize)> {
                let mut tape = Tape::new();
                let vars = bind(&mut tape, &params, Stage::Pretrain);
                let x = tape.constant(g.features().clone());
                let hs = forward_on_tape(&mut tape, &view, x, cfg, &vars)?;
                let loss = pretrain_loss(&mut tape, &adj, *hs.last().expect("layers"), batch, pcfg.tau)?;
                let grads = tape.backward(loss)?;
                let gs = vars.named().iter().map(|(_, v)| grads.get(*v)).collect();
                Ok((tape.value(loss).data()[0], gs, tape.allocated_bytes()))
            };
            let (loss, grads, bytes) = step().map_err(|e| diverged(epoch, pcfg.adam.lr, e))?;
            peak = peak.max(bytes);
            total += loss * batch.len() as f64;
            let mut targets: Vec<&mut Tensor> = params.named_tensors_mut().into_iter().map(|(_, t)| t).collect();
            let grefs: Vec<&Tensor> = grads.iter().collect();
            adam.step(&mut targets, &grefs)?;
            if targets.iter().any(|t| !t.is_finite()) {
                return Err(Error::Diverged {
                    stage: "pre-training",
                    epoch,
                    lr: pcfg.adam.lr,
                    detail: "parameters became non-finite".into(),
                });
            }
        }
        let mean = total / triplets.len() as f64;
        debug!("pretrain epoch {epoch}: loss {mean:.6}");
        curve.push(mean);
    }
    params.round_to_f32();
    Ok(PretrainOutcome {
        config: cfg.clone(),
        params,
        losses: LossCurve { epoch_means: curve },
        seconds: start.elapsed().as_secs_f64(),
        peak_tape_bytes: peak,
    })
}
