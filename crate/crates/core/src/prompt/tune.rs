use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::tokens::TaskContext;
use super::{argmax, class_anchors_on_tape, init_gamma, ClassPromptSet};
use crate::encoder::{
    bind, count_trainable, partition_params, AdapterTarget, EncoderConfig, EncoderParams, EncoderVars, GloraMode, Stage,
};
use crate::graphstore::{Dataset, Graph, SplitSpec};
use crate::numcore::{AdamConfig, AdamState, NumError, Tape, Tensor, Var};
use crate::{Error, Result};

/// Node tasks above this size encode each node on its ego network.
pub const FULL_GRAPH_NODE_LIMIT: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerScope {
    /// Score with every layer `0..=L`.
    All,
    /// Score with the last layer alone.
    LastOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    Learned,
    /// Every coefficient fixed to one.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub glora: GloraMode,
    pub rank: usize,
    pub alpha: f64,
    pub tau: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub scope: LayerScope,
    pub gamma: GammaMode,
    /// Learn per-layer prompt offsets.
    pub theta: bool,
    /// Encode nodes on their ego networks even for small graphs.
    pub ego_tokens: bool,
    pub seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            glora: GloraMode::Full,
            rank: 8,
            alpha: 0.5,
            tau: 0.5,
            epochs: 200,
            adam: AdamConfig::default(),
            scope: LayerScope::All,
            gamma: GammaMode::Learned,
            theta: true,
            ego_tokens: false,
            seed: 0,
        }
    }
}

impl PromptConfig {
    /// Nearest-class-mean classifier on the frozen encoder.
    pub fn prototype() -> Self {
        Self { glora: GloraMode::Off, theta: false, epochs: 0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.glora != GloraMode::Off && self.rank == 0 {
            return Err(Error::Config("glora rank must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.adam.lr)));
        }
        init_gamma(self.alpha, 1).map(|_| ())
    }
}

#[derive(Clone, Debug)]
pub struct PromptOutcome {
    pub accuracy: f64,
    pub test_ids: Vec<usize>,
    pub predictions: Vec<usize>,
    /// Summed per-layer loss at the start of each epoch.
    pub losses: Vec<f64>,
    pub gamma: Vec<f64>,
    pub encoder_trainable: usize,
    /// Offsets and coefficients.
    pub prompt_trainable: usize,
    pub seconds: f64,
    pub peak_tape_bytes: usize,
    pub params: EncoderParams,
    pub prompts: ClassPromptSet,
}

/// Edges with at least one endpoint in `nodes`, ascending.
pub fn incident_edges(g: &Graph, nodes: &[usize]) -> Vec<(usize, usize)> {
    let mut mark = vec![false; g.num_nodes()];
    for &v in nodes {
        mark[v] = true;
    }
    g.edges().iter().copied().filter(|&(u, v)| mark[u] || mark[v]).collect()
}

struct Trainables {
    params: EncoderParams,
    encoder_names: Vec<String>,
    theta: Vec<Tensor>,
    gamma: Tensor,
}

struct Bound {
    vars: EncoderVars,
    theta: Vec<Var>,
    gamma: Var,
}

impl Trainables {
    fn bind(&self, tape: &mut Tape, gamma_learned: bool) -> Bound {
        let vars = bind(tape, &self.params, Stage::Prompt);
        let theta = self.theta.iter().map(|t| tape.leaf(t.clone())).collect();
        let gamma = if gamma_learned { tape.leaf(self.gamma.clone()) } else { tape.constant(self.gamma.clone()) };
        Bound { vars, theta, gamma }
    }

    fn tensors_mut(&mut self, gamma_learned: bool) -> Vec<&mut Tensor> {
        let names = &self.encoder_names;
        let mut out: Vec<&mut Tensor> =
            self.params.named_tensors_mut().into_iter().filter(|(n, _)| names.contains(n)).map(|(_, t)| t).collect();
        out.extend(self.theta.iter_mut());
        if gamma_learned {
            out.push(&mut self.gamma);
        }
        out
    }

    fn vars(&self, b: &Bound, gamma_learned: bool) -> Vec<Var> {
        let mut out: Vec<Var> =
            b.vars.named().iter().filter(|(n, _)| self.encoder_names.contains(n)).map(|(_, v)| *v).collect();
        out.extend(&b.theta);
        if gamma_learned {
            out.push(b.gamma);
        }
        out
    }
}

struct Scoring<'a> {
    ctx: &'a TaskContext<'a>,
    cfg: &'a EncoderConfig,
    layers: Vec<usize>,
    train_ids: &'a [usize],
    train_labels: Vec<usize>,
    classes: usize,
}

impl Scoring<'_> {
    /// Per scored layer: cosine scores of `eval_ids` (training items when
    /// `None`) against the current class prompts, plus the anchors.
    fn scores(&self, tape: &mut Tape, b: &Bound, eval_ids: Option<&[usize]>) -> Result<(Vec<Var>, Vec<Var>)> {
        let n_train = self.train_ids.len();
        let mut ids = self.train_ids.to_vec();
        if let Some(e) = eval_ids {
            ids.extend_from_slice(e);
        }
        let tokens = self.ctx.tokens_on_tape(tape, self.cfg, &b.vars, &ids)?;
        let train_rows: Vec<usize> = (0..n_train).collect();
        let eval_rows: Vec<usize> = (n_train..ids.len()).collect();
        let mut scores = Vec::with_capacity(self.layers.len());
        let mut anchors = Vec::with_capacity(self.layers.len());
        for (k, &l) in self.layers.iter().enumerate() {
            let train_tok = if eval_ids.is_some() { tape.gather_rows(tokens[l], &train_rows)? } else { tokens[l] };
            let anchor = class_anchors_on_tape(tape, train_tok, &self.train_labels, self.classes)?;
            let prompt = match b.theta.get(k) {
                Some(&t) => tape.add(anchor, t)?,
                None => anchor,
            };
            let target = if eval_ids.is_some() { tape.gather_rows(tokens[l], &eval_rows)? } else { train_tok };
            scores.push(tape.row_cosine_sim(target, prompt)?);
            anchors.push(anchor);
        }
        Ok((scores, anchors))
    }
}

fn diverged(epoch: usize, lr: f64, err: Error) -> Error {
    match err {
        Error::Num(e @ NumError::NonFinite { .. }) => {
            Error::Diverged { stage: "prompt tuning", epoch, lr, detail: e.to_string() }
        }
        other => other,
    }
}

/// Stage two: trains the adapters, prompt offsets and hop coefficients on
/// the training items of `split` with the base encoder frozen, then
/// classifies the test items. The state with the lowest training objective
/// is the one evaluated; training stops early if an update collapses a
/// training token to zero.
pub fn run_prompt_tune(
    base: &EncoderParams,
    backbone: &EncoderConfig,
    data: &Dataset,
    split: &SplitSpec,
    pc: &PromptConfig,
) -> Result<PromptOutcome> {
    pc.validate()?;
    let start = Instant::now();
    let cfg = EncoderConfig { rank: pc.rank, glora: pc.glora, ..backbone.clone() };
    cfg.validate()?;
    if data.num_features() != cfg.in_features {
        return Err(Error::Checkpoint(format!(
            "encoder expects {} input features, dataset has {}",
            cfg.in_features,
            data.num_features()
        )));
    }
    if base.has_glora() || base.layers.len() != cfg.layers || base.w_in.shape() != (cfg.in_features, cfg.hidden) {
        return Err(Error::Checkpoint(format!("base encoder does not match dims {:?}", cfg.dims())));
    }
    if split.train_ids.is_empty() || split.test_ids.is_empty() {
        return Err(Error::Config("split needs both training and test items".into()));
    }

    let mut params = base.clone();
    if pc.glora != GloraMode::Off {
        let target = match (data, pc.glora) {
            (Dataset::Node(g), GloraMode::Full) => AdapterTarget::Nodes(g.num_nodes()),
            (Dataset::Node(g), _) => AdapterTarget::Edges(incident_edges(g, &split.train_ids)),
            (Dataset::Graphs(_), _) => AdapterTarget::ProjectionOnly,
        };
        params.attach_glora(&cfg, &target, pc.seed)?;
    }
    let ctx = match data {
        Dataset::Node(g) => TaskContext::node(g, pc.ego_tokens || g.num_nodes() > FULL_GRAPH_NODE_LIMIT),
        Dataset::Graphs(s) => TaskContext::graphs(s),
    }
    .with_edges(params.selected_edges.clone())?;

    let l_max = cfg.layers;
    let layers: Vec<usize> = match pc.scope {
        LayerScope::All => (0..=l_max).collect(),
        LayerScope::LastOnly => vec![l_max],
    };
    let classes = ctx.num_classes();
    let scoring = Scoring {
        ctx: &ctx,
        cfg: &cfg,
        layers: layers.clone(),
        train_ids: &split.train_ids,
        train_labels: ctx.labels_of(&split.train_ids)?,
        classes,
    };
    let test_labels = ctx.labels_of(&split.test_ids)?;
    let gamma_learned = pc.gamma == GammaMode::Learned && pc.scope == LayerScope::All;
    let gamma = match pc.gamma {
        GammaMode::Learned => init_gamma(pc.alpha, l_max)?.gamma,
        GammaMode::Fixed => vec![1.0; l_max + 1],
    };
    let theta = if pc.theta { layers.iter().map(|_| Tensor::zeros(classes, cfg.hidden)).collect() } else { vec![] };
    let (encoder_names, _) = partition_params(&params, Stage::Prompt);
    let mut state = Trainables {
        params,
        encoder_names,
        theta,
        gamma: Tensor::new(1, l_max + 1, gamma).map_err(Error::Num)?,
    };
    let mut adam = {
        let zeros: Vec<Tensor> =
            state.tensors_mut(gamma_learned).into_iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        AdamState::new(pc.adam.clone(), &zeros.iter().collect::<Vec<_>>())
    };

    let objective = |tape: &mut Tape, b: &Bound| -> Result<(Var, f64)> {
        let (scores, _) = scoring.scores(tape, b, None)?;
        let mut terms = Vec::with_capacity(scores.len() + 1);
        for &s in &scores {
            terms.push(tape.softmax_nll(s, &scoring.train_labels, pc.tau)?);
        }
        let ones = tape.constant(Tensor::ones(1, terms.len()));
        let summed = tape.linear_combination(&terms, ones)?;
        let summed_value = tape.value(summed).data()[0];
        if !gamma_learned {
            return Ok((summed, summed_value));
        }
        let detached: Vec<Var> = scores.iter().map(|&s| tape.detach(s)).collect();
        let agg = tape.linear_combination(&detached, b.gamma)?;
        let agg_loss = tape.softmax_nll(agg, &scoring.train_labels, pc.tau)?;
        Ok((tape.add(summed, agg_loss)?, summed_value))
    };

    let mut losses = Vec::with_capacity(pc.epochs);
    let mut peak = 0usize;
    let mut best: Option<(f64, EncoderParams, Vec<Tensor>, Tensor)> = None;
    for epoch in 0..=pc.epochs {
        let mut tape = Tape::new();
        let b = state.bind(&mut tape, gamma_learned);
        let (obj, summed) = match objective(&mut tape, &b) {
            Ok(v) => v,
            Err(Error::Num(e @ NumError::DegenerateRow { .. })) if best.is_some() => {
                warn!("stopping at epoch {epoch}: {e}; keeping the best earlier state");
                break;
            }
            Err(e) => return Err(diverged(epoch, pc.adam.lr, e)),
        };
        let obj_value = tape.value(obj).data()[0];
        if best.as_ref().is_none_or(|(v, ..)| obj_value < *v) {
            best = Some((obj_value, state.params.clone(), state.theta.clone(), state.gamma.clone()));
        }
        if epoch == pc.epochs {
            break;
        }
        losses.push(summed);
        debug!("prompt epoch {epoch}: loss {summed:.6}");
        let grads = tape.backward(obj).map_err(|e| diverged(epoch, pc.adam.lr, e.into()))?;
        peak = peak.max(tape.allocated_bytes());
        let gs: Vec<Tensor> = state.vars(&b, gamma_learned).into_iter().map(|v| grads.get(v)).collect();
        let mut targets = state.tensors_mut(gamma_learned);
        adam.step(&mut targets, &gs.iter().collect::<Vec<_>>())?;
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged {
                stage: "prompt tuning",
                epoch,
                lr: pc.adam.lr,
                detail: "parameters became non-finite".into(),
            });
        }
    }
    let (_, params, theta, gamma) = best.expect("at least one evaluation");
    state.params = params;
    state.theta = theta;
    state.gamma = gamma;

    let mut tape = Tape::new();
    let b = state.bind(&mut tape, false);
    let (scores, anchors) = scoring.scores(&mut tape, &b, Some(&split.test_ids))?;
    peak = peak.max(tape.allocated_bytes());
    let gamma_values = state.gamma.data().to_vec();
    let predictions: Vec<usize> = (0..split.test_ids.len())
        .map(|i| {
            let per_class: Vec<f64> = (0..classes)
                .map(|c| match pc.scope {
                    LayerScope::LastOnly => tape.value(scores[0]).get(i, c),
                    LayerScope::All => {
                        scores.iter().zip(&gamma_values).map(|(&s, g)| g * tape.value(s).get(i, c)).sum()
                    }
                })
                .collect();
            argmax(&per_class)
        })
        .collect();
    let correct = predictions.iter().zip(&test_labels).filter(|(p, y)| p == y).count();

    let mut full_anchors = vec![Tensor::zeros(classes, cfg.hidden); l_max + 1];
    let mut full_theta = vec![Tensor::zeros(classes, cfg.hidden); l_max + 1];
    for (k, &l) in layers.iter().enumerate() {
        full_anchors[l] = tape.value(anchors[k]).clone();
        if let Some(t) = state.theta.get(k) {
            full_theta[l] = t.clone();
        }
    }
    let prompt_trainable = state.theta.iter().map(Tensor::len).sum::<usize>() + if gamma_learned { l_max + 1 } else { 0 };
    Ok(PromptOutcome {
        accuracy: correct as f64 / split.test_ids.len() as f64,
        test_ids: split.test_ids.clone(),
        predictions,
        losses,
        gamma: gamma_values,
        encoder_trainable: count_trainable(&state.params, Stage::Prompt),
        prompt_trainable,
        seconds: start.elapsed().as_secs_f64(),
        peak_tape_bytes: peak,
        params: state.params,
        prompts: ClassPromptSet { anchors: full_anchors, theta: full_theta },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphstore::{generate, kshot_split, SynthSpec};
    use crate::numcore::AdamConfig;

    fn setup(h: f64, seed: u64) -> (Dataset, EncoderConfig, EncoderParams, SplitSpec) {
        let g = generate(&SynthSpec {
            nodes: 120,
            edges: 480,
            classes: 3,
            features: 12,
            homophily: h,
            signal: 0.8,
            seed,
            ..SynthSpec::default()
        })
        .unwrap();
        let cfg = EncoderConfig::new(12, 16, 2);
        let params = EncoderParams::init(&cfg, seed).unwrap();
        let split = kshot_split(&g, 5, seed).unwrap();
        (Dataset::Node(g), cfg, params, split)
    }

    fn short(epochs: usize, lr: f64) -> PromptConfig {
        PromptConfig { epochs, adam: AdamConfig::with_lr(lr), ..PromptConfig::default() }
    }

    #[test]
    fn zero_learning_rate_matches_prototype() {
        let (data, cfg, params, split) = setup(0.5, 1);
        let proto = run_prompt_tune(&params, &cfg, &data, &split, &PromptConfig::prototype()).unwrap();
        let frozen = run_prompt_tune(&params, &cfg, &data, &split, &short(5, 0.0)).unwrap();
        assert_eq!(proto.predictions, frozen.predictions);
        assert_eq!(proto.prompt_trainable, 3);
        assert_eq!(proto.encoder_trainable, 0);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (data, cfg, params, split) = setup(0.3, 2);
        let a = run_prompt_tune(&params, &cfg, &data, &split, &short(8, 1e-2)).unwrap();
        let b = run_prompt_tune(&params, &cfg, &data, &split, &short(8, 1e-2)).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.gamma, b.gamma);
    }

    #[test]
    fn learns_on_homophilous_graph() {
        let (data, cfg, params, split) = setup(0.9, 3);
        let out = run_prompt_tune(&params, &cfg, &data, &split, &short(30, 1e-2)).unwrap();
        assert!(out.accuracy > 1.0 / 3.0 + 0.3, "accuracy {}", out.accuracy);
    }

    #[test]
    fn loss_goes_down() {
        let (data, cfg, params, split) = setup(0.5, 4);
        let out = run_prompt_tune(&params, &cfg, &data, &split, &short(10, 1e-2)).unwrap();
        assert_eq!(out.losses.len(), 10);
        assert!(out.losses[9] < out.losses[0], "{:?}", out.losses);
    }

    #[test]
    fn edge_subset_counts_selected_edges() {
        let (data, cfg, params, split) = setup(0.5, 5);
        let pc = PromptConfig { glora: GloraMode::EdgeSubset, ..short(2, 1e-3) };
        let out = run_prompt_tune(&params, &cfg, &data, &split, &pc).unwrap();
        let g = data.as_graph().unwrap();
        let edges = incident_edges(g, &split.train_ids).len();
        let adapters = 2 * (16 * 8 + 16 * 8) + 2 * edges;
        assert_eq!(out.encoder_trainable, adapters);
        assert_eq!(out.prompt_trainable, 3 * 3 * 16 + 3);
    }

    #[test]
    fn scope_and_gamma_variants_run() {
        let (data, cfg, params, split) = setup(0.5, 6);
        let last = PromptConfig { scope: LayerScope::LastOnly, ..short(3, 1e-3) };
        let out = run_prompt_tune(&params, &cfg, &data, &split, &last).unwrap();
        assert_eq!(out.prompt_trainable, 3 * 16);
        let fixed = PromptConfig { gamma: GammaMode::Fixed, ..short(3, 1e-3) };
        let out = run_prompt_tune(&params, &cfg, &data, &split, &fixed).unwrap();
        assert_eq!(out.gamma, vec![1.0; 3]);
    }

    #[test]
    fn rejects_feature_mismatch() {
        let (data, _, _, split) = setup(0.5, 7);
        let cfg = EncoderConfig::new(5, 16, 2);
        let params = EncoderParams::init(&cfg, 0).unwrap();
        let err = run_prompt_tune(&params, &cfg, &data, &split, &short(1, 1e-3)).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }
}
