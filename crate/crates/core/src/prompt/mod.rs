//! Hop-specific prompting: per-layer item tokens, class prompts built from
//! training-item means plus learnable offsets, cosine scores per layer,
//! hop coefficients and the tuning loop.

mod tokens;
mod tune;

pub use tokens::{graph_tokens, node_tokens, TaskContext, TaskTokens};
pub use tune::{
    incident_edges, run_prompt_tune, GammaMode, LayerScope, PromptConfig, PromptOutcome,
};

use serde::{Deserialize, Serialize};

use crate::numcore::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Per-layer class prompts: `anchors[l]` are class means of layer-`l`
/// training tokens, `theta[l]` a learned offset; both `C × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPromptSet {
    pub anchors: Vec<Tensor>,
    pub theta: Vec<Tensor>,
}

impl ClassPromptSet {
    pub fn num_layers(&self) -> usize {
        self.anchors.len()
    }

    /// `anchors[l] + theta[l]`.
    pub fn prompt(&self, l: usize) -> Tensor {
        self.anchors[l].add(&self.theta[l]).expect("matching shapes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopCoefficients {
    pub gamma: Vec<f64>,
    pub alpha: f64,
}

/// `γˡ = α(1−α)ˡ` for `l < L` and `γᴸ = (1−α)ᴸ`, which sum to one.
pub fn init_gamma(alpha: f64, layers: usize) -> Result<HopCoefficients> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if layers == 0 {
        return Err(Error::Config("need at least one layer".into()));
    }
    let mut gamma: Vec<f64> = (0..layers).map(|l| alpha * (1.0 - alpha).powi(l as i32)).collect();
    gamma.push((1.0 - alpha).powi(layers as i32));
    Ok(HopCoefficients { gamma, alpha })
}

/// Class means of one layer's tokens on the tape, `C × d`.
pub fn class_anchors_on_tape(tape: &mut Tape, tokens: Var, labels: &[usize], num_classes: usize) -> Result<Var> {
    if tape.shape(tokens).0 != labels.len() {
        return Err(Error::Config(format!("{} tokens but {} labels", tape.shape(tokens).0, labels.len())));
    }
    let mut rows = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            return Err(Error::Config(format!("class {c} has no training items")));
        }
        let members = tape.gather_rows(tokens, &idx)?;
        rows.push(tape.mean_rows(members)?);
    }
    Ok(tape.concat_rows(&rows)?)
}

/// Anchors from training tokens with zero offsets.
pub fn init_class_prompts(tokens: &[TaskTokens], labels: &[usize], num_classes: usize) -> Result<ClassPromptSet> {
    let Some(first) = tokens.first() else {
        return Err(Error::Config("no training tokens".into()));
    };
    let layers = first.layers.len();
    let mut tape = Tape::new();
    let mut anchors = Vec::with_capacity(layers);
    for l in 0..layers {
        let rows: Vec<Var> = tokens.iter().map(|t| tape.constant(t.layers[l].clone())).collect();
        let stacked = tape.concat_rows(&rows)?;
        let a = class_anchors_on_tape(&mut tape, stacked, labels, num_classes)?;
        anchors.push(tape.value(a).clone());
    }
    let theta = anchors.iter().map(|a| Tensor::zeros(a.rows(), a.cols())).collect();
    Ok(ClassPromptSet { anchors, theta })
}

/// `S⁽ˡ⁾[c] = cos(token_l, prompt_l[c])` for every layer.
pub fn hop_scores(tokens: &TaskTokens, prompts: &ClassPromptSet) -> Result<Vec<Vec<f64>>> {
    if tokens.layers.len() != prompts.num_layers() {
        return Err(Error::Config(format!(
            "{} token layers but {} prompt layers",
            tokens.layers.len(),
            prompts.num_layers()
        )));
    }
    let mut tape = Tape::new();
    let mut out = Vec::with_capacity(tokens.layers.len());
    for (l, t) in tokens.layers.iter().enumerate() {
        let h = tape.constant(t.clone());
        let p = tape.constant(prompts.prompt(l));
        let s = tape.row_cosine_sim(h, p)?;
        out.push(tape.value(s).data().to_vec());
    }
    Ok(out)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `S̃ = Σ_l γˡ S⁽ˡ⁾` and its argmax.
pub fn aggregate_and_predict(scores: &[Vec<f64>], gamma: &[f64]) -> Result<(Vec<f64>, usize)> {
    if scores.len() != gamma.len() || scores.is_empty() {
        return Err(Error::Config(format!("{} score layers but {} coefficients", scores.len(), gamma.len())));
    }
    let c = scores[0].len();
    if scores.iter().any(|s| s.len() != c) {
        return Err(Error::Config("score rows differ in length".into()));
    }
    let mut agg = vec![0.0; c];
    for (s, g) in scores.iter().zip(gamma) {
        for (a, v) in agg.iter_mut().zip(s) {
            *a += g * v;
        }
    }
    let pred = argmax(&agg);
    Ok((agg, pred))
}

/// `Σ_l` softmax cross-entropy of the layer-`l` cosine scores between
/// `tokens[l]` and `prompts[l]` at temperature `tau`, each averaged over items.
pub fn downstream_loss(tape: &mut Tape, tokens: &[Var], prompts: &[Var], labels: &[usize], tau: f64) -> Result<Var> {
    if tokens.len() != prompts.len() || tokens.is_empty() {
        return Err(Error::Config(format!("{} token layers but {} prompt layers", tokens.len(), prompts.len())));
    }
    let mut terms = Vec::with_capacity(tokens.len());
    for (&t, &p) in tokens.iter().zip(prompts) {
        let s = tape.row_cosine_sim(t, p)?;
        terms.push(tape.softmax_nll(s, labels, tau)?);
    }
    let ones = tape.constant(Tensor::ones(1, terms.len()));
    Ok(tape.linear_combination(&terms, ones)?)
}
