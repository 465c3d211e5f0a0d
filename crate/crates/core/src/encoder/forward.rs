use std::sync::Arc;

use super::{AdjAdapter, EncoderConfig, EncoderParams, GloraMode, Stage};
use crate::numcore::{NumError, SparseMatrix, Tape, Tensor, Var};
use crate::{Error, Result};

/// Per-layer embeddings `H⁽⁰⁾ … H⁽ᴸ⁾`, each `N × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStack {
    pub layers: Vec<Tensor>,
}

impl EmbeddingStack {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn last(&self) -> &Tensor {
        self.layers.last().expect("non-empty stack")
    }

    pub fn max_abs_diff(&self, other: &EmbeddingStack) -> Option<f64> {
        if self.len() != other.len() {
            return None;
        }
        self.layers.iter().zip(&other.layers).try_fold(0.0f64, |m, (a, b)| Some(m.max(a.max_abs_diff(b)?)))
    }
}

/// A normalized adjacency, possibly a block of a larger one, together with
/// the index data the adjacency adapters need.
#[derive(Clone, Debug)]
pub struct AdjView {
    pub matrix: Arc<SparseMatrix>,
    /// Global ids of the block's nodes, ascending; `None` for a full matrix.
    pub nodes: Option<Arc<[usize]>>,
    edge_map: Option<Arc<[Option<usize>]>>,
}

impl AdjView {
    pub fn full(matrix: Arc<SparseMatrix>) -> Self {
        Self { matrix, nodes: None, edge_map: None }
    }

    /// The block of `full` on `nodes` (ascending global ids).
    pub fn block(full: &SparseMatrix, nodes: Vec<usize>) -> Self {
        let matrix = Arc::new(full.submatrix(&nodes));
        Self { matrix, nodes: Some(nodes.into()), edge_map: None }
    }

    pub fn num_nodes(&self) -> usize {
        self.matrix.rows()
    }

    /// Links every stored entry on a selected edge (in either direction) to
    /// that edge's weight slot. Edges with an endpoint outside the block are
    /// ignored.
    pub fn with_edges(mut self, edges: &[(usize, usize)]) -> Result<Self> {
        let local = |v: usize| match &self.nodes {
            None => Some(v),
            Some(nodes) => nodes.binary_search(&v).ok(),
        };
        let mut map = vec![None; self.matrix.nnz()];
        for (k, &(u, v)) in edges.iter().enumerate() {
            let (Some(lu), Some(lv)) = (local(u), local(v)) else { continue };
            for (r, c) in [(lu, lv), (lv, lu)] {
                let pos = self
                    .matrix
                    .position(r, c)
                    .ok_or_else(|| Error::Config(format!("selected edge ({u}, {v}) is not in the adjacency")))?;
                map[pos] = Some(k);
            }
        }
        self.edge_map = Some(map.into());
        Ok(self)
    }
}

#[derive(Clone, Debug)]
enum AdjVars {
    RankOne { pa: Var, qa: Var },
    Edges(Var),
}

#[derive(Clone, Debug)]
struct LayerVars {
    w0: Var,
    glora: Option<(Var, Var, Option<AdjVars>)>,
}

/// Tape handles for every encoder tensor.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    w_in: Var,
    layers: Vec<LayerVars>,
    named: Vec<(String, Var)>,
}

impl EncoderVars {
    /// Handles in the order of [`EncoderParams::named_tensors`].
    pub fn named(&self) -> &[(String, Var)] {
        &self.named
    }
}

/// Records every parameter on the tape; those that `stage` trains become
/// differentiable leaves, the rest constants.
pub fn bind(tape: &mut Tape, params: &EncoderParams, stage: Stage) -> EncoderVars {
    let base_trains = stage != Stage::Prompt;
    let adapter_trains = stage != Stage::Pretrain;
    let mut put = |t: &Tensor, trains: bool| if trains { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
    let mut named = Vec::new();
    let w_in = put(&params.w_in, base_trains);
    named.push(("w_in".to_string(), w_in));
    let mut layers = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let w0 = put(&layer.w0, base_trains);
        named.push((format!("layer{l}.w0"), w0));
        let glora = layer.glora.as_ref().map(|g| {
            let p = put(&g.p, adapter_trains);
            let q = put(&g.q, adapter_trains);
            named.push((format!("layer{l}.p"), p));
            named.push((format!("layer{l}.q"), q));
            let adj = g.adj.as_ref().map(|a| match a {
                AdjAdapter::RankOne { pa, qa } => {
                    let pa = put(pa, adapter_trains);
                    let qa = put(qa, adapter_trains);
                    named.push((format!("layer{l}.pa"), pa));
                    named.push((format!("layer{l}.qa"), qa));
                    AdjVars::RankOne { pa, qa }
                }
                AdjAdapter::Edges { weights } => {
                    let w = put(weights, adapter_trains);
                    named.push((format!("layer{l}.edge_w"), w));
                    AdjVars::Edges(w)
                }
            });
            (p, q, adj)
        });
        layers.push(LayerVars { w0, glora });
    }
    EncoderVars { w_in, layers, named }
}

/// Records the encoder on the tape and returns `H⁽⁰⁾ … H⁽ᴸ⁾`.
///
/// `H⁽⁰⁾ = X·W_in`, then each layer computes
/// `(Â + PA·QAᵀ) · H · (W0 + P·Qᵀ)` with ReLU on all but the last layer.
/// The adjacency term is applied as a sparse product plus a rank-one
/// correction, or as per-edge offsets in edge-subset mode.
pub fn forward_on_tape(
    tape: &mut Tape,
    adj: &AdjView,
    x: Var,
    cfg: &EncoderConfig,
    vars: &EncoderVars,
) -> Result<Vec<Var>> {
    if vars.layers.len() != cfg.layers {
        return Err(Error::Config(format!("config has {} layers, parameters {}", cfg.layers, vars.layers.len())));
    }
    let has_glora = vars.layers.iter().any(|l| l.glora.is_some());
    if cfg.glora == GloraMode::Off && has_glora {
        return Err(NumError::Contract("adapter parameters present while glora mode is off".into()).into());
    }
    let n = adj.num_nodes();
    if adj.matrix.cols() != n || tape.shape(x).0 != n {
        return Err(NumError::Dimension { op: "encoder_forward", left: adj.matrix.shape(), right: tape.shape(x) }.into());
    }
    let mut h = tape.matmul(x, vars.w_in)?;
    let mut out = vec![h];
    for (l, layer) in vars.layers.iter().enumerate() {
        let base = tape.matmul(h, layer.w0)?;
        let hw = match &layer.glora {
            Some((p, q, _)) => {
                let hp = tape.matmul(h, *p)?;
                let qt = tape.transpose(*q)?;
                let delta = tape.matmul(hp, qt)?;
                tape.add(base, delta)?
            }
            None => base,
        };
        let agg = match layer.glora.as_ref().and_then(|g| g.2.as_ref()) {
            None => tape.spmm(&adj.matrix, hw)?,
            Some(AdjVars::RankOne { pa, qa }) => {
                let (pa, qa) = match &adj.nodes {
                    Some(nodes) => (tape.gather_rows(*pa, nodes)?, tape.gather_rows(*qa, nodes)?),
                    None => (*pa, *qa),
                };
                tape.rank_one_update_spmm(&adj.matrix, pa, qa, hw)?
            }
            Some(AdjVars::Edges(w)) => {
                let map = adj
                    .edge_map
                    .clone()
                    .ok_or_else(|| NumError::Contract("edge adapter needs an adjacency with an edge map".into()))?;
                let values = tape.offset_values(&adj.matrix, *w, map)?;
                tape.spmm_values(&adj.matrix, values, hw)?
            }
        };
        h = if l + 1 < cfg.layers { tape.relu(agg)? } else { agg };
        out.push(h);
    }
    Ok(out)
}

/// Evaluates the encoder on a full graph without keeping the tape.
pub fn encoder_forward(adj: &SparseMatrix, x: &Tensor, cfg: &EncoderConfig, params: &EncoderParams) -> Result<EmbeddingStack> {
    let mut view = AdjView::full(Arc::new(adj.clone()));
    if let Some(edges) = &params.selected_edges {
        view = view.with_edges(edges)?;
    }
    let mut tape = Tape::new();
    let vars = bind(&mut tape, params, Stage::Prompt);
    let xv = tape.constant(x.clone());
    let hs = forward_on_tape(&mut tape, &view, xv, cfg, &vars)?;
    Ok(EmbeddingStack { layers: hs.into_iter().map(|v| tape.value(v).clone()).collect() })
}
