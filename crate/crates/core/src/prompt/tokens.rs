use std::sync::Arc;

use crate::encoder::{bind, forward_on_tape, AdjView, EncoderConfig, EncoderParams, EncoderVars, Stage};
use crate::graphstore::{ego_nodes, normalize_adjacency, Graph, GraphSet};
use crate::numcore::{SparseMatrix, Tape, Tensor, Var};
use crate::{Error, Result};

/// Per-layer tokens of one item, each `1 × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTokens {
    pub layers: Vec<Tensor>,
}

enum Source<'a> {
    Node { graph: &'a Graph, adj: Arc<SparseMatrix>, full: AdjView, ego: bool },
    Graphs { set: &'a GraphSet, views: Vec<AdjView> },
}

/// A node- or graph-classification task prepared for repeated encoding.
pub struct TaskContext<'a> {
    source: Source<'a>,
    edges: Option<Arc<[(usize, usize)]>>,
}

impl<'a> TaskContext<'a> {
    /// Node task. With `ego`, each node is encoded on its own ego network
    /// instead of through one full-graph pass.
    pub fn node(graph: &'a Graph, ego: bool) -> Self {
        let adj = Arc::new(normalize_adjacency(graph));
        let full = AdjView::full(Arc::clone(&adj));
        Self { source: Source::Node { graph, adj, full, ego }, edges: None }
    }

    pub fn graphs(set: &'a GraphSet) -> Self {
        let views = set.graphs().iter().map(|g| AdjView::full(Arc::new(normalize_adjacency(g)))).collect();
        Self { source: Source::Graphs { set, views }, edges: None }
    }

    /// Registers the edges that carry adapter weights.
    pub fn with_edges(mut self, edges: Option<Arc<[(usize, usize)]>>) -> Result<Self> {
        if let (Some(e), Source::Node { full, .. }) = (&edges, &mut self.source) {
            *full = full.clone().with_edges(e)?;
        }
        self.edges = edges;
        Ok(self)
    }

    pub fn is_node_task(&self) -> bool {
        matches!(self.source, Source::Node { .. })
    }

    pub fn num_items(&self) -> usize {
        match &self.source {
            Source::Node { graph, .. } => graph.num_nodes(),
            Source::Graphs { set, .. } => set.len(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match &self.source {
            Source::Node { graph, .. } => graph.num_classes(),
            Source::Graphs { set, .. } => set.num_classes(),
        }
    }

    pub fn num_features(&self) -> usize {
        match &self.source {
            Source::Node { graph, .. } => graph.num_features(),
            Source::Graphs { set, .. } => set.num_features(),
        }
    }

    pub fn label(&self, id: usize) -> Option<usize> {
        match &self.source {
            Source::Node { graph, .. } => graph.label(id),
            Source::Graphs { set, .. } => set.labels().get(id).copied(),
        }
    }

    pub fn labels_of(&self, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&i| self.label(i).ok_or_else(|| Error::Config(format!("item {i} has no label"))))
            .collect()
    }

    /// Tokens of `ids` on the tape: one `ids.len() × d` matrix per layer.
    /// Graph items are mean-pooled; nodes take their own row.
    pub fn tokens_on_tape(
        &self,
        tape: &mut Tape,
        cfg: &EncoderConfig,
        vars: &EncoderVars,
        ids: &[usize],
    ) -> Result<Vec<Var>> {
        if ids.is_empty() {
            return Err(Error::Config("no items to encode".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.num_items()) {
            return Err(Error::Config(format!("item {bad} out of range ({})", self.num_items())));
        }
        match &self.source {
            Source::Node { graph, full, ego: false, .. } => {
                let x = tape.constant(graph.features().clone());
                let hs = forward_on_tape(tape, full, x, cfg, vars)?;
                hs.into_iter().map(|h| Ok(tape.gather_rows(h, ids)?)).collect()
            }
            Source::Node { graph, adj, ego: true, .. } => {
                let mut per_item = Vec::with_capacity(ids.len());
                for &v in ids {
                    let nodes = ego_nodes(graph, v, cfg.layers);
                    let center = nodes.binary_search(&v).expect("center in ego net");
                    let x = tape.constant(graph.features().select_rows(&nodes));
                    let mut view = AdjView::block(adj, nodes);
                    if let Some(e) = &self.edges {
                        view = view.with_edges(e)?;
                    }
                    let hs = forward_on_tape(tape, &view, x, cfg, vars)?;
                    let rows = hs.into_iter().map(|h| tape.gather_rows(h, &[center])).collect::<Result<Vec<_>, _>>()?;
                    per_item.push(rows);
                }
                stack_layers(tape, per_item)
            }
            Source::Graphs { set, views } => {
                let mut per_item = Vec::with_capacity(ids.len());
                for &i in ids {
                    let g = &set.graphs()[i];
                    if g.num_nodes() == 0 {
                        return Err(Error::Config(format!("graph {i} is empty")));
                    }
                    let x = tape.constant(g.features().clone());
                    let hs = forward_on_tape(tape, &views[i], x, cfg, vars)?;
                    let rows = hs.into_iter().map(|h| tape.mean_rows(h)).collect::<Result<Vec<_>, _>>()?;
                    per_item.push(rows);
                }
                stack_layers(tape, per_item)
            }
        }
    }
}

fn stack_layers(tape: &mut Tape, per_item: Vec<Vec<Var>>) -> Result<Vec<Var>> {
    let layers = per_item[0].len();
    (0..layers)
        .map(|l| {
            let rows: Vec<Var> = per_item.iter().map(|r| r[l]).collect();
            Ok(tape.concat_rows(&rows)?)
        })
        .collect()
}

fn evaluate(ctx: &TaskContext, params: &EncoderParams, cfg: &EncoderConfig, id: usize) -> Result<TaskTokens> {
    let mut tape = Tape::new();
    let vars = bind(&mut tape, params, Stage::Prompt);
    let hs = ctx.tokens_on_tape(&mut tape, cfg, &vars, &[id])?;
    Ok(TaskTokens { layers: hs.into_iter().map(|v| tape.value(v).clone()).collect() })
}

/// Tokens of node `v` from the encoder run on its `L`-hop ego network.
pub fn node_tokens(g: &Graph, params: &EncoderParams, cfg: &EncoderConfig, v: usize) -> Result<TaskTokens> {
    let ctx = TaskContext::node(g, true).with_edges(params.selected_edges.clone())?;
    evaluate(&ctx, params, cfg, v)
}

/// Mean-pooled tokens of a whole graph.
pub fn graph_tokens(item: &Graph, params: &EncoderParams, cfg: &EncoderConfig) -> Result<TaskTokens> {
    if item.num_nodes() == 0 {
        return Err(Error::Config("cannot encode an empty graph".into()));
    }
    let set = GraphSet::new(vec![item.clone()], vec![0], 1)?;
    evaluate(&TaskContext::graphs(&set), params, cfg, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encoder_forward, GloraMode};
    use crate::graphstore::{generate, SynthSpec};

    fn cfg(f: usize) -> EncoderConfig {
        EncoderConfig::new(f, 6, 2).with_glora(GloraMode::Off, 1)
    }

    #[test]
    fn ego_tokens_match_full_graph_rows() {
        let g = generate(&SynthSpec { nodes: 40, edges: 70, features: 5, ..SynthSpec::default() }).unwrap();
        let p = EncoderParams::init(&cfg(5), 2).unwrap();
        let full = encoder_forward(&normalize_adjacency(&g), g.features(), &cfg(5), &p).unwrap();
        for v in [0, 7, 39] {
            let t = node_tokens(&g, &p, &cfg(5), v).unwrap();
            assert_eq!(t.layers.len(), 3);
            for (l, tok) in t.layers.iter().enumerate() {
                let row = Tensor::new(1, 6, full.layers[l].row(v).to_vec()).unwrap();
                assert!(tok.max_abs_diff(&row).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_node_uses_own_features() {
        let f = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]]).unwrap();
        let g = Graph::new(3, vec![(1, 2)], f, None, 1).unwrap();
        let p = EncoderParams::init(&cfg(2), 0).unwrap();
        let t = node_tokens(&g, &p, &cfg(2), 0).unwrap();
        let alone = Graph::new(1, vec![], Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap(), None, 1).unwrap();
        let s = encoder_forward(&normalize_adjacency(&alone), alone.features(), &cfg(2), &p).unwrap();
        for (tok, h) in t.layers.iter().zip(&s.layers) {
            assert_eq!(tok, h);
        }
    }

    #[test]
    fn mean_pool_readout() {
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let g = Graph::new(3, vec![(0, 1), (1, 2)], f, None, 1).unwrap();
        let p = EncoderParams::init(&cfg(2), 1).unwrap();
        let t = graph_tokens(&g, &p, &cfg(2)).unwrap();
        let s = encoder_forward(&normalize_adjacency(&g), g.features(), &cfg(2), &p).unwrap();
        for (tok, h) in t.layers.iter().zip(&s.layers) {
            for c in 0..6 {
                let mean = (h.get(0, c) + h.get(1, c) + h.get(2, c)) / 3.0;
                assert!((tok.get(0, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_node_graph_tokens_are_its_rows() {
        let g = Graph::new(1, vec![], Tensor::from_rows(&[vec![0.3, -0.4]]).unwrap(), None, 1).unwrap();
        let p = EncoderParams::init(&cfg(2), 1).unwrap();
        let t = graph_tokens(&g, &p, &cfg(2)).unwrap();
        let s = encoder_forward(&normalize_adjacency(&g), g.features(), &cfg(2), &p).unwrap();
        assert_eq!(t.layers, s.layers);
        assert_eq!(t, graph_tokens(&g.clone(), &p, &cfg(2)).unwrap());
    }
}
