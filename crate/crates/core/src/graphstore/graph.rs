use sha2::{Digest, Sha256};

use super::GraphError;
use crate::numcore::{SparseMatrix, Tensor};

/// Undirected attributed graph.
///
/// Edges are stored once per unordered pair as `(u, v)` with `u < v`, sorted.
/// Labels, when present, may mark individual nodes as unlabeled.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Tensor,
    labels: Option<Vec<Option<usize>>>,
    num_classes: usize,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Option<Vec<Option<usize>>>,
        num_classes: usize,
    ) -> Result<Self, GraphError> {
        if features.rows() != num_nodes {
            return Err(GraphError::Invalid(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                num_nodes
            )));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::Invalid(format!("edge ({u}, {v}) outside [0, {num_nodes})")));
            }
            if u == v {
                return Err(GraphError::Invalid(format!("self-loop on node {u}")));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::Invalid(format!("duplicate edge {:?}", w[0])));
        }
        if let Some(labels) = &labels {
            if labels.len() != num_nodes {
                return Err(GraphError::Invalid(format!("{} labels for {} nodes", labels.len(), num_nodes)));
            }
            if let Some((i, l)) = labels.iter().enumerate().find_map(|(i, l)| l.filter(|&l| l >= num_classes).map(|l| (i, l))) {
                return Err(GraphError::Invalid(format!("node {i} has label {l} but num_classes = {num_classes}")));
            }
        }
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(u, v) in &canon {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        neighbors.iter_mut().for_each(|n| n.sort_unstable());
        Ok(Self { num_nodes, edges: canon, neighbors, features, labels, num_classes })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l[v])
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.as_ref().is_some_and(|l| l.iter().all(Option::is_some))
    }

    /// Labeled node ids grouped by class.
    pub fn nodes_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        if let Some(labels) = &self.labels {
            for (i, l) in labels.iter().enumerate() {
                if let Some(c) = l {
                    out[*c].push(i);
                }
            }
        }
        out
    }

    /// Replaces the edge set, keeping nodes, features and labels.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        Self::new(self.num_nodes, edges, self.features.clone(), self.labels.clone(), self.num_classes)
    }

    /// Binary adjacency (no self-loops) in CSR form.
    pub fn adjacency(&self) -> SparseMatrix {
        let trip = self
            .edges
            .iter()
            .flat_map(|&(u, v)| [(u, v, 1.0), (v, u, 1.0)])
            .collect();
        SparseMatrix::from_triplets(self.num_nodes, self.num_nodes, trip).expect("edges are validated")
    }

    /// Stable digest of structure, features and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_nodes as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for &(u, v) in &self.edges {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        h.update((self.features.cols() as u64).to_le_bytes());
        for x in self.features.data() {
            h.update(x.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for l in labels {
                h.update(l.map_or(-1i64, |c| c as i64).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Graphs sharing a feature width, each carrying one graph-level label.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSet {
    graphs: Vec<Graph>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl GraphSet {
    pub fn new(graphs: Vec<Graph>, labels: Vec<usize>, num_classes: usize) -> Result<Self, GraphError> {
        if graphs.len() != labels.len() {
            return Err(GraphError::Invalid(format!("{} graphs but {} labels", graphs.len(), labels.len())));
        }
        if let Some(f) = graphs.first().map(Graph::num_features) {
            if let Some((i, g)) = graphs.iter().enumerate().find(|(_, g)| g.num_features() != f) {
                return Err(GraphError::Invalid(format!(
                    "graph {i} has {} features, expected {f}",
                    g.num_features()
                )));
            }
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(GraphError::Invalid(format!("graph {i} has label {l} but num_classes = {num_classes}")));
        }
        Ok(Self { graphs, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.graphs.first().map_or(0, Graph::num_features)
    }

    pub fn avg_nodes(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(Graph::num_nodes).sum::<usize>() as f64 / self.graphs.len() as f64
    }

    pub fn avg_edges(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(Graph::num_edges).sum::<usize>() as f64 / self.graphs.len() as f64
    }

    /// Item ids grouped by graph label.
    pub fn items_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (g, l) in self.graphs.iter().zip(&self.labels) {
            h.update(g.content_hash().as_bytes());
            h.update((*l as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `D̂^{-1/2}(A + I)D̂^{-1/2}` with D̂ the degree matrix including self-loops.
pub fn normalize_adjacency(g: &Graph) -> SparseMatrix {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n).map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt()).collect();
    let mut trip = Vec::with_capacity(n + 2 * g.num_edges());
    for v in 0..n {
        trip.push((v, v, inv_sqrt[v] * inv_sqrt[v]));
    }
    for &(u, v) in g.edges() {
        let w = inv_sqrt[u] * inv_sqrt[v];
        trip.push((u, v, w));
        trip.push((v, u, w));
    }
    SparseMatrix::from_triplets(n, n, trip).expect("edges are validated")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges.to_vec(), Tensor::zeros(n, 1), None, 1).unwrap()
    }

    #[test]
    fn canonicalizes_orientation() {
        let g = graph(3, &[(2, 1), (0, 1)]);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.neighbors(1), &[0, 2]);
    }

    #[test]
    fn rejects_self_loops_duplicates_and_range() {
        let f = || Tensor::zeros(3, 1);
        assert!(Graph::new(3, vec![(1, 1)], f(), None, 1).is_err());
        assert!(Graph::new(3, vec![(0, 1), (1, 0)], f(), None, 1).is_err());
        assert!(Graph::new(3, vec![(0, 3)], f(), None, 1).is_err());
        assert!(Graph::new(3, vec![], f(), Some(vec![Some(0), Some(2), None]), 2).is_err());
    }

    #[test]
    fn single_node_normalizes_to_one() {
        let a = normalize_adjacency(&graph(1, &[]));
        assert_eq!(a.to_dense().data(), &[1.0]);
    }

    #[test]
    fn single_edge_normalizes_to_half() {
        let a = normalize_adjacency(&graph(2, &[(0, 1)]));
        for v in a.to_dense().data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalized_adjacency_is_symmetric() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 3), (0, 3), (4, 5), (1, 4)]);
        let d = normalize_adjacency(&g).to_dense();
        assert!(d.max_abs_diff(&d.transpose()).unwrap() < 1e-12);
    }
}
