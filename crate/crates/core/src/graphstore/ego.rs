use super::homophily::bfs_distances;
use super::{Graph, GraphError, GraphSet};

/// Induced subgraph on all nodes within `hops` of a center.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoNet {
    pub graph: Graph,
    /// Index of the center inside `graph`.
    pub center: usize,
    /// Original id of each local node, ascending.
    pub nodes: Vec<usize>,
}

/// Node ids within `hops` of `v`, ascending.
pub fn ego_nodes(g: &Graph, v: usize, hops: usize) -> Vec<usize> {
    bfs_distances(g, v, hops)
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|_| i))
        .collect()
}

/// Extracts the `hops`-hop ego network of `v`, relabeling nodes contiguously
/// in ascending order of their original ids.
pub fn ego_network(g: &Graph, v: usize, hops: usize) -> Result<EgoNet, GraphError> {
    if v >= g.num_nodes() {
        return Err(GraphError::Parameter(format!("node {v} outside [0, {})", g.num_nodes())));
    }
    let nodes = ego_nodes(g, v, hops);
    let mut local = vec![usize::MAX; g.num_nodes()];
    for (i, &n) in nodes.iter().enumerate() {
        local[n] = i;
    }
    let edges = g
        .edges()
        .iter()
        .filter(|&&(a, b)| local[a] != usize::MAX && local[b] != usize::MAX)
        .map(|&(a, b)| (local[a], local[b]))
        .collect();
    let features = g.features().select_rows(&nodes);
    let labels = g.labels().map(|l| nodes.iter().map(|&n| l[n]).collect());
    let graph = Graph::new(nodes.len(), edges, features, labels, g.num_classes())?;
    Ok(EgoNet { graph, center: local[v], nodes })
}

/// One ego network per labeled node, labeled with its center's label.
pub fn build_graph_task(g: &Graph, hops: usize) -> Result<GraphSet, GraphError> {
    if !g.has_labels() {
        return Err(GraphError::MissingLabels);
    }
    let mut graphs = Vec::new();
    let mut labels = Vec::new();
    for v in 0..g.num_nodes() {
        let Some(y) = g.label(v) else { continue };
        let ego = ego_network(g, v, hops)?;
        // Member graphs carry only a graph-level label.
        let item = Graph::new(
            ego.graph.num_nodes(),
            ego.graph.edges().to_vec(),
            ego.graph.features().clone(),
            None,
            g.num_classes(),
        )?;
        graphs.push(item);
        labels.push(y);
    }
    GraphSet::new(graphs, labels, g.num_classes())
}
