use std::collections::VecDeque;

use super::{Graph, GraphError};

/// Fraction of edges (between labeled endpoints) joining same-label nodes.
pub fn homophily_ratio(g: &Graph) -> Result<f64, GraphError> {
    let (same, total) = intra_edge_counts(g)?;
    if total == 0 {
        return Err(GraphError::UndefinedRatio);
    }
    Ok(same as f64 / total as f64)
}

/// (same-label edges, edges with both endpoints labeled).
pub(crate) fn intra_edge_counts(g: &Graph) -> Result<(usize, usize), GraphError> {
    if !g.has_labels() {
        return Err(GraphError::MissingLabels);
    }
    let mut same = 0;
    let mut total = 0;
    for &(u, v) in g.edges() {
        if let (Some(a), Some(b)) = (g.label(u), g.label(v)) {
            total += 1;
            same += usize::from(a == b);
        }
    }
    Ok((same, total))
}

/// Per-node counts at exactly shortest-path distance `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RingCounts {
    /// Labeled ring members sharing the center's label.
    pub same: usize,
    /// Labeled ring members.
    pub total: usize,
}

/// BFS distances from `src`, truncated at `max_depth`.
pub(crate) fn bfs_distances(g: &Graph, src: usize, max_depth: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.num_nodes()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        if du == max_depth {
            continue;
        }
        for &w in g.neighbors(u) {
            if dist[w].is_none() {
                dist[w] = Some(du + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Ring counts per node; `None` for unlabeled centers.
///
/// Distances from the center inside the subgraph induced by its `k`-hop ball
/// equal global BFS distances (every shortest path to a node at distance ≤ k
/// stays inside the ball), so the ring is found by a plain truncated BFS.
pub fn local_hop_counts(g: &Graph, k: usize) -> Result<Vec<Option<RingCounts>>, GraphError> {
    if k < 1 {
        return Err(GraphError::Parameter(format!("hop k must be >= 1, got {k}")));
    }
    if !g.has_labels() {
        return Err(GraphError::MissingLabels);
    }
    Ok((0..g.num_nodes())
        .map(|i| {
            let yi = g.label(i)?;
            let dist = bfs_distances(g, i, k);
            let mut counts = RingCounts { same: 0, total: 0 };
            for (j, d) in dist.iter().enumerate() {
                if *d == Some(k) {
                    if let Some(yj) = g.label(j) {
                        counts.total += 1;
                        counts.same += usize::from(yi == yj);
                    }
                }
            }
            Some(counts)
        })
        .collect())
}

/// Hop-wise local homophily per node. `None` marks an undefined value
/// (unlabeled center or empty labeled `k`-ring); it is never encoded as 0.
pub fn local_hop_homophily(g: &Graph, k: usize) -> Result<Vec<Option<f64>>, GraphError> {
    Ok(local_hop_counts(g, k)?
        .into_iter()
        .map(|c| c.filter(|c| c.total > 0).map(|c| c.same as f64 / c.total as f64))
        .collect())
}

/// Histogram of defined values over `bins` equal-width bins on [0, 1].
pub fn histogram(values: &[Option<f64>], bins: usize) -> Vec<usize> {
    let mut out = vec![0; bins];
    for v in values.iter().flatten() {
        let b = ((v * bins as f64) as usize).min(bins - 1);
        out[b] += 1;
    }
    out
}
