use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::homophily::intra_edge_counts;
use super::{Graph, GraphError};

/// Accepted deviation of the achieved ratio from the target.
pub const REWIRE_TOLERANCE: f64 = 0.02;

/// Swap attempts allowed per edge.
const ATTEMPTS_PER_EDGE: usize = 50;

/// Bounds on the homophily ratio reachable while keeping the degree sequence
/// and label assignment fixed.
pub fn achievable_range(g: &Graph) -> Result<(f64, f64), GraphError> {
    if !g.is_fully_labeled() {
        return Err(GraphError::Parameter("rewiring needs every node labeled".into()));
    }
    let e = g.num_edges();
    if e == 0 {
        return Err(GraphError::UndefinedRatio);
    }
    let c = g.num_classes();
    let mut vol = vec![0usize; c];
    let mut size = vec![0usize; c];
    for v in 0..g.num_nodes() {
        let l = g.label(v).expect("fully labeled");
        vol[l] += g.degree(v);
        size[l] += 1;
    }
    let hi: usize = (0..c).map(|k| (vol[k] / 2).min(size[k] * size[k].saturating_sub(1) / 2)).sum();
    // Stubs of class k beyond those of all other classes must pair internally.
    let lo: usize = (0..c).map(|k| vol[k].saturating_sub(e)).sum();
    Ok((lo as f64 / e as f64, hi.min(e) as f64 / e as f64))
}

/// Rewires `g` by degree-preserving double-edge swaps until its homophily
/// ratio is within [`REWIRE_TOLERANCE`] of `target_h`.
///
/// A swap replaces `(a,b),(c,d)` with `(a,c),(b,d)` or `(a,d),(b,c)` and is
/// accepted only if it moves the same-label edge count toward the target and
/// creates neither a self-loop nor a duplicate edge. Gives up after
/// `50 · E` attempts.
pub fn synth_rewire(g: &Graph, target_h: f64, seed: u64) -> Result<Graph, GraphError> {
    if !(target_h > 0.0 && target_h < 1.0) {
        return Err(GraphError::Parameter(format!("target homophily must lie in (0, 1), got {target_h}")));
    }
    let (lo, hi) = achievable_range(g)?;
    if target_h < lo - REWIRE_TOLERANCE || target_h > hi + REWIRE_TOLERANCE {
        return Err(GraphError::Infeasible { target: target_h, lo, hi, achieved: None });
    }
    let e = g.num_edges();
    let label = |v: usize| g.label(v).expect("fully labeled");
    let same = |u: usize, v: usize| i64::from(label(u) == label(v));

    let mut edges = g.edges().to_vec();
    let mut present: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let (intra, _) = intra_edge_counts(g)?;
    let mut intra = intra as i64;
    let goal = (target_h * e as f64).round() as i64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = |u: usize, v: usize| (u.min(v), u.max(v));
    let mut attempts = 0;
    while (intra - goal).abs() > 0 && attempts < ATTEMPTS_PER_EDGE * e && e >= 2 {
        attempts += 1;
        let i = rng.random_range(0..e);
        let j = rng.random_range(0..e);
        if i == j {
            continue;
        }
        let (a, b) = edges[i];
        let (c, d) = edges[j];
        let (x, y) = if rng.random_bool(0.5) { ((a, c), (b, d)) } else { ((a, d), (b, c)) };
        if x.0 == x.1 || y.0 == y.1 {
            continue;
        }
        let (nx, ny) = (key(x.0, x.1), key(y.0, y.1));
        if nx == ny || present.contains(&nx) || present.contains(&ny) {
            continue;
        }
        let delta = same(x.0, x.1) + same(y.0, y.1) - same(a, b) - same(c, d);
        if (intra + delta - goal).abs() >= (intra - goal).abs() {
            continue;
        }
        present.remove(&(a, b));
        present.remove(&(c, d));
        present.insert(nx);
        present.insert(ny);
        edges[i] = nx;
        edges[j] = ny;
        intra += delta;
    }
    let achieved = intra as f64 / e as f64;
    if (achieved - target_h).abs() > REWIRE_TOLERANCE {
        return Err(GraphError::Infeasible { target: target_h, lo, hi, achieved: Some(achieved) });
    }
    g.with_edges(edges)
}
