use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError};
use crate::numcore::Tensor;

/// Recipe for a labeled random graph with Gaussian class-conditional
/// features and a chosen fraction of same-label edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub nodes: usize,
    pub edges: usize,
    pub classes: usize,
    pub features: usize,
    /// Expected fraction of same-label edges.
    pub homophily: f64,
    /// Scale of the class means relative to unit feature noise.
    pub signal: f64,
    pub seed: u64,
    #[serde(default)]
    pub mixing: Mixing,
}

/// How the partner class of a cross-label edge is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    /// Any other class, uniformly.
    #[default]
    Uniform,
    /// Class `c` links to class `c + 1 (mod C)`, so the neighborhood still
    /// identifies the label.
    Cyclic,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { nodes: 500, edges: 2500, classes: 5, features: 32, homophily: 0.5, signal: 0.5, seed: 0, mixing: Mixing::Uniform }
    }
}

/// Samples a graph from `spec`. Labels are balanced and shuffled; each edge
/// picks a uniform endpoint and then a partner from the same class with
/// probability `homophily`, otherwise from another class.
pub fn generate(spec: &SynthSpec) -> Result<Graph, GraphError> {
    let SynthSpec { nodes: n, edges: m, classes: c, features: f, homophily: h, signal, seed, mixing } = *spec;
    if n < 2 || c < 2 || c > n || f == 0 {
        return Err(GraphError::Parameter(format!("need 2 <= classes <= nodes and features > 0, got {spec:?}")));
    }
    if !(0.0..=1.0).contains(&h) || !signal.is_finite() {
        return Err(GraphError::Parameter(format!("homophily {h} or signal {signal} out of range")));
    }
    if m > n * (n - 1) / 4 {
        return Err(GraphError::Parameter(format!("{m} edges is too dense for {n} nodes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let mut members = vec![Vec::new(); c];
    for (v, &l) in labels.iter().enumerate() {
        members[l].push(v);
    }

    let means: Vec<f64> = (0..c * f).map(|_| signal * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    let mut data = Vec::with_capacity(n * f);
    for &l in &labels {
        for j in 0..f {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(means[l * f + j] + noise);
        }
    }
    let features = Tensor::new(n, f, data).map_err(|e| GraphError::Invalid(e.to_string()))?;

    let mut seen = HashSet::with_capacity(m);
    let mut attempts = 0usize;
    while seen.len() < m {
        attempts += 1;
        if attempts > 100 * m + 1000 {
            return Err(GraphError::Parameter(format!("could not place {m} distinct edges")));
        }
        let u = rng.random_range(0..n);
        let lu = labels[u];
        let v = if rng.random::<f64>() < h {
            let pool = &members[lu];
            if pool.len() < 2 {
                continue;
            }
            pool[rng.random_range(0..pool.len())]
        } else {
            let other = match mixing {
                Mixing::Uniform => {
                    let o = rng.random_range(0..c - 1);
                    o + usize::from(o >= lu)
                }
                Mixing::Cyclic => (lu + 1) % c,
            };
            let pool = &members[other];
            pool[rng.random_range(0..pool.len())]
        };
        if u != v {
            seen.insert((u.min(v), u.max(v)));
        }
    }
    let mut edges: Vec<_> = seen.into_iter().collect();
    edges.sort_unstable();
    Graph::new(n, edges, features, Some(labels.into_iter().map(Some).collect()), c)
}
