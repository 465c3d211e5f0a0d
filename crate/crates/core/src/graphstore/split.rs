use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, GraphSet};

/// Train/test partition of labeled items (nodes or graphs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    /// Shots per class for k-shot splits; `None` for fractional splits.
    pub shots: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SplitSpec {
    /// Fraction of all labeled items used for training.
    pub fn label_ratio(&self, num_items: usize) -> f64 {
        self.train_ids.len() as f64 / num_items as f64
    }
}

/// `k` uniformly drawn labeled nodes per class for training; every other
/// labeled node is a test node.
pub fn kshot_split(g: &Graph, k: usize, seed: u64) -> Result<SplitSpec, GraphError> {
    if !g.has_labels() {
        return Err(GraphError::MissingLabels);
    }
    split_by_class(&g.nodes_by_class(), Quota::Shots(k), seed)
}

pub fn kshot_split_set(set: &GraphSet, k: usize, seed: u64) -> Result<SplitSpec, GraphError> {
    split_by_class(&set.items_by_class(), Quota::Shots(k), seed)
}

/// Stratified split putting `fraction` of each class in the training set.
pub fn fraction_split(g: &Graph, fraction: f64, seed: u64) -> Result<SplitSpec, GraphError> {
    if !g.has_labels() {
        return Err(GraphError::MissingLabels);
    }
    split_by_class(&g.nodes_by_class(), Quota::Fraction(fraction), seed)
}

pub fn fraction_split_set(set: &GraphSet, fraction: f64, seed: u64) -> Result<SplitSpec, GraphError> {
    split_by_class(&set.items_by_class(), Quota::Fraction(fraction), seed)
}

#[derive(Clone, Copy)]
enum Quota {
    Shots(usize),
    Fraction(f64),
}

fn split_by_class(by_class: &[Vec<usize>], quota: Quota, seed: u64) -> Result<SplitSpec, GraphError> {
    if let Quota::Fraction(f) = quota {
        if !(f > 0.0 && f < 1.0) {
            return Err(GraphError::Parameter(format!("train fraction must lie in (0, 1), got {f}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut warnings = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(GraphError::Split(format!("class {c} has no labeled items")));
        }
        let mut pool = members.clone();
        pool.shuffle(&mut rng);
        let take = match quota {
            Quota::Shots(k) => {
                if pool.len() < k {
                    warnings.push(format!("class {c} has only {} labeled items (< {k} shots)", pool.len()));
                }
                k.min(pool.len())
            }
            Quota::Fraction(f) => ((pool.len() as f64 * f).round() as usize).clamp(1, pool.len()),
        };
        train.extend_from_slice(&pool[..take]);
        test.extend_from_slice(&pool[take..]);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    train.sort_unstable();
    test.sort_unstable();
    let shots = match quota {
        Quota::Shots(k) => Some(k),
        Quota::Fraction(_) => None,
    };
    Ok(SplitSpec { train_ids: train, test_ids: test, shots, seed, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn two_class(n: usize) -> Graph {
        let labels = (0..n).map(|i| Some(i % 2)).collect();
        Graph::new(n, vec![], Tensor::zeros(n, 1), Some(labels), 2).unwrap()
    }

    #[test]
    fn one_shot_two_classes() {
        let s = kshot_split(&two_class(10), 1, 3).unwrap();
        assert_eq!(s.train_ids.len(), 2);
        assert_eq!(s.test_ids.len(), 8);
        assert!(s.train_ids.iter().all(|t| !s.test_ids.contains(t)));
    }

    #[test]
    fn deterministic_per_seed() {
        let g = two_class(40);
        assert_eq!(kshot_split(&g, 5, 11).unwrap(), kshot_split(&g, 5, 11).unwrap());
        assert_ne!(kshot_split(&g, 5, 11).unwrap().train_ids, kshot_split(&g, 5, 12).unwrap().train_ids);
    }

    #[test]
    fn empty_class_is_an_error() {
        let labels = vec![Some(0), Some(0), None];
        let g = Graph::new(3, vec![], Tensor::zeros(3, 1), Some(labels), 2).unwrap();
        assert!(matches!(kshot_split(&g, 1, 0), Err(GraphError::Split(_))));
    }

    #[test]
    fn small_class_takes_all_with_warning() {
        let labels = vec![Some(0), Some(0), Some(0), Some(1)];
        let g = Graph::new(4, vec![], Tensor::zeros(4, 1), Some(labels), 2).unwrap();
        let s = kshot_split(&g, 2, 0).unwrap();
        assert_eq!(s.train_ids.len(), 3);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn unlabeled_nodes_are_excluded() {
        let labels = vec![Some(0), None, Some(1), Some(0), Some(1), None];
        let g = Graph::new(6, vec![], Tensor::zeros(6, 1), Some(labels), 2).unwrap();
        let s = kshot_split(&g, 1, 5).unwrap();
        assert_eq!(s.train_ids.len() + s.test_ids.len(), 4);
    }

    #[test]
    fn half_split_is_stratified() {
        let s = fraction_split(&two_class(20), 0.5, 1).unwrap();
        assert_eq!(s.train_ids.len(), 10);
        assert_eq!(s.train_ids.iter().filter(|&&i| i % 2 == 0).count(), 5);
        assert!(s.shots.is_none());
    }
}
