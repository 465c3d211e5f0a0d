//! Graph data model, dataset ingestion, homophily measurement, splits,
//! synthetic rewiring and ego-network extraction.

mod ego;
mod generate;
mod graph;
mod homophily;
mod io;
mod rewire;
mod split;

pub use ego::{build_graph_task, ego_network, ego_nodes, EgoNet};
pub use generate::{generate, Mixing, SynthSpec};
pub use graph::{normalize_adjacency, Graph, GraphSet};
pub use homophily::{histogram, homophily_ratio, local_hop_counts, local_hop_homophily, RingCounts};
pub use io::{load_dataset, load_meta, save_dataset, Dataset, Meta, TaskKind};
pub use rewire::{achievable_range, synth_rewire, REWIRE_TOLERANCE};
pub use split::{fraction_split, fraction_split_set, kshot_split, kshot_split_set, SplitSpec};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {what}: expected {expected}, found {found}", path.display())]
    Mismatch { path: PathBuf, what: String, expected: usize, found: usize },
    #[error("{}:{line}: label {label} outside [0, {num_classes})", path.display())]
    LabelOutOfRange { path: PathBuf, line: usize, label: i64, num_classes: usize },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("homophily ratio undefined: no edge joins two labeled nodes")]
    UndefinedRatio,
    #[error("graph has no labels")]
    MissingLabels,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("split failed: {0}")]
    Split(String),
    #[error(
        "homophily target {target} infeasible: achievable range [{lo:.4}, {hi:.4}]{}",
        achieved.map(|a| format!(", reached {a:.4}")).unwrap_or_default()
    )]
    Infeasible { target: f64, lo: f64, hi: f64, achieved: Option<f64> },
}
