//! On-disk dataset directories.
//!
//! ```text
//! meta.json     {"name", "num_nodes", "num_features", "num_classes", "task": "node" | "graph"}
//! edges.tsv     u<TAB>v per line, u < v, sorted, no duplicates, no self-loops
//! features.csv  N rows of F comma-separated floats
//! labels.csv    N rows, one integer per line, -1 for unlabeled
//! graphs.jsonl  graph tasks: {"edges": [[u,v],...], "features": [[...],...], "label": int}
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, GraphSet};
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Node,
    Graph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    /// Node count; for graph tasks the total over all member graphs.
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_graphs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Node(Graph),
    Graphs(GraphSet),
}

impl Dataset {
    pub fn num_features(&self) -> usize {
        match self {
            Dataset::Node(g) => g.num_features(),
            Dataset::Graphs(s) => s.num_features(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Dataset::Node(g) => g.num_classes(),
            Dataset::Graphs(s) => s.num_classes(),
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            Dataset::Node(_) => TaskKind::Node,
            Dataset::Graphs(_) => TaskKind::Graph,
        }
    }

    pub fn content_hash(&self) -> String {
        match self {
            Dataset::Node(g) => g.content_hash(),
            Dataset::Graphs(s) => s.content_hash(),
        }
    }

    pub fn as_graph(&self) -> Option<&Graph> {
        match self {
            Dataset::Node(g) => Some(g),
            Dataset::Graphs(_) => None,
        }
    }

    pub fn as_graph_set(&self) -> Option<&GraphSet> {
        match self {
            Dataset::Node(_) => None,
            Dataset::Graphs(s) => Some(s),
        }
    }
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io { path: path.to_path_buf(), source })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

pub fn load_meta(dir: &Path) -> Result<Meta, GraphError> {
    let path = dir.join("meta.json");
    let text = read(&path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(&path, e.line(), e.to_string()))
}

/// Loads and validates a dataset directory. Malformed input is rejected.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, GraphError> {
    let dir = dir.as_ref();
    let meta = load_meta(dir)?;
    match meta.task {
        TaskKind::Node => load_node_dataset(dir, &meta).map(Dataset::Node),
        TaskKind::Graph => load_graph_dataset(dir, &meta).map(Dataset::Graphs),
    }
}

fn load_node_dataset(dir: &Path, meta: &Meta) -> Result<Graph, GraphError> {
    let edges = parse_edges(&dir.join("edges.tsv"), meta.num_nodes)?;
    let features = parse_features(&dir.join("features.csv"), meta.num_nodes, meta.num_features)?;
    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        Some(parse_labels(&labels_path, meta.num_nodes, meta.num_classes)?)
    } else {
        None
    };
    Graph::new(meta.num_nodes, edges, features, labels, meta.num_classes)
}

fn parse_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>, GraphError> {
    let text = read(path)?;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, lineno, "expected two tab-separated columns"));
        };
        let u: usize = a.trim().parse().map_err(|_| parse_err(path, lineno, format!("bad node id {a:?}")))?;
        let v: usize = b.trim().parse().map_err(|_| parse_err(path, lineno, format!("bad node id {b:?}")))?;
        if u >= v {
            return Err(parse_err(path, lineno, format!("edge ({u}, {v}) must satisfy u < v")));
        }
        if v >= n {
            return Err(parse_err(path, lineno, format!("node {v} out of range for num_nodes = {n}")));
        }
        if let Some(&prev) = edges.last() {
            if prev >= (u, v) {
                return Err(parse_err(path, lineno, format!("edge ({u}, {v}) is not strictly after {prev:?}")));
            }
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn parse_features(path: &Path, n: usize, f: usize) -> Result<Tensor, GraphError> {
    let text = read(path)?;
    let mut data = Vec::with_capacity(n * f);
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let before = data.len();
        for tok in line.split(',') {
            let x: f64 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad number {tok:?}")))?;
            if !x.is_finite() {
                return Err(parse_err(path, lineno, "non-finite feature"));
            }
            data.push(x);
        }
        if data.len() - before != f {
            return Err(GraphError::Mismatch {
                path: path.to_path_buf(),
                what: format!("feature columns on line {lineno}"),
                expected: f,
                found: data.len() - before,
            });
        }
        rows += 1;
    }
    if rows != n {
        return Err(GraphError::Mismatch { path: path.to_path_buf(), what: "feature rows".into(), expected: n, found: rows });
    }
    Ok(Tensor::new(n, f, data).expect("shape checked"))
}

fn parse_labels(path: &Path, n: usize, c: usize) -> Result<Vec<Option<usize>>, GraphError> {
    let text = read(path)?;
    let mut labels = Vec::with_capacity(n);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let l: i64 = line.trim().parse().map_err(|_| parse_err(path, lineno, format!("bad label {line:?}")))?;
        match l {
            -1 => labels.push(None),
            l if l >= 0 && (l as usize) < c => labels.push(Some(l as usize)),
            l => {
                return Err(GraphError::LabelOutOfRange { path: path.to_path_buf(), line: lineno, label: l, num_classes: c })
            }
        }
    }
    if labels.len() != n {
        return Err(GraphError::Mismatch { path: path.to_path_buf(), what: "label rows".into(), expected: n, found: labels.len() });
    }
    Ok(labels)
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    label: i64,
}

fn load_graph_dataset(dir: &Path, meta: &Meta) -> Result<GraphSet, GraphError> {
    let path = dir.join("graphs.jsonl");
    let text = read(&path)?;
    let mut graphs = Vec::new();
    let mut labels = Vec::new();
    let mut total_nodes = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let rec: GraphRecord = serde_json::from_str(line).map_err(|e| parse_err(&path, lineno, e.to_string()))?;
        if rec.label < 0 || rec.label as usize >= meta.num_classes {
            return Err(GraphError::LabelOutOfRange {
                path: path.clone(),
                line: lineno,
                label: rec.label,
                num_classes: meta.num_classes,
            });
        }
        let n = rec.features.len();
        if let Some(row) = rec.features.iter().find(|r| r.len() != meta.num_features) {
            return Err(GraphError::Mismatch {
                path: path.clone(),
                what: format!("feature width on line {lineno}"),
                expected: meta.num_features,
                found: row.len(),
            });
        }
        let features = Tensor::from_rows(&rec.features)
            .map_err(|e| parse_err(&path, lineno, e.to_string()))?;
        let features = if n == 0 { Tensor::zeros(0, meta.num_features) } else { features };
        let edges = rec.edges.iter().map(|e| (e[0], e[1])).collect();
        let g = Graph::new(n, edges, features, None, meta.num_classes)
            .map_err(|e| parse_err(&path, lineno, e.to_string()))?;
        total_nodes += n;
        graphs.push(g);
        labels.push(rec.label as usize);
    }
    if let Some(expected) = meta.num_graphs {
        if expected != graphs.len() {
            return Err(GraphError::Mismatch { path, what: "graph count".into(), expected, found: graphs.len() });
        }
    }
    if total_nodes != meta.num_nodes {
        return Err(GraphError::Mismatch { path, what: "total node count".into(), expected: meta.num_nodes, found: total_nodes });
    }
    GraphSet::new(graphs, labels, meta.num_classes)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, GraphError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|source| GraphError::Io { path: path.to_path_buf(), source })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io { path: path.to_path_buf(), source }
}

fn write_meta(dir: &Path, meta: &Meta) -> Result<(), GraphError> {
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

fn write_feature_row(out: &mut impl Write, row: &[f64]) -> std::io::Result<()> {
    for (j, x) in row.iter().enumerate() {
        if j > 0 {
            out.write_all(b",")?;
        }
        write!(out, "{x}")?;
    }
    out.write_all(b"\n")
}

/// Writes a dataset directory that [`load_dataset`] reads back exactly.
pub fn save_dataset(dir: impl AsRef<Path>, name: &str, data: &Dataset) -> Result<PathBuf, GraphError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    match data {
        Dataset::Node(g) => {
            write_meta(
                dir,
                &Meta {
                    name: name.into(),
                    num_nodes: g.num_nodes(),
                    num_features: g.num_features(),
                    num_classes: g.num_classes(),
                    task: TaskKind::Node,
                    num_graphs: None,
                },
            )?;
            let path = dir.join("edges.tsv");
            let mut out = create(&path)?;
            for (u, v) in g.edges() {
                writeln!(out, "{u}\t{v}").map_err(io_err(&path))?;
            }
            out.flush().map_err(io_err(&path))?;

            let path = dir.join("features.csv");
            let mut out = create(&path)?;
            for r in 0..g.num_nodes() {
                write_feature_row(&mut out, g.features().row(r)).map_err(io_err(&path))?;
            }
            out.flush().map_err(io_err(&path))?;

            if let Some(labels) = g.labels() {
                let path = dir.join("labels.csv");
                let mut out = create(&path)?;
                for l in labels {
                    writeln!(out, "{}", l.map_or(-1, |c| c as i64)).map_err(io_err(&path))?;
                }
                out.flush().map_err(io_err(&path))?;
            }
        }
        Dataset::Graphs(set) => {
            write_meta(
                dir,
                &Meta {
                    name: name.into(),
                    num_nodes: set.graphs().iter().map(Graph::num_nodes).sum(),
                    num_features: set.num_features(),
                    num_classes: set.num_classes(),
                    task: TaskKind::Graph,
                    num_graphs: Some(set.len()),
                },
            )?;
            let path = dir.join("graphs.jsonl");
            let mut out = create(&path)?;
            for (g, &label) in set.graphs().iter().zip(set.labels()) {
                let rec = GraphRecord {
                    edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
                    features: (0..g.num_nodes()).map(|r| g.features().row(r).to_vec()).collect(),
                    label: label as i64,
                };
                serde_json::to_writer(&mut out, &rec).map_err(|e| io_err(&path)(e.into()))?;
                out.write_all(b"\n").map_err(io_err(&path))?;
            }
            out.flush().map_err(io_err(&path))?;
        }
    }
    Ok(dir.to_path_buf())
}
