#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dagprompt::encoder::{bind, forward_on_tape, AdjAdapter, AdjView, EncoderConfig, EncoderParams, GloraMode, Stage};
use dagprompt::graphstore::{generate, normalize_adjacency, Graph, SynthSpec};
use dagprompt::numcore::{SparseMatrix, Tape, Tensor, Var};
use dagprompt::pretrain::{build_triplets, pretrain_loss};
use dagprompt::prompt::{class_anchors_on_tape, downstream_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures_dir().join(name)
}

pub fn bundled_fixtures() -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(fixtures_dir())
        .expect("fixtures directory")
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").exists())
        .collect();
    out.sort();
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in ±[0.1, 1], kept away from zero so ReLU kinks and
/// cosine norms stay well conditioned.
pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

pub fn random_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> SparseMatrix {
    let mut trip = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.random::<f64>() < density {
                trip.push((r, c, rng.random_range(-1.0..1.0)));
            }
        }
    }
    SparseMatrix::from_triplets(rows, cols, trip).unwrap()
}

/// Plain triple loop, independent of the library kernels.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(i, p) * b.get(p, j);
            }
            out[i * m + j] = s;
        }
    }
    Tensor::new(n, m, out).unwrap()
}

pub fn dense_add(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.rows(), a.cols(), data).unwrap()
}

/// Worst elementwise relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

/// Compares tape gradients against central differences. `build` records a
/// scalar loss from the given tensors and returns it with the handles whose
/// gradients are checked, in input order.
pub fn gradient_check<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Tensor]) -> (Var, Vec<Var>),
{
    let mut tape = Tape::new();
    let (loss, wrt) = build(&mut tape, inputs);
    assert_eq!(wrt.len(), inputs.len());
    let grads = tape.backward(loss).unwrap();
    let eval = |ts: &[Tensor]| {
        let mut t = Tape::new();
        let (l, _) = build(&mut t, ts);
        t.value(l).item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; x.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut dp = x.data().to_vec();
            let mut dm = x.data().to_vec();
            dp[i] += FD_STEP;
            dm[i] -= FD_STEP;
            plus[k] = Tensor::new(x.rows(), x.cols(), dp).unwrap();
            minus[k] = Tensor::new(x.rows(), x.cols(), dm).unwrap();
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        let numeric = Tensor::new(x.rows(), x.cols(), numeric).unwrap();
        worst = worst.max(max_rel_err(&grads.get(wrt[k]), &numeric, FD_FLOOR));
    }
    worst
}

/// Reduces any matrix to a scalar through fixed random weights on both
/// sides, so every entry influences the loss with a distinct coefficient.
pub fn contract(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let (n, m) = tape.shape(y);
    let mut r = rng(seed);
    let left = tape.constant(random_tensor(&mut r, 1, n));
    let right = tape.constant(random_tensor(&mut r, m, 1));
    let ly = tape.matmul(left, y).unwrap();
    tape.matmul(ly, right).unwrap()
}

/// Worst relative error of every differentiable tape operation.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let a = random_tensor(&mut r, 4, 3);
    let b = random_tensor(&mut r, 3, 5);
    let c = random_tensor(&mut r, 4, 3);
    let s = Arc::new(random_sparse(&mut r, 4, 4, 0.5));
    let d = random_tensor(&mut r, 4, 3);
    let p = random_tensor(&mut r, 4, 1);
    let q = random_tensor(&mut r, 4, 1);
    let vals = random_tensor(&mut r, s.nnz(), 1);
    let edge_w = random_tensor(&mut r, 3, 1);
    let map: Arc<[Option<usize>]> = (0..s.nnz()).map(|k| if k % 2 == 0 { Some(k % 3) } else { None }).collect();
    let protos = random_tensor(&mut r, 5, 3);
    let coeffs = random_tensor(&mut r, 1, 3);
    let scores = random_tensor(&mut r, 4, 3);

    let mut out = Vec::new();
    out.push(("matmul", gradient_check(&[a.clone(), b.clone()], |t, x| {
        let (u, v) = (t.leaf(x[0].clone()), t.leaf(x[1].clone()));
        let y = t.matmul(u, v).unwrap();
        (contract(t, y, 1), vec![u, v])
    })));
    out.push(("transpose", gradient_check(&[a.clone()], |t, x| {
        let u = t.leaf(x[0].clone());
        let y = t.transpose(u).unwrap();
        (contract(t, y, 2), vec![u])
    })));
    out.push(("add", gradient_check(&[a.clone(), c.clone()], |t, x| {
        let (u, v) = (t.leaf(x[0].clone()), t.leaf(x[1].clone()));
        let y = t.add(u, v).unwrap();
        (contract(t, y, 3), vec![u, v])
    })));
    out.push(("sub", gradient_check(&[a.clone(), c.clone()], |t, x| {
        let (u, v) = (t.leaf(x[0].clone()), t.leaf(x[1].clone()));
        let y = t.sub(u, v).unwrap();
        (contract(t, y, 4), vec![u, v])
    })));
    out.push(("scale", gradient_check(&[a.clone()], |t, x| {
        let u = t.leaf(x[0].clone());
        let y = t.scale(u, -1.7).unwrap();
        (contract(t, y, 5), vec![u])
    })));
    out.push(("relu", gradient_check(&[a.clone()], |t, x| {
        let u = t.leaf(x[0].clone());
        let y = t.relu(u).unwrap();
        (contract(t, y, 6), vec![u])
    })));
    out.push(("spmm", gradient_check(&[d.clone()], |t, x| {
        let u = t.leaf(x[0].clone());
        let y = t.spmm(&s, u).unwrap();
        (contract(t, y, 7), vec![u])
    })));
    out.push(("spmm_values", gradient_check(&[vals.clone(), d.clone()], |t, x| {
        let (v, u) = (t.leaf(x[0].clone()), t.leaf(x[1].clone()));
        let y = t.spmm_values(&s, v, u).unwrap();
        (contract(t, y, 8), vec![v, u])
    })));
    out.push(("offset_values", gradient_check(&[edge_w.clone(), d.clone()], |t, x| {
        let (w, u) = (t.leaf(x[0].clone()), t.leaf(x[1].clone()));
        let v = t.offset_values(&s, w, Arc::clone(&map)).unwrap();
        let y = t.spmm_values(&s, v, u).unwrap();
        (contract(t, y, 9), vec![w, u])
    })));
    out.push(("rank_one_update_spmm", gradient_check(&[p.clone(), q.clone(), d.clone()], |t, x| {
        let (pp, qq, u) = (t.leaf(x[0].clone()), t.leaf(x[1].clone()), t.leaf(x[2].clone()));
        let y = t.rank_one_update_spmm(&s, pp, qq, u).unwrap();
        (contract(t, y, 10), vec![pp, qq, u])
    })));
    out.push(("gather_rows", gradient_check(&[a.clone()], |t, x| {
        let u = t.leaf(x[0].clone());
        let y = t.gather_rows(u, &[3, 0, 3, 1]).unwrap();
        (contract(t, y, 11), vec![u])
    })));
    out.push(("concat_rows", gradient_check(&[a.clone(), c.clone()], |t, x| {
        let (u, v) = (t.leaf(x[0].clone()), t.leaf(x[1].clone()));
        let y = t.concat_rows(&[u, v, u]).unwrap();
        (contract(t, y, 12), vec![u, v])
    })));
    out.push(("concat_cols", gradient_check(&[a.clone(), c.clone()], |t, x| {
        let (u, v) = (t.leaf(x[0].clone()), t.leaf(x[1].clone()));
        let y = t.concat_cols(&[v, u]).unwrap();
        (contract(t, y, 13), vec![u, v])
    })));
    out.push(("row_cosine_sim", gradient_check(&[a.clone(), protos.clone()], |t, x| {
        let (u, v) = (t.leaf(x[0].clone()), t.leaf(x[1].clone()));
        let y = t.row_cosine_sim(u, v).unwrap();
        (contract(t, y, 14), vec![u, v])
    })));
    out.push(("rowwise_cosine", gradient_check(&[a.clone(), c.clone()], |t, x| {
        let (u, v) = (t.leaf(x[0].clone()), t.leaf(x[1].clone()));
        let y = t.rowwise_cosine(u, v).unwrap();
        (contract(t, y, 15), vec![u, v])
    })));
    out.push(("softmax_nll", gradient_check(&[scores.clone()], |t, x| {
        let u = t.leaf(x[0].clone());
        (t.softmax_nll(u, &[0, 2, 1, 2], 0.5).unwrap(), vec![u])
    })));
    out.push(("sum", gradient_check(&[a.clone()], |t, x| {
        let u = t.leaf(x[0].clone());
        let y = t.scale(u, 1.3).unwrap();
        (t.sum(y).unwrap(), vec![u])
    })));
    out.push(("mean_rows", gradient_check(&[a.clone()], |t, x| {
        let u = t.leaf(x[0].clone());
        let y = t.mean_rows(u).unwrap();
        (contract(t, y, 16), vec![u])
    })));
    out.push(("linear_combination", gradient_check(&[a.clone(), c.clone(), d.clone(), coeffs.clone()], |t, x| {
        let vs: Vec<Var> = x.iter().map(|v| t.leaf(v.clone())).collect();
        let y = t.linear_combination(&vs[..3], vs[3]).unwrap();
        (contract(t, y, 17), vs)
    })));
    out
}

/// Eight-node graph with three classes used by the composite checks.
pub fn small_graph() -> Graph {
    generate(&SynthSpec { nodes: 8, edges: 12, classes: 3, features: 4, homophily: 0.4, signal: 1.0, seed: 5, ..SynthSpec::default() })
        .unwrap()
}

fn params_from(template: &EncoderParams, tensors: &[Tensor]) -> EncoderParams {
    let mut p = template.clone();
    for ((_, slot), t) in p.named_tensors_mut().into_iter().zip(tensors) {
        *slot = t.clone();
    }
    p
}

/// Link-prediction loss through a two-layer encoder on the small graph,
/// checked with respect to every base weight.
pub fn pretrain_composite_error() -> f64 {
    let g = small_graph();
    let cfg = EncoderConfig::new(4, 3, 2).with_glora(GloraMode::Off, 1);
    let template = EncoderParams::init(&cfg, 3).unwrap();
    let adj = Arc::new(normalize_adjacency(&g));
    let triplets = build_triplets(&g, 1, 9).unwrap();
    let inputs: Vec<Tensor> = template.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
    gradient_check(&inputs, |tape, ts| {
        let params = params_from(&template, ts);
        let vars = bind(tape, &params, Stage::Pretrain);
        let x = tape.constant(g.features().clone());
        let hs = forward_on_tape(tape, &AdjView::full(Arc::clone(&adj)), x, &cfg, &vars).unwrap();
        let loss = pretrain_loss(tape, &adj, *hs.last().unwrap(), &triplets, 0.5).unwrap();
        (loss, vars.named().iter().map(|(_, v)| *v).collect())
    })
}

/// Layer-wise prompt loss through an adapted encoder, with respect to the
/// base weights, every adapter factor and the prompt offsets.
pub fn prompt_composite_error(mode: GloraMode) -> f64 {
    let g = small_graph();
    let cfg = EncoderConfig::new(4, 5, 2).with_glora(mode, 2);
    let mut template = EncoderParams::init(&cfg, 4).unwrap();
    let target = match mode {
        GloraMode::EdgeSubset => dagprompt::encoder::AdapterTarget::Edges(g.edges()[..5].to_vec()),
        _ => dagprompt::encoder::AdapterTarget::Nodes(8),
    };
    template.attach_glora(&cfg, &target, 1).unwrap();
    let mut r = rng(23);
    for layer in &mut template.layers {
        let gl = layer.glora.as_mut().unwrap();
        gl.q = random_tensor(&mut r, gl.q.rows(), gl.q.cols()).map(|v| 0.3 * v);
        match gl.adj.as_mut().unwrap() {
            AdjAdapter::RankOne { qa, .. } => *qa = random_tensor(&mut r, qa.rows(), 1).map(|v| 0.2 * v),
            AdjAdapter::Edges { weights } => *weights = random_tensor(&mut r, weights.rows(), 1).map(|v| 0.2 * v),
        }
    }
    let adj = normalize_adjacency(&g);
    let view = match mode {
        GloraMode::EdgeSubset => AdjView::full(Arc::new(adj.clone())).with_edges(&g.edges()[..5]).unwrap(),
        _ => AdjView::full(Arc::new(adj.clone())),
    };
    let train: Vec<usize> = (0..8).collect();
    let labels: Vec<usize> = train.iter().map(|&v| g.label(v).unwrap()).collect();
    let n_params = template.named_tensors().len();
    let mut inputs: Vec<Tensor> = template.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
    for _ in 0..=2 {
        inputs.push(random_tensor(&mut r, 3, 5).map(|v| 0.1 * v));
    }
    gradient_check(&inputs, |tape, ts| {
        let params = params_from(&template, &ts[..n_params]);
        let vars = bind(tape, &params, Stage::FineTune);
        let x = tape.constant(g.features().clone());
        let hs = forward_on_tape(tape, &view, x, &cfg, &vars).unwrap();
        let thetas: Vec<Var> = ts[n_params..].iter().map(|t| tape.leaf(t.clone())).collect();
        let mut prompts = Vec::new();
        for (l, &h) in hs.iter().enumerate() {
            let anchor = class_anchors_on_tape(tape, h, &labels, 3).unwrap();
            prompts.push(tape.add(anchor, thetas[l]).unwrap());
        }
        let loss = downstream_loss(tape, &hs, &prompts, &labels, 0.5).unwrap();
        let mut wrt: Vec<Var> = vars.named().iter().map(|(_, v)| *v).collect();
        wrt.extend(thetas);
        (loss, wrt)
    })
}
