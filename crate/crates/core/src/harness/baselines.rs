//! Supervised baselines: the encoder's last layer followed by a linear
//! head, trained end to end with cross-entropy.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{bind, count_trainable, EncoderConfig, EncoderParams, GloraMode, Stage};
use crate::graphstore::{Dataset, SplitSpec};
use crate::numcore::{AdamConfig, AdamState, NumError, Tape, Tensor};
use crate::prompt::{argmax, TaskContext};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SupervisedOutcome {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub losses: Vec<f64>,
    pub trainable: usize,
    pub seconds: f64,
    pub peak_tape_bytes: usize,
    pub params: EncoderParams,
    pub head: Tensor,
}

/// Trains `init` plus a fresh linear head on the training items and
/// reports test accuracy. Every encoder tensor is updated.
pub fn run_supervised(
    init: &EncoderParams,
    cfg: &EncoderConfig,
    data: &Dataset,
    split: &SplitSpec,
    sc: &SupervisedConfig,
) -> Result<SupervisedOutcome> {
    let start = Instant::now();
    let cfg = EncoderConfig { glora: GloraMode::Off, ..cfg.clone() };
    if data.num_features() != cfg.in_features {
        return Err(Error::Config(format!(
            "encoder expects {} input features, dataset has {}",
            cfg.in_features,
            data.num_features()
        )));
    }
    if split.train_ids.is_empty() || split.test_ids.is_empty() {
        return Err(Error::Config("split needs both training and test items".into()));
    }
    let ctx = match data {
        Dataset::Node(g) => TaskContext::node(g, false),
        Dataset::Graphs(s) => TaskContext::graphs(s),
    };
    let classes = ctx.num_classes();
    let train_labels = ctx.labels_of(&split.train_ids)?;
    let test_labels = ctx.labels_of(&split.test_ids)?;

    let mut params = init.base();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x6865_6164);
    let a = (6.0 / (cfg.hidden + classes) as f64).sqrt();
    let mut head = Tensor::new(cfg.hidden, classes, (0..cfg.hidden * classes).map(|_| rng.random_range(-a..a)).collect())?;
    let mut adam = {
        let mut refs: Vec<&Tensor> = params.named_tensors().into_iter().map(|(_, t)| t).collect();
        refs.push(&head);
        AdamState::new(sc.adam.clone(), &refs)
    };

    let logits_loss = |tape: &mut Tape, params: &EncoderParams, head: &Tensor, ids: &[usize], labels: &[usize]| {
        let vars = bind(tape, params, Stage::FineTune);
        let h = tape.leaf(head.clone());
        let tokens = ctx.tokens_on_tape(tape, &cfg, &vars, ids)?;
        let logits = tape.matmul(*tokens.last().expect("layers"), h)?;
        let loss = tape.softmax_nll(logits, labels, 1.0)?;
        Ok::<_, Error>((vars, h, logits, loss))
    };

    let mut losses = Vec::with_capacity(sc.epochs);
    let mut peak = 0;
    let mut best: Option<(f64, EncoderParams, Tensor)> = None;
    for epoch in 0..=sc.epochs {
        let mut tape = Tape::new();
        let (vars, hv, _, loss) = logits_loss(&mut tape, &params, &head, &split.train_ids, &train_labels)
            .map_err(|e| match e {
                Error::Num(e @ NumError::NonFinite { .. }) => {
                    Error::Diverged { stage: "supervised training", epoch, lr: sc.adam.lr, detail: e.to_string() }
                }
                other => other,
            })?;
        let value = tape.value(loss).data()[0];
        if best.as_ref().is_none_or(|(v, ..)| value < *v) {
            best = Some((value, params.clone(), head.clone()));
        }
        if epoch == sc.epochs {
            break;
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        peak = peak.max(tape.allocated_bytes());
        let mut gs: Vec<Tensor> = vars.named().iter().map(|(_, v)| grads.get(*v)).collect();
        gs.push(grads.get(hv));
        let mut targets: Vec<&mut Tensor> = params.named_tensors_mut().into_iter().map(|(_, t)| t).collect();
        targets.push(&mut head);
        adam.step(&mut targets, &gs.iter().collect::<Vec<_>>())?;
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged {
                stage: "supervised training",
                epoch,
                lr: sc.adam.lr,
                detail: "parameters became non-finite".into(),
            });
        }
    }
    let (_, params, head) = best.expect("evaluated at least once");
    let mut tape = Tape::new();
    let (_, _, logits, _) = logits_loss(&mut tape, &params, &head, &split.test_ids, &test_labels)?;
    let logits = tape.value(logits);
    let predictions: Vec<usize> = (0..split.test_ids.len()).map(|i| argmax(logits.row(i))).collect();
    let correct = predictions.iter().zip(&test_labels).filter(|(p, y)| p == y).count();
    Ok(SupervisedOutcome {
        accuracy: correct as f64 / split.test_ids.len() as f64,
        predictions,
        losses,
        trainable: count_trainable(&params, Stage::FineTune) + head.len(),
        seconds: start.elapsed().as_secs_f64(),
        peak_tape_bytes: peak,
        params,
        head,
    })
}
