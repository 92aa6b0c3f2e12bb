//! Self-supervised pretraining and supervised fine-tuning of one member.
//!
//! Pretraining minimizes binary cross-entropy of DistMult scores over graph
//! edges (label 1) and one freshly corrupted edge per positive per epoch
//! (label 0), in shuffled minibatches. Fine-tuning minimizes the mean Huber
//! residual of the bilinear head over the observed pairs, full batch, and
//! updates the encoder and the bilinear head; DistMult stays frozen.
//!
//! Both use AdamW with decoupled weight decay. The fine-tuning optimizer
//! state is owned by the caller so rounds resume where the last one stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{bilinear_on_tape, distmult_on_tape, dropout_mask, BilinearVars};
use crate::hetgraph::{sample_negative_edges_with, Edge, HetGraph};
use crate::model::{Encoder, ModelParams, ParamGroup};
use crate::numerics::{GradTape, Gradients, Tensor, Var};
use crate::rgcn::{forward_on_tape, EmbeddingMatrix, Propagation};
use crate::seed::{self, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Dropout off during fine-tuning (full batch is always used).
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 200,
            finetune_epochs: 100,
            pretrain_lr: 1e-3,
            finetune_lr: 5e-4,
            weight_decay: 1e-4,
            batch_size: 512,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.pretrain_lr", self.pretrain_lr),
            ("train.finetune_lr", self.finetune_lr),
            ("train.eps", self.eps),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        for (field, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, format!("{b} is outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// AdamW moments per parameter name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, cfg: &TrainConfig) -> Self {
        OptimizerState {
            learning_rate,
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn for_pretraining(cfg: &TrainConfig) -> Self {
        Self::new(cfg.pretrain_lr, cfg)
    }

    pub fn for_finetuning(cfg: &TrainConfig) -> Self {
        Self::new(cfg.finetune_lr, cfg)
    }

    /// One AdamW update of every parameter in `groups` that has a gradient.
    pub fn apply(&mut self, member: &mut ModelParams, grads: &Gradients, groups: &[ParamGroup]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (lr, wd, b1, b2, eps) = (
            self.learning_rate,
            self.weight_decay,
            self.beta1,
            self.beta2,
            self.eps,
        );
        for (name, param) in member.named_params_mut() {
            if !groups.contains(&ParamGroup::of(&name)) {
                continue;
            }
            let Some(g) = grads.get(&name) else { continue };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape()));
            let v = self
                .second
                .entry(name)
                .or_insert_with(|| Tensor::zeros(param.shape()));
            let iter = param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &gk), (mk, vk)) in iter {
                *mk = b1 * *mk + (1.0 - b1) * gk;
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                let update = (*mk / c1) / ((*vk / c2).sqrt() + eps);
                *p -= lr * (wd * *p + update);
            }
        }
        member.project();
    }
}

/// Records the encoder on `tape` and returns embeddings for `rows` (graph node ids).
pub fn embed_on_tape(
    tape: &mut GradTape,
    member: &ModelParams,
    prop: &Propagation,
    rows: Option<&[usize]>,
) -> Result<Var> {
    match &member.encoder {
        Encoder::Rgcn(p) => forward_on_tape(tape, p, prop, rows),
        Encoder::Free { nodes, table } => {
            let t = tape.param("free.embeddings", table);
            let idx = match rows {
                None => (0..nodes.len()).collect(),
                Some(rows) => rows
                    .iter()
                    .map(|r| {
                        nodes
                            .iter()
                            .position(|n| n == r)
                            .ok_or_else(|| Error::UnknownNode(r.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            tape.gather_rows(t, Arc::new(idx))
        }
    }
}

/// Eval-mode embeddings of `rows` (every encoder row when `None`).
pub fn embeddings(member: &ModelParams, prop: &Propagation, rows: Option<&[usize]>) -> Result<EmbeddingMatrix> {
    let mut tape = GradTape::new();
    let out = embed_on_tape(&mut tape, member, prop, rows)?;
    let values = tape.value(out).clone();
    if !values.is_finite() {
        return Err(Error::NonFinite("embeddings".into()));
    }
    let nodes = match (rows, &member.encoder) {
        (Some(r), _) => r.to_vec(),
        (None, Encoder::Rgcn(_)) => (0..prop.num_nodes()).collect(),
        (None, Encoder::Free { nodes, .. }) => nodes.clone(),
    };
    Ok(EmbeddingMatrix { nodes, values })
}

fn pretrain_batch_loss(
    tape: &mut GradTape,
    member: &ModelParams,
    prop: &Propagation,
    batch: &[Edge],
    labels: Arc<Vec<f64>>,
) -> Result<Var> {
    let x = embed_on_tape(tape, member, prop, None)?;
    let rel = tape.param("distmult.relations", &member.distmult.relations);
    let src = Arc::new(batch.iter().map(|e| e.src).collect::<Vec<_>>());
    let dst = Arc::new(batch.iter().map(|e| e.dst).collect::<Vec<_>>());
    let kinds = Arc::new(batch.iter().map(|e| e.relation).collect::<Vec<_>>());
    let xi = tape.gather_rows(x, src)?;
    let xj = tape.gather_rows(x, dst)?;
    let logits = distmult_on_tape(tape, xi, xj, rel, kinds)?;
    tape.bce_with_logits(logits, labels)
}

/// Loss of the pretraining objective for a fixed set of positives and negatives.
pub fn pretrain_loss_on_tape(
    tape: &mut GradTape,
    member: &ModelParams,
    prop: &Propagation,
    positives: &[Edge],
    negatives: &[Edge],
) -> Result<Var> {
    let mut batch = positives.to_vec();
    batch.extend_from_slice(negatives);
    let mut labels = vec![1.0; positives.len()];
    labels.resize(batch.len(), 0.0);
    pretrain_batch_loss(tape, member, prop, &batch, Arc::new(labels))
}

/// Negatives for one epoch. A relation that covers every non-loop pair has no
/// valid corruption under the default rule; self-loops are then admitted.
fn epoch_negatives(g: &HetGraph, edges: &[Edge], seed: u64) -> Result<Vec<Edge>> {
    match sample_negative_edges_with(g, edges, seed, false) {
        Err(Error::NegativeSaturation { .. }) => sample_negative_edges_with(g, edges, seed, true),
        other => other,
    }
}

/// Pretrains encoder and DistMult on the edges of `g`. Returns the mean
/// minibatch loss of each epoch. Draws come from `seed`'s streams
/// `shuffle` and `negatives/<epoch>`.
pub fn pretrain(
    member: &mut ModelParams,
    g: &HetGraph,
    prop: &Propagation,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    member.check_graph(prop)?;
    let edges = g.edges().to_vec();
    if edges.is_empty() || cfg.pretrain_epochs == 0 {
        return Ok(Vec::new());
    }
    let groups = [ParamGroup::Encoder, ParamGroup::DistMult];
    let mut opt = OptimizerState::for_pretraining(cfg);
    let mut shuffle = seed::stream(seed, &["shuffle"]);
    let mut order: Vec<usize> = (0..edges.len()).collect();
    let mut trace = Vec::with_capacity(cfg.pretrain_epochs);

    for epoch in 0..cfg.pretrain_epochs {
        let neg_seed = seed::derive_seed(seed, &["negatives", &epoch.to_string()]);
        let negatives = epoch_negatives(g, &edges, neg_seed)?;
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let pos: Vec<Edge> = chunk.iter().map(|&k| edges[k]).collect();
            let neg: Vec<Edge> = chunk.iter().map(|&k| negatives[k]).collect();
            let mut tape = GradTape::new();
            let loss = pretrain_loss_on_tape(&mut tape, member, prop, &pos, &neg)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    learning_rate: opt.learning_rate,
                    loss: value,
                });
            }
            total += value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            opt.apply(member, &grads, &groups);
        }
        trace.push(total / edges.len() as f64);
    }
    Ok(trace)
}

/// A revealed measurement: graph node ids of the two genes and the value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Precomputed index structure for a fixed observation set.
struct FitBatch {
    rows: Vec<usize>,
    left: Arc<Vec<usize>>,
    right: Arc<Vec<usize>>,
    targets: Tensor,
}

impl FitBatch {
    fn new(observed: &[Observation]) -> Self {
        let rows: Vec<usize> = observed
            .iter()
            .flat_map(|o| [o.i, o.j])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pos = |n: usize| rows.binary_search(&n).expect("row present");
        let left = Arc::new(observed.iter().map(|o| pos(o.i)).collect());
        let right = Arc::new(observed.iter().map(|o| pos(o.j)).collect());
        let targets = Tensor::from_fn(observed.len(), 1, |k, _| observed[k].value);
        FitBatch {
            rows,
            left,
            right,
            targets,
        }
    }
}

fn finetune_loss_on_tape(
    tape: &mut GradTape,
    member: &ModelParams,
    x: Var,
    batch: &FitBatch,
    rng: Option<&mut StreamRng>,
) -> Result<Var> {
    let head = BilinearVars::register(tape, &member.bilinear)?;
    let xi = tape.gather_rows(x, batch.left.clone())?;
    let xj = tape.gather_rows(x, batch.right.clone())?;
    let masks = rng.map(|rng| {
        let (b, d) = (batch.left.len(), member.embedding_dim());
        let rate = member.bilinear.dropout;
        (dropout_mask(b, d, rate, rng), dropout_mask(b, d, rate, rng))
    });
    let pred = bilinear_on_tape(tape, xi, xj, &head, masks)?;
    let y = tape.constant(batch.targets.clone());
    let resid = tape.sub(pred, y)?;
    let loss = tape.huber(resid);
    tape.mean(loss)
}

/// Mean Huber loss of the fine-tuning objective with dropout off.
pub fn finetune_objective(member: &ModelParams, prop: &Propagation, observed: &[Observation]) -> Result<f64> {
    if observed.is_empty() {
        return Err(Error::Precondition("fine-tuning needs at least one observation".into()));
    }
    let batch = FitBatch::new(observed);
    let mut tape = GradTape::new();
    let x = embed_on_tape(&mut tape, member, prop, Some(&batch.rows))?;
    let loss = finetune_loss_on_tape(&mut tape, member, x, &batch, None)?;
    Ok(tape.value(loss).item())
}

/// Records the full fine-tuning loss (encoder and head) without dropout.
pub fn finetune_loss_for_check(
    tape: &mut GradTape,
    member: &ModelParams,
    prop: &Propagation,
    observed: &[Observation],
) -> Result<Var> {
    let batch = FitBatch::new(observed);
    let x = embed_on_tape(tape, member, prop, Some(&batch.rows))?;
    finetune_loss_on_tape(tape, member, x, &batch, None)
}

/// Fine-tunes on `observed` for `cfg.finetune_epochs` full-batch steps,
/// continuing from `opt`. With `freeze_encoder` only the bilinear head moves
/// and embeddings are computed once. Returns the loss before each step.
pub fn finetune(
    member: &mut ModelParams,
    prop: &Propagation,
    observed: &[Observation],
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
    freeze_encoder: bool,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    member.check_graph(prop)?;
    if observed.is_empty() {
        return Err(Error::Precondition("fine-tuning needs at least one observation".into()));
    }
    let batch = FitBatch::new(observed);
    let use_dropout = !cfg.deterministic && member.bilinear.dropout > 0.0;
    let groups: &[ParamGroup] = if freeze_encoder {
        &[ParamGroup::Bilinear]
    } else {
        &[ParamGroup::Encoder, ParamGroup::Bilinear]
    };
    let frozen = if freeze_encoder {
        Some(embeddings(member, prop, Some(&batch.rows))?.values)
    } else {
        None
    };

    let mut trace = Vec::with_capacity(cfg.finetune_epochs);
    for epoch in 0..cfg.finetune_epochs {
        let mut tape = GradTape::new();
        let x = match &frozen {
            Some(values) => tape.constant(values.clone()),
            None => embed_on_tape(&mut tape, member, prop, Some(&batch.rows))?,
        };
        let loss = finetune_loss_on_tape(&mut tape, member, x, &batch, use_dropout.then_some(&mut *rng))?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                learning_rate: opt.learning_rate,
                loss: value,
            });
        }
        trace.push(value);
        let grads = tape.backward(loss)?;
        opt.apply(member, &grads, groups);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::distmult_score;
    use crate::hetgraph::NodeLabel;
    use crate::rgcn::RgcnConfig;

    fn two_nodes() -> HetGraph {
        HetGraph::from_parts(
            vec![("a".into(), NodeLabel::Gene), ("b".into(), NodeLabel::Gene)],
            vec!["R".into()],
            [(0, 0, 1)],
        )
        .unwrap()
    }

    #[test]
    fn empty_graph_pretrain_is_noop() {
        let g = HetGraph::from_parts(vec![("a".into(), NodeLabel::Gene)], vec!["R".into()], []).unwrap();
        let prop = Propagation::new(&g);
        let mut rng = seed::stream(0, &["init"]);
        let mut m = ModelParams::init_rgcn(1, 1, &RgcnConfig::default(), 0.1, &mut rng).unwrap();
        let before = m.clone();
        let trace = pretrain(&mut m, &g, &prop, &TrainConfig::default(), 1).unwrap();
        assert!(trace.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn two_node_pretrain_separates_edge() {
        let g = two_nodes();
        let prop = Propagation::new(&g);
        let mut rng = seed::stream(0, &["init"]);
        let mut m = ModelParams::init_rgcn(2, 1, &RgcnConfig::default(), 0.1, &mut rng).unwrap();
        let head_before = m.bilinear.clone();
        let trace = pretrain(&mut m, &g, &prop, &TrainConfig::default(), 3).unwrap();
        assert_eq!(trace.len(), 200);
        assert!(trace.last().unwrap() < &trace[0]);
        assert_eq!(m.bilinear, head_before);

        let x = embeddings(&m, &prop, None).unwrap();
        assert!(distmult_score(x.row(0), 0, x.row(1), &m.distmult).unwrap() > 0.9);
        for node in 0..2 {
            assert!(distmult_score(x.row(node), 0, x.row(node), &m.distmult).unwrap() < 0.5);
        }
    }

    #[test]
    fn empty_observations_rejected() {
        let g = two_nodes();
        let prop = Propagation::new(&g);
        let mut rng = seed::stream(0, &["init"]);
        let mut m = ModelParams::init_rgcn(2, 1, &RgcnConfig::default(), 0.1, &mut rng).unwrap();
        let cfg = TrainConfig::default();
        let mut opt = OptimizerState::for_finetuning(&cfg);
        let r = finetune(&mut m, &prop, &[], &cfg, &mut opt, false, &mut rng);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn finetune_leaves_distmult_alone() {
        let g = two_nodes();
        let prop = Propagation::new(&g);
        let mut rng = seed::stream(0, &["init"]);
        let mut m = ModelParams::init_rgcn(2, 1, &RgcnConfig::default(), 0.1, &mut rng).unwrap();
        let dm = m.distmult.clone();
        let cfg = TrainConfig {
            finetune_epochs: 5,
            ..Default::default()
        };
        let mut opt = OptimizerState::for_finetuning(&cfg);
        let obs = [Observation { i: 0, j: 1, value: 2.0 }];
        finetune(&mut m, &prop, &obs, &cfg, &mut opt, false, &mut rng).unwrap();
        assert_eq!(m.distmult, dm);
        assert_eq!(opt.step, 5);
    }

    #[test]
    fn invalid_config_names_field() {
        let cfg = TrainConfig {
            finetune_lr: 0.0,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "train.finetune_lr"),
            other => panic!("{other:?}"),
        }
    }
}
