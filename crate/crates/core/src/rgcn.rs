//! Relational graph convolution with differentiable group normalization.
//!
//! Layer update for node `i`:
//!
//! ```text
//! h_i' = ReLU( Σ_r Σ_{j ∈ N_i^r} W_r h_j / |N_i^r| ) + W_0 h_i
//! ```
//!
//! The self term sits outside the nonlinearity. Inputs are one-hot, so the
//! first layer is a table lookup: its weights are stored transposed as
//! `|V| × d_h` tables whose row `j` is column `j` of `W_r`. Deeper weights are
//! stored `d_out × d_in`.
//!
//! Group normalization runs after every hidden layer (not after the output
//! layer). With `G` groups, a soft assignment `S = softmax_rows(H Uᵀ)` splits
//! the nodes; group `k` standardizes `S[:,k] ⊙ H` per channel over the nodes,
//! applies its own per-channel scale and shift, and the result is added back
//! as `H + λ Σ_k ...`. Statistics are recomputed on every pass, so training
//! and evaluation compute the same function.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::HetGraph;
use crate::numerics::{GradTape, GroupNormArgs, SparseRows, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RgcnConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub groups: usize,
    pub skip_init: f64,
    pub group_norm: bool,
}

impl Default for RgcnConfig {
    fn default() -> Self {
        RgcnConfig {
            layers: 3,
            hidden_dim: 64,
            embedding_dim: 50,
            groups: 4,
            skip_init: 0.01,
            group_norm: true,
        }
    }
}

impl RgcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("rgcn.layers", "must be at least 1"));
        }
        if self.hidden_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::config("rgcn dimensions", "must be positive"));
        }
        if self.group_norm && self.groups == 0 {
            return Err(Error::config("rgcn.groups", "must be at least 1"));
        }
        if self.skip_init < 0.0 {
            return Err(Error::config("rgcn.skip_init", "must be nonnegative"));
        }
        Ok(())
    }

    fn dims(&self, num_nodes: usize, layer: usize) -> (usize, usize) {
        let d_in = if layer == 0 { num_nodes } else { self.hidden_dim };
        let d_out = if layer + 1 == self.layers {
            self.embedding_dim
        } else {
            self.hidden_dim
        };
        (d_in, d_out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBlock {
    /// `G × d_h` soft-assignment weights.
    pub assign: Tensor,
    /// `G × d_h` per-group, per-channel scale.
    pub scale: Tensor,
    /// `G × d_h` per-group, per-channel shift.
    pub shift: Tensor,
    /// Skip coefficient λ (one element, kept nonnegative).
    pub skip: Tensor,
}

impl NormBlock {
    pub fn groups(&self) -> usize {
        self.assign.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgcnLayer {
    /// Per-relation weights (tables of shape `|V| × d_h` for the first layer).
    pub relation: Vec<Tensor>,
    /// Self-connection weight (table for the first layer).
    pub self_weight: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgcnParams {
    pub num_nodes: usize,
    pub num_relations: usize,
    pub layers: Vec<RgcnLayer>,
    /// One entry per hidden layer; `None` disables that norm block.
    pub norms: Vec<Option<NormBlock>>,
}

pub(crate) fn glorot(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl RgcnParams {
    pub fn init(num_nodes: usize, num_relations: usize, cfg: &RgcnConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let (d_in, d_out) = cfg.dims(num_nodes, l);
            let make = |rng: &mut _| {
                if l == 0 {
                    glorot(d_in, d_out, d_in, d_out, rng)
                } else {
                    glorot(d_out, d_in, d_in, d_out, rng)
                }
            };
            let relation = (0..num_relations).map(|_| make(rng)).collect();
            let self_weight = make(rng);
            layers.push(RgcnLayer {
                relation,
                self_weight,
            });
        }
        let norms = (0..cfg.layers - 1)
            .map(|_| {
                cfg.group_norm.then(|| NormBlock {
                    assign: glorot(cfg.groups, cfg.hidden_dim, cfg.hidden_dim, cfg.groups, rng),
                    scale: Tensor::filled(&[cfg.groups, cfg.hidden_dim], 1.0),
                    shift: Tensor::zeros(&[cfg.groups, cfg.hidden_dim]),
                    skip: Tensor::scalar(cfg.skip_init),
                })
            })
            .collect();
        Ok(RgcnParams {
            num_nodes,
            num_relations,
            layers,
            norms,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        let last = self.layers.last().expect("at least one layer");
        if self.layers.len() == 1 {
            last.self_weight.cols()
        } else {
            last.self_weight.rows()
        }
    }

    /// `W_r^(l)` as a `d_out × d_in` matrix; `relation = None` selects `W_0^(l)`.
    pub fn weight_matrix(&self, layer: usize, relation: Option<usize>) -> Tensor {
        let l = &self.layers[layer];
        let w = match relation {
            Some(r) => &l.relation[r],
            None => &l.self_weight,
        };
        if layer == 0 {
            w.transpose()
        } else {
            w.clone()
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (r, w) in layer.relation.iter().enumerate() {
                out.push((format!("rgcn.layer{l}.rel{r}"), w));
            }
            out.push((format!("rgcn.layer{l}.self"), &layer.self_weight));
        }
        for (k, block) in self.norms.iter().enumerate() {
            if let Some(b) = block {
                out.push((format!("rgcn.norm{k}.assign"), &b.assign));
                out.push((format!("rgcn.norm{k}.scale"), &b.scale));
                out.push((format!("rgcn.norm{k}.shift"), &b.shift));
                out.push((format!("rgcn.norm{k}.skip"), &b.skip));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (r, w) in layer.relation.iter_mut().enumerate() {
                out.push((format!("rgcn.layer{l}.rel{r}"), w));
            }
            out.push((format!("rgcn.layer{l}.self"), &mut layer.self_weight));
        }
        for (k, block) in self.norms.iter_mut().enumerate() {
            if let Some(b) = block {
                out.push((format!("rgcn.norm{k}.assign"), &mut b.assign));
                out.push((format!("rgcn.norm{k}.scale"), &mut b.scale));
                out.push((format!("rgcn.norm{k}.shift"), &mut b.shift));
                out.push((format!("rgcn.norm{k}.skip"), &mut b.skip));
            }
        }
        out
    }

    /// Projects constrained parameters back onto their domain (λ ≥ 0).
    pub fn project(&mut self) {
        for b in self.norms.iter_mut().flatten() {
            let v = &mut b.skip.data_mut()[0];
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    fn check_graph(&self, g: &Propagation) -> Result<()> {
        if self.num_nodes != g.num_nodes || self.num_relations != g.per_relation.len() {
            return Err(Error::Shape(format!(
                "parameters sized for {} nodes / {} relations, graph has {} / {}",
                self.num_nodes,
                self.num_relations,
                g.num_nodes,
                g.per_relation.len()
            )));
        }
        Ok(())
    }
}

/// Mean-aggregation operators of a graph, one per relation.
#[derive(Clone, Debug)]
pub struct Propagation {
    num_nodes: usize,
    /// For each relation: sparse rows for nodes with a nonempty neighborhood,
    /// and the node index of each of those rows.
    per_relation: Vec<(Arc<SparseRows>, Arc<Vec<usize>>)>,
}

impl Propagation {
    pub fn new(g: &HetGraph) -> Self {
        let n = g.num_nodes();
        let all: Vec<usize> = (0..n).collect();
        let per_relation = (0..g.num_relations())
            .map(|r| Self::build(g, r, &all))
            .collect();
        Propagation {
            num_nodes: n,
            per_relation,
        }
    }

    fn build(g: &HetGraph, r: usize, rows: &[usize]) -> (Arc<SparseRows>, Arc<Vec<usize>>) {
        let mut sp = SparseRows::new(g.num_nodes());
        let mut idx = Vec::new();
        for (pos, &i) in rows.iter().enumerate() {
            let nbrs = g.neighbors_in(i, r);
            if nbrs.is_empty() {
                continue;
            }
            let w = 1.0 / nbrs.len() as f64;
            sp.push_row(nbrs.iter().map(|&j| (j, w)));
            idx.push(pos);
        }
        (Arc::new(sp), Arc::new(idx))
    }

    fn restricted(&self, r: usize, rows: &[usize]) -> (Arc<SparseRows>, Arc<Vec<usize>>) {
        let (full, full_idx) = &self.per_relation[r];
        let mut lookup = vec![usize::MAX; self.num_nodes];
        for (k, &node) in full_idx.iter().enumerate() {
            lookup[node] = k;
        }
        let mut sp = SparseRows::new(self.num_nodes);
        let mut idx = Vec::new();
        for (pos, &i) in rows.iter().enumerate() {
            let k = lookup[i];
            if k == usize::MAX {
                continue;
            }
            sp.push_row(full.row(k));
            idx.push(pos);
        }
        (Arc::new(sp), Arc::new(idx))
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }
}

/// Node embeddings; row `k` belongs to graph node `nodes[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub nodes: Vec<usize>,
    pub values: Tensor,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.values.row(k)
    }
}

/// Parameter handles of one norm block on a tape.
pub struct NormVars {
    pub assign: Var,
    pub scale: Var,
    pub shift: Var,
    pub skip: Var,
}

/// Records DiffGroupNorm on `tape`. Fewer than two rows leaves `h` unchanged.
pub fn diff_group_norm_on_tape(tape: &mut GradTape, h: Var, block: &NormVars) -> Result<Var> {
    if tape.value(h).rows() < 2 {
        return Ok(h);
    }
    let args = GroupNormArgs {
        h,
        assign: block.assign,
        scale: block.scale,
        shift: block.shift,
        skip: block.skip,
    };
    tape.diff_group_norm(args, NORM_EPS)
}

/// DiffGroupNorm of `h` (nodes × d_h) with the given block.
pub fn diff_group_norm(h: &Tensor, block: &NormBlock, _mode: Mode) -> Result<Tensor> {
    if block.groups() == 0 {
        return Err(Error::Shape("norm block needs at least one group".into()));
    }
    let mut tape = GradTape::new();
    let hv = tape.constant(h.clone());
    let vars = NormVars {
        assign: tape.constant(block.assign.clone()),
        scale: tape.constant(block.scale.clone()),
        shift: tape.constant(block.shift.clone()),
        skip: tape.constant(block.skip.clone()),
    };
    let out = diff_group_norm_on_tape(&mut tape, hv, &vars)?;
    Ok(tape.value(out).clone())
}

/// Records the forward pass on `tape`, registering every parameter under its
/// [`RgcnParams::named_params`] name. With `rows = Some(..)` the output layer
/// is evaluated only for those nodes (hidden layers always cover the whole
/// graph, since normalization statistics span all nodes).
pub fn forward_on_tape(
    tape: &mut GradTape,
    params: &RgcnParams,
    prop: &Propagation,
    rows: Option<&[usize]>,
) -> Result<Var> {
    params.check_graph(prop)?;
    let n = prop.num_nodes;
    let last = params.layers.len() - 1;
    let mut h: Option<Var> = None;

    for (l, layer) in params.layers.iter().enumerate() {
        let out_rows: Option<Arc<Vec<usize>>> = if l == last {
            rows.map(|r| Arc::new(r.to_vec()))
        } else {
            None
        };
        if let Some(r) = &out_rows {
            if let Some(&bad) = r.iter().find(|&&i| i >= n) {
                return Err(Error::Shape(format!("row {bad} outside a {n}-node graph")));
            }
        }
        let n_out = out_rows.as_ref().map_or(n, |r| r.len());

        let mut pre: Option<Var> = None;
        for (r, w) in layer.relation.iter().enumerate() {
            let (sp, idx) = match &out_rows {
                Some(rs) => prop.restricted(r, rs),
                None => prop.per_relation[r].clone(),
            };
            if sp.n_rows() == 0 {
                continue;
            }
            let wv = tape.param(&format!("rgcn.layer{l}.rel{r}"), w);
            let msg = match h {
                None => tape.spmm(sp, wv)?,
                Some(hv) => {
                    let agg = tape.spmm(sp, hv)?;
                    tape.matmul_t(agg, wv)?
                }
            };
            let msg = tape.scatter_rows(msg, idx, n_out)?;
            pre = Some(match pre {
                Some(p) => tape.add(p, msg)?,
                None => msg,
            });
        }

        let w0 = tape.param(&format!("rgcn.layer{l}.self"), &layer.self_weight);
        let self_term = match (h, &out_rows) {
            (None, None) => w0,
            (None, Some(rs)) => tape.gather_rows(w0, rs.clone())?,
            (Some(hv), None) => tape.matmul_t(hv, w0)?,
            (Some(hv), Some(rs)) => {
                let sub = tape.gather_rows(hv, rs.clone())?;
                tape.matmul_t(sub, w0)?
            }
        };
        let mut out = match pre {
            Some(p) => {
                let act = tape.relu(p);
                tape.add(act, self_term)?
            }
            None => self_term,
        };

        if l < last {
            if let Some(Some(block)) = params.norms.get(l) {
                let vars = NormVars {
                    assign: tape.param(&format!("rgcn.norm{l}.assign"), &block.assign),
                    scale: tape.param(&format!("rgcn.norm{l}.scale"), &block.scale),
                    shift: tape.param(&format!("rgcn.norm{l}.shift"), &block.shift),
                    skip: tape.param(&format!("rgcn.norm{l}.skip"), &block.skip),
                };
                out = diff_group_norm_on_tape(tape, out, &vars)?;
            }
        }
        h = Some(out);
    }
    Ok(h.expect("at least one layer"))
}

/// Embeddings for every node of `g`.
pub fn rgcn_forward(g: &HetGraph, params: &RgcnParams, mode: Mode) -> Result<EmbeddingMatrix> {
    let prop = Propagation::new(g);
    rgcn_forward_rows(&prop, params, mode, None)
}

/// Embeddings for `rows` (all nodes when `None`) using precomputed operators.
pub fn rgcn_forward_rows(
    prop: &Propagation,
    params: &RgcnParams,
    _mode: Mode,
    rows: Option<&[usize]>,
) -> Result<EmbeddingMatrix> {
    let mut tape = GradTape::new();
    let out = forward_on_tape(&mut tape, params, prop, rows)?;
    let values = tape.value(out).clone();
    if !values.is_finite() {
        return Err(Error::NonFinite("R-GCN activations".into()));
    }
    let nodes = rows.map_or_else(|| (0..prop.num_nodes).collect(), |r| r.to_vec());
    Ok(EmbeddingMatrix { nodes, values })
}
