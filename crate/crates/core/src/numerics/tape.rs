//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the reverse of insertion order is
//! a valid topological order and the backward sweep touches every node once.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::scalar;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Gradient of the loss with respect to each registered parameter.
pub type Gradients = BTreeMap<String, Tensor>;

/// Constant sparse matrix in compressed-row form, used for neighborhood aggregation.
#[derive(Clone, Debug, Default)]
pub struct SparseRows {
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub weights: Vec<f64>,
}

impl SparseRows {
    pub fn new(n_cols: usize) -> Self {
        SparseRows {
            n_cols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (c, w) in entries {
            debug_assert!(c < self.n_cols);
            self.col_idx.push(c);
            self.weights.push(w);
        }
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b]
            .iter()
            .copied()
            .zip(self.weights[a..b].iter().copied())
    }
}

enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, Var),
    MulScalar(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    SelectRow(Var, usize),
    SelectCol(Var, usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Huber(Var),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterRows(Var, Arc<Vec<usize>>),
    SpMM(Arc<SparseRows>, Var),
    SoftmaxRows(Var),
    Standardize(Var, Vec<f64>),
    SymFromPacked(Var, usize),
    BceWithLogits(Var, Arc<Vec<f64>>),
    GroupNorm(GroupNormArgs, Box<GroupNormCache>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddScalar(a, b)
            | Op::MulScalar(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulT(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::SelectRow(a, _)
            | Op::SelectCol(a, _)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Huber(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSums(a)
            | Op::GatherRows(a, _)
            | Op::ScatterRows(a, _)
            | Op::SpMM(_, a)
            | Op::SoftmaxRows(a)
            | Op::Standardize(a, _)
            | Op::SymFromPacked(a, _)
            | Op::BceWithLogits(a, _) => vec![*a],
            Op::GroupNorm(v, _) => vec![v.h, v.assign, v.scale, v.shift, v.skip],
        }
    }
}

/// Inputs of [`GradTape::diff_group_norm`].
#[derive(Clone, Copy)]
pub struct GroupNormArgs {
    pub h: Var,
    pub assign: Var,
    pub scale: Var,
    pub shift: Var,
    pub skip: Var,
}

struct GroupNormCache {
    /// Soft assignment `n × G`.
    soft: Tensor,
    /// Standardized masked input of each group, `n × c`.
    z: Vec<Tensor>,
    inv_std: Vec<Vec<f64>>,
    /// `Σ_k (γ_k ∘ z_k + β_k)` before the skip weight.
    total: Tensor,
}

struct Node {
    value: Tensor,
    op: Op,
    /// Whether any registered parameter feeds this node.
    live: bool,
}

#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
    consumed: bool,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let live = match &op {
            Op::Leaf => false,
            Op::Param => true,
            op => op.inputs().iter().any(|v| self.nodes[v.0].live),
        };
        self.nodes.push(Node { value, op, live });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a named parameter. Registering the same name again returns
    /// the existing handle, so every use accumulates into one gradient.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.param_index.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        v
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).len(), self.value(b).len());
        if sa != sb {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k))
    }

    fn check_scalar(&self, s: Var) -> Result<f64> {
        let t = self.value(s);
        if t.len() != 1 {
            return Err(Error::Shape(format!("expected a scalar, got {:?}", t.shape())));
        }
        Ok(t.item())
    }

    /// `a + s` with a one-element `s` broadcast everywhere.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.check_scalar(s)?;
        let v = self.value(a).map(|x| x + k);
        Ok(self.push(v, Op::AddScalar(a, s)))
    }

    /// `a · s` with a one-element `s` broadcast everywhere.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.check_scalar(s)?;
        let v = self.value(a).map(|x| x * k);
        Ok(self.push(v, Op::MulScalar(a, s)))
    }

    /// Adds a length-`d` row to every row of an `n×d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (t, r) = (self.value(a), self.value(row));
        if r.len() != t.cols() {
            return Err(Error::Shape(format!("add_row {:?} + {:?}", t.shape(), r.shape())));
        }
        let mut v = t.clone();
        for out in v.data_mut().chunks_mut(r.len()) {
            for (x, y) in out.iter_mut().zip(r.data()) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Multiplies every row of an `n×d` matrix elementwise by a length-`d` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (t, r) = (self.value(a), self.value(row));
        if r.len() != t.cols() {
            return Err(Error::Shape(format!("mul_row {:?} * {:?}", t.shape(), r.shape())));
        }
        let mut v = t.clone();
        for out in v.data_mut().chunks_mut(r.len()) {
            for (x, y) in out.iter_mut().zip(r.data()) {
                *x *= y;
            }
        }
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    /// Scales row `i` of an `n×d` matrix by entry `i` of a length-`n` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (t, k) = (self.value(a), self.value(col));
        if k.len() != t.rows() {
            return Err(Error::Shape(format!("mul_col {:?} * {:?}", t.shape(), k.shape())));
        }
        let mut v = t.clone();
        let c = t.cols().max(1);
        for (out, y) in v.data_mut().chunks_mut(c).zip(k.data()) {
            for x in out {
                *x *= y;
            }
        }
        Ok(self.push(v, Op::MulCol(a, col)))
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let t = self.value(a);
        if row >= t.rows() {
            return Err(Error::Shape(format!("row {row} of {:?}", t.shape())));
        }
        let v = Tensor::new(vec![1, t.cols()], t.row(row).to_vec())?;
        Ok(self.push(v, Op::SelectRow(a, row)))
    }

    pub fn select_col(&mut self, a: Var, col: usize) -> Result<Var> {
        let t = self.value(a);
        if col >= t.cols() {
            return Err(Error::Shape(format!("col {col} of {:?}", t.shape())));
        }
        let v = Tensor::from_fn(t.rows(), 1, |i, _| t.get(i, col));
        Ok(self.push(v, Op::SelectCol(a, col)))
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", ta.shape(), tb.shape())));
        }
        let mut out = Tensor::zeros(&[ta.rows(), tb.cols()]);
        gemm(ta, false, tb, false, &mut out, 0.0);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`, the natural form for weights stored as `d_out × d_in`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::Shape(format!("matmul_t {:?} x {:?}ᵀ", ta.shape(), tb.shape())));
        }
        let mut out = Tensor::zeros(&[ta.rows(), tb.rows()]);
        gemm(ta, false, tb, true, &mut out, 0.0);
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(scalar::relu);
        self.push(v, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(scalar::softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(scalar::sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn huber(&mut self, a: Var) -> Var {
        let v = self.value(a).map(scalar::huber);
        self.push(v, Op::Huber(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        Ok(self.push(v, Op::Mean(a)))
    }

    /// `n×d → n×1` row sums.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::from_fn(t.rows(), 1, |i, _| t.row(i).iter().sum());
        self.push(v, Op::RowSums(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= t.rows() {
                return Err(Error::Shape(format!("gather row {i} of {:?}", t.shape())));
            }
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.push(v, Op::GatherRows(a, idx)))
    }

    /// Sums row `k` of `a` into row `idx[k]` of an `n_rows`-row zero matrix.
    pub fn scatter_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, n_rows: usize) -> Result<Var> {
        let t = self.value(a);
        if idx.len() != t.rows() {
            return Err(Error::Shape(format!(
                "scatter of {} rows with {} indices",
                t.rows(),
                idx.len()
            )));
        }
        let c = t.cols();
        let mut v = Tensor::zeros(&[n_rows, c]);
        for (k, &i) in idx.iter().enumerate() {
            if i >= n_rows {
                return Err(Error::Shape(format!("scatter row {i} into {n_rows}")));
            }
            for (o, x) in v.row_mut(i).iter_mut().zip(t.row(k)) {
                *o += x;
            }
        }
        Ok(self.push(v, Op::ScatterRows(a, idx)))
    }

    /// Sparse-dense product `S · x`.
    pub fn spmm(&mut self, s: Arc<SparseRows>, x: Var) -> Result<Var> {
        let t = self.value(x);
        if s.n_cols != t.rows() {
            return Err(Error::Shape(format!(
                "spmm with {} columns against {:?}",
                s.n_cols,
                t.shape()
            )));
        }
        let c = t.cols();
        let mut v = Tensor::zeros(&[s.n_rows(), c]);
        for i in 0..s.n_rows() {
            let out = &mut v.data_mut()[i * c..(i + 1) * c];
            for (j, w) in s.row(i) {
                for (o, x) in out.iter_mut().zip(t.row(j)) {
                    *o += w * x;
                }
            }
        }
        Ok(self.push(v, Op::SpMM(s, x)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut v = t.clone();
        for i in 0..t.rows() {
            let row = v.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Per-column standardization over rows: zero mean, unit population
    /// variance, with `eps` added to the variance.
    pub fn standardize_cols(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let (n, c) = (t.rows(), t.cols());
        if n == 0 {
            return Err(Error::Shape("standardize over zero rows".into()));
        }
        let mut mean = vec![0.0; c];
        for i in 0..n {
            for (m, x) in mean.iter_mut().zip(t.row(i)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; c];
        for i in 0..n {
            for ((s, x), m) in var.iter_mut().zip(t.row(i)).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / n as f64 + eps).sqrt())
            .collect();
        let v = Tensor::from_fn(n, c, |i, j| (t.get(i, j) - mean[j]) * inv_std[j]);
        Ok(self.push(v, Op::Standardize(a, inv_std)))
    }

    /// Symmetric `d×d` matrix from its packed upper triangle (row-major, `k <= l`).
    pub fn sym_from_packed(&mut self, p: Var, d: usize) -> Result<Var> {
        let t = self.value(p);
        if t.len() != d * (d + 1) / 2 {
            return Err(Error::Shape(format!(
                "packed upper triangle for d={d} needs {} values, got {}",
                d * (d + 1) / 2,
                t.len()
            )));
        }
        let v = unpack_symmetric(t.data(), d);
        Ok(self.push(v, Op::SymFromPacked(p, d)))
    }

    /// Mean binary cross-entropy of `labels` against sigmoid(`logits`).
    pub fn bce_with_logits(&mut self, logits: Var, labels: Arc<Vec<f64>>) -> Result<Var> {
        let t = self.value(logits);
        if t.len() != labels.len() || t.is_empty() {
            return Err(Error::Shape(format!(
                "bce over {} logits and {} labels",
                t.len(),
                labels.len()
            )));
        }
        let total: f64 = t
            .data()
            .iter()
            .zip(labels.iter())
            .map(|(&z, &y)| scalar::bce_with_logit(z, y))
            .sum();
        let v = Tensor::scalar(total / t.len() as f64);
        Ok(self.push(v, Op::BceWithLogits(logits, labels)))
    }

    /// DiffGroupNorm as one node: soft assignment `S = softmax(h Uᵀ)`, per
    /// group `z_k = standardize(S[:, k] ∘ h)`, output
    /// `h + λ Σ_k (γ_k ∘ z_k + β_k)`. `assign` is `G × c`, `scale` and `shift`
    /// are `G × c`, `skip` is a scalar.
    pub fn diff_group_norm(&mut self, args: GroupNormArgs, eps: f64) -> Result<Var> {
        let h = self.value(args.h);
        let (n, c) = (h.rows(), h.cols());
        let u = self.value(args.assign);
        let groups = u.rows();
        let (gamma, beta) = (self.value(args.scale), self.value(args.shift));
        let lambda = self.check_scalar(args.skip)?;
        if n == 0 || groups == 0 || u.cols() != c || gamma.shape() != u.shape() || beta.shape() != u.shape() {
            return Err(Error::Shape(format!(
                "group norm of {:?} with assign {:?}, scale {:?}, shift {:?}",
                h.shape(),
                u.shape(),
                gamma.shape(),
                beta.shape()
            )));
        }
        let mut soft = Tensor::zeros(&[n, groups]);
        gemm(h, false, u, true, &mut soft, 0.0);
        for i in 0..n {
            let row = soft.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let nf = n as f64;
        let mut total = Tensor::zeros(&[n, c]);
        let mut zs = Vec::with_capacity(groups);
        let mut inv_stds = Vec::with_capacity(groups);
        // column means of S[:, k] ∘ h for every group at once: Sᵀ h / n
        let mut means = Tensor::zeros(&[groups, c]);
        gemm(&soft, true, h, false, &mut means, 0.0);
        means.data_mut().iter_mut().for_each(|m| *m /= nf);
        for k in 0..groups {
            let mean = means.row(k);
            let mut var = vec![0.0; c];
            for (hr, w) in h.data().chunks(c).zip(soft.data().chunks(groups)) {
                let w = w[k];
                for ((v, x), m) in var.iter_mut().zip(hr).zip(mean) {
                    let d = w * x - m;
                    *v += d * d;
                }
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / nf + eps).sqrt()).collect();
            let (gk, bk) = (gamma.row(k), beta.row(k));
            let mut z = Tensor::zeros(&[n, c]);
            let rows = z.data_mut().chunks_mut(c).zip(total.data_mut().chunks_mut(c));
            for ((zr, tr), (hr, w)) in rows.zip(h.data().chunks(c).zip(soft.data().chunks(groups))) {
                let w = w[k];
                let cols = zr.iter_mut().zip(tr).zip(hr);
                for (((zz, t), x), ((m, is), (g, b))) in cols.zip(mean.iter().zip(&inv_std).zip(gk.iter().zip(bk))) {
                    *zz = (w * x - m) * is;
                    *t += g * *zz + b;
                }
            }
            zs.push(z);
            inv_stds.push(inv_std);
        }
        let v = h.zip_map(&total, |x, t| x + lambda * t);
        let cache = GroupNormCache {
            soft,
            z: zs,
            inv_std: inv_stds,
            total,
        };
        Ok(self.push(v, Op::GroupNorm(args, Box::new(cache))))
    }

    /// Reverse sweep from `loss`. Every registered parameter appears in the
    /// result; parameters the loss does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar(shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(&shape, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Param | Op::Leaf) || !node.live {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.0].value;
            let mut acc = |v: Var, f: &dyn Fn(&mut Tensor)| {
                if !nodes[v.0].live {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
                f(slot);
            };
            match &node.op {
                Op::Leaf | Op::Param => unreachable!("leaves keep their gradient"),
                Op::Add(a, b) => {
                    acc(*a, &|s| s.add_assign(&g));
                    acc(*b, &|s| s.add_assign(&g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &|s| s.add_assign(&g));
                    acc(*b, &|s| {
                        for (x, y) in s.data_mut().iter_mut().zip(g.data()) {
                            *x -= y;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    acc(*a, &|s| axpy_prod(s, &g, tb));
                    acc(*b, &|s| axpy_prod(s, &g, ta));
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(*a, &|s| {
                        for (x, y) in s.data_mut().iter_mut().zip(g.data()) {
                            *x += k * y;
                        }
                    });
                }
                Op::AddScalar(a, sv) => {
                    acc(*a, &|s| s.add_assign(&g));
                    let total = g.sum();
                    acc(*sv, &|s| s.data_mut()[0] += total);
                }
                Op::MulScalar(a, sv) => {
                    let k = val(*sv).item();
                    acc(*a, &|s| {
                        for (x, y) in s.data_mut().iter_mut().zip(g.data()) {
                            *x += k * y;
                        }
                    });
                    let dot: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                    acc(*sv, &|s| s.data_mut()[0] += dot);
                }
                Op::AddRow(a, row) => {
                    acc(*a, &|s| s.add_assign(&g));
                    acc(*row, &|s| {
                        for gr in g.data().chunks(s.len()) {
                            for (x, y) in s.data_mut().iter_mut().zip(gr) {
                                *x += y;
                            }
                        }
                    });
                }
                Op::MulRow(a, row) => {
                    let (ta, tr) = (val(*a), val(*row));
                    let c = tr.len();
                    acc(*a, &|s| {
                        for (sr, gr) in s.data_mut().chunks_mut(c).zip(g.data().chunks(c)) {
                            for ((x, y), w) in sr.iter_mut().zip(gr).zip(tr.data()) {
                                *x += y * w;
                            }
                        }
                    });
                    acc(*row, &|s| {
                        for (gr, ar) in g.data().chunks(c).zip(ta.data().chunks(c)) {
                            for ((x, y), z) in s.data_mut().iter_mut().zip(gr).zip(ar) {
                                *x += y * z;
                            }
                        }
                    });
                }
                Op::MulCol(a, col) => {
                    let (ta, tc) = (val(*a), val(*col));
                    let c = g.cols().max(1);
                    acc(*a, &|s| {
                        for ((sr, gr), w) in s.data_mut().chunks_mut(c).zip(g.data().chunks(c)).zip(tc.data()) {
                            for (x, y) in sr.iter_mut().zip(gr) {
                                *x += y * w;
                            }
                        }
                    });
                    acc(*col, &|s| {
                        for ((x, gr), ar) in s.data_mut().iter_mut().zip(g.data().chunks(c)).zip(ta.data().chunks(c)) {
                            *x += gr.iter().zip(ar).map(|(y, z)| y * z).sum::<f64>();
                        }
                    });
                }
                Op::SelectRow(a, r) => {
                    let r = *r;
                    acc(*a, &|s| {
                        for (x, y) in s.row_mut(r).iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    });
                }
                Op::SelectCol(a, c) => {
                    let c = *c;
                    acc(*a, &|s| {
                        for (i, y) in g.data().iter().enumerate() {
                            let v = s.get(i, c) + y;
                            s.set(i, c, v);
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    acc(*a, &|s| gemm(&g, false, tb, true, s, 1.0));
                    acc(*b, &|s| gemm(ta, true, &g, false, s, 1.0));
                }
                Op::MatMulT(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    acc(*a, &|s| gemm(&g, false, tb, false, s, 1.0));
                    acc(*b, &|s| gemm(&g, true, ta, false, s, 1.0));
                }
                Op::Relu(a) => {
                    let ta = val(*a);
                    acc(*a, &|s| {
                        for ((x, y), z) in s.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                            if *z > 0.0 {
                                *x += y;
                            }
                        }
                    });
                }
                Op::Softplus(a) => {
                    let ta = val(*a);
                    acc(*a, &|s| {
                        for ((x, y), z) in s.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                            *x += y * scalar::sigmoid(*z);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let out = &node.value;
                    acc(*a, &|s| {
                        for ((x, y), o) in s.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                            *x += y * o * (1.0 - o);
                        }
                    });
                }
                Op::Huber(a) => {
                    let ta = val(*a);
                    acc(*a, &|s| {
                        for ((x, y), z) in s.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                            *x += y * scalar::huber_grad(*z);
                        }
                    });
                }
                Op::Sum(a) => {
                    let k = g.item();
                    acc(*a, &|s| {
                        for x in s.data_mut() {
                            *x += k;
                        }
                    });
                }
                Op::Mean(a) => {
                    let k = g.item() / val(*a).len() as f64;
                    acc(*a, &|s| {
                        for x in s.data_mut() {
                            *x += k;
                        }
                    });
                }
                Op::RowSums(a) => {
                    let c = val(*a).cols().max(1);
                    acc(*a, &|s| {
                        for (sr, y) in s.data_mut().chunks_mut(c).zip(g.data()) {
                            for x in sr {
                                *x += y;
                            }
                        }
                    });
                }
                Op::GatherRows(a, idx) => {
                    acc(*a, &|s| {
                        for (k, &r) in idx.iter().enumerate() {
                            for (x, y) in s.row_mut(r).iter_mut().zip(g.row(k)) {
                                *x += y;
                            }
                        }
                    });
                }
                Op::ScatterRows(a, idx) => {
                    acc(*a, &|s| {
                        for (k, &r) in idx.iter().enumerate() {
                            for (x, y) in s.row_mut(k).iter_mut().zip(g.row(r)) {
                                *x += y;
                            }
                        }
                    });
                }
                Op::SpMM(sp, x) => {
                    acc(*x, &|s| {
                        for r in 0..sp.n_rows() {
                            for (j, w) in sp.row(r) {
                                for (o, y) in s.row_mut(j).iter_mut().zip(g.row(r)) {
                                    *o += w * y;
                                }
                            }
                        }
                    });
                }
                Op::SoftmaxRows(a) => {
                    let out = &node.value;
                    acc(*a, &|s| {
                        for r in 0..out.rows() {
                            let (sr, gr) = (out.row(r), g.row(r));
                            let dot: f64 = sr.iter().zip(gr).map(|(p, q)| p * q).sum();
                            for ((x, p), q) in s.row_mut(r).iter_mut().zip(sr).zip(gr) {
                                *x += p * (q - dot);
                            }
                        }
                    });
                }
                Op::Standardize(a, inv_std) => {
                    let y = &node.value;
                    let (n, c) = (y.rows(), y.cols());
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gy = vec![0.0; c];
                    for r in 0..n {
                        for j in 0..c {
                            let gv = g.get(r, j);
                            sum_g[j] += gv;
                            sum_gy[j] += gv * y.get(r, j);
                        }
                    }
                    let nf = n as f64;
                    acc(*a, &|s| {
                        for r in 0..n {
                            for j in 0..c {
                                let d = inv_std[j]
                                    * (g.get(r, j) - sum_g[j] / nf - y.get(r, j) * sum_gy[j] / nf);
                                let v = s.get(r, j) + d;
                                s.set(r, j, v);
                            }
                        }
                    });
                }
                Op::SymFromPacked(p, d) => {
                    let d = *d;
                    acc(*p, &|s| {
                        let mut k = 0;
                        for r in 0..d {
                            for c in r..d {
                                s.data_mut()[k] += if r == c {
                                    g.get(r, r)
                                } else {
                                    g.get(r, c) + g.get(c, r)
                                };
                                k += 1;
                            }
                        }
                    });
                }
                Op::GroupNorm(args, cache) => {
                    let h = val(args.h);
                    let (n, c) = (h.rows(), h.cols());
                    let u = val(args.assign);
                    let groups = u.rows();
                    let gamma = val(args.scale);
                    let lambda = val(args.skip).item();
                    let nf = n as f64;

                    let dlambda: f64 = g.data().iter().zip(cache.total.data()).map(|(x, y)| x * y).sum();
                    acc(args.skip, &|s| s.data_mut()[0] += dlambda);

                    let mut dh = g.clone();
                    let mut dsoft = Tensor::zeros(&[n, groups]);
                    let mut dgamma = Tensor::zeros(&[groups, c]);
                    let mut dbeta = Tensor::zeros(&[groups, c]);
                    let mut dm = vec![0.0; n * c];
                    for k in 0..groups {
                        let z = &cache.z[k];
                        let inv_std = &cache.inv_std[k];
                        let gk = gamma.row(k);
                        // dz = λ g ∘ γ_k; column sums of dz and dz ∘ z
                        let mut sum_dz = vec![0.0; c];
                        let mut sum_dzz = vec![0.0; c];
                        let mut dgk = vec![0.0; c];
                        let mut dbk = vec![0.0; c];
                        for (gr, zr) in g.data().chunks(c).zip(z.data().chunks(c)) {
                            let cols = dgk.iter_mut().zip(dbk.iter_mut()).zip(sum_dz.iter_mut().zip(sum_dzz.iter_mut()));
                            for (((dg, db), (sd, sdz)), ((y, zz), w)) in cols.zip(gr.iter().zip(zr).zip(gk)) {
                                let dz = lambda * y * w;
                                *dg += lambda * y * zz;
                                *db += lambda * y;
                                *sd += dz;
                                *sdz += dz * zz;
                            }
                        }
                        dgamma.row_mut(k).copy_from_slice(&dgk);
                        dbeta.row_mut(k).copy_from_slice(&dbk);
                        sum_dz.iter_mut().for_each(|x| *x /= nf);
                        sum_dzz.iter_mut().for_each(|x| *x /= nf);
                        for ((dmr, gr), zr) in dm.chunks_mut(c).zip(g.data().chunks(c)).zip(z.data().chunks(c)) {
                            let stats = inv_std.iter().zip(sum_dz.iter().zip(&sum_dzz));
                            for (((d, (y, w)), zz), (is, (sd, sdz))) in dmr.iter_mut().zip(gr.iter().zip(gk)).zip(zr).zip(stats) {
                                *d = is * (lambda * y * w - sd - zz * sdz);
                            }
                        }
                        // m = s_k ∘ h (row scaling)
                        for i in 0..n {
                            let w = cache.soft.get(i, k);
                            let (dmr, hr) = (&dm[i * c..(i + 1) * c], h.row(i));
                            let mut ds = 0.0;
                            for ((d, x), o) in dmr.iter().zip(hr).zip(dh.row_mut(i)) {
                                *o += d * w;
                                ds += d * x;
                            }
                            dsoft.set(i, k, ds);
                        }
                    }
                    acc(args.scale, &|s| s.add_assign(&dgamma));
                    acc(args.shift, &|s| s.add_assign(&dbeta));

                    // softmax rows, then logits = h Uᵀ
                    let mut dlogits = dsoft;
                    for i in 0..n {
                        let sr = cache.soft.row(i);
                        let dr = dlogits.row_mut(i);
                        let dot: f64 = sr.iter().zip(dr.iter()).map(|(p, q)| p * q).sum();
                        for (q, p) in dr.iter_mut().zip(sr) {
                            *q = p * (*q - dot);
                        }
                    }
                    gemm(&dlogits, false, u, false, &mut dh, 1.0);
                    acc(args.assign, &|s| gemm(&dlogits, true, h, false, s, 1.0));
                    acc(args.h, &|s| s.add_assign(&dh));
                }
                Op::BceWithLogits(z, labels) => {
                    let tz = val(*z);
                    let k = g.item() / tz.len() as f64;
                    acc(*z, &|s| {
                        for ((x, zz), y) in s.data_mut().iter_mut().zip(tz.data()).zip(labels.iter()) {
                            *x += k * (scalar::sigmoid(*zz) - y);
                        }
                    });
                }
            }
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

fn axpy_prod(s: &mut Tensor, g: &Tensor, other: &Tensor) {
    for ((x, y), z) in s.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
        *x += y * z;
    }
}

/// Expands a packed upper triangle (row-major, `k <= l`) into a full symmetric matrix.
pub fn unpack_symmetric(packed: &[f64], d: usize) -> Tensor {
    let mut m = Tensor::zeros(&[d, d]);
    let mut k = 0;
    for r in 0..d {
        for c in r..d {
            m.set(r, c, packed[k]);
            m.set(c, r, packed[k]);
            k += 1;
        }
    }
    m
}
