//! Scoring heads on top of node embeddings.
//!
//! * DistMult edge scorer: `σ(Σ_k x_i[k] r[k] x_j[k])`, one diagonal per relation.
//! * Bilinear regressor: `Softplus(x_iᵀ A x_j) + b` with `A` symmetric by
//!   construction (only the upper triangle is stored).
//! * Badge score: `‖x_i ∘ x_j‖`.
//!
//! Each head has a scalar form used for prediction and acquisition, and a
//! batched form recorded on a [`GradTape`] for training.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tape::unpack_symmetric;
use crate::numerics::{sigmoid, softplus, GradTape, Tensor, Var};
use crate::rgcn::Mode;

pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistMultHead {
    /// `|R| × d`; row `r` is the diagonal of `R_r`.
    pub relations: Tensor,
}

impl DistMultHead {
    pub fn init(num_relations: usize, d: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (1 + d) as f64).sqrt();
        DistMultHead {
            relations: Tensor::from_fn(num_relations, d, |_, _| rng.random_range(-limit..limit)),
        }
    }

    pub fn num_relations(&self) -> usize {
        self.relations.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearHead {
    /// Packed upper triangle of `A` (row-major over `k <= l`).
    pub upper: Tensor,
    pub bias: Tensor,
    pub dropout: f64,
    dim: usize,
}

impl BilinearHead {
    pub fn new(upper: Tensor, bias: f64, dropout: f64, dim: usize) -> Result<Self> {
        if upper.len() != dim * (dim + 1) / 2 {
            return Err(Error::Shape(format!(
                "packed upper triangle for d={dim} needs {} values, got {}",
                dim * (dim + 1) / 2,
                upper.len()
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config("dropout", format!("{dropout} is outside [0, 1)")));
        }
        Ok(BilinearHead {
            upper: upper.reshape(vec![dim * (dim + 1) / 2])?,
            bias: Tensor::scalar(bias),
            dropout,
            dim,
        })
    }

    /// Head whose `A` is the given symmetric matrix (only the upper triangle is read).
    pub fn from_matrix(a: &Tensor, bias: f64, dropout: f64) -> Result<Self> {
        let d = a.rows();
        if a.cols() != d {
            return Err(Error::Shape(format!("A must be square, got {:?}", a.shape())));
        }
        let mut packed = Vec::with_capacity(d * (d + 1) / 2);
        for k in 0..d {
            for l in k..d {
                packed.push(a.get(k, l));
            }
        }
        Self::new(Tensor::vector(packed), bias, dropout, d)
    }

    /// Fresh head with `A = 0` and `b = 0`; every initial prediction is `ln 2`.
    pub fn init(d: usize, dropout: f64) -> Result<Self> {
        Self::new(Tensor::zeros(&[d * (d + 1) / 2]), 0.0, dropout, d)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> Tensor {
        unpack_symmetric(self.upper.data(), self.dim)
    }
}

fn check_dims(a: &[f64], b: &[f64], d: usize) -> Result<()> {
    if a.len() != d || b.len() != d {
        return Err(Error::Shape(format!(
            "embeddings of length {} and {} against dimension {d}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn distmult_logit(x_i: &[f64], relation: usize, x_j: &[f64], head: &DistMultHead) -> Result<f64> {
    if relation >= head.num_relations() {
        return Err(Error::UnknownRelation(relation.to_string()));
    }
    let r = head.relations.row(relation);
    check_dims(x_i, x_j, r.len())?;
    Ok(x_i.iter().zip(r).zip(x_j).map(|((a, w), b)| a * w * b).sum())
}

pub fn distmult_score(x_i: &[f64], relation: usize, x_j: &[f64], head: &DistMultHead) -> Result<f64> {
    distmult_logit(x_i, relation, x_j, head).map(sigmoid)
}

/// `x_iᵀ A x_j` using a materialized `A`.
pub fn bilinear_form(x_i: &[f64], a: &Tensor, x_j: &[f64]) -> f64 {
    let mut total = 0.0;
    for (k, xi) in x_i.iter().enumerate() {
        let row = a.row(k);
        let inner: f64 = row.iter().zip(x_j).map(|(w, b)| w * b).sum();
        total += xi * inner;
    }
    total
}

/// Prediction for one pair. Train mode applies inverted dropout to both
/// embeddings using `rng`; eval mode never touches `rng`.
pub fn bilinear_predict<R: Rng + ?Sized>(
    x_i: &[f64],
    x_j: &[f64],
    head: &BilinearHead,
    mode: Mode,
    rng: &mut R,
) -> Result<f64> {
    check_dims(x_i, x_j, head.dim)?;
    let a = head.matrix();
    let bias = head.bias.item();
    if mode == Mode::Eval || head.dropout == 0.0 {
        return Ok(softplus(bilinear_form(x_i, &a, x_j)) + bias);
    }
    let keep = 1.0 - head.dropout;
    let mut drop = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .map(|&v| if rng.random_bool(keep) { v / keep } else { 0.0 })
            .collect()
    };
    let (di, dj) = (drop(x_i), drop(x_j));
    Ok(softplus(bilinear_form(&di, &a, &dj)) + bias)
}

/// Eval-mode prediction with a pre-materialized `A`.
pub fn bilinear_eval(x_i: &[f64], x_j: &[f64], a: &Tensor, bias: f64) -> f64 {
    softplus(bilinear_form(x_i, a, x_j)) + bias
}

pub fn badge_score(x_i: &[f64], x_j: &[f64]) -> Result<f64> {
    check_dims(x_i, x_j, x_i.len())?;
    Ok(x_i.iter().zip(x_j).map(|(a, b)| (a * b) * (a * b)).sum::<f64>().sqrt())
}

/// Handles of the bilinear head's parameters on a tape.
pub struct BilinearVars {
    pub a: Var,
    pub bias: Var,
}

impl BilinearVars {
    pub fn register(tape: &mut GradTape, head: &BilinearHead) -> Result<Self> {
        let upper = tape.param("bilinear.upper", &head.upper);
        let bias = tape.param("bilinear.bias", &head.bias);
        let a = tape.sym_from_packed(upper, head.dim)?;
        Ok(BilinearVars { a, bias })
    }
}

/// Inverted-dropout mask of the given shape.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Tensor {
    let keep = 1.0 - rate;
    Tensor::from_fn(rows, cols, |_, _| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
}

/// Batched predictions `B × 1` for embedding rows `xi`, `xj` (each `B × d`).
/// Masks, when given, multiply the embeddings before the bilinear form.
pub fn bilinear_on_tape(
    tape: &mut GradTape,
    xi: Var,
    xj: Var,
    head: &BilinearVars,
    masks: Option<(Tensor, Tensor)>,
) -> Result<Var> {
    let (xi, xj) = match masks {
        Some((mi, mj)) => {
            let mi = tape.constant(mi);
            let mj = tape.constant(mj);
            (tape.mul(xi, mi)?, tape.mul(xj, mj)?)
        }
        None => (xi, xj),
    };
    let proj = tape.matmul(xi, head.a)?;
    let prod = tape.mul(proj, xj)?;
    let form = tape.row_sums(prod);
    let act = tape.softplus(form);
    tape.add_scalar(act, head.bias)
}

/// Batched DistMult logits `B × 1`; `rel` holds the relation id of each row.
pub fn distmult_on_tape(tape: &mut GradTape, xi: Var, xj: Var, relations: Var, rel: Arc<Vec<usize>>) -> Result<Var> {
    let r = tape.gather_rows(relations, rel)?;
    let a = tape.mul(xi, r)?;
    let b = tape.mul(a, xj)?;
    Ok(tape.row_sums(b))
}
