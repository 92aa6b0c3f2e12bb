//! Central-difference verification of reverse-mode gradients.

use std::collections::BTreeMap;

use super::tape::{GradTape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Floor of the relative-error denominator. Central differences at step
/// `1e-5` carry rounding noise around `1e-12` on O(1) losses, so gradient
/// coordinates below this floor are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub type ParamMap = BTreeMap<String, Tensor>;

#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// Coordinate with the largest error, with its finite-difference and analytic values.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub step: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err < self.tol)
    }
}

pub fn relative_error(fd: f64, ad: f64) -> f64 {
    (fd - ad).abs() / fd.abs().max(ad.abs()).max(REL_FLOOR)
}

fn forward<F>(build: &F, params: &ParamMap) -> Result<f64>
where
    F: Fn(&mut GradTape, &ParamMap) -> Result<Var>,
{
    let mut tape = GradTape::new();
    let loss = build(&mut tape, params)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares the tape gradient of `build` against central differences for
/// every coordinate of every block in `params`. `build` must register each
/// block with [`GradTape::param`] under its map key.
pub fn check_gradients<F>(build: F, params: &ParamMap, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut GradTape, &ParamMap) -> Result<Var>,
{
    let mut tape = GradTape::new();
    let loss = build(&mut tape, params)?;
    let first = tape.value(loss).item();
    let analytic = tape.backward(loss)?;

    let second = forward(&build, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut probe = params.clone();
    let mut blocks = Vec::with_capacity(params.len());
    for (name, value) in params {
        let grad = analytic.get(name).ok_or_else(|| {
            Error::Precondition(format!("builder did not register parameter `{name}`"))
        })?;
        let mut max_rel_err: f64 = 0.0;
        let mut total = 0.0;
        let mut worst = None;
        for k in 0..value.len() {
            let orig = value.data()[k];
            probe.get_mut(name).expect("cloned").data_mut()[k] = orig + step;
            let up = forward(&build, &probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[k] = orig - step;
            let down = forward(&build, &probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[k] = orig;

            let fd = (up - down) / (2.0 * step);
            let ad = grad.data()[k];
            let err = relative_error(fd, ad);
            total += err;
            if err > max_rel_err || worst.is_none() {
                max_rel_err = max_rel_err.max(err);
                worst = Some((k, fd, ad));
            }
        }
        blocks.push(BlockReport {
            name: name.clone(),
            coords: value.len(),
            max_rel_err,
            mean_rel_err: if value.is_empty() { 0.0 } else { total / value.len() as f64 },
            worst,
        });
    }
    Ok(GradCheckReport { tol, step, blocks })
}
