//! One ensemble member: an encoder producing node embeddings plus the two heads.
//!
//! Checkpoint format (JSON, UTF-8):
//!
//! ```text
//! {
//!   "format": "deepal-checkpoint/1",
//!   "dropout": 0.1,
//!   "encoder": "rgcn" | "free",
//!   "free_nodes": [..],                       // free encoder only
//!   "params": { "<name>": { "shape": [..], "data": [..] }, .. }
//! }
//! ```
//!
//! `params` keys are the names from [`ModelParams::named_params`]; `data` is
//! row-major. Floats are written in shortest round-trip form and parsed with
//! correct rounding, so a saved member reloads bit-identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{BilinearHead, DistMultHead};
use crate::numerics::Tensor;
use crate::rgcn::{glorot, NormBlock, Propagation, RgcnConfig, RgcnLayer, RgcnParams};

pub const CHECKPOINT_FORMAT: &str = "deepal-checkpoint/1";

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Rgcn(RgcnParams),
    /// A free embedding row per listed graph node; the graph is never read.
    Free { nodes: Vec<usize>, table: Tensor },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub distmult: DistMultHead,
    pub bilinear: BilinearHead,
}

/// Which blocks an optimizer step may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    DistMult,
    Bilinear,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        if name.starts_with("distmult.") {
            ParamGroup::DistMult
        } else if name.starts_with("bilinear.") {
            ParamGroup::Bilinear
        } else {
            ParamGroup::Encoder
        }
    }
}

impl ModelParams {
    pub fn init_rgcn(
        num_nodes: usize,
        num_relations: usize,
        cfg: &RgcnConfig,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let rgcn = RgcnParams::init(num_nodes, num_relations, cfg, rng)?;
        let distmult = DistMultHead::init(num_relations, cfg.embedding_dim, rng);
        let bilinear = BilinearHead::init(cfg.embedding_dim, dropout)?;
        Ok(ModelParams {
            encoder: Encoder::Rgcn(rgcn),
            distmult,
            bilinear,
        })
    }

    pub fn init_free(
        nodes: Vec<usize>,
        num_relations: usize,
        dim: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let table = glorot(nodes.len(), dim, nodes.len(), dim, rng);
        let distmult = DistMultHead::init(num_relations, dim, rng);
        let bilinear = BilinearHead::init(dim, dropout)?;
        Ok(ModelParams {
            encoder: Encoder::Free { nodes, table },
            distmult,
            bilinear,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.bilinear.dim()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = match &self.encoder {
            Encoder::Rgcn(p) => p.named_params(),
            Encoder::Free { table, .. } => vec![("free.embeddings".to_string(), table)],
        };
        out.push(("distmult.relations".into(), &self.distmult.relations));
        out.push(("bilinear.upper".into(), &self.bilinear.upper));
        out.push(("bilinear.bias".into(), &self.bilinear.bias));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = match &mut self.encoder {
            Encoder::Rgcn(p) => p.named_params_mut(),
            Encoder::Free { table, .. } => vec![("free.embeddings".to_string(), table)],
        };
        out.push(("distmult.relations".into(), &mut self.distmult.relations));
        out.push(("bilinear.upper".into(), &mut self.bilinear.upper));
        out.push(("bilinear.bias".into(), &mut self.bilinear.bias));
        out
    }

    /// Restores parameter constraints after an update.
    pub fn project(&mut self) {
        if let Encoder::Rgcn(p) = &mut self.encoder {
            p.project();
        }
    }

    /// Checks the member against a graph's operators.
    pub fn check_graph(&self, prop: &Propagation) -> Result<()> {
        if let Encoder::Rgcn(p) = &self.encoder {
            if p.num_nodes != prop.num_nodes() {
                return Err(Error::Shape(format!(
                    "member sized for {} nodes, graph has {}",
                    p.num_nodes,
                    prop.num_nodes()
                )));
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .named_params()
            .into_iter()
            .map(|(name, t)| (name, t.clone()))
            .collect();
        let (encoder, free_nodes) = match &self.encoder {
            Encoder::Rgcn(_) => ("rgcn".to_string(), None),
            Encoder::Free { nodes, .. } => ("free".to_string(), Some(nodes.clone())),
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            dropout: self.bilinear.dropout,
            encoder,
            free_nodes,
            params,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", ck.format)));
        }
        let mut params = ck.params;
        let mut take = |name: &str| {
            params
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        let distmult = DistMultHead {
            relations: take("distmult.relations")?,
        };
        let upper = take("bilinear.upper")?;
        let bias = take("bilinear.bias")?.item();
        let d = distmult.relations.cols();
        let bilinear = BilinearHead::new(upper, bias, ck.dropout, d)?;

        let encoder = match ck.encoder.as_str() {
            "free" => {
                let nodes = ck
                    .free_nodes
                    .ok_or_else(|| Error::Checkpoint("free encoder without node list".into()))?;
                let table = take("free.embeddings")?;
                if table.rows() != nodes.len() {
                    return Err(Error::Checkpoint("free table rows disagree with node list".into()));
                }
                Encoder::Free { nodes, table }
            }
            "rgcn" => Encoder::Rgcn(rgcn_from_map(&mut params, distmult.num_relations())?),
            other => return Err(Error::Checkpoint(format!("unknown encoder `{other}`"))),
        };
        if let Some(name) = params.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected parameter `{name}`")));
        }
        Ok(ModelParams {
            encoder,
            distmult,
            bilinear,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}

fn rgcn_from_map(params: &mut BTreeMap<String, Tensor>, num_relations: usize) -> Result<RgcnParams> {
    let mut layers = Vec::new();
    while params.contains_key(&format!("rgcn.layer{}.self", layers.len())) {
        let l = layers.len();
        let self_weight = params.remove(&format!("rgcn.layer{l}.self")).expect("checked");
        let relation = (0..num_relations)
            .map(|r| {
                params
                    .remove(&format!("rgcn.layer{l}.rel{r}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing rgcn.layer{l}.rel{r}")))
            })
            .collect::<Result<Vec<_>>>()?;
        layers.push(RgcnLayer {
            relation,
            self_weight,
        });
    }
    if layers.is_empty() {
        return Err(Error::Checkpoint("no R-GCN layers".into()));
    }
    let num_nodes = layers[0].self_weight.rows();
    let norms = (0..layers.len() - 1)
        .map(|k| {
            let key = |part: &str| format!("rgcn.norm{k}.{part}");
            if !params.contains_key(&key("assign")) {
                return Ok(None);
            }
            let mut take = |part: &str| {
                params
                    .remove(&key(part))
                    .ok_or_else(|| Error::Checkpoint(format!("missing {}", key(part))))
            };
            Ok(Some(NormBlock {
                assign: take("assign")?,
                scale: take("scale")?,
                shift: take("shift")?,
                skip: take("skip")?,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RgcnParams {
        num_nodes,
        num_relations,
        layers,
        norms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub dropout: f64,
    pub encoder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_nodes: Option<Vec<usize>>,
    pub params: BTreeMap<String, Tensor>,
}
