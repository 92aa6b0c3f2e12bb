//! Synthetic knowledge graphs with a planted pair-value matrix.
//!
//! Recipe for a [`WorldSpec`] with master seed `s`:
//!
//! 1. Stream `world/latent`: draw `z_g ~ N(0, I_k)` for each gene, then a
//!    latent for each protein, then for each process (components in order,
//!    standard normal). Then the core `B`: for `a <= b` in row-major order,
//!    `B[a][b] = B[b][a] = core_scale · N(0, 1)`, then `affinity` is
//!    subtracted from every diagonal entry.
//! 2. For each relation, stream `world/edges/<RELATION>`: walk the candidate
//!    endpoint pairs in the order listed below, draw `u ~ U[0, 1)` per pair and
//!    keep the edge when `u < min(1, 2 · density · σ(sharpness · cos(u_a, u_b)))`
//!    where `u_a`, `u_b` are the endpoint latents.
//!    * `ENCODES`: gene `g` × protein `p`, `g` outer.
//!    * `INTERACTS`: proteins `a < b`.
//!    * `PARTICIPATES_IN`: gene `g` × process `q`, `g` outer.
//!    * `REGULATES`: genes `a < b`.
//! 3. Stream `world/noise`: for each gene pair in pair-index order,
//!    `y = softplus(z_aᵀ B z_b) + bias + noise · N(0, 1)`, floored at
//!    [`VALUE_FLOOR`].
//! 4. The `round(hit_fraction · |S|)` smallest values (ties by pair index,
//!    at least one) are multiplied by `hit_depression`.
//!
//! Node ids are `G000`, `P000`, `BP000`; nodes are declared genes first, then
//! proteins, then processes. The targets are all genes in order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activeloop::{pair_at, pair_count, pair_index, top_k, World};
use crate::error::{Error, Result};
use crate::hetgraph::{load_graph, save_graph, HetGraph, NodeLabel, TargetSet};
use crate::numerics::{sigmoid, softplus, Tensor};
use crate::seed;

pub const VALUE_FLOOR: f64 = 1e-3;

pub const ENCODES: &str = "ENCODES";
pub const INTERACTS: &str = "INTERACTS";
pub const PARTICIPATES_IN: &str = "PARTICIPATES_IN";
pub const REGULATES: &str = "REGULATES";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Densities {
    pub encodes: f64,
    pub interacts: f64,
    pub participates_in: f64,
    pub regulates: f64,
}

impl Default for Densities {
    fn default() -> Self {
        Densities {
            encodes: 0.02,
            interacts: 0.01,
            participates_in: 0.03,
            regulates: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub genes: usize,
    pub proteins: usize,
    pub processes: usize,
    pub latent_dim: usize,
    pub densities: Densities,
    /// Slope of edge probability in latent cosine similarity.
    pub sharpness: f64,
    /// Scale of the random entries of the interaction core `B`.
    pub core_scale: f64,
    /// Amount subtracted from the diagonal of `B`; positive values make
    /// pairs of aligned genes the low-value ones.
    pub affinity: f64,
    pub bias: f64,
    pub noise: f64,
    pub hit_fraction: f64,
    /// Multiplier applied to hit values.
    pub hit_depression: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            genes: 64,
            proteins: 128,
            processes: 64,
            latent_dim: 8,
            densities: Densities::default(),
            sharpness: 4.0,
            core_scale: 0.25,
            affinity: 1.0,
            bias: 0.5,
            noise: 0.05,
            hit_fraction: 0.05,
            hit_depression: 0.5,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.genes < 4 {
            return Err(Error::config("world.genes", "must be at least 4"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("world.latent_dim", "must be positive"));
        }
        let d = &self.densities;
        for (field, v) in [
            ("world.densities.encodes", d.encodes),
            ("world.densities.interacts", d.interacts),
            ("world.densities.participates_in", d.participates_in),
            ("world.densities.regulates", d.regulates),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(field, format!("{v} is outside [0, 1)")));
            }
        }
        if !(self.hit_fraction > 0.0 && self.hit_fraction < 0.5) {
            return Err(Error::config("world.hit_fraction", "must lie in (0, 0.5)"));
        }
        if !(self.hit_depression > 0.0 && self.hit_depression < 1.0) {
            return Err(Error::config("world.hit_depression", "must lie in (0, 1)"));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::config("world.noise", "must be nonnegative"));
        }
        for (field, v) in [
            ("world.sharpness", self.sharpness),
            ("world.core_scale", self.core_scale),
            ("world.affinity", self.affinity),
            ("world.bias", self.bias),
        ] {
            if !v.is_finite() {
                return Err(Error::config(field, "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    /// `p × k` gene latents.
    pub latents: Tensor,
    /// `(proteins + processes) × k` latents of the auxiliary nodes.
    pub aux_latents: Tensor,
    /// Symmetric `k × k` interaction core.
    pub core: Tensor,
    pub bias: f64,
    /// Final value per pair index.
    pub values: Vec<f64>,
    /// Pair indices that were depressed.
    pub hits: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GeneratedWorld {
    pub graph: HetGraph,
    pub world: World,
    pub truth: PlantedTruth,
    pub warnings: Vec<String>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn edge_probability(density: f64, sharpness: f64, cos: f64) -> f64 {
    (2.0 * density * sigmoid(sharpness * cos)).min(1.0)
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gene_id(i: usize) -> String {
    format!("G{i:03}")
}

pub fn protein_id(i: usize) -> String {
    format!("P{i:03}")
}

pub fn process_id(i: usize) -> String {
    format!("BP{i:03}")
}

pub fn generate_world(spec: &WorldSpec) -> Result<GeneratedWorld> {
    spec.validate()?;
    let (p, np, nq, k) = (spec.genes, spec.proteins, spec.processes, spec.latent_dim);

    let mut rng = seed::stream(spec.seed, &["world", "latent"]);
    let latents = normal_matrix(p, k, &mut rng);
    let aux_latents = normal_matrix(np + nq, k, &mut rng);
    let mut core = Tensor::zeros(&[k, k]);
    for a in 0..k {
        for b in a..k {
            let v: f64 = rng.sample::<f64, _>(StandardNormal) * spec.core_scale;
            core.set(a, b, v);
            core.set(b, a, v);
        }
        core.set(a, a, core.get(a, a) - spec.affinity);
    }

    let gene = |i: usize| latents.row(i);
    let protein = |i: usize| aux_latents.row(i);
    let process = |i: usize| aux_latents.row(np + i);

    let mut nodes: Vec<(String, NodeLabel)> = (0..p).map(|i| (gene_id(i), NodeLabel::Gene)).collect();
    nodes.extend((0..np).map(|i| (protein_id(i), NodeLabel::Protein)));
    nodes.extend((0..nq).map(|i| (process_id(i), NodeLabel::BiologicalProcess)));
    let relations: Vec<String> = [ENCODES, INTERACTS, PARTICIPATES_IN, REGULATES]
        .iter()
        .map(|s| s.to_string())
        .collect();

    let mut edges = Vec::new();
    let mut sample = |name: &str, rel: usize, density: f64, pairs: &mut dyn Iterator<Item = (usize, usize, f64)>| {
        let mut rng = seed::stream(spec.seed, &["world", "edges", name]);
        for (a, b, cos) in pairs {
            let u: f64 = rng.random();
            if u < edge_probability(density, spec.sharpness, cos) {
                edges.push((a, rel, b));
            }
        }
    };
    let d = &spec.densities;
    sample(
        ENCODES,
        0,
        d.encodes,
        &mut (0..p).flat_map(|g| (0..np).map(move |q| (g, q))).map(|(g, q)| (g, p + q, cosine(gene(g), protein(q)))),
    );
    sample(
        INTERACTS,
        1,
        d.interacts,
        &mut (0..np)
            .flat_map(|a| (a + 1..np).map(move |b| (a, b)))
            .map(|(a, b)| (p + a, p + b, cosine(protein(a), protein(b)))),
    );
    sample(
        PARTICIPATES_IN,
        2,
        d.participates_in,
        &mut (0..p)
            .flat_map(|g| (0..nq).map(move |q| (g, q)))
            .map(|(g, q)| (g, p + np + q, cosine(gene(g), process(q)))),
    );
    sample(
        REGULATES,
        3,
        d.regulates,
        &mut (0..p)
            .flat_map(|a| (a + 1..p).map(move |b| (a, b)))
            .map(|(a, b)| (a, b, cosine(gene(a), gene(b)))),
    );
    let graph = HetGraph::from_parts(nodes, relations, edges)?;

    let mut rng = seed::stream(spec.seed, &["world", "noise"]);
    let mut values = Vec::with_capacity(pair_count(p));
    for idx in 0..pair_count(p) {
        let (a, b) = pair_at(p, idx);
        let form = crate::heads::bilinear_form(gene(a), &core, gene(b));
        let eps: f64 = rng.sample(StandardNormal);
        values.push((softplus(form) + spec.bias + spec.noise * eps).max(VALUE_FLOOR));
    }
    let n_hits = ((spec.hit_fraction * values.len() as f64).round() as usize).max(1);
    let hits = top_k(&values, n_hits);
    for &h in &hits {
        values[h] *= spec.hit_depression;
    }

    let mut warnings = Vec::new();
    let isolated: Vec<String> = (0..p).filter(|&g| graph.neighbors(g).is_empty()).map(gene_id).collect();
    if !isolated.is_empty() {
        warnings.push(format!("{} isolated genes: {}", isolated.len(), isolated.join(", ")));
    }

    let targets = TargetSet::new(&graph, (0..p).collect())?;
    let world = World::new(targets, values.clone())?;
    Ok(GeneratedWorld {
        graph,
        world,
        truth: PlantedTruth {
            latents,
            aux_latents,
            core,
            bias: spec.bias,
            values,
            hits,
        },
        warnings,
    })
}

pub const GRAPH_FILE: &str = "graph.tsv";
pub const TRUTH_FILE: &str = "truth.tsv";
pub const SPEC_FILE: &str = "world.json";

/// Truth table: header `gene_i\tgene_j\tvalue`, one row per pair in pair-index order.
pub fn truth_to_tsv(graph: &HetGraph, world: &World) -> String {
    let mut out = String::from("gene_i\tgene_j\tvalue\n");
    for (idx, v) in world.truth().iter().enumerate() {
        let (i, j) = world.pair_nodes(idx);
        writeln!(out, "{}\t{}\t{}", graph.node_id(i), graph.node_id(j), v).expect("string write");
    }
    out
}

/// Parses a truth table against `graph`. Targets are taken in order of first
/// appearance; every unordered pair must occur exactly once.
pub fn parse_truth(graph: &HetGraph, text: &str, origin: &Path) -> Result<World> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    let mut pos: HashMap<String, usize> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if n == 0 {
            if line.trim_end() != "gene_i\tgene_j\tvalue" {
                return Err(err(line_no, "expected header `gene_i<TAB>gene_j<TAB>value`".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let value: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("bad value `{}`", fields[2])))?;
        let mut slot = |id: &str| {
            let next = ids.len();
            *pos.entry(id.to_string()).or_insert_with(|| {
                ids.push(id.to_string());
                next
            })
        };
        let (a, b) = (slot(fields[0]), slot(fields[1]));
        if a == b {
            return Err(err(line_no, "a pair needs two distinct genes".into()));
        }
        rows.push((line_no, a, b, value));
    }
    let p = ids.len();
    let mut truth = vec![None; pair_count(p)];
    for (line_no, a, b, v) in rows {
        let idx = pair_index(p, a, b);
        if truth[idx].replace(v).is_some() {
            return Err(err(line_no, "pair listed twice".into()));
        }
    }
    let missing = truth.iter().filter(|v| v.is_none()).count();
    if missing > 0 {
        return Err(err(0, format!("{missing} gene pairs have no value")));
    }
    let targets = TargetSet::from_ids(graph, &ids)?;
    World::new(targets, truth.into_iter().map(|v| v.expect("checked")).collect())
}

/// Writes `graph.tsv` and `truth.tsv` (and `world.json` when a spec is given) into `dir`.
pub fn export_world(graph: &HetGraph, world: &World, spec: Option<&WorldSpec>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let graph_path = dir.join(GRAPH_FILE);
    save_graph(graph, &graph_path)?;
    let truth_path = dir.join(TRUTH_FILE);
    fs::write(&truth_path, truth_to_tsv(graph, world)).map_err(|e| Error::io(&truth_path, e))?;
    let mut written = vec![graph_path, truth_path];
    if let Some(spec) = spec {
        let spec_path = dir.join(SPEC_FILE);
        let text = serde_json::to_string_pretty(spec).expect("spec serializes");
        fs::write(&spec_path, text + "\n").map_err(|e| Error::io(&spec_path, e))?;
        written.push(spec_path);
    }
    Ok(written)
}

pub fn load_world_files(graph_path: &Path, truth_path: &Path) -> Result<(HetGraph, World)> {
    let graph = load_graph(graph_path)?;
    let text = fs::read_to_string(truth_path).map_err(|e| Error::io(truth_path, e))?;
    let world = parse_truth(&graph, &text, truth_path)?;
    Ok((graph, world))
}

/// Inverse of [`export_world`].
pub fn load_world(dir: &Path) -> Result<(HetGraph, World)> {
    load_world_files(&dir.join(GRAPH_FILE), &dir.join(TRUTH_FILE))
}
