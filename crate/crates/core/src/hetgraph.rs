//! Typed-node, typed-edge undirected knowledge graph.
//!
//! File format (UTF-8, tab separated, `#` starts a comment line):
//!
//! ```text
//! N <id> <label>
//! E <src> <relation> <dst>
//! ```
//!
//! Node ids are arbitrary tokens mapped to dense indices in declaration order.
//! Relation ids are dense indices in lexicographic order of the relation names,
//! so the same vocabulary always maps to the same ids. Edges are undirected and
//! stored canonically with `src <= dst`; duplicates collapse on load.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Corruption attempts per positive edge before the sampler gives up.
pub const NEGATIVE_RETRY_BUDGET: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeLabel {
    Gene,
    Protein,
    BiologicalProcess,
    MolecularFunction,
    CellularComponent,
}

impl NodeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeLabel::Gene => "Gene",
            NodeLabel::Protein => "Protein",
            NodeLabel::BiologicalProcess => "BiologicalProcess",
            NodeLabel::MolecularFunction => "MolecularFunction",
            NodeLabel::CellularComponent => "CellularComponent",
        }
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Gene" => Ok(NodeLabel::Gene),
            "Protein" => Ok(NodeLabel::Protein),
            "BiologicalProcess" => Ok(NodeLabel::BiologicalProcess),
            "MolecularFunction" => Ok(NodeLabel::MolecularFunction),
            "CellularComponent" => Ok(NodeLabel::CellularComponent),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// An undirected, typed edge in canonical orientation (`src <= dst`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub relation: usize,
    pub dst: usize,
}

impl Edge {
    pub fn canonical(a: usize, relation: usize, b: usize) -> Self {
        let (src, dst) = if a <= b { (a, b) } else { (b, a) };
        Edge { src, relation, dst }
    }
}

#[derive(Clone, Debug)]
pub struct HetGraph {
    node_ids: Vec<String>,
    labels: Vec<NodeLabel>,
    index: HashMap<String, usize>,
    relations: Vec<String>,
    edges: Vec<Edge>,
    edge_set: HashSet<Edge>,
    /// `adjacency[r][i]` is the sorted neighbor list N_i^r.
    adjacency: Vec<Vec<Vec<usize>>>,
    /// Distinct neighbors of each node across every relation, sorted.
    neighbors: Vec<Vec<usize>>,
}

impl PartialEq for HetGraph {
    fn eq(&self, other: &Self) -> bool {
        self.node_ids == other.node_ids
            && self.labels == other.labels
            && self.relations == other.relations
            && self.edges == other.edges
    }
}

impl HetGraph {
    /// Builds a graph from dense parts. Relation indices in `edges` refer to
    /// positions in `relations`; they are remapped to sorted-name order.
    pub fn from_parts(
        nodes: Vec<(String, NodeLabel)>,
        relations: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize, usize)>,
    ) -> Result<Self> {
        let n = nodes.len();
        let mut index = HashMap::with_capacity(n);
        let mut node_ids = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for (i, (id, label)) in nodes.into_iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Precondition(format!("duplicate node id `{id}`")));
            }
            node_ids.push(id);
            labels.push(label);
        }

        let mut sorted: Vec<String> = relations.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != relations.len() {
            return Err(Error::Precondition("duplicate relation name".into()));
        }
        let remap: Vec<usize> = relations
            .iter()
            .map(|r| sorted.binary_search(r).expect("present"))
            .collect();

        let mut set = BTreeSet::new();
        for (a, r, b) in edges {
            if a >= n {
                return Err(Error::DanglingEndpoint(a.to_string()));
            }
            if b >= n {
                return Err(Error::DanglingEndpoint(b.to_string()));
            }
            let rel = *remap
                .get(r)
                .ok_or_else(|| Error::UnknownRelation(r.to_string()))?;
            set.insert(Edge::canonical(a, rel, b));
        }
        let edges: Vec<Edge> = set.into_iter().collect();
        Ok(Self::assemble(node_ids, labels, index, sorted, edges))
    }

    fn assemble(
        node_ids: Vec<String>,
        labels: Vec<NodeLabel>,
        index: HashMap<String, usize>,
        relations: Vec<String>,
        edges: Vec<Edge>,
    ) -> Self {
        let n = node_ids.len();
        let mut adjacency = vec![vec![Vec::new(); n]; relations.len()];
        let mut neighbors = vec![Vec::new(); n];
        for e in &edges {
            adjacency[e.relation][e.src].push(e.dst);
            neighbors[e.src].push(e.dst);
            if e.src != e.dst {
                adjacency[e.relation][e.dst].push(e.src);
                neighbors[e.dst].push(e.src);
            }
        }
        for per_rel in &mut adjacency {
            for list in per_rel.iter_mut() {
                list.sort_unstable();
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let edge_set = edges.iter().copied().collect();
        HetGraph {
            node_ids,
            labels,
            index,
            relations,
            edges,
            edge_set,
            adjacency,
            neighbors,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.binary_search_by(|r| r.as_str().cmp(name)).ok()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_id(&self, i: usize) -> &str {
        &self.node_ids[i]
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn label(&self, i: usize) -> NodeLabel {
        self.labels[i]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains_edge(&self, edge: Edge) -> bool {
        self.edge_set.contains(&Edge::canonical(edge.src, edge.relation, edge.dst))
    }

    /// N_i^r.
    pub fn neighbors_in(&self, node: usize, relation: usize) -> &[usize] {
        &self.adjacency[relation][node]
    }

    /// Distinct neighbors over all relations.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    /// Edge count per relation, indexed by relation id.
    pub fn edge_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.relations.len()];
        for e in &self.edges {
            counts[e.relation] += 1;
        }
        counts
    }

    /// Subgraph induced by `keep`, preserving the relation vocabulary.
    /// Nodes keep their relative order.
    pub fn induced_subgraph(&self, keep: &BTreeSet<usize>) -> HetGraph {
        let mut remap = vec![usize::MAX; self.num_nodes()];
        let mut node_ids = Vec::with_capacity(keep.len());
        let mut labels = Vec::with_capacity(keep.len());
        let mut index = HashMap::with_capacity(keep.len());
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
            node_ids.push(self.node_ids[old].clone());
            labels.push(self.labels[old]);
            index.insert(self.node_ids[old].clone(), new);
        }
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .filter(|e| remap[e.src] != usize::MAX && remap[e.dst] != usize::MAX)
            .map(|e| Edge::canonical(remap[e.src], e.relation, remap[e.dst]))
            .collect();
        edges.sort_unstable();
        Self::assemble(node_ids, labels, index, self.relations.clone(), edges)
    }

    /// Canonical TSV: nodes in index order, then edges sorted by (src, relation, dst).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, label) in self.node_ids.iter().zip(&self.labels) {
            out.push_str(&format!("N\t{id}\t{label}\n"));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "E\t{}\t{}\t{}\n",
                self.node_ids[e.src], self.relations[e.relation], self.node_ids[e.dst]
            ));
        }
        out
    }

    pub fn parse_tsv(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };

        let mut nodes: Vec<(String, NodeLabel)> = Vec::new();
        let mut seen: HashMap<String, NodeLabel> = HashMap::new();
        let mut raw_edges: Vec<(usize, String, String, String)> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.first().copied() {
                Some("N") => {
                    if fields.len() != 3 {
                        return Err(parse_err(
                            lineno,
                            format!("node line needs 3 fields, found {}", fields.len()),
                        ));
                    }
                    let label: NodeLabel = fields[2].parse()?;
                    match seen.get(fields[1]) {
                        Some(&prev) if prev != label => {
                            return Err(parse_err(
                                lineno,
                                format!("node `{}` redeclared with label {label}", fields[1]),
                            ));
                        }
                        Some(_) => {}
                        None => {
                            seen.insert(fields[1].to_string(), label);
                            nodes.push((fields[1].to_string(), label));
                        }
                    }
                }
                Some("E") => {
                    if fields.len() != 4 {
                        return Err(parse_err(
                            lineno,
                            format!("edge line needs 4 fields, found {}", fields.len()),
                        ));
                    }
                    raw_edges.push((
                        lineno,
                        fields[1].to_string(),
                        fields[2].to_string(),
                        fields[3].to_string(),
                    ));
                }
                Some(other) => {
                    return Err(parse_err(lineno, format!("unknown record type `{other}`")));
                }
                None => unreachable!("blank lines are skipped"),
            }
        }

        let index: HashMap<&str, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.as_str(), i))
            .collect();
        let mut relations: Vec<String> = raw_edges.iter().map(|e| e.2.clone()).collect();
        relations.sort();
        relations.dedup();

        let mut edges = Vec::with_capacity(raw_edges.len());
        for (_, src, rel, dst) in &raw_edges {
            let a = *index
                .get(src.as_str())
                .ok_or_else(|| Error::DanglingEndpoint(src.clone()))?;
            let b = *index
                .get(dst.as_str())
                .ok_or_else(|| Error::DanglingEndpoint(dst.clone()))?;
            let r = relations.binary_search(rel).expect("collected above");
            edges.push((a, r, b));
        }
        HetGraph::from_parts(nodes, relations, edges)
    }
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<HetGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    HetGraph::parse_tsv(&text, path)
}

pub fn save_graph(g: &HetGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, g.to_tsv()).map_err(|e| Error::io(path, e))
}

/// Ordered set of target genes H.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetSet {
    genes: Vec<usize>,
}

impl TargetSet {
    pub fn new(g: &HetGraph, genes: Vec<usize>) -> Result<Self> {
        if genes.len() < 2 {
            return Err(Error::InvalidTargets(format!(
                "need at least 2 genes, got {}",
                genes.len()
            )));
        }
        let mut seen = HashSet::new();
        for &i in &genes {
            if i >= g.num_nodes() {
                return Err(Error::UnknownNode(i.to_string()));
            }
            if g.label(i) != NodeLabel::Gene {
                return Err(Error::InvalidTargets(format!(
                    "`{}` is a {}, not a Gene",
                    g.node_id(i),
                    g.label(i)
                )));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidTargets(format!(
                    "duplicate target `{}`",
                    g.node_id(i)
                )));
            }
        }
        Ok(TargetSet { genes })
    }

    pub fn from_ids<S: AsRef<str>>(g: &HetGraph, ids: &[S]) -> Result<Self> {
        let genes = ids
            .iter()
            .map(|id| {
                g.node_index(id.as_ref())
                    .ok_or_else(|| Error::UnknownNode(id.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(g, genes)
    }

    pub fn genes(&self) -> &[usize] {
        &self.genes
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub walks_per_target: usize,
    pub walk_length: usize,
    /// Master seed; set by the caller rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            walks_per_target: 5,
            walk_length: 5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walks_per_target == 0 {
            return Err(Error::config("walks_per_target", "must be at least 1"));
        }
        Ok(())
    }
}

/// Node sequence of one walk, starting at `start`. Each step moves to a
/// uniformly chosen distinct neighbor; a node without neighbors ends the walk.
pub fn walk_from(g: &HetGraph, start: usize, length: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut path = Vec::with_capacity(length + 1);
    path.push(start);
    let mut current = start;
    for _ in 0..length {
        let nbrs = g.neighbors(current);
        if nbrs.is_empty() {
            break;
        }
        current = nbrs[rng.random_range(0..nbrs.len())];
        path.push(current);
    }
    path
}

/// Union of nodes visited by `w` walks of length `s` from every target.
/// Walk `k` from target `t` draws from stream `walk/<id of t>/<k>`.
pub fn random_walk_nodes(
    g: &HetGraph,
    targets: &TargetSet,
    cfg: &SamplerConfig,
) -> Result<BTreeSet<usize>> {
    cfg.validate()?;
    let mut visited = BTreeSet::new();
    for &t in targets.genes() {
        if t >= g.num_nodes() {
            return Err(Error::UnknownNode(t.to_string()));
        }
        visited.insert(t);
        for k in 0..cfg.walks_per_target {
            let mut rng = seed::stream(cfg.seed, &["walk", g.node_id(t), &k.to_string()]);
            visited.extend(walk_from(g, t, cfg.walk_length, &mut rng));
        }
    }
    Ok(visited)
}

/// Subgraph induced by the random-walk node set.
pub fn random_walk_subgraph(
    g: &HetGraph,
    targets: &TargetSet,
    cfg: &SamplerConfig,
) -> Result<HetGraph> {
    let nodes = random_walk_nodes(g, targets, cfg)?;
    Ok(g.induced_subgraph(&nodes))
}

/// One corrupted edge per positive: same relation, head or tail (probability ½
/// each) replaced by a uniformly drawn node, rejected while the result is an
/// existing edge or a self-loop. Draws come from the single stream `negatives`.
pub fn sample_negative_edges(g: &HetGraph, positives: &[Edge], seed: u64) -> Result<Vec<Edge>> {
    sample_negative_edges_with(g, positives, seed, false)
}

/// As [`sample_negative_edges`], optionally accepting self-loop corruptions.
pub fn sample_negative_edges_with(
    g: &HetGraph,
    positives: &[Edge],
    seed: u64,
    allow_self_loops: bool,
) -> Result<Vec<Edge>> {
    let n = g.num_nodes();
    let mut rng = seed::stream(seed, &["negatives"]);
    let mut out = Vec::with_capacity(positives.len());
    for pos in positives {
        let mut found = None;
        for _ in 0..NEGATIVE_RETRY_BUDGET {
            let corrupt_head = rng.random_bool(0.5);
            let node = rng.random_range(0..n);
            let (a, b) = if corrupt_head {
                (node, pos.dst)
            } else {
                (pos.src, node)
            };
            if a == b && !allow_self_loops {
                continue;
            }
            let candidate = Edge::canonical(a, pos.relation, b);
            if !g.contains_edge(candidate) {
                found = Some(candidate);
                break;
            }
        }
        match found {
            Some(e) => out.push(e),
            None => {
                return Err(Error::NegativeSaturation {
                    src: pos.src,
                    relation: pos.relation,
                    dst: pos.dst,
                    attempts: NEGATIVE_RETRY_BUDGET,
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(text: &str) -> Result<HetGraph> {
        HetGraph::parse_tsv(text, &PathBuf::from("test.tsv"))
    }

    #[test]
    fn minimal_file() {
        let g = parse("N\tg1\tGene\nN\tp1\tProtein\nE\tg1\tENCODES\tp1\n").unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.num_relations(), 1);
        assert_eq!(g.label(1), NodeLabel::Protein);
    }

    #[test]
    fn reversed_duplicate_collapses() {
        let g = parse(
            "# comment\nN g1 Gene\nN p1 Protein\nE g1 ENCODES p1\nE p1 ENCODES g1\n",
        )
        .unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors_in(0, 0), &[1]);
        assert_eq!(g.neighbors_in(1, 0), &[0]);
    }

    #[test]
    fn dangling_endpoint_names_node() {
        let err = parse("N g1 Gene\nE g1 ENCODES ghost\n").unwrap_err();
        assert!(matches!(&err, Error::DanglingEndpoint(id) if id == "ghost"));
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn unknown_label_and_bad_lines() {
        assert!(matches!(
            parse("N g1 Virus\n").unwrap_err(),
            Error::UnknownLabel(l) if l == "Virus"
        ));
        assert!(matches!(
            parse("N g1 Gene\nE g1 R\n").unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
        assert!(matches!(
            parse("X a b\n").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn relation_ids_follow_name_order() {
        let g = parse("N a Gene\nN b Gene\nE a ZZZ b\nE a AAA b\n").unwrap();
        assert_eq!(g.relations(), &["AAA".to_string(), "ZZZ".to_string()]);
        assert_eq!(g.relation_index("ZZZ"), Some(1));
    }

    #[test]
    fn save_then_load_is_identity() {
        let g = parse("N b Gene\nN a Protein\nN c Gene\nE c R2 b\nE a R1 b\nE b R1 a\n").unwrap();
        let back = parse(&g.to_tsv()).unwrap();
        assert_eq!(g, back);
        assert_eq!(g.to_tsv(), back.to_tsv());
    }

    fn path_graph() -> HetGraph {
        let names = ["t", "a", "b", "c", "d", "e"];
        let nodes = names
            .iter()
            .map(|n| (n.to_string(), NodeLabel::Gene))
            .collect();
        HetGraph::from_parts(nodes, vec!["R".into()], (0..5).map(|i| (i, 0, i + 1))).unwrap()
    }

    #[test]
    fn zero_length_walks_keep_only_targets() {
        let g = path_graph();
        let targets = TargetSet::new(&g, vec![0, 2]).unwrap();
        let cfg = SamplerConfig {
            walks_per_target: 3,
            walk_length: 0,
            seed: 1,
        };
        let sub = random_walk_subgraph(&g, &targets, &cfg).unwrap();
        assert_eq!(sub.node_ids(), &["t".to_string(), "b".to_string()]);
        assert_eq!(sub.num_edges(), 0);
    }

    #[test]
    fn forced_chain_is_bounded_by_path() {
        let g = path_graph();
        let targets = TargetSet::new(&g, vec![0, 1]).unwrap();
        let cfg = SamplerConfig {
            walks_per_target: 1,
            walk_length: 5,
            seed: 3,
        };
        let nodes = random_walk_nodes(&g, &targets, &cfg).unwrap();
        assert!(nodes.contains(&0) && nodes.iter().all(|&n| n < 6));
    }

    #[test]
    fn forced_chain_visits_all() {
        // Every node has exactly one neighbor, so each step is forced.
        let names = ["t", "a"];
        let nodes = names
            .iter()
            .map(|n| (n.to_string(), NodeLabel::Gene))
            .collect();
        let g = HetGraph::from_parts(nodes, vec!["R".into()], [(0, 0, 1)]).unwrap();
        let targets = TargetSet::new(&g, vec![0, 1]).unwrap();
        let cfg = SamplerConfig {
            walks_per_target: 1,
            walk_length: 5,
            seed: 3,
        };
        let mut rng = seed::stream(3, &["walk", "t", "0"]);
        assert_eq!(walk_from(&g, 0, 5, &mut rng), vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(random_walk_nodes(&g, &targets, &cfg).unwrap().len(), 2);
    }

    #[test]
    fn isolated_node_ends_walk() {
        let nodes = vec![("t".to_string(), NodeLabel::Gene), ("u".to_string(), NodeLabel::Gene)];
        let g = HetGraph::from_parts(nodes, vec!["R".into()], []).unwrap();
        let mut rng = seed::stream(0, &["x"]);
        assert_eq!(walk_from(&g, 0, 5, &mut rng), vec![0]);
    }

    #[test]
    fn targets_validated() {
        let g = parse("N g1 Gene\nN g2 Gene\nN p Protein\n").unwrap();
        assert!(TargetSet::new(&g, vec![0]).is_err());
        assert!(TargetSet::new(&g, vec![0, 0]).is_err());
        assert!(TargetSet::new(&g, vec![0, 2]).is_err());
        assert!(TargetSet::from_ids(&g, &["g1", "nope"]).is_err());
        assert!(TargetSet::from_ids(&g, &["g1", "g2"]).is_ok());
    }

    #[test]
    fn negatives_empty_and_saturated() {
        let g = parse("N g1 Gene\nN p1 Protein\nE g1 ENCODES p1\n").unwrap();
        assert!(sample_negative_edges(&g, &[], 1).unwrap().is_empty());
        let err = sample_negative_edges(&g, g.edges(), 1).unwrap_err();
        assert!(matches!(err, Error::NegativeSaturation { attempts: 100, .. }));
        let loops = sample_negative_edges_with(&g, g.edges(), 1, true).unwrap();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].src, loops[0].dst);
    }
}
