//! Independent oracles shared by the oracle tests and the acceptance run:
//! a dense-matrix encoder and scalar brute-force heads, reductions and
//! acquisitions.

#![allow(dead_code)]

use deepal::activeloop::{acquire, pair_at, pair_count, predict_views, MemberView, Strategy};
use deepal::hetgraph::{HetGraph, NodeLabel};
use deepal::numerics::Tensor;
use deepal::rgcn::{EmbeddingMatrix, NormBlock, RgcnParams, NORM_EPS};
use deepal::seed;
use rand::seq::SliceRandom;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

/// Row-normalized adjacency of relation `r`: `A[i][j] = 1/|N_i^r|` for neighbors.
pub fn mean_adjacency(g: &HetGraph, r: usize) -> Mat {
    let n = g.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for e in g.edges().iter().filter(|e| e.relation == r) {
        a[e.src][e.dst] = 1.0;
        a[e.dst][e.src] = 1.0;
    }
    for row in &mut a {
        let deg: f64 = row.iter().sum();
        if deg > 0.0 {
            row.iter_mut().for_each(|v| *v /= deg);
        }
    }
    a
}

pub fn dense_norm(h: &Mat, block: &NormBlock) -> Mat {
    let (n, c) = (h.len(), h[0].len());
    if n < 2 {
        return h.clone();
    }
    let u = to_mat(&block.assign);
    let groups = u.len();
    let lambda = block.skip.item();
    let mut out = h.clone();
    let soft: Mat = h
        .iter()
        .map(|row| {
            let logits: Vec<f64> = u.iter().map(|uk| uk.iter().zip(row).map(|(a, b)| a * b).sum()).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect();
    for k in 0..groups {
        for j in 0..c {
            let col: Vec<f64> = (0..n).map(|i| soft[i][k] * h[i][j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let sd = (var + NORM_EPS).sqrt();
            for i in 0..n {
                let z = (col[i] - mean) / sd;
                out[i][j] += lambda * (block.scale.get(k, j) * z + block.shift.get(k, j));
            }
        }
    }
    out
}

pub fn dense_forward(g: &HetGraph, params: &RgcnParams) -> Mat {
    let n = g.num_nodes();
    let adj: Vec<Mat> = (0..g.num_relations()).map(|r| mean_adjacency(g, r)).collect();
    let mut h: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let last = params.layers.len() - 1;
    for l in 0..params.layers.len() {
        let mut pre: Option<Mat> = None;
        for (r, a) in adj.iter().enumerate() {
            let w = to_mat(&params.weight_matrix(l, Some(r)));
            let msg = matmul(&matmul(a, &h), &transpose(&w));
            pre = Some(match pre {
                Some(p) => add(&p, &msg),
                None => msg,
            });
        }
        let w0 = to_mat(&params.weight_matrix(l, None));
        let self_term = matmul(&h, &transpose(&w0));
        let act: Mat = pre
            .unwrap()
            .iter()
            .map(|row| row.iter().map(|v| v.max(0.0)).collect())
            .collect();
        h = add(&act, &self_term);
        if l < last {
            if let Some(Some(block)) = params.norms.get(l) {
                h = dense_norm(&h, block);
            }
        }
    }
    h
}

pub fn random_graph(n: usize, relations: usize, rng: &mut impl Rng) -> HetGraph {
    let nodes = (0..n).map(|i| (format!("n{i}"), NodeLabel::Gene)).collect();
    let names = (0..relations).map(|r| format!("R{r}")).collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for r in 0..relations {
                if rng.random_bool(0.35) {
                    edges.push((a, r, b));
                }
            }
        }
    }
    HetGraph::from_parts(nodes, names, edges).unwrap()
}

pub fn randomize_norms(params: &mut RgcnParams, rng: &mut impl Rng) {
    for block in params.norms.iter_mut().flatten() {
        for v in block.scale.data_mut() {
            *v = rng.random_range(0.5..1.5);
        }
        for v in block.shift.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        block.skip = Tensor::scalar(rng.random_range(0.1..1.0));
    }
}

pub fn max_diff(a: &Mat, b: &Tensor) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - b.get(i, j)).abs());
        }
    }
    worst
}

pub const CLOSE: f64 = 1e-12;

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CLOSE * (1.0 + a.abs().max(b.abs()))
}

pub fn vec_in(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()
}

pub fn sym(d: usize, rng: &mut impl Rng) -> Tensor {
    let mut a = Tensor::zeros(&[d, d]);
    for k in 0..d {
        for l in k..d {
            let v = rng.random_range(-0.5..0.5);
            a.set(k, l, v);
            a.set(l, k, v);
        }
    }
    a
}

pub fn oracle_softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

pub fn oracle_bilinear(xi: &[f64], a: &Tensor, xj: &[f64], b: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..xi.len() {
        for l in 0..xj.len() {
            s += xi[k] * a.get(k, l) * xj[l];
        }
    }
    oracle_softplus(s) + b
}

pub fn oracle_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = (v.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn oracle_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn oracle_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub struct Instance {
    pub views: Vec<MemberView>,
    pub p: usize,
    pub candidates: Vec<usize>,
}

/// `members` views over `p` targets with random embeddings and heads; the
/// first 100 pairs are the candidates.
pub fn instance(members: usize, seed_: u64) -> Instance {
    let mut rng = seed::stream(seed_, &["acquisition-instance"]);
    let (p, d) = (16, 5);
    let views = (0..members)
        .map(|_| MemberView {
            embeddings: EmbeddingMatrix {
                nodes: (0..p).collect(),
                values: Tensor::from_fn(p, d, |_, _| rng.random_range(-1.0..1.0)),
            },
            a: sym(d, &mut rng),
            bias: rng.random_range(0.0..0.5),
        })
        .collect();
    let mut candidates: Vec<usize> = (0..pair_count(p)).collect();
    candidates.shuffle(&mut rng);
    candidates.truncate(100);
    Instance { views, p, candidates }
}

pub fn member_values(inst: &Instance, k: usize) -> Vec<f64> {
    let (a, b) = pair_at(inst.p, k);
    inst.views
        .iter()
        .map(|v| oracle_bilinear(v.embeddings.row(a), &v.a, v.embeddings.row(b), v.bias))
        .collect()
}

/// Brute force: score every candidate from scratch and take the best `n`.
pub fn oracle_select(inst: &Instance, strategy: Strategy, n: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = inst
        .candidates
        .iter()
        .map(|&k| {
            let vals = member_values(inst, k);
            let s = match strategy {
                Strategy::Greedy => oracle_median(&vals),
                Strategy::Optimism { q } => oracle_quantile(&vals, q),
                Strategy::MaxVariance => -oracle_std(&vals),
                Strategy::Badge => {
                    let (a, b) = pair_at(inst.p, k);
                    let per: Vec<f64> = inst
                        .views
                        .iter()
                        .map(|v| {
                            let (x, y) = (v.embeddings.row(a), v.embeddings.row(b));
                            x.iter().zip(y).map(|(u, w)| (u * w).powi(2)).sum::<f64>().sqrt()
                        })
                        .collect();
                    -oracle_median(&per)
                }
                Strategy::Random => unreachable!(),
            };
            (s, k)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    scored.into_iter().take(n).map(|(_, k)| k).collect()
}

pub fn select(inst: &Instance, strategy: Strategy, n: usize, stream: &str) -> Vec<usize> {
    let q = strategy.quantile_level(0.1);
    let preds = predict_views(&inst.views, inst.p, &inst.candidates, q);
    let mut rng = seed::stream(0, &[stream]);
    acquire(strategy, &inst.candidates, &preds, &inst.views, inst.p, n, &mut rng).unwrap()
}

