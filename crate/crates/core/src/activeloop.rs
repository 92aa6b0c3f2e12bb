//! Ensemble prediction, acquisition, and the sequential reveal loop.
//!
//! Pairs are unordered target pairs `{a, b}` with `a < b` (positions in the
//! target list), indexed lexicographically: `(0,1), (0,2), .., (1,2), ..`.
//!
//! Round 0 reveals `N` uniformly random pairs. Every later round scores the
//! unrevealed pairs with the members as fine-tuned at the end of the previous
//! round, reveals the `N` best under the acquisition rule, then fine-tunes
//! again. Metrics for a round are taken after its reveal and fine-tune.
//!
//! Selection ties are broken by a seeded shuffle of the candidates followed by
//! a stable sort on the score.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{badge_score, bilinear_eval};
use crate::hetgraph::TargetSet;
use crate::model::ModelParams;
use crate::numerics::Tensor;
use crate::rgcn::{EmbeddingMatrix, Propagation};
use crate::seed;
use crate::training::{embeddings, finetune, Observation, OptimizerState, TrainConfig};

pub fn pair_count(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// Index of the unordered pair `{a, b}` among `p` targets.
pub fn pair_index(p: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    debug_assert!(b < p && a != b);
    a * (2 * p - a - 1) / 2 + (b - a - 1)
}

/// Inverse of [`pair_index`].
pub fn pair_at(p: usize, mut idx: usize) -> (usize, usize) {
    for a in 0..p {
        let row = p - a - 1;
        if idx < row {
            return (a, a + 1 + idx);
        }
        idx -= row;
    }
    panic!("pair index out of range for {p} targets");
}

/// Targets, hidden truth per pair, and the revealed set.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    targets: TargetSet,
    truth: Vec<f64>,
    revealed: Vec<usize>,
    revealed_set: BTreeSet<usize>,
}

impl World {
    pub fn new(targets: TargetSet, truth: Vec<f64>) -> Result<Self> {
        let expected = pair_count(targets.len());
        if truth.len() != expected {
            return Err(Error::Shape(format!(
                "{} targets need {expected} pair values, got {}",
                targets.len(),
                truth.len()
            )));
        }
        if let Some(k) = truth.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("truth value of pair {k}")));
        }
        Ok(World {
            targets,
            truth,
            revealed: Vec::new(),
            revealed_set: BTreeSet::new(),
        })
    }

    pub fn targets(&self) -> &TargetSet {
        &self.targets
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.truth.len()
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn pair(&self, idx: usize) -> (usize, usize) {
        pair_at(self.num_targets(), idx)
    }

    /// Graph node ids of the pair's genes.
    pub fn pair_nodes(&self, idx: usize) -> (usize, usize) {
        let (a, b) = self.pair(idx);
        (self.targets.genes()[a], self.targets.genes()[b])
    }

    /// Revealed pair indices in reveal order.
    pub fn revealed(&self) -> &[usize] {
        &self.revealed
    }

    pub fn revealed_set(&self) -> &BTreeSet<usize> {
        &self.revealed_set
    }

    pub fn reveal(&mut self, pairs: &[usize]) -> Result<()> {
        for &k in pairs {
            if k >= self.num_pairs() {
                return Err(Error::Bookkeeping(format!("pair index {k} outside the pair space")));
            }
            if !self.revealed_set.insert(k) {
                return Err(Error::Bookkeeping(format!("pair {k} revealed twice")));
            }
            self.revealed.push(k);
        }
        Ok(())
    }

    pub fn clear_revealed(&mut self) {
        self.revealed.clear();
        self.revealed_set.clear();
    }

    pub fn unseen(&self) -> Vec<usize> {
        (0..self.num_pairs())
            .filter(|k| !self.revealed_set.contains(k))
            .collect()
    }

    /// Revealed pairs as training observations (values equal truth).
    pub fn observations(&self) -> Vec<Observation> {
        self.revealed
            .iter()
            .map(|&k| {
                let (i, j) = self.pair_nodes(k);
                Observation {
                    i,
                    j,
                    value: self.truth[k],
                }
            })
            .collect()
    }
}

/// Median; the mean of the two middle values for an even count.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear interpolation between order statistics at position `(M - 1) q`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = (v.len() - 1) as f64;
    let pos = m * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let diff = v[hi] - v[lo];
    // Compensated evaluation of v[lo] + diff * (m q - lo), so the product's
    // rounding error and the final sum's are not rounded separately.
    let pos_err = m.mul_add(q, -pos);
    let step = diff * (pos - lo as f64);
    let step_err = diff.mul_add(pos - lo as f64, -step);
    let sum = v[lo] + step;
    let virt = sum - v[lo];
    let sum_err = (v[lo] - (sum - virt)) + (step - virt);
    sum + (sum_err + step_err + diff * pos_err)
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePrediction {
    pub values: Vec<f64>,
    pub median: f64,
    pub quantile: f64,
    pub std: f64,
}

impl EnsemblePrediction {
    pub fn new(values: Vec<f64>, q: f64) -> Self {
        EnsemblePrediction {
            median: median(&values),
            quantile: quantile(&values, q),
            std: population_std(&values),
            values,
        }
    }
}

/// One member's eval-mode state for a round: target embeddings and `A`.
#[derive(Clone, Debug)]
pub struct MemberView {
    /// Row `a` is the embedding of target `a`.
    pub embeddings: EmbeddingMatrix,
    pub a: Tensor,
    pub bias: f64,
}

impl MemberView {
    pub fn new(member: &ModelParams, prop: &Propagation, targets: &TargetSet) -> Result<Self> {
        Ok(MemberView {
            embeddings: embeddings(member, prop, Some(targets.genes()))?,
            a: member.bilinear.matrix(),
            bias: member.bilinear.bias.item(),
        })
    }

    pub fn predict(&self, a: usize, b: usize) -> f64 {
        bilinear_eval(self.embeddings.row(a), self.embeddings.row(b), &self.a, self.bias)
    }
}

pub fn member_views(members: &[ModelParams], prop: &Propagation, targets: &TargetSet) -> Result<Vec<MemberView>> {
    members
        .par_iter()
        .map(|m| MemberView::new(m, prop, targets))
        .collect()
}

/// Ensemble predictions for candidate pair indices among `p` targets.
pub fn predict_views(views: &[MemberView], p: usize, candidates: &[usize], q: f64) -> Vec<EnsemblePrediction> {
    candidates
        .iter()
        .map(|&k| {
            let (a, b) = pair_at(p, k);
            EnsemblePrediction::new(views.iter().map(|v| v.predict(a, b)).collect(), q)
        })
        .collect()
}

/// Eval-mode ensemble predictions; embeddings are computed once per member.
pub fn predict_all(
    members: &[ModelParams],
    prop: &Propagation,
    targets: &TargetSet,
    candidates: &[usize],
    q: f64,
) -> Result<Vec<EnsemblePrediction>> {
    if members.is_empty() {
        return Err(Error::Precondition("ensemble has no members".into()));
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let views = member_views(members, prop, targets)?;
    Ok(predict_views(&views, targets.len(), candidates, q))
}

/// Acquisition rule. Serialized as its string form, e.g. `"optimism:0.1"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Greedy,
    Optimism { q: f64 },
    MaxVariance,
    Badge,
    Random,
}

impl Strategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Optimism { .. } => "optimism",
            Strategy::MaxVariance => "max-variance",
            Strategy::Badge => "badge",
            Strategy::Random => "random",
        }
    }

    /// Quantile level used for ensemble reductions.
    pub fn quantile_level(&self, default_q: f64) -> f64 {
        match self {
            Strategy::Optimism { q } => *q,
            _ => default_q,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Optimism { q } => write!(f, "optimism:{q}"),
            other => f.write_str(other.tag()),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts `greedy`, `optimism` (q = 0.1), `optimism:<q>`,
    /// `max-variance`, `badge`, `random`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, arg) = match lower.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (lower.as_str(), None),
        };
        let strategy = match (name, arg) {
            ("greedy", None) => Strategy::Greedy,
            ("optimism", None) => Strategy::Optimism { q: 0.1 },
            ("optimism", Some(a)) => {
                let q: f64 = a.parse().map_err(|_| Error::UnknownStrategy(s.to_string()))?;
                if !(q > 0.0 && q < 1.0) {
                    return Err(Error::config("strategy", format!("quantile {q} is outside (0, 1)")));
                }
                Strategy::Optimism { q }
            }
            ("max-variance" | "maxvariance" | "maxvar", None) => Strategy::MaxVariance,
            ("badge", None) => Strategy::Badge,
            ("random", None) => Strategy::Random,
            _ => return Err(Error::UnknownStrategy(s.to_string())),
        };
        Ok(strategy)
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

/// Median over members of `‖x_a ∘ x_b‖` for each candidate.
pub fn badge_scores(views: &[MemberView], p: usize, candidates: &[usize]) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|&k| {
            let (a, b) = pair_at(p, k);
            let per_member = views
                .iter()
                .map(|v| badge_score(v.embeddings.row(a), v.embeddings.row(b)))
                .collect::<Result<Vec<_>>>()?;
            Ok(median(&per_member))
        })
        .collect()
}

/// Selection score of each candidate and whether smaller is better.
fn scores(
    strategy: Strategy,
    preds: &[EnsemblePrediction],
    views: &[MemberView],
    p: usize,
    candidates: &[usize],
) -> Result<(Vec<f64>, bool)> {
    Ok(match strategy {
        Strategy::Greedy => (preds.iter().map(|e| e.median).collect(), true),
        Strategy::Optimism { q } => (preds.iter().map(|e| quantile(&e.values, q)).collect(), true),
        Strategy::MaxVariance => (preds.iter().map(|e| e.std).collect(), false),
        Strategy::Badge => (badge_scores(views, p, candidates)?, false),
        Strategy::Random => (vec![0.0; candidates.len()], true),
    })
}

/// Picks `n` distinct candidates (pair indices) under `strategy`.
/// `preds[k]` belongs to `candidates[k]`; `views` are only read by Badge.
pub fn acquire(
    strategy: Strategy,
    candidates: &[usize],
    preds: &[EnsemblePrediction],
    views: &[MemberView],
    p: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if n > candidates.len() {
        return Err(Error::Precondition(format!(
            "cannot select {n} pairs from {} candidates",
            candidates.len()
        )));
    }
    if strategy != Strategy::Random && preds.len() != candidates.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} candidates",
            preds.len(),
            candidates.len()
        )));
    }
    let (score, ascending) = scores(strategy, preds, views, p, candidates)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(rng);
    if ascending {
        order.sort_by(|&x, &y| score[x].total_cmp(&score[y]));
    } else {
        order.sort_by(|&x, &y| score[y].total_cmp(&score[x]));
    }
    Ok(order[..n].iter().map(|&k| candidates[k]).collect())
}

/// The `k` pairs with the smallest truth values, ties by pair index.
pub fn top_k(truth: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn coverage_at_k(observed: &BTreeSet<usize>, truth: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > truth.len() {
        return Err(Error::Precondition(format!(
            "K = {k} must lie in 1..={}",
            truth.len()
        )));
    }
    let hits = top_k(truth, k).iter().filter(|i| observed.contains(i)).count();
    Ok(hits as f64 / k as f64)
}

pub fn mean_abs_error(points: &[f64], truths: &[f64]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Precondition("no unseen pairs left to score".into()));
    }
    let total: f64 = points.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / points.len() as f64)
}

/// Mean absolute error of the ensemble median over unrevealed pairs.
pub fn mae_unseen(members: &[ModelParams], prop: &Propagation, world: &World) -> Result<f64> {
    let unseen = world.unseen();
    if unseen.is_empty() {
        return Err(Error::Precondition("no unseen pairs left to score".into()));
    }
    let preds = predict_all(members, prop, world.targets(), &unseen, 0.5)?;
    let points: Vec<f64> = preds.iter().map(|e| e.median).collect();
    let truths: Vec<f64> = unseen.iter().map(|&k| world.truth()[k]).collect();
    mean_abs_error(&points, &truths)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub rounds: usize,
    pub batch_size: usize,
    pub ensemble_size: usize,
    pub quantile: f64,
    pub coverage_k: usize,
    /// Master seed; set by the caller rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            rounds: 17,
            batch_size: 400,
            ensemble_size: 20,
            quantile: 0.1,
            coverage_k: 400,
            seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self, num_pairs: usize) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("loop.rounds", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("loop.batch_size", "must be at least 1"));
        }
        if self.ensemble_size == 0 {
            return Err(Error::config("loop.ensemble_size", "must be at least 1"));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::config("loop.quantile", "must lie in (0, 1)"));
        }
        if self.rounds * self.batch_size > num_pairs {
            return Err(Error::config(
                "loop.rounds",
                format!(
                    "{} rounds of {} pairs exceed the {num_pairs}-pair space",
                    self.rounds, self.batch_size
                ),
            ));
        }
        if self.coverage_k == 0 || self.coverage_k > num_pairs {
            return Err(Error::config(
                "loop.coverage_k",
                format!("must lie in 1..={num_pairs}"),
            ));
        }
        Ok(())
    }
}

/// Identifies one loop run for stream derivation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLabels {
    pub replicate: usize,
    pub arm: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub observed_pairs: usize,
    pub coverage: f64,
    /// `None` once every pair is revealed.
    pub mae_unseen: Option<f64>,
    pub selected: Vec<usize>,
    /// Fine-tuning loss trace of each member.
    pub losses: Vec<Vec<f64>>,
    pub wallclock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopRecord {
    pub rounds: Vec<RoundMetrics>,
}

/// Initial uniformly random batch, drawn from `replicate/<r>/round0`.
pub fn initial_batch(master: u64, replicate: usize, num_pairs: usize, n: usize) -> Vec<usize> {
    let mut rng = seed::stream(master, &["replicate", &replicate.to_string(), "round0"]);
    let mut all: Vec<usize> = (0..num_pairs).collect();
    all.shuffle(&mut rng);
    all.truncate(n);
    all
}

/// Options of the loop that vary across ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoopOptions {
    /// Only the bilinear head is fine-tuned.
    pub freeze_encoder: bool,
}

/// Runs the reveal loop, mutating `members` and `world`. `world` must start
/// with nothing revealed.
pub fn run_loop(
    world: &mut World,
    prop: &Propagation,
    members: &mut [ModelParams],
    strategy: Strategy,
    cfg: &LoopConfig,
    tcfg: &TrainConfig,
    labels: &RunLabels,
    options: LoopOptions,
) -> Result<LoopRecord> {
    cfg.validate(world.num_pairs())?;
    tcfg.validate()?;
    if members.is_empty() {
        return Err(Error::Precondition("ensemble has no members".into()));
    }
    if !world.revealed().is_empty() {
        return Err(Error::Precondition("world already has revealed pairs".into()));
    }
    let p = world.num_targets();
    let q = strategy.quantile_level(cfg.quantile);
    let rep = labels.replicate.to_string();
    let mut opts: Vec<OptimizerState> = members.iter().map(|_| OptimizerState::for_finetuning(tcfg)).collect();
    let mut record = LoopRecord::default();
    let mut last_coverage = 0.0;

    for t in 0..cfg.rounds {
        let start = Instant::now();
        let round = t.to_string();
        let selected = if t == 0 {
            initial_batch(cfg.seed, labels.replicate, world.num_pairs(), cfg.batch_size)
        } else {
            let candidates = world.unseen();
            let views = member_views(members, prop, world.targets())?;
            let preds = predict_views(&views, p, &candidates, q);
            let mut rng = seed::stream(
                cfg.seed,
                &["replicate", &rep, "arm", &labels.arm, "round", &round, "acquire"],
            );
            acquire(strategy, &candidates, &preds, &views, p, cfg.batch_size, &mut rng)?
        };
        world.reveal(&selected)?;
        if world.revealed().len() != (t + 1) * cfg.batch_size {
            return Err(Error::Bookkeeping(format!(
                "{} pairs revealed after round {t}, expected {}",
                world.revealed().len(),
                (t + 1) * cfg.batch_size
            )));
        }

        let observed = world.observations();
        let losses = members
            .par_iter_mut()
            .zip(opts.par_iter_mut())
            .enumerate()
            .map(|(m, (member, opt))| {
                let mut rng = seed::stream(
                    cfg.seed,
                    &["replicate", &rep, "arm", &labels.arm, "member", &m.to_string(), "finetune", &round],
                );
                finetune(member, prop, &observed, tcfg, opt, options.freeze_encoder, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let coverage = coverage_at_k(world.revealed_set(), world.truth(), cfg.coverage_k)?;
        if coverage < last_coverage {
            return Err(Error::Bookkeeping(format!(
                "coverage fell from {last_coverage} to {coverage} in round {t}"
            )));
        }
        last_coverage = coverage;
        let mae = if world.unseen().is_empty() {
            None
        } else {
            Some(mae_unseen(members, prop, world)?)
        };
        record.rounds.push(RoundMetrics {
            round: t,
            observed_pairs: world.revealed().len(),
            coverage,
            mae_unseen: mae,
            selected,
            losses,
            wallclock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_indexing_roundtrips() {
        let p = 7;
        let mut k = 0;
        for a in 0..p {
            for b in a + 1..p {
                assert_eq!(pair_index(p, a, b), k);
                assert_eq!(pair_index(p, b, a), k);
                assert_eq!(pair_at(p, k), (a, b));
                k += 1;
            }
        }
        assert_eq!(k, pair_count(p));
    }

    #[test]
    fn reductions() {
        let one = EnsemblePrediction::new(vec![3.5], 0.1);
        assert_eq!((one.median, one.quantile, one.std), (3.5, 3.5, 0.0));
        let two = EnsemblePrediction::new(vec![0.0, 2.0], 0.1);
        assert_eq!((two.median, two.std), (1.0, 1.0));
        let seq: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(quantile(&seq, 0.1), 2.9);
    }

    #[test]
    fn greedy_orders_by_median() {
        let preds: Vec<_> = [0.1, 0.5, 0.2]
            .iter()
            .map(|&v| EnsemblePrediction::new(vec![v], 0.1))
            .collect();
        let mut rng = seed::stream(0, &["t"]);
        let got = acquire(Strategy::Greedy, &[10, 11, 12], &preds, &[], 5, 2, &mut rng).unwrap();
        assert_eq!(got, vec![10, 12]);
        assert!(acquire(Strategy::Greedy, &[10, 11, 12], &preds, &[], 5, 4, &mut rng).is_err());
    }

    #[test]
    fn coverage_counts() {
        let truth = [0.1, 0.2, 0.3, 0.4, 5.0, 6.0];
        let none = BTreeSet::new();
        assert_eq!(coverage_at_k(&none, &truth, 4).unwrap(), 0.0);
        let obs: BTreeSet<usize> = [0, 2, 5].into_iter().collect();
        assert_eq!(coverage_at_k(&obs, &truth, 4).unwrap(), 0.5);
        let all: BTreeSet<usize> = (0..4).collect();
        assert_eq!(coverage_at_k(&all, &truth, 4).unwrap(), 1.0);
    }

    #[test]
    fn mae_two_point() {
        let c = 1.7;
        let got = mean_abs_error(&[c, c], &[1.0, 3.0]).unwrap();
        assert!((got - ((c - 1.0f64).abs() / 2.0 + (c - 3.0f64).abs() / 2.0)).abs() < 1e-15);
        assert!(mean_abs_error(&[], &[]).is_err());
    }

    #[test]
    fn strategy_tags_parse() {
        assert_eq!("greedy".parse::<Strategy>().unwrap(), Strategy::Greedy);
        assert_eq!("optimism:0.25".parse::<Strategy>().unwrap(), Strategy::Optimism { q: 0.25 });
        assert_eq!("Max-Variance".parse::<Strategy>().unwrap(), Strategy::MaxVariance);
        assert!(matches!("thompson".parse::<Strategy>(), Err(Error::UnknownStrategy(_))));
    }

    #[test]
    fn loop_config_rejects_overdraw() {
        let cfg = LoopConfig {
            rounds: 4,
            batch_size: 5,
            coverage_k: 3,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(15), Err(Error::Config { ref field, .. }) if field == "loop.rounds"));
        assert!(cfg.validate(20).is_ok());
    }
}
