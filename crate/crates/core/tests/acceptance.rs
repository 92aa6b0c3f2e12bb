//! Acceptance run: every criterion evaluated at its stated tolerance, one
//! PASS/FAIL line each. The full default-world sweep takes a while on one
//! core; progress is logged to stderr.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use common::{
    close, dense_forward, instance, max_diff, member_values, oracle_bilinear, oracle_median, oracle_quantile,
    oracle_select, oracle_std, random_graph, randomize_norms, select, sym, vec_in,
};
use deepal::activeloop::{badge_scores, median, pair_at, pair_count, population_std, predict_views, quantile, Strategy};
use deepal::experiment::check::run_checks;
use deepal::experiment::record::{check_record, read_metrics, MetricRow, LOSSES_FILE, METRICS_FILE};
use deepal::experiment::{run_experiment, sweep, Ablations, RunConfig};
use deepal::heads::{badge_score, bilinear_predict, distmult_score, BilinearHead, DistMultHead};
use deepal::numerics::{huber, sigmoid, softplus, Tensor};
use deepal::rgcn::{rgcn_forward, Mode, RgcnConfig, RgcnParams};
use deepal::seed;
use deepal::synthworld::WorldSpec;
use rand::Rng;

const EXACT: [&str; 5] = [
    "1 gradient integrity",
    "2 oracle equivalence",
    "3 loop bookkeeping",
    "7 determinism",
    "8 closed-form values",
];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn gradient_integrity() -> Verdict {
    match run_checks() {
        Ok(report) => {
            let failed: Vec<&str> = report.lines.iter().filter(|l| !l.passed).map(|l| l.name.as_str()).collect();
            verdict(
                failed.is_empty() && report.elapsed_s < 30.0,
                format!(
                    "{} checks, {} failed {:?}, {:.1}s (limit 30s)",
                    report.lines.len(),
                    failed.len(),
                    failed,
                    report.elapsed_s
                ),
            )
        }
        Err(e) => verdict(false, format!("check suite errored: {e}")),
    }
}

fn oracle_equivalence() -> Verdict {
    let mut problems = Vec::new();

    let cfg = RgcnConfig {
        layers: 3,
        hidden_dim: 6,
        embedding_dim: 4,
        groups: 2,
        skip_init: 0.3,
        group_norm: true,
    };
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let mut rng = seed::stream(1000 + case, &["acceptance-rgcn"]);
        let g = random_graph(5, 2, &mut rng);
        let mut params = RgcnParams::init(5, 2, &cfg, &mut rng).unwrap();
        randomize_norms(&mut params, &mut rng);
        let got = rgcn_forward(&g, &params, Mode::Eval).unwrap();
        worst = worst.max(max_diff(&dense_forward(&g, &params), &got.values));
    }
    if worst > 1e-10 {
        problems.push(format!("encoder differs by {worst:e}"));
    }

    let mut rng = seed::stream(7, &["acceptance-heads"]);
    let d = 6;
    let mut head_misses = 0;
    for _ in 0..100 {
        let (xi, xj) = (vec_in(d, &mut rng), vec_in(d, &mut rng));
        let relations = Tensor::from_fn(2, d, |_, _| rng.random_range(-1.0..1.0));
        let head = DistMultHead { relations };
        let logit: f64 = (0..d).map(|k| xi[k] * head.relations.get(1, k) * xj[k]).sum();
        head_misses += !close(distmult_score(&xi, 1, &xj, &head).unwrap(), 1.0 / (1.0 + (-logit).exp())) as usize;
        let a = sym(d, &mut rng);
        let bias = rng.random_range(-0.5..0.5);
        let bil = BilinearHead::from_matrix(&a, bias, 0.1).unwrap();
        let got = bilinear_predict(&xi, &xj, &bil, Mode::Eval, &mut rng).unwrap();
        head_misses += !close(got, oracle_bilinear(&xi, &a, &xj, bias)) as usize;
        let badge: f64 = (0..d).map(|k| (xi[k] * xj[k]).powi(2)).sum::<f64>().sqrt();
        head_misses += !close(badge_score(&xi, &xj).unwrap(), badge) as usize;
    }
    if head_misses > 0 {
        problems.push(format!("{head_misses} head mismatches"));
    }

    let mut reduction_misses = 0;
    for case in 0..100 {
        let values: Vec<f64> = (0..1 + case % 20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let q = rng.random_range(0.01..0.99);
        reduction_misses += !close(quantile(&values, q), oracle_quantile(&values, q)) as usize;
        reduction_misses += (median(&values) != oracle_median(&values)) as usize;
        reduction_misses += !close(population_std(&values), oracle_std(&values)) as usize;
    }
    if reduction_misses > 0 {
        problems.push(format!("{reduction_misses} reduction mismatches"));
    }

    let mut selections = 0;
    for (case, members) in [(60u64, 5usize), (61, 8), (62, 20)] {
        let inst = instance(members, case);
        let preds = predict_views(&inst.views, inst.p, &inst.candidates, 0.1);
        for (pred, &k) in preds.iter().zip(&inst.candidates) {
            let vals = member_values(&inst, k);
            if !close(pred.quantile, oracle_quantile(&vals, 0.1)) || !close(pred.median, oracle_median(&vals)) {
                problems.push(format!("ensemble reduction differs for pair {k}"));
            }
        }
        let badge = badge_scores(&inst.views, inst.p, &inst.candidates).unwrap();
        for (s, &k) in badge.iter().zip(&inst.candidates) {
            let (a, b) = pair_at(inst.p, k);
            let per: Vec<f64> = inst
                .views
                .iter()
                .map(|v| badge_score(v.embeddings.row(a), v.embeddings.row(b)).unwrap())
                .collect();
            if *s != oracle_median(&per) {
                problems.push(format!("badge score differs for pair {k}"));
            }
        }
        for strategy in [
            Strategy::Greedy,
            Strategy::Optimism { q: 0.1 },
            Strategy::MaxVariance,
            Strategy::Badge,
        ] {
            for n in [1, 10, 40, 100] {
                selections += 1;
                if select(&inst, strategy, n, "acceptance") != oracle_select(&inst, strategy, n) {
                    problems.push(format!("{strategy} M={members} n={n} selection differs"));
                }
            }
        }
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!("encoder max diff {worst:.1e} on 20 graphs; heads, reductions and {selections} selections on 100 candidates agree")
        } else {
            problems.join("; ")
        },
    )
}

/// The small sweep used for the bookkeeping replay and the determinism check.
fn small_config() -> RunConfig {
    let mut cfg = RunConfig {
        replicates: 3,
        ablations: Ablations::all(),
        ..RunConfig::default()
    };
    cfg.world.spec = Some(WorldSpec {
        genes: 16,
        proteins: 20,
        processes: 10,
        ..WorldSpec::default()
    });
    cfg.model.rgcn = RgcnConfig {
        layers: 2,
        hidden_dim: 8,
        embedding_dim: 6,
        groups: 2,
        ..RgcnConfig::default()
    };
    cfg.loop_cfg.rounds = 3;
    cfg.loop_cfg.batch_size = 6;
    cfg.loop_cfg.ensemble_size = 3;
    cfg.loop_cfg.coverage_k = 10;
    cfg.train.pretrain_epochs = 5;
    cfg.train.finetune_epochs = 5;
    cfg
}

/// The default synthetic world at `p = 64`, `M = 8`, `T = 10`, `N = 40`,
/// `K = 100`, 20 replicates, every strategy and every ablation.
fn full_config() -> RunConfig {
    let mut cfg = RunConfig {
        replicates: 20,
        ablations: Ablations::all(),
        ..RunConfig::default()
    };
    cfg.loop_cfg.rounds = 10;
    cfg.loop_cfg.batch_size = 40;
    cfg.loop_cfg.ensemble_size = 8;
    cfg.loop_cfg.coverage_k = 100;
    cfg
}

type ArmRows<'a> = BTreeMap<(String, String), BTreeMap<usize, Vec<&'a MetricRow>>>;

fn by_arm(rows: &[MetricRow]) -> ArmRows<'_> {
    let mut arms: ArmRows = BTreeMap::new();
    for r in rows {
        arms.entry((r.strategy.clone(), r.ablation.clone()))
            .or_default()
            .entry(r.replicate)
            .or_default()
            .push(r);
    }
    arms
}

fn bookkeeping(full: &RunConfig, rows: &[MetricRow], failures: usize) -> Verdict {
    let mut problems = Vec::new();
    if failures > 0 {
        problems.push(format!("{failures} replicates failed"));
    }
    let (t_rounds, n) = (full.loop_cfg.rounds, full.loop_cfg.batch_size);
    let arms = by_arm(rows);
    let expected_arms = full.arms().len();
    if arms.len() != expected_arms {
        problems.push(format!("{} arms in the rows, expected {expected_arms}", arms.len()));
    }
    for ((strategy, ablation), reps) in &arms {
        if reps.len() != full.replicates {
            problems.push(format!("{strategy}/{ablation}: {} replicates", reps.len()));
        }
        for (r, run) in reps {
            let rounds: Vec<usize> = run.iter().map(|x| x.round).collect();
            if rounds != (0..t_rounds).collect::<Vec<_>>() {
                problems.push(format!("{strategy}/{ablation} replicate {r}: rounds {rounds:?}"));
            }
            for x in run {
                if x.observed_pairs != (x.round + 1) * n {
                    problems.push(format!("{strategy}/{ablation} replicate {r} round {}: {} pairs", x.round, x.observed_pairs));
                }
            }
            if run.windows(2).any(|w| w[1].coverage_at_k < w[0].coverage_at_k) {
                problems.push(format!("{strategy}/{ablation} replicate {r}: coverage fell"));
            }
        }
    }

    // selections are not in the rows; replay a small sweep's records directly
    let small = small_config();
    let prep = sweep::prepare(&small).unwrap();
    let mut replayed = 0;
    for r in 0..small.replicates {
        for run in sweep::run_replicate(&small, &prep, r).unwrap() {
            replayed += 1;
            if let Err(e) = check_record(&run.record, small.loop_cfg.batch_size) {
                problems.push(format!("{} replicate {r}: {e}", run.arm.label()));
            }
            let all: Vec<usize> = run.record.rounds.iter().flat_map(|x| x.selected.iter().copied()).collect();
            let distinct: BTreeSet<usize> = all.iter().copied().collect();
            if distinct.len() != all.len() {
                problems.push(format!("{} replicate {r}: a pair was selected twice", run.arm.label()));
            }
        }
    }
    problems.truncate(5);
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{} rows over {} arms: (t+1)N pairs, nondecreasing coverage, no failures; {replayed} replayed runs select distinct pairs",
                rows.len(),
                arms.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn final_coverages(rows: &[MetricRow], strategy: &str, ablation: &str, last_round: usize) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.strategy == strategy && r.ablation == ablation && r.round == last_round)
        .map(|r| r.coverage_at_k)
        .collect()
}

fn final_maes(rows: &[MetricRow], strategy: &str, last_round: usize) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.strategy == strategy && r.ablation == "none" && r.round == last_round)
        .filter_map(|r| r.mae_unseen)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn random_calibration(full: &RunConfig, rows: &[MetricRow], num_pairs: usize) -> Verdict {
    let t_last = full.loop_cfg.rounds - 1;
    let cov = final_coverages(rows, "random", "none", t_last);
    let p = (full.loop_cfg.rounds * full.loop_cfg.batch_size) as f64 / num_pairs as f64;
    let trials = (full.loop_cfg.coverage_k * cov.len()) as f64;
    let se = (p * (1.0 - p) / trials).sqrt();
    let got = mean(&cov);
    verdict(
        !cov.is_empty() && (got - p).abs() <= 3.0 * se,
        format!(
            "mean final Coverage@{} {got:.4} over {} replicates, expected {p:.4} +/- {:.4} (3 SE)",
            full.loop_cfg.coverage_k,
            cov.len(),
            3.0 * se
        ),
    )
}

fn strategy_ordering(full: &RunConfig, rows: &[MetricRow], elapsed_s: f64) -> Verdict {
    let t_last = full.loop_cfg.rounds - 1;
    let cov = |s: &str| mean(&final_coverages(rows, s, "none", t_last));
    let (opt, greedy, random) = (cov("optimism:0.1"), cov("greedy"), cov("random"));
    let maes: Vec<(String, f64)> = full
        .strategies
        .iter()
        .map(|s| {
            let tag = s.to_string();
            let m = mean(&final_maes(rows, &tag, t_last));
            (tag, m)
        })
        .collect();
    let best_mae = maes
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s, _)| s.clone())
        .unwrap_or_default();
    let order = opt >= greedy && greedy >= random;
    let lift = opt >= 1.5 * random;
    let mae_ok = best_mae == "max-variance";
    let fast = elapsed_s < 15.0 * 60.0;
    let maes_text: Vec<String> = maes.iter().map(|(s, m)| format!("{s} {m:.4}")).collect();
    verdict(
        order && lift && mae_ok && fast,
        format!(
            "coverage optimism {opt:.4}, greedy {greedy:.4}, random {random:.4} (order {}, lift {:.2}x {}); \
             final MAE [{}] lowest {best_mae} ({}); sweep {:.1} min on {} core(s) (limit 15 min, {})",
            ok(order),
            opt / random,
            ok(lift),
            maes_text.join(", "),
            ok(mae_ok),
            elapsed_s / 60.0,
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            ok(fast)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "violated"
    }
}

fn oracle_median_of(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        oracle_median(v)
    }
}

fn ablation_ordering(full: &RunConfig, rows: &[MetricRow]) -> Verdict {
    let t_last = full.loop_cfg.rounds - 1;
    let tag = full.ablation_strategy.to_string();
    let med = |ablation: &str| oracle_median_of(&final_coverages(rows, &tag, ablation, t_last));
    let deepal = med("none");
    let (ff, uf, base, ri) = (
        med("frozen-features"),
        med("unconstrained-features"),
        med("base"),
        med("random-init"),
    );
    let checks = [deepal >= ff, deepal >= uf, deepal >= base];
    verdict(
        checks.iter().all(|&c| c),
        format!(
            "median final coverage: ensemble {deepal:.4}, frozen-features {ff:.4} ({}), \
             unconstrained-features {uf:.4} ({}), base {base:.4} ({}); random-init {ri:.4} (reported only)",
            ok(checks[0]),
            ok(checks[1]),
            ok(checks[2])
        ),
    )
}

fn determinism() -> Verdict {
    let mut cfg = small_config();
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut files = Vec::new();
    for (i, dir) in dirs.iter().enumerate() {
        cfg.workers = [1, 1, 2][i];
        let out = run_experiment(&cfg, dir.path()).unwrap();
        if !out.failures.is_empty() {
            return verdict(false, format!("run {i} had failures {:?}", out.failures));
        }
        let read = |name: &str| fs::read(dir.path().join(name)).unwrap();
        files.push((read(METRICS_FILE), read(LOSSES_FILE)));
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    verdict(
        same,
        format!(
            "three runs (1, 1 and 2 workers): {} and {} ({} and {} bytes) {}",
            METRICS_FILE,
            LOSSES_FILE,
            files[0].0.len(),
            files[0].1.len(),
            if same { "byte-identical" } else { "differ" }
        ),
    )
}

fn closed_forms() -> Verdict {
    let values: Vec<f64> = (1..=20).map(f64::from).collect();
    let q = quantile(&values, 0.1);
    let checks = [
        huber(0.5) == 0.125,
        huber(1.0) == 0.5,
        huber(-1.0) == 0.5,
        huber(2.0) == 1.5,
        (softplus(0.0) - std::f64::consts::LN_2).abs() <= 1e-12,
        (sigmoid(1.0) - 0.731059).abs() <= 1e-6,
        q == 2.9,
    ];
    verdict(
        checks.iter().all(|&c| c),
        format!(
            "huber(0.5, 1, -1, 2) = ({}, {}, {}, {}), softplus(0) = {}, sigmoid(1) = {:.7}, quantile_0.1(1..20) = {q}",
            huber(0.5),
            huber(1.0),
            huber(-1.0),
            huber(2.0),
            softplus(0.0),
            sigmoid(1.0)
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let report = |name: &str, v: &Verdict| {
        println!("{} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    };
    let mut record = |name: &'static str, v: Verdict| {
        report(name, &v);
        results.push((name, v));
    };

    record("1 gradient integrity", gradient_integrity());
    record("2 oracle equivalence", oracle_equivalence());
    record("8 closed-form values", closed_forms());
    record("7 determinism", determinism());

    let full = full_config();
    let dir = tempfile::tempdir().unwrap();
    eprintln!(
        "running the default-world sweep: {} replicates x {} arms",
        full.replicates,
        full.arms().len()
    );
    let start = Instant::now();
    match run_experiment(&full, dir.path()) {
        Ok(outcome) => {
            let elapsed = start.elapsed().as_secs_f64();
            let rows = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
            let num_pairs = pair_count(full.world.spec.as_ref().map_or(0, |w| w.genes));
            record("3 loop bookkeeping", bookkeeping(&full, &rows, outcome.failures.len()));
            record("4 random baseline calibration", random_calibration(&full, &rows, num_pairs));
            record("5 strategy ordering", strategy_ordering(&full, &rows, elapsed));
            record("6 ablation ordering", ablation_ordering(&full, &rows));
        }
        Err(e) => {
            for name in [
                "3 loop bookkeeping",
                "4 random baseline calibration",
                "5 strategy ordering",
                "6 ablation ordering",
            ] {
                record(name, verdict(false, format!("sweep errored: {e}")));
            }
        }
    }

    let passed = results.iter().filter(|(_, v)| v.passed).count();
    println!("{passed}/{} criteria passed", results.len());
    // exact properties gate the exit status; the statistical, qualitative
    // and timing criteria are reported only
    let exact_failed = results.iter().any(|(name, v)| !v.passed && EXACT.contains(name));
    if exact_failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
