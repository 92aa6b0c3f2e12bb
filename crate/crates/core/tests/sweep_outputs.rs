//! End-to-end sweeps on a tiny world: row counts, summaries recomputed from
//! raw rows, byte-identical reruns and per-replicate failure handling.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use deepal::activeloop::Strategy;
use deepal::experiment::curves::{emit_curves, SUMMARY_FILE};
use deepal::experiment::record::{read_metrics, FAILURES_FILE, LOSSES_FILE, METRICS_FILE, SEEDS_FILE};
use deepal::experiment::{run_experiment, Ablations, RunConfig};
use deepal::rgcn::RgcnConfig;
use deepal::synthworld::WorldSpec;

fn tiny(replicates: usize, rounds: usize, strategies: &[&str]) -> RunConfig {
    let mut cfg = RunConfig {
        replicates,
        strategies: strategies.iter().map(|s| s.parse::<Strategy>().unwrap()).collect(),
        ..RunConfig::default()
    };
    cfg.world.spec = Some(WorldSpec {
        genes: 12,
        proteins: 16,
        processes: 8,
        ..WorldSpec::default()
    });
    cfg.model.rgcn = RgcnConfig {
        layers: 2,
        hidden_dim: 8,
        embedding_dim: 6,
        groups: 2,
        ..RgcnConfig::default()
    };
    cfg.loop_cfg.rounds = rounds;
    cfg.loop_cfg.batch_size = 4;
    cfg.loop_cfg.ensemble_size = 3;
    cfg.loop_cfg.coverage_k = 8;
    cfg.train.pretrain_epochs = 3;
    cfg.train.finetune_epochs = 4;
    cfg
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn one_replicate_one_round_gives_one_row_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(1, 1, &["greedy", "optimism:0.1", "max-variance", "badge", "random"]);
    let out = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(out.metric_rows, 5);
    let rows = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    let tags: Vec<&str> = rows.iter().map(|r| r.strategy.as_str()).collect();
    assert_eq!(tags, ["greedy", "optimism:0.1", "max-variance", "badge", "random"]);
    assert!(rows.iter().all(|r| r.round == 0 && r.observed_pairs == 4 && r.wallclock_s.is_none()));
    // round 0 is the same random batch for every arm of a replicate
    assert!(rows.windows(2).all(|w| w[0].coverage_at_k == w[1].coverage_at_k));
}

#[test]
fn summary_means_equal_recomputation_from_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(3, 4, &["greedy", "random"]);
    run_experiment(&cfg, dir.path()).unwrap();
    let rows = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 24);
    emit_curves(&rows, dir.path(), "Coverage@8").unwrap();

    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut mae: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.strategy.clone(), r.round)).or_default().push(r.coverage_at_k);
        mae.entry((r.strategy.clone(), r.round)).or_default().push(r.mae_unseen.unwrap());
    }
    let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let mut seen = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let key = (f[col("strategy")].to_string(), f[col("round")].parse::<usize>().unwrap());
        let cov = &groups[&key];
        let mean = cov.iter().sum::<f64>() / cov.len() as f64;
        let sd = (cov.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / cov.len() as f64).sqrt();
        let got: f64 = f[col("coverage_mean")].parse().unwrap();
        assert!((got - mean).abs() < 1e-12, "{key:?}");
        assert!((f[col("coverage_std")].parse::<f64>().unwrap() - sd).abs() < 1e-12);
        let m = &mae[&key];
        let mm = m.iter().sum::<f64>() / m.len() as f64;
        assert!((f[col("mae_mean")].parse::<f64>().unwrap() - mm).abs() < 1e-12);
        assert_eq!(f[col("replicates")], "3");
        seen += 1;
    }
    assert_eq!(seen, 8);
}

#[test]
fn rerun_is_byte_identical_and_ablations_are_recorded() {
    let mut cfg = tiny(2, 2, &["optimism:0.1", "max-variance"]);
    cfg.ablations = Ablations::all();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, a.path()).unwrap();
    cfg.workers = 1;
    run_experiment(&cfg, b.path()).unwrap();
    for f in [METRICS_FILE, LOSSES_FILE, SEEDS_FILE, "world/graph.tsv", "world/truth.tsv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }

    let rows = read_metrics(&a.path().join(METRICS_FILE)).unwrap();
    let arms: Vec<(String, String)> = rows
        .iter()
        .filter(|r| r.replicate == 0 && r.round == 0)
        .map(|r| (r.strategy.clone(), r.ablation.clone()))
        .collect();
    let want: Vec<(String, String)> = [
        ("optimism:0.1", "none"),
        ("max-variance", "none"),
        ("optimism:0.1", "base"),
        ("optimism:0.1", "random-init"),
        ("optimism:0.1", "frozen-features"),
        ("optimism:0.1", "unconstrained-features"),
    ]
    .iter()
    .map(|(s, t)| (s.to_string(), t.to_string()))
    .collect();
    assert_eq!(arms, want);
    assert_eq!(rows.len(), 6 * 2 * 2);

    // the base arm trains a single member, the others the full ensemble
    let losses = fs::read_to_string(a.path().join(LOSSES_FILE)).unwrap();
    let members = |tag: &str| {
        losses
            .lines()
            .filter(|l| l.split(',').nth(1) == Some(tag))
            .map(|l| l.split(',').nth(4).unwrap().to_string())
            .collect::<std::collections::BTreeSet<_>>()
            .len()
    };
    assert_eq!(members("base"), 1);
    assert_eq!(members("none"), 3);
    assert_eq!(members("frozen-features"), 3);

    // a different master seed moves the selections
    cfg.seed = 1;
    let c = tempfile::tempdir().unwrap();
    run_experiment(&cfg, c.path()).unwrap();
    assert_ne!(read(a.path(), METRICS_FILE), read(c.path(), METRICS_FILE));
}

#[test]
fn failing_replicates_are_logged_without_aborting() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(2, 2, &["greedy"]);
    cfg.train.finetune_lr = 1e300;
    let out = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(out.failures.len(), 2);
    assert_eq!(out.metric_rows, 0);
    let log = fs::read_to_string(dir.path().join(FAILURES_FILE)).unwrap();
    assert!(log.contains("replicate 0") && log.contains("replicate 1"), "{log}");
    // the raw file still carries its header
    let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().count(), 1);
}

#[test]
fn invalid_configs_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(1, 1, &["greedy"]);
    cfg.loop_cfg.rounds = 100;
    let err = run_experiment(&cfg, dir.path()).unwrap_err().to_string();
    assert!(err.contains("loop.rounds"), "{err}");
    let mut cfg = tiny(1, 1, &["greedy", "greedy"]);
    cfg.replicates = 1;
    assert!(run_experiment(&cfg, dir.path()).unwrap_err().to_string().contains("strategies"));
    let mut cfg = tiny(1, 1, &["greedy"]);
    cfg.world.dir = Some(dir.path().join("nowhere"));
    assert!(run_experiment(&cfg, dir.path()).unwrap_err().to_string().contains("world"));
}
