//! Replicated sweeps over strategies and ablations.
//!
//! Per sweep the world is built once and the walk subgraph is sampled once
//! (stream `walk/...` under the master seed). Per replicate `r`, member `m`
//! starts from stream `replicate/<r>/member/<m>/init`; pretraining draws from
//! `derive_seed(master, replicate/<r>/member/<m>/pretrain)` and free embeddings
//! from `replicate/<r>/member/<m>/free-init`. Pretrained members are shared
//! by every arm of the replicate. Arm streams are keyed by the arm label, so
//! adding an arm leaves the others untouched.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use crate::activeloop::{run_loop, LoopOptions, LoopRecord, RunLabels, World};
use crate::error::{Error, Result};
use crate::hetgraph::{random_walk_subgraph, HetGraph, TargetSet};
use crate::model::ModelParams;
use crate::rgcn::Propagation;
use crate::seed;
use crate::synthworld::{export_world, generate_world, load_world};
use crate::training::pretrain;

use super::config::{Ablation, Arm, RunConfig};
use super::record::{
    check_record, log_failure, loss_rows, metric_rows, write_text, RowWriter, CONFIG_FILE, LOSSES_FILE,
    LOSSES_HEADER, METRICS_FILE, METRICS_HEADER, SEEDS_FILE, WORLD_DIR,
};

/// Graph and world a sweep runs on, after subgraph extraction.
pub struct Prepared {
    pub full_graph: HetGraph,
    pub full_world: World,
    pub graph: HetGraph,
    pub world: World,
    pub prop: Propagation,
    pub warnings: Vec<String>,
}

/// Builds or loads the world and restricts it to the walk subgraph around
/// the targets.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (full_graph, full_world, warnings) = match (&cfg.world.spec, &cfg.world.dir) {
        (Some(spec), None) => {
            let gw = generate_world(spec)?;
            (gw.graph, gw.world, gw.warnings)
        }
        (None, Some(dir)) => {
            let (g, w) = load_world(dir)?;
            (g, w, Vec::new())
        }
        _ => return Err(Error::config("world", "set exactly one of a generation spec and a directory")),
    };
    let sampler = crate::hetgraph::SamplerConfig {
        seed: cfg.seed,
        ..cfg.sampler
    };
    let graph = random_walk_subgraph(&full_graph, full_world.targets(), &sampler)?;
    let ids: Vec<&str> = full_world
        .targets()
        .genes()
        .iter()
        .map(|&g| full_graph.node_id(g))
        .collect();
    let targets = TargetSet::from_ids(&graph, &ids)?;
    let world = World::new(targets, full_world.truth().to_vec())?;
    let prop = Propagation::new(&graph);
    Ok(Prepared {
        full_graph,
        full_world,
        graph,
        world,
        prop,
        warnings,
    })
}

/// Result of one arm within one replicate.
pub struct ArmRun {
    pub arm: Arm,
    pub record: LoopRecord,
}

/// Starting members for every arm of replicate `r`, in arm order.
fn starting_members(cfg: &RunConfig, prep: &Prepared, r: usize, arms: &[Arm]) -> Result<Vec<Vec<ModelParams>>> {
    let rep = r.to_string();
    let needs = |f: &dyn Fn(Ablation) -> bool| {
        arms.iter()
            .filter(|a| f(a.ablation))
            .map(|a| a.ensemble_size(&cfg.loop_cfg))
            .max()
            .unwrap_or(0)
    };
    let n_pretrained = needs(&|a| matches!(a, Ablation::None | Ablation::Base | Ablation::FrozenFeatures));
    let n_random = needs(&|a| a == Ablation::RandomInit);
    let n_init = n_pretrained.max(n_random);

    let initial: Vec<ModelParams> = (0..n_init)
        .map(|m| {
            let mut rng = seed::stream(cfg.seed, &["replicate", &rep, "member", &m.to_string(), "init"]);
            ModelParams::init_rgcn(
                prep.graph.num_nodes(),
                prep.graph.num_relations(),
                &cfg.model.rgcn,
                cfg.model.dropout,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;
    let pretrained: Vec<ModelParams> = initial[..n_pretrained]
        .par_iter()
        .enumerate()
        .map(|(m, start)| {
            let mut member = start.clone();
            let s = seed::derive_seed(cfg.seed, &["replicate", &rep, "member", &m.to_string(), "pretrain"]);
            pretrain(&mut member, &prep.graph, &prep.prop, &cfg.train, s)?;
            Ok(member)
        })
        .collect::<Result<_>>()?;

    arms.iter()
        .map(|arm| {
            let m = arm.ensemble_size(&cfg.loop_cfg);
            match arm.ablation {
                Ablation::None | Ablation::Base | Ablation::FrozenFeatures => Ok(pretrained[..m].to_vec()),
                Ablation::RandomInit => Ok(initial[..m].to_vec()),
                Ablation::UnconstrainedFeatures => (0..m)
                    .map(|k| {
                        let mut rng =
                            seed::stream(cfg.seed, &["replicate", &rep, "member", &k.to_string(), "free-init"]);
                        ModelParams::init_free(
                            prep.world.targets().genes().to_vec(),
                            prep.graph.num_relations(),
                            cfg.model.rgcn.embedding_dim,
                            cfg.model.dropout,
                            &mut rng,
                        )
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Runs every arm of replicate `r` and checks its bookkeeping.
pub fn run_replicate(cfg: &RunConfig, prep: &Prepared, r: usize) -> Result<Vec<ArmRun>> {
    let arms = cfg.arms();
    let starts = starting_members(cfg, prep, r, &arms)?;
    let loop_cfg = crate::activeloop::LoopConfig {
        seed: cfg.seed,
        ..cfg.loop_cfg.clone()
    };
    arms.iter()
        .zip(starts)
        .map(|(arm, mut members)| {
            let mut world = prep.world.clone();
            world.clear_revealed();
            let labels = RunLabels {
                replicate: r,
                arm: arm.label(),
            };
            let options = LoopOptions {
                freeze_encoder: arm.ablation == Ablation::FrozenFeatures,
            };
            let record = run_loop(
                &mut world,
                &prep.prop,
                &mut members,
                arm.strategy,
                &loop_cfg,
                &cfg.train,
                &labels,
                options,
            )?;
            check_record(&record, loop_cfg.batch_size)?;
            Ok(ArmRun { arm: *arm, record })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub out_dir: PathBuf,
    pub metric_rows: usize,
    /// `(replicate, message)` of every replicate that failed.
    pub failures: Vec<(usize, String)>,
    pub elapsed_s: f64,
}

fn seeds_json(cfg: &RunConfig, replicates: usize) -> serde_json::Value {
    json!({
        "scheme": "sha256(\"deepal/v1\" || master as u64 little-endian || for each label: len as u64 little-endian || utf8 bytes) seeds ChaCha8",
        "master": cfg.seed,
        "world_seed": cfg.world.spec.as_ref().map(|s| s.seed),
        "replicates": replicates,
        "streams": [
            "walk/<target-id>/<k>",
            "replicate/<r>/member/<m>/init",
            "replicate/<r>/member/<m>/pretrain (derived seed; then shuffle, negatives/<epoch>)",
            "replicate/<r>/member/<m>/free-init",
            "replicate/<r>/round0",
            "replicate/<r>/arm/<arm>/round/<t>/acquire",
            "replicate/<r>/arm/<arm>/member/<m>/finetune/<t>",
        ],
    })
}

struct Sink {
    metrics: RowWriter,
    losses: RowWriter,
    next: usize,
    pending: BTreeMap<usize, Result<Vec<ArmRun>>>,
    rows: usize,
    failures: Vec<(usize, String)>,
}

impl Sink {
    /// Writes every finished replicate that extends the written prefix.
    fn drain(&mut self, cfg: &RunConfig, dir: &Path, num_pairs: usize) -> Result<()> {
        while let Some(result) = self.pending.remove(&self.next) {
            let r = self.next;
            match result {
                Ok(runs) => {
                    for run in &runs {
                        let (s, a) = (run.arm.strategy.to_string(), run.arm.ablation.tag());
                        let rows = metric_rows(&s, a, r, &run.record, num_pairs, cfg.record_wallclock);
                        self.rows += rows.len();
                        self.metrics.append(&rows)?;
                        self.losses.append(&loss_rows(&s, a, r, &run.record))?;
                    }
                }
                Err(e) => {
                    log::error!("replicate {r} failed: {e}");
                    log_failure(dir, r, &e.to_string())?;
                    self.failures.push((r, e.to_string()));
                }
            }
            self.next += 1;
        }
        Ok(())
    }
}

/// Runs the sweep described by `cfg`, writing into `out`. Replicate
/// failures are logged to `failures.log` and do not stop the sweep.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<SweepOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let prep = prepare(cfg)?;
    cfg.validate_for_pairs(prep.world.num_pairs())?;
    for w in &prep.warnings {
        log::warn!("{w}");
    }
    log::info!(
        "subgraph: {} nodes, {} edges; {} targets, {} pairs",
        prep.graph.num_nodes(),
        prep.graph.num_edges(),
        prep.world.num_targets(),
        prep.world.num_pairs()
    );

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stale = out.join(super::record::FAILURES_FILE);
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    let seeds = serde_json::to_string_pretty(&seeds_json(cfg, cfg.replicates)).expect("json");
    write_text(&out.join(SEEDS_FILE), &(seeds + "\n"))?;
    export_world(&prep.full_graph, &prep.full_world, cfg.world.spec.as_ref(), &out.join(WORLD_DIR))?;

    let sink = Mutex::new(Sink {
        metrics: RowWriter::create(&out.join(METRICS_FILE), &METRICS_HEADER)?,
        losses: RowWriter::create(&out.join(LOSSES_FILE), &LOSSES_HEADER)?,
        next: 0,
        pending: BTreeMap::new(),
        rows: 0,
        failures: Vec::new(),
    });
    let num_pairs = prep.world.num_pairs();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    pool.install(|| {
        (0..cfg.replicates).into_par_iter().try_for_each(|r| {
            let t = Instant::now();
            let result = run_replicate(cfg, &prep, r);
            log::info!("replicate {r} finished in {:.1}s", t.elapsed().as_secs_f64());
            let mut sink = sink.lock().expect("sink lock");
            sink.pending.insert(r, result);
            sink.drain(cfg, out, num_pairs)
        })
    })?;

    let sink = sink.into_inner().expect("sink lock");
    Ok(SweepOutcome {
        out_dir: out.to_path_buf(),
        metric_rows: sink.rows,
        failures: sink.failures,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}
