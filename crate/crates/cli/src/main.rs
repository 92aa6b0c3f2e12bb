//! `deepal`: synthetic worlds, active-learning sweeps, curves and self-checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use deepal::activeloop::Strategy;
use deepal::experiment::check::run_checks;
use deepal::experiment::curves::emit_curves;
use deepal::experiment::record::{read_metrics, CONFIG_FILE, METRICS_FILE};
use deepal::experiment::{run_experiment, Preset, RunConfig};
use deepal::synthworld::{export_world, generate_world};

#[derive(Parser, Debug)]
#[command(name = "deepal", version, about = "Deep active learning over knowledge-graph embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic world and write graph.tsv, truth.tsv and world.json.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "world")]
        out: PathBuf,
    },
    /// Run a replicated sweep and write the raw rows, summary and curves.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        /// Worker threads for replicates; 0 uses every core.
        #[arg(long)]
        workers: Option<usize>,
        /// Strategy to run, repeatable; replaces the configured list.
        /// One of greedy, optimism[:q], max-variance, badge, random.
        #[arg(long = "strategy", value_name = "STRATEGY")]
        strategies: Vec<String>,
    },
    /// Recompute summary.csv and curves.svg from a run directory.
    Plot {
        /// Run directory holding metrics.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient and closed-form self-checks.
    Check,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Loop preset: batch400, batch200 or batch800.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed. For `generate` this is the world seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.preset {
            p.parse::<Preset>()?.apply(&mut cfg);
        }
        Ok(cfg)
    }
}

fn coverage_title(dir: &Path) -> String {
    match RunConfig::load(&dir.join(CONFIG_FILE)) {
        Ok(cfg) => format!("Coverage@{}", cfg.loop_cfg.coverage_k),
        Err(_) => "Coverage".to_string(),
    }
}

fn plot(dir: &Path) -> Result<()> {
    let rows = read_metrics(&dir.join(METRICS_FILE))?;
    let (summary, svg) = emit_curves(&rows, dir, &coverage_title(dir))?;
    println!("wrote {} and {}", summary.display(), svg.display());
    Ok(())
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Generate { common, out } => {
            let cfg = common.resolve()?;
            let Some(mut spec) = cfg.world.spec else {
                bail!("the config names a world directory; nothing to generate");
            };
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let gw = generate_world(&spec)?;
            for w in &gw.warnings {
                log::warn!("{w}");
            }
            for f in export_world(&gw.graph, &gw.world, Some(&spec), &out)? {
                println!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            common,
            out,
            workers,
            strategies,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if !strategies.is_empty() {
                cfg.strategies = strategies
                    .iter()
                    .map(|s| s.parse::<Strategy>())
                    .collect::<deepal::Result<_>>()?;
            }
            let outcome = run_experiment(&cfg, &out)?;
            println!(
                "{} metric rows in {:.1}s -> {}",
                outcome.metric_rows,
                outcome.elapsed_s,
                out.display()
            );
            if outcome.metric_rows > 0 {
                plot(&out)?;
            }
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for (r, msg) in &outcome.failures {
                    eprintln!("replicate {r} failed: {msg}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Plot { out } => {
            plot(&out).with_context(|| format!("plotting {}", out.display()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Check => {
            let report = run_checks()?;
            for line in &report.lines {
                let status = if line.passed { "PASS" } else { "FAIL" };
                println!("{status} {}: {}", line.name, line.detail);
            }
            println!("{} checks in {:.1}s", report.lines.len(), report.elapsed_s);
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
