//! Sweep configuration.
//!
//! Values are resolved in this order, later sources winning:
//! built-in defaults, the TOML config file, the `--preset` flag, then the
//! remaining command-line flags (`--seed`, `--workers`, `--strategy`).

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activeloop::{LoopConfig, Strategy};
use crate::error::{Error, Result};
use crate::heads::DEFAULT_DROPOUT;
use crate::hetgraph::SamplerConfig;
use crate::rgcn::RgcnConfig;
use crate::synthworld::WorldSpec;
use crate::training::TrainConfig;

/// Where the graph and truth come from. Exactly one of `spec` and `dir` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSource {
    /// Generate a synthetic world from this spec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<WorldSpec>,
    /// Directory holding `graph.tsv` and `truth.tsv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl Default for WorldSource {
    fn default() -> Self {
        WorldSource {
            spec: Some(WorldSpec::default()),
            dir: None,
        }
    }
}

/// Variants run alongside the plain strategies, all with `ablation_strategy`.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// A single pretrained model (`M = 1`).
    pub base: bool,
    /// Skip pretraining; members start from their random initialization.
    pub random_init: bool,
    /// Pretrained embeddings stay fixed; only the bilinear head is fine-tuned.
    pub frozen_features: bool,
    /// Free per-gene embeddings; the graph is ignored.
    pub unconstrained_features: bool,
}

impl Ablations {
    pub fn all() -> Self {
        Ablations {
            base: true,
            random_init: true,
            frozen_features: true,
            unconstrained_features: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub rgcn: RgcnConfig,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            rgcn: RgcnConfig::default(),
            dropout: DEFAULT_DROPOUT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed of every random stream except the world's own.
    pub seed: u64,
    pub replicates: usize,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub strategies: Vec<Strategy>,
    pub ablation_strategy: Strategy,
    pub ablations: Ablations,
    /// Fill the `wallclock_s` column. Off by default so reruns are byte-identical.
    pub record_wallclock: bool,
    pub world: WorldSource,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            replicates: 20,
            workers: 0,
            strategies: vec![
                Strategy::Greedy,
                Strategy::Optimism { q: 0.1 },
                Strategy::MaxVariance,
                Strategy::Badge,
                Strategy::Random,
            ],
            ablation_strategy: Strategy::Optimism { q: 0.1 },
            ablations: Ablations::default(),
            record_wallclock: false,
            world: WorldSource::default(),
            sampler: SamplerConfig::default(),
            model: ModelConfig::default(),
            loop_cfg: LoopConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Named loop settings: batch size `N` with the round count that keeps the
/// total budget near 6,800 pairs. All use `M = 20`, `q = 0.1`, `K = 400`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Batch400,
    Batch200,
    Batch800,
}

/// Gene count of generated worlds under a preset, large enough for the budget.
pub const PRESET_GENES: usize = 356;

impl Preset {
    pub fn rounds_and_batch(self) -> (usize, usize) {
        match self {
            Preset::Batch400 => (17, 400),
            Preset::Batch200 => (33, 200),
            Preset::Batch800 => (9, 800),
        }
    }

    /// Loop settings, plus the world size when the world is generated.
    pub fn apply(self, cfg: &mut RunConfig) {
        let (rounds, batch) = self.rounds_and_batch();
        cfg.loop_cfg.rounds = rounds;
        cfg.loop_cfg.batch_size = batch;
        cfg.loop_cfg.ensemble_size = 20;
        cfg.loop_cfg.quantile = 0.1;
        cfg.loop_cfg.coverage_k = 400;
        if let Some(spec) = &mut cfg.world.spec {
            spec.genes = PRESET_GENES;
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch400" => Ok(Preset::Batch400),
            "batch200" => Ok(Preset::Batch200),
            "batch800" => Ok(Preset::Batch800),
            other => Err(Error::config(
                "preset",
                format!("unknown preset {other:?}; expected batch400, batch200 or batch800"),
            )),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(&path.display().to_string(), e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every arm label must be distinct and every section valid. Checks that
    /// need the pair count are left to [`RunConfig::validate_for_pairs`].
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        match (&self.world.spec, &self.world.dir) {
            (Some(spec), None) => spec.validate()?,
            (None, Some(_)) => {}
            _ => {
                return Err(Error::config(
                    "world",
                    "set exactly one of a generation spec and a directory",
                ))
            }
        }
        if self.strategies.is_empty() && self.arms().is_empty() {
            return Err(Error::config("strategies", "no strategies or ablations selected"));
        }
        let mut tags: Vec<String> = self.arms().iter().map(|a| a.label()).collect();
        tags.sort();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("strategies", "listed more than once"));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::config("model.dropout", "must lie in [0, 1)"));
        }
        self.model.rgcn.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn validate_for_pairs(&self, num_pairs: usize) -> Result<()> {
        self.validate()?;
        self.loop_cfg.validate(num_pairs)
    }

    /// Arms in output order: plain strategies first, then enabled ablations.
    pub fn arms(&self) -> Vec<Arm> {
        let mut arms: Vec<Arm> = self
            .strategies
            .iter()
            .map(|&strategy| Arm {
                strategy,
                ablation: Ablation::None,
            })
            .collect();
        let flags = [
            (self.ablations.base, Ablation::Base),
            (self.ablations.random_init, Ablation::RandomInit),
            (self.ablations.frozen_features, Ablation::FrozenFeatures),
            (self.ablations.unconstrained_features, Ablation::UnconstrainedFeatures),
        ];
        for (on, ablation) in flags {
            if on {
                arms.push(Arm {
                    strategy: self.ablation_strategy,
                    ablation,
                });
            }
        }
        arms
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    None,
    Base,
    RandomInit,
    FrozenFeatures,
    UnconstrainedFeatures,
}

impl Ablation {
    pub fn tag(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Base => "base",
            Ablation::RandomInit => "random-init",
            Ablation::FrozenFeatures => "frozen-features",
            Ablation::UnconstrainedFeatures => "unconstrained-features",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Ablation::None,
            Ablation::Base,
            Ablation::RandomInit,
            Ablation::FrozenFeatures,
            Ablation::UnconstrainedFeatures,
        ]
        .into_iter()
        .find(|a| a.tag() == s)
        .ok_or_else(|| Error::config("ablation", format!("unknown ablation {s:?}")))
    }
}

/// One strategy/ablation combination of a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arm {
    pub strategy: Strategy,
    pub ablation: Ablation,
}

impl Arm {
    /// Stream label and legend entry: the strategy for plain arms, the
    /// ablation tag otherwise.
    pub fn label(&self) -> String {
        match self.ablation {
            Ablation::None => self.strategy.to_string(),
            other => other.tag().to_string(),
        }
    }

    pub fn ensemble_size(&self, loop_cfg: &LoopConfig) -> usize {
        match self.ablation {
            Ablation::Base => 1,
            _ => loop_cfg.ensemble_size,
        }
    }
}
