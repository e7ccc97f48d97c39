//! Run configuration files.
//!
//! ```toml
//! preset = "rot-blobs-5"      # or: data = "domains.csv"
//! strategy = "MULTITASK"      # SRC_ONLY, CRT_ONLY, MULTITASK, CRT_SRC, CRT_SRC_MEM, CRT_SDC, GRCL
//! lambda_src = 0.5            # MULTITASK, CRT_SRC, CRT_SRC_MEM
//! lambda_mem = 1.0            # MULTITASK, CRT_SRC_MEM
//! seed = 7
//! seeds = [0, 1, 2, 3, 4]     # optional; used by `compare`
//! output_dir = "runs/mt"
//!
//! [training]
//! source_epochs = 30
//! epochs_per_domain = 10
//! batch_size = 64
//! lr = 0.05
//! momentum = 0.5
//! memory_capacity = 128
//! kmeans_max_iter = 100
//! alignment = "features"      # or "embedding"
//! per_memory_constraints = false
//! exclude_classifier = false
//!
//! [batch_ratio]
//! source = 0.25
//! memory = 0.25
//! target = 0.5
//!
//! [contrastive]
//! temperature = 0.07
//! negatives = 64
//! full_bank = false
//!
//! [model]
//! encoder_hidden = 64
//! projector_hidden = 64
//! embed_dim = 16
//! ```

use crate::error::CliError;
use grcl_core::datagen::{self, preset};
use grcl_core::{AdaptationPlan, AlignmentSpace, Benchmark, BatchRatio, ContrastiveConfig, ModelConfig, Strategy};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const OUTPUT_DIR_ENV: &str = "GRCL_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StrategyName {
    SrcOnly,
    CrtOnly,
    Multitask,
    CrtSrc,
    CrtSrcMem,
    CrtSdc,
    Grcl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub source_epochs: usize,
    pub epochs_per_domain: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub memory_capacity: usize,
    pub kmeans_max_iter: usize,
    pub alignment: AlignmentSpace,
    pub per_memory_constraints: bool,
    pub exclude_classifier: bool,
}

impl Default for Training {
    fn default() -> Self {
        let p = AdaptationPlan::new(Strategy::Grcl, ModelConfig::new(2, 2), 0);
        Self {
            source_epochs: p.source_epochs,
            epochs_per_domain: p.epochs_per_domain,
            batch_size: p.batch_size,
            lr: p.lr,
            momentum: p.momentum,
            memory_capacity: p.memory_capacity,
            kmeans_max_iter: p.kmeans_max_iter,
            alignment: p.alignment,
            per_memory_constraints: p.per_memory_constraints,
            exclude_classifier: p.exclude_classifier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder_hidden: usize,
    pub projector_hidden: usize,
    pub embed_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(2, 2);
        Self {
            encoder_hidden: m.encoder_hidden,
            projector_hidden: m.projector_hidden,
            embed_dim: m.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub strategy: StrategyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_src: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_mem: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub training: Training,
    #[serde(default)]
    pub batch_ratio: BatchRatio,
    #[serde(default)]
    pub contrastive: ContrastiveConfig,
    #[serde(default)]
    pub model: ModelSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("grcl-out")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the config echoed in a run manifest when the
    /// path ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let config = manifest
                .get("config")
                .ok_or_else(|| CliError::Config(format!("{}: manifest has no `config`", path.display())))?;
            let cfg: RunConfig = serde_json::from_value(config.clone())
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            cfg.check()?;
            return Ok(cfg);
        }
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn check(&self) -> Result<(), CliError> {
        match (&self.preset, &self.data) {
            (None, None) => return Err(CliError::Config("missing field `preset` (or `data`)".into())),
            (Some(_), Some(_)) => return Err(CliError::Config("`preset` and `data` are mutually exclusive".into())),
            (Some(p), None) if preset(p).is_none() => {
                return Err(CliError::Config(format!(
                    "unknown preset `{p}`; expected one of {}",
                    datagen::PRESETS.join(", ")
                )))
            }
            _ => {}
        }
        let (needs_src, needs_mem) = match self.strategy {
            StrategyName::Multitask | StrategyName::CrtSrcMem => (true, true),
            StrategyName::CrtSrc => (true, false),
            _ => (false, false),
        };
        for (field, value, needed) in [
            ("lambda_src", self.lambda_src, needs_src),
            ("lambda_mem", self.lambda_mem, needs_mem),
        ] {
            match (value, needed) {
                (None, true) => {
                    return Err(CliError::Config(format!(
                        "missing field `{field}` (required by strategy {:?})",
                        self.strategy
                    )))
                }
                (Some(_), false) => {
                    return Err(CliError::Config(format!(
                        "field `{field}` is not used by strategy {:?}",
                        self.strategy
                    )))
                }
                (Some(v), true) if !(v >= 0.0 && v.is_finite()) => {
                    return Err(CliError::Config(format!("field `{field}` must be finite and >= 0, got {v}")))
                }
                _ => {}
            }
        }
        if self.seeds.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(CliError::Config("field `seeds` must not be empty".into()));
        }
        Ok(())
    }

    pub fn strategy(&self) -> Strategy {
        let l1 = self.lambda_src.unwrap_or(0.0);
        let l2 = self.lambda_mem.unwrap_or(0.0);
        match self.strategy {
            StrategyName::SrcOnly => Strategy::SrcOnly,
            StrategyName::CrtOnly => Strategy::CrtOnly,
            StrategyName::Multitask => Strategy::Multitask {
                lambda_src: l1,
                lambda_mem: l2,
            },
            StrategyName::CrtSrc => Strategy::CrtSrc { lambda_src: l1 },
            StrategyName::CrtSrcMem => Strategy::CrtSrcMem {
                lambda_src: l1,
                lambda_mem: l2,
            },
            StrategyName::CrtSdc => Strategy::CrtSdc,
            StrategyName::Grcl => Strategy::Grcl,
        }
    }

    /// Strategy name with its trade-off weights, e.g. `MULTITASK(0.5,1)`.
    pub fn label(&self) -> String {
        let name = self.strategy().name();
        match (self.lambda_src, self.lambda_mem) {
            (Some(a), Some(b)) => format!("{name}({a},{b})"),
            (Some(a), None) => format!("{name}({a})"),
            _ => name.to_string(),
        }
    }

    /// Preset name or data path; runs are comparable only when this matches.
    pub fn dataset_key(&self) -> String {
        match (&self.preset, &self.data) {
            (Some(p), _) => format!("preset:{p}"),
            (_, Some(d)) => format!("data:{}", d.display()),
            _ => unreachable!("checked on load"),
        }
    }

    pub fn benchmark(&self) -> Result<Benchmark, CliError> {
        if let Some(p) = &self.preset {
            let specs = preset(p).expect("checked on load");
            return Ok(grcl_core::generate_sequence(&specs)?);
        }
        let path = self.data.as_ref().expect("checked on load");
        let file = fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        datagen::import_csv(std::io::BufReader::new(file)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn plan(&self, bench: &Benchmark, seed: u64) -> AdaptationPlan {
        let model = ModelConfig {
            input_dim: bench.input_dim(),
            encoder_hidden: self.model.encoder_hidden,
            projector_hidden: self.model.projector_hidden,
            embed_dim: self.model.embed_dim,
            num_classes: bench.num_classes,
        };
        let t = &self.training;
        AdaptationPlan {
            source_epochs: t.source_epochs,
            epochs_per_domain: t.epochs_per_domain,
            batch_size: t.batch_size,
            ratio: self.batch_ratio,
            lr: t.lr,
            contrastive: self.contrastive,
            momentum: t.momentum,
            memory_capacity: t.memory_capacity,
            kmeans_max_iter: t.kmeans_max_iter,
            alignment: t.alignment,
            per_memory_constraints: t.per_memory_constraints,
            exclude_classifier: t.exclude_classifier,
            ..AdaptationPlan::new(self.strategy(), model, seed)
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    /// `$GRCL_OUTPUT_DIR` if set, else the configured directory.
    pub fn resolved_output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "preset = \"moons-4\"\nstrategy = \"GRCL\"\nseed = 3\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.strategy(), Strategy::Grcl);
        assert_eq!(cfg.training, Training::default());
        assert_eq!(cfg.contrastive, ContrastiveConfig::default());
        assert_eq!(cfg.seeds(), vec![3]);
        assert_eq!(cfg.label(), "GRCL");
    }

    #[test]
    fn missing_fields_are_named() {
        for (text, field) in [
            ("preset = \"moons-4\"\nseed = 1\n", "strategy"),
            ("preset = \"moons-4\"\nstrategy = \"GRCL\"\n", "seed"),
            ("strategy = \"GRCL\"\nseed = 1\n", "preset"),
            ("preset = \"moons-4\"\nstrategy = \"MULTITASK\"\nseed = 1\nlambda_src = 1.0\n", "lambda_mem"),
        ] {
            match RunConfig::parse(text) {
                Err(CliError::Config(m)) => assert!(m.contains(field), "{m}"),
                other => panic!("expected config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_unknown_and_inconsistent_fields() {
        assert!(RunConfig::parse(&format!("{MINIMAL}colour = 1\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}[training]\nepochs = 3\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}lambda_src = 1.0\n")).is_err());
        assert!(RunConfig::parse("preset = \"nope\"\nstrategy = \"GRCL\"\nseed = 1\n").is_err());
        assert!(RunConfig::parse("preset = \"moons-4\"\nstrategy = \"CRT_SRC\"\nseed = 1\nlambda_src = -1.0\n").is_err());
    }

    #[test]
    fn multitask_label_and_plan() {
        let cfg = RunConfig::parse(
            "preset = \"moons-4\"\nstrategy = \"MULTITASK\"\nseed = 1\nlambda_src = 0.5\nlambda_mem = 2.0\n\
             [training]\nlr = 0.01\n[contrastive]\nnegatives = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.label(), "MULTITASK(0.5,2)");
        let bench = cfg.benchmark().unwrap();
        let plan = cfg.plan(&bench, 9);
        assert_eq!(plan.seed, 9);
        assert_eq!(plan.lr, 0.01);
        assert_eq!(plan.contrastive.negatives, 8);
        assert_eq!(plan.contrastive.temperature, 0.07);
        assert_eq!(plan.model.num_classes, 2);
        assert_eq!(
            plan.strategy,
            Strategy::Multitask {
                lambda_src: 0.5,
                lambda_mem: 2.0
            }
        );
    }
}
