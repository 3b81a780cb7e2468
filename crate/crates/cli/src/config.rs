//! Experiment configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use apemo_core::abm::AbmConfig;
use apemo_core::benchmark::{BenchSettings, BlockConfig, ExecutorKind, Metric};
use apemo_core::frontier::FrontierSpec;
use apemo_core::llm::LlmConfig;
use apemo_core::scheduler::{PolicyKind, SchedulerConfig};
use apemo_core::signals::SignalConfig;
use apemo_core::stats::StatsConfig;
use apemo_core::trajectory::{ObjectiveWeights, ReuseModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Overrides the model server URL unless the file sets one.
pub const BASE_URL_ENV: &str = "APEMO_BASE_URL";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub treatment: Option<PolicyKind>,
    pub metrics: Option<Vec<Metric>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveWeights,
    pub reuse: ReuseModel,
    pub signals: Option<SignalConfig>,
    pub scheduler: SchedulerConfig,
    pub abm: AbmConfig,
    pub llm: Option<LlmConfig>,
    pub stats: StatsConfig,
    pub report: ReportConfig,
    pub blocks: Vec<BlockConfig>,
    pub frontier: Vec<FrontierSpec>,
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub config: ExperimentConfig,
}

impl ExperimentConfig {
    /// Parse TOML text. `env_base_url` applies only when the text leaves
    /// `llm.endpoint.base_url` unset.
    pub fn parse(text: &str, env_base_url: Option<&str>) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(sig) = cfg.signals {
            cfg.scheduler.signals = sig;
        }
        let raw: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let url_in_file = raw
            .get("llm")
            .and_then(|l| l.get("endpoint"))
            .and_then(|e| e.get("base_url"))
            .is_some();
        if let (Some(llm), Some(url), false) = (cfg.llm.as_mut(), env_base_url, url_in_file) {
            llm.endpoint.base_url = url.to_string();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.objective.validate()?;
        self.scheduler.validate()?;
        self.abm.validate()?;
        if let Some(llm) = &self.llm {
            llm.validate()?;
        }
        if self.stats.resamples < apemo_core::stats::MIN_RESAMPLES {
            return Err(CliError::Config(format!(
                "stats.resamples must be >= {}",
                apemo_core::stats::MIN_RESAMPLES
            )));
        }
        if !(self.stats.coverage > 0.0 && self.stats.coverage < 1.0) {
            return Err(CliError::Config("stats.coverage must be in (0,1)".into()));
        }
        let mut names = std::collections::HashSet::new();
        for b in &self.blocks {
            b.validate()?;
            if !names.insert(b.name.as_str()) {
                return Err(CliError::Config(format!("duplicate block name {:?}", b.name)));
            }
            if b.executor == ExecutorKind::Llm && self.llm.is_none() {
                return Err(CliError::Config(format!(
                    "block {:?} uses the llm executor but there is no [llm] section",
                    b.name
                )));
            }
        }
        let mut labels = std::collections::HashSet::new();
        for f in &self.frontier {
            if !labels.insert(f.label.as_str()) {
                return Err(CliError::Config(format!("duplicate frontier label {:?}", f.label)));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> BenchSettings {
        BenchSettings {
            scheduler: self.scheduler,
            objective: self.objective,
            reuse: self.reuse,
            abm: self.abm,
            llm: self.llm.clone(),
        }
    }

    pub fn block(&self, name: &str) -> Result<&BlockConfig, CliError> {
        self.blocks.iter().find(|b| b.name == name).ok_or_else(|| {
            let names: Vec<&str> = self.blocks.iter().map(|b| b.name.as_str()).collect();
            CliError::Config(format!(
                "unknown block {name:?}; available: {}",
                if names.is_empty() { "(none)".to_string() } else { names.join(", ") }
            ))
        })
    }

    /// SHA-256 over everything that determines a block's records.
    pub fn block_hash(&self, block: &BlockConfig) -> String {
        let settings = self.settings();
        let llm = (block.executor == ExecutorKind::Llm).then_some(&settings.llm);
        let material = serde_json::json!({
            "block": block,
            "scheduler": settings.scheduler,
            "objective": settings.objective,
            "reuse": settings.reuse,
            "abm": (block.executor == ExecutorKind::Abm).then_some(settings.abm),
            "llm": llm,
        });
        hex::encode(Sha256::digest(material.to_string().as_bytes()))
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let env = std::env::var(BASE_URL_ENV).ok();
    let config = ExperimentConfig::parse(&text, env.as_deref())
        .map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
    Ok(LoadedConfig {
        path: path.to_path_buf(),
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[blocks]]
name = "b"
horizon = 8
policies = ["apemo", "uniform"]
seeds = { start = 0, count = 3 }
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL, None).unwrap();
        assert_eq!(cfg.blocks[0].seeds(), vec![0, 1, 2]);
        assert_eq!(cfg.scheduler, SchedulerConfig::default());
        assert!(cfg.llm.is_none());
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let bad = "[scheduler]\nskim = 0.2\nskimm = 0.3\n";
        let err = ExperimentConfig::parse(bad, None).unwrap_err().to_string();
        assert!(err.contains("skimm") && err.contains("line 3"), "{err}");
        let bad = "[[blocks]]\nname = \"b\"\nhorizon = 0\npolicies = [\"apemo\"]\nseeds = [1]\n";
        assert!(ExperimentConfig::parse(bad, None).is_err());
        let bad = "[[blocks]]\nname = \"b\"\nhorizon = 2\npolicies = [\"nope\"]\nseeds = [1]\n";
        assert!(ExperimentConfig::parse(bad, None).unwrap_err().to_string().contains("nope"));
    }

    #[test]
    fn base_url_precedence() {
        let with_llm = "[llm]\n";
        let cfg = ExperimentConfig::parse(with_llm, Some("http://env:1")).unwrap();
        assert_eq!(cfg.llm.unwrap().endpoint.base_url, "http://env:1");
        let file = "[llm.endpoint]\nbase_url = \"http://file:2\"\n";
        let cfg = ExperimentConfig::parse(file, Some("http://env:1")).unwrap();
        assert_eq!(cfg.llm.unwrap().endpoint.base_url, "http://file:2");
        let cfg = ExperimentConfig::parse(with_llm, None).unwrap();
        assert_eq!(cfg.llm.unwrap().endpoint.base_url, "http://127.0.0.1:11434");
    }

    #[test]
    fn signals_section_feeds_scheduler() {
        let cfg = ExperimentConfig::parse("[signals]\nsmoothing = 0.5\n", None).unwrap();
        assert_eq!(cfg.scheduler.signals.smoothing, 0.5);
    }

    #[test]
    fn unknown_block_lists_available() {
        let cfg = ExperimentConfig::parse(MINIMAL, None).unwrap();
        let err = cfg.block("zzz").unwrap_err().to_string();
        assert!(err.contains("available: b"));
    }

    #[test]
    fn hash_tracks_block_content() {
        let cfg = ExperimentConfig::parse(MINIMAL, None).unwrap();
        let mut other = cfg.clone();
        other.blocks[0].episodes = 2;
        assert_ne!(cfg.block_hash(&cfg.blocks[0]), other.block_hash(&other.blocks[0]));
        let mut stats_only = cfg.clone();
        stats_only.stats.seed = 99;
        assert_eq!(cfg.block_hash(&cfg.blocks[0]), stats_only.block_hash(&stats_only.blocks[0]));
    }

    #[test]
    fn llm_block_requires_llm_section() {
        let text = "[[blocks]]\nname = \"l\"\nhorizon = 2\npolicies = [\"apemo\"]\nseeds = [1]\nexecutor = \"llm\"\n";
        assert!(ExperimentConfig::parse(text, None).is_err());
    }
}
