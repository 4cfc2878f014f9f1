//! Pipeline configuration: a TOML file whose every key is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toolrec_core::cnn::CnnConfig;
use toolrec_core::embedding::EmbeddingConfig;

use crate::CliError;

pub const CONFIG_ENV: &str = "APIRO_CONFIG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory for every artifact whose path is not set explicitly.
    pub work_dir: Option<PathBuf>,
    /// Adapter descriptors; the bundled desk corpus when unset.
    pub adapters: Option<PathBuf>,
    /// Lexicon directory; bundled lexicons fill any missing file.
    pub lexicons: Option<PathBuf>,
    pub immutable: Option<PathBuf>,
    pub external: Vec<PathBuf>,
    pub labels: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub processed: Option<PathBuf>,
    pub augmented: Option<PathBuf>,
    pub sample: Option<PathBuf>,
    pub selection_report: Option<PathBuf>,
    pub selected: Option<PathBuf>,
    pub embedding: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub beta: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { beta: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub folds: usize,
    pub repeats: usize,
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: 10,
            repeats: 10,
            k: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Technique ids; the default in-process selection when empty.
    pub techniques: Vec<String>,
    pub paths: Paths,
    pub embedding: EmbeddingConfig,
    pub cnn: CnnConfig,
    pub selection: SelectionConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            techniques: Vec::new(),
            paths: Paths::default(),
            embedding: EmbeddingConfig::default(),
            cnn: CnnConfig::default(),
            selection: SelectionConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<PipelineConfig, CliError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.embedding.validate().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.cnn.validate().map_err(|e| CliError::Config(e.to_string()))?;
        for id in &cfg.techniques {
            toolrec_core::augment::technique(id).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Relative paths in the file resolve against the file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    fn work(&self, name: &str) -> PathBuf {
        self.paths.work_dir.clone().unwrap_or_else(|| PathBuf::from("work")).join(name)
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.paths.corpus.clone().unwrap_or_else(|| self.work("corpus.json"))
    }

    pub fn processed_path(&self) -> PathBuf {
        self.paths.processed.clone().unwrap_or_else(|| self.work("processed.json"))
    }

    pub fn augmented_path(&self) -> PathBuf {
        self.paths.augmented.clone().unwrap_or_else(|| self.work("augmented.jsonl"))
    }

    pub fn sample_path(&self) -> PathBuf {
        self.paths.sample.clone().unwrap_or_else(|| self.work("selection_sample.json"))
    }

    pub fn selection_report_path(&self) -> PathBuf {
        self.paths.selection_report.clone().unwrap_or_else(|| self.work("selection_report.jsonl"))
    }

    pub fn selected_path(&self) -> PathBuf {
        self.paths.selected.clone().unwrap_or_else(|| self.work("selected.jsonl"))
    }

    pub fn embedding_path(&self) -> PathBuf {
        self.paths.embedding.clone().unwrap_or_else(|| self.work("embedding.bin"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths.model.clone().unwrap_or_else(|| self.work("model.bin"))
    }

    pub fn report_stem(&self) -> PathBuf {
        self.paths.report.clone().unwrap_or_else(|| self.work("eval"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.work("manifest.json")
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        for p in [
            &mut self.work_dir,
            &mut self.adapters,
            &mut self.lexicons,
            &mut self.immutable,
            &mut self.labels,
            &mut self.corpus,
            &mut self.processed,
            &mut self.augmented,
            &mut self.sample,
            &mut self.selection_report,
            &mut self.selected,
            &mut self.embedding,
            &mut self.model,
            &mut self.report,
        ] {
            fix(p);
        }
        for x in &mut self.external {
            if x.is_relative() {
                *x = base.join(&*x);
            }
        }
    }
}
