//! Pipeline commands and the HTTP query service over a trained model.

pub mod commands;
pub mod config;
pub mod server;

use std::path::Path;
use std::sync::Arc;

use toolrec_core::cnn::RecommenderModel;
use toolrec_core::corpus::Corpus;
use toolrec_core::embedding::EmbeddingModel;
use toolrec_core::textprep::{ImmutableCorpus, Lexicons};

use crate::config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] toolrec_core::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(toolrec_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn load_lexicons(cfg: &PipelineConfig) -> CliResult<Lexicons> {
    let lex = match &cfg.paths.lexicons {
        Some(dir) => Lexicons::load_dir(dir)?,
        None => Lexicons::bundled(),
    };
    lex.validate().map_err(CliError::Config)?;
    Ok(lex)
}

pub fn load_immutable(cfg: &PipelineConfig) -> CliResult<ImmutableCorpus> {
    Ok(match &cfg.paths.immutable {
        Some(p) => ImmutableCorpus::load(p)?,
        None => ImmutableCorpus::bundled(),
    })
}

pub(crate) fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Other(format!("{what} {} does not exist; run the earlier stage first", path.display())))
    }
}

/// Everything a query needs: the model, its embedding, the corpus for
/// rendering, and the lexicons for preprocessing.
pub struct ServingModel {
    pub model: RecommenderModel,
    pub corpus: Corpus,
    pub lexicons: Lexicons,
    pub version: String,
}

impl ServingModel {
    pub fn load(cfg: &PipelineConfig) -> CliResult<ServingModel> {
        let (mp, ep, cp) = (cfg.model_path(), cfg.embedding_path(), cfg.processed_path());
        require(&mp, "model")?;
        require(&ep, "embedding")?;
        require(&cp, "processed corpus")?;
        let emb = Arc::new(EmbeddingModel::load(&ep)?);
        let model = RecommenderModel::load(&mp, Some(emb))?;
        let corpus = Corpus::load_json(&cp)?;
        if corpus.class_index() != model.class_index.as_slice() {
            return Err(CliError::Other("model classes do not match the processed corpus".into()));
        }
        let version = model.fingerprint()[..12].to_string();
        Ok(ServingModel {
            model,
            corpus,
            lexicons: load_lexicons(cfg)?,
            version,
        })
    }
}
