//! End-to-end helpers chaining ingestion, preprocessing, augmentation and
//! training with per-stage seeds.

use std::path::Path;
use std::sync::Arc;

use crate::adapters::{desk_adapter_dir, load_adapter_dir};
use crate::augment::{augment_corpus, in_process_techniques, training_examples, AugTechnique, AugmentResources, AugmentedExample};
use crate::cnn::{split_validation, train_recommender, CnnConfig, Example, RecommenderModel};
use crate::corpus::{cluster_apis, merge_corpora, preprocess_corpus, Corpus};
use crate::embedding::{train_embedding, EmbeddingConfig, EmbeddingModel};
use crate::error::Result;
use crate::hashing::derive_seed;
use crate::textprep::{ImmutableCorpus, Lexicons, TokenSequence};

/// Ingest, preprocess and cluster every document behind an adapter directory.
pub fn load_corpus(adapter_dir: &Path, lex: &Lexicons) -> Result<Corpus> {
    let docs = load_adapter_dir(adapter_dir)?;
    let (merged, rejected) = merge_corpora(&docs)?;
    for r in &rejected {
        log::warn!("rejected {}/{} #{}: {}", r.tool_id, r.doc_id, r.position, r.reason);
    }
    cluster_apis(&preprocess_corpus(&merged, lex))
}

pub fn desk_corpus(lex: &Lexicons) -> Result<Corpus> {
    load_corpus(&desk_adapter_dir(), lex)
}

/// In-process techniques minus TF-IDF insertion, which injects other tools'
/// names into descriptions.
pub fn default_techniques() -> Vec<AugTechnique> {
    in_process_techniques().into_iter().filter(|t| t.id != "dat07_tfidf_ins").collect()
}

/// Leaner CNN settings for the desk corpus; architecture unchanged.
pub fn desk_cnn_config() -> CnnConfig {
    CnnConfig {
        filters: 32,
        hidden: 64,
        patience: 10,
        max_epochs: 200,
        ..CnnConfig::default()
    }
}

/// Embedding over the original class descriptions only, used as the
/// neighbor source for embedding-neighbor augmentation.
pub fn neighbor_embedding(corpus: &Corpus, cfg: &EmbeddingConfig, seed: u64) -> Result<EmbeddingModel> {
    let docs: Vec<TokenSequence> = (0..corpus.num_classes()).map(|c| corpus.class_tokens(c).clone()).collect();
    train_embedding(&docs, cfg, derive_seed(seed, &["neighbor-embedding"]))
}

pub fn augment(
    corpus: &Corpus,
    techniques: &[AugTechnique],
    lex: &Lexicons,
    immutable: &ImmutableCorpus,
    emb_cfg: &EmbeddingConfig,
    seed: u64,
) -> Result<Vec<AugmentedExample>> {
    let neighbor = if techniques.iter().any(|t| t.approach == crate::augment::Approach::EmbeddingNeighbor) {
        Some(neighbor_embedding(corpus, emb_cfg, seed)?)
    } else {
        None
    };
    let res = AugmentResources {
        lexicons: lex,
        immutable,
        embedding: neighbor.as_ref(),
    };
    augment_corpus(corpus, techniques, &res, derive_seed(seed, &["augment"]))
}

/// Embedding trained on the training descriptions, then the CNN.
pub fn train_system(
    class_index: &[String],
    train: &[Example],
    emb_cfg: &EmbeddingConfig,
    cnn_cfg: &CnnConfig,
    seed: u64,
) -> Result<RecommenderModel> {
    let sentences: Vec<TokenSequence> = train.iter().map(|(t, _)| t.clone()).collect();
    let emb = Arc::new(train_embedding(&sentences, emb_cfg, derive_seed(seed, &["embedding"]))?);
    let (tr, val) = split_validation(train, cnn_cfg.val_fraction, derive_seed(seed, &["validation"]));
    train_recommender(&tr, &val, emb, class_index.to_vec(), cnn_cfg, derive_seed(seed, &["cnn"]))
}

/// Corpus → augmentation → embedding → CNN, all from one seed.
pub fn train_full(
    corpus: &Corpus,
    techniques: &[AugTechnique],
    lex: &Lexicons,
    immutable: &ImmutableCorpus,
    emb_cfg: &EmbeddingConfig,
    cnn_cfg: &CnnConfig,
    seed: u64,
) -> Result<(Vec<AugmentedExample>, RecommenderModel)> {
    let examples = augment(corpus, techniques, lex, immutable, emb_cfg, seed)?;
    let train = training_examples(corpus, &examples)?;
    let model = train_system(corpus.class_index(), &train, emb_cfg, cnn_cfg, seed)?;
    Ok((examples, model))
}
