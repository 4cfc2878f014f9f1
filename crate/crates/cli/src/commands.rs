//! One function per pipeline stage. Each reads and writes only the files
//! named by the configuration or its flags.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use toolrec_core::adapters::{desk_adapter_dir, load_adapter_dir};
use toolrec_core::augment::{
    self, build_selection_sample, filter_corpus_by_selection, ingest_external_augmentations, load_examples, load_labels,
    load_sample, save_examples, save_sample, score_and_select, training_examples, AugTechnique,
};
use toolrec_core::cnn::{predict_topk, split_validation, train_recommender};
use toolrec_core::corpus::{cluster_apis, merge_corpora, preprocess_corpus, Corpus};
use toolrec_core::embedding::{train_embedding, EmbeddingConfig, EmbeddingModel};
use toolrec_core::eval::{
    bundled_category_map, run_ablation, run_category_eval, run_cross_validation, write_report, AblationFactor,
    AblationInputs, BaselineFactory, CnnFactory, CvConfig, ModelFactory,
};
use toolrec_core::hashing::derive_seed;
use toolrec_core::pipeline;
use toolrec_core::ranking::render;
use toolrec_core::textprep::{preprocess_query, TokenSequence};

use crate::config::PipelineConfig;
use crate::{load_immutable, load_lexicons, require, CliError, CliResult, ServingModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Cv,
    Category,
    Ablation,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read adapter descriptors into the raw corpus.
    Ingest {
        #[arg(long)]
        adapters: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tokenize descriptions and cluster identical ones per tool.
    Preprocess {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate one variant per class and technique, plus external rows.
    Augment {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Externally generated augmentation files (JSON lines).
        #[arg(long)]
        external: Vec<PathBuf>,
    },
    /// Sample classes per tool for manual labeling.
    SampleSelection {
        #[arg(long)]
        beta: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score techniques from labels and keep those above the mean.
    ScoreSelection {
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where the surviving augmented examples go.
        #[arg(long)]
        filtered: Option<PathBuf>,
    },
    /// Train the subword embedding on originals plus augmented examples.
    TrainEmbedding {
        #[arg(long)]
        augmented: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the CNN recommender on top of the embedding.
    Train {
        #[arg(long)]
        augmented: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate against the baseline, per query category, or by ablation.
    Eval {
        #[arg(long, value_enum, default_value = "cv")]
        protocol: Protocol,
        /// none, clustering, immutable-words, subword-embedding or drop:<technique>.
        #[arg(long, default_value = "none")]
        factor: String,
        #[arg(long)]
        augmented: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the top-k APIs for a free-form query.
    Query {
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Serve the /v1 HTTP endpoints.
    Serve {
        #[arg(long)]
        addr: Option<String>,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    artifacts: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    command: String,
    seed: u64,
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).map_err(|e| CliError::Other(format!("cannot create {}: {e}", p.display())))?;
    }
    Ok(())
}

/// Notes the seed and producing command of an artifact.
fn record(cfg: &PipelineConfig, artifact: &Path, command: &str) -> CliResult<()> {
    let path = cfg.manifest_path();
    ensure_parent(&path)?;
    let mut m: Manifest = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    m.artifacts.insert(
        artifact.display().to_string(),
        ManifestEntry {
            command: command.to_string(),
            seed: cfg.seed,
        },
    );
    let text = serde_json::to_string_pretty(&m).expect("plain struct");
    std::fs::write(&path, text).map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))
}

fn techniques(cfg: &PipelineConfig) -> CliResult<Vec<AugTechnique>> {
    if cfg.techniques.is_empty() {
        return Ok(pipeline::default_techniques());
    }
    cfg.techniques
        .iter()
        .map(|id| augment::technique(id).map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

fn load_processed(cfg: &PipelineConfig) -> CliResult<Corpus> {
    let p = cfg.processed_path();
    require(&p, "processed corpus")?;
    Ok(Corpus::load_json(&p)?)
}

fn load_augmented(path: &Path) -> CliResult<Vec<augment::AugmentedExample>> {
    require(path, "augmented set")?;
    Ok(load_examples(path)?)
}

fn training_sentences(corpus: &Corpus, augmented: &Path) -> CliResult<Vec<toolrec_core::cnn::Example>> {
    Ok(training_examples(corpus, &load_augmented(augmented)?)?)
}

pub fn run(cmd: Command, cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| CliError::Other(e.to_string()));
    match cmd {
        Command::Ingest { adapters, out: dest } => {
            let dir = adapters.or_else(|| cfg.paths.adapters.clone()).unwrap_or_else(desk_adapter_dir);
            let docs = load_adapter_dir(&dir)?;
            let (corpus, rejected) = merge_corpora(&docs)?;
            for r in &rejected {
                log::warn!("rejected {}/{} #{} {:?}: {}", r.tool_id, r.doc_id, r.position, r.signature, r.reason);
            }
            if corpus.records().is_empty() {
                return Err(CliError::Other(format!("no API records under {}", dir.display())));
            }
            let dest = dest.unwrap_or_else(|| cfg.corpus_path());
            ensure_parent(&dest)?;
            corpus.save_json(&dest)?;
            record(cfg, &dest, "ingest")?;
            w(out, format!("{} records from {} documents, {} rejected", corpus.records().len(), docs.len(), rejected.len()))
        }
        Command::Preprocess { input, out: dest } => {
            let input = input.unwrap_or_else(|| cfg.corpus_path());
            require(&input, "corpus")?;
            let lex = load_lexicons(cfg)?;
            let corpus = cluster_apis(&preprocess_corpus(&Corpus::load_json(&input)?, &lex))?;
            let dest = dest.unwrap_or_else(|| cfg.processed_path());
            ensure_parent(&dest)?;
            corpus.save_json(&dest)?;
            record(cfg, &dest, "preprocess")?;
            w(out, format!("{} records in {} classes", corpus.records().len(), corpus.num_classes()))
        }
        Command::Augment { input, out: dest, external } => {
            let input = input.unwrap_or_else(|| cfg.processed_path());
            require(&input, "processed corpus")?;
            let corpus = Corpus::load_json(&input)?;
            let lex = load_lexicons(cfg)?;
            let imm = load_immutable(cfg)?;
            let techs = techniques(cfg)?;
            let local: Vec<AugTechnique> = techs.iter().filter(|t| !t.is_external()).cloned().collect();
            let mut examples = pipeline::augment(&corpus, &local, &lex, &imm, &cfg.embedding, cfg.seed)?;
            let mut files = cfg.paths.external.clone();
            files.extend(external);
            for f in &files {
                let (ok, rejected) = ingest_external_augmentations(f, &corpus, &lex)?;
                for r in &rejected {
                    log::warn!("{}:{}: {}", f.display(), r.line, r.reason);
                }
                w(out, format!("{}: {} admitted, {} rejected", f.display(), ok.len(), rejected.len()))?;
                examples.extend(ok);
            }
            let dest = dest.unwrap_or_else(|| cfg.augmented_path());
            ensure_parent(&dest)?;
            save_examples(&examples, &dest)?;
            record(cfg, &dest, "augment")?;
            let degenerate = examples.iter().filter(|e| e.degenerate).count();
            w(out, format!("{} augmented examples ({degenerate} degenerate) over {} classes", examples.len(), corpus.num_classes()))
        }
        Command::SampleSelection { beta, out: dest } => {
            let corpus = load_processed(cfg)?;
            let examples = load_augmented(&cfg.augmented_path())?;
            let beta = beta.unwrap_or(cfg.selection.beta);
            let sample = build_selection_sample(&examples, &corpus, beta, derive_seed(cfg.seed, &["selection"]))?;
            let dest = dest.unwrap_or_else(|| cfg.sample_path());
            ensure_parent(&dest)?;
            save_sample(&sample, &dest)?;
            record(cfg, &dest, "sample-selection")?;
            w(
                out,
                format!(
                    "n={} beta={} alpha={}: {} rows to label, {} shown with originals",
                    sample.n,
                    sample.beta,
                    sample.alpha,
                    sample.rows.len(),
                    sample.displayed()
                ),
            )
        }
        Command::ScoreSelection { labels, out: dest, filtered } => {
            let sp = cfg.sample_path();
            require(&sp, "selection sample")?;
            let sample = load_sample(&sp)?;
            let lp = labels
                .or_else(|| cfg.paths.labels.clone())
                .ok_or_else(|| CliError::Config("no label file configured".into()))?;
            require(&lp, "label file")?;
            let report = score_and_select(&sample, &load_labels(&lp)?)?;
            let dest = dest.unwrap_or_else(|| cfg.selection_report_path());
            ensure_parent(&dest)?;
            report.save(&dest)?;
            record(cfg, &dest, "score-selection")?;
            for s in &report.scores {
                w(out, format!("{}\t{:.2}\t{}", s.technique, s.s_score, if s.selected { "selected" } else { "dropped" }))?;
            }
            w(out, format!("mean {:.2}; {} of {} selected", report.m_score, report.selected().len(), report.alpha))?;
            let kept = filter_corpus_by_selection(&load_augmented(&cfg.augmented_path())?, &report);
            let fp = filtered.unwrap_or_else(|| cfg.selected_path());
            ensure_parent(&fp)?;
            save_examples(&kept, &fp)?;
            record(cfg, &fp, "score-selection")?;
            w(out, format!("{} augmented examples kept", kept.len()))
        }
        Command::TrainEmbedding { augmented, out: dest } => {
            let corpus = load_processed(cfg)?;
            let train = training_sentences(&corpus, &augmented.unwrap_or_else(|| cfg.augmented_path()))?;
            let sentences: Vec<TokenSequence> = train.into_iter().map(|(t, _)| t).collect();
            let emb = train_embedding(&sentences, &cfg.embedding, derive_seed(cfg.seed, &["embedding"]))?;
            let dest = dest.unwrap_or_else(|| cfg.embedding_path());
            ensure_parent(&dest)?;
            emb.save(&dest)?;
            record(cfg, &dest, "train-embedding")?;
            w(out, format!("{} words, d={}, fingerprint {}", emb.vocab.len(), emb.dim(), emb.fingerprint()))
        }
        Command::Train { augmented, out: dest } => {
            let corpus = load_processed(cfg)?;
            let train = training_sentences(&corpus, &augmented.unwrap_or_else(|| cfg.augmented_path()))?;
            let ep = cfg.embedding_path();
            require(&ep, "embedding")?;
            let emb = Arc::new(EmbeddingModel::load(&ep)?);
            let (tr, val) = split_validation(&train, cfg.cnn.val_fraction, derive_seed(cfg.seed, &["validation"]));
            let model = train_recommender(&tr, &val, emb, corpus.class_index().to_vec(), &cfg.cnn, derive_seed(cfg.seed, &["cnn"]))?;
            let dest = dest.unwrap_or_else(|| cfg.model_path());
            ensure_parent(&dest)?;
            model.save(&dest)?;
            record(cfg, &dest, "train")?;
            let s = &model.summary;
            w(
                out,
                format!(
                    "{} classes, {} epochs (best {} at val accuracy {:.3}), fingerprint {}",
                    model.num_classes(),
                    s.epochs_run,
                    s.best_epoch,
                    s.best_val_accuracy,
                    model.fingerprint()
                ),
            )
        }
        Command::Eval { protocol, factor, augmented, out: dest } => {
            let corpus = load_processed(cfg)?;
            let stem = dest.unwrap_or_else(|| cfg.report_stem());
            ensure_parent(&stem)?;
            let cnn = CnnFactory {
                embedding: cfg.embedding.clone(),
                cnn: cfg.cnn.clone(),
            };
            match protocol {
                Protocol::Cv => {
                    let examples = load_augmented(&augmented.unwrap_or_else(|| cfg.augmented_path()))?;
                    let base = BaselineFactory {
                        embedding: EmbeddingConfig {
                            subwords: false,
                            ..cfg.embedding.clone()
                        },
                    };
                    let systems: [&dyn ModelFactory; 2] = [&cnn, &base];
                    let cv = CvConfig {
                        folds: cfg.eval.folds,
                        repeats: cfg.eval.repeats,
                        k: cfg.eval.k,
                        seed: cfg.seed,
                    };
                    let report = run_cross_validation(&corpus, &examples, &systems, &cv)?;
                    write_report(&report.rows, &stem)?;
                    for r in report.rows.iter().filter(|r| r.metric != "latency_p50_ms") {
                        w(out, format!("{}\t{}\t{}\t{:.4}\t{:.4}", r.system, r.metric, r.k, r.value, r.stddev))?;
                    }
                }
                Protocol::Category => {
                    let examples = load_augmented(&augmented.unwrap_or_else(|| cfg.augmented_path()))?;
                    let report = run_category_eval(&corpus, &examples, &bundled_category_map(), &cnn, cfg.eval.k, cfg.seed)?;
                    let path = stem.with_extension("categories.json");
                    let text = serde_json::to_string_pretty(&report).expect("plain struct");
                    std::fs::write(&path, text).map_err(|e| CliError::Other(e.to_string()))?;
                    for c in &report.categories {
                        let acc: Vec<String> = c.topk_acc.iter().map(|a| format!("{a:.2}")).collect();
                        let note = if c.reduced_coverage { " (reduced coverage)" } else { "" };
                        w(out, format!("{}\t{}\t{}{note}", c.category, c.groups.len(), acc.join("\t")))?;
                    }
                }
                Protocol::Ablation => {
                    let factor: AblationFactor = factor.parse().map_err(|e: toolrec_core::Error| CliError::Config(e.to_string()))?;
                    let lex = load_lexicons(cfg)?;
                    let imm = load_immutable(cfg)?;
                    let techs: Vec<AugTechnique> = techniques(cfg)?.into_iter().filter(|t| !t.is_external()).collect();
                    let inp = AblationInputs {
                        corpus: &corpus,
                        lexicons: &lex,
                        immutable: &imm,
                        techniques: &techs,
                        embedding: cfg.embedding.clone(),
                        cnn: cfg.cnn.clone(),
                        k: cfg.eval.k,
                        seed: cfg.seed,
                    };
                    let r = run_ablation(&inp, &factor)?;
                    let path = stem.with_extension("ablation.json");
                    let text = serde_json::to_string_pretty(&r).expect("plain struct");
                    std::fs::write(&path, text).map_err(|e| CliError::Other(e.to_string()))?;
                    for k in 1..=cfg.eval.k {
                        w(out, format!("top-{k}\tfull {:.2}\tablated {:.2}\tgain {:.2}%", r.full.top(k), r.ablated.top(k), r.topk_gain[k - 1]))?;
                    }
                    w(out, format!("mrr\tfull {:.4}\tablated {:.4}\tgain {:.2}%", r.full.mrr_at_k, r.ablated.mrr_at_k, r.mrr_gain))?;
                }
            }
            Ok(())
        }
        Command::Query { text, k } => {
            let serving = ServingModel::load(cfg)?;
            let tokens = preprocess_query(&text, &serving.lexicons);
            let mut results = predict_topk(&serving.model, &tokens, k)?;
            render(&mut results, &serving.corpus);
            w(out, "rank\tscore\ttool\tapi\tdescription".into())?;
            for r in results {
                let api = r.api.expect("rendered");
                w(out, format!("{}\t{:.4}\t{}\t{}\t{}", r.rank, r.score, api.tool, api.signatures.join(" | "), api.description))?;
            }
            Ok(())
        }
        Command::Serve { addr } => {
            let addr = addr.unwrap_or_else(|| cfg.serve.addr.clone());
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
            rt.block_on(crate::server::serve(cfg.clone(), &addr))
        }
    }
}
