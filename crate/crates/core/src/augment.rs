//! Augmentation techniques, external augmentation ingestion, and the
//! sample/label/score workflow that decides which techniques survive.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnn::Example;
use crate::corpus::Corpus;
use crate::embedding::{EmbeddingModel, NeighborIndex};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::textprep::{preprocess_text, ImmutableCorpus, Lexicons, TokenSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    RandomWord,
    Spelling,
    Split,
    Synonym,
    Tfidf,
    EmbeddingNeighbor,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Swap,
    Delete,
    Substitute,
    Insert,
    Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TechniqueParams {
    /// Fraction of mutable tokens acted on, at least one.
    pub intensity: f64,
    /// Neighbor pool size for embedding substitution.
    pub top_n: usize,
    /// Lexicon name for synonym techniques, source tag for external ones.
    pub source: Option<String>,
}

impl Default for TechniqueParams {
    fn default() -> Self {
        TechniqueParams {
            intensity: 0.3,
            top_n: 10,
            source: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugTechnique {
    pub id: String,
    pub approach: Approach,
    pub action: Action,
    pub params: TechniqueParams,
}

impl AugTechnique {
    fn new(id: &str, approach: Approach, action: Action, source: Option<&str>) -> Self {
        AugTechnique {
            id: id.to_string(),
            approach,
            action,
            params: TechniqueParams {
                source: source.map(str::to_string),
                ..TechniqueParams::default()
            },
        }
    }

    pub fn is_external(&self) -> bool {
        self.approach == Approach::External
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.params.intensity;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Invalid(format!("{}: intensity {p} outside (0, 1]", self.id)));
        }
        if self.is_external() && self.params.source.is_none() {
            return Err(Error::Invalid(format!("{}: external technique needs a source tag", self.id)));
        }
        if self.approach == Approach::EmbeddingNeighbor && self.params.top_n == 0 {
            return Err(Error::Invalid(format!("{}: top_n must be positive", self.id)));
        }
        Ok(())
    }
}

/// Pretrained-vector and contextual families, generated outside and ingested.
const EXTERNAL: [(&str, &str); 28] = [
    ("dat09_word2vec_googlenews_ins", "word2vec-googlenews"),
    ("dat10_word2vec_googlenews_subs", "word2vec-googlenews"),
    ("dat11_fasttext_wikinews_ins", "fasttext-wikinews"),
    ("dat12_fasttext_wikinews_subs", "fasttext-wikinews"),
    ("dat13_fasttext_wikinews_sword_ins", "fasttext-wikinews-subword"),
    ("dat14_fasttext_wikinews_sword_subs", "fasttext-wikinews-subword"),
    ("dat15_fasttext_ccrawl_ins", "fasttext-ccrawl"),
    ("dat16_fasttext_ccrawl_subs", "fasttext-ccrawl"),
    ("dat17_fasttext_ccrawl_sword_ins", "fasttext-ccrawl-subword"),
    ("dat18_fasttext_ccrawl_sword_subs", "fasttext-ccrawl-subword"),
    ("dat19_fasttext_ccrawl_wiki_ins", "fasttext-ccrawl-wiki"),
    ("dat20_fasttext_ccrawl_wiki_subs", "fasttext-ccrawl-wiki"),
    ("dat21_glove_wiki_gword_50d_ins", "glove-wiki-gigaword-50d"),
    ("dat22_glove_wiki_gword_50d_subs", "glove-wiki-gigaword-50d"),
    ("dat23_glove_wiki_gword_300d_ins", "glove-wiki-gigaword-300d"),
    ("dat24_glove_wiki_gword_300d_subs", "glove-wiki-gigaword-300d"),
    ("dat25_glove_ccrawl_300d_ins", "glove-ccrawl-300d"),
    ("dat26_glove_ccrawl_300d_subs", "glove-ccrawl-300d"),
    ("dat27_glove_twitter_200d_ins", "glove-twitter-200d"),
    ("dat28_glove_twitter_200d_subs", "glove-twitter-200d"),
    ("dat29_bert_ins", "bert-base-uncased"),
    ("dat30_bert_subs", "bert-base-uncased"),
    ("dat31_distilbert_ins", "distilbert-base-uncased"),
    ("dat32_distilbert_subs", "distilbert-base-uncased"),
    ("dat33_roberta_ins", "roberta-base"),
    ("dat34_roberta_subs", "roberta-base"),
    ("dat35_distilroberta_ins", "distilroberta-base"),
    ("dat36_distilroberta_subs", "distilroberta-base"),
];

/// Every known technique: the 36 numbered ones plus the self-trained
/// embedding-neighbor substitution.
pub fn registry() -> Vec<AugTechnique> {
    use Action::*;
    use Approach::*;
    let mut v = vec![
        AugTechnique::new("dat01_swap", RandomWord, Swap, None),
        AugTechnique::new("dat02_delete", RandomWord, Delete, None),
        AugTechnique::new("dat03_spelling", Spelling, Substitute, Some("misspellings")),
        AugTechnique::new("dat04_split", Approach::Split, Action::Split, None),
        AugTechnique::new("dat05_wordnet_subs", Synonym, Substitute, Some("thesaurus")),
        AugTechnique::new("dat06_ppdb_subs", Synonym, Substitute, Some("paraphrases")),
        AugTechnique::new("dat07_tfidf_ins", Tfidf, Insert, None),
        AugTechnique::new("dat08_tfidf_subs", Tfidf, Substitute, None),
    ];
    for (id, source) in EXTERNAL {
        let action = if id.ends_with("_ins") { Insert } else { Substitute };
        v.push(AugTechnique::new(id, External, action, Some(source)));
    }
    v.push(AugTechnique::new("emb_neighbor_subs", EmbeddingNeighbor, Substitute, None));
    v
}

/// The techniques that run in-process.
pub fn in_process_techniques() -> Vec<AugTechnique> {
    registry().into_iter().filter(|t| !t.is_external()).collect()
}

pub fn technique(id: &str) -> Result<AugTechnique> {
    registry()
        .into_iter()
        .find(|t| t.id == id)
        .ok_or_else(|| Error::UnknownTechnique(id.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedExample {
    /// "{technique}:{base_record_id}".
    pub example_id: String,
    pub base_record_id: String,
    pub technique_id: String,
    pub tokens: TokenSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_label: Option<u8>,
    /// The original tokens, emitted because no valid variant exists.
    #[serde(default)]
    pub degenerate: bool,
}

pub struct AugmentResources<'a> {
    pub lexicons: &'a Lexicons,
    pub immutable: &'a ImmutableCorpus,
    /// Required by embedding-neighbor techniques.
    pub embedding: Option<&'a EmbeddingModel>,
}

const MAX_ATTEMPTS: usize = 10;

/// Document frequencies and token counts over class descriptions.
struct TfidfStats {
    ndocs: f64,
    df: HashMap<String, usize>,
    /// Replacement pool, vocabulary order, with corpus counts.
    pool: Vec<(String, u64)>,
}

impl TfidfStats {
    fn new(corpus: &Corpus, immutable: &ImmutableCorpus) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for c in 0..corpus.num_classes() {
            let toks = corpus.class_tokens(c);
            let uniq: BTreeSet<&String> = toks.iter().collect();
            for t in uniq {
                *df.entry(t.clone()).or_default() += 1;
            }
            for t in toks {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        let pool = counts.into_iter().filter(|(w, _)| !immutable.contains(w)).collect();
        TfidfStats {
            ndocs: corpus.num_classes() as f64,
            df,
            pool,
        }
    }

    fn tfidf(&self, tokens: &[String], i: usize) -> f64 {
        let tf = tokens.iter().filter(|t| **t == tokens[i]).count() as f64 / tokens.len() as f64;
        let df = self.df.get(&tokens[i]).copied().unwrap_or(1).max(1) as f64;
        tf * (self.ndocs / df).ln()
    }

    fn draw(&self, rng: &mut ChaCha8Rng, exclude: &str) -> Option<String> {
        let cands: Vec<&(String, u64)> = self.pool.iter().filter(|(w, _)| w != exclude).collect();
        cands.choose_weighted(rng, |(_, c)| *c as f64).ok().map(|(w, _)| w.clone())
    }
}

struct Augmenter<'a> {
    res: &'a AugmentResources<'a>,
    tfidf: TfidfStats,
    neighbors: Option<NeighborIndex<'a>>,
}

fn acted_on(intensity: f64, mutable: usize) -> usize {
    ((intensity * mutable as f64).floor() as usize).max(1)
}

fn pick<T: Clone>(rng: &mut ChaCha8Rng, items: &[T], amount: usize) -> Vec<T> {
    let mut idx = index::sample(rng, items.len(), amount.min(items.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

impl<'a> Augmenter<'a> {
    fn new(corpus: &Corpus, techniques: &[AugTechnique], res: &'a AugmentResources<'a>) -> Result<Self> {
        let lex = res.lexicons;
        let mut needs_neighbors = false;
        for t in techniques {
            t.validate()?;
            match t.approach {
                Approach::External => {
                    return Err(Error::Invalid(format!(
                        "{} is an external technique; ingest its output instead",
                        t.id
                    )))
                }
                Approach::Spelling if lex.misspellings.is_empty() => {
                    return Err(Error::MissingLexicon("misspellings", t.id.clone()))
                }
                Approach::Synonym => {
                    let (name, table) = match t.params.source.as_deref() {
                        Some("paraphrases") => ("paraphrases", &lex.paraphrases),
                        _ => ("thesaurus", &lex.thesaurus),
                    };
                    if table.is_empty() {
                        return Err(Error::MissingLexicon(name, t.id.clone()));
                    }
                }
                Approach::EmbeddingNeighbor => {
                    if res.embedding.is_none() {
                        return Err(Error::MissingLexicon("embedding model", t.id.clone()));
                    }
                    needs_neighbors = true;
                }
                _ => {}
            }
        }
        Ok(Augmenter {
            res,
            tfidf: TfidfStats::new(corpus, res.immutable),
            neighbors: if needs_neighbors { res.embedding.map(NeighborIndex::new) } else { None },
        })
    }

    fn synonyms(&self, t: &AugTechnique) -> &BTreeMap<String, Vec<String>> {
        match t.params.source.as_deref() {
            Some("paraphrases") => &self.res.lexicons.paraphrases,
            Some("misspellings") => &self.res.lexicons.misspellings,
            _ => &self.res.lexicons.thesaurus,
        }
    }

    /// One raw attempt; None when the technique has nothing to act on.
    fn attempt(&self, t: &AugTechnique, tokens: &[String], rng: &mut ChaCha8Rng) -> Option<Vec<String>> {
        let imm = self.res.immutable;
        let mutable: Vec<usize> = (0..tokens.len()).filter(|&i| !imm.contains(&tokens[i])).collect();
        if mutable.is_empty() {
            return None;
        }
        let n = acted_on(t.params.intensity, mutable.len());
        let mut out = tokens.to_vec();
        match (t.approach, t.action) {
            (Approach::RandomWord, Action::Swap) => {
                if mutable.len() < 2 {
                    return None;
                }
                for _ in 0..n {
                    let a = rng.random_range(0..mutable.len() - 1);
                    out.swap(mutable[a], mutable[a + 1]);
                }
            }
            (Approach::RandomWord, Action::Delete) => {
                let n = n.min(tokens.len() - 1);
                if n == 0 {
                    return None;
                }
                let gone: BTreeSet<usize> = pick(rng, &mutable, n).into_iter().collect();
                out = (0..tokens.len()).filter(|i| !gone.contains(i)).map(|i| tokens[i].clone()).collect();
            }
            (Approach::Split, _) => {
                let ok: Vec<usize> = mutable.iter().copied().filter(|&i| tokens[i].chars().count() >= 4).collect();
                if ok.is_empty() {
                    return None;
                }
                let chosen = pick(rng, &ok, n);
                for &i in chosen.iter().rev() {
                    let chars: Vec<char> = tokens[i].chars().collect();
                    let at = rng.random_range(1..chars.len());
                    let left: String = chars[..at].iter().collect();
                    let right: String = chars[at..].iter().collect();
                    out.splice(i..=i, [left, right]);
                }
            }
            (Approach::Spelling | Approach::Synonym, _) => {
                let table = self.synonyms(t);
                let ok: Vec<usize> = mutable.iter().copied().filter(|&i| table.contains_key(&tokens[i])).collect();
                if ok.is_empty() {
                    return None;
                }
                for i in pick(rng, &ok, n) {
                    let alts = &table[&tokens[i]];
                    out[i] = alts.choose(rng)?.clone();
                }
            }
            (Approach::Tfidf, action) => {
                let scores: Vec<f64> = mutable.iter().map(|&i| self.tfidf.tfidf(tokens, i)).collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = scores.iter().map(|s| max - s).collect();
                let mut chosen: Vec<usize> = if weights.iter().all(|&w| w <= 0.0) {
                    pick(rng, &mutable, n)
                } else {
                    index::sample_weighted(rng, mutable.len(), |k| weights[k], n)
                        .ok()?
                        .into_iter()
                        .map(|k| mutable[k])
                        .collect()
                };
                chosen.sort_unstable();
                if action == Action::Insert {
                    for _ in 0..chosen.len() {
                        let w = self.tfidf.draw(rng, "")?;
                        let gap = rng.random_range(0..=out.len());
                        out.insert(gap, w);
                    }
                } else {
                    for i in chosen {
                        out[i] = self.tfidf.draw(rng, &tokens[i])?;
                    }
                }
            }
            (Approach::EmbeddingNeighbor, _) => {
                let idx = self.neighbors.as_ref()?;
                let mut done = 0;
                for i in pick(rng, &mutable, mutable.len()) {
                    if done == n {
                        break;
                    }
                    let pool: Vec<String> = idx
                        .neighbors(&tokens[i], t.params.top_n + 1)
                        .into_iter()
                        .map(|(w, _)| w)
                        .filter(|w| *w != tokens[i] && !imm.contains(w))
                        .take(t.params.top_n)
                        .collect();
                    if let Some(w) = pool.choose(rng) {
                        out[i] = w.clone();
                        done += 1;
                    }
                }
                if done == 0 {
                    return None;
                }
            }
            _ => return None,
        }
        Some(out)
    }

    /// A post-processed variant that preserves the immutable multiset, or
    /// None after the retry budget.
    fn variant(&self, t: &AugTechnique, tokens: &TokenSequence, seed: u64) -> Option<TokenSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let want = self.res.immutable.occurrences(tokens.tokens());
        for _ in 0..MAX_ATTEMPTS {
            let raw = self.attempt(t, tokens.tokens(), &mut rng)?;
            let out = preprocess_text(&raw.join(" "), self.res.lexicons);
            if !out.is_empty() && self.res.immutable.occurrences(out.tokens()) == want {
                return Some(out);
            }
        }
        None
    }
}

/// One variant per (class description, technique), classes in class order.
/// Classes with nothing to act on yield their original tokens flagged
/// degenerate, so the output length is always classes x techniques.
pub fn augment_corpus(
    corpus: &Corpus,
    techniques: &[AugTechnique],
    resources: &AugmentResources<'_>,
    seed: u64,
) -> Result<Vec<AugmentedExample>> {
    if techniques.is_empty() {
        return Ok(Vec::new());
    }
    if !corpus.is_clustered() {
        return Err(Error::Invalid("augmentation needs a clustered corpus".into()));
    }
    let aug = Augmenter::new(corpus, techniques, resources)?;
    let mut out = Vec::with_capacity(corpus.num_classes() * techniques.len());
    for c in 0..corpus.num_classes() {
        let tokens = corpus.class_tokens(c);
        let rep = &corpus.class_representative(c).record_id;
        let cluster = &corpus.class_index()[c];
        for t in techniques {
            let s = derive_seed(seed, &[cluster, &t.id]);
            let (tokens, degenerate) = match aug.variant(t, tokens, s) {
                Some(v) => (v, false),
                None => (tokens.clone(), true),
            };
            out.push(AugmentedExample {
                example_id: format!("{}:{rep}", t.id),
                base_record_id: rep.clone(),
                technique_id: t.id.clone(),
                tokens,
                selection_label: None,
                degenerate,
            });
        }
    }
    let degenerate = out.iter().filter(|e| e.degenerate).count();
    if degenerate > 0 {
        log::info!("{degenerate} of {} augmented examples are degenerate", out.len());
    }
    Ok(out)
}

/// A row of an externally generated augmentation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalRow {
    pub technique: String,
    pub record_id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line in the input file.
    pub line: usize,
    pub reason: String,
}

/// Admits external rows after running their text through preprocessing.
/// A class takes at most one variant per technique.
pub fn admit_external(
    rows: impl IntoIterator<Item = (usize, ExternalRow)>,
    corpus: &Corpus,
    lex: &Lexicons,
) -> (Vec<AugmentedExample>, Vec<RejectedRow>) {
    let known: BTreeMap<String, AugTechnique> = registry().into_iter().map(|t| (t.id.clone(), t)).collect();
    let mut seen: BTreeSet<(String, usize)> = BTreeSet::new();
    let mut ok = Vec::new();
    let mut rejected = Vec::new();
    for (line, row) in rows {
        let reject = |reason: String| RejectedRow { line, reason };
        match known.get(&row.technique) {
            Some(t) if t.is_external() => {}
            Some(_) => {
                rejected.push(reject(format!("{} runs in-process", row.technique)));
                continue;
            }
            None => {
                rejected.push(reject(format!("unknown technique {}", row.technique)));
                continue;
            }
        }
        let Some(class) = corpus.class_of_record(&row.record_id) else {
            rejected.push(reject(format!("unknown record {}", row.record_id)));
            continue;
        };
        let tokens = preprocess_text(&row.text, lex);
        if tokens.is_empty() {
            rejected.push(reject("text is empty after preprocessing".into()));
            continue;
        }
        if !seen.insert((row.technique.clone(), class)) {
            rejected.push(reject(format!("second {} variant for class {}", row.technique, corpus.class_index()[class])));
            continue;
        }
        ok.push(AugmentedExample {
            example_id: format!("{}:{}", row.technique, row.record_id),
            base_record_id: row.record_id,
            technique_id: row.technique,
            tokens,
            selection_label: None,
            degenerate: false,
        });
    }
    (ok, rejected)
}

pub fn ingest_external_augmentations(
    path: &Path,
    corpus: &Corpus,
    lex: &Lexicons,
) -> Result<(Vec<AugmentedExample>, Vec<RejectedRow>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ExternalRow>(&line) {
            Ok(r) => rows.push((i + 1, r)),
            Err(e) => bad.push(RejectedRow {
                line: i + 1,
                reason: format!("malformed row: {e}"),
            }),
        }
    }
    let (ok, mut rejected) = admit_external(rows, corpus, lex);
    rejected.extend(bad);
    rejected.sort_by_key(|r| r.line);
    Ok((ok, rejected))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for r in rows {
        let line = serde_json::to_string(&r).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn save_examples(examples: &[AugmentedExample], path: &Path) -> Result<()> {
    write_jsonl(path, examples)
}

pub fn load_examples(path: &Path) -> Result<Vec<AugmentedExample>> {
    read_jsonl(path)
}

/// Originals first, one per class, then every augmented example under its
/// base class.
pub fn training_examples(corpus: &Corpus, examples: &[AugmentedExample]) -> Result<Vec<Example>> {
    let mut out: Vec<Example> = (0..corpus.num_classes()).map(|c| (corpus.class_tokens(c).clone(), c)).collect();
    for e in examples {
        let c = corpus
            .class_of_record(&e.base_record_id)
            .ok_or_else(|| Error::Invalid(format!("{}: unknown base record", e.example_id)))?;
        out.push((e.tokens.clone(), c));
    }
    Ok(out)
}

/// One augmented row shown to annotators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub technique: String,
    pub record_id: String,
    pub tool: String,
    pub original: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSample {
    pub n: usize,
    pub beta: usize,
    pub alpha: usize,
    pub rows: Vec<SampleRow>,
    /// Record ids of the sampled originals, shown for context.
    pub originals: Vec<String>,
}

impl SelectionSample {
    /// Rows an annotator sees, originals included.
    pub fn displayed(&self) -> usize {
        self.rows.len() + self.originals.len()
    }
}

/// Samples `beta` classes per tool and takes every variant of each.
pub fn build_selection_sample(
    examples: &[AugmentedExample],
    corpus: &Corpus,
    beta: usize,
    seed: u64,
) -> Result<SelectionSample> {
    let techniques: BTreeSet<&str> = examples.iter().map(|e| e.technique_id.as_str()).collect();
    let tools = corpus.tools();
    let mut by_class: BTreeMap<usize, Vec<&AugmentedExample>> = BTreeMap::new();
    for e in examples {
        let c = corpus
            .class_of_record(&e.base_record_id)
            .ok_or_else(|| Error::Invalid(format!("{}: unknown base record", e.example_id)))?;
        by_class.entry(c).or_default().push(e);
    }
    let mut rows = Vec::new();
    let mut originals = Vec::new();
    for tool in &tools {
        let classes = corpus.classes_of_tool(tool);
        if beta > classes.len() {
            return Err(Error::Invalid(format!(
                "beta {beta} exceeds the {} classes of {tool}",
                classes.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["selection-sample", tool]));
        for c in pick(&mut rng, &classes, beta) {
            let rep = corpus.class_representative(c);
            originals.push(rep.record_id.clone());
            let mut ex = by_class.get(&c).cloned().unwrap_or_default();
            ex.sort_by(|a, b| a.technique_id.cmp(&b.technique_id));
            for e in ex {
                rows.push(SampleRow {
                    technique: e.technique_id.clone(),
                    record_id: e.base_record_id.clone(),
                    tool: tool.clone(),
                    original: corpus.class_tokens(c).join(),
                    text: e.tokens.join(),
                });
            }
        }
    }
    Ok(SelectionSample {
        n: tools.len(),
        beta,
        alpha: techniques.len(),
        rows,
        originals,
    })
}

/// An annotator's verdict on one sampled row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub technique: String,
    pub record_id: String,
    pub s_v: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TechniqueScore {
    pub technique: String,
    pub s_score: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub m_score: f64,
    pub n: usize,
    pub beta: usize,
    pub alpha: usize,
    pub scores: Vec<TechniqueScore>,
}

#[derive(Serialize, Deserialize)]
struct ReportHeader {
    m_score: f64,
    n: usize,
    beta: usize,
    alpha: usize,
}

impl SelectionReport {
    pub fn selected(&self) -> BTreeSet<String> {
        self.scores.iter().filter(|s| s.selected).map(|s| s.technique.clone()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_value(ReportHeader {
            m_score: self.m_score,
            n: self.n,
            beta: self.beta,
            alpha: self.alpha,
        })
        .map_err(|e| Error::Invalid(e.to_string()))?;
        let rows = self.scores.iter().map(|s| serde_json::to_value(s).expect("plain struct"));
        write_jsonl(path, std::iter::once(header).chain(rows))
    }

    pub fn load(path: &Path) -> Result<SelectionReport> {
        let mut lines: Vec<serde_json::Value> = read_jsonl(path)?;
        if lines.is_empty() {
            return Err(Error::Empty("selection report"));
        }
        let bad = |e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        };
        let h: ReportHeader = serde_json::from_value(lines.remove(0)).map_err(bad)?;
        let scores = lines
            .into_iter()
            .map(serde_json::from_value)
            .collect::<std::result::Result<Vec<TechniqueScore>, _>>()
            .map_err(bad)?;
        Ok(SelectionReport {
            m_score: h.m_score,
            n: h.n,
            beta: h.beta,
            alpha: h.alpha,
            scores,
        })
    }
}

/// Scores from per-technique positive counts, each out of n x beta.
/// Selection compares integers, so a score exactly at the mean is never
/// selected because of rounding.
pub fn selection_scores(positives: &BTreeMap<String, usize>, n: usize, beta: usize) -> Result<SelectionReport> {
    let per = n * beta;
    if per == 0 || positives.is_empty() {
        return Err(Error::Empty("selection sample"));
    }
    if let Some((t, &c)) = positives.iter().find(|(_, &c)| c > per) {
        return Err(Error::Invalid(format!("{t}: {c} positives out of {per}")));
    }
    let alpha = positives.len();
    let total: usize = positives.values().sum();
    let scores = positives
        .iter()
        .map(|(t, &c)| TechniqueScore {
            technique: t.clone(),
            s_score: c as f64 / per as f64 * 100.0,
            selected: c * alpha > total,
        })
        .collect();
    Ok(SelectionReport {
        m_score: total as f64 / (alpha * per) as f64 * 100.0,
        n,
        beta,
        alpha,
        scores,
    })
}

/// Matches labels to sample rows and scores every sampled technique.
pub fn score_and_select(sample: &SelectionSample, labels: &[LabelRow]) -> Result<SelectionReport> {
    let mut got: BTreeMap<(&str, &str), u8> = BTreeMap::new();
    for l in labels {
        if l.s_v > 1 {
            return Err(Error::Invalid(format!("label {} for {}:{} is not 0 or 1", l.s_v, l.technique, l.record_id)));
        }
        got.insert((&l.technique, &l.record_id), l.s_v);
    }
    let mut positives: BTreeMap<String, usize> = BTreeMap::new();
    let mut missing = Vec::new();
    for r in &sample.rows {
        let p = positives.entry(r.technique.clone()).or_default();
        match got.get(&(r.technique.as_str(), r.record_id.as_str())) {
            Some(&v) => *p += v as usize,
            None => missing.push(format!("{}:{}", r.technique, r.record_id)),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing.join(", ")));
    }
    selection_scores(&positives, sample.n, sample.beta)
}

pub fn filter_corpus_by_selection(examples: &[AugmentedExample], report: &SelectionReport) -> Vec<AugmentedExample> {
    let keep = report.selected();
    examples.iter().filter(|e| keep.contains(&e.technique_id)).cloned().collect()
}

pub fn save_sample(sample: &SelectionSample, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(sample).map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_sample(path: &Path) -> Result<SelectionSample> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelRow>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{cluster_apis, merge_corpora, preprocess_corpus, FormatKind, RawEntry, SourceDocument};

    fn doc(tool: &str, descs: &[&str]) -> SourceDocument {
        SourceDocument {
            tool_id: tool.into(),
            doc_id: "d".into(),
            format_kind: FormatKind::StructuredCodeApi,
            entries: descs
                .iter()
                .enumerate()
                .map(|(i, d)| RawEntry {
                    signature: format!("{tool}.f{i}()"),
                    description: Some(d.to_string()),
                    parameters: None,
                    returns: None,
                })
                .collect(),
        }
    }

    fn corpus(docs: &[SourceDocument]) -> Corpus {
        let (c, _) = merge_corpora(docs).unwrap();
        cluster_apis(&preprocess_corpus(&c, &Lexicons::bundled())).unwrap()
    }

    fn imm(words: &[&str]) -> ImmutableCorpus {
        ImmutableCorpus {
            words: words.iter().map(|w| w.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn registry_has_every_numbered_technique() {
        let r = registry();
        assert_eq!(r.len(), 37);
        for i in 1..=36 {
            assert!(r.iter().any(|t| t.id.starts_with(&format!("dat{i:02}_"))), "dat{i:02}");
        }
        assert_eq!(in_process_techniques().len(), 9);
        assert!(r.iter().all(|t| t.validate().is_ok()));
        let map = std::fs::read_to_string(crate::adapters::bundled_data_dir().join("category_map.tsv")).unwrap();
        for l in map.lines().filter(|l| !l.starts_with('#')) {
            let id = l.split('\t').next().unwrap();
            technique(id).unwrap();
        }
    }

    #[test]
    fn delete_keeps_immutable_word() {
        let c = corpus(&[doc("t", &["add new false positive rule organization"])]);
        assert_eq!(c.class_tokens(0).len(), 6);
        let lex = Lexicons::bundled();
        let im = imm(&["organization"]);
        let res = AugmentResources {
            lexicons: &lex,
            immutable: &im,
            embedding: None,
        };
        let out = augment_corpus(&c, &[technique("dat02_delete").unwrap()], &res, 7).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens.len(), 5);
        assert!(out[0].tokens.iter().any(|t| t == "organization"));
        assert!(!out[0].degenerate);
    }

    #[test]
    fn all_immutable_is_degenerate() {
        let c = corpus(&[doc("t", &["snort pcap"])]);
        let lex = Lexicons::bundled();
        let im = imm(&["snort", "pcap"]);
        let res = AugmentResources {
            lexicons: &lex,
            immutable: &im,
            embedding: None,
        };
        let out = augment_corpus(&c, &[technique("dat01_swap").unwrap()], &res, 1).unwrap();
        assert!(out[0].degenerate);
        assert_eq!(&out[0].tokens, c.class_tokens(0));
        assert!(augment_corpus(&c, &[], &res, 1).unwrap().is_empty());
    }

    #[test]
    fn missing_lexicon_is_error() {
        let c = corpus(&[doc("t", &["add rule"])]);
        let mut lex = Lexicons::bundled();
        lex.paraphrases.clear();
        let im = imm(&[]);
        let res = AugmentResources {
            lexicons: &lex,
            immutable: &im,
            embedding: None,
        };
        let e = augment_corpus(&c, &[technique("dat06_ppdb_subs").unwrap()], &res, 1).unwrap_err();
        assert!(matches!(e, Error::MissingLexicon("paraphrases", _)));
        let e = augment_corpus(&c, &[technique("emb_neighbor_subs").unwrap()], &res, 1).unwrap_err();
        assert!(matches!(e, Error::MissingLexicon(..)));
        assert!(augment_corpus(&c, &[technique("dat30_bert_subs").unwrap()], &res, 1).is_err());
    }

    #[test]
    fn selection_examples_and_strict_threshold() {
        let p: BTreeMap<String, usize> = [("a".to_string(), 15), ("b".to_string(), 9)].into();
        let r = selection_scores(&p, 3, 5).unwrap();
        assert_eq!(r.scores[0].s_score, 100.0);
        assert_eq!(r.scores[1].s_score, 60.0);
        assert_eq!(r.m_score, 80.0);
        assert_eq!(r.selected(), ["a".to_string()].into());
        // b sits exactly at the mean and is excluded
        let p: BTreeMap<String, usize> = [("a", 12), ("b", 9), ("c", 6)].map(|(k, v)| (k.to_string(), v)).into();
        let r = selection_scores(&p, 3, 5).unwrap();
        assert_eq!(r.m_score, 60.0);
        assert_eq!(r.selected(), ["a".to_string()].into());
    }

    #[test]
    fn external_rows() {
        let c = corpus(&[doc("t", &["add new false positive rule to organization"])]);
        let lex = Lexicons::bundled();
        let rid = c.records()[0].record_id.clone();
        let row = |t: &str, r: &str, text: &str| ExternalRow {
            technique: t.into(),
            record_id: r.into(),
            text: text.into(),
        };
        let (ok, rej) = admit_external(
            vec![
                (1, row("dat30_bert_subs", &rid, "append a fresh false positive rule to the org")),
                (2, row("dat30_bert_subs", "nope", "x")),
                (3, row("dat99", &rid, "x")),
                (4, row("dat29_bert_ins", &rid, "???")),
                (5, row("dat01_swap", &rid, "rule add")),
            ],
            &c,
            &lex,
        );
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].tokens.join(), "append fresh false positive rule org");
        assert_eq!(rej.iter().map(|r| r.line).collect::<Vec<_>>(), [2, 3, 4, 5]);
    }

    #[test]
    fn sample_is_stable_and_complete() {
        let c = corpus(&[doc("t", &["add rule", "remove rule", "list rule", "get status"])]);
        let lex = Lexicons::bundled();
        let im = imm(&[]);
        let res = AugmentResources {
            lexicons: &lex,
            immutable: &im,
            embedding: None,
        };
        let techs: Vec<AugTechnique> = ["dat01_swap", "dat02_delete", "dat04_split"].iter().map(|t| technique(t).unwrap()).collect();
        let ex = augment_corpus(&c, &techs, &res, 3).unwrap();
        let s1 = build_selection_sample(&ex, &c, 2, 11).unwrap();
        let s2 = build_selection_sample(&ex, &c, 2, 11).unwrap();
        assert_eq!(s1, s2);
        assert_eq!((s1.n, s1.beta, s1.alpha), (1, 2, 3));
        assert_eq!(s1.rows.len(), 6);
        assert_eq!(s1.displayed(), 8);
        assert!(build_selection_sample(&ex, &c, 0, 11).unwrap().rows.is_empty());
        assert!(build_selection_sample(&ex, &c, 5, 11).is_err());

        let labels: Vec<LabelRow> = s1
            .rows
            .iter()
            .skip(1)
            .map(|r| LabelRow {
                technique: r.technique.clone(),
                record_id: r.record_id.clone(),
                s_v: 1,
            })
            .collect();
        match score_and_select(&s1, &labels) {
            Err(Error::MissingLabels(m)) => assert!(m.contains(&s1.rows[0].record_id)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_round_trip_and_filter() {
        let p: BTreeMap<String, usize> = [("dat01_swap", 5), ("dat02_delete", 1)].map(|(k, v)| (k.to_string(), v)).into();
        let r = selection_scores(&p, 1, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        r.save(&path).unwrap();
        assert_eq!(SelectionReport::load(&path).unwrap(), r);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.lines().next().unwrap().contains("m_score"));
        let ex = |t: &str| AugmentedExample {
            example_id: format!("{t}:r"),
            base_record_id: "r".into(),
            technique_id: t.into(),
            tokens: TokenSequence::from_tokens(vec!["x".into()]),
            selection_label: None,
            degenerate: false,
        };
        let kept = filter_corpus_by_selection(&[ex("dat01_swap"), ex("dat02_delete")], &r);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].technique_id, "dat01_swap");
    }
}
