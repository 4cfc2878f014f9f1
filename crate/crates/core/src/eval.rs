//! Ranking metrics, annotator agreement, and the evaluation protocols:
//! cross-validation, leave-one-group-out per query category, and ablations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{training_examples, AugTechnique, AugmentedExample};
use crate::baseline::build_baseline_index;
use crate::cnn::{CnnConfig, Example};
use crate::corpus::Corpus;
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::pipeline::{augment, train_system};
use crate::ranking::{gold_rank, Ranker};
use crate::textprep::{ImmutableCorpus, Lexicons, TokenSequence};

/// A gold rank that no cutoff reaches.
pub const MISS: usize = usize::MAX;

fn check(ranks: &[usize], k: usize) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::Empty("query set"));
    }
    if k == 0 {
        return Err(Error::Invalid("cutoff k must be at least 1".into()));
    }
    Ok(())
}

fn hits(ranks: &[usize], k: usize) -> usize {
    ranks.iter().filter(|&&r| r <= k).count()
}

/// Percentage of queries whose gold rank is within `k`.
pub fn topk_accuracy(ranks: &[usize], k: usize) -> Result<f64> {
    check(ranks, k)?;
    Ok(100.0 * hits(ranks, k) as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank, counting ranks beyond `k` as 0.
pub fn mrr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check(ranks, k)?;
    let sum: f64 = ranks.iter().filter(|&&r| r <= k).map(|&r| 1.0 / r as f64).sum();
    Ok(sum / ranks.len() as f64)
}

/// Mean precision@k with a single gold API per query.
pub fn mean_precision_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check(ranks, k)?;
    Ok(hits(ranks, k) as f64 / (ranks.len() * k) as f64)
}

/// Relative improvement of `new` over `base`, in percent.
pub fn performance_gain(new: f64, base: f64) -> Result<f64> {
    if base == 0.0 {
        return Err(Error::Invalid("performance gain over a zero base".into()));
    }
    Ok((new - base) / base * 100.0)
}

/// Agreement of two binary labelings beyond chance.
pub fn cohen_kappa(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("label lists differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("label lists"));
    }
    if let Some(v) = a.iter().chain(b).find(|&&v| v > 1) {
        return Err(Error::Invalid(format!("label {v} is not 0 or 1")));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let a1 = a.iter().filter(|&&x| x == 1).count() as f64;
    let b1 = b.iter().filter(|&&x| x == 1).count() as f64;
    let po = agree / n;
    let pe = (a1 * b1 + (n - a1) * (n - b1)) / (n * n);
    if pe == 1.0 {
        return if po == 1.0 {
            Ok(1.0)
        } else {
            Err(Error::Invalid("kappa undefined".into()))
        };
    }
    Ok((po - pe) / (1.0 - pe))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub tokens: TokenSequence,
    pub gold: usize,
    pub technique: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSet {
    pub queries: Vec<EvalQuery>,
    pub k: usize,
}

impl EvaluationSet {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.queries.is_empty() {
            return Err(Error::Empty("query set"));
        }
        if self.k == 0 {
            return Err(Error::Invalid("cutoff k must be at least 1".into()));
        }
        if let Some(q) = self.queries.iter().find(|q| q.gold >= classes) {
            return Err(Error::Invalid(format!("gold class {} outside 0..{classes}", q.gold)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub k: usize,
    /// Index i holds the value at cutoff i + 1.
    pub topk_acc: Vec<f64>,
    pub mp_at_k: Vec<f64>,
    pub mrr_at_k: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ranks: Vec<usize>,
}

impl MetricsReport {
    pub fn from_ranks(ranks: Vec<usize>, k: usize, mut latencies_ms: Vec<f64>) -> Result<MetricsReport> {
        let mut topk_acc = Vec::with_capacity(k);
        let mut mp_at_k = Vec::with_capacity(k);
        for j in 1..=k {
            topk_acc.push(topk_accuracy(&ranks, j)?);
            mp_at_k.push(mean_precision_at_k(&ranks, j)?);
        }
        latencies_ms.sort_by(f64::total_cmp);
        Ok(MetricsReport {
            queries: ranks.len(),
            k,
            topk_acc,
            mp_at_k,
            mrr_at_k: mrr_at_k(&ranks, k)?,
            latency_p50_ms: percentile(&latencies_ms, 50.0),
            latency_p95_ms: percentile(&latencies_ms, 95.0),
            ranks,
        })
    }

    pub fn top(&self, k: usize) -> f64 {
        self.topk_acc[k - 1]
    }
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Ranks every query with `ranker`. A query the ranker cannot answer is a miss.
pub fn evaluate(ranker: &dyn Ranker, set: &EvaluationSet) -> Result<MetricsReport> {
    set.validate(ranker.num_classes())?;
    let mut ranks = Vec::with_capacity(set.queries.len());
    let mut lat = Vec::with_capacity(set.queries.len());
    for q in &set.queries {
        let t = Instant::now();
        let r = match ranker.scores(&q.tokens) {
            Ok(s) => gold_rank(&s, q.gold),
            Err(Error::UnanswerableQuery) => MISS,
            Err(e) => return Err(e),
        };
        lat.push(t.elapsed().as_secs_f64() * 1e3);
        ranks.push(r);
    }
    MetricsReport::from_ranks(ranks, set.k, lat)
}

/// One reported number with its spread over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub system: String,
    pub metric: String,
    pub k: usize,
    pub value: f64,
    pub stddev: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Mean and population standard deviation of each metric over runs.
pub fn summarize(system: &str, runs: &[MetricsReport]) -> Vec<MetricRow> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let row = |metric: &str, k: usize, f: &dyn Fn(&MetricsReport) -> f64| {
        let (value, stddev) = mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        MetricRow {
            system: system.to_string(),
            metric: metric.to_string(),
            k,
            value,
            stddev,
        }
    };
    let mut rows = Vec::new();
    for j in 1..=first.k {
        rows.push(row("topk_acc", j, &|r| r.topk_acc[j - 1]));
    }
    for j in 1..=first.k {
        rows.push(row("mp_at_k", j, &|r| r.mp_at_k[j - 1]));
    }
    rows.push(row("mrr_at_k", first.k, &|r| r.mrr_at_k));
    rows.push(row("latency_p50_ms", 0, &|r| r.latency_p50_ms));
    rows.push(row("latency_p95_ms", 0, &|r| r.latency_p95_ms));
    rows
}

/// Writes `<stem>.tsv` and `<stem>.jsonl`.
pub fn write_report(rows: &[MetricRow], stem: &Path) -> Result<()> {
    let tsv = stem.with_extension("tsv");
    let mut s = String::from("system\tmetric\tk\tvalue\tstddev\n");
    for r in rows {
        s.push_str(&format!("{}\t{}\t{}\t{:.6}\t{:.6}\n", r.system, r.metric, r.k, r.value, r.stddev));
    }
    std::fs::write(&tsv, s).map_err(|e| Error::io(&tsv, e))?;
    let jl = stem.with_extension("jsonl");
    let mut f = std::fs::File::create(&jl).map_err(|e| Error::io(&jl, e))?;
    for r in rows {
        writeln!(f, "{}", serde_json::to_string(r).expect("plain struct")).map_err(|e| Error::io(&jl, e))?;
    }
    Ok(())
}

/// Builds a ranker from a training set drawn from `corpus`.
pub trait ModelFactory {
    fn name(&self) -> &str;
    fn build(&self, corpus: &Corpus, train: &[Example], seed: u64) -> Result<Box<dyn Ranker>>;
}

/// Subword embedding plus CNN, both retrained on each training set.
pub struct CnnFactory {
    pub embedding: EmbeddingConfig,
    pub cnn: CnnConfig,
}

impl ModelFactory for CnnFactory {
    fn name(&self) -> &str {
        "cnn"
    }

    fn build(&self, corpus: &Corpus, train: &[Example], seed: u64) -> Result<Box<dyn Ranker>> {
        Ok(Box::new(train_system(corpus.class_index(), train, &self.embedding, &self.cnn, seed)?))
    }
}

/// The IDF baseline; it only ever sees the original descriptions.
pub struct BaselineFactory {
    pub embedding: EmbeddingConfig,
}

impl ModelFactory for BaselineFactory {
    fn name(&self) -> &str {
        "w2v-idf"
    }

    fn build(&self, corpus: &Corpus, _train: &[Example], seed: u64) -> Result<Box<dyn Ranker>> {
        Ok(Box::new(build_baseline_index(corpus, &self.embedding, derive_seed(seed, &["baseline"]))?))
    }
}

/// Test masks for each evaluation round, stratified by class. One fold
/// means a single 80/20 hold-out; more folds mean k-fold rotation.
pub fn fold_assignments(classes: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
    if folds == 0 {
        return Err(Error::Invalid("folds must be at least 1".into()));
    }
    if classes.len() < folds.max(2) {
        return Err(Error::Invalid(format!("{} examples cannot fill {folds} folds", classes.len())));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in classes.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rounds = if folds == 1 { 1 } else { folds };
    let mut masks = vec![vec![false; classes.len()]; rounds];
    let mut offset = 0;
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        if folds == 1 {
            let take = (idx.len() as f64 * 0.2).round() as usize;
            for &i in idx.iter().take(take) {
                masks[0][i] = true;
            }
        } else {
            for (j, &i) in idx.iter().enumerate() {
                masks[(offset + j) % folds][i] = true;
            }
            offset += idx.len();
        }
    }
    if masks.iter().any(|m| !m.contains(&true)) {
        return Err(Error::Invalid("a fold has no test examples".into()));
    }
    Ok(masks)
}

fn queries_of(corpus: &Corpus, examples: &[&AugmentedExample]) -> Result<Vec<EvalQuery>> {
    examples
        .iter()
        .map(|e| {
            Ok(EvalQuery {
                tokens: e.tokens.clone(),
                gold: corpus
                    .class_of_record(&e.base_record_id)
                    .ok_or_else(|| Error::Invalid(format!("{}: unknown base record", e.example_id)))?,
                technique: e.technique_id.clone(),
            })
        })
        .collect()
}

fn originals_plus(corpus: &Corpus, examples: &[&AugmentedExample]) -> Result<Vec<Example>> {
    let owned: Vec<AugmentedExample> = examples.iter().map(|e| (*e).clone()).collect();
    training_examples(corpus, &owned)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            repeats: 10,
            k: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Per system, one report per (repeat, fold) in that order.
    pub runs: BTreeMap<String, Vec<MetricsReport>>,
    pub rows: Vec<MetricRow>,
}

/// Augmented examples are split into folds; originals always train.
/// Every system sees identical folds and seeds.
pub fn run_cross_validation(
    corpus: &Corpus,
    examples: &[AugmentedExample],
    systems: &[&dyn ModelFactory],
    cfg: &CvConfig,
) -> Result<CvReport> {
    if cfg.repeats == 0 {
        return Err(Error::Invalid("repeats must be at least 1".into()));
    }
    let classes: Vec<usize> = queries_of(corpus, &examples.iter().collect::<Vec<_>>())?
        .iter()
        .map(|q| q.gold)
        .collect();
    let mut runs: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for rep in 0..cfg.repeats {
        let rs = derive_seed(cfg.seed, &["cv-repeat", &rep.to_string()]);
        for (f, mask) in fold_assignments(&classes, cfg.folds, rs)?.iter().enumerate() {
            let (test, train): (Vec<_>, Vec<_>) = examples.iter().zip(mask).partition(|(_, &t)| t);
            let test: Vec<&AugmentedExample> = test.into_iter().map(|(e, _)| e).collect();
            let train: Vec<&AugmentedExample> = train.into_iter().map(|(e, _)| e).collect();
            let train = originals_plus(corpus, &train)?;
            let set = EvaluationSet {
                queries: queries_of(corpus, &test)?,
                k: cfg.k,
            };
            let seed = derive_seed(rs, &["fold", &f.to_string()]);
            for sys in systems {
                let ranker = sys.build(corpus, &train, seed)?;
                let report = evaluate(ranker.as_ref(), &set)?;
                log::info!("{} repeat {rep} fold {f}: top-1 {:.2}", sys.name(), report.top(1));
                runs.entry(sys.name().to_string()).or_default().push(report);
            }
        }
    }
    let rows = runs.iter().flat_map(|(name, r)| summarize(name, r)).collect();
    Ok(CvReport { runs, rows })
}

/// Technique → query category ("Q1".."Q5").
pub fn load_category_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_category_map(&text, path)
}

pub fn bundled_category_map() -> BTreeMap<String, String> {
    let path = crate::adapters::bundled_data_dir().join("category_map.tsv");
    load_category_map(&path).expect("bundled category map is valid")
}

fn parse_category_map(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let (t, q) = l.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected technique<TAB>category".into(),
        })?;
        m.insert(t.trim().to_string(), q.trim().to_string());
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: String,
    pub groups: Vec<String>,
    /// Mean over the category's groups.
    pub topk_acc: Vec<f64>,
    pub mrr_at_k: f64,
    /// Set when the category covers fewer groups than the map lists.
    pub reduced_coverage: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub per_group: BTreeMap<String, MetricsReport>,
    pub categories: Vec<CategoryResult>,
}

/// Leave-one-group-out: each technique's examples are the test set once,
/// while originals and every other group train.
pub fn run_category_eval(
    corpus: &Corpus,
    examples: &[AugmentedExample],
    category_map: &BTreeMap<String, String>,
    factory: &dyn ModelFactory,
    k: usize,
    seed: u64,
) -> Result<CategoryReport> {
    let groups: BTreeSet<&str> = examples.iter().map(|e| e.technique_id.as_str()).collect();
    if let Some(g) = groups.iter().find(|g| !category_map.contains_key(**g)) {
        return Err(Error::Invalid(format!("technique {g} has no query category")));
    }
    if groups.is_empty() {
        return Err(Error::Empty("augmentation groups"));
    }
    let mut per_group = BTreeMap::new();
    for g in &groups {
        let (test, train): (Vec<&AugmentedExample>, Vec<&AugmentedExample>) =
            examples.iter().partition(|e| e.technique_id == *g);
        if test.is_empty() {
            return Err(Error::Invalid(format!("group {g} has no examples")));
        }
        let train = originals_plus(corpus, &train)?;
        let set = EvaluationSet {
            queries: queries_of(corpus, &test)?,
            k,
        };
        let ranker = factory.build(corpus, &train, derive_seed(seed, &["group", g]))?;
        let report = evaluate(ranker.as_ref(), &set)?;
        log::info!("held out {g}: top-1 {:.2}", report.top(1));
        per_group.insert(g.to_string(), report);
    }
    let categories: BTreeSet<&String> = category_map.values().collect();
    let mut out = Vec::new();
    for cat in categories {
        let mapped: Vec<&String> = category_map.iter().filter(|(_, c)| *c == cat).map(|(t, _)| t).collect();
        let present: Vec<&String> = mapped.iter().copied().filter(|t| per_group.contains_key(*t)).collect();
        if present.is_empty() {
            continue;
        }
        let reps: Vec<&MetricsReport> = present.iter().map(|t| &per_group[*t]).collect();
        let n = reps.len() as f64;
        out.push(CategoryResult {
            category: cat.clone(),
            groups: present.iter().map(|t| t.to_string()).collect(),
            topk_acc: (0..k).map(|j| reps.iter().map(|r| r.topk_acc[j]).sum::<f64>() / n).collect(),
            mrr_at_k: reps.iter().map(|r| r.mrr_at_k).sum::<f64>() / n,
            reduced_coverage: present.len() < mapped.len(),
        });
    }
    Ok(CategoryReport {
        per_group,
        categories: out,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationFactor {
    None,
    Clustering,
    ImmutableWords,
    DropTechnique(String),
    SubwordToWord,
}

impl std::str::FromStr for AblationFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AblationFactor::None,
            "clustering" => AblationFactor::Clustering,
            "immutable-words" => AblationFactor::ImmutableWords,
            "subword-embedding" | "subword" => AblationFactor::SubwordToWord,
            other => match other.strip_prefix("drop:") {
                Some(t) if !t.is_empty() => AblationFactor::DropTechnique(t.to_string()),
                _ => return Err(Error::Invalid(format!("unknown ablation factor {other:?}"))),
            },
        })
    }
}

impl std::fmt::Display for AblationFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AblationFactor::None => f.write_str("none"),
            AblationFactor::Clustering => f.write_str("clustering"),
            AblationFactor::ImmutableWords => f.write_str("immutable-words"),
            AblationFactor::DropTechnique(t) => write!(f, "drop:{t}"),
            AblationFactor::SubwordToWord => f.write_str("subword-embedding"),
        }
    }
}

pub struct AblationInputs<'a> {
    pub corpus: &'a Corpus,
    pub lexicons: &'a Lexicons,
    pub immutable: &'a ImmutableCorpus,
    pub techniques: &'a [AugTechnique],
    pub embedding: EmbeddingConfig,
    pub cnn: CnnConfig,
    pub k: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub factor: String,
    pub full: MetricsReport,
    pub ablated: MetricsReport,
    /// Gain of the full system over the ablated one, per top-k cutoff.
    pub topk_gain: Vec<f64>,
    pub mrr_gain: f64,
}

/// Trains the full system and a variant with one factor removed on the same
/// hold-out. Test queries always come from the full system's augmentation.
pub fn run_ablation(inp: &AblationInputs<'_>, factor: &AblationFactor) -> Result<AblationReport> {
    let corpus = inp.corpus;
    if let AblationFactor::DropTechnique(t) = factor {
        if !inp.techniques.iter().any(|x| &x.id == t) {
            return Err(Error::UnknownTechnique(t.clone()));
        }
    }
    let examples = augment(corpus, inp.techniques, inp.lexicons, inp.immutable, &inp.embedding, inp.seed)?;
    let classes: Vec<usize> = queries_of(corpus, &examples.iter().collect::<Vec<_>>())?
        .iter()
        .map(|q| q.gold)
        .collect();
    let mask = fold_assignments(&classes, 1, derive_seed(inp.seed, &["ablation-split"]))?.remove(0);
    let key = |e: &AugmentedExample, c: &Corpus| -> Option<(String, usize)> {
        Some((e.technique_id.clone(), c.class_of_record(&e.base_record_id)?))
    };
    let test: Vec<&AugmentedExample> = examples.iter().zip(&mask).filter(|(_, &t)| t).map(|(e, _)| e).collect();
    let test_keys: BTreeSet<(String, usize)> = test.iter().filter_map(|e| key(e, corpus)).collect();
    let train_full: Vec<&AugmentedExample> = examples.iter().zip(&mask).filter(|(_, &t)| !t).map(|(e, _)| e).collect();

    let train_seed = derive_seed(inp.seed, &["ablation-train"]);
    let full_set = EvaluationSet {
        queries: queries_of(corpus, &test)?,
        k: inp.k,
    };
    let full_model = train_system(corpus.class_index(), &originals_plus(corpus, &train_full)?, &inp.embedding, &inp.cnn, train_seed)?;
    let full = evaluate(&full_model, &full_set)?;

    let ablated = match factor {
        AblationFactor::None => full.clone(),
        AblationFactor::DropTechnique(t) => {
            let kept: Vec<&AugmentedExample> = train_full.iter().copied().filter(|e| &e.technique_id != t).collect();
            let m = train_system(corpus.class_index(), &originals_plus(corpus, &kept)?, &inp.embedding, &inp.cnn, train_seed)?;
            evaluate(&m, &full_set)?
        }
        AblationFactor::SubwordToWord => {
            let emb = EmbeddingConfig {
                subwords: false,
                ..inp.embedding.clone()
            };
            let m = train_system(corpus.class_index(), &originals_plus(corpus, &train_full)?, &emb, &inp.cnn, train_seed)?;
            evaluate(&m, &full_set)?
        }
        AblationFactor::ImmutableWords | AblationFactor::Clustering => {
            let (space, imm) = if *factor == AblationFactor::Clustering {
                (corpus.singleton_classes()?, inp.immutable.clone())
            } else {
                (corpus.clone(), ImmutableCorpus::default())
            };
            let variant = augment(&space, inp.techniques, inp.lexicons, &imm, &inp.embedding, inp.seed)?;
            // keep hold-out (technique, class) pairs out of training in either class space
            let kept: Vec<&AugmentedExample> = variant
                .iter()
                .filter(|e| key(e, corpus).is_some_and(|k| !test_keys.contains(&k)))
                .collect();
            let m = train_system(space.class_index(), &originals_plus(&space, &kept)?, &inp.embedding, &inp.cnn, train_seed)?;
            let set = EvaluationSet {
                queries: queries_of(&space, &test)?,
                k: inp.k,
            };
            evaluate(&m, &set)?
        }
    };
    let topk_gain = (0..inp.k)
        .map(|j| performance_gain(full.topk_acc[j], ablated.topk_acc[j]))
        .collect::<Result<Vec<f64>>>()?;
    let mrr_gain = performance_gain(full.mrr_at_k, ablated.mrr_at_k)?;
    Ok(AblationReport {
        factor: factor.to_string(),
        full,
        ablated,
        topk_gain,
        mrr_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn metric_examples() {
        assert!(close(topk_accuracy(&[1, 3, 5], 3).unwrap(), 200.0 / 3.0, 1e-12));
        assert_eq!(topk_accuracy(&[1, 1, 1], 1).unwrap(), 100.0);
        assert_eq!(mrr_at_k(&[1, 2], 3).unwrap(), 0.75);
        assert_eq!(mrr_at_k(&[4], 3).unwrap(), 0.0);
        assert_eq!(mean_precision_at_k(&[2], 2).unwrap(), 0.5);
        assert_eq!(mean_precision_at_k(&[MISS], 2).unwrap(), 0.0);
        assert!(topk_accuracy(&[], 1).is_err());
        assert!(mrr_at_k(&[1], 0).is_err());
    }

    #[test]
    fn gain_examples() {
        assert!(close(performance_gain(91.9, 72.4).unwrap(), 26.9, 0.05));
        assert!(close(performance_gain(0.94, 0.76).unwrap(), 23.7, 0.05));
        assert_eq!(performance_gain(5.0, 5.0).unwrap(), 0.0);
        assert!(performance_gain(1.0, 0.0).is_err());
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(cohen_kappa(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(cohen_kappa(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert!(cohen_kappa(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn folds_are_stable_and_partition() {
        let classes: Vec<usize> = (0..50).map(|i| i % 7).collect();
        let a = fold_assignments(&classes, 5, 9).unwrap();
        assert_eq!(a, fold_assignments(&classes, 5, 9).unwrap());
        for i in 0..classes.len() {
            assert_eq!(a.iter().filter(|m| m[i]).count(), 1);
        }
        let h = fold_assignments(&classes, 1, 9).unwrap();
        assert_eq!(h.len(), 1);
        let test = h[0].iter().filter(|&&t| t).count();
        assert!((8..=12).contains(&test), "{test}");
        assert!(fold_assignments(&[0, 1], 3, 1).is_err());
    }

    #[test]
    fn percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }

    #[test]
    fn summary_of_identical_runs_has_no_spread() {
        let r = MetricsReport::from_ranks(vec![1, 2, MISS], 3, vec![1.0, 2.0, 3.0]).unwrap();
        let rows = summarize("s", &[r.clone(), r.clone()]);
        let top2 = rows.iter().find(|x| x.metric == "topk_acc" && x.k == 2).unwrap();
        assert_eq!(top2.value, r.top(2));
        assert_eq!(top2.stddev, 0.0);
        let dir = tempfile::tempdir().unwrap();
        write_report(&rows, &dir.path().join("m")).unwrap();
        let tsv = std::fs::read_to_string(dir.path().join("m.tsv")).unwrap();
        assert!(tsv.starts_with("system\tmetric\tk\tvalue\tstddev\n"));
        assert_eq!(std::fs::read_to_string(dir.path().join("m.jsonl")).unwrap().lines().count(), rows.len());
    }

    #[test]
    fn factors_parse() {
        for f in ["none", "clustering", "immutable-words", "subword-embedding", "drop:dat02_delete"] {
            assert_eq!(f.parse::<AblationFactor>().unwrap().to_string(), f);
        }
        assert!("dropout".parse::<AblationFactor>().is_err());
    }

    #[test]
    fn bundled_map_covers_five_categories() {
        let m = bundled_category_map();
        let cats: BTreeSet<&String> = m.values().collect();
        assert_eq!(cats.len(), 5);
        assert_eq!(m["dat01_swap"], "Q4");
        assert_eq!(m.values().filter(|c| *c == "Q4").count(), 1);
    }

    fn rank_lists() -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(prop_oneof![9 => 1usize..12, 1 => Just(MISS)], 1..60)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn metrics_match_brute_force(ranks in rank_lists(), k in 1usize..12) {
            let n = ranks.len() as f64;
            let mut hit = 0.0;
            let mut rr = 0.0;
            let mut prec = 0.0;
            for &r in &ranks {
                let tp = if r <= k { 1.0 } else { 0.0 };
                hit += tp;
                if r <= k {
                    rr += 1.0 / r as f64;
                }
                prec += tp / k as f64;
            }
            prop_assert_eq!(topk_accuracy(&ranks, k).unwrap(), 100.0 * hit / n);
            prop_assert_eq!(mrr_at_k(&ranks, k).unwrap(), rr / n);
            prop_assert!(close(mean_precision_at_k(&ranks, k).unwrap(), prec / n, 1e-12));
            prop_assert!(close(mean_precision_at_k(&ranks, k).unwrap() * k as f64, topk_accuracy(&ranks, k).unwrap() / 100.0, 1e-12));
            prop_assert!(topk_accuracy(&ranks, k + 1).unwrap() >= topk_accuracy(&ranks, k).unwrap());
            prop_assert!(mrr_at_k(&ranks, k + 1).unwrap() >= mrr_at_k(&ranks, k).unwrap());
        }

        #[test]
        fn kappa_bounded(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..40)) {
            let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            if let Ok(k) = cohen_kappa(&a, &b) {
                prop_assert!((-1.0..=1.0).contains(&k));
            }
            if a.contains(&0) && a.contains(&1) {
                prop_assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
            }
        }
    }
}
