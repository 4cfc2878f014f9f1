//! Skip-gram word embeddings with hashed character n-gram subwords.
//!
//! A word's input representation is the sum of its own row and the rows of
//! the buckets its boundary-marked n-grams hash into, so unseen words still
//! get a vector from their n-grams. Training uses hierarchical softmax over a
//! Huffman tree, or negative sampling.

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{put_f64s, Reader};
use crate::error::{Error, Result};
use crate::hashing::{fnv1a32, fnv1a64};
use crate::textprep::TokenSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    HierarchicalSoftmax,
    NegativeSampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub min_count: u64,
    pub epochs: usize,
    pub lr: f64,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub buckets: usize,
    pub objective: Objective,
    /// Negatives per positive when using negative sampling.
    pub negatives: usize,
    /// Off gives a plain word-level skip-gram.
    pub subwords: bool,
    /// More than one thread trades bitwise reproducibility for speed.
    pub threads: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 300,
            window: 5,
            min_count: 1,
            epochs: 5,
            lr: 0.05,
            ngram_min: 3,
            ngram_max: 6,
            buckets: 2_000_000,
            objective: Objective::HierarchicalSoftmax,
            negatives: 5,
            subwords: true,
            threads: 1,
        }
    }
}

impl EmbeddingConfig {
    /// Small settings for the bundled desk corpus.
    pub fn desk() -> Self {
        EmbeddingConfig {
            dim: 32,
            buckets: 100_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("embedding: {m}")));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.subwords && (self.ngram_min == 0 || self.ngram_min > self.ngram_max) {
            return bad("need 0 < ngram_min <= ngram_max");
        }
        if self.subwords && self.buckets == 0 {
            return bad("buckets must be positive");
        }
        if self.window == 0 || self.epochs == 0 || self.threads == 0 {
            return bad("window, epochs and threads must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.objective == Objective::NegativeSampling && self.negatives == 0 {
            return bad("negative sampling needs negatives > 0");
        }
        Ok(())
    }
}

/// Bucket ids of the n-grams of `<word>`, n in [nmin, nmax]. Single-char
/// grams made of just a boundary mark are skipped, as in the reference
/// subword model.
pub fn ngram_buckets(word: &str, nmin: usize, nmax: usize, buckets: usize) -> Vec<usize> {
    let marked: Vec<char> = format!("<{word}>").chars().collect();
    let mut out = Vec::new();
    let mut gram = String::new();
    for i in 0..marked.len() {
        gram.clear();
        for (n, j) in (i..marked.len()).take(nmax).enumerate() {
            let n = n + 1;
            gram.push(marked[j]);
            if n >= nmin && !(n == 1 && (i == 0 || j + 1 == marked.len())) {
                out.push(fnv1a32(gram.as_bytes()) as usize % buckets);
            }
        }
    }
    out
}

/// Huffman coding of the vocabulary for hierarchical softmax. Internal node
/// `k` owns output row `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct HuffmanTree {
    /// Per word: internal nodes from the root's child side up to the root,
    /// as output-row indices.
    pub paths: Vec<Vec<usize>>,
    /// Per word: branch taken at each node of `paths`.
    pub codes: Vec<Vec<bool>>,
    pub internal_nodes: usize,
}

impl HuffmanTree {
    /// `counts` must be sorted in non-increasing order.
    pub fn build(counts: &[u64]) -> HuffmanTree {
        let n = counts.len();
        if n < 2 {
            return HuffmanTree {
                paths: vec![Vec::new(); n],
                codes: vec![Vec::new(); n],
                internal_nodes: 0,
            };
        }
        let total = 2 * n - 1;
        let mut count = vec![u64::MAX; total];
        count[..n].copy_from_slice(counts);
        let mut parent = vec![usize::MAX; total];
        let mut binary = vec![false; total];
        let mut leaf = n as isize - 1;
        let mut node = n;
        for i in n..total {
            let mut mini = [0usize; 2];
            for m in &mut mini {
                if leaf >= 0 && count[leaf as usize] < count[node] {
                    *m = leaf as usize;
                    leaf -= 1;
                } else {
                    *m = node;
                    node += 1;
                }
            }
            count[i] = count[mini[0]] + count[mini[1]];
            parent[mini[0]] = i;
            parent[mini[1]] = i;
            binary[mini[1]] = true;
        }
        let mut paths = Vec::with_capacity(n);
        let mut codes = Vec::with_capacity(n);
        for w in 0..n {
            let mut p = Vec::new();
            let mut c = Vec::new();
            let mut j = w;
            while parent[j] != usize::MAX {
                p.push(parent[j] - n);
                c.push(binary[j]);
                j = parent[j];
            }
            paths.push(p);
            codes.push(c);
        }
        HuffmanTree {
            paths,
            codes,
            internal_nodes: n - 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub words: Vec<String>,
    pub counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Frequency-descending, ties in lexicographic order.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a TokenSequence>, min_count: u64) -> Vocabulary {
        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        for s in sentences {
            for t in s {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut v: Vec<(&str, u64)> = freq.into_iter().filter(|&(_, c)| c >= min_count).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_parts(
            v.iter().map(|(w, _)| w.to_string()).collect(),
            v.iter().map(|&(_, c)| c).collect(),
        )
    }

    fn from_parts(words: Vec<String>, counts: Vec<u64>) -> Vocabulary {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, counts, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, w: &str) -> Option<usize> {
        self.index.get(w).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub config: EmbeddingConfig,
    pub seed: u64,
    pub vocab: Vocabulary,
    /// Word rows, then bucket rows; row-major, `dim` wide.
    pub input: Vec<f64>,
    /// Huffman internal-node rows or negative-sampling output rows.
    pub output: Vec<f64>,
    pub tree: Option<HuffmanTree>,
    subword_rows: Vec<Vec<usize>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shared parameter storage, either plain cells or atomics for lock-free
/// parallel updates.
trait Store {
    fn get(&self, i: usize) -> f64;
    fn add(&self, i: usize, v: f64);
}

impl Store for [Cell<f64>] {
    #[inline]
    fn get(&self, i: usize) -> f64 {
        self[i].get()
    }
    #[inline]
    fn add(&self, i: usize, v: f64) {
        self[i].set(self[i].get() + v);
    }
}

impl Store for [AtomicU64] {
    #[inline]
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self[i].load(Ordering::Relaxed))
    }
    #[inline]
    fn add(&self, i: usize, v: f64) {
        let cur = f64::from_bits(self[i].load(Ordering::Relaxed));
        self[i].store((cur + v).to_bits(), Ordering::Relaxed);
    }
}

/// One logistic unit: updates `grad_h` and the output row, returns the loss.
#[inline]
fn binary_logistic<S: Store + ?Sized>(
    out: &S,
    row: usize,
    d: usize,
    h: &[f64],
    label: bool,
    lr: f64,
    grad_h: &mut [f64],
) -> f64 {
    let base = row * d;
    let mut score = 0.0;
    for k in 0..d {
        score += out.get(base + k) * h[k];
    }
    let s = sigmoid(score);
    let y = if label { 1.0 } else { 0.0 };
    let alpha = lr * (y - s);
    for k in 0..d {
        grad_h[k] += alpha * out.get(base + k);
        out.add(base + k, alpha * h[k]);
    }
    if label {
        -s.max(1e-300).ln()
    } else {
        -(1.0 - s).max(1e-300).ln()
    }
}

struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).sqrt();
                acc
            })
            .collect();
        NegativeTable { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        let x = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1)
    }
}

struct TrainCtx<'a> {
    cfg: &'a EmbeddingConfig,
    subword_rows: &'a [Vec<usize>],
    tree: Option<&'a HuffmanTree>,
    negatives: Option<&'a NegativeTable>,
    total_tokens: f64,
    processed: &'a AtomicUsize,
}

fn train_worker<S: Store + ?Sized>(
    ctx: &TrainCtx<'_>,
    input: &S,
    output: &S,
    sentences: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let d = ctx.cfg.dim;
    let mut h = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut loss = 0.0;
    for _ in 0..ctx.cfg.epochs {
        for sent in sentences {
            for (i, &w) in sent.iter().enumerate() {
                let done = ctx.processed.fetch_add(1, Ordering::Relaxed) as f64;
                let lr = ctx.cfg.lr * (1.0 - done / ctx.total_tokens).max(0.0);
                let b = rng.random_range(1..=ctx.cfg.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(sent.len() - 1);
                let rows = &ctx.subword_rows[w];
                for c in lo..=hi {
                    if c == i {
                        continue;
                    }
                    h.iter_mut().for_each(|x| *x = 0.0);
                    for &r in rows {
                        for k in 0..d {
                            h[k] += input.get(r * d + k);
                        }
                    }
                    grad.iter_mut().for_each(|x| *x = 0.0);
                    let target = sent[c];
                    if let Some(tree) = ctx.tree {
                        for (&node, &code) in tree.paths[target].iter().zip(&tree.codes[target]) {
                            loss += binary_logistic(output, node, d, &h, code, lr, &mut grad);
                        }
                    } else if let Some(neg) = ctx.negatives {
                        loss += binary_logistic(output, target, d, &h, true, lr, &mut grad);
                        for _ in 0..ctx.cfg.negatives {
                            let n = neg.sample(rng);
                            if n != target {
                                loss += binary_logistic(output, n, d, &h, false, lr, &mut grad);
                            }
                        }
                    }
                    for &r in rows {
                        for k in 0..d {
                            input.add(r * d + k, grad[k]);
                        }
                    }
                }
            }
        }
    }
    loss
}

pub fn train_embedding(sentences: &[TokenSequence], cfg: &EmbeddingConfig, seed: u64) -> Result<EmbeddingModel> {
    cfg.validate()?;
    let vocab = Vocabulary::build(sentences, cfg.min_count);
    if vocab.is_empty() {
        return Err(Error::Empty("embedding training corpus"));
    }
    let d = cfg.dim;
    let nb = if cfg.subwords { cfg.buckets } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / d as f64;
    let mut input: Vec<f64> = (0..(vocab.len() + nb) * d)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    let (tree, out_rows) = match cfg.objective {
        Objective::HierarchicalSoftmax => {
            let t = HuffmanTree::build(&vocab.counts);
            let n = t.internal_nodes;
            (Some(t), n)
        }
        Objective::NegativeSampling => (None, vocab.len()),
    };
    let mut output = vec![0.0; out_rows * d];
    let subword_rows = compute_subword_rows(&vocab, cfg);
    let ids: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().filter_map(|t| vocab.id(t)).collect::<Vec<_>>())
        .filter(|s: &Vec<usize>| s.len() > 1)
        .collect();
    let ntokens: usize = ids.iter().map(Vec::len).sum();
    let negatives = (cfg.objective == Objective::NegativeSampling).then(|| NegativeTable::new(&vocab.counts));
    let processed = AtomicUsize::new(0);
    let ctx = TrainCtx {
        cfg,
        subword_rows: &subword_rows,
        tree: tree.as_ref(),
        negatives: negatives.as_ref(),
        total_tokens: (ntokens * cfg.epochs).max(1) as f64,
        processed: &processed,
    };
    if cfg.threads == 1 {
        let inp = Cell::from_mut(input.as_mut_slice()).as_slice_of_cells();
        let out = Cell::from_mut(output.as_mut_slice()).as_slice_of_cells();
        let loss = train_worker(&ctx, inp, out, &ids, &mut rng);
        log::debug!("embedding trained: {} words, {ntokens} tokens/epoch, loss {loss:.3}", vocab.len());
    } else {
        let inp: Vec<AtomicU64> = input.iter().map(|x| AtomicU64::new(x.to_bits())).collect();
        let out: Vec<AtomicU64> = output.iter().map(|x| AtomicU64::new(x.to_bits())).collect();
        let shards: Vec<Vec<Vec<usize>>> = (0..cfg.threads)
            .map(|t| ids.iter().skip(t).step_by(cfg.threads).cloned().collect())
            .collect();
        std::thread::scope(|s| {
            for (t, shard) in shards.iter().enumerate() {
                let (ctx, inp, out) = (&ctx, &inp[..], &out[..]);
                let mut trng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                s.spawn(move || train_worker(ctx, inp, out, shard, &mut trng));
            }
        });
        input = inp.into_iter().map(|a| f64::from_bits(a.into_inner())).collect();
        output = out.into_iter().map(|a| f64::from_bits(a.into_inner())).collect();
    }
    Ok(EmbeddingModel {
        config: cfg.clone(),
        seed,
        vocab,
        input,
        output,
        tree,
        subword_rows,
    })
}

fn compute_subword_rows(vocab: &Vocabulary, cfg: &EmbeddingConfig) -> Vec<Vec<usize>> {
    let nv = vocab.len();
    vocab
        .words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rows = vec![i];
            if cfg.subwords {
                rows.extend(
                    ngram_buckets(w, cfg.ngram_min, cfg.ngram_max, cfg.buckets)
                        .into_iter()
                        .map(|b| nv + b),
                );
            }
            rows
        })
        .collect()
}

/// Loss and analytic gradients of hierarchical softmax for one (input rows,
/// target) pair: returns (loss, d loss/d h, d loss/d output rows keyed by
/// node). Every input row receives the full `d loss/d h`.
pub fn hs_loss_gradient(
    output: &[f64],
    d: usize,
    h: &[f64],
    path: &[usize],
    codes: &[bool],
) -> (f64, Vec<f64>, Vec<(usize, Vec<f64>)>) {
    let mut loss = 0.0;
    let mut dh = vec![0.0; d];
    let mut dout = Vec::with_capacity(path.len());
    for (&node, &code) in path.iter().zip(codes) {
        let o = &output[node * d..(node + 1) * d];
        let score: f64 = o.iter().zip(h).map(|(a, b)| a * b).sum();
        let s = sigmoid(score);
        let y = if code { 1.0 } else { 0.0 };
        loss -= if code { s.ln() } else { (1.0 - s).ln() };
        let g = s - y;
        for k in 0..d {
            dh[k] += g * o[k];
        }
        dout.push((node, h.iter().map(|x| g * x).collect()));
    }
    (loss, dh, dout)
}

const MAGIC: &[u8; 4] = b"SWEM";
const VERSION: u32 = 1;

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn contains(&self, w: &str) -> bool {
        self.vocab.id(w).is_some()
    }

    /// Input rows that make up `word`: its own row if known, plus its n-gram
    /// buckets when subwords are on.
    pub fn rows_of(&self, word: &str) -> Vec<usize> {
        match self.vocab.id(word) {
            Some(i) => self.subword_rows[i].clone(),
            None if self.config.subwords => {
                let nv = self.vocab.len();
                ngram_buckets(word, self.config.ngram_min, self.config.ngram_max, self.config.buckets)
                    .into_iter()
                    .map(|b| nv + b)
                    .collect()
            }
            None => Vec::new(),
        }
    }

    /// Summed representation. Unknown words without subwords map to zeros.
    pub fn embed_word(&self, word: &str) -> Vec<f64> {
        let d = self.dim();
        let mut v = vec![0.0; d];
        for r in self.rows_of(word) {
            for (x, y) in v.iter_mut().zip(&self.input[r * d..(r + 1) * d]) {
                *x += y;
            }
        }
        v
    }

    /// Probability of `target` given hidden vector `h` under the tree.
    pub fn hs_probability(&self, h: &[f64], target: usize) -> f64 {
        let tree = self.tree.as_ref().expect("hierarchical softmax model");
        let d = self.dim();
        tree.paths[target]
            .iter()
            .zip(&tree.codes[target])
            .map(|(&n, &c)| {
                let s = sigmoid(self.output[n * d..(n + 1) * d].iter().zip(h).map(|(a, b)| a * b).sum());
                if c {
                    s
                } else {
                    1.0 - s
                }
            })
            .product()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut b = Vec::with_capacity(64 + 8 * (self.input.len() + self.output.len()));
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        for v in [c.dim, c.buckets, c.ngram_min, c.ngram_max, c.window, c.epochs, c.negatives] {
            b.extend_from_slice(&(v as u64).to_le_bytes());
        }
        b.push(match c.objective {
            Objective::HierarchicalSoftmax => 0,
            Objective::NegativeSampling => 1,
        });
        b.push(u8::from(c.subwords));
        b.extend_from_slice(&c.min_count.to_le_bytes());
        b.extend_from_slice(&c.lr.to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&(self.vocab.len() as u64).to_le_bytes());
        for (w, &n) in self.vocab.words.iter().zip(&self.vocab.counts) {
            b.extend_from_slice(&(w.len() as u32).to_le_bytes());
            b.extend_from_slice(w.as_bytes());
            b.extend_from_slice(&n.to_le_bytes());
        }
        put_f64s(&mut b, &self.input);
        put_f64s(&mut b, &self.output);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<EmbeddingModel> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::BadModel("not an embedding model".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::BadModel(format!("unsupported embedding version {version}")));
        }
        let mut f = [0usize; 7];
        for x in &mut f {
            *x = r.u64()? as usize;
        }
        let objective = match r.take(1)?[0] {
            0 => Objective::HierarchicalSoftmax,
            1 => Objective::NegativeSampling,
            o => return Err(Error::BadModel(format!("objective tag {o}"))),
        };
        let subwords = r.take(1)?[0] != 0;
        let min_count = r.u64()?;
        let lr = r.f64()?;
        let seed = r.u64()?;
        let config = EmbeddingConfig {
            dim: f[0],
            buckets: f[1],
            ngram_min: f[2],
            ngram_max: f[3],
            window: f[4],
            epochs: f[5],
            negatives: f[6],
            objective,
            subwords,
            min_count,
            lr,
            threads: 1,
        };
        let nv = r.u64()? as usize;
        let mut words = Vec::with_capacity(nv);
        let mut counts = Vec::with_capacity(nv);
        for _ in 0..nv {
            let len = r.u32()? as usize;
            let w = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::BadModel("vocabulary is not UTF-8".into()))?;
            words.push(w.to_string());
            counts.push(r.u64()?);
        }
        let input = r.f64s()?;
        let output = r.f64s()?;
        let nb = if subwords { config.buckets } else { 0 };
        if input.len() != (nv + nb) * config.dim {
            return Err(Error::BadModel("input matrix size mismatch".into()));
        }
        let vocab = Vocabulary::from_parts(words, counts);
        let tree = (objective == Objective::HierarchicalSoftmax).then(|| HuffmanTree::build(&vocab.counts));
        let out_rows = tree.as_ref().map_or(nv, |t| t.internal_nodes);
        if output.len() != out_rows * config.dim {
            return Err(Error::BadModel("output matrix size mismatch".into()));
        }
        if !r.at_end() {
            return Err(Error::BadModel("trailing bytes".into()));
        }
        let subword_rows = compute_subword_rows(&vocab, &config);
        Ok(EmbeddingModel {
            config,
            seed,
            vocab,
            input,
            output,
            tree,
            subword_rows,
        })
    }

    /// Stable content hash, used as the model version.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a64(&self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<EmbeddingModel> {
        let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&b)
    }

    /// Plain-text dump: a "count dim" header, then one word and its composed
    /// vector per line.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        let io = |e| Error::io(path, e);
        writeln!(w, "{} {}", self.vocab.len(), self.dim()).map_err(io)?;
        for word in &self.vocab.words {
            write!(w, "{word}").map_err(io)?;
            for x in self.embed_word(word) {
                write!(w, " {x:.6}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Unit-normalized vectors of every vocabulary word, for repeated
/// neighbor queries.
pub struct NeighborIndex<'a> {
    model: &'a EmbeddingModel,
    unit: Vec<Vec<f64>>,
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl<'a> NeighborIndex<'a> {
    pub fn new(model: &'a EmbeddingModel) -> Self {
        let unit = model.vocab.words.iter().map(|w| normalized(model.embed_word(w))).collect();
        NeighborIndex { model, unit }
    }

    /// Top-k vocabulary words by cosine to `word`, never `word` itself;
    /// ties keep vocabulary order.
    pub fn neighbors(&self, word: &str, k: usize) -> Vec<(String, f64)> {
        let q = normalized(self.model.embed_word(word));
        let mut scored: Vec<(usize, f64)> = self
            .unit
            .iter()
            .enumerate()
            .filter(|(i, _)| self.model.vocab.words[*i] != word)
            .map(|(i, u)| (i, u.iter().zip(&q).map(|(a, b)| a * b).sum()))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (self.model.vocab.words[i].clone(), s))
            .collect()
    }
}

pub fn nearest_neighbors(model: &EmbeddingModel, word: &str, k: usize) -> Vec<(String, f64)> {
    NeighborIndex::new(model).neighbors(word, k)
}

/// Hierarchical-softmax gradients against central differences.
pub mod gradcheck {
    use super::*;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            0.0
        } else {
            diff / norm
        }
    }

    /// Worst relative error over every target of a random 10-word, d=4
    /// tree, for both the hidden vector and the node vectors.
    pub fn max_relative_error(seed: u64) -> f64 {
        let (v, d) = (10, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts: Vec<u64> = (0..v).map(|_| rng.random_range(1..50)).collect();
        let tree = HuffmanTree::build(&counts);
        let mut output: Vec<f64> = (0..tree.internal_nodes * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut h: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for t in 0..v {
            let (path, codes) = (&tree.paths[t], &tree.codes[t]);
            let (_, dh, dout) = hs_loss_gradient(&output, d, &h, path, codes);
            let loss = |o: &[f64], h: &[f64]| hs_loss_gradient(o, d, h, path, codes).0;
            let mut num = vec![0.0; d];
            for k in 0..d {
                let keep = h[k];
                h[k] = keep + eps;
                let up = loss(&output, &h);
                h[k] = keep - eps;
                let down = loss(&output, &h);
                h[k] = keep;
                num[k] = (up - down) / (2.0 * eps);
            }
            worst = worst.max(rel_err(&dh, &num));
            for (node, g) in dout {
                let mut num = vec![0.0; d];
                for k in 0..d {
                    let i = node * d + k;
                    let keep = output[i];
                    output[i] = keep + eps;
                    let up = loss(&output, &h);
                    output[i] = keep - eps;
                    let down = loss(&output, &h);
                    output[i] = keep;
                    num[k] = (up - down) / (2.0 * eps);
                }
                worst = worst.max(rel_err(&g, &num));
            }
        }
        worst
    }
}
