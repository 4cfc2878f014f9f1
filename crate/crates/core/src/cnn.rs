//! Word-level convolutional ranker: embedding lookup, convolutions over
//! several window sizes, global max-pooling, a ReLU dense layer with dropout
//! and a softmax over API classes. Forward and backward passes are written
//! out by hand and trained with Adam.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{put_f64s, Reader};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::hashing::fnv1a64;
use crate::ranking::{top_k, RankedResult, Ranker};
use crate::textprep::TokenSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub windows: Vec<usize>,
    pub filters: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub max_len: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub train_embedding: bool,
    /// Share of the training data held out for early stopping.
    pub val_fraction: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            windows: vec![3, 4, 5],
            filters: 100,
            hidden: 100,
            dropout: 0.5,
            l2: 1e-4,
            batch_size: 64,
            patience: 50,
            max_epochs: 1000,
            max_len: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            train_embedding: false,
            val_fraction: 0.1,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("cnn: {m}")));
        if self.windows.is_empty() || self.windows.iter().any(|&h| h == 0 || h > self.max_len) {
            return bad(format!("window sizes {:?} must be in 1..={}", self.windows, self.max_len));
        }
        if self.filters == 0 || self.hidden == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("filters, hidden, batch_size and max_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} not in [0, 1)", self.val_fraction));
        }
        Ok(())
    }
}

/// Where each tensor lives in the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    d: usize,
    n: usize,
    hidden: usize,
    classes: usize,
    windows: Vec<usize>,
    conv_w: Vec<Range<usize>>,
    conv_b: Vec<Range<usize>>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(cfg: &CnnConfig, d: usize, classes: usize) -> Layout {
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let n = cfg.filters;
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for &h in &cfg.windows {
            conv_w.push(take(n * h * d));
            conv_b.push(take(n));
        }
        let f = n * cfg.windows.len();
        let w1 = take(cfg.hidden * f);
        let b1 = take(cfg.hidden);
        let w2 = take(classes * cfg.hidden);
        let b2 = take(classes);
        Layout {
            d,
            n,
            hidden: cfg.hidden,
            classes,
            windows: cfg.windows.clone(),
            conv_w,
            conv_b,
            w1,
            b1,
            w2,
            b2,
            total: at,
        }
    }

    fn features(&self) -> usize {
        self.n * self.windows.len()
    }

    /// Weight tensors subject to L2, as opposed to biases.
    fn weight_ranges(&self) -> Vec<Range<usize>> {
        let mut v = self.conv_w.clone();
        v.push(self.w1.clone());
        v.push(self.w2.clone());
        v
    }

    fn glorot_init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        let mut fill = |r: &Range<usize>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut p[r.clone()] {
                *x = rng.random_range(-a..a);
            }
        };
        for (b, &h) in self.windows.iter().enumerate() {
            fill(&self.conv_w[b], h * self.d, h * self.n);
        }
        fill(&self.w1, self.features(), self.hidden);
        fill(&self.w2, self.hidden, self.classes);
        p
    }
}

/// Intermediate values of one forward pass, kept for backprop.
struct Pass {
    /// Pre-activation pooled value and the window position it came from.
    pooled: Vec<f64>,
    argmax: Vec<usize>,
    features: Vec<f64>,
    z1: Vec<f64>,
    mask: Vec<f64>,
    a1: Vec<f64>,
    probs: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x` is the padded L×d input; rows at or beyond `len` are zero.
fn forward(lay: &Layout, p: &[f64], x: &[f64], len: usize, max_len: usize, dropout: Option<(f64, &mut ChaCha8Rng)>) -> Pass {
    let d = lay.d;
    let nf = lay.features();
    let mut pooled = vec![0.0; nf];
    let mut argmax = vec![0; nf];
    for (b, &h) in lay.windows.iter().enumerate() {
        let positions = max_len - h + 1;
        let real = len.min(positions);
        let w = &p[lay.conv_w[b].clone()];
        let bias = &p[lay.conv_b[b].clone()];
        for f in 0..lay.n {
            let wf = &w[f * h * d..(f + 1) * h * d];
            let mut best = f64::NEG_INFINITY;
            let mut at = 0;
            for pos in 0..real {
                let a = bias[f] + dot(wf, &x[pos * d..(pos + h) * d]);
                if a > best {
                    best = a;
                    at = pos;
                }
            }
            // Windows lying entirely in the padding all evaluate to the bias.
            if positions > real && bias[f] > best {
                best = bias[f];
                at = real;
            }
            pooled[b * lay.n + f] = best;
            argmax[b * lay.n + f] = at;
        }
    }
    let features: Vec<f64> = pooled.iter().map(|&v| v.max(0.0)).collect();
    let w1 = &p[lay.w1.clone()];
    let b1 = &p[lay.b1.clone()];
    let z1: Vec<f64> = (0..lay.hidden)
        .map(|j| b1[j] + dot(&w1[j * nf..(j + 1) * nf], &features))
        .collect();
    let mask: Vec<f64> = match dropout {
        Some((rate, rng)) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            (0..lay.hidden)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        }
        _ => vec![1.0; lay.hidden],
    };
    let a1: Vec<f64> = z1.iter().zip(&mask).map(|(&z, &m)| z.max(0.0) * m).collect();
    let w2 = &p[lay.w2.clone()];
    let b2 = &p[lay.b2.clone()];
    let logits: Vec<f64> = (0..lay.classes)
        .map(|c| b2[c] + dot(&w2[c * lay.hidden..(c + 1) * lay.hidden], &a1))
        .collect();
    Pass {
        pooled,
        argmax,
        features,
        z1,
        mask,
        a1,
        probs: softmax(&logits),
    }
}

/// Adds `scale` × d(cross-entropy)/d(params) into `g`, and into `gx` (the
/// input rows) when given. Returns the example's cross-entropy.
#[allow(clippy::too_many_arguments)]
fn backward(
    lay: &Layout,
    p: &[f64],
    x: &[f64],
    len: usize,
    pass: &Pass,
    label: usize,
    scale: f64,
    g: &mut [f64],
    mut gx: Option<&mut [f64]>,
) -> f64 {
    let d = lay.d;
    let nf = lay.features();
    let hdim = lay.hidden;
    let mut dlogits = pass.probs.clone();
    dlogits[label] -= 1.0;
    dlogits.iter_mut().for_each(|v| *v *= scale);
    let (w2s, b2s) = (lay.w2.start, lay.b2.start);
    let mut da1 = vec![0.0; hdim];
    for c in 0..lay.classes {
        let dc = dlogits[c];
        g[b2s + c] += dc;
        let row = c * hdim;
        for j in 0..hdim {
            g[w2s + row + j] += dc * pass.a1[j];
            da1[j] += p[w2s + row + j] * dc;
        }
    }
    let dz1: Vec<f64> = (0..hdim)
        .map(|j| if pass.z1[j] > 0.0 { da1[j] * pass.mask[j] } else { 0.0 })
        .collect();
    let (w1s, b1s) = (lay.w1.start, lay.b1.start);
    let mut dfeat = vec![0.0; nf];
    for j in 0..hdim {
        let dj = dz1[j];
        if dj == 0.0 {
            continue;
        }
        g[b1s + j] += dj;
        let row = j * nf;
        for f in 0..nf {
            g[w1s + row + f] += dj * pass.features[f];
            dfeat[f] += p[w1s + row + f] * dj;
        }
    }
    for (b, &h) in lay.windows.iter().enumerate() {
        let (ws, bs) = (lay.conv_w[b].start, lay.conv_b[b].start);
        for f in 0..lay.n {
            let k = b * lay.n + f;
            if pass.pooled[k] <= 0.0 || dfeat[k] == 0.0 {
                continue;
            }
            let gf = dfeat[k];
            g[bs + f] += gf;
            let pos = pass.argmax[k];
            if pos >= len {
                continue;
            }
            let wo = ws + f * h * d;
            let win = &x[pos * d..(pos + h) * d];
            for (i, &xv) in win.iter().enumerate() {
                g[wo + i] += gf * xv;
            }
            if let Some(gx) = gx.as_deref_mut() {
                for i in 0..h * d {
                    gx[pos * d + i] += gf * p[wo + i];
                }
            }
        }
    }
    -pass.probs[label].max(1e-300).ln()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &CnnConfig, p: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            p[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub last_train_loss: f64,
}

/// One labelled training sequence.
pub type Example = (TokenSequence, usize);

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: CnnConfig,
    dim: usize,
    class_index: Vec<String>,
    vocab: Vec<String>,
    embedding_fingerprint: String,
    seed: u64,
    summary: TrainingSummary,
}

#[derive(Clone, Debug)]
pub struct RecommenderModel {
    pub config: CnnConfig,
    pub class_index: Vec<String>,
    /// Row `i + 1` of `table` belongs to `vocab[i]`; row 0 is padding.
    pub vocab: Vec<String>,
    pub table: Vec<f64>,
    pub seed: u64,
    pub summary: TrainingSummary,
    pub embedding_fingerprint: String,
    params: Vec<f64>,
    layout: Layout,
    vocab_ids: HashMap<String, usize>,
    embedding: Option<Arc<EmbeddingModel>>,
}

/// Stratified hold-out: from each class with at least two examples,
/// `max(1, floor(count × fraction))` go to validation.
pub fn split_validation(data: &[Example], fraction: f64, seed: u64) -> (Vec<Example>, Vec<Example>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, c)) in data.iter().enumerate() {
        by_class.entry(*c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val_idx = BTreeSet::new();
    if fraction > 0.0 {
        for idx in by_class.values_mut() {
            if idx.len() < 2 {
                continue;
            }
            idx.shuffle(&mut rng);
            let take = ((idx.len() as f64 * fraction).floor() as usize).max(1);
            val_idx.extend(idx.iter().take(take).copied());
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, e) in data.iter().enumerate() {
        if val_idx.contains(&i) {
            val.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    (train, val)
}

/// Trains on `train`, early-stopping on `val`, and returns the weights of
/// the best validation epoch.
pub fn train_recommender(
    train: &[Example],
    val: &[Example],
    embedding: Arc<EmbeddingModel>,
    class_index: Vec<String>,
    cfg: &CnnConfig,
    seed: u64,
) -> Result<RecommenderModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let classes = class_index.len();
    if let Some((_, c)) = train.iter().chain(val).find(|(_, c)| *c >= classes) {
        return Err(Error::Invalid(format!("class id {c} outside 0..{classes}")));
    }
    let mut words = BTreeSet::new();
    for (t, _) in train.iter().chain(val) {
        words.extend(t.iter().cloned());
    }
    let vocab: Vec<String> = words.into_iter().collect();
    let d = embedding.dim();
    let mut table = vec![0.0; (vocab.len() + 1) * d];
    for (i, w) in vocab.iter().enumerate() {
        table[(i + 1) * d..(i + 2) * d].copy_from_slice(&embedding.embed_word(w));
    }
    let layout = Layout::new(cfg, d, classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = layout.glorot_init(&mut rng);
    let vocab_ids = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
    let mut model = RecommenderModel {
        config: cfg.clone(),
        class_index,
        vocab,
        table,
        seed,
        summary: TrainingSummary::default(),
        embedding_fingerprint: embedding.fingerprint(),
        params,
        layout,
        vocab_ids,
        embedding: Some(embedding),
    };
    model.fit(train, val, &mut rng);
    Ok(model)
}

impl RecommenderModel {
    fn ids(&self, tokens: &TokenSequence) -> Vec<usize> {
        tokens
            .iter()
            .take(self.config.max_len)
            .map(|t| self.vocab_ids.get(t).copied().unwrap_or(0))
            .collect()
    }

    fn input_from_ids(&self, ids: &[usize]) -> Vec<f64> {
        let d = self.layout.d;
        let mut x = vec![0.0; self.config.max_len * d];
        for (pos, &id) in ids.iter().enumerate() {
            x[pos * d..(pos + 1) * d].copy_from_slice(&self.table[id * d..(id + 1) * d]);
        }
        x
    }

    /// Input matrix for inference: unknown tokens are composed from the
    /// linked embedding's subwords.
    fn input_for_query(&self, tokens: &TokenSequence) -> (Vec<f64>, usize) {
        let d = self.layout.d;
        if tokens.len() > self.config.max_len {
            log::debug!("query truncated from {} to {} tokens", tokens.len(), self.config.max_len);
        }
        let len = tokens.len().min(self.config.max_len);
        let mut x = vec![0.0; self.config.max_len * d];
        for (pos, t) in tokens.iter().take(len).enumerate() {
            let row = &mut x[pos * d..(pos + 1) * d];
            match self.vocab_ids.get(t) {
                Some(&id) => row.copy_from_slice(&self.table[id * d..(id + 1) * d]),
                None => {
                    if let Some(e) = &self.embedding {
                        row.copy_from_slice(&e.embed_word(t));
                    }
                }
            }
        }
        (x, len)
    }

    fn fit(&mut self, train: &[Example], val: &[Example], rng: &mut ChaCha8Rng) {
        let cfg = self.config.clone();
        let lay = self.layout.clone();
        let d = lay.d;
        let train_ids: Vec<(Vec<usize>, usize)> = train.iter().map(|(t, c)| (self.ids(t), *c)).collect();
        let mut adam = Adam::new(lay.total);
        let mut adam_table = cfg.train_embedding.then(|| Adam::new(self.table.len()));
        let mut grad = vec![0.0; lay.total];
        let mut gtable = vec![0.0; if cfg.train_embedding { self.table.len() } else { 0 }];
        let mut gx = vec![0.0; cfg.max_len * d];
        let mut order: Vec<usize> = (0..train_ids.len()).collect();
        let weights = lay.weight_ranges();
        let mut best = (f64::NEG_INFINITY, self.params.clone(), self.table.clone());
        let mut wait = 0;
        for epoch in 0..cfg.max_epochs {
            order.shuffle(rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                gtable.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let (ids, label) = &train_ids[i];
                    let x = self.input_from_ids(ids);
                    let pass = forward(&lay, &self.params, &x, ids.len(), cfg.max_len, Some((cfg.dropout, &mut *rng)));
                    let gxs = if cfg.train_embedding {
                        gx.iter_mut().for_each(|g| *g = 0.0);
                        Some(gx.as_mut_slice())
                    } else {
                        None
                    };
                    epoch_loss += backward(&lay, &self.params, &x, ids.len(), &pass, *label, scale, &mut grad, gxs);
                    if cfg.train_embedding {
                        for (pos, &id) in ids.iter().enumerate() {
                            if id != 0 {
                                for k in 0..d {
                                    gtable[id * d + k] += gx[pos * d + k];
                                }
                            }
                        }
                    }
                }
                for r in &weights {
                    for i in r.clone() {
                        grad[i] += 2.0 * cfg.l2 * self.params[i];
                    }
                }
                adam.step(&cfg, &mut self.params, &grad);
                if let Some(a) = adam_table.as_mut() {
                    a.step(&cfg, &mut self.table, &gtable);
                }
            }
            let acc = self.accuracy(val);
            self.summary.epochs_run = epoch + 1;
            self.summary.last_train_loss = epoch_loss / train_ids.len() as f64;
            if acc > best.0 {
                best = (acc, self.params.clone(), self.table.clone());
                self.summary.best_epoch = epoch + 1;
                self.summary.best_val_accuracy = acc;
                wait = 0;
            } else {
                wait += 1;
                if wait >= cfg.patience {
                    break;
                }
            }
        }
        self.params = best.1;
        self.table = best.2;
        log::debug!(
            "cnn: {} epochs, best epoch {} with val accuracy {:.4}",
            self.summary.epochs_run,
            self.summary.best_epoch,
            self.summary.best_val_accuracy
        );
    }

    /// Share of examples whose class comes first.
    pub fn accuracy(&self, data: &[Example]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .iter()
            .filter(|(t, c)| {
                self.probabilities(t)
                    .map(|p| crate::ranking::order(&p)[0] == *c)
                    .unwrap_or(false)
            })
            .count();
        hits as f64 / data.len() as f64
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn dim(&self) -> usize {
        self.layout.d
    }

    /// Softmax over classes for a processed query.
    pub fn probabilities(&self, tokens: &TokenSequence) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::UnanswerableQuery);
        }
        let (x, len) = self.input_for_query(tokens);
        Ok(forward(&self.layout, &self.params, &x, len, self.config.max_len, None).probs)
    }

    pub fn embedding(&self) -> Option<&Arc<EmbeddingModel>> {
        self.embedding.as_ref()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            dim: self.layout.d,
            class_index: self.class_index.clone(),
            vocab: self.vocab.clone(),
            embedding_fingerprint: self.embedding_fingerprint.clone(),
            seed: self.seed,
            summary: self.summary.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(json.len() as u64).to_le_bytes());
        b.extend_from_slice(&json);
        put_f64s(&mut b, &self.table);
        put_f64s(&mut b, &self.params);
        b
    }

    /// Rebuilds a model; `embedding` is the model used for OOV composition
    /// and must have the same dimension the ranker was trained with.
    pub fn from_bytes(bytes: &[u8], embedding: Option<Arc<EmbeddingModel>>) -> Result<RecommenderModel> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::BadModel("not a recommender model".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::BadModel(format!("unsupported recommender version {version}")));
        }
        let hlen = r.u64()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::BadModel(format!("header: {e}")))?;
        let table = r.f64s()?;
        let params = r.f64s()?;
        if !r.at_end() {
            return Err(Error::BadModel("trailing bytes".into()));
        }
        if let Some(e) = &embedding {
            if e.dim() != header.dim {
                return Err(Error::BadModel(format!(
                    "embedding dimension {} does not match ranker dimension {}",
                    e.dim(),
                    header.dim
                )));
            }
            if e.fingerprint() != header.embedding_fingerprint {
                log::warn!("embedding model differs from the one the ranker was trained with");
            }
        }
        let layout = Layout::new(&header.config, header.dim, header.class_index.len());
        if params.len() != layout.total || table.len() != (header.vocab.len() + 1) * header.dim {
            return Err(Error::BadModel("tensor sizes do not match header".into()));
        }
        let vocab_ids = header.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        Ok(RecommenderModel {
            config: header.config,
            class_index: header.class_index,
            vocab: header.vocab,
            table,
            seed: header.seed,
            summary: header.summary,
            embedding_fingerprint: header.embedding_fingerprint,
            params,
            layout,
            vocab_ids,
            embedding,
        })
    }

    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a64(&self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, embedding: Option<Arc<EmbeddingModel>>) -> Result<RecommenderModel> {
        let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&b, embedding)
    }
}

const MAGIC: &[u8; 4] = b"SWCN";
const VERSION: u32 = 1;

impl Ranker for RecommenderModel {
    fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    fn scores(&self, query: &TokenSequence) -> Result<Vec<f64>> {
        self.probabilities(query)
    }
}

pub fn predict_topk(model: &RecommenderModel, tokens: &TokenSequence, k: usize) -> Result<Vec<RankedResult>> {
    let p = model.probabilities(tokens)?;
    top_k(&p, &model.class_index, k)
}

/// Backprop against central differences on a micro configuration.
pub mod gradcheck {
    use super::*;

    pub fn micro_config() -> CnnConfig {
        CnnConfig {
            windows: vec![2, 3],
            filters: 2,
            hidden: 5,
            max_len: 6,
            dropout: 0.0,
            l2: 1e-3,
            ..CnnConfig::default()
        }
    }

    /// Mean cross-entropy plus L2, the objective of one batch.
    fn batch_loss(lay: &Layout, cfg: &CnnConfig, p: &[f64], table: &[f64], batch: &[(Vec<usize>, usize)]) -> f64 {
        let d = lay.d;
        let mut loss = 0.0;
        for (ids, label) in batch {
            let mut x = vec![0.0; cfg.max_len * d];
            for (pos, &id) in ids.iter().enumerate() {
                x[pos * d..(pos + 1) * d].copy_from_slice(&table[id * d..(id + 1) * d]);
            }
            let pass = forward(lay, p, &x, ids.len(), cfg.max_len, None);
            loss -= pass.probs[*label].ln();
        }
        loss /= batch.len() as f64;
        for r in lay.weight_ranges() {
            loss += cfg.l2 * p[r].iter().map(|w| w * w).sum::<f64>();
        }
        loss
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            0.0
        } else {
            diff / norm
        }
    }

    /// Largest relative error, over every parameter tensor and the embedding
    /// table, between backprop and central differences on the micro config.
    pub fn max_relative_error(seed: u64) -> f64 {
        let cfg = micro_config();
        let (d, classes, vocab) = (4, 3, 5);
        let lay = Layout::new(&cfg, d, classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = lay.glorot_init(&mut rng);
        for r in lay.conv_b.iter().chain([&lay.b1, &lay.b2]) {
            for x in &mut p[r.clone()] {
                *x = rng.random_range(-0.1..0.1);
            }
        }
        let mut table: Vec<f64> = (0..(vocab + 1) * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        table[..d].iter_mut().for_each(|x| *x = 0.0);
        let batch: Vec<(Vec<usize>, usize)> = vec![(vec![1, 2, 3], 0), (vec![4, 5], 1), (vec![2, 2, 5, 1, 3, 4], 2), (vec![3], 1)];

        let mut g = vec![0.0; lay.total];
        let mut gt = vec![0.0; table.len()];
        let scale = 1.0 / batch.len() as f64;
        for (ids, label) in &batch {
            let mut x = vec![0.0; cfg.max_len * d];
            for (pos, &id) in ids.iter().enumerate() {
                x[pos * d..(pos + 1) * d].copy_from_slice(&table[id * d..(id + 1) * d]);
            }
            let pass = forward(&lay, &p, &x, ids.len(), cfg.max_len, None);
            let mut gx = vec![0.0; x.len()];
            backward(&lay, &p, &x, ids.len(), &pass, *label, scale, &mut g, Some(&mut gx));
            for (pos, &id) in ids.iter().enumerate() {
                for k in 0..d {
                    gt[id * d + k] += gx[pos * d + k];
                }
            }
        }
        for r in lay.weight_ranges() {
            for i in r {
                g[i] += 2.0 * cfg.l2 * p[i];
            }
        }

        let eps = 1e-6;
        let mut num = vec![0.0; lay.total];
        for i in 0..lay.total {
            let keep = p[i];
            p[i] = keep + eps;
            let up = batch_loss(&lay, &cfg, &p, &table, &batch);
            p[i] = keep - eps;
            let down = batch_loss(&lay, &cfg, &p, &table, &batch);
            p[i] = keep;
            num[i] = (up - down) / (2.0 * eps);
        }
        let mut numt = vec![0.0; table.len()];
        for i in d..table.len() {
            let keep = table[i];
            table[i] = keep + eps;
            let up = batch_loss(&lay, &cfg, &p, &table, &batch);
            table[i] = keep - eps;
            let down = batch_loss(&lay, &cfg, &p, &table, &batch);
            table[i] = keep;
            numt[i] = (up - down) / (2.0 * eps);
        }
        let mut worst: f64 = rel_err(&gt, &numt);
        let mut ranges = lay.conv_w.clone();
        ranges.extend(lay.conv_b.iter().cloned());
        ranges.extend([lay.w1.clone(), lay.b1.clone(), lay.w2.clone(), lay.b2.clone()]);
        for r in ranges {
            worst = worst.max(rel_err(&g[r.clone()], &num[r]));
        }
        worst
    }
}
