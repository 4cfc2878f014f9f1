//! Word-embedding similarity weighted by IDF, over un-augmented class
//! descriptions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::corpus::Corpus;
use crate::embedding::{train_embedding, EmbeddingConfig, EmbeddingModel};
use crate::error::{Error, Result};
use crate::ranking::Ranker;
use crate::textprep::TokenSequence;

pub struct BaselineIndex {
    pub embedding: EmbeddingModel,
    pub idf: BTreeMap<String, f64>,
    pub class_index: Vec<String>,
    pub descriptions: Vec<TokenSequence>,
    /// Unit vectors of vocabulary words.
    unit: BTreeMap<String, Vec<f64>>,
}

fn unit_vectors(model: &EmbeddingModel) -> BTreeMap<String, Vec<f64>> {
    model
        .vocab
        .words
        .iter()
        .map(|w| {
            let mut v = model.embed_word(w);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
            (w.clone(), v)
        })
        .collect()
}

/// ln(N / df) over a set of documents.
pub fn idf_table(docs: &[TokenSequence]) -> BTreeMap<String, f64> {
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for d in docs {
        let mut seen: Vec<&str> = d.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for w in seen {
            *df.entry(w).or_default() += 1;
        }
    }
    let n = docs.len() as f64;
    df.into_iter().map(|(w, c)| (w.to_string(), (n / c as f64).ln())).collect()
}

/// Trains a word-level embedding (subwords off) on the class descriptions.
pub fn build_baseline_index(corpus: &Corpus, cfg: &EmbeddingConfig, seed: u64) -> Result<BaselineIndex> {
    if corpus.num_classes() == 0 {
        return Err(Error::Empty("corpus"));
    }
    let descriptions: Vec<TokenSequence> = (0..corpus.num_classes()).map(|c| corpus.class_tokens(c).clone()).collect();
    let cfg = EmbeddingConfig {
        subwords: false,
        ..cfg.clone()
    };
    let embedding = train_embedding(&descriptions, &cfg, seed)?;
    Ok(BaselineIndex::from_parts(
        embedding,
        idf_table(&descriptions),
        corpus.class_index().to_vec(),
        descriptions,
    ))
}

impl BaselineIndex {
    pub fn from_parts(
        embedding: EmbeddingModel,
        idf: BTreeMap<String, f64>,
        class_index: Vec<String>,
        descriptions: Vec<TokenSequence>,
    ) -> Self {
        let unit = unit_vectors(&embedding);
        BaselineIndex {
            embedding,
            idf,
            class_index,
            descriptions,
            unit,
        }
    }

    pub fn ndocs(&self) -> usize {
        self.descriptions.len()
    }

    /// Words never seen in a description weigh as if seen once.
    pub fn idf_of(&self, w: &str) -> f64 {
        self.idf
            .get(w)
            .copied()
            .unwrap_or_else(|| (self.ndocs() as f64).ln())
    }

    /// Identical words match with 1; words outside the vocabulary match
    /// nothing else.
    pub fn word_cosine(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        match (self.unit.get(a), self.unit.get(b)) {
            (Some(x), Some(y)) => x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0),
            _ => 0.0,
        }
    }

    fn directed(&self, from: &[String], to: &[String]) -> f64 {
        let mut num = 0.0;
        let mut mass = 0.0;
        for w in from {
            let idf = self.idf_of(w);
            let best = to.iter().map(|v| self.word_cosine(w, v)).fold(f64::NEG_INFINITY, f64::max);
            if best.is_finite() {
                num += idf * best;
            }
            mass += idf;
        }
        if mass > 0.0 {
            num / mass
        } else {
            0.0
        }
    }

    /// Mean of the two directed IDF-weighted best-match cosines.
    pub fn similarity(&self, a: &[String], b: &[String]) -> f64 {
        0.5 * (self.directed(a, b) + self.directed(b, a))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.embedding.save(&dir.join("embedding.bin"))?;
        let idf_path = dir.join("idf.tsv");
        let mut s = String::new();
        for (w, v) in &self.idf {
            s.push_str(&format!("{w}\t{v:?}\n"));
        }
        std::fs::write(&idf_path, s).map_err(|e| Error::io(&idf_path, e))?;
        let desc_path = dir.join("descriptions.jsonl");
        let mut f = std::fs::File::create(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
        for (c, d) in self.class_index.iter().zip(&self.descriptions) {
            let line = serde_json::json!({"cluster_id": c, "tokens": d});
            writeln!(f, "{line}").map_err(|e| Error::io(&desc_path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<BaselineIndex> {
        let embedding = EmbeddingModel::load(&dir.join("embedding.bin"))?;
        let idf_path = dir.join("idf.tsv");
        let text = std::fs::read_to_string(&idf_path).map_err(|e| Error::io(&idf_path, e))?;
        let mut idf = BTreeMap::new();
        for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let parsed = l.split_once('\t').and_then(|(w, v)| Some((w.to_string(), v.parse::<f64>().ok()?)));
            let (w, v) = parsed.ok_or_else(|| Error::Parse {
                path: idf_path.clone(),
                line: i + 1,
                msg: "expected word<TAB>value".into(),
            })?;
            idf.insert(w, v);
        }
        let desc_path = dir.join("descriptions.jsonl");
        let text = std::fs::read_to_string(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
        let mut class_index = Vec::new();
        let mut descriptions = Vec::new();
        #[derive(serde::Deserialize)]
        struct Row {
            cluster_id: String,
            tokens: TokenSequence,
        }
        for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let r: Row = serde_json::from_str(l).map_err(|e| Error::Parse {
                path: desc_path.clone(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            class_index.push(r.cluster_id);
            descriptions.push(r.tokens);
        }
        Ok(BaselineIndex::from_parts(embedding, idf, class_index, descriptions))
    }
}

impl Ranker for BaselineIndex {
    fn num_classes(&self) -> usize {
        self.descriptions.len()
    }

    fn scores(&self, query: &TokenSequence) -> Result<Vec<f64>> {
        if query.is_empty() {
            return Err(Error::UnanswerableQuery);
        }
        Ok(self
            .descriptions
            .iter()
            .map(|d| self.similarity(query.tokens(), d.tokens()))
            .collect())
    }
}
