//! The unified API corpus: per-tool documents, records, and clusters of APIs
//! within one tool that share an identical processed description.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::fnv1a64_fields;
use crate::textprep::{preprocess_text, Lexicons, TokenSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatKind {
    StructuredRest,
    StructuredCodeApi,
    TabularCommands,
}

/// One entry as extracted from a vendor document, before validation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEntry {
    pub signature: String,
    pub description: Option<String>,
    pub parameters: Option<String>,
    pub returns: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub tool_id: String,
    pub doc_id: String,
    pub format_kind: FormatKind,
    pub entries: Vec<RawEntry>,
}

impl SourceDocument {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Error::InvalidDocument {
            tool: self.tool_id.clone(),
            doc: self.doc_id.clone(),
            msg,
        };
        if self.tool_id.trim().is_empty() || self.doc_id.trim().is_empty() {
            return Err(err("empty tool or document id".into()));
        }
        if let Some(i) = self.entries.iter().position(|e| e.signature.trim().is_empty()) {
            return Err(err(format!("entry {i} has an empty signature")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiRecord {
    pub record_id: String,
    pub tool_id: String,
    pub doc_id: String,
    pub format_kind: FormatKind,
    pub signature: String,
    pub description_raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description_tokens: Option<TokenSequence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub returns: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<String>,
}

/// Content hash of (tool, doc, signature), rendered as 16 hex digits.
pub fn record_id(tool_id: &str, doc_id: &str, signature: &str) -> String {
    format!(
        "{:016x}",
        fnv1a64_fields(&[tool_id.as_bytes(), doc_id.as_bytes(), signature.as_bytes()])
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedEntry {
    pub tool_id: String,
    pub doc_id: String,
    pub position: usize,
    pub signature: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ingested {
    pub records: Vec<ApiRecord>,
    pub rejected: Vec<RejectedEntry>,
}

fn nonblank(s: &Option<String>) -> Option<String> {
    s.as_ref().map(|s| s.trim()).filter(|s| !s.is_empty()).map(str::to_string)
}

pub fn ingest_document(doc: &SourceDocument) -> Result<Ingested> {
    doc.validate()?;
    let mut out = Ingested::default();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (pos, e) in doc.entries.iter().enumerate() {
        let sig = e.signature.trim();
        if seen.insert(sig, pos).is_some() {
            return Err(Error::DuplicateSignature {
                tool: doc.tool_id.clone(),
                doc: doc.doc_id.clone(),
                signature: sig.to_string(),
                position: pos,
            });
        }
        let Some(desc) = nonblank(&e.description) else {
            out.rejected.push(RejectedEntry {
                tool_id: doc.tool_id.clone(),
                doc_id: doc.doc_id.clone(),
                position: pos,
                signature: sig.to_string(),
                reason: "missing description".into(),
            });
            continue;
        };
        out.records.push(ApiRecord {
            record_id: record_id(&doc.tool_id, &doc.doc_id, sig),
            tool_id: doc.tool_id.clone(),
            doc_id: doc.doc_id.clone(),
            format_kind: doc.format_kind,
            signature: sig.to_string(),
            description_raw: desc,
            description_tokens: None,
            parameters: nonblank(&e.parameters),
            returns: nonblank(&e.returns),
            cluster_id: None,
        });
    }
    Ok(out)
}

/// How the members of a cluster differ from each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterCategory {
    /// Same method and representation, different class.
    SameMethod = 1,
    /// Same class and representation, different method.
    SameClass = 2,
    /// Same class, method and representation; parameters differ.
    SameClassAndMethod = 3,
    /// Different representations.
    CrossRepresentation = 4,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCluster {
    pub cluster_id: String,
    pub tool_id: String,
    pub member_record_ids: Vec<String>,
    pub canonical_tokens: TokenSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<ClusterCategory>,
}

/// What a recommendation shows for one class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterView {
    pub cluster_id: String,
    pub tool: String,
    pub signatures: Vec<String>,
    pub description: String,
    pub parameters: Vec<String>,
    pub returns: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CorpusData {
    records: Vec<ApiRecord>,
    clusters: Vec<ApiCluster>,
    class_index: Vec<String>,
}

/// Records plus, once clustered, the class index. Class `i` is
/// `clusters[i]` and `class_index[i]` is its cluster id.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(try_from = "CorpusData", into = "CorpusData")]
pub struct Corpus {
    records: Vec<ApiRecord>,
    clusters: Vec<ApiCluster>,
    class_index: Vec<String>,
    record_pos: HashMap<String, usize>,
    class_of_record: HashMap<String, usize>,
    class_of_cluster: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.clusters == other.clusters && self.class_index == other.class_index
    }
}

impl From<Corpus> for CorpusData {
    fn from(c: Corpus) -> Self {
        CorpusData {
            records: c.records,
            clusters: c.clusters,
            class_index: c.class_index,
        }
    }
}

impl TryFrom<CorpusData> for Corpus {
    type Error = Error;
    fn try_from(d: CorpusData) -> Result<Self> {
        Corpus::from_parts(d.records, d.clusters)
    }
}

impl Corpus {
    fn from_parts(records: Vec<ApiRecord>, clusters: Vec<ApiCluster>) -> Result<Corpus> {
        let mut record_pos = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if record_pos.insert(r.record_id.clone(), i).is_some() {
                return Err(Error::RecordIdCollision(r.record_id.clone()));
            }
        }
        let mut class_of_record = HashMap::new();
        let mut class_of_cluster = HashMap::new();
        for (c, cl) in clusters.iter().enumerate() {
            class_of_cluster.insert(cl.cluster_id.clone(), c);
            for m in &cl.member_record_ids {
                let r = record_pos
                    .get(m)
                    .map(|&i| &records[i])
                    .ok_or_else(|| Error::Invalid(format!("cluster {} names unknown record {m}", cl.cluster_id)))?;
                if r.tool_id != cl.tool_id {
                    return Err(Error::Invalid(format!("cluster {} spans tools", cl.cluster_id)));
                }
                if class_of_record.insert(m.clone(), c).is_some() {
                    return Err(Error::Invalid(format!("record {m} is in two clusters")));
                }
            }
        }
        if !clusters.is_empty() && class_of_record.len() != records.len() {
            return Err(Error::Invalid("some records belong to no cluster".into()));
        }
        let class_index = clusters.iter().map(|c| c.cluster_id.clone()).collect();
        Ok(Corpus {
            records,
            clusters,
            class_index,
            record_pos,
            class_of_record,
            class_of_cluster,
        })
    }

    pub fn records(&self) -> &[ApiRecord] {
        &self.records
    }

    pub fn clusters(&self) -> &[ApiCluster] {
        &self.clusters
    }

    pub fn class_index(&self) -> &[String] {
        &self.class_index
    }

    pub fn num_classes(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_clustered(&self) -> bool {
        !self.clusters.is_empty()
    }

    pub fn record(&self, record_id: &str) -> Option<&ApiRecord> {
        self.record_pos.get(record_id).map(|&i| &self.records[i])
    }

    pub fn class_of_record(&self, record_id: &str) -> Option<usize> {
        self.class_of_record.get(record_id).copied()
    }

    pub fn class_of_cluster(&self, cluster_id: &str) -> Option<usize> {
        self.class_of_cluster.get(cluster_id).copied()
    }

    /// Processed description of a class.
    pub fn class_tokens(&self, class: usize) -> &TokenSequence {
        &self.clusters[class].canonical_tokens
    }

    /// The record whose description stands for the class: its first member.
    pub fn class_representative(&self, class: usize) -> &ApiRecord {
        self.record(&self.clusters[class].member_record_ids[0])
            .expect("cluster members exist")
    }

    pub fn tools(&self) -> Vec<String> {
        let mut t: Vec<String> = self.records.iter().map(|r| r.tool_id.clone()).collect();
        t.sort();
        t.dedup();
        t
    }

    pub fn classes_of_tool(&self, tool: &str) -> Vec<usize> {
        (0..self.clusters.len()).filter(|&c| self.clusters[c].tool_id == tool).collect()
    }

    pub fn cluster_view(&self, class: usize) -> ClusterView {
        let cl = &self.clusters[class];
        let members: Vec<&ApiRecord> = cl.member_record_ids.iter().filter_map(|m| self.record(m)).collect();
        ClusterView {
            cluster_id: cl.cluster_id.clone(),
            tool: cl.tool_id.clone(),
            signatures: members.iter().map(|r| r.signature.clone()).collect(),
            description: members[0].description_raw.clone(),
            parameters: members.iter().filter_map(|r| r.parameters.clone()).collect(),
            returns: members.iter().filter_map(|r| r.returns.clone()).collect(),
        }
    }

    /// Every record becomes its own class, ignoring shared descriptions.
    pub fn singleton_classes(&self) -> Result<Corpus> {
        let mut records = self.records.clone();
        let mut clusters = Vec::with_capacity(records.len());
        for r in &mut records {
            let tokens = r
                .description_tokens
                .clone()
                .ok_or_else(|| Error::MissingTokens(r.record_id.clone()))?;
            let id = format!("{}-r{}", r.tool_id, r.record_id);
            r.cluster_id = Some(id.clone());
            clusters.push(ApiCluster {
                cluster_id: id,
                tool_id: r.tool_id.clone(),
                member_record_ids: vec![r.record_id.clone()],
                canonical_tokens: tokens,
                category: None,
            });
        }
        Corpus::from_parts(records, clusters)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::Invalid(e.to_string()))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Corpus> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Union of all documents' records, keyed by record id. Records stay in
/// document order; no clusters are formed yet.
pub fn merge_corpora(docs: &[SourceDocument]) -> Result<(Corpus, Vec<RejectedEntry>)> {
    let mut records: Vec<ApiRecord> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut rejected = Vec::new();
    let mut seen_docs = std::collections::HashSet::new();
    for doc in docs {
        let ing = ingest_document(doc)?;
        if seen_docs.insert((doc.tool_id.clone(), doc.doc_id.clone())) {
            rejected.extend(ing.rejected);
        }
        for r in ing.records {
            match by_id.get(&r.record_id) {
                Some(&i) if records[i] == r => {}
                Some(_) => return Err(Error::RecordIdCollision(r.record_id)),
                None => {
                    by_id.insert(r.record_id.clone(), records.len());
                    records.push(r);
                }
            }
        }
    }
    Ok((Corpus::from_parts(records, Vec::new())?, rejected))
}

/// Fills `description_tokens` of every record.
pub fn preprocess_corpus(corpus: &Corpus, lex: &Lexicons) -> Corpus {
    let mut records = corpus.records.clone();
    for r in &mut records {
        r.description_tokens = Some(preprocess_text(&r.description_raw, lex));
    }
    let mut c = corpus.clone();
    c.records = records;
    c
}

/// Groups records by (tool, processed description). Classes are numbered in
/// order of each group's first record.
pub fn cluster_apis(corpus: &Corpus) -> Result<Corpus> {
    let mut records = corpus.records.clone();
    let mut groups: Vec<(String, TokenSequence, Vec<usize>)> = Vec::new();
    let mut key_pos: HashMap<(String, TokenSequence), usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let tokens = r
            .description_tokens
            .clone()
            .ok_or_else(|| Error::MissingTokens(r.record_id.clone()))?;
        let key = (r.tool_id.clone(), tokens);
        match key_pos.get(&key) {
            Some(&g) => groups[g].2.push(i),
            None => {
                key_pos.insert(key.clone(), groups.len());
                groups.push((key.0, key.1, vec![i]));
            }
        }
    }
    let mut ids = HashMap::new();
    let mut clusters = Vec::with_capacity(groups.len());
    for (tool, tokens, members) in groups {
        let joined = tokens.join();
        let id = format!(
            "{tool}-{:016x}",
            fnv1a64_fields(&[tool.as_bytes(), joined.as_bytes()])
        );
        if ids.insert(id.clone(), joined.clone()).is_some() {
            return Err(Error::Invalid(format!("cluster id collision {id}")));
        }
        let category = if members.len() > 1 {
            categorize(&members.iter().map(|&i| &records[i]).collect::<Vec<_>>())
        } else {
            None
        };
        for &i in &members {
            records[i].cluster_id = Some(id.clone());
        }
        clusters.push(ApiCluster {
            cluster_id: id,
            tool_id: tool,
            member_record_ids: members.iter().map(|&i| records[i].record_id.clone()).collect(),
            canonical_tokens: tokens,
            category,
        });
    }
    Corpus::from_parts(records, clusters)
}

/// (class, method, parameters) parsed from a code signature such as
/// `pymisp.PyMISP.get_community(community, pythonify=False)`.
fn split_signature(sig: &str) -> (String, String, String) {
    let (head, params) = match sig.find('(') {
        Some(p) => (&sig[..p], sig[p..].trim()),
        None => (sig, ""),
    };
    let head = head.split_whitespace().last().unwrap_or(head);
    match head.rfind('.') {
        Some(p) => (head[..p].to_string(), head[p + 1..].to_string(), params.to_string()),
        None => (String::new(), head.to_string(), params.to_string()),
    }
}

fn categorize(members: &[&ApiRecord]) -> Option<ClusterCategory> {
    let kind = members[0].format_kind;
    if members.iter().any(|r| r.format_kind != kind) {
        return Some(ClusterCategory::CrossRepresentation);
    }
    let parts: Vec<_> = members.iter().map(|r| split_signature(&r.signature)).collect();
    let same_class = !parts[0].0.is_empty() && parts.iter().all(|p| p.0 == parts[0].0);
    let same_method = parts.iter().all(|p| p.1 == parts[0].1);
    match (same_class, same_method) {
        (true, true) => Some(ClusterCategory::SameClassAndMethod),
        (false, true) => Some(ClusterCategory::SameMethod),
        (true, false) => Some(ClusterCategory::SameClass),
        (false, false) => None,
    }
}

/// One line of the corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub tool: String,
    pub doc: String,
    #[serde(default = "default_kind")]
    pub format_kind: FormatKind,
    pub signature: String,
    pub description: Option<String>,
    #[serde(default)]
    pub parameters: Option<String>,
    #[serde(default)]
    pub returns: Option<String>,
}

fn default_kind() -> FormatKind {
    FormatKind::StructuredCodeApi
}

/// Writes documents as one JSON object per entry.
pub fn write_corpus_file(docs: &[SourceDocument], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for d in docs {
        for e in &d.entries {
            let line = CorpusLine {
                tool: d.tool_id.clone(),
                doc: d.doc_id.clone(),
                format_kind: d.format_kind,
                signature: e.signature.clone(),
                description: e.description.clone(),
                parameters: e.parameters.clone(),
                returns: e.returns.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| Error::Invalid(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a corpus file back into documents, grouped by (tool, doc) in order
/// of first appearance.
pub fn read_corpus_file(path: &Path) -> Result<Vec<SourceDocument>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs: Vec<SourceDocument> = Vec::new();
    let mut pos: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: CorpusLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let key = (l.tool.clone(), l.doc.clone());
        let idx = *pos.entry(key).or_insert_with(|| {
            docs.push(SourceDocument {
                tool_id: l.tool.clone(),
                doc_id: l.doc.clone(),
                format_kind: l.format_kind,
                entries: Vec::new(),
            });
            docs.len() - 1
        });
        docs[idx].entries.push(RawEntry {
            signature: l.signature,
            description: l.description,
            parameters: l.parameters,
            returns: l.returns,
        });
    }
    Ok(docs)
}
