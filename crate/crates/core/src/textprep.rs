//! Description and query normalization: noise removal, lower-casing,
//! stop-word removal and lemmatization, plus the noun-candidate workflow that
//! grows the immutable-word corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Lower-case tokens over `[a-z0-9_-]`, none of them stop words.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    /// Wraps tokens without normalizing them. Callers outside this module
    /// should normally go through [`preprocess_text`].
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        TokenSequence(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.join())
    }
}

impl<'a> IntoIterator for &'a TokenSequence {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Coarse universal part-of-speech tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
    Adp,
    Num,
    Pron,
    Det,
    Conj,
    Prt,
    Other,
}

impl Pos {
    fn parse(s: &str) -> Option<Pos> {
        Some(match s {
            "NOUN" => Pos::Noun,
            "VERB" => Pos::Verb,
            "ADJ" => Pos::Adj,
            "ADV" => Pos::Adv,
            "ADP" => Pos::Adp,
            "NUM" => Pos::Num,
            "PRON" => Pos::Pron,
            "DET" => Pos::Det,
            "CONJ" => Pos::Conj,
            "PRT" => Pos::Prt,
            "X" | "OTHER" => Pos::Other,
            _ => return None,
        })
    }
}

const STOPWORDS: &str = include_str!("../data/lexicons/stopwords.txt");
const LEMMA_EXCEPTIONS: &str = include_str!("../data/lexicons/lemma_exceptions.txt");
const BASE_WORDS: &str = include_str!("../data/lexicons/base_words.txt");
const POS_LEXICON: &str = include_str!("../data/lexicons/pos_lexicon.txt");
const MISSPELLINGS: &str = include_str!("../data/lexicons/misspellings.txt");
const THESAURUS: &str = include_str!("../data/lexicons/thesaurus.txt");
const PARAPHRASES: &str = include_str!("../data/lexicons/paraphrases.txt");
const IMMUTABLE: &str = include_str!("../data/lexicons/immutable.txt");

fn bundled_text(name: &str) -> &'static str {
    match name {
        "stopwords.txt" => STOPWORDS,
        "lemma_exceptions.txt" => LEMMA_EXCEPTIONS,
        "base_words.txt" => BASE_WORDS,
        "pos_lexicon.txt" => POS_LEXICON,
        "misspellings.txt" => MISSPELLINGS,
        "thesaurus.txt" => THESAURUS,
        "paraphrases.txt" => PARAPHRASES,
        other => panic!("no bundled lexicon {other}"),
    }
}

/// Word lists and tables backing preprocessing and augmentation.
#[derive(Clone, Debug, Default)]
pub struct Lexicons {
    pub stop_words: BTreeSet<String>,
    pub lemma_exceptions: BTreeMap<String, String>,
    pub base_words: BTreeSet<String>,
    pub pos: BTreeMap<String, Pos>,
    pub misspellings: BTreeMap<String, Vec<String>>,
    pub thesaurus: BTreeMap<String, Vec<String>>,
    pub paraphrases: BTreeMap<String, Vec<String>>,
}

impl Lexicons {
    /// The lexicons compiled into the library.
    pub fn bundled() -> Lexicons {
        Self::parse_all(|name| Ok(bundled_text(name).to_string()), Path::new("<bundled>"))
            .expect("bundled lexicons are valid")
    }

    /// Loads every lexicon file from `dir`. Missing files fall back to the
    /// bundled copy so a deployment can override just the stop list.
    pub fn load_dir(dir: &Path) -> Result<Lexicons> {
        Self::parse_all(
            |name| {
                let p = dir.join(name);
                if p.exists() {
                    std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
                } else {
                    Ok(bundled_text(name).to_string())
                }
            },
            dir,
        )
    }

    fn parse_all(read: impl Fn(&str) -> Result<String>, dir: &Path) -> Result<Lexicons> {
        let f = |n: &str| -> Result<(String, std::path::PathBuf)> { Ok((read(n)?, dir.join(n))) };
        let (t, p) = f("stopwords.txt")?;
        let stop_words = parse_words(&t, &p)?;
        let (t, p) = f("base_words.txt")?;
        let base_words = parse_words(&t, &p)?;
        let (t, p) = f("lemma_exceptions.txt")?;
        let lemma_exceptions = parse_table(&t, &p, |v| Ok(v.trim().to_string()))?;
        let (t, p) = f("pos_lexicon.txt")?;
        let pos = parse_table(&t, &p, |v| {
            Pos::parse(v.trim()).ok_or_else(|| format!("unknown tag {v:?}"))
        })?;
        let (t, p) = f("misspellings.txt")?;
        let misspellings = parse_table(&t, &p, |v| {
            Ok(v.split_whitespace().map(str::to_string).collect())
        })?;
        let (t, p) = f("thesaurus.txt")?;
        let thesaurus = parse_table(&t, &p, split_commas)?;
        let (t, p) = f("paraphrases.txt")?;
        let paraphrases = parse_table(&t, &p, split_commas)?;
        let lex = Lexicons {
            stop_words,
            lemma_exceptions,
            base_words,
            pos,
            misspellings,
            thesaurus,
            paraphrases,
        };
        lex.validate().map_err(|msg| Error::Parse {
            path: dir.to_path_buf(),
            line: 0,
            msg,
        })?;
        Ok(lex)
    }

    /// Checks that lemma targets are base words or self-mapped, and that no
    /// target is itself redirected elsewhere (which would break idempotence).
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (w, l) in &self.lemma_exceptions {
            if l != w && !self.base_words.contains(l) {
                return Err(format!("lemma target {l:?} of {w:?} is not a base word"));
            }
            if let Some(next) = self.lemma_exceptions.get(l) {
                if next != l {
                    return Err(format!("lemma target {l:?} is redirected to {next:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn pos_of(&self, word: &str) -> Pos {
        self.pos.get(word).copied().unwrap_or(Pos::Noun)
    }
}

fn split_commas(v: &str) -> std::result::Result<Vec<String>, String> {
    Ok(v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect())
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn check_lower(word: &str, path: &Path, line: usize) -> Result<()> {
    if word.chars().any(|c| c.is_uppercase()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("entry {word:?} is not lower-case"),
        });
    }
    Ok(())
}

fn parse_words(text: &str, path: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for (line, l) in content_lines(text) {
        for w in l.split_whitespace() {
            check_lower(w, path, line)?;
            out.insert(w.to_string());
        }
    }
    Ok(out)
}

fn parse_table<V>(
    text: &str,
    path: &Path,
    value: impl Fn(&str) -> std::result::Result<V, String>,
) -> Result<BTreeMap<String, V>> {
    let mut out = BTreeMap::new();
    for (line, l) in content_lines(text) {
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let (k, v) = l
            .split_once('\t')
            .ok_or_else(|| err("expected word<TAB>value".into()))?;
        let k = k.trim();
        check_lower(k, path, line)?;
        out.insert(k.to_string(), value(v).map_err(err)?);
    }
    Ok(out)
}

/// Maps an inflected word to its root form.
pub trait Lemmatizer {
    fn lemmatize(&self, word: &str) -> String;
}

/// Exception table, then suffix rules whose output must be a base word.
pub struct RuleLemmatizer<'a> {
    lex: &'a Lexicons,
}

impl<'a> RuleLemmatizer<'a> {
    pub fn new(lex: &'a Lexicons) -> Self {
        RuleLemmatizer { lex }
    }

    fn candidates(word: &str) -> Vec<String> {
        let mut c = Vec::new();
        if let Some(stem) = word.strip_suffix("ies") {
            if !stem.is_empty() {
                c.push(format!("{stem}y"));
            }
        }
        if let Some(stem) = word.strip_suffix("es") {
            c.push(stem.to_string());
        }
        if word.ends_with('s') && !word.ends_with("ss") {
            c.push(word[..word.len() - 1].to_string());
        }
        for suffix in ["ing", "ed"] {
            if let Some(stem) = word.strip_suffix(suffix) {
                if suffix == "ed" {
                    if let Some(s) = stem.strip_suffix('i') {
                        c.push(format!("{s}y"));
                    }
                }
                c.push(stem.to_string());
                c.push(format!("{stem}e"));
                let b = stem.as_bytes();
                if b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] {
                    c.push(stem[..stem.len() - 1].to_string());
                }
            }
        }
        c
    }
}

impl Lemmatizer for RuleLemmatizer<'_> {
    fn lemmatize(&self, word: &str) -> String {
        let lex = self.lex;
        if let Some(l) = lex.lemma_exceptions.get(word) {
            return l.clone();
        }
        if lex.base_words.contains(word) {
            return word.to_string();
        }
        for cand in Self::candidates(word) {
            if !cand.is_empty() && lex.base_words.contains(&cand) {
                return lex.lemma_exceptions.get(&cand).cloned().unwrap_or(cand);
            }
        }
        word.to_string()
    }
}

/// Dotted single-letter abbreviations such as "e.g." or "i.e.".
static ABBREVIATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:[A-Za-z]\.){2,}").expect("valid regex"));

fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// Noise removal: collapse dotted abbreviations, then turn every character
/// outside `[A-Za-z0-9_-]` into a separator. Tokens made only of `-`/`_`
/// carry no content and are dropped.
pub fn remove_noise(raw: &str) -> Vec<String> {
    let collapsed = ABBREVIATION.replace_all(raw, |c: &regex::Captures<'_>| c[0].replace('.', ""));
    collapsed
        .split(|c: char| !is_token_char(c))
        .filter(|t| t.chars().any(|c| c.is_ascii_alphanumeric()))
        .map(str::to_string)
        .collect()
}

pub fn preprocess_with(raw: &str, lex: &Lexicons, lemmatizer: &dyn Lemmatizer) -> TokenSequence {
    let mut out = Vec::new();
    for tok in remove_noise(raw) {
        let lower = tok.to_ascii_lowercase();
        if lex.stop_words.contains(&lower) {
            continue;
        }
        let lemma = lemmatizer.lemmatize(&lower);
        if lex.stop_words.contains(&lemma) {
            continue;
        }
        out.push(lemma);
    }
    TokenSequence(out)
}

pub fn preprocess_text(raw: &str, lex: &Lexicons) -> TokenSequence {
    preprocess_with(raw, lex, &RuleLemmatizer::new(lex))
}

/// Queries go through exactly the same pipeline as descriptions.
pub fn preprocess_query(raw: &str, lex: &Lexicons) -> TokenSequence {
    preprocess_text(raw, lex)
}

/// Domain words that augmentation must never alter.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImmutableCorpus {
    pub words: BTreeSet<String>,
    pub provenance: BTreeMap<String, BTreeSet<String>>,
}

impl ImmutableCorpus {
    pub fn bundled() -> ImmutableCorpus {
        Self::parse(IMMUTABLE, Path::new("<bundled>/immutable.txt")).expect("bundled list is valid")
    }

    pub fn load(path: &Path) -> Result<ImmutableCorpus> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<ImmutableCorpus> {
        let mut ic = ImmutableCorpus::default();
        for (line, l) in content_lines(text) {
            let (w, tools) = l.split_once('\t').unwrap_or((l, ""));
            let w = w.trim();
            if w.is_empty() || !w.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-') {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("{w:?} is not a single lower-case token"),
                });
            }
            ic.words.insert(w.to_string());
            let prov = ic.provenance.entry(w.to_string()).or_default();
            prov.extend(tools.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::to_string));
        }
        Ok(ic)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::from("# word<TAB>tools\n");
        for w in &self.words {
            s.push_str(w);
            if let Some(p) = self.provenance.get(w).filter(|p| !p.is_empty()) {
                s.push('\t');
                s.push_str(&p.iter().cloned().collect::<Vec<_>>().join(","));
            }
            s.push('\n');
        }
        s
    }

    pub fn contains(&self, w: &str) -> bool {
        self.words.contains(w)
    }

    /// Immutable-word occurrences of a sequence, as a sorted multiset.
    pub fn occurrences(&self, tokens: &[String]) -> Vec<String> {
        let mut v: Vec<String> = tokens.iter().filter(|t| self.contains(t)).cloned().collect();
        v.sort();
        v
    }
}

/// Nouns already presented for labeling across earlier tools.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounAggregate {
    pub words: BTreeSet<String>,
}

/// Noun candidates for labeling over arbitrary token sequences: frequency
/// descending, ties in lexicographic order.
pub fn noun_candidates<'a>(
    docs: impl IntoIterator<Item = &'a TokenSequence>,
    lex: &Lexicons,
    agg: &NounAggregate,
) -> Vec<String> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for d in docs {
        for t in d {
            if lex.pos_of(t) == Pos::Noun && !agg.words.contains(t) {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut v: Vec<(&str, usize)> = freq.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    v.into_iter().map(|(w, _)| w.to_string()).collect()
}

pub fn extract_noun_candidates(corpus: &Corpus, lex: &Lexicons, agg: &NounAggregate) -> Vec<String> {
    noun_candidates(
        corpus.records().iter().filter_map(|r| r.description_tokens.as_ref()),
        lex,
        agg,
    )
}

/// Folds one tool's labels into the immutable corpus and the aggregate.
pub fn build_immutable_corpus(
    immutable: &ImmutableCorpus,
    agg: &NounAggregate,
    candidates: &[String],
    labels: &BTreeMap<String, u8>,
    tool_id: &str,
) -> Result<(ImmutableCorpus, NounAggregate)> {
    let presented: BTreeSet<&str> = candidates.iter().map(String::as_str).collect();
    let mut ic = immutable.clone();
    let mut ag = agg.clone();
    for (w, &label) in labels {
        if !presented.contains(w.as_str()) {
            return Err(Error::UnpresentedWord(w.clone()));
        }
        match label {
            0 => {}
            1 => {
                ic.words.insert(w.clone());
                ic.provenance.entry(w.clone()).or_default().insert(tool_id.to_string());
            }
            other => return Err(Error::Invalid(format!("label {other} for {w:?} is not 0 or 1"))),
        }
        ag.words.insert(w.clone());
    }
    Ok((ic, ag))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn false_positive_query() {
        let lex = Lexicons::bundled();
        let t = preprocess_query("How do I add False Positive rule?", &lex);
        assert_eq!(t.tokens(), toks(&["add", "false", "positive", "rule"]));
    }

    #[test]
    fn pid_file_example() {
        let lex = Lexicons::bundled();
        let t = preprocess_text("Gets the PID-file; e.g., -t", &lex);
        assert_eq!(t.tokens(), toks(&["get", "pid-file", "eg", "-t"]));
    }

    #[test]
    fn empty_input() {
        assert!(preprocess_text("", &Lexicons::bundled()).is_empty());
        assert!(preprocess_text("???", &Lexicons::bundled()).is_empty());
    }

    #[test]
    fn stop_list_size() {
        assert_eq!(Lexicons::bundled().stop_words.len(), 179);
    }

    #[test]
    fn lemma_rules() {
        let lex = Lexicons::bundled();
        let l = RuleLemmatizer::new(&lex);
        for (w, want) in [
            ("rules", "rule"),
            ("deletes", "delete"),
            ("matches", "match"),
            ("queries", "query"),
            ("running", "run"),
            ("uploaded", "upload"),
            ("created", "create"),
            ("indices", "index"),
            ("process", "process"),
            ("pcaps", "pcaps"),
            ("givens", "give"),
        ] {
            assert_eq!(l.lemmatize(w), want, "{w}");
        }
    }

    #[test]
    fn bundled_immutable_list() {
        let ic = ImmutableCorpus::bundled();
        assert_eq!(ic.words.len(), 163);
        for w in &ic.words {
            assert_eq!(remove_noise(w), vec![w.clone()]);
            assert_eq!(w.to_ascii_lowercase(), *w);
        }
        assert!(ic.contains("pid"));
    }

    #[test]
    fn noun_candidates_by_frequency() {
        let mut lex = Lexicons::default();
        lex.pos.insert("reads".into(), Pos::Verb);
        let docs = [preprocess_text("snort reads pcap pcap", &lex)];
        assert_eq!(noun_candidates(&docs, &lex, &NounAggregate::default()), toks(&["pcap", "snort"]));
        let none: [TokenSequence; 0] = [];
        assert!(noun_candidates(&none, &lex, &NounAggregate::default()).is_empty());
    }

    #[test]
    fn immutable_labeling() {
        let cands = toks(&["pid", "get", "sensor"]);
        let labels: BTreeMap<String, u8> = [("pid".to_string(), 1), ("get".to_string(), 0)].into();
        let (ic, agg) =
            build_immutable_corpus(&ImmutableCorpus::default(), &NounAggregate::default(), &cands, &labels, "t")
                .unwrap();
        assert_eq!(ic.words.iter().collect::<Vec<_>>(), ["pid"]);
        assert_eq!(agg.words.len(), 2);

        let zeros: BTreeMap<String, u8> = cands.iter().map(|w| (w.clone(), 0)).collect();
        let (ic, agg) =
            build_immutable_corpus(&ImmutableCorpus::default(), &NounAggregate::default(), &cands, &zeros, "t")
                .unwrap();
        assert!(ic.words.is_empty());
        assert_eq!(agg.words.len(), 3);

        let bad: BTreeMap<String, u8> = [("nope".to_string(), 1)].into();
        assert!(matches!(
            build_immutable_corpus(&ic, &agg, &cands, &bad, "t"),
            Err(Error::UnpresentedWord(_))
        ));
    }

    #[test]
    fn exception_validation() {
        let mut lex = Lexicons::default();
        lex.lemma_exceptions.insert("went".into(), "go".into());
        assert!(lex.validate().is_err());
        lex.base_words.insert("go".into());
        assert!(lex.validate().is_ok());
    }
}
