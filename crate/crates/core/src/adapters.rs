//! Adapters that turn pre-extracted vendor documentation files into
//! [`SourceDocument`]s. Each document is described by a small JSON descriptor
//! naming the source file, its format and dotted field paths.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use crate::corpus::{FormatKind, RawEntry, SourceDocument};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, Deserialize)]
pub struct FieldPaths {
    /// Unused for REST documents, where the signature is "method path".
    #[serde(default)]
    pub signature: Option<String>,
    pub description: String,
    #[serde(default)]
    pub parameters: Option<String>,
    #[serde(default)]
    pub returns: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct AdapterDescriptor {
    pub tool: String,
    pub doc: String,
    pub format_kind: FormatKind,
    /// Relative paths resolve against the descriptor's directory.
    pub source: PathBuf,
    #[serde(default)]
    pub records_path: Option<String>,
    pub fields: FieldPaths,
}

const HTTP_METHODS: [&str; 7] = ["get", "post", "put", "patch", "delete", "head", "options"];

/// Directory holding the bundled desk corpus and lexicons.
pub fn bundled_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn desk_adapter_dir() -> PathBuf {
    bundled_data_dir().join("desk").join("adapters")
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(scalar_text).collect();
            (!parts.is_empty()).then(|| parts.join(", "))
        }
        Value::Object(_) => Some(v.to_string()),
    }
}

/// Follows a dotted path. Arrays met along the way are mapped over and the
/// leaves joined with ", ", so "parameters.name" lists every parameter name.
pub fn lookup(v: &Value, path: &str) -> Option<String> {
    fn walk<'a>(v: &'a Value, parts: &[&str]) -> Option<String> {
        let Some((first, rest)) = parts.split_first() else {
            return scalar_text(v);
        };
        match v {
            Value::Object(m) => walk(m.get(*first)?, rest),
            Value::Array(items) => {
                let got: Vec<String> = items.iter().filter_map(|i| walk(i, parts)).collect();
                (!got.is_empty()).then(|| got.join(", "))
            }
            _ => None,
        }
    }
    let parts: Vec<&str> = path.split('.').filter(|p| !p.is_empty()).collect();
    walk(v, &parts)
}

fn entry_from(v: &Value, signature: String, f: &FieldPaths) -> RawEntry {
    RawEntry {
        signature,
        description: lookup(v, &f.description),
        parameters: f.parameters.as_deref().and_then(|p| lookup(v, p)),
        returns: f.returns.as_deref().and_then(|p| lookup(v, p)),
    }
}

fn records_at<'a>(root: &'a Value, path: Option<&str>) -> Option<&'a Value> {
    let mut v = root;
    for part in path.unwrap_or("").split('.').filter(|p| !p.is_empty()) {
        v = v.get(part)?;
    }
    Some(v)
}

pub fn load_descriptor(path: &Path) -> Result<AdapterDescriptor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Reads the source file a descriptor points at.
pub fn load_document(descriptor_path: &Path) -> Result<SourceDocument> {
    let d = load_descriptor(descriptor_path)?;
    let base = descriptor_path.parent().unwrap_or(Path::new("."));
    let src = base.join(&d.source);
    let text = std::fs::read_to_string(&src).map_err(|e| Error::io(&src, e))?;
    let bad = |msg: String| Error::Parse {
        path: src.clone(),
        line: 0,
        msg,
    };
    let entries = match d.format_kind {
        FormatKind::TabularCommands => read_tabular(&text, &d.fields, &src)?,
        FormatKind::StructuredRest | FormatKind::StructuredCodeApi => {
            let root: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: src.clone(),
                line: e.line(),
                msg: e.to_string(),
            })?;
            let recs = records_at(&root, d.records_path.as_deref())
                .ok_or_else(|| bad(format!("no value at {:?}", d.records_path)))?;
            if d.format_kind == FormatKind::StructuredRest {
                read_rest(recs, &d.fields).map_err(bad)?
            } else {
                read_code(recs, &d.fields).map_err(bad)?
            }
        }
    };
    Ok(SourceDocument {
        tool_id: d.tool,
        doc_id: d.doc,
        format_kind: d.format_kind,
        entries,
    })
}

fn read_rest(paths: &Value, f: &FieldPaths) -> std::result::Result<Vec<RawEntry>, String> {
    let paths = paths.as_object().ok_or("REST records must be an object of paths")?;
    let mut out = Vec::new();
    for (path, ops) in paths {
        let ops = ops.as_object().ok_or_else(|| format!("path {path} is not an object"))?;
        for (method, op) in ops {
            if HTTP_METHODS.contains(&method.to_ascii_lowercase().as_str()) {
                out.push(entry_from(op, format!("{} {path}", method.to_ascii_lowercase()), f));
            }
        }
    }
    Ok(out)
}

fn read_code(items: &Value, f: &FieldPaths) -> std::result::Result<Vec<RawEntry>, String> {
    let items = items.as_array().ok_or("code API records must be an array")?;
    let sig_path = f.signature.as_deref().ok_or("descriptor lacks a signature field")?;
    items
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let sig = lookup(v, sig_path).ok_or_else(|| format!("entry {i} has no signature"))?;
            Ok(entry_from(v, sig, f))
        })
        .collect()
}

fn read_tabular(text: &str, f: &FieldPaths, src: &Path) -> Result<Vec<RawEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .quoting(false)
        .from_reader(text.as_bytes());
    let err = |line: usize, msg: String| Error::Parse {
        path: src.to_path_buf(),
        line,
        msg,
    };
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let sig_name = f.signature.as_deref().ok_or_else(|| err(1, "descriptor lacks a signature field".into()))?;
    let sig_col = col(sig_name).ok_or_else(|| err(1, format!("no column {sig_name:?}")))?;
    let desc_col = col(&f.description).ok_or_else(|| err(1, format!("no column {:?}", f.description)))?;
    let par_col = f.parameters.as_deref().and_then(col);
    let ret_col = f.returns.as_deref().and_then(col);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| err(i + 2, e.to_string()))?;
        let cell = |c: Option<usize>| {
            c.and_then(|c| row.get(c))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        out.push(RawEntry {
            signature: cell(Some(sig_col)).unwrap_or_default(),
            description: cell(Some(desc_col)),
            parameters: cell(par_col),
            returns: cell(ret_col),
        });
    }
    Ok(out)
}

/// Loads every `*.json` descriptor in `dir`, in file-name order.
pub fn load_adapter_dir(dir: &Path) -> Result<Vec<SourceDocument>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty("adapter directory"));
    }
    paths.iter().map(|p| load_document(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn dotted_lookup_maps_arrays() {
        let v = json!({"parameters": [{"name": "sid"}, {"name": "tag"}], "r": {"200": {"d": "ok"}}});
        assert_eq!(lookup(&v, "parameters.name").as_deref(), Some("sid, tag"));
        assert_eq!(lookup(&v, "r.200.d").as_deref(), Some("ok"));
        assert_eq!(lookup(&v, "missing"), None);
    }

    #[test]
    fn desk_documents_load() {
        let docs = load_adapter_dir(&desk_adapter_dir()).unwrap();
        assert_eq!(docs.len(), 6);
        let total: usize = docs.iter().map(|d| d.entries.len()).sum();
        assert_eq!(total, 76);
        let rest = docs.iter().find(|d| d.format_kind == FormatKind::StructuredRest).unwrap();
        assert!(rest.entries.iter().any(|e| e.signature == "delete /{sid}/tags"));
        for d in &docs {
            d.validate().unwrap();
        }
    }

    #[test]
    fn empty_dir_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_adapter_dir(dir.path()).is_err());
    }
}
