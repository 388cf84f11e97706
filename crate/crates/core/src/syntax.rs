//! Dependency-annotated documents.
//!
//! Input is one JSON object per line:
//! `{"id", "sentences": [{"tokens": [{"form", "stem", "upos", "head", "deprel"}]}], "keyphrases": [..]}`
//! where `head` is 1-based within the sentence and 0 marks the root.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, normalize_form, split_present_absent};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub form: String,
    pub stem: String,
    pub upos: String,
    pub head: usize,
    pub deprel: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub tokens: Vec<TokenRecord>,
}

/// Wire format of one annotated document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedRecord {
    pub id: String,
    pub sentences: Vec<SentenceRecord>,
    pub keyphrases: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeError {
    Empty,
    NoRoot,
    MultipleRoots(usize),
    HeadOutOfRange { token: usize, head: usize },
    Cycle { token: usize },
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::Empty => write!(f, "sentence has no tokens"),
            TreeError::NoRoot => write!(f, "no token has head 0"),
            TreeError::MultipleRoots(n) => write!(f, "{n} tokens have head 0"),
            TreeError::HeadOutOfRange { token, head } => {
                write!(f, "token {token} has head {head} outside the sentence")
            }
            TreeError::Cycle { token } => write!(f, "head links from token {token} form a cycle"),
        }
    }
}

impl std::error::Error for TreeError {}

/// One sentence's dependency tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DependencyTree {
    /// 1-based head per token; 0 is the virtual root.
    pub heads: Vec<usize>,
    pub deprels: Vec<String>,
    /// Document-global index of the sentence's first token.
    pub offset: usize,
}

impl DependencyTree {
    pub fn new(heads: Vec<usize>, deprels: Vec<String>, offset: usize) -> Result<Self, TreeError> {
        let tree = Self { heads, deprels, offset };
        tree.validate()?;
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Exactly one root, heads in range, and every token reaches the root.
    pub fn validate(&self) -> Result<(), TreeError> {
        let n = self.heads.len();
        if n == 0 {
            return Err(TreeError::Empty);
        }
        for (i, &h) in self.heads.iter().enumerate() {
            if h > n || h == i + 1 {
                // a self-loop is the shortest cycle; report it as such
                if h == i + 1 {
                    return Err(TreeError::Cycle { token: i + 1 });
                }
                return Err(TreeError::HeadOutOfRange { token: i + 1, head: h });
            }
        }
        match self.heads.iter().filter(|&&h| h == 0).count() {
            0 => return Err(TreeError::NoRoot),
            1 => {}
            k => return Err(TreeError::MultipleRoots(k)),
        }
        for start in 0..n {
            let mut cur = start + 1;
            for _ in 0..=n {
                cur = self.heads[cur - 1];
                if cur == 0 {
                    break;
                }
            }
            if cur != 0 {
                return Err(TreeError::Cycle { token: start + 1 });
            }
        }
        Ok(())
    }

    /// Document-global index of the root token.
    pub fn root(&self) -> usize {
        self.offset + self.heads.iter().position(|&h| h == 0).expect("validated tree")
    }
}

/// Head link of every non-root token as `(dependent, head, deprel)`, in document-global indices.
pub fn edge_list(tree: &DependencyTree) -> Vec<(usize, usize, String)> {
    tree.heads
        .iter()
        .zip(&tree.deprels)
        .enumerate()
        .filter(|(_, (&h, _))| h != 0)
        .map(|(i, (&h, rel))| (tree.offset + i, tree.offset + h - 1, rel.clone()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// Lower-cased, digit-normalized surface form.
    pub form: String,
    pub stem: String,
    pub upos: String,
    pub sentence: usize,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedDocument {
    pub id: String,
    pub tokens: Vec<Token>,
    pub sentences: Vec<DependencyTree>,
    /// All gold keyphrases, normalized.
    pub keyphrases: Vec<Vec<String>>,
    pub present: Vec<Vec<String>>,
    pub absent: Vec<Vec<String>>,
}

impl AnnotatedDocument {
    pub fn from_record(rec: AnnotatedRecord) -> Result<Self> {
        if rec.sentences.is_empty() {
            return Err(Error::Document {
                doc_id: rec.id,
                message: "document has no sentences".into(),
            });
        }
        let mut tokens = Vec::new();
        let mut sentences = Vec::with_capacity(rec.sentences.len());
        for (s, sent) in rec.sentences.iter().enumerate() {
            let offset = tokens.len();
            let heads = sent.tokens.iter().map(|t| t.head).collect();
            let deprels = sent.tokens.iter().map(|t| t.deprel.to_lowercase()).collect();
            let tree = DependencyTree::new(heads, deprels, offset).map_err(|kind| Error::Tree {
                doc_id: rec.id.clone(),
                sentence: s,
                kind,
            })?;
            sentences.push(tree);
            for (p, t) in sent.tokens.iter().enumerate() {
                tokens.push(Token {
                    form: normalize_form(&t.form),
                    stem: t.stem.to_lowercase(),
                    upos: t.upos.clone(),
                    sentence: s,
                    position: p,
                });
            }
        }
        let keyphrases: Vec<Vec<String>> = rec
            .keyphrases
            .iter()
            .map(|k| normalize(k))
            .filter(|k| !k.is_empty())
            .collect();
        let forms: Vec<String> = tokens.iter().map(|t| t.form.clone()).collect();
        let (present, absent) = split_present_absent(&forms, &keyphrases);
        Ok(Self {
            id: rec.id,
            tokens,
            sentences,
            keyphrases,
            present,
            absent,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.form.clone()).collect()
    }

    pub fn stems(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.stem.clone()).collect()
    }

    /// Dependency edges of all sentences in document order.
    pub fn edges(&self) -> Vec<(usize, usize, String)> {
        self.sentences.iter().flat_map(edge_list).collect()
    }
}

/// Load and validate an annotated-JSONL file, keeping file order.
pub fn read_annotated(path: &Path) -> Result<Vec<AnnotatedDocument>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotatedRecord = serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(AnnotatedDocument::from_record(rec)?);
    }
    Ok(docs)
}

/// String label → index map with index 0 reserved for unseen labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelInventory {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK_LABEL: &str = "<unk>";

impl LabelInventory {
    /// Labels in first-seen order after the reserved unknown entry.
    pub fn build<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut inv = Self {
            labels: vec![UNK_LABEL.to_string()],
            index: HashMap::from([(UNK_LABEL.to_string(), 0)]),
        };
        for l in labels {
            if !inv.index.contains_key(l) {
                inv.index.insert(l.to_string(), inv.labels.len());
                inv.labels.push(l.to_string());
            }
        }
        inv
    }

    pub fn dependency_types(docs: &[AnnotatedDocument]) -> Self {
        Self::build(docs.iter().flat_map(|d| d.sentences.iter().flat_map(|s| s.deprels.iter().map(String::as_str))))
    }

    pub fn pos_tags(docs: &[AnnotatedDocument]) -> Self {
        Self::build(docs.iter().flat_map(|d| d.tokens.iter().map(|t| t.upos.as_str())))
    }

    /// Index of `label`; unseen labels map to 0.
    pub fn lookup(&self, label: &str) -> usize {
        self.index.get(label).copied().unwrap_or(0)
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels.get(i).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for l in &self.labels {
            writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let labels: Vec<&str> = text.lines().collect();
        if labels.first() != Some(&UNK_LABEL) {
            return Err(Error::Data(format!("{}: label file must start with {UNK_LABEL}", path.display())));
        }
        Ok(Self::build(labels.into_iter().skip(1)))
    }
}
