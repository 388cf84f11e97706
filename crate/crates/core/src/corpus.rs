//! Text normalization, vocabularies, present/absent splitting and target sequences.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::DynamicVocabulary;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
pub const EOS: usize = 3;
pub const DIGIT: usize = 4;
/// Never produced by the model; used to pad prediction lists in evaluation.
pub const FILLER: usize = 5;
pub const NUM_RESERVED: usize = 6;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<unk>", "<sep>", "<eos>", "<digit>", "<fill>"];
pub const DIGIT_TOKEN: &str = RESERVED_TOKENS[DIGIT];

/// Dataset statistics published for the Inspec test set, kept for reference.
pub mod reference {
    pub const INSPEC_SAMPLES: usize = 500;
    pub const INSPEC_AVG_PRESENT: f64 = 7.20;
    pub const INSPEC_AVG_PRESENT_LEN: f64 = 2.40;
    pub const KP20K_TRAIN_SAMPLES: usize = 464_676;
}

/// Title + abstract document with its gold keyphrases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub keyphrases: Vec<String>,
}

impl RawDocument {
    /// Normalized tokens of title followed by abstract.
    pub fn tokens(&self) -> Vec<String> {
        let mut t = normalize(&self.title);
        t.extend(normalize(&self.abstract_text));
        t
    }
}

/// Lower-case and split into word tokens; maximal digit runs become `<digit>`.
///
/// Letters form words, digits form digit runs, everything else separates.
/// A literal `<digit>` in the input is kept as the digit token, which makes the
/// function idempotent over its own space-joined output.
pub fn normalize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let sentinel: Vec<char> = DIGIT_TOKEN.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    let mut i = 0;
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '<' && chars[i..].starts_with(&sentinel) {
            flush(&mut word, &mut out);
            out.push(DIGIT_TOKEN.to_string());
            i += sentinel.len();
        } else if c.is_numeric() {
            flush(&mut word, &mut out);
            while i < chars.len() && chars[i].is_numeric() {
                i += 1;
            }
            out.push(DIGIT_TOKEN.to_string());
        } else if c.is_alphabetic() {
            word.push(c);
            i += 1;
        } else {
            flush(&mut word, &mut out);
            i += 1;
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Normalize a single pre-tokenized surface form (e.g. a parser token) to one token.
pub fn normalize_form(form: &str) -> String {
    let lower = form.to_lowercase();
    if lower.chars().any(char::is_numeric) && !lower.chars().any(char::is_alphabetic) {
        DIGIT_TOKEN.to_string()
    } else {
        lower
    }
}

/// Porter stem of one token. Reserved tokens are returned unchanged.
pub fn stem(token: &str) -> String {
    if RESERVED_TOKENS.contains(&token) || !token.chars().all(|c| c.is_ascii_alphabetic()) {
        return token.to_string();
    }
    porter_stemmer::stem(token)
}

pub fn stem_all(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| stem(t)).collect()
}

/// First start index at which `needle` occurs contiguously in `haystack`.
pub fn find_subsequence<T: PartialEq>(haystack: &[T], needle: &[T]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Split keyphrases by whether their stemmed form occurs contiguously in the stemmed document.
/// Empty phrases count as absent. Input order is preserved in both lists.
pub fn split_present_absent(
    doc_tokens: &[String],
    keyphrases: &[Vec<String>],
) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let doc_stems = stem_all(doc_tokens);
    keyphrases
        .iter()
        .cloned()
        .partition(|kp| find_subsequence(&doc_stems, &stem_all(kp)).is_some())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keep the `max_size - NUM_RESERVED` most frequent tokens; ties go to the earlier first occurrence.
    pub fn build<'a, I>(sequences: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if max_size <= NUM_RESERVED {
            return Err(Error::Config(format!(
                "vocabulary size {max_size} must exceed the {NUM_RESERVED} reserved tokens"
            )));
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut seen = 0usize;
        for seq in sequences {
            for tok in seq {
                if RESERVED_TOKENS.contains(&tok.as_str()) {
                    continue;
                }
                let entry = counts.entry(tok.as_str()).or_insert((0, seen));
                entry.0 += 1;
                seen += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let tokens = RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(max_size - NUM_RESERVED).map(|(t, _, _)| t.to_string()))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or `UNK`.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Header line naming the reserved tokens, then one token per line; the
    /// n-th line after the header (0-based) holds index n.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "#reserved {}", RESERVED_TOKENS.join(" "))?;
            for t in &self.tokens {
                writeln!(w, "{t}")?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .unwrap_or_default();
        let expected = format!("#reserved {}", RESERVED_TOKENS.join(" "));
        if header != expected {
            return Err(Error::Data(format!("{}: unexpected vocabulary header {header:?}", path.display())));
        }
        let tokens: Vec<String> = lines.collect::<std::io::Result<_>>().map_err(|e| Error::io(path, e))?;
        if tokens.len() < NUM_RESERVED || tokens[..NUM_RESERVED] != RESERVED_TOKENS {
            return Err(Error::Data(format!("{}: reserved tokens missing or reordered", path.display())));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Data(format!("{}: duplicate vocabulary entries", path.display())));
        }
        Ok(vocab)
    }
}

/// `{y1, SEP, y2, SEP, ..., EOS}` over a document's dynamic vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetSequence {
    pub tokens: Vec<usize>,
    /// Offsets of the terminator (SEP or EOS) closing each phrase.
    pub phrase_ends: Vec<usize>,
}

impl TargetSequence {
    pub fn from_phrases(phrases: &[Vec<usize>]) -> Result<Self> {
        if phrases.is_empty() {
            return Err(Error::Data("target needs at least one phrase".into()));
        }
        let mut tokens = Vec::new();
        let mut phrase_ends = Vec::new();
        for (i, p) in phrases.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Data(format!("target phrase {i} has no tokens")));
            }
            tokens.extend_from_slice(p);
            phrase_ends.push(tokens.len());
            tokens.push(if i + 1 == phrases.len() { EOS } else { SEP });
        }
        Ok(Self { tokens, phrase_ends })
    }

    /// Phrases without their terminators.
    pub fn phrases(&self) -> Vec<&[usize]> {
        let mut start = 0;
        self.phrase_ends
            .iter()
            .map(|&end| {
                let p = &self.tokens[start..end];
                start = end + 1;
                p
            })
            .collect()
    }

    pub fn check_invariants(&self) -> bool {
        let ends_ok = self.tokens.last() == Some(&EOS);
        let seps: Vec<usize> = self
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == SEP || t == EOS)
            .map(|(i, _)| i)
            .collect();
        ends_ok && seps == self.phrase_ends && self.phrases().iter().all(|p| !p.is_empty())
    }
}

/// Order present phrases by first occurrence in the document and map them into the dynamic vocabulary.
///
/// Each phrase token is replaced by the canonical surface form of its stem group in the
/// document (the form at the group's first occurrence), so every target word is copyable.
pub fn build_target(
    present: &[Vec<String>],
    dyn_vocab: &DynamicVocabulary,
    doc_tokens: &[String],
) -> Result<TargetSequence> {
    let doc_stems = stem_all(doc_tokens);
    let mut canonical: HashMap<&str, &str> = HashMap::new();
    for (s, t) in doc_stems.iter().zip(doc_tokens) {
        canonical.entry(s.as_str()).or_insert(t.as_str());
    }
    let mut located = Vec::with_capacity(present.len());
    for (order, phrase) in present.iter().enumerate() {
        if phrase.is_empty() {
            return Err(Error::Data(format!("present phrase {order} has no tokens")));
        }
        let stems = stem_all(phrase);
        let pos = find_subsequence(&doc_stems, &stems).unwrap_or(usize::MAX);
        let ids: Vec<usize> = stems
            .iter()
            .zip(phrase)
            .map(|(s, t)| dyn_vocab.index_of(canonical.get(s.as_str()).copied().unwrap_or(t)))
            .collect();
        located.push((pos, order, ids));
    }
    located.sort_by_key(|(pos, order, _)| (*pos, *order));
    let phrases: Vec<Vec<usize>> = located.into_iter().map(|(_, _, ids)| ids).collect();
    TargetSequence::from_phrases(&phrases)
}

/// Counting procedure behind per-dataset sample / present-count / phrase-length statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub avg_present: f64,
    pub avg_present_len: f64,
}

pub fn corpus_stats(present_per_doc: &[Vec<Vec<String>>]) -> CorpusStats {
    let samples = present_per_doc.len();
    let phrases: usize = present_per_doc.iter().map(Vec::len).sum();
    let words: usize = present_per_doc.iter().flatten().map(Vec::len).sum();
    CorpusStats {
        samples,
        avg_present: if samples == 0 { 0.0 } else { phrases as f64 / samples as f64 },
        avg_present_len: if phrases == 0 { 0.0 } else { words as f64 / phrases as f64 },
    }
}

pub fn read_raw_jsonl(path: &Path) -> Result<Vec<RawDocument>> {
    crate::io::read_jsonl(path)
}
