//! A document resolved against the vocabularies: ids, graph, merge map and dynamic vocabulary.

use std::path::Path;

use crate::corpus::{build_target, TargetSequence, Vocabulary};
use crate::decoder::DynamicVocabulary;
use crate::error::{Error, Result};
use crate::graph::{build_merge_map, MergeMap, SyntacticGraph};
use crate::syntax::{AnnotatedDocument, LabelInventory};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const POS_FILE: &str = "pos.txt";
pub const DEPREL_FILE: &str = "deprel.txt";

/// Word vocabulary plus POS and dependency-type inventories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inventories {
    pub vocab: Vocabulary,
    pub pos: LabelInventory,
    pub deprel: LabelInventory,
}

impl Inventories {
    pub fn build(docs: &[AnnotatedDocument], max_vocab: usize) -> Result<Self> {
        let forms: Vec<Vec<String>> = docs.iter().map(AnnotatedDocument::forms).collect();
        Ok(Self {
            vocab: Vocabulary::build(forms.iter().map(Vec::as_slice), max_vocab)?,
            pos: LabelInventory::pos_tags(docs),
            deprel: LabelInventory::dependency_types(docs),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        self.pos.save(&dir.join(POS_FILE))?;
        self.deprel.save(&dir.join(DEPREL_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            vocab: Vocabulary::load(&dir.join(VOCAB_FILE))?,
            pos: LabelInventory::load(&dir.join(POS_FILE))?,
            deprel: LabelInventory::load(&dir.join(DEPREL_FILE))?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Instance<'v> {
    pub id: String,
    pub forms: Vec<String>,
    pub stems: Vec<String>,
    pub word_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub graph: SyntacticGraph,
    pub merge: MergeMap,
    pub dyn_vocab: DynamicVocabulary<'v>,
    pub present: Vec<Vec<String>>,
}

impl<'v> Instance<'v> {
    pub fn new(doc: &AnnotatedDocument, inv: &'v Inventories) -> Result<Self> {
        if doc.is_empty() {
            return Err(Error::Document {
                doc_id: doc.id.clone(),
                message: "document has no tokens".into(),
            });
        }
        let forms = doc.forms();
        let stems = doc.stems();
        Ok(Self {
            id: doc.id.clone(),
            word_ids: forms.iter().map(|f| inv.vocab.lookup(f)).collect(),
            pos_ids: doc.tokens.iter().map(|t| inv.pos.lookup(&t.upos)).collect(),
            graph: SyntacticGraph::from_document(doc, &inv.deprel)?,
            merge: build_merge_map(&stems),
            dyn_vocab: DynamicVocabulary::build(&forms, &stems, &inv.vocab),
            present: doc.present.clone(),
            forms,
            stems,
        })
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    /// Training target over the dynamic vocabulary; an error when no gold phrase is present.
    pub fn target(&self) -> Result<TargetSequence> {
        build_target(&self.present, &self.dyn_vocab, &self.forms).map_err(|e| Error::Document {
            doc_id: self.id.clone(),
            message: e.to_string(),
        })
    }
}
