//! Dynamic vocabulary and one-step GRU decoding with attention, copying and coverage.

use std::collections::HashMap;

use crate::corpus::{Vocabulary, EOS, SEP, UNK};
use crate::encoder::{gru_input, gru_step};
use crate::error::{Error, Result};
use crate::graph::build_merge_map;
use crate::model::Model;
use crate::numerics::{Real, Tape, Tensor, Var};

/// Static vocabulary extended with a document's out-of-vocabulary words.
#[derive(Clone, Debug)]
pub struct DynamicVocabulary<'v> {
    vocab: &'v Vocabulary,
    extension: Vec<String>,
    ext_index: HashMap<String, usize>,
    copy_map: Vec<usize>,
}

impl<'v> DynamicVocabulary<'v> {
    /// `stems` align with `doc_tokens`; each stem group copies into the index of its first surface form.
    pub fn build(doc_tokens: &[String], stems: &[String], vocab: &'v Vocabulary) -> Self {
        let mut dv = Self {
            vocab,
            extension: Vec::new(),
            ext_index: HashMap::new(),
            copy_map: Vec::new(),
        };
        for t in doc_tokens {
            if vocab.get(t).is_none() && !dv.ext_index.contains_key(t) {
                dv.ext_index.insert(t.clone(), vocab.len() + dv.extension.len());
                dv.extension.push(t.clone());
            }
        }
        let merge = build_merge_map(stems);
        dv.copy_map = merge
            .groups()
            .iter()
            .map(|members| dv.index_of(&doc_tokens[members[0]]))
            .collect();
        dv
    }

    pub fn base_len(&self) -> usize {
        self.vocab.len()
    }

    /// `|𝒱| + #document-only words`.
    pub fn len(&self) -> usize {
        self.vocab.len() + self.extension.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vocab(&self) -> &'v Vocabulary {
        self.vocab
    }

    /// Document-only words in first-occurrence order.
    pub fn extension(&self) -> &[String] {
        &self.extension
    }

    /// Dynamic index receiving the copy mass of each merged position.
    pub fn copy_map(&self) -> &[usize] {
        &self.copy_map
    }

    /// Index of a word, falling back to UNK for words outside both the vocabulary and the document.
    pub fn index_of(&self, token: &str) -> usize {
        self.vocab
            .get(token)
            .or_else(|| self.ext_index.get(token).copied())
            .unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        if index < self.vocab.len() {
            self.vocab.token(index)
        } else {
            self.extension.get(index - self.vocab.len()).map(String::as_str)
        }
    }

    /// Row of the word table that represents `index`.
    pub fn embedding_row(&self, index: usize) -> usize {
        if index < self.vocab.len() {
            index
        } else {
            UNK
        }
    }
}

/// Attendable rows and where their copy mass lands.
#[derive(Clone, Debug)]
pub struct Memory {
    pub keys: Var,
    pub keys_t: Var,
    pub copy_index: Vec<usize>,
    pub vocab_len: usize,
}

/// Merged rows of `glu`, plus the SEP/EOS control rows in copy-only mode.
pub fn memory<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    glu: Var,
    dyn_vocab: &DynamicVocabulary<'_>,
) -> Result<Memory> {
    let mut copy_index = dyn_vocab.copy_map().to_vec();
    if tape.shape(glu)[0] != copy_index.len() {
        return Err(Error::Mismatch(format!(
            "{} merged rows but {} copy targets",
            tape.shape(glu)[0],
            copy_index.len()
        )));
    }
    let keys = match model.ids.control {
        Some(ctrl) => {
            let ctrl = tape.param(ctrl);
            copy_index.extend([SEP, EOS]);
            tape.concat(&[glu, ctrl], 0)?
        }
        None => glu,
    };
    let keys_t = tape.transpose(keys)?;
    Ok(Memory {
        keys,
        keys_t,
        copy_index,
        vocab_len: dyn_vocab.len(),
    })
}

/// Hidden state per layer plus attention accumulated within the current phrase.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub hidden: Vec<Var>,
    pub coverage: Option<Var>,
}

impl DecoderState {
    /// Every layer starts from the context vector `c` (`[1, d_h]`); coverage starts empty.
    pub fn start(c: Var, layers: usize) -> Self {
        Self {
            hidden: vec![c; layers],
            coverage: None,
        }
    }
}

pub struct StepOutput {
    /// Distribution over the dynamic vocabulary, `[1, |𝒱_d|]`.
    pub probs: Var,
    pub attention: Var,
    /// `Σ min(attention, coverage)`; `None` on a phrase's first step.
    pub penalty: Option<Var>,
    pub state: DecoderState,
}

/// `Σ_i min(a_i, c_i)` against the coverage accumulated before this step.
pub fn coverage_penalty<T: Real>(tape: &mut Tape<'_, T>, attention: Var, coverage: Option<Var>) -> Result<Option<Var>> {
    match coverage {
        None => Ok(None),
        Some(c) => {
            let m = tape.minimum(attention, c)?;
            Ok(Some(tape.sum_all(m)))
        }
    }
}

/// Plain-slice form of [`coverage_penalty`].
pub fn coverage_penalty_values(attention: &[f64], coverage: &[f64]) -> f64 {
    attention.iter().zip(coverage).map(|(a, c)| a.min(*c)).sum()
}

/// One decoder step from previous token `prev` (a dynamic index).
///
/// Attention is bilinear in the top hidden state and the memory rows, shifted by a
/// learned multiple of the coverage. The output mixes the generator (padded to
/// `|𝒱_d|`) with copy mass scattered from attention, weighted by a sigmoid gate.
pub fn decode_step<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    mem: &Memory,
    state: &DecoderState,
    prev: usize,
) -> Result<StepOutput> {
    let cfg = &model.config;
    if state.hidden.len() != model.ids.dec_gru.len() {
        return Err(Error::Mismatch(format!(
            "decoder state has {} layers, model has {}",
            state.hidden.len(),
            model.ids.dec_gru.len()
        )));
    }
    if prev >= mem.vocab_len {
        return Err(Error::Data(format!("previous token {prev} outside dynamic vocabulary of {}", mem.vocab_len)));
    }
    let row = if prev < cfg.vocab_size { prev } else { UNK };
    let table = tape.param(model.ids.word);
    let x = tape.gather_rows(table, &[row])?;
    let mut input = x;
    let mut hidden = Vec::with_capacity(state.hidden.len());
    for (cell, &h) in model.ids.dec_gru.iter().zip(&state.hidden) {
        let xw = gru_input(tape, cell, input)?;
        let h = gru_step(tape, cell, xw, h)?;
        hidden.push(h);
        input = h;
    }
    let s = input;

    let w_a = tape.param(model.ids.attn_w);
    let proj = tape.matmul(s, w_a)?;
    let mut scores = tape.matmul(proj, mem.keys_t)?;
    if let Some(cov) = state.coverage {
        let w_cov = tape.param(model.ids.attn_cov);
        let term = tape.mul(cov, w_cov)?;
        scores = tape.add(scores, term)?;
    }
    let attention = tape.softmax(scores, 1)?;
    let ctx = tape.matmul(attention, mem.keys)?;

    let att_col = tape.transpose(attention)?;
    let copy = tape.scatter_rows(att_col, &mem.copy_index, mem.vocab_len)?;
    let copy = tape.reshape(copy, &[1, mem.vocab_len])?;

    let probs = match (model.ids.out_w, model.ids.out_b, model.ids.gate_w, model.ids.gate_b) {
        (Some(out_w), Some(out_b), Some(gate_w), Some(gate_b)) => {
            let sc = tape.concat(&[s, ctx], 1)?;
            let w_o = tape.param(out_w);
            let b_o = tape.param(out_b);
            let logits = tape.matmul(sc, w_o)?;
            let b_o = tape.reshape(b_o, &[1, cfg.vocab_size])?;
            let logits = tape.add(logits, b_o)?;
            let mut gen = tape.softmax(logits, 1)?;
            if mem.vocab_len > cfg.vocab_size {
                let pad = tape.constant(Tensor::zeros(&[1, mem.vocab_len - cfg.vocab_size]));
                gen = tape.concat(&[gen, pad], 1)?;
            }
            let gin = tape.concat(&[s, ctx, x], 1)?;
            let w_g = tape.param(gate_w);
            let b_g = tape.param(gate_b);
            let g = tape.matmul(gin, w_g)?;
            let g = tape.add(g, b_g)?;
            let g = tape.sigmoid(g);
            let from_gen = tape.mul(gen, g)?;
            let not_g = tape.rsub_scalar(T::one(), g);
            let from_copy = tape.mul(copy, not_g)?;
            tape.add(from_gen, from_copy)?
        }
        _ => copy,
    };

    let penalty = coverage_penalty(tape, attention, state.coverage)?;
    let coverage = match state.coverage {
        Some(c) => tape.add(c, attention)?,
        None => attention,
    };
    Ok(StepOutput {
        probs,
        attention,
        penalty,
        state: DecoderState {
            hidden,
            coverage: Some(coverage),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{stem_all, Vocabulary};
    use crate::encoder::{encode, Dropout};
    use crate::instance::tests::toy_instance;
    use crate::model::tests::toy_config;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn in_vocab_document_adds_nothing() {
        let doc = toks("a b a");
        let v = Vocabulary::build([doc.as_slice()], 20).unwrap();
        let dv = DynamicVocabulary::build(&doc, &stem_all(&doc), &v);
        assert_eq!(dv.len(), v.len());
    }

    #[test]
    fn oov_words_extend_once_in_order() {
        let train = toks("a b");
        let v = Vocabulary::build([train.as_slice()], 20).unwrap();
        let doc = toks("zeta a alpha zeta");
        let dv = DynamicVocabulary::build(&doc, &stem_all(&doc), &v);
        assert_eq!(dv.extension(), &toks("zeta alpha"));
        assert_eq!(dv.len(), v.len() + 2);
        assert_eq!(dv.index_of("zeta"), v.len());
        assert_eq!(dv.index_of("never"), UNK);
    }

    #[test]
    fn copy_map_uses_group_representative() {
        let doc = toks("networks model network");
        let v = Vocabulary::build([doc.as_slice()], 20).unwrap();
        let dv = DynamicVocabulary::build(&doc, &stem_all(&doc), &v);
        assert_eq!(dv.copy_map().len(), 2);
        assert_eq!(dv.copy_map()[0], v.lookup("networks"));
    }

    #[test]
    fn coverage_penalty_examples() {
        assert_eq!(coverage_penalty_values(&[0.5, 0.5], &[0.0, 0.0]), 0.0);
        assert_eq!(coverage_penalty_values(&[0.25, 0.75], &[0.25, 0.75]), 1.0);
        assert_eq!(coverage_penalty_values(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
    }

    fn first_step(copy_only: bool, seed: u64) -> (Vec<f64>, Vec<f64>, usize, usize) {
        let inst = toy_instance();
        let model = Model::<f64>::new(toy_config(copy_only), seed).unwrap();
        let mut tape = Tape::inference(&model.params);
        let enc = encode(&mut tape, &model, &inst, &[], &mut Dropout::off()).unwrap();
        let mem = memory(&mut tape, &model, enc.glu, &inst.dyn_vocab).unwrap();
        let state = DecoderState::start(enc.c, model.config.decoder.layers);
        let out = decode_step(&mut tape, &model, &mem, &state, SEP).unwrap();
        assert!(out.penalty.is_none());
        let two = decode_step(&mut tape, &model, &mem, &out.state, 7).unwrap();
        assert!(tape.scalar_value(two.penalty.unwrap()) > 0.0);
        (
            tape.values(out.probs).to_vec(),
            tape.values(out.attention).to_vec(),
            inst.dyn_vocab.base_len(),
            inst.dyn_vocab.len(),
        )
    }

    #[test]
    fn step_distribution_is_normalized() {
        for copy_only in [false, true] {
            let (p, a, base, total) = first_step(copy_only, 11);
            assert_eq!(p.len(), total);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(total > base, "fixture must contain an out-of-vocabulary word");
            // extension words get mass through attention
            assert!(p[base..].iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn copy_only_gives_zero_to_absent_vocabulary_words() {
        let (p, _, _, _) = first_step(true, 12);
        let inst = toy_instance();
        let reachable: std::collections::HashSet<usize> =
            inst.dyn_vocab.copy_map().iter().copied().chain([SEP, EOS]).collect();
        for (i, &x) in p.iter().enumerate() {
            assert_eq!(x > 0.0, reachable.contains(&i), "index {i}");
        }
    }
}
