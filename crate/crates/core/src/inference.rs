//! Phrase-level beam search with dissimilarity and sibling terms, and the
//! document decode loop that re-scores the graph before every phrase.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{InferenceConfig, SiblingMode};
use crate::corpus::{stem, EOS, FILLER, PAD, SEP, UNK};
use crate::decoder::{decode_step, memory, DecoderState, Memory};
use crate::encoder::{encode_tokens, encode_with_cache, Dropout};
use crate::error::{Error, Result};
use crate::graph::{phrase_embedding, GraphSnapshot};
use crate::instance::Instance;
use crate::model::Model;
use crate::numerics::{Real, Tape, Tensor};

pub fn is_terminator(token: usize) -> bool {
    token == SEP || token == EOS
}

/// `((5 + L) / 6)^α`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

/// Length-normalized log-probability; `len` counts the terminator.
pub fn theta(log_prob_sum: f64, len: usize, alpha: f64) -> f64 {
    log_prob_sum / length_penalty(len, alpha)
}

fn ngrams(tokens: &[usize], n: usize) -> HashSet<&[usize]> {
    if tokens.len() < n {
        return HashSet::new();
    }
    tokens.windows(n).collect()
}

fn overlap(candidate: &[usize], previous: &[Vec<usize>], n: usize) -> f64 {
    let cand = ngrams(candidate, n);
    if cand.is_empty() {
        return 0.0;
    }
    let prev: HashSet<&[usize]> = previous.iter().flat_map(|p| ngrams(p, n)).collect();
    cand.intersection(&prev).count() as f64 / cand.len() as f64
}

/// `1 − (w₁·overlap₁ + w₂·overlap₂)` against the n-grams of all earlier phrases.
pub fn dp_penalty(candidate: &[usize], previous: &[Vec<usize>], unigram_weight: f64, bigram_weight: f64) -> f64 {
    1.0 - unigram_weight * overlap(candidate, previous, 1) - bigram_weight * overlap(candidate, previous, 2)
}

pub fn sp_term(rank: usize, mode: SiblingMode) -> f64 {
    match mode {
        SiblingMode::Rank => rank as f64,
        SiblingMode::LogRank => (rank as f64).ln_1p(),
    }
}

/// 0-based rank of every index by descending probability; ties go to the lower index.
pub fn ranks(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut rank = vec![0; probs.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Next-token distributions for one phrase search.
pub trait StepScorer: Sync {
    type State: Send + Sync;

    fn initial(&self) -> Result<Self::State>;

    /// Probabilities over the dynamic vocabulary after `prev`, with the successor state.
    fn step(&self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Clone, Debug)]
pub struct BeamHypothesis<S> {
    pub tokens: Vec<usize>,
    pub log_prob_sum: f64,
    pub ranks: Vec<usize>,
    /// `Σ sp(rank)` over the tokens so far.
    pub sibling: f64,
    pub diversity: f64,
    pub theta: f64,
    /// `Θ + λ₁·DP − λ₂·SP`; fixed once frozen.
    pub score: f64,
    pub frozen: bool,
    pub state: Arc<S>,
}

impl<S> BeamHypothesis<S> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens without a trailing terminator.
    pub fn phrase(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&t) if is_terminator(t) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn terminator(&self) -> Option<usize> {
        self.tokens.last().copied().filter(|&t| is_terminator(t))
    }
}

/// Descending score, then ascending token sequence.
pub fn beam_order<S>(a: &BeamHypothesis<S>, b: &BeamHypothesis<S>) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Score of a candidate prefix; shared by the beam and the exhaustive oracle in tests.
pub fn diversified_score(
    tokens: &[usize],
    log_prob_sum: f64,
    sibling: f64,
    previous: &[Vec<usize>],
    cfg: &InferenceConfig,
) -> (f64, f64, f64) {
    let phrase = match tokens.last() {
        Some(&t) if is_terminator(t) => &tokens[..tokens.len() - 1],
        _ => tokens,
    };
    let th = theta(log_prob_sum, tokens.len(), cfg.alpha);
    let dp = dp_penalty(phrase, previous, cfg.unigram_weight, cfg.bigram_weight);
    (th, dp, th + cfg.lambda1 * dp - cfg.lambda2 * sibling)
}

/// One expansion of every live hypothesis over the dynamic vocabulary, keeping the best `B`.
pub fn beam_step<Sc: StepScorer>(
    scorer: &Sc,
    beam: Vec<BeamHypothesis<Sc::State>>,
    previous: &[Vec<usize>],
    cfg: &InferenceConfig,
) -> Result<Vec<BeamHypothesis<Sc::State>>> {
    if beam.is_empty() {
        return Err(Error::Data("beam step on an empty beam".into()));
    }
    let expanded: Vec<Result<Vec<BeamHypothesis<Sc::State>>>> = beam
        .into_par_iter()
        .map(|h| {
            if h.frozen {
                return Ok(vec![h]);
            }
            let prev = h.tokens.last().copied().unwrap_or(SEP);
            let (probs, next) = scorer.step(&h.state, prev)?;
            let rank = ranks(&probs);
            let next = Arc::new(next);
            let mut out = Vec::new();
            for (tok, &p) in probs.iter().enumerate() {
                if !(p > 0.0) {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                let mut ranks = h.ranks.clone();
                ranks.push(rank[tok]);
                let log_prob_sum = h.log_prob_sum + p.ln();
                let sibling = h.sibling + sp_term(rank[tok], cfg.sibling);
                let (theta, diversity, score) = diversified_score(&tokens, log_prob_sum, sibling, previous, cfg);
                let frozen = is_terminator(tok) || tokens.len() >= cfg.max_phrase_len;
                out.push(BeamHypothesis {
                    tokens,
                    log_prob_sum,
                    ranks,
                    sibling,
                    diversity,
                    theta,
                    score,
                    frozen,
                    state: Arc::clone(&next),
                });
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for e in expanded {
        all.extend(e?);
    }
    if all.is_empty() {
        return Err(Error::NumericFailure("every continuation has zero probability".into()));
    }
    all.sort_by(beam_order);
    all.truncate(cfg.beam_width);
    Ok(all)
}

/// Beam search for one phrase. Returns the final beam, best first; every entry is frozen.
pub fn phrase_beam_search<Sc: StepScorer>(
    scorer: &Sc,
    previous: &[Vec<usize>],
    cfg: &InferenceConfig,
) -> Result<Vec<BeamHypothesis<Sc::State>>> {
    let mut beam = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob_sum: 0.0,
        ranks: Vec::new(),
        sibling: 0.0,
        diversity: 1.0,
        theta: 0.0,
        score: 0.0,
        frozen: false,
        state: Arc::new(scorer.initial()?),
    }];
    for _ in 0..cfg.max_phrase_len {
        beam = beam_step(scorer, beam, previous, cfg)?;
        if beam.iter().all(|h| h.frozen) {
            break;
        }
    }
    Ok(beam)
}

/// Decoder state held as owned tensors so hypotheses can step on independent tapes.
pub struct ModelState<T> {
    hidden: Vec<Tensor<T>>,
    coverage: Option<Tensor<T>>,
}

/// Scores continuations with the decoder over one encoding of the document.
pub struct ModelScorer<'m, T: Real> {
    model: &'m Model<T>,
    keys: Tensor<T>,
    keys_t: Tensor<T>,
    copy_index: Vec<usize>,
    vocab_len: usize,
    c: Tensor<T>,
}

impl<'m, T: Real> ModelScorer<'m, T> {
    fn from_tape(model: &'m Model<T>, tape: &Tape<'_, T>, mem: &Memory, c: crate::numerics::Var) -> Self {
        Self {
            model,
            keys: tape.tensor(mem.keys),
            keys_t: tape.tensor(mem.keys_t),
            copy_index: mem.copy_index.clone(),
            vocab_len: mem.vocab_len,
            c: tape.tensor(c),
        }
    }
}

/// Reserved ids that are never emitted.
const SUPPRESSED: [usize; 3] = [PAD, UNK, FILLER];

impl<T: Real> StepScorer for ModelScorer<'_, T> {
    type State = ModelState<T>;

    fn initial(&self) -> Result<Self::State> {
        Ok(ModelState {
            hidden: vec![self.c.clone(); self.model.config.decoder.layers],
            coverage: None,
        })
    }

    fn step(&self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)> {
        let mut tape = Tape::inference(&self.model.params);
        let mem = Memory {
            keys: tape.borrowed(&self.keys),
            keys_t: tape.borrowed(&self.keys_t),
            copy_index: self.copy_index.clone(),
            vocab_len: self.vocab_len,
        };
        let ds = DecoderState {
            hidden: state.hidden.iter().map(|h| tape.borrowed(h)).collect(),
            coverage: state.coverage.as_ref().map(|c| tape.borrowed(c)),
        };
        let out = decode_step(&mut tape, self.model, &mem, &ds, prev)?;
        let mut probs: Vec<f64> = tape.values(out.probs).iter().map(|v| v.as_f64()).collect();
        for &s in &SUPPRESSED {
            if s < probs.len() {
                probs[s] = 0.0;
            }
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NumericFailure("non-finite decoder probability".into()));
        }
        let next = ModelState {
            hidden: out.state.hidden.iter().map(|&h| tape.tensor(h)).collect(),
            coverage: out.state.coverage.map(|c| tape.tensor(c)),
        };
        Ok((probs, next))
    }
}

/// Phrases in decode order as dynamic ids, before deduplication.
#[derive(Clone, Debug, Default)]
pub struct Generation {
    pub phrases: Vec<Vec<usize>>,
    pub scores: Vec<f64>,
    /// Edge weights used for each phrase, when requested.
    pub snapshots: Vec<GraphSnapshot>,
}

/// Decode one document phrase by phrase, re-scoring the graph with the mean
/// embedding of everything decoded so far.
pub fn generate<T: Real>(
    model: &Model<T>,
    inst: &Instance<'_>,
    cfg: &InferenceConfig,
    record_graphs: bool,
) -> Result<Generation> {
    cfg.validate()?;
    if inst.dyn_vocab.base_len() != model.config.vocab_size {
        return Err(Error::Mismatch(format!(
            "vocabulary has {} entries, model expects {}",
            inst.dyn_vocab.base_len(),
            model.config.vocab_size
        )));
    }
    let mut tape = Tape::inference(&model.params);
    let mut drop = Dropout::off();
    let cache = encode_tokens(&mut tape, model, inst, &mut drop)?;
    let mut out = Generation::default();
    for p in 1..=cfg.max_phrases {
        let decoded: Vec<usize> = out.phrases.concat();
        let e_hat = phrase_embedding(&mut tape, model, &decoded)?;
        let enc = encode_with_cache(&mut tape, model, &inst.graph, &inst.merge, cache, e_hat, &mut drop)?;
        if record_graphs {
            let weights = enc
                .edge_weights
                .map(|w| tape.values(w).iter().map(|v| v.as_f64()).collect())
                .unwrap_or_default();
            out.snapshots.push(GraphSnapshot::new(&inst.id, p, &inst.graph, weights));
        }
        let mem = memory(&mut tape, model, enc.glu, &inst.dyn_vocab)?;
        let scorer = ModelScorer::from_tape(model, &tape, &mem, enc.c);
        let beam = phrase_beam_search(&scorer, &out.phrases, cfg)?;
        let best = &beam[0];
        let phrase = best.phrase().to_vec();
        if phrase.is_empty() {
            break;
        }
        out.phrases.push(phrase);
        out.scores.push(best.score);
        if best.terminator() == Some(EOS) {
            break;
        }
    }
    Ok(out)
}

/// One line of the prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub phrases: Vec<Vec<String>>,
    pub scores: Vec<f64>,
}

/// Surface tokens of each phrase, keeping the first of any phrases equal after stemming.
pub fn to_prediction(inst: &Instance<'_>, generation: &Generation) -> Result<Prediction> {
    let mut seen = HashSet::new();
    let mut phrases = Vec::new();
    let mut scores = Vec::new();
    for (phrase, &score) in generation.phrases.iter().zip(&generation.scores) {
        let words = phrase
            .iter()
            .map(|&t| {
                inst.dyn_vocab
                    .token(t)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Data(format!("token {t} outside dynamic vocabulary")))
            })
            .collect::<Result<Vec<String>>>()?;
        let key: Vec<String> = words.iter().map(|w| stem(w)).collect();
        if seen.insert(key) {
            phrases.push(words);
            scores.push(score);
        }
    }
    Ok(Prediction {
        id: inst.id.clone(),
        phrases,
        scores,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::instance::tests::toy_instance;
    use crate::model::tests::toy_config;
    use proptest::prelude::*;

    /// Fixed next-token table keyed by the previous token.
    pub(crate) struct TableScorer {
        pub rows: Vec<Vec<f64>>,
    }

    impl StepScorer for TableScorer {
        type State = ();

        fn initial(&self) -> Result<()> {
            Ok(())
        }

        fn step(&self, _: &(), prev: usize) -> Result<(Vec<f64>, ())> {
            Ok((self.rows[prev].clone(), ()))
        }
    }

    /// Distribution depends on the whole prefix through a hash.
    pub(crate) struct PrefixScorer {
        pub vocab: usize,
        pub seed: u64,
    }

    impl StepScorer for PrefixScorer {
        type State = Vec<usize>;

        fn initial(&self) -> Result<Vec<usize>> {
            Ok(Vec::new())
        }

        fn step(&self, prefix: &Vec<usize>, prev: usize) -> Result<(Vec<f64>, Vec<usize>)> {
            let mut next = prefix.clone();
            next.push(prev);
            let mut h = self.seed;
            for &t in &next {
                h = h.wrapping_mul(6364136223846793005).wrapping_add(t as u64 + 1442695040888963407);
            }
            let raw: Vec<f64> = (0..self.vocab)
                .map(|i| {
                    let x = h.wrapping_add((i as u64).wrapping_mul(0x9E3779B97F4A7C15));
                    let x = (x ^ (x >> 29)).wrapping_mul(0xBF58476D1CE4E5B9);
                    ((x >> 11) as f64 / (1u64 << 53) as f64) + 0.05
                })
                .collect();
            let z: f64 = raw.iter().sum();
            Ok((raw.iter().map(|r| r / z).collect(), next))
        }
    }

    fn cfg(beam: usize, t: usize) -> InferenceConfig {
        InferenceConfig {
            beam_width: beam,
            lambda1: 0.0,
            lambda2: 0.0,
            max_phrase_len: t,
            ..InferenceConfig::default()
        }
    }

    #[test]
    fn theta_examples() {
        assert_eq!(theta(0.0, 1, 1.0), 0.0);
        assert_eq!(theta(-2.0, 2, 0.0), -2.0);
        assert_eq!(length_penalty(1, 1.0), 1.0);
        assert!((length_penalty(3, 1.0) - 8.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn length_penalty_favours_longer_only_for_large_alpha() {
        // equal mean log-probability m = −1: Θ(L) = −L / ((5+L)/6)^α
        let score = |len: usize, alpha: f64| theta(-(len as f64), len, alpha);
        assert!(score(4, 1.0) < score(2, 1.0));
        assert!(score(4, 3.0) > score(2, 3.0));
        let crossover = 2f64.ln() / (9.0f64 / 7.0).ln();
        assert!((score(4, crossover) - score(2, crossover)).abs() < 1e-12);
    }

    #[test]
    fn dp_examples() {
        assert_eq!(dp_penalty(&[7, 8], &[], 0.5, 0.5), 1.0);
        assert_eq!(dp_penalty(&[7, 8], &[vec![7, 8]], 0.5, 0.5), 0.0);
        assert_eq!(dp_penalty(&[7, 8], &[vec![8, 9]], 0.5, 0.5), 0.75);
        // one token has no bigrams, so only the unigram half can overlap
        assert_eq!(dp_penalty(&[7], &[vec![7]], 0.5, 0.5), 0.5);
        assert_eq!(dp_penalty(&[], &[vec![7]], 0.5, 0.5), 1.0);
    }

    #[test]
    fn rank_examples() {
        let r = ranks(&[0.1, 0.5, 0.2, 0.2]);
        assert_eq!(r, vec![3, 0, 1, 2]);
        assert_eq!(sp_term(2, SiblingMode::Rank), 2.0);
        assert_eq!(sp_term(0, SiblingMode::LogRank), 0.0);
    }

    fn uniform_rows(v: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0 / v as f64; v]; v]
    }

    #[test]
    fn greedy_with_unit_beam() {
        let mut rows = uniform_rows(5);
        rows[SEP] = vec![0.1, 0.1, 0.1, 0.1, 0.6];
        rows[4] = vec![0.0, 0.1, 0.7, 0.1, 0.1];
        let beam = phrase_beam_search(&TableScorer { rows }, &[], &cfg(1, 4)).unwrap();
        assert_eq!(beam[0].tokens, vec![4, SEP]);
        assert_eq!(beam[0].ranks, vec![0, 0]);
    }

    #[test]
    fn zero_probability_tokens_are_never_expanded() {
        let mut rows = uniform_rows(5);
        rows[SEP] = vec![0.0, 0.0, 0.0, 0.5, 0.5];
        let beam = phrase_beam_search(&TableScorer { rows }, &[], &cfg(10, 1)).unwrap();
        assert_eq!(beam.len(), 2);
    }

    #[test]
    fn frozen_hypotheses_keep_their_score() {
        let scorer = PrefixScorer { vocab: 6, seed: 3 };
        let c = InferenceConfig { lambda1: 1.0, lambda2: 0.1, ..cfg(8, 4) };
        let previous = vec![vec![4, 5]];
        let mut beam = phrase_beam_search(&scorer, &previous, &InferenceConfig { max_phrase_len: 1, ..c.clone() })
            .unwrap();
        let frozen: Vec<(Vec<usize>, f64)> =
            beam.iter().filter(|h| is_terminator(h.tokens[0])).map(|h| (h.tokens.clone(), h.score)).collect();
        for h in &mut beam {
            h.frozen = is_terminator(h.tokens[0]);
        }
        let next = beam_step(&scorer, beam, &previous, &c).unwrap();
        for (tokens, score) in frozen {
            if let Some(h) = next.iter().find(|h| h.tokens == tokens) {
                assert_eq!(h.score, score);
            }
        }
    }

    #[test]
    fn empty_beam_is_an_error() {
        let s = TableScorer { rows: uniform_rows(4) };
        assert!(beam_step(&s, Vec::new(), &[], &cfg(1, 1)).is_err());
    }

    #[test]
    fn large_sibling_weight_reduces_to_greedy() {
        let scorer = PrefixScorer { vocab: 6, seed: 11 };
        let greedy = phrase_beam_search(&scorer, &[], &cfg(1, 3)).unwrap();
        let c = InferenceConfig { lambda2: 1e6, ..cfg(30, 3) };
        let wide = phrase_beam_search(&scorer, &[], &c).unwrap();
        assert_eq!(wide[0].tokens, greedy[0].tokens);
        assert!(wide[0].ranks.iter().all(|&r| r == 0));
    }

    /// Plain beam search over Θ written without the diversified machinery.
    fn reference_beam(scorer: &PrefixScorer, b: usize, t: usize, alpha: f64) -> Vec<usize> {
        let mut beam: Vec<(Vec<usize>, f64, bool)> = vec![(Vec::new(), 0.0, false)];
        for _ in 0..t {
            let mut next = Vec::new();
            for (seq, lp, done) in &beam {
                if *done {
                    next.push((seq.clone(), *lp, true));
                    continue;
                }
                let mut prefix = vec![SEP];
                prefix.extend(seq);
                let (probs, _) = scorer.step(&prefix[..prefix.len() - 1].to_vec(), *prefix.last().unwrap()).unwrap();
                for (tok, p) in probs.iter().enumerate() {
                    let mut s = seq.clone();
                    s.push(tok);
                    let done = is_terminator(tok) || s.len() == t;
                    next.push((s, lp + p.ln(), done));
                }
            }
            next.sort_by(|a, b| {
                theta(b.1, b.0.len(), alpha)
                    .total_cmp(&theta(a.1, a.0.len(), alpha))
                    .then_with(|| a.0.cmp(&b.0))
            });
            next.truncate(b);
            beam = next;
            if beam.iter().all(|x| x.2) {
                break;
            }
        }
        beam[0].0.clone()
    }

    #[test]
    fn matches_plain_beam_without_diversity_terms() {
        for seed in 0..20 {
            let scorer = PrefixScorer { vocab: 6, seed };
            for b in [1, 3, 7] {
                let ours = phrase_beam_search(&scorer, &[], &cfg(b, 4)).unwrap();
                assert_eq!(ours[0].tokens, reference_beam(&scorer, b, 4, 1.0), "seed {seed} beam {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn dp_is_bounded(c in proptest::collection::vec(0usize..6, 0..5),
                         prev in proptest::collection::vec(proptest::collection::vec(0usize..6, 0..5), 0..4)) {
            let dp = dp_penalty(&c, &prev, 0.5, 0.5);
            prop_assert!((0.0..=1.0).contains(&dp));
        }

        #[test]
        fn ranks_are_a_permutation(p in proptest::collection::vec(0.0f64..1.0, 1..12)) {
            let mut r = ranks(&p);
            r.sort_unstable();
            prop_assert_eq!(r, (0..p.len()).collect::<Vec<_>>());
        }

        #[test]
        fn sibling_weight_lowers_non_greedy_scores(seed in 0u64..500, l2 in 0.01f64..5.0) {
            let scorer = PrefixScorer { vocab: 5, seed };
            let base = phrase_beam_search(&scorer, &[], &cfg(25, 2)).unwrap();
            for h in base.iter().filter(|h| h.ranks.iter().any(|&r| r > 0)) {
                let (_, _, raised) = diversified_score(&h.tokens, h.log_prob_sum, h.sibling, &[], &InferenceConfig { lambda2: l2, ..cfg(25, 2) });
                prop_assert!(raised < h.score);
            }
        }

        #[test]
        fn beam_respects_width_and_length(seed in 0u64..500, b in 1usize..12, t in 1usize..5) {
            let scorer = PrefixScorer { vocab: 6, seed };
            let beam = phrase_beam_search(&scorer, &[vec![4]], &InferenceConfig { lambda1: 1.0, lambda2: 0.1, ..cfg(b, t) }).unwrap();
            prop_assert!(beam.len() <= b);
            for h in &beam {
                prop_assert!(h.frozen);
                prop_assert!(h.len() <= t);
                prop_assert_eq!(h.ranks.len(), h.len());
                prop_assert!(h.score.is_finite());
                prop_assert!(h.ranks.iter().all(|&r| r < 6));
            }
            for w in beam.windows(2) {
                prop_assert_ne!(beam_order(&w[0], &w[1]), Ordering::Greater);
            }
        }
    }

    #[test]
    fn model_generation_is_well_formed() {
        let model = Model::<f64>::new(toy_config(false), 9).unwrap();
        let inst = toy_instance();
        let c = InferenceConfig { beam_width: 4, max_phrases: 3, max_phrase_len: 3, ..Default::default() };
        let g = generate(&model, &inst, &c, true).unwrap();
        assert!(g.phrases.len() <= 3);
        assert!(g.phrases.iter().all(|p| !p.is_empty() && p.iter().all(|&t| !is_terminator(t) && !SUPPRESSED.contains(&t))));
        assert_eq!(g.snapshots.len(), g.phrases.len() + usize::from(g.phrases.len() < 3));
        let again = generate(&model, &inst, &c, true).unwrap();
        assert_eq!(g.phrases, again.phrases);
        assert_eq!(g.scores, again.scores);
        let pred = to_prediction(&inst, &g).unwrap();
        assert_eq!(pred.phrases.len(), pred.scores.len());
    }

    #[test]
    fn single_phrase_never_updates_graph() {
        let model = Model::<f64>::new(toy_config(true), 2).unwrap();
        let inst = toy_instance();
        let c = InferenceConfig { beam_width: 3, max_phrases: 1, max_phrase_len: 3, ..Default::default() };
        let g = generate(&model, &inst, &c, true).unwrap();
        assert!(g.phrases.len() <= 1);
        assert_eq!(g.snapshots.len(), 1);
        assert_eq!(g.snapshots[0].phrase_index, 1);
    }

    #[test]
    fn stemmed_duplicates_are_dropped() {
        let inst = toy_instance();
        let graph = inst.dyn_vocab.index_of("graph");
        let models = inst.dyn_vocab.index_of("models");
        let g = Generation {
            phrases: vec![vec![graph, models], vec![graph], vec![graph, models]],
            scores: vec![-1.0, -2.0, -3.0],
            snapshots: Vec::new(),
        };
        let p = to_prediction(&inst, &g).unwrap();
        assert_eq!(p.phrases, vec![vec!["graph".to_string(), "models".into()], vec!["graph".into()]]);
        assert_eq!(p.scores, vec![-1.0, -2.0]);
    }
}
