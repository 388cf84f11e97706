//! Weighted dependency graph over document tokens, stem merging, and edge-class statistics.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{find_subsequence, UNK};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{ReduceOp, Real, Tape, Tensor, Var};
use crate::syntax::{AnnotatedDocument, LabelInventory};

/// Inspec graph statistics reported for the original system; informational only.
pub mod reference {
    pub const INSPEC_AVG_NODES: f64 = 145.27;
    pub const INSPEC_AVG_EDGES: f64 = 374.07;
    pub const INSPEC_AVG_IN_IN: f64 = 40.64;
    pub const INSPEC_AVG_IN_OUT: f64 = 75.82;
    pub const OBSERVED_PAIR_DENSITY: f64 = 0.026;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub dependent: usize,
    pub head: usize,
    pub dep_type: usize,
}

/// Undirected dependency links plus implicit unit self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntacticGraph {
    n: usize,
    edges: Vec<Edge>,
    degree: Vec<usize>,
}

impl SyntacticGraph {
    /// Each node pair may be linked at most once.
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Data("graph needs at least one node".into()));
        }
        let mut degree = vec![1; n];
        let mut seen = HashSet::new();
        for e in &edges {
            if e.dependent >= n || e.head >= n || e.dependent == e.head {
                return Err(Error::Data(format!(
                    "edge ({}, {}) invalid for {n} nodes",
                    e.dependent, e.head
                )));
            }
            let key = (e.dependent.min(e.head), e.dependent.max(e.head));
            if !seen.insert(key) {
                return Err(Error::Data(format!("duplicate edge between {} and {}", key.0, key.1)));
            }
            degree[e.dependent] += 1;
            degree[e.head] += 1;
        }
        Ok(Self { n, edges, degree })
    }

    pub fn from_document(doc: &AnnotatedDocument, deprels: &LabelInventory) -> Result<Self> {
        let edges = doc
            .edges()
            .into_iter()
            .map(|(dependent, head, rel)| Edge {
                dependent,
                head,
                dep_type: deprels.lookup(&rel),
            })
            .collect();
        Self::new(doc.len(), edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `1 + number of neighbours`.
    pub fn degree(&self) -> &[usize] {
        &self.degree
    }

    /// Linked pairs over all ordered node pairs.
    pub fn density(&self) -> f64 {
        self.edges.len() as f64 / (self.n * self.n) as f64
    }

    /// Dense symmetric weight matrix with unit diagonal, row-major.
    pub fn dense(&self, weights: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        for (e, &w) in self.edges.iter().zip(weights) {
            a[e.dependent * n + e.head] = w;
            a[e.head * n + e.dependent] = w;
        }
        a
    }
}

/// Score every edge as `σ(W_e [e_i; e_j; e^t; ê])` with `i` the dependent and `j` the head.
///
/// `e` is `[n, d_in]`, `e_hat` holds `d_w` values. Returns `[edges, 1]`, or `None` for an edgeless graph.
/// The linear map is evaluated blockwise: per-node and per-type terms are computed once and gathered.
pub fn score_edges<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    graph: &SyntacticGraph,
    e: Var,
    e_hat: Var,
) -> Result<Option<Var>> {
    let enc = &model.config.encoder;
    let d_in = enc.d_in();
    if tape.shape(e) != [graph.n(), d_in] || tape.value(e_hat).numel() != enc.d_w {
        return Err(Error::NumericFailure(format!(
            "edge scorer expects [{}, {d_in}] embeddings and a {}-dim phrase vector, got {:?} and {:?}",
            graph.n(),
            enc.d_w,
            tape.shape(e),
            tape.shape(e_hat)
        )));
    }
    if graph.edges().is_empty() {
        return Ok(None);
    }
    let w = tape.param(model.ids.edge_w);
    let w_dep = tape.narrow(w, 0, 0, d_in)?;
    let w_head = tape.narrow(w, 0, d_in, d_in)?;
    let w_type = tape.narrow(w, 0, 2 * d_in, enc.d_t)?;
    let w_hat = tape.narrow(w, 0, 2 * d_in + enc.d_t, enc.d_w)?;
    let node_dep = tape.matmul(e, w_dep)?;
    let node_head = tape.matmul(e, w_head)?;
    let types = tape.param(model.ids.edge_type);
    let type_score = tape.matmul(types, w_type)?;
    let e_hat_row = tape.reshape(e_hat, &[1, enc.d_w])?;
    let hat_score = tape.matmul(e_hat_row, w_hat)?;
    let deps: Vec<usize> = graph.edges().iter().map(|x| x.dependent).collect();
    let heads: Vec<usize> = graph.edges().iter().map(|x| x.head).collect();
    let kinds: Vec<usize> = graph.edges().iter().map(|x| x.dep_type).collect();
    let a = tape.gather_rows(node_dep, &deps)?;
    let b = tape.gather_rows(node_head, &heads)?;
    let t = tape.gather_rows(type_score, &kinds)?;
    let s = tape.add(a, b)?;
    let s = tape.add(s, t)?;
    let s = tape.add(s, hat_score)?;
    Ok(Some(tape.sigmoid(s)))
}

/// `D⁻¹ A` as an `[n, n]` variable: symmetric edge weights, unit self-loops, rows scaled by `1/d_i`.
pub fn normalized_adjacency<T: Real>(
    tape: &mut Tape<'_, T>,
    graph: &SyntacticGraph,
    weights: Option<Var>,
) -> Result<Var> {
    let n = graph.n();
    let inv_deg: Vec<T> = (0..n * n)
        .map(|k| T::from_f64_lossy(1.0 / graph.degree()[k / n] as f64))
        .collect();
    let mut eye = vec![T::zero(); n * n];
    for i in 0..n {
        eye[i * n + i] = T::one();
    }
    let eye = tape.constant(Tensor::new(vec![n * n, 1], eye)?);
    let a = match weights {
        None => eye,
        Some(w) => {
            let both = tape.concat(&[w, w], 0)?;
            let index: Vec<usize> = graph
                .edges()
                .iter()
                .map(|e| e.dependent * n + e.head)
                .chain(graph.edges().iter().map(|e| e.head * n + e.dependent))
                .collect();
            let off = tape.scatter_rows(both, &index, n * n)?;
            tape.add(off, eye)?
        }
    };
    let scale = tape.constant(Tensor::new(vec![n * n, 1], inv_deg)?);
    let a = tape.mul(a, scale)?;
    Ok(tape.reshape(a, &[n, n])?)
}

/// Mean word embedding of all previously decoded tokens, as `[1, d_w]`; zeros when none.
///
/// Dynamic indices outside the static table use the UNK row.
pub fn phrase_embedding<T: Real>(tape: &mut Tape<'_, T>, model: &Model<T>, decoded: &[usize]) -> Result<Var> {
    let d_w = model.config.encoder.d_w;
    if decoded.is_empty() {
        return Ok(tape.constant(Tensor::zeros(&[1, d_w])));
    }
    let rows: Vec<usize> = decoded
        .iter()
        .map(|&i| if i < model.config.vocab_size { i } else { UNK })
        .collect();
    let table = tape.param(model.ids.word);
    let picked = tape.gather_rows(table, &rows)?;
    let mean = tape.reduce(ReduceOp::Mean, picked, 0)?;
    Ok(tape.reshape(mean, &[1, d_w])?)
}

/// Token → group assignment where groups collect tokens sharing a stem, in first-occurrence order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeMap {
    group_of: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

pub fn build_merge_map(stems: &[String]) -> MergeMap {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let group_of = stems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let g = *index.entry(s.as_str()).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
            g
        })
        .collect();
    MergeMap { group_of, groups }
}

impl MergeMap {
    pub fn len(&self) -> usize {
        self.group_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_of.is_empty()
    }

    pub fn merged_len(&self) -> usize {
        self.groups.len()
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    /// Token indices of each group, ascending.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// `[l′, l]` averaging matrix.
    pub fn matrix<T: Real>(&self) -> Tensor<T> {
        let (rows, cols) = (self.merged_len(), self.len());
        let mut m = vec![T::zero(); rows * cols];
        for (g, members) in self.groups.iter().enumerate() {
            let w = T::from_f64_lossy(1.0 / members.len() as f64);
            for &i in members {
                m[g * cols + i] = w;
            }
        }
        Tensor::new(vec![rows, cols], m).expect("merge matrix shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeClass {
    #[serde(rename = "E_in_in")]
    InIn,
    #[serde(rename = "E_in_out")]
    InOut,
    #[serde(rename = "E_others")]
    Others,
}

impl EdgeClass {
    pub const ALL: [EdgeClass; 3] = [EdgeClass::InIn, EdgeClass::InOut, EdgeClass::Others];

    pub fn name(self) -> &'static str {
        match self {
            EdgeClass::InIn => "E_in_in",
            EdgeClass::InOut => "E_in_out",
            EdgeClass::Others => "E_others",
        }
    }

    pub fn of(dependent_in: bool, head_in: bool) -> Self {
        match (dependent_in, head_in) {
            (true, true) => EdgeClass::InIn,
            (false, false) => EdgeClass::Others,
            _ => EdgeClass::InOut,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ClassStats {
    pub edges: Vec<usize>,
    pub weight_sum: f64,
}

impl ClassStats {
    pub fn count(&self) -> usize {
        self.edges.len()
    }

    /// Mean edge weight, or `None` for an empty class.
    pub fn mean_weight(&self) -> Option<f64> {
        (!self.edges.is_empty()).then(|| self.weight_sum / self.edges.len() as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EdgeClassification {
    pub in_in: ClassStats,
    pub in_out: ClassStats,
    pub others: ClassStats,
}

impl EdgeClassification {
    pub fn get(&self, class: EdgeClass) -> &ClassStats {
        match class {
            EdgeClass::InIn => &self.in_in,
            EdgeClass::InOut => &self.in_out,
            EdgeClass::Others => &self.others,
        }
    }

    fn get_mut(&mut self, class: EdgeClass) -> &mut ClassStats {
        match class {
            EdgeClass::InIn => &mut self.in_in,
            EdgeClass::InOut => &mut self.in_out,
            EdgeClass::Others => &mut self.others,
        }
    }
}

/// Tokens whose stem is a word of some gold present phrase.
pub fn target_mask(doc_stems: &[String], present_stems: &[Vec<String>]) -> Vec<bool> {
    let words: HashSet<&str> = present_stems.iter().flatten().map(String::as_str).collect();
    doc_stems.iter().map(|s| words.contains(s.as_str())).collect()
}

/// Tokens covered by some occurrence of a gold present phrase.
pub fn occurrence_mask(doc_stems: &[String], present_stems: &[Vec<String>]) -> Vec<bool> {
    let mut mask = vec![false; doc_stems.len()];
    for p in present_stems {
        let mut from = 0;
        while let Some(k) = find_subsequence(&doc_stems[from..], p) {
            let start = from + k;
            mask[start..start + p.len()].iter_mut().for_each(|m| *m = true);
            from = start + 1;
        }
    }
    mask
}

/// Partition edges by how many endpoints are target words; `weights` align with `graph.edges()`.
pub fn classify_edges(graph: &SyntacticGraph, weights: &[f64], in_target: &[bool]) -> Result<EdgeClassification> {
    if weights.len() != graph.edges().len() || in_target.len() != graph.n() {
        return Err(Error::Data(format!(
            "classification needs {} weights and {} node flags, got {} and {}",
            graph.edges().len(),
            graph.n(),
            weights.len(),
            in_target.len()
        )));
    }
    let mut out = EdgeClassification::default();
    for (k, (e, &w)) in graph.edges().iter().zip(weights).enumerate() {
        let stats = out.get_mut(EdgeClass::of(in_target[e.dependent], in_target[e.head]));
        stats.edges.push(k);
        stats.weight_sum += w;
    }
    Ok(out)
}

/// Edge weights of one document's graph after scoring for phrase `phrase_index` (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub id: String,
    pub phrase_index: usize,
    pub nodes: usize,
    /// `(dependent, head, type)` triples.
    pub edges: Vec<(usize, usize, usize)>,
    pub weights: Vec<f64>,
}

impl GraphSnapshot {
    pub fn new(id: &str, phrase_index: usize, graph: &SyntacticGraph, weights: Vec<f64>) -> Self {
        Self {
            id: id.to_string(),
            phrase_index,
            nodes: graph.n(),
            edges: graph.edges().iter().map(|e| (e.dependent, e.head, e.dep_type)).collect(),
            weights,
        }
    }

    pub fn graph(&self) -> Result<SyntacticGraph> {
        SyntacticGraph::new(
            self.nodes,
            self.edges
                .iter()
                .map(|&(dependent, head, dep_type)| Edge {
                    dependent,
                    head,
                    dep_type,
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::toy_config;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn chain(n: usize) -> SyntacticGraph {
        let edges = (1..n)
            .map(|i| Edge {
                dependent: i,
                head: i - 1,
                dep_type: i % 3,
            })
            .collect();
        SyntacticGraph::new(n, edges).unwrap()
    }

    #[test]
    fn degree_counts_self_loop() {
        let g = chain(3);
        assert_eq!(g.degree(), &[2, 3, 2]);
    }

    #[test]
    fn rejects_self_edges_and_duplicates() {
        let e = |a, b| Edge {
            dependent: a,
            head: b,
            dep_type: 0,
        };
        assert!(SyntacticGraph::new(2, vec![e(0, 0)]).is_err());
        assert!(SyntacticGraph::new(2, vec![e(0, 1), e(1, 0)]).is_err());
        assert!(SyntacticGraph::new(2, vec![e(0, 5)]).is_err());
    }

    #[test]
    fn merge_map_examples() {
        let m = build_merge_map(&s(&["network", "network"]));
        assert_eq!(m.group_of(), &[0, 0]);
        let m = build_merge_map(&s(&["a", "b", "c"]));
        assert_eq!(m.group_of(), &[0, 1, 2]);
        assert_eq!(m.merged_len(), 3);
        let m = build_merge_map(&s(&["w1", "w2", "w3", "w2", "w4"]));
        assert_eq!(m.merged_len(), 4);
        assert_eq!(m.group_of()[1], m.group_of()[3]);
        assert_eq!(m.groups()[1], vec![1, 3]);
    }

    #[test]
    fn merge_matrix_averages_groups() {
        let m = build_merge_map(&s(&["x", "x"]));
        let mut tape = Tape::<f64>::detached();
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap());
        let mm = tape.constant(m.matrix());
        let out = tape.matmul(mm, h).unwrap();
        assert_eq!(tape.values(out), &[2.0, 2.0]);
    }

    fn embeddings(tape: &mut Tape<'_, f64>, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Var {
        let v = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        tape.constant(Tensor::new(vec![n, d], v).unwrap())
    }

    #[test]
    fn zero_scorer_gives_one_half() {
        let mut model = Model::<f64>::new(toy_config(false), 4).unwrap();
        model.params.get_mut(model.ids.edge_w).values_mut().fill(0.0);
        let g = chain(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::inference(&model.params);
        let e = embeddings(&mut tape, 4, model.config.encoder.d_in(), &mut rng);
        let hat = phrase_embedding(&mut tape, &model, &[]).unwrap();
        let w = score_edges(&mut tape, &model, &g, e, hat).unwrap().unwrap();
        assert!(tape.values(w).iter().all(|&x| x == 0.5));
    }

    #[test]
    fn scores_match_explicit_concatenation() {
        let model = Model::<f64>::new(toy_config(false), 5).unwrap();
        let cfg = &model.config.encoder;
        let g = chain(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::inference(&model.params);
        let e = embeddings(&mut tape, 5, cfg.d_in(), &mut rng);
        let hat = phrase_embedding(&mut tape, &model, &[7, 9]).unwrap();
        let w = score_edges(&mut tape, &model, &g, e, hat).unwrap().unwrap();
        // dense oracle: build each concatenated input and take the dot product
        let ev = tape.values(e).to_vec();
        let hv = tape.values(hat).to_vec();
        let we = model.params.get(model.ids.edge_w).values();
        let types = model.params.get(model.ids.edge_type);
        for (k, edge) in g.edges().iter().enumerate() {
            let mut x = ev[edge.dependent * cfg.d_in()..(edge.dependent + 1) * cfg.d_in()].to_vec();
            x.extend_from_slice(&ev[edge.head * cfg.d_in()..(edge.head + 1) * cfg.d_in()]);
            x.extend_from_slice(types.row(edge.dep_type));
            x.extend_from_slice(&hv);
            let z: f64 = x.iter().zip(we).map(|(a, b)| a * b).sum();
            let expect = 1.0 / (1.0 + (-z).exp());
            assert!((tape.values(w)[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn phrase_embedding_examples() {
        let mut model = Model::<f64>::new(toy_config(false), 6).unwrap();
        let d = model.config.encoder.d_w;
        let table = model.params.get_mut(model.ids.word);
        let v: Vec<f64> = table.row(8).to_vec();
        table.values_mut()[9 * d..10 * d].copy_from_slice(&v.iter().map(|x| -x).collect::<Vec<_>>());
        let mut tape = Tape::inference(&model.params);
        let one = phrase_embedding(&mut tape, &model, &[8]).unwrap();
        assert_eq!(tape.values(one), v.as_slice());
        let sym = phrase_embedding(&mut tape, &model, &[8, 9]).unwrap();
        assert!(tape.values(sym).iter().all(|x| x.abs() < 1e-15));
        let oov = phrase_embedding(&mut tape, &model, &[model.config.vocab_size + 2]).unwrap();
        assert_eq!(tape.values(oov), model.params.get(model.ids.word).row(UNK));
    }

    #[test]
    fn adjacency_is_row_normalized_and_sparse() {
        let g = chain(4);
        let mut tape = Tape::<f64>::detached();
        let w = tape.constant(Tensor::new(vec![3, 1], vec![0.2, 0.5, 0.7]).unwrap());
        let a = normalized_adjacency(&mut tape, &g, Some(w)).unwrap();
        let dense = g.dense(&[0.2, 0.5, 0.7]);
        for i in 0..4 {
            for j in 0..4 {
                let expect = dense[i * 4 + j] / g.degree()[i] as f64;
                assert!((tape.values(a)[i * 4 + j] - expect).abs() < 1e-15);
            }
        }
        assert_eq!(tape.values(a)[3], 0.0);
    }

    #[test]
    fn classification_examples() {
        let g = chain(4);
        let mask = target_mask(&s(&["graph", "model", "for", "text"]), &[s(&["graph", "model"])]);
        assert_eq!(mask, vec![true, true, false, false]);
        let c = classify_edges(&g, &[0.1, 0.2, 0.3], &mask).unwrap();
        assert_eq!(c.in_in.edges, vec![0]);
        assert_eq!(c.in_out.edges, vec![1]);
        assert_eq!(c.others.edges, vec![2]);
        assert_eq!(c.others.mean_weight(), Some(0.3));
    }

    #[test]
    fn occurrence_mask_covers_spans() {
        let doc = s(&["a", "b", "c", "a", "b"]);
        assert_eq!(occurrence_mask(&doc, &[s(&["a", "b"])]), vec![true, true, false, true, true]);
    }

    proptest! {
        #[test]
        fn classes_partition_edges(n in 2usize..12, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let edges = (1..n).map(|i| Edge { dependent: i, head: rng.gen_range(0..i), dep_type: 0 }).collect();
            let g = SyntacticGraph::new(n, edges).unwrap();
            let mask: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            let w: Vec<f64> = (0..n - 1).map(|_| rng.gen()).collect();
            let c = classify_edges(&g, &w, &mask).unwrap();
            let mut all: Vec<usize> = EdgeClass::ALL.iter().flat_map(|&k| c.get(k).edges.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n - 1).collect::<Vec<_>>());
        }

        #[test]
        fn scoring_is_permutation_equivariant(seed in 0u64..200) {
            let model = Model::<f64>::new(toy_config(false), seed).unwrap();
            let d = model.config.encoder.d_in();
            let n = 5;
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let base: Vec<Edge> = (1..n).map(|i| Edge { dependent: i, head: rng.gen_range(0..i), dep_type: rng.gen_range(0..5) }).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let mut permuted_rows = vec![Vec::new(); n];
            for (i, r) in rows.iter().enumerate() {
                permuted_rows[perm[i]] = r.clone();
            }
            let relabeled: Vec<Edge> = base.iter().map(|e| Edge { dependent: perm[e.dependent], head: perm[e.head], dep_type: e.dep_type }).collect();
            let g1 = SyntacticGraph::new(n, base).unwrap();
            let g2 = SyntacticGraph::new(n, relabeled).unwrap();
            let mut tape = Tape::inference(&model.params);
            let e1 = tape.constant(Tensor::from_rows(&rows).unwrap());
            let e2 = tape.constant(Tensor::from_rows(&permuted_rows).unwrap());
            let hat = phrase_embedding(&mut tape, &model, &[10]).unwrap();
            let w1 = score_edges(&mut tape, &model, &g1, e1, hat).unwrap().unwrap();
            let w2 = score_edges(&mut tape, &model, &g2, e2, hat).unwrap().unwrap();
            prop_assert_eq!(tape.values(w1), tape.values(w2));
        }
    }
}
