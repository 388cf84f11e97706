//! Embedding, BiGRU, graph convolution, stem merge and gated pooling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{normalized_adjacency, phrase_embedding, score_edges, MergeMap, SyntacticGraph};
use crate::instance::Instance;
use crate::model::{GruIds, Model};
use crate::numerics::{ReduceOp, Real, Tape, Tensor, Var};

/// Dropout switch with its own random stream.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some() && self.rate > 0.0
    }

    pub fn apply<T: Real>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match self.rng.as_mut() {
            Some(rng) if self.rate > 0.0 => Ok(tape.dropout(x, self.rate, true, rng)?),
            _ => Ok(x),
        }
    }

    /// Fresh independent stream, e.g. per document.
    pub fn fork(&mut self) -> Self {
        match self.rng.as_mut() {
            Some(rng) => Self::train(self.rate, rng.gen()),
            None => Self::off(),
        }
    }
}

/// Fixed sinusoidal table `[n, d]`: `sin(p / 10000^(2i/d))` at even columns, `cos` at odd.
pub fn position_encoding<T: Real>(n: usize, d: usize) -> Tensor<T> {
    let mut out = Vec::with_capacity(n * d);
    for p in 0..n {
        for k in 0..d {
            let i = (k / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * i / d as f64);
            out.push(T::from_f64_lossy(if k % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![n, d], out).expect("position table shape")
}

/// `e_i = [e^w_i; e^pos_i; e^p_i]` for every token, as `[l, d_in]`.
pub fn embed<T: Real>(tape: &mut Tape<'_, T>, model: &Model<T>, inst: &Instance<'_>) -> Result<Var> {
    let enc = &model.config.encoder;
    let words = tape.param(model.ids.word);
    let w = tape.gather_rows(words, &inst.word_ids)?;
    let tags = tape.param(model.ids.pos);
    let p = tape.gather_rows(tags, &inst.pos_ids)?;
    let pos = tape.constant(position_encoding(inst.len(), enc.d_p));
    Ok(tape.concat(&[w, p, pos], 1)?)
}

fn bias_row<T: Real>(tape: &mut Tape<'_, T>, b: Var) -> Result<Var> {
    let n = tape.value(b).numel();
    Ok(tape.reshape(b, &[1, n])?)
}

/// One GRU update. `xw` is the precomputed `x W_i + b_i` row, `[1, 3H]`.
pub fn gru_step<T: Real>(tape: &mut Tape<'_, T>, cell: &GruIds, xw: Var, h: Var) -> Result<Var> {
    let hidden = tape.shape(h)[1];
    let w_h = tape.param(cell.w_h);
    let b_h = tape.param(cell.b_h);
    let b_h = bias_row(tape, b_h)?;
    let hw = tape.matmul(h, w_h)?;
    let hw = tape.add(hw, b_h)?;
    let gate = |tape: &mut Tape<'_, T>, v: Var, k: usize| tape.narrow(v, 1, k * hidden, hidden);
    let (xr, xz, xn) = (gate(tape, xw, 0)?, gate(tape, xw, 1)?, gate(tape, xw, 2)?);
    let (hr, hz, hn) = (gate(tape, hw, 0)?, gate(tape, hw, 1)?, gate(tape, hw, 2)?);
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r);
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z);
    let rn = tape.mul(r, hn)?;
    let n = tape.add(xn, rn)?;
    let n = tape.tanh(n);
    let diff = tape.sub(h, n)?;
    let zd = tape.mul(z, diff)?;
    Ok(tape.add(n, zd)?)
}

/// Input projection `x W_i + b_i` for a single row.
pub fn gru_input<T: Real>(tape: &mut Tape<'_, T>, cell: &GruIds, x: Var) -> Result<Var> {
    let w_i = tape.param(cell.w_i);
    let b_i = tape.param(cell.b_i);
    let b_i = bias_row(tape, b_i)?;
    let xw = tape.matmul(x, w_i)?;
    Ok(tape.add(xw, b_i)?)
}

fn run_direction<T: Real>(
    tape: &mut Tape<'_, T>,
    cell: &GruIds,
    x: Var,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<Var>> {
    let l = tape.shape(x)[0];
    let w_i = tape.param(cell.w_i);
    let b_i = tape.param(cell.b_i);
    let xw = tape.matmul(x, w_i)?;
    let b = tape.broadcast_rows(b_i, l);
    let xw = tape.add(xw, b)?;
    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut out = vec![h; l];
    let order: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
    for t in order {
        let row = tape.narrow(xw, 0, t, 1)?;
        h = gru_step(tape, cell, row, h)?;
        out[t] = h;
    }
    Ok(out)
}

/// Forward and backward hidden states concatenated per position, `[l, 2·gru_hidden]`.
pub fn bigru<T: Real>(tape: &mut Tape<'_, T>, model: &Model<T>, x: Var) -> Result<Var> {
    let g = model.config.encoder.gru_hidden;
    let fwd = run_direction(tape, &model.ids.gru_fwd, x, g, false)?;
    let bwd = run_direction(tape, &model.ids.gru_bwd, x, g, true)?;
    let f = tape.concat(&fwd, 0)?;
    let b = tape.concat(&bwd, 0)?;
    Ok(tape.concat(&[f, b], 1)?)
}

/// `h^k_i = ReLU(Σ_j (1/d_i) A_ij (W h_j + b))` with `adj` already row-normalized.
pub fn gcn_layer<T: Real>(tape: &mut Tape<'_, T>, layer: (Var, Var), h: Var, adj: Var) -> Result<Var> {
    let (w, b) = layer;
    let l = tape.shape(h)[0];
    let hw = tape.matmul(h, w)?;
    let bias = tape.broadcast_rows(b, l);
    let hw = tape.add(hw, bias)?;
    let agg = tape.matmul(adj, hw)?;
    Ok(tape.relu(agg))
}

/// Mean of each stem group's rows, `[l′, d]`.
pub fn merge<T: Real>(tape: &mut Tape<'_, T>, map: &MergeMap, h: Var) -> Result<Var> {
    let m = tape.constant(map.matrix());
    Ok(tape.matmul(m, h)?)
}

/// Residual gated linear unit over rows, then the row mean: `(H + (H W_k) ⊗ σ(H W_l), c)`.
pub fn glu_context<T: Real>(tape: &mut Tape<'_, T>, model: &Model<T>, h: Var) -> Result<(Var, Var)> {
    let w_k = tape.param(model.ids.glu_k);
    let w_l = tape.param(model.ids.glu_l);
    let lin = tape.matmul(h, w_k)?;
    let gate = tape.matmul(h, w_l)?;
    let gate = tape.sigmoid(gate);
    let g = tape.mul(lin, gate)?;
    let out = tape.add(h, g)?;
    let c = tape.reduce(ReduceOp::Mean, out, 0)?;
    let d = tape.value(c).numel();
    let c = tape.reshape(c, &[1, d])?;
    Ok((out, c))
}

/// Per-document quantities that do not depend on decoded phrases.
#[derive(Clone, Copy, Debug)]
pub struct TokenCache {
    pub e: Var,
    pub h0: Var,
    /// Projected BiGRU output fed to the first GCN layer, `[l, d_h]`.
    pub x: Var,
}

#[derive(Clone, Debug)]
pub struct EncoderState {
    pub cache: TokenCache,
    pub edge_weights: Option<Var>,
    pub adjacency: Var,
    pub h_n: Var,
    pub merged: Var,
    pub glu: Var,
    pub c: Var,
}

pub fn encode_tokens<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    inst: &Instance<'_>,
    drop: &mut Dropout,
) -> Result<TokenCache> {
    let e = embed(tape, model, inst)?;
    let e_in = drop.apply(tape, e)?;
    let h0 = bigru(tape, model, e_in)?;
    let w = tape.param(model.ids.proj_w);
    let b = tape.param(model.ids.proj_b);
    let x = tape.matmul(h0, w)?;
    let bias = tape.broadcast_rows(b, inst.len());
    let x = tape.add(x, bias)?;
    Ok(TokenCache { e, h0, x })
}

/// Re-score the graph from `e_hat` and run everything downstream of the BiGRU.
pub fn encode_with_cache<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    graph: &SyntacticGraph,
    merge_map: &MergeMap,
    cache: TokenCache,
    e_hat: Var,
    drop: &mut Dropout,
) -> Result<EncoderState> {
    let edge_weights = score_edges(tape, model, graph, cache.e, e_hat)?;
    let adjacency = normalized_adjacency(tape, graph, edge_weights)?;
    let mut h = cache.x;
    for &(w, b) in &model.ids.gcn {
        let layer = (tape.param(w), tape.param(b));
        h = gcn_layer(tape, layer, h, adjacency)?;
        h = drop.apply(tape, h)?;
    }
    let merged = merge(tape, merge_map, h)?;
    let (glu, c) = glu_context(tape, model, merged)?;
    Ok(EncoderState {
        cache,
        edge_weights,
        adjacency,
        h_n: h,
        merged,
        glu,
        c,
    })
}

/// Full encoder pass given previously decoded dynamic-vocabulary tokens.
pub fn encode<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    inst: &Instance<'_>,
    decoded: &[usize],
    drop: &mut Dropout,
) -> Result<EncoderState> {
    let cache = encode_tokens(tape, model, inst, drop)?;
    let e_hat = phrase_embedding(tape, model, decoded)?;
    encode_with_cache(tape, model, &inst.graph, &inst.merge, cache, e_hat, drop)
}
