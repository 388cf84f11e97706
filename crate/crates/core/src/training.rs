//! Teacher-forced loss, Adam with global-norm clipping, and the validation-driven schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::corpus::{TargetSequence, SEP};
use crate::decoder::{decode_step, memory, DecoderState};
use crate::encoder::{encode_tokens, encode_with_cache, Dropout};
use crate::error::{Error, Result};
use crate::graph::phrase_embedding;
use crate::instance::Instance;
use crate::model::Model;
use crate::numerics::{Gradients, ParamStore, Real, Tape, Var};

/// Log-probabilities below this are clamped so the loss stays finite.
pub const LOG_FLOOR: f64 = -50.0;

pub struct DocumentLoss {
    /// `−Σ log P(y_t)` over every target token, terminators included.
    pub nll: Var,
    /// `Σ_t Σ_i min(a_t,i, coverage_t,i)`, or `None` when no step had prior coverage.
    pub coverage: Option<Var>,
    pub tokens: usize,
    pub clamped: usize,
}

/// Teacher-forced pass over one document's target, re-encoding before every phrase
/// with the mean embedding of the gold phrases already emitted.
pub fn document_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    inst: &Instance<'_>,
    target: &TargetSequence,
    drop: &mut Dropout,
) -> Result<DocumentLoss> {
    if !target.check_invariants() {
        return Err(Error::Document {
            doc_id: inst.id.clone(),
            message: "malformed target sequence".into(),
        });
    }
    let cache = encode_tokens(tape, model, inst, drop)?;
    let mut decoded: Vec<usize> = Vec::new();
    let mut log_probs = Vec::with_capacity(target.tokens.len());
    let mut penalties = Vec::new();
    let mut clamped = 0;
    let mut start = 0;
    for &end in &target.phrase_ends {
        let e_hat = phrase_embedding(tape, model, &decoded)?;
        let enc = encode_with_cache(tape, model, &inst.graph, &inst.merge, cache, e_hat, drop)?;
        let mem = memory(tape, model, enc.glu, &inst.dyn_vocab)?;
        let mut state = DecoderState::start(enc.c, model.config.decoder.layers);
        let mut prev = SEP;
        for &y in &target.tokens[start..=end] {
            let out = decode_step(tape, model, &mem, &state, prev)?;
            let flat = tape.reshape(out.probs, &[mem.vocab_len])?;
            let p = tape.gather_rows(flat, &[y])?;
            let lp = tape.log_clamped(p, LOG_FLOOR);
            if tape.scalar_value(lp).as_f64() <= LOG_FLOOR {
                clamped += 1;
            }
            log_probs.push(tape.reshape(lp, &[1])?);
            if let Some(pen) = out.penalty {
                penalties.push(tape.reshape(pen, &[1])?);
            }
            state = out.state;
            prev = y;
        }
        decoded.extend_from_slice(&target.tokens[start..end]);
        start = end + 1;
    }
    let all = tape.concat(&log_probs, 0)?;
    let total = tape.sum_all(all);
    let nll = tape.scale(total, -T::one());
    let coverage = if penalties.is_empty() {
        None
    } else {
        let all = tape.concat(&penalties, 0)?;
        Some(tape.sum_all(all))
    };
    Ok(DocumentLoss {
        nll,
        coverage,
        tokens: target.tokens.len(),
        clamped,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchStats {
    /// `Σ (nll + λ·coverage)`.
    pub objective: f64,
    pub nll: f64,
    pub tokens: usize,
    pub clamped: usize,
}

impl BatchStats {
    /// Objective per target token.
    pub fn loss(&self) -> f64 {
        self.objective / self.tokens.max(1) as f64
    }

    fn add(&mut self, other: &BatchStats) {
        self.objective += other.objective;
        self.nll += other.nll;
        self.tokens += other.tokens;
        self.clamped += other.clamped;
    }
}

pub struct Example<'a, 'v> {
    pub inst: &'a Instance<'v>,
    pub target: &'a TargetSequence,
}

fn objective<T: Real>(tape: &mut Tape<'_, T>, loss: &DocumentLoss, coverage_weight: f64) -> Result<Var> {
    Ok(match loss.coverage {
        Some(c) if coverage_weight != 0.0 => {
            let c = tape.scale(c, T::from_f64_lossy(coverage_weight));
            tape.add(loss.nll, c)?
        }
        _ => loss.nll,
    })
}

/// Mean-per-token gradient of the batch objective. Documents run in parallel on
/// separate tapes; their gradients are summed in batch order.
pub fn batch_gradients<T: Real>(
    model: &Model<T>,
    batch: &[Example<'_, '_>],
    coverage_weight: f64,
    dropout_seeds: Option<&[u64]>,
) -> Result<(Gradients<T>, BatchStats)> {
    let rate = model.config.encoder.dropout;
    let per_doc: Vec<Result<(Vec<(usize, Vec<T>)>, BatchStats)>> = batch
        .par_iter()
        .enumerate()
        .map(|(k, ex)| {
            let mut drop = match dropout_seeds {
                Some(seeds) => Dropout::train(rate, seeds[k]),
                None => Dropout::off(),
            };
            let mut tape = Tape::new(&model.params);
            let loss = document_loss(&mut tape, model, ex.inst, ex.target, &mut drop)?;
            let obj = objective(&mut tape, &loss, coverage_weight)?;
            let stats = BatchStats {
                objective: tape.scalar_value(obj).as_f64(),
                nll: tape.scalar_value(loss.nll).as_f64(),
                tokens: loss.tokens,
                clamped: loss.clamped,
            };
            tape.backward(obj)?;
            let grads = tape
                .param_grads()
                .into_iter()
                .map(|(id, g)| (id.index(), g.to_vec()))
                .collect();
            Ok((grads, stats))
        })
        .collect();
    let mut grads = Gradients::for_store(&model.params);
    let mut stats = BatchStats::default();
    let ids: Vec<_> = model.params.ids().collect();
    for doc in per_doc {
        let (g, s) = doc?;
        for (i, v) in g {
            grads.accumulate(ids[i], &v);
        }
        stats.add(&s);
    }
    if stats.tokens > 0 {
        grads.scale(T::from_f64_lossy(1.0 / stats.tokens as f64));
    }
    Ok((grads, stats))
}

/// Loss of the batch without gradients, for checks and validation.
pub fn batch_loss<T: Real>(model: &Model<T>, batch: &[Example<'_, '_>], coverage_weight: f64) -> Result<BatchStats> {
    let per_doc: Vec<Result<BatchStats>> = batch
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::inference(&model.params);
            let loss = document_loss(&mut tape, model, ex.inst, ex.target, &mut Dropout::off())?;
            let obj = objective(&mut tape, &loss, coverage_weight)?;
            Ok(BatchStats {
                objective: tape.scalar_value(obj).as_f64(),
                nll: tape.scalar_value(loss.nll).as_f64(),
                tokens: loss.tokens,
                clamped: loss.clamped,
            })
        })
        .collect();
    let mut stats = BatchStats::default();
    for s in per_doc {
        stats.add(&s?);
    }
    Ok(stats)
}

/// `exp(mean token NLL)`; the coverage term is excluded.
pub fn perplexity<T: Real>(model: &Model<T>, batch: &[Example<'_, '_>]) -> Result<f64> {
    let s = batch_loss(model, batch, 0.0)?;
    Ok((s.nll / s.tokens.max(1) as f64).exp())
}

/// Adam with bias correction; moments are kept in double precision.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new<T: Real>(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let values = store.get_mut(id).values_mut();
            for k in 0..values.len() {
                let gk = g.map_or(0.0, |g| g[k].as_f64());
                self.m[i][k] = self.beta1 * self.m[i][k] + (1.0 - self.beta1) * gk;
                self.v[i][k] = self.beta2 * self.v[i][k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = self.m[i][k] / c1;
                let v_hat = self.v[i][k] / c2;
                let update = lr * m_hat / (v_hat.sqrt() + self.eps);
                values[k] = T::from_f64_lossy(values[k].as_f64() - update);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stagnant,
    Stop,
}

/// Learning-rate halving and early stopping driven by validation perplexity.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub initial_lr: f64,
    pub lr: f64,
    pub halvings: u32,
    pub best_ppl: f64,
    pub stagnation: usize,
    pub patience: usize,
}

impl Schedule {
    pub fn new(lr: f64, patience: usize) -> Self {
        Self {
            initial_lr: lr,
            lr,
            halvings: 0,
            best_ppl: f64::INFINITY,
            stagnation: 0,
            patience,
        }
    }

    pub fn observe(&mut self, ppl: f64) -> Verdict {
        if ppl < self.best_ppl {
            self.best_ppl = ppl;
            self.stagnation = 0;
            return Verdict::Improved;
        }
        self.halvings += 1;
        self.lr = self.initial_lr / 2f64.powi(self.halvings as i32);
        self.stagnation += 1;
        if self.stagnation >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Stagnant
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub train_loss: f64,
    pub valid_ppl: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub steps: usize,
    pub best_step: usize,
    pub best_ppl: f64,
    pub stopped_early: bool,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train in place and leave the parameters with the best validation perplexity in `model`.
///
/// Validation runs every `eval_every` steps and once more after the last step.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &[Example<'_, '_>],
    valid_set: &[Example<'_, '_>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let mut schedule = Schedule::new(cfg.lr, cfg.patience);
    let mut best = model.params.clone();
    let mut best_step = 0;
    let mut log = Vec::new();
    let mut step = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let dropout_on = model.config.encoder.dropout > 0.0;
    let mut last_eval = 0;
    'epochs: for _epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
            step += 1;
            let batch: Vec<Example<'_, '_>> = chunk
                .iter()
                .map(|&i| Example {
                    inst: train_set[i].inst,
                    target: train_set[i].target,
                })
                .collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| mix(cfg.seed, step as u64, i as u64)).collect();
            let (mut grads, stats) = batch_gradients(model, &batch, cfg.coverage_weight, dropout_on.then_some(&seeds[..]))?;
            let loss = stats.loss();
            if !loss.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "non-finite training loss at step {step} ({} clamped log-probabilities)",
                    stats.clamped
                )));
            }
            if stats.clamped > 0 {
                log::warn!("step {step}: {} target probabilities clamped at log {LOG_FLOOR}", stats.clamped);
            }
            grads.clip_global_norm(cfg.clip);
            adam.step(&mut model.params, &grads, schedule.lr);
            let mut row = LogRow {
                step,
                train_loss: loss,
                valid_ppl: None,
                lr: schedule.lr,
            };
            if step % cfg.eval_every == 0 {
                last_eval = step;
                let (ppl, verdict) = evaluate(model, valid_set, &mut schedule, &mut best, step, &mut best_step)?;
                row.valid_ppl = Some(ppl);
                log::info!("step {step}: loss {loss:.4}, valid ppl {ppl:.4}, lr {}", schedule.lr);
                log.push(row);
                if verdict == Verdict::Stop {
                    stopped_early = true;
                    break 'epochs;
                }
            } else {
                log.push(row);
            }
        }
    }
    if last_eval != step {
        let (ppl, _) = evaluate(model, valid_set, &mut schedule, &mut best, step, &mut best_step)?;
        if let Some(last) = log.last_mut() {
            last.valid_ppl = Some(ppl);
        }
    }
    model.params.copy_values_from(&best)?;
    Ok(TrainOutcome {
        log,
        steps: step,
        best_step,
        best_ppl: schedule.best_ppl,
        stopped_early,
    })
}

fn evaluate<T: Real>(
    model: &Model<T>,
    valid_set: &[Example<'_, '_>],
    schedule: &mut Schedule,
    best: &mut ParamStore<T>,
    step: usize,
    best_step: &mut usize,
) -> Result<(f64, Verdict)> {
    let ppl = perplexity(model, valid_set)?;
    if !ppl.is_finite() {
        return Err(Error::NumericFailure(format!("validation perplexity is {ppl} at step {step}")));
    }
    let verdict = schedule.observe(ppl);
    if verdict == Verdict::Improved {
        best.copy_values_from(&model.params)?;
        *best_step = step;
    }
    Ok((ppl, verdict))
}

/// CSV with header `step,train_loss,valid_ppl,lr`; missing perplexities are empty cells.
pub fn write_log(path: &std::path::Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["step", "train_loss", "valid_ppl", "lr"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.train_loss.to_string(),
            r.valid_ppl.map(|p| p.to_string()).unwrap_or_default(),
            r.lr.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
