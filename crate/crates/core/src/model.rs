//! Parameter layout of the full encoder-decoder and its on-disk form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{read_checkpoint, write_checkpoint, ParamId, ParamStore, Real};

pub const INIT_BOUND: f64 = 0.1;

/// Weights of one GRU cell, gates ordered (reset, update, new).
#[derive(Clone, Copy, Debug)]
pub struct GruIds {
    pub w_i: ParamId,
    pub w_h: ParamId,
    pub b_i: ParamId,
    pub b_h: ParamId,
}

#[derive(Clone, Debug)]
pub struct ParamIds {
    pub word: ParamId,
    pub pos: ParamId,
    pub gru_fwd: GruIds,
    pub gru_bwd: GruIds,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    /// Edge scorer weights over `[e_i; e_j; e^t; ê]`, shape `[2·d_in + d_t + d_w, 1]`.
    pub edge_w: ParamId,
    pub edge_type: ParamId,
    pub gcn: Vec<(ParamId, ParamId)>,
    pub glu_k: ParamId,
    pub glu_l: ParamId,
    pub dec_gru: Vec<GruIds>,
    pub attn_w: ParamId,
    pub attn_cov: ParamId,
    pub out_w: Option<ParamId>,
    pub out_b: Option<ParamId>,
    pub gate_w: Option<ParamId>,
    pub gate_b: Option<ParamId>,
    /// Attendable keys for SEP and EOS in copy-only mode.
    pub control: Option<ParamId>,
}

pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub ids: ParamIds,
}

/// Parameter names and shapes in registration order; a `true` flag marks biases.
fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, bool)> {
    let e = &c.encoder;
    let (g, h) = (e.gru_hidden, e.d_h);
    let mut out = vec![
        ("emb.word".to_string(), vec![c.vocab_size, e.d_w], false),
        ("emb.pos".to_string(), vec![c.pos_size, e.d_pos], false),
    ];
    let gru = |prefix: &str, input: usize, hidden: usize| {
        vec![
            (format!("{prefix}.w_i"), vec![input, 3 * hidden], false),
            (format!("{prefix}.w_h"), vec![hidden, 3 * hidden], false),
            (format!("{prefix}.b_i"), vec![3 * hidden], true),
            (format!("{prefix}.b_h"), vec![3 * hidden], true),
        ]
    };
    out.extend(gru("enc.gru.fwd", e.d_in(), g));
    out.extend(gru("enc.gru.bwd", e.d_in(), g));
    out.push(("enc.proj.w".into(), vec![2 * g, h], false));
    out.push(("enc.proj.b".into(), vec![h], true));
    out.push(("graph.edge_w".into(), vec![2 * e.d_in() + e.d_t + e.d_w, 1], false));
    out.push(("graph.edge_type".into(), vec![c.deprel_size, e.d_t], false));
    for k in 0..e.gcn_layers {
        out.push((format!("gcn.{k}.w"), vec![h, h], false));
        out.push((format!("gcn.{k}.b"), vec![h], true));
    }
    out.push(("glu.w_k".into(), vec![h, h], false));
    out.push(("glu.w_l".into(), vec![h, h], false));
    for layer in 0..c.decoder.layers {
        let input = if layer == 0 { e.d_w } else { h };
        out.extend(gru(&format!("dec.gru.{layer}"), input, h));
    }
    out.push(("dec.attn.w".into(), vec![h, h], false));
    out.push(("dec.attn.cov".into(), vec![1], false));
    if c.decoder.copy_only {
        out.push(("dec.control".into(), vec![2, h], false));
    } else {
        out.push(("dec.out.w".into(), vec![2 * h, c.vocab_size], false));
        out.push(("dec.out.b".into(), vec![c.vocab_size], true));
        out.push(("dec.gate.w".into(), vec![2 * h + e.d_w, 1], false));
        out.push(("dec.gate.b".into(), vec![1], true));
    }
    out
}

impl ParamIds {
    fn resolve<T: Real>(c: &ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let get = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::Mismatch(format!("parameter {name} missing from checkpoint")))
        };
        let gru = |prefix: &str| -> Result<GruIds> {
            Ok(GruIds {
                w_i: get(&format!("{prefix}.w_i"))?,
                w_h: get(&format!("{prefix}.w_h"))?,
                b_i: get(&format!("{prefix}.b_i"))?,
                b_h: get(&format!("{prefix}.b_h"))?,
            })
        };
        let copy = c.decoder.copy_only;
        let opt = |name: &str, present: bool| -> Result<Option<ParamId>> { present.then(|| get(name)).transpose() };
        Ok(Self {
            word: get("emb.word")?,
            pos: get("emb.pos")?,
            gru_fwd: gru("enc.gru.fwd")?,
            gru_bwd: gru("enc.gru.bwd")?,
            proj_w: get("enc.proj.w")?,
            proj_b: get("enc.proj.b")?,
            edge_w: get("graph.edge_w")?,
            edge_type: get("graph.edge_type")?,
            gcn: (0..c.encoder.gcn_layers)
                .map(|k| Ok((get(&format!("gcn.{k}.w"))?, get(&format!("gcn.{k}.b"))?)))
                .collect::<Result<_>>()?,
            glu_k: get("glu.w_k")?,
            glu_l: get("glu.w_l")?,
            dec_gru: (0..c.decoder.layers)
                .map(|l| gru(&format!("dec.gru.{l}")))
                .collect::<Result<_>>()?,
            attn_w: get("dec.attn.w")?,
            attn_cov: get("dec.attn.cov")?,
            out_w: opt("dec.out.w", !copy)?,
            out_b: opt("dec.out.b", !copy)?,
            gate_w: opt("dec.gate.w", !copy)?,
            gate_b: opt("dec.gate.b", !copy)?,
            control: opt("dec.control", copy)?,
        })
    }
}

impl<T: Real> Model<T> {
    /// Weights and embeddings uniform in `[-0.1, 0.1]`, biases zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, bias) in layout(&config) {
            if bias {
                params.add_zeros(&name, &shape)?;
            } else {
                params.add_uniform(&name, &shape, INIT_BOUND, &mut rng)?;
            }
        }
        let ids = ParamIds::resolve(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    /// Wrap an existing store after checking every expected parameter and shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Mismatch(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &expected {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Mismatch(format!("parameter {name} missing")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(Error::Mismatch(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    params.get(id).shape()
                )));
            }
        }
        let ids = ParamIds::resolve(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    pub fn config_hash(&self) -> [u8; 32] {
        self.config.hash()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_checkpoint(&mut w, &self.params, &self.config_hash())?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Load a checkpoint, refusing one written for a different configuration.
    pub fn load(config: ModelConfig, path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt = read_checkpoint::<T, _>(BufReader::new(file))?;
        if ckpt.config_hash != config.hash() {
            return Err(Error::Mismatch(format!(
                "{} was written for a different model configuration",
                path.display()
            )));
        }
        Self::from_params(config, ckpt.params)
    }

    /// Redraw every value, biases included, from `U(−bound, bound)`. Keeps ReLU
    /// pre-activations off exact zeros for finite-difference checks.
    pub fn randomize(&mut self, seed: u64, bound: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in self.params.ids().collect::<Vec<_>>() {
            for v in self.params.get_mut(id).values_mut() {
                *v = T::from_f64_lossy(rng.gen_range(-bound..bound));
            }
        }
    }

    /// Replace pretrained rows of the word table; rows are `(vocab index, vector)`.
    pub fn set_word_vectors(&mut self, rows: &[(usize, Vec<f64>)]) -> Result<()> {
        let d_w = self.config.encoder.d_w;
        let table = self.params.get_mut(self.ids.word);
        for (idx, v) in rows {
            if v.len() != d_w || *idx >= self.config.vocab_size {
                return Err(Error::Data(format!("pretrained vector for index {idx} does not fit the word table")));
            }
            for (k, x) in v.iter().enumerate() {
                table.values_mut()[idx * d_w + k] = T::from_f64_lossy(*x);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config::{DecoderConfig, EncoderConfig};

    pub(crate) fn toy_config(copy_only: bool) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                d_w: 6,
                d_pos: 3,
                d_p: 4,
                gru_hidden: 5,
                d_h: 6,
                gcn_layers: 2,
                d_t: 3,
                dropout: 0.0,
            },
            decoder: DecoderConfig { layers: 2, copy_only },
            vocab_size: 20,
            pos_size: 4,
            deprel_size: 5,
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = Model::<f64>::new(toy_config(false), 3).unwrap();
        let b = Model::<f64>::new(toy_config(false), 3).unwrap();
        for ((_, na, ta), (_, nb, tb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.values(), tb.values());
        }
    }

    #[test]
    fn biases_start_at_zero_and_weights_in_bound() {
        let m = Model::<f64>::new(toy_config(false), 1).unwrap();
        for (_, name, t) in m.params.iter() {
            if name.ends_with(".b") || name.ends_with(".b_i") || name.ends_with(".b_h") {
                assert!(t.values().iter().all(|&v| v == 0.0), "{name}");
            }
            assert!(t.values().iter().all(|v| v.abs() <= INIT_BOUND));
        }
    }

    #[test]
    fn copy_only_has_control_keys_and_no_generator() {
        let m = Model::<f64>::new(toy_config(true), 1).unwrap();
        assert!(m.ids.control.is_some());
        assert!(m.ids.out_w.is_none());
    }

    #[test]
    fn checkpoint_roundtrip_and_hash_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::<f32>::new(toy_config(false), 9).unwrap();
        m.save(&path).unwrap();
        let back = Model::<f32>::load(toy_config(false), &path).unwrap();
        assert_eq!(back.params.num_scalars(), m.params.num_scalars());
        let err = Model::<f32>::load(toy_config(true), &path).err().unwrap();
        assert!(matches!(err, Error::Mismatch(_)));
    }
}
