//! Model, training and inference hyper-parameters.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_w: usize,
    pub d_pos: usize,
    pub d_p: usize,
    pub gru_hidden: usize,
    pub d_h: usize,
    pub gcn_layers: usize,
    /// Dependency-type embedding size used by the edge scorer.
    pub d_t: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_w: 300,
            d_pos: 30,
            d_p: 10,
            gru_hidden: 400,
            d_h: 400,
            gcn_layers: 6,
            d_t: 80,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    /// Width of one token embedding `[word; pos; position]`.
    pub fn d_in(&self) -> usize {
        self.d_w + self.d_pos + self.d_p
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_w", self.d_w),
            ("d_pos", self.d_pos),
            ("d_p", self.d_p),
            ("gru_hidden", self.gru_hidden),
            ("d_h", self.d_h),
            ("gcn_layers", self.gcn_layers),
            ("d_t", self.d_t),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("encoder.{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("encoder.dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Stacked GRU layers; every layer has `d_h` units and starts from the context vector.
    pub layers: usize,
    /// Drop the generation branch; SEP and EOS become attendable positions.
    pub copy_only: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            copy_only: false,
        }
    }
}

/// Everything that determines parameter shapes. Its hash is stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub vocab_size: usize,
    pub pos_size: usize,
    pub deprel_size: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.decoder.layers == 0 {
            return Err(Error::Config("decoder.layers must be positive".into()));
        }
        if self.vocab_size <= crate::corpus::NUM_RESERVED || self.pos_size == 0 || self.deprel_size == 0 {
            return Err(Error::Config("vocabulary and label inventories must be non-empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(bytes).into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiblingMode {
    Rank,
    LogRank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub beam_width: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub max_phrases: usize,
    /// Maximum decode steps per phrase, terminator included.
    pub max_phrase_len: usize,
    pub alpha: f64,
    pub unigram_weight: f64,
    pub bigram_weight: f64,
    pub sibling: SiblingMode,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            beam_width: 100,
            lambda1: 1.0,
            lambda2: 0.1,
            max_phrases: 10,
            max_phrase_len: 6,
            alpha: 1.0,
            unigram_weight: 0.5,
            bigram_weight: 0.5,
            sibling: SiblingMode::Rank,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_phrases == 0 || self.max_phrase_len == 0 {
            return Err(Error::Config("beam_width, max_phrases and max_phrase_len must be at least 1".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        if !(self.unigram_weight >= 0.0 && self.bigram_weight >= 0.0)
            || (self.unigram_weight + self.bigram_weight - 1.0).abs() > 1e-12
        {
            return Err(Error::Config("n-gram weights must be non-negative and sum to 1".into()));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config("alpha must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    pub max_epochs: usize,
    /// Hard cap on optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub coverage_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 0.001,
            clip: 0.2,
            max_epochs: 20,
            max_steps: 0,
            eval_every: 50,
            patience: 3,
            coverage_weight: 1.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs, eval_every and patience must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.clip > 0.0 && self.coverage_weight >= 0.0) {
            return Err(Error::Config("lr and clip must be positive, coverage_weight non-negative".into()));
        }
        Ok(())
    }
}
