//! Declarative run configuration: one TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use dgcn_core::config::{DecoderConfig, EncoderConfig, InferenceConfig, ModelConfig, TrainConfig};
use dgcn_core::instance::Inventories;
use dgcn_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    /// Static vocabulary size, reserved tokens included.
    pub vocab_size: usize,
    /// Optional text embeddings, one `word v1 … v_dw` per line.
    pub word_vectors: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            valid: None,
            vocab_size: 50_000,
            word_vectors: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
}

impl RunConfig {
    /// Defaults, then the file if given, then each override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.inference.validate()?;
        if self.decoder.layers == 0 {
            return Err(Error::Config("decoder.layers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, inv: &Inventories) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            vocab_size: inv.vocab.len(),
            pos_size: inv.pos.len(),
            deprel_size: inv.deprel.len(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Write the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(CONFIG_ECHO);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }
}

/// `a.b=v`, where `v` is read as a TOML value and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::load(None, &["train.lr=0.5".into(), "train.lr=0.25".into(), "data.train=a.jsonl".into()])
            .unwrap();
        assert_eq!(cfg.train.lr, 0.25);
        assert_eq!(cfg.data.train.as_deref(), Some(Path::new("a.jsonl")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::load(None, &["train.learning_rate=1".into()]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &["extra.x=1".into()]), Err(Error::Config(_))));
        assert!(RunConfig::load(None, &["nonsense".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::load(None, &["inference.beam_width=0".into()]).is_err());
    }

    #[test]
    fn echo_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::load(None, &["inference.lambda1=2.5".into(), "decoder.copy_only=true".into()]).unwrap();
        cfg.echo(dir.path()).unwrap();
        let back = RunConfig::load(Some(&dir.path().join(CONFIG_ECHO)), &[]).unwrap();
        assert_eq!(back, cfg);
    }
}
