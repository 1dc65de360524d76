use std::fmt::Write as _;
use std::str::FromStr;

use crate::attention::{AttentionKind, ScorerKind};
use crate::error::{Error, Result};

/// Hyper-parameters that fix the shape of a [`Seq2SeqModel`](super::Seq2SeqModel).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub attention_kind: AttentionKind,
    pub scorer: ScorerKind,
    pub embed_dim: usize,
    /// Decoder width; also the encoding width when the encoder uses the
    /// default per-direction size.
    pub model_dim: usize,
    /// Per-direction encoder width; `None` means `model_dim / 2`.
    pub encoder_direction_dim: Option<usize>,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Inner width of the additive scorer; `None` means `model_dim`.
    pub attention_dim: Option<usize>,
    /// Learn a map from decoder state to encoding space when widths differ.
    pub project_state: bool,
    pub dropout: f64,
    pub max_decode_len: usize,
    pub source_vocab: usize,
    pub target_vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            attention_kind: AttentionKind::Sa,
            scorer: ScorerKind::Additive,
            embed_dim: 256,
            model_dim: 256,
            encoder_direction_dim: None,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_dim: None,
            project_state: false,
            dropout: 0.2,
            max_decode_len: 50,
            source_vocab: 0,
            target_vocab: 0,
        }
    }
}

/// Keys understood by [`ModelConfig::set`], in serialisation order.
pub const MODEL_KEYS: [&str; 13] = [
    "attention_kind",
    "scorer",
    "embed_dim",
    "model_dim",
    "encoder_direction_dim",
    "encoder_layers",
    "decoder_layers",
    "attention_dim",
    "project_state",
    "dropout",
    "max_decode_len",
    "source_vocab",
    "target_vocab",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn auto_str(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |n| n.to_string())
}

impl ModelConfig {
    pub fn direction_dim(&self) -> usize {
        self.encoder_direction_dim.unwrap_or(self.model_dim / 2)
    }

    /// Width of one encoding `h_j`.
    pub fn source_dim(&self) -> usize {
        2 * self.direction_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.model_dim
    }

    pub fn inner_dim(&self) -> usize {
        self.attention_dim.unwrap_or(self.model_dim)
    }

    /// Sets one key from its text form. Returns `Ok(false)` for keys that
    /// are not model keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "attention_kind" => {
                self.attention_kind = value.parse().map_err(Error::Config)?;
            }
            "scorer" => self.scorer = value.parse().map_err(Error::Config)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "model_dim" => self.model_dim = parse(key, value)?,
            "encoder_direction_dim" => self.encoder_direction_dim = parse_auto(key, value)?,
            "encoder_layers" => self.encoder_layers = parse(key, value)?,
            "decoder_layers" => self.decoder_layers = parse(key, value)?,
            "attention_dim" => self.attention_dim = parse_auto(key, value)?,
            "project_state" => self.project_state = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "max_decode_len" => self.max_decode_len = parse(key, value)?,
            "source_vocab" => self.source_vocab = parse(key, value)?,
            "target_vocab" => self.target_vocab = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("attention_kind", self.attention_kind.to_string()),
            ("scorer", self.scorer.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("model_dim", self.model_dim.to_string()),
            (
                "encoder_direction_dim",
                auto_str(self.encoder_direction_dim),
            ),
            ("encoder_layers", self.encoder_layers.to_string()),
            ("decoder_layers", self.decoder_layers.to_string()),
            ("attention_dim", auto_str(self.attention_dim)),
            ("project_state", self.project_state.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
            ("max_decode_len", self.max_decode_len.to_string()),
            ("source_vocab", self.source_vocab.to_string()),
            ("target_vocab", self.target_vocab.to_string()),
        ]
    }

    /// `key=value` lines in [`MODEL_KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    /// Unknown keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(Error::Config(format!("unknown model key {:?}", k.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("model_dim", self.model_dim),
            ("encoder_direction_dim", self.direction_dim()),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("attention_dim", self.inner_dim()),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        for (name, v) in [
            ("source_vocab", self.source_vocab),
            ("target_vocab", self.target_vocab),
        ] {
            if v < crate::corpus::SPECIALS.len() {
                return Err(Error::Config(format!(
                    "{name} must include the {} reserved tokens, got {v}",
                    crate::corpus::SPECIALS.len()
                )));
            }
        }
        Ok(())
    }
}
