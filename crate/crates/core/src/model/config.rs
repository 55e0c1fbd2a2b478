// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// Bidirectional encoder, post-layer-norm blocks (BERT family).
    Encoder,
    /// Causal decoder, pre-layer-norm blocks with a final norm (GPT-2 family).
    Decoder,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Encoder => "bidirectional-encoder",
            Architecture::Decoder => "causal-decoder",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidirectional-encoder" | "encoder" => Ok(Architecture::Encoder),
            "causal-decoder" | "decoder" => Ok(Architecture::Decoder),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    /// `0.5 x (1 + tanh(0.7978845608 (x + 0.044715 x^3)))`
    GeluTanh,
    /// `0.5 x (1 + erf(x / sqrt 2))`
    GeluExact,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::GeluTanh => "gelu-tanh",
            Activation::GeluExact => "gelu-exact",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu-tanh" => Ok(Activation::GeluTanh),
            "gelu-exact" => Ok(Activation::GeluExact),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Segment vocabulary of the encoder; ignored for decoders.
    pub type_vocab_size: usize,
    pub activation: Activation,
    pub layer_norm_epsilon: f64,
}

const KEYS: [&str; 10] = [
    "architecture",
    "num_layers",
    "num_heads",
    "hidden_size",
    "ffn_size",
    "vocab_size",
    "max_positions",
    "type_vocab_size",
    "activation",
    "layer_norm_epsilon",
];

impl ModelConfig {
    /// Small encoder with `gelu-tanh` and `1e-12` layer-norm epsilon.
    pub fn tiny_encoder(layers: usize, heads: usize, hidden: usize, vocab: usize) -> Self {
        Self {
            architecture: Architecture::Encoder,
            num_layers: layers,
            num_heads: heads,
            hidden_size: hidden,
            ffn_size: hidden * 4,
            vocab_size: vocab,
            max_positions: 64,
            type_vocab_size: 2,
            activation: Activation::GeluTanh,
            layer_norm_epsilon: 1e-12,
        }
    }

    pub fn tiny_decoder(layers: usize, heads: usize, hidden: usize, vocab: usize) -> Self {
        Self {
            architecture: Architecture::Decoder,
            layer_norm_epsilon: 1e-5,
            type_vocab_size: 0,
            ..Self::tiny_encoder(layers, heads, hidden, vocab)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn num_head_slots(&self) -> usize {
        self.num_layers * self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_size", self.hidden_size),
            ("ffn_size", self.ffn_size),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.architecture == Architecture::Encoder && self.type_vocab_size == 0 {
            return Err(Error::Config("encoder needs type_vocab_size >= 1".into()));
        }
        if !(self.layer_norm_epsilon >= 0.0 && self.layer_norm_epsilon.is_finite()) {
            return Err(Error::Config("layer_norm_epsilon must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// String fields stored under the archive's `__metadata__` entry.
    pub fn to_metadata(&self) -> BTreeMap<String, String> {
        let values = [
            self.architecture.as_str().to_string(),
            self.num_layers.to_string(),
            self.num_heads.to_string(),
            self.hidden_size.to_string(),
            self.ffn_size.to_string(),
            self.vocab_size.to_string(),
            self.max_positions.to_string(),
            self.type_vocab_size.to_string(),
            self.activation.as_str().to_string(),
            format!("{:e}", self.layer_norm_epsilon),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    pub fn from_metadata(meta: &BTreeMap<String, String>) -> Result<Self> {
        let get = |key: &str| {
            meta.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Config(format!("metadata is missing `{key}`")))
        };
        let int = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Config(format!("metadata `{key}` is not an integer")))
        };
        let architecture: Architecture = get("architecture")?.parse()?;
        let type_vocab_size = match meta.get("type_vocab_size") {
            Some(_) => int("type_vocab_size")?,
            None if architecture == Architecture::Decoder => 0,
            None => 2,
        };
        let activation = match meta.get("activation") {
            Some(a) => a.parse()?,
            None => Activation::GeluTanh,
        };
        let layer_norm_epsilon = match meta.get("layer_norm_epsilon") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config("metadata `layer_norm_epsilon` is not a number".into()))?,
            None => 1e-12,
        };
        let config = Self {
            architecture,
            num_layers: int("num_layers")?,
            num_heads: int("num_heads")?,
            hidden_size: int("hidden_size")?,
            ffn_size: int("ffn_size")?,
            vocab_size: int("vocab_size")?,
            max_positions: int("max_positions")?,
            type_vocab_size,
            activation,
            layer_norm_epsilon,
        };
        config.validate()?;
        Ok(config)
    }
}
