use serde::{Deserialize, Serialize};

use super::tokenizer::N_RESERVED;
use crate::error::{Error, Result};

/// How number-token rows of the embedding and unembedding start out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NumberInit {
    /// Same small gaussian init as every other row.
    Random,
    /// The first `features` coordinates of row `v` hold `scale · enc(v)`,
    /// the sin/cos value code used by the sinusoidal probe.
    Sinusoidal { features: usize, scale: f32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    #[serde(default = "default_number_init")]
    pub number_init: NumberInit,
    #[serde(default = "default_init_std")]
    pub init_std: f32,
    #[serde(default = "default_rope_base")]
    pub rope_base: f32,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f32,
}

fn default_number_init() -> NumberInit {
    NumberInit::Random
}

fn default_init_std() -> f32 {
    0.02
}

fn default_rope_base() -> f32 {
    10_000.0
}

fn default_norm_eps() -> f32 {
    1e-6
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_layers: 2,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            vocab_size: 1100,
            max_seq_len: 64,
            seed: 0,
            number_init: NumberInit::Random,
            init_std: default_init_std(),
            rope_base: default_rope_base(),
            norm_eps: default_norm_eps(),
        }
    }
}

impl ToyConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(Error::Config(format!(
                "head dimension {} must be even for rotary encoding",
                self.head_dim()
            )));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("n_layers, d_ff and max_seq_len must be positive".into()));
        }
        if self.vocab_size < N_RESERVED {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the {N_RESERVED} number and operator tokens",
                self.vocab_size
            )));
        }
        if let NumberInit::Sinusoidal { features, scale } = self.number_init {
            if features == 0 || features % 2 != 0 || features > self.d_model || !scale.is_finite() {
                return Err(Error::Config(format!(
                    "sinusoidal init needs an even feature count <= d_model, got {features}"
                )));
            }
        }
        Ok(())
    }

    /// Closed-form parameter count: embeddings, per-block attention and MLP
    /// matrices plus two norm gains, final norm, untied unembedding.
    pub fn param_count(&self) -> usize {
        let (v, d, f, l) = (self.vocab_size, self.d_model, self.d_ff, self.n_layers);
        v * d + l * (4 * d * d + 2 * d * f + 2 * d) + d + d * v
    }
}
