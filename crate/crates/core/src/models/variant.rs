use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The six architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Bi-LSTM selector, LSTM VAE, LSTM discriminator.
    SumGan,
    /// Self-attention selector, LSTM VAE.
    Aed,
    /// Bi-LSTM selector, transformer-block encoder with VAE heads, LSTM decoder.
    Std,
    /// Bi-LSTM selector, transformer encoder/decoder in place of the VAE.
    St,
    /// Bi-LSTM selector, transformer sequence encoder with VAE heads, LSTM decoder.
    Stsed,
    /// Self-attention selector, transformer encoder/decoder in place of the VAE.
    Sat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectorKind {
    BiLstm,
    SelfAttention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    LstmVae,
    TransformerBlock,
    Tse,
    /// Encoder half of a transformer encoder/decoder.
    Seq2Seq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderKind {
    Lstm,
    TransformerBlock,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::SumGan,
        Variant::Aed,
        Variant::Std,
        Variant::St,
        Variant::Stsed,
        Variant::Sat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SumGan => "SUM-GAN",
            Variant::Aed => "AED",
            Variant::Std => "STD",
            Variant::St => "ST",
            Variant::Stsed => "STSED",
            Variant::Sat => "SAT",
        }
    }

    pub fn selector(self) -> SelectorKind {
        match self {
            Variant::Aed | Variant::Sat => SelectorKind::SelfAttention,
            _ => SelectorKind::BiLstm,
        }
    }

    pub fn encoder(self) -> EncoderKind {
        match self {
            Variant::SumGan | Variant::Aed => EncoderKind::LstmVae,
            Variant::Std => EncoderKind::TransformerBlock,
            Variant::Stsed => EncoderKind::Tse,
            Variant::St | Variant::Sat => EncoderKind::Seq2Seq,
        }
    }

    pub fn decoder(self) -> DecoderKind {
        match self {
            Variant::St | Variant::Sat => DecoderKind::TransformerBlock,
            _ => DecoderKind::Lstm,
        }
    }

    pub fn has_vae(self) -> bool {
        !matches!(self, Variant::St | Variant::Sat)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts the short names and their `SUM-GAN-` prefixed forms, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Error> {
        let upper = s.trim().to_ascii_uppercase();
        let short = upper.strip_prefix("SUM-GAN-").unwrap_or(&upper);
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == short || (short == "SUMGAN" && *v == Variant::SumGan))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected one of SUM-GAN, AED, STD, ST, STSED, SAT)"
                ))
            })
    }
}

/// Layer widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Per-frame input feature size.
    pub input_dim: usize,
    /// Width after the compression layer.
    pub dim: usize,
    /// Recurrent hidden size and latent size.
    pub hidden: usize,
    pub heads: usize,
    pub recurrent_layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            input_dim: 1024,
            dim: 500,
            hidden: 500,
            heads: 4,
            recurrent_layers: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub variant: Variant,
    pub dims: ModelDims,
    pub seed: u64,
}

impl VariantSpec {
    pub fn new(variant: Variant, dims: ModelDims, seed: u64) -> Self {
        Self {
            variant,
            dims,
            seed,
        }
    }
}
