use rand::Rng;

use super::attention::MultiHeadAttention;
use super::linear::Linear;
use super::positional::PositionalEncoding;
use crate::error::Result;
use crate::params::{Ctx, ParamGroup, ParamId, ParamStore};
use crate::tensor::Var;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize) -> Self {
        Self {
            gamma: store.add_constant(format!("{name}.gamma"), group, &[dim], 1.0),
            beta: store.add_constant(format!("{name}.beta"), group, &[dim], 0.0),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        Ok(ctx.layer_norm(x, g, b, LAYER_NORM_EPS)?)
    }
}

/// Position-wise `d → 4d → d` with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub expand: Linear,
    pub contract: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            expand: Linear::new(store, &format!("{name}.expand"), group, dim, 4 * dim, rng),
            contract: Linear::new(store, &format!("{name}.contract"), group, 4 * dim, dim, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.expand.forward(ctx, x)?;
        let h = ctx.relu(h)?;
        Ok(self.contract.forward(ctx, h)?)
    }
}

/// Post-norm encoder block: `LN(h + FF(h))` with `h = LN(x + SelfAttn(x))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), group, dim, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), group, dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), group, dim, rng),
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), group, dim),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let a = self.attention.self_attention(ctx, x)?.output;
        let h = ctx.add(x, a)?;
        let h = self.norm1.forward(ctx, h)?;
        let f = self.ff.forward(ctx, h)?;
        let y = ctx.add(h, f)?;
        self.norm2.forward(ctx, y)
    }
}

/// Decoder block: self-attention, cross-attention over encoder memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub self_attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            self_attention: MultiHeadAttention::new(store, &format!("{name}.self_attn"), group, dim, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), group, dim),
            cross_attention: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), group, dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), group, dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), group, dim, rng),
            norm3: LayerNorm::new(store, &format!("{name}.ln3"), group, dim),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, queries: Var, memory: Var) -> Result<Var> {
        let a = self.self_attention.self_attention(ctx, queries)?.output;
        let h = ctx.add(queries, a)?;
        let h = self.norm1.forward(ctx, h)?;
        let c = self.cross_attention.forward(ctx, h, memory)?.output;
        let h2 = ctx.add(h, c)?;
        let h2 = self.norm2.forward(ctx, h2)?;
        let f = self.ff.forward(ctx, h2)?;
        let y = ctx.add(h2, f)?;
        self.norm3.forward(ctx, y)
    }
}

/// Adds the sinusoidal table to `x[N×d]`.
pub fn add_positions(ctx: &mut Ctx, x: Var) -> Result<Var> {
    let (n, d) = (ctx.shape(x)[0], ctx.shape(x)[1]);
    let pe = ctx.constant(PositionalEncoding::new(d).table(n));
    Ok(ctx.add(x, pe)?)
}

/// Sequence-to-vector encoder: linear map, positional encodings, one encoder
/// block, mean over time, projection to the latent width.
#[derive(Clone, Debug)]
pub struct TransformerSequenceEncoder {
    pub input: Linear,
    pub block: EncoderBlock,
    pub output: Linear,
}

impl TransformerSequenceEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim: usize,
        out_dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            input: Linear::new(store, &format!("{name}.input"), group, dim, dim, rng),
            block: EncoderBlock::new(store, &format!("{name}.block"), group, dim, heads, rng)?,
            output: Linear::new(store, &format!("{name}.output"), group, dim, out_dim, rng),
        })
    }

    /// `x[N×d]` → `[H]`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.input.forward(ctx, x)?;
        let h = add_positions(ctx, h)?;
        let h = self.block.forward(ctx, h)?;
        let pooled = ctx.mean(h, Some(0))?;
        Ok(self.output.forward(ctx, pooled)?)
    }
}

/// Encoder/decoder transformer reconstructing a sequence of the input's
/// length. Decoding is non-autoregressive: the decoder queries are the
/// positional encodings themselves.
#[derive(Clone, Debug)]
pub struct TransformerSeq2Seq {
    pub encoder: EncoderBlock,
    pub decoder: DecoderBlock,
    pub output: Linear,
}

impl TransformerSeq2Seq {
    /// Encoder parameters go to `encoder_group`, decoder and output head to `decoder_group`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        encoder_group: ParamGroup,
        decoder_group: ParamGroup,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            encoder: EncoderBlock::new(store, &format!("{name}.encoder"), encoder_group, dim, heads, rng)?,
            decoder: DecoderBlock::new(store, &format!("{name}.decoder"), decoder_group, dim, heads, rng)?,
            output: Linear::new(store, &format!("{name}.output"), decoder_group, dim, dim, rng),
        })
    }

    pub fn encode(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = add_positions(ctx, x)?;
        self.encoder.forward(ctx, h)
    }

    pub fn decode(&self, ctx: &mut Ctx, memory: Var, len: usize) -> Result<Var> {
        let dim = ctx.shape(memory)[1];
        let queries = ctx.constant(PositionalEncoding::new(dim).table(len));
        let h = self.decoder.forward(ctx, queries, memory)?;
        Ok(self.output.forward(ctx, h)?)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let n = ctx.shape(x)[0];
        let memory = self.encode(ctx, x)?;
        self.decode(ctx, memory, n)
    }
}
