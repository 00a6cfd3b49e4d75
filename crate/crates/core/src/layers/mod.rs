//! Neural building blocks assembled by [`crate::models`].

pub mod attention;
pub mod linear;
pub mod lstm;
pub mod positional;
pub mod transformer;

pub use attention::{stack_weights, AttentionOutput, MultiHeadAttention};
pub use linear::Linear;
pub use lstm::{BiLstm, Lstm, LstmLayer, LstmOutput};
pub use positional::PositionalEncoding;
pub use transformer::{
    add_positions, DecoderBlock, EncoderBlock, FeedForward, LayerNorm, TransformerSeq2Seq,
    TransformerSequenceEncoder,
};
