//! The localization network and its checkpoint format.

mod checkpoint;
mod config;
mod encoding;
mod network;
mod params;

#[cfg(test)]
mod tests;

pub use checkpoint::{write_atomic, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use encoding::positional_encoding;
pub use network::{
    collect_predictions, encoder_block, forward_tape, heads_forward, multi_head_attention, ForwardOptions,
    ForwardOutput, HeadMode, PaddedBatch, TimestepPrediction,
};
pub use params::{
    init_params, parameter_shapes, EncoderBlock, Head, HeadStats, Linear, ModelParams, Network, Norm,
};
