//! Layers, the dehazing network, the perceptual feature extractor and checkpoints.

mod checkpoint;
mod extractor;
mod gman;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use extractor::{ExtractorSource, FeatureExtractor, FeatureExtractorConfig};
pub use gman::{
    build_gman, residual_block_forward, Layer, LayerKind, LayerSpec, Network, NetworkConfig,
    StageShape, DECODED_STAGE, ENCODED_STAGE,
};
