//! InceptionV3 block constructors, the SE block, and the model builder.

mod build;
mod config;
mod schedule;
mod search;

pub use build::{
    build_layers, build_model, make_conv_unit, make_inception_block, make_se_block, model_from_checkpoint,
    se_hidden, se_param_count, Init, BN_EPS,
};
pub use config::{grid_after_stem_and_reduction_a, ModelConfig, MIN_INPUT_SIZE};
pub use schedule::{
    macs_per_output, stacked_receptive_field, BlockKind, BlockSpec, StemLayer, AUX_AFTER, BLOCK_NAMES, SCHEDULE,
    STEM,
};
pub use search::{block_channels, nearest_se_config, SeCandidate};
