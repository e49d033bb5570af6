//! Layer graph: parameter registry, forward/backward orchestration, gradient
//! checking and checkpoints.

mod checkpoint;
mod gradcheck;
mod layer;
mod network;
mod param;

pub use checkpoint::{
    read_checkpoint, save_checkpoint, Checkpoint, CheckpointEntry, Values, FORMAT_VERSION, MAGIC,
};
pub use gradcheck::{grad_check, relative_error, CheckLoss, GradCheckOptions, GradCheckReport, ParamCheck};
pub use layer::{
    AuxTap, Concat, ConvUnit, Dense, Dropout, Flatten, ForwardCtx, GlobalAvgPool, LayerKind, LayerNode, Mode, Pool,
    SeBlock, Sequential, ShapeRecord,
};
pub use network::{count_params, Network, ParamCount};
pub use param::Parameter;
