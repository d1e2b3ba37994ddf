mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, MANIFEST_FILE};
pub use config::ModelConfig;
pub use forward::{
    bind, encoder_layer, forward_on_tape, patchify, unpatchify, ForwardVars, Model, Trace,
};
pub use params::{param_shapes, EncoderLayer, Linear, ModelParams, ModelWeights, Norm, INIT_STD};
