//! A small reverse-mode deep-learning stack and the E-SRResNet model.
//!
//! Everything is generic over `f32` (fast default) and `f64` (gradient
//! checks). Computation is single-threaded and runs in a fixed order, so a
//! seed fully determines training.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint};
pub use model::{forward, init_params, predict, InputChannels, MhaPlacement, ModelSpec, Phase};
pub use optim::{adam_step, AdamConfig, PlateauScheduler};
pub use params::ParamStore;
pub use real::{NumericMode, Real};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use train::{train, LossRecord, Sample, TrainSpec};
