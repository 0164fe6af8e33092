//! Adversarial models built around an optional wavelet output layer.

mod arch;
mod loss;
mod model;
mod train;

pub use arch::{build_discriminator, build_generator, ArchConfig, GenMode, Variant};
pub use loss::{hinge_loss, minimax_loss, softplus, LossKind};
pub use model::GanModel;
pub use train::{train, Callback, ProtocolCounters, ScaleUpdate, StepMetrics, TrainConfig, Trainer};
