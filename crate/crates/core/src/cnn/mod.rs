//! Trainable residual classifier built on [`crate::conv`].

pub mod arch;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod train;

pub use arch::{ArchSpec, BlockSpec};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{argmax, softmax, softmax_cross_entropy};
pub use model::{build_model, CnnModel, Dense, ForwardTrace, TrainStep};
pub use train::{predict, train, EpochRecord, Labeled, TrainConfig, TrainHistory};
