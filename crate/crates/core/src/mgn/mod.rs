//! Motion generation network: content and style encoders, a decoder that
//! fuses them, its objectives and training loop.

pub mod loss;
pub mod model;
pub mod train;

pub use loss::{BatchPlan, LossParts, LossWeights, DEFAULT_DELTA};
pub use model::{sequence_input, LatentPyramid, MgnConfig, MgnModel, Net, Pyramid};
pub use train::{plan_epoch, train_mgn, EpochLog, TrainConfig, TrainReport};
