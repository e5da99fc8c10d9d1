//! Minimal neural-network substrate with explicit backward rules.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
mod lanes;
pub mod layers;
pub mod loss;
pub mod network;
pub mod tensor;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, Tag, TrainingMeta, CHECKPOINT_VERSION, MAGIC};
pub use gradcheck::{gradient_check, GRADCHECK_STEP};
pub use layers::{sigmoid, Layer, LayerSpec, Mode};
pub use loss::{binary_cross_entropy, cross_entropy, cross_entropy_single, softmax, Loss, BCE_CLAMP};
pub use network::Network;
pub use tensor::Tensor;
pub use train::{accumulate, decayed_lr, locate, train_step};
