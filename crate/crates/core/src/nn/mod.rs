//! Dense/convolutional network engine with exact backpropagation.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod mixup;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use layers::{Context, Layer, LayerSpec, Mode, Param};
pub use loss::{kl_loss, Loss};
pub use mixup::{mixup_batch, MixupDraw};
pub use network::{shape_flow, Network};
pub use optim::Adam;
pub use tensor::{Scalar, Tensor};
pub use train::{predict_clip, predict_proba, train, train_with, Dataset, TrainReport, TrainingConfig};
