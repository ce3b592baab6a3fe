//! From-scratch convolutional network: tensors, layers with manual backward passes, the
//! shared-encoder detector/descriptor model, decoders, losses, Adam and training loops.

pub mod arch;
pub mod decode;
pub mod detector;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod weights;

pub use arch::{init_params, ArchConfig, ParamStore};
pub use detector::NeuralDetector;
pub use loss::LossConfig;
pub use optim::AdamConfig;
pub use tensor::Tensor;
pub use train::{train_detector_labeled, train_magicpoint, train_superpoint, LabeledImage, TrainConfig};
pub use weights::{load_weights, save_weights};
