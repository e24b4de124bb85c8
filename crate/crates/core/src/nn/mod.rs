//! Small from-scratch training engine: 3D convolution, fully connected,
//! ReLU and softmax cross-entropy layers in 64-bit floats.

pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod train;

pub use layers::{softmax, softmax_ce, LayerSpec, Shape};
pub use network::{
    build_saba, build_saba_with, build_vdban, build_vdban_with, Gradients, Network, Param, VdbanSpec, SABA_HIDDEN,
};
pub use train::{accuracy, train, train_with_observer, EpochRecord, Hyperparams, Optimizer, Sample, TrainingHistory};
