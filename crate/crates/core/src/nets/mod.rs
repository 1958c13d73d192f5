//! Small from-scratch differentiable toolkit: dense and convolutional
//! layers, layer norm, spatial softmax, a tanh-Gaussian head and Adam.

pub mod checkpoint;
pub mod conv;
pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod policy;
pub mod softmax;
pub mod tensor;

pub use checkpoint::{load_params, save_params, ParamFile, PARAM_FILE_VERSION};
pub use conv::Conv;
pub use encoder::{ConvSpec, Encoder, EncoderCache, EncoderInput, EncoderKind, EncoderSpec};
pub use layers::{mlp, Dense, Layer, LayerNorm, SeqCache, Sequential};
pub use optim::Adam;
pub use policy::SquashedSample;
pub use softmax::SpatialSoftmax;
pub use tensor::{ParamSet, Tensor};
