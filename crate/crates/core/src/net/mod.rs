//! Correlation-based density regressor.
//!
//! A small convolutional backbone produces a feature map; every exemplar box
//! is ROI-pooled from it at several scales and correlated back over the whole
//! map. Per scale, the similarity maps of all boxes are reduced by a per-pixel
//! maximum, average-pooled once, and fed to a head of convolution blocks
//! interleaved with bilinear 2× upsampling. A final 1×1 convolution and
//! rectifier produce a non-negative density map at input resolution whose sum
//! is the predicted count.
//!
//! Forward passes can record activations; [`CountingNet::backward`] performs
//! exact reverse-mode differentiation over that record.

mod correlate;
mod layers;
mod model;
mod roi;
mod tensor;

pub use correlate::correlate;
pub use layers::{avg_pool, conv2d, upsample2};
pub use model::{BlockSpec, CountingNet, ExemplarSet, Forward, NetConfig, DEFAULT_EXEMPLAR_SCALES};
pub use roi::{roi_pool, PooledPatch};
pub use tensor::{FeatureMap, ParamTensor, Real};
