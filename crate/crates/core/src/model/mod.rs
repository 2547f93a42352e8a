//! The classifier being explained: a small CNN, the synthetic shapes it is
//! trained on, an SGD trainer and the weight file format.

mod dataset;
mod handle;
mod toycnn;
mod train;
mod weights;

pub use dataset::{
    gen_shapes_dataset, load_dataset, save_dataset, Sample, ShapeClass, ShapeGeometry, CLASS_NAMES,
    IMAGE_SIZE,
};
pub use handle::{ModelHandle, Opaque, OpaqueModel};
pub use toycnn::{
    build_toycnn, ArchConfig, Prediction, ToyConvNet, ARCH_VERSION, DEFAULT_TAP, LAYER_NAMES,
};
pub use train::{accuracy, train};
pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, FORMAT_VERSION, MAGIC,
};
