//! Semi-supervised B-line detection on synthetic lung-ultrasound phantoms.
//!
//! The pipeline has two stages. [`pretrain`] learns an encoder without labels
//! by contrasting global views and local patches of the same image against a
//! memory queue of past keys. [`detect`] fine-tunes a two-stage anchor
//! detector on top of that encoder with a selectable box regression loss, and
//! [`eval`] scores its detections.
//!
//! All numerics are generic over [`Scalar`]; the aliases below fix `f64`,
//! which is what training and gradient checks use.

pub mod certify;
pub mod detect;
pub mod eval;
pub mod ndgrad;
pub mod phantom;
pub mod pretrain;
pub mod scalar;

pub use scalar::Scalar;

pub type Tensor = ndgrad::Tensor<f64>;
pub type Graph = ndgrad::Graph<f64>;
pub type ParamStore = ndgrad::ParamStore<f64>;
pub type BBox = detect::BBox<f64>;
pub type Detection = detect::Detection<f64>;
pub type Image = phantom::Image<f64>;
