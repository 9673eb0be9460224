//! Minimal f64 CPU neural-network stack: tensors, 3x3 convolution, a
//! reverse-mode tape, Adam, two small architectures, and a checkpoint
//! container. All computation is deterministic given the seeds.

pub mod checkpoint;
pub mod conv;
pub mod dncnn;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod unet;

pub use checkpoint::Checkpoint;
pub use dncnn::{Dncnn, DncnnConfig};
pub use params::{Adam, GradSet, ParamSet};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
pub use unet::{DropoutMode, UNet, UNetConfig};
