//! Network building blocks with hand-written backward passes.

pub mod layers;
pub mod optim;
pub mod resnet;
pub mod temporal;

pub use layers::{log_softmax, softmax, softmax_backward, Act, Conv2d, Linear, LstmLayer, ParamAllocator};
pub use optim::{Adam, AdamConfig};
pub use resnet::{BackboneSpec, BlockKind, EncoderCache, ResidualEncoder};
pub use temporal::{TemporalCache, TemporalHead};
