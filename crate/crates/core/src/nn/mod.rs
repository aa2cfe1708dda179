//! Minimal dense-network toolkit: a named parameter store, layers with
//! explicit backward passes, Adam, and safetensors I/O.

mod adam;
mod ops;
pub mod safetensors;
mod store;

pub use adam::Adam;
pub use ops::{
    col_block, cross_entropy, gelu, gelu_grad, glorot_uniform, max_pool_rows, relu, softmax,
    softmax_rows, LayerNorm, LayerNormCache, Linear,
};
pub use store::{Gradients, Param, ParamId, ParamStore};
pub(crate) use store::hex_digest;
