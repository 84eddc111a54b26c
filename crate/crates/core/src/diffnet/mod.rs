//! Minimal differentiable function approximators: a diagonal-Gaussian
//! stochastic policy and scalar value heads, with the exact-gradient, KL and
//! Fisher-vector-product contracts the trust-region optimizer relies on.

pub mod checkpoint;
pub mod mlp;
pub mod normalizer;
pub mod policy;
pub mod real;
pub mod tape;
pub mod value;

pub use checkpoint::Checkpoint;
pub use mlp::{ForwardScratch, MlpShape};
pub use normalizer::ObsNormalizer;
pub use policy::{
    fisher_vector_product, kl, kl_grad, surrogate, surrogate_grad, PolicySpec, SurrogateData,
};
pub use real::{Dual, Real};
pub use tape::{value_and_grad, Tape, Var};
pub use value::{Adam, ValueSpec};
