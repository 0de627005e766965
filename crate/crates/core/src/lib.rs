//! Certified parameter-space Lipschitz bounds.
//!
//! `lipcert-core` computes upper bounds on the Lipschitz constants, taken with
//! respect to the full flattened parameter vector, of dense feed-forward
//! networks, their parameter gradients, and the training objectives built on
//! top of them. The same machinery covers networks written as controlled ODEs
//! (continuous-depth models) through Grönwall-type estimates.
//!
//! Around the bound calculus the crate carries everything needed to check the
//! bounds against reality:
//!
//! - [`network`]: a minimal dense network with exact reverse-mode gradients,
//! - [`empirical`]: sampled lower bounds and an explicit worst-case pair,
//! - [`trainer`]: gradient descent and AdaGrad-norm with certified step sizes,
//! - [`code_net`]: Euler solvers for controlled ODEs and their first and
//!   second parameter variations.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. All floating point math goes through `libm`, so results do not
//! depend on the platform math library.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is the NaN-rejecting guard used throughout; index loops mirror
// the tensor formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod activation;
pub mod bounds;
pub mod code_net;
pub mod digest;
pub mod empirical;
mod error;
pub(crate) mod math;
pub mod network;
pub mod serde_float;
pub mod trainer;

pub use activation::{ActivationEnvelope, ActivationKind};
pub use bounds::{ArchitectureSpec, BoundInputs, Certificate, LayerBounds, LossEnvelope, Method, SampleNorms};
pub use error::{Error, Result};
pub use network::{LossHead, Params, Sample};
