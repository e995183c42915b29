#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accept;
pub mod artifact;
pub mod diffusion;
pub mod error;
pub mod flow;
pub mod markov;
pub mod metrics;
pub mod pde;
pub mod quad;
pub mod rng;
pub mod scenario;
pub mod smooth;
pub mod stopped;

pub use error::{Error, Result};

/// Chapters of the guide in `book/`, compiled here so their examples run as
/// doc-tests.
pub mod guide {
    #[doc = include_str!("../../../book/src/intro.md")]
    pub mod intro {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    pub mod scenarios {}
    #[doc = include_str!("../../../book/src/flow.md")]
    pub mod flow {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    pub mod kernels {}
    #[doc = include_str!("../../../book/src/approximations.md")]
    pub mod approximations {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
