//! Tensor completion with a transformed-domain total variation prior and
//! plug-in denoisers, solved by three-operator splitting. The guide in
//! `book/` walks through each module.

// `!(x > 0.0)` style checks are deliberate: they reject NaN together with
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod gtctv;
pub mod io;
pub mod penalty;
pub mod random;
pub mod solver;
pub mod synthetic;
pub mod tensor;
pub mod transform;
pub mod tsvd;

#[cfg(test)]
mod testutil;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/tensors.md")]
    struct Tensors;
    #[doc = include_str!("../../../book/src/penalties.md")]
    struct Penalties;
    #[doc = include_str!("../../../book/src/gtctv.md")]
    struct Gtctv;
    #[doc = include_str!("../../../book/src/denoisers.md")]
    struct Denoisers;
    #[doc = include_str!("../../../book/src/solver.md")]
    struct Solver;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}

pub use error::{Error, Result};
pub use penalty::Penalty;
pub use tensor::{ComplexTensor, Mode, RealTensor, Scalar, Tensor};
pub use transform::Transform;
