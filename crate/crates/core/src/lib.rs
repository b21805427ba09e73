//! Neural networks from scratch with interchangeable Softmax and ReLU
//! classification heads.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod heads;
pub mod layers;
pub mod model;
pub mod optim;
pub mod preprocess;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Rng, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/heads.md")]
    struct Heads;
    #[doc = include_str!("../../../book/src/networks.md")]
    struct Networks;
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    struct Preprocessing;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    struct Diagnostics;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
