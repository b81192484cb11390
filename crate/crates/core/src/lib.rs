pub mod error;
pub mod estimator;
pub mod experiments;
pub mod model;
pub mod quadrature;
pub mod rmt;
pub mod seed;
pub mod spectrum;

pub use nalgebra;
pub use error::{Error, EstimatorError, ModelError, RmtError, SpectrumError};

pub type C64 = num_complex::Complex<f64>;

// Book chapters compiled as doctests so their snippets stay runnable.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/support.md")]
    mod support {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
