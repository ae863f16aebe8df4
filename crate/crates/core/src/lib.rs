pub mod constraints;
pub mod data;
pub mod driver;
pub mod error;
pub mod experiment;
pub mod learners;
pub mod losses;
pub mod metrics;
pub mod solver;
pub mod synth;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/constraints.md")]
    mod constraints {}
    #[doc = include_str!("../../../book/src/projection.md")]
    mod projection {}
    #[doc = include_str!("../../../book/src/algorithms.md")]
    mod algorithms {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
