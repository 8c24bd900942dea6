//! Gauss collocation, Hamiltonian boundary value methods (HBVM) and line
//! integral methods (LIM) for ODEs with conserved quantities.
//!
//! The guide in `book/` walks through each module; its code blocks run as
//! doctests of this crate.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod error;
pub mod legendre;
pub mod methods;
pub mod solvers;
pub mod systems;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/legendre.md")]
    mod legendre {}
    #[doc = include_str!("../../../book/src/systems.md")]
    mod systems {}
    #[doc = include_str!("../../../book/src/methods.md")]
    mod methods {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/driver.md")]
    mod driver {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
