//! Photon correlations of light transmitted through a chain of two-level
//! atoms coupled one-directionally to a waveguide.
//!
//! ```
//! use cascade_g2::transport::chain_g2;
//! use cascade_g2::types::{PhysicalParams, TauGrid};
//!
//! let grid = TauGrid::linspace(10.0, 101).unwrap();
//! let g2 = chain_g2(PhysicalParams::new(0.0081, 180), &grid).unwrap();
//! assert!(g2.g2_zero() < 0.1);
//! ```
//!
//! Delays are in units of 1/Γ throughout; see [`types::UnitScale`].

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod oracle;
pub mod photonstats;
pub mod transport;
pub mod types;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/units.md")]
    mod units {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/ensemble.md")]
    mod ensemble {}
    #[doc = include_str!("../../../book/src/photonstats.md")]
    mod photonstats {}
    #[doc = include_str!("../../../book/src/saturation.md")]
    mod saturation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
