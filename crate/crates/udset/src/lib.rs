//! Finite-depth implementation of a compact universal differentiability
//! set of upper Minkowski dimension one: parameter schedules, the
//! level/class/category line hierarchy with its counting ledger, witness
//! chains for the sets `M_λ`, box-counting estimates, and constructive
//! versions of the approximation lemmas.

pub mod dimension;
pub mod error;
pub mod geometry;
pub mod hierarchy;
pub mod io;
pub mod lemmas;
pub mod params;
pub mod probes;
pub mod real;
pub mod setmodel;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/schedules.md")]
    mod schedules {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/hierarchy.md")]
    mod hierarchy {}
    #[doc = include_str!("../../../book/src/sets.md")]
    mod sets {}
    #[doc = include_str!("../../../book/src/dimension.md")]
    mod dimension {}
    #[doc = include_str!("../../../book/src/lemmas.md")]
    mod lemmas {}
    #[doc = include_str!("../../../book/src/probes.md")]
    mod probes {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/limits.md")]
    mod limits {}
}
