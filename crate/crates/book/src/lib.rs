//! Doc-tests for the listings in `book/src`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/networks.md")]
pub mod networks {}
#[doc = include_str!("../../../book/src/cuts.md")]
pub mod cuts {}
#[doc = include_str!("../../../book/src/allocation.md")]
pub mod allocation {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/dynamics.md")]
pub mod dynamics {}
#[doc = include_str!("../../../book/src/equilibrium.md")]
pub mod equilibrium {}
#[doc = include_str!("../../../book/src/circle.md")]
pub mod circle {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
