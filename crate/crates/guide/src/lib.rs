//! The book under `book/`, compiled so that its listings run as doc tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/topology.md")]
pub mod topology {}

#[doc = include_str!("../../../book/src/transport.md")]
pub mod transport {}

#[doc = include_str!("../../../book/src/protocols.md")]
pub mod protocols {}

#[doc = include_str!("../../../book/src/function-approximation.md")]
pub mod function_approximation {}

#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}

#[doc = include_str!("../../../book/src/learning.md")]
pub mod learning {}
