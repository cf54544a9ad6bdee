//! Loop shaping for resonant two-mass servo drives.
//!
//! The crate covers the whole speed-loop commissioning chain: a two-mass
//! plant model and simulator ([`plant`]), Welch frequency-response
//! identification ([`sysid`]), notch design ([`notch`]), margin-based PI
//! synthesis plus a relay baseline ([`pitune`]) and loop/step analysis
//! ([`analysis`]). The [`cli`] module wires them into reproducible
//! command-line pipelines.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod notch;
pub mod pitune;
pub mod plant;
pub mod sysid;

pub use error::{Error, Result};
