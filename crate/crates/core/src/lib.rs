//! Minimum time functions, bang-bang syntheses and reachable sets for normal
//! linear control systems and a class of planar nonlinear systems, with
//! tools to construct, stratify and probe the set of points where the
//! minimum time function fails to be locally Lipschitz.

// `!(a <= b)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod planar;
pub mod probe;
pub mod pmp;
pub mod reach;
pub mod singular;
pub mod sphere;
pub mod switching;
pub mod system;

pub(crate) mod flow;

pub use error::{Error, Result};
pub use flow::Direction;
pub use system::LinearSystem;
