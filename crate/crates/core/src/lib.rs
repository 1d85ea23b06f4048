// NaN-rejecting `!(x > 0.0)` guards and index-heavy numeric loops are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod basis;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod mesh;
pub mod mesh_motion;
pub mod ns_solver;
pub mod parallel;
pub mod spline;

pub use error::{Result, SwellError};
