//! Two-stage depth completion: a sparse-to-coarse interpolation stage
//! followed by a coarse-to-fine residual refinement network whose two
//! encoder branches exchange channels between blocks and are merged by
//! regional-energy selection.

pub mod depth_io;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod numerics;
pub mod refine;
pub mod sparse;

pub use error::{Error, Result};
