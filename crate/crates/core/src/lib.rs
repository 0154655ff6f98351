//! Eigenvalue problems for fully nonlinear elliptic operators under a
//! convex gradient constraint.

pub mod certify;
pub mod eigen;
pub mod error;
pub mod fd;
pub mod geometry;
pub mod grid;
pub mod oracle;
pub mod penalty;
pub mod problems;

pub use error::{Error, Result};
pub use geometry::{ConstraintForm, ConstraintH, SupportFunction};
pub use grid::{Field, Grid};
pub use problems::{builtin, validate, InlineSpec, BUILTIN_NAMES, CostF, OperatorF, ProblemSpec, Symmetry, ValidationReport};
