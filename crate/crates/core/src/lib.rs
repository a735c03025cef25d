pub mod action;
pub mod certify;
pub mod constraint;
pub mod error;
pub mod geometry;
pub mod gradflow;
pub mod linalg;
pub mod measures;
pub mod oracles;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{Geometry, GeometryKind};
pub use measures::{MassBudget, MeasurePair, Side};
