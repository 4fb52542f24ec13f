//! Numerical engine for quasi-parallel mean curvature (QPMC) foliations of
//! the cylinder `R^k x S^1` with near-product metrics.

// tensor kernels index several arrays with the same loop variable; NaN
// guards are written as negated comparisons on purpose
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod foliation;
pub mod geometry;
pub mod grid;
pub mod jet;
pub mod leaf;
pub mod linalg;
pub mod metric;
pub mod solver;
pub mod spectrum;
pub mod variation;

pub use error::{QpmcError, Result};
pub use geometry::{compute_geometry, Curve, NormalGeometry};
pub use grid::{DiffMode, FiberGrid};
pub use leaf::GraphLeaf;
pub use metric::{MetricField, MetricKind};
pub use spectrum::{CutoffRule, QProjector, SpectralDecomposition};
