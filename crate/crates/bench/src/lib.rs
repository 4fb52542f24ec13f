//! Shared fixtures for the benchmarks.

use qpmc_core::solver::{newton_solve, SolverConfig};
use qpmc_core::{DiffMode, FiberGrid, GraphLeaf, MetricField};

pub const BUMP: &str = "bump:eps=0.01,seed=7,k=2";
pub const EXHIBIT: &str = "twisted:alpha=0.2+bump:eps=0.01,center=0.5;0,width=1.5,seed=7,k=2";

pub fn grid(n: usize) -> FiberGrid {
    FiberGrid::new(n, DiffMode::Trig).expect("power-of-two grid")
}

pub fn metric(spec: &str) -> MetricField {
    MetricField::parse(spec).expect("builtin spec")
}

/// The converged leaf over the origin.
pub fn solved_leaf(m: &MetricField, n: usize) -> GraphLeaf {
    newton_solve(m, &vec![0.0; m.k()], grid(n), &SolverConfig::default(), None)
        .expect("corpus leaf converges")
        .leaf
}
