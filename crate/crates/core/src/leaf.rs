//! Graph leaves `{(z + u(x), x)}` sampled on a fiber grid, and their
//! JSON / CSV representations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{QpmcError, Result};
use crate::grid::{self, FiberGrid};

pub const LEAF_SCHEMA: u32 = 1;

/// Tolerance for the mean-zero flag.
pub const MEAN_ZERO_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "LeafFile", try_from = "LeafFile")]
pub struct GraphLeaf {
    /// Offset in `R^k`.
    pub z: Vec<f64>,
    /// Graph values, node-major (`u[i * k + a]`).
    pub u: Vec<f64>,
    pub grid: FiberGrid,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LeafFile {
    schema_version: u32,
    k: usize,
    z: Vec<f64>,
    grid: FiberGrid,
    mean_zero: bool,
    /// `u[i]` holds the `k` graph values at node `i`.
    u: Vec<Vec<f64>>,
}

impl From<GraphLeaf> for LeafFile {
    fn from(l: GraphLeaf) -> Self {
        LeafFile {
            schema_version: LEAF_SCHEMA,
            k: l.k(),
            mean_zero: l.is_mean_zero(),
            u: l.u.chunks(l.k()).map(|c| c.to_vec()).collect(),
            z: l.z,
            grid: l.grid,
        }
    }
}

impl TryFrom<LeafFile> for GraphLeaf {
    type Error = QpmcError;
    fn try_from(f: LeafFile) -> Result<Self> {
        if f.schema_version != LEAF_SCHEMA {
            return Err(QpmcError::InvalidInput(format!(
                "unsupported leaf schema_version {}",
                f.schema_version
            )));
        }
        if f.z.len() != f.k || f.u.iter().any(|r| r.len() != f.k) {
            return Err(QpmcError::InvalidInput("leaf rows do not match k".into()));
        }
        let leaf = GraphLeaf::new(f.z, f.u.concat(), f.grid)?;
        if f.mean_zero && !leaf.is_mean_zero() {
            return Err(QpmcError::InvalidInput(
                "leaf is flagged mean-zero but its means do not vanish".into(),
            ));
        }
        Ok(leaf)
    }
}

impl GraphLeaf {
    /// The slice `{z} x S^1`.
    pub fn slice(z: Vec<f64>, grid: FiberGrid) -> Self {
        let k = z.len();
        GraphLeaf {
            u: vec![0.0; grid.n * k],
            z,
            grid,
        }
    }

    pub fn new(z: Vec<f64>, u: Vec<f64>, grid: FiberGrid) -> Result<Self> {
        grid.validate()?;
        if z.is_empty() || u.len() != grid.n * z.len() {
            return Err(QpmcError::InvalidInput(format!(
                "graph has {} values, expected {} nodes x {} components",
                u.len(),
                grid.n,
                z.len()
            )));
        }
        if z.iter().chain(&u).any(|v| !v.is_finite()) {
            return Err(QpmcError::InvalidInput("graph values must be finite".into()));
        }
        Ok(GraphLeaf { z, u, grid })
    }

    /// Builds a leaf from a function of the fiber angle.
    pub fn from_fn(z: Vec<f64>, grid: FiberGrid, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let k = z.len();
        let mut u = Vec::with_capacity(grid.n * k);
        for x in grid.nodes() {
            let v = f(x);
            assert_eq!(v.len(), k);
            u.extend(v);
        }
        GraphLeaf { z, u, grid }
    }

    pub fn k(&self) -> usize {
        self.z.len()
    }

    pub fn means(&self) -> Vec<f64> {
        grid::means(&self.u, self.k())
    }

    pub fn is_mean_zero(&self) -> bool {
        self.means().iter().all(|m| m.abs() < MEAN_ZERO_TOL)
    }

    /// Moves the component means of `u` into `z`.
    pub fn normalized(&self) -> GraphLeaf {
        let k = self.k();
        let m = self.means();
        let mut out = self.clone();
        for a in 0..k {
            out.z[a] += m[a];
        }
        grid::subtract_means(&mut out.u, k);
        out
    }

    /// Absolute graph values `z + u` at node `i`.
    pub fn position(&self, i: usize) -> Vec<f64> {
        let k = self.k();
        (0..k).map(|a| self.z[a] + self.u[i * k + a]).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        grid::sup_norm(&self.u)
    }

    /// Largest Euclidean length of `u'(x)` over nodes.
    pub fn sup_gradient(&self) -> f64 {
        let k = self.k();
        let du = self.grid.ops().derivative(&self.u, k);
        du.chunks(k)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Same leaf as the graph `u + (z - z_other)` over `z_other`.
    pub fn rebased(&self, z_other: &[f64]) -> GraphLeaf {
        let k = self.k();
        let mut out = self.clone();
        for (i, v) in out.u.iter_mut().enumerate() {
            *v += self.z[i % k] - z_other[i % k];
        }
        out.z = z_other.to_vec();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("leaf serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV with columns `x, u1, .., uk` holding the absolute graph values
    /// `z + u` at each node.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let k = self.k();
        let header: Vec<String> = std::iter::once("x".to_string())
            .chain((1..=k).map(|a| format!("u{a}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.grid.n {
            let mut row = vec![self.grid.node(i)];
            row.extend(self.position(i));
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Reads the CSV produced by [`GraphLeaf::write_csv`]; the mean of each
    /// column becomes `z`.
    pub fn read_csv(text: &str, mode: grid::DiffMode) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| QpmcError::InvalidInput("empty CSV".into()))?;
        let k = header.split(',').count() - 1;
        if k == 0 {
            return Err(QpmcError::InvalidInput("CSV needs at least one u column".into()));
        }
        let mut vals = Vec::new();
        let mut rows = 0;
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != k + 1 {
                return Err(QpmcError::InvalidInput(format!("bad CSV row `{line}`")));
            }
            for c in &cells[1..] {
                vals.push(c.trim().parse::<f64>().map_err(|_| {
                    QpmcError::InvalidInput(format!("bad CSV number `{c}`"))
                })?);
            }
            rows += 1;
        }
        let grid = FiberGrid::new(rows, mode)?;
        Ok(GraphLeaf::new(vec![0.0; k], vals, grid)?.normalized())
    }
}
