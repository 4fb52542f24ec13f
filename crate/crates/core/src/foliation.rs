//! Sweeps of the leaf solver over a lattice of base points, the sampled
//! foliation map and its injectivity check, and the centroid core.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{delta_vertical_report, DeltaVerticalReport};
use crate::error::{QpmcError, Result};
use crate::geometry::compute_geometry;
use crate::grid::FiberGrid;
use crate::metric::MetricField;
use crate::solver::{newton_solve, LeafSolution, SolverConfig};

pub const FOLIATION_SCHEMA: u32 = 1;

/// Largest tolerated fraction of failed leaves.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

/// Axis-aligned box in `R^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SweepBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(QpmcError::param("box", "lo and hi need the same positive length"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(QpmcError::param("box", "needs finite lo <= hi on every axis"));
        }
        Ok(SweepBox { lo, hi })
    }

    /// The cube `[lo, hi]^k`.
    pub fn cube(lo: f64, hi: f64, k: usize) -> Result<Self> {
        SweepBox::new(vec![lo; k], vec![hi; k])
    }

    /// Parses `lo,hi` (same interval on every axis, needs `k`) or
    /// `lo1,hi1;lo2,hi2;..`.
    pub fn parse(text: &str, k: usize) -> Result<Self> {
        let bad = || QpmcError::param("box", format!("cannot parse `{text}`"));
        let axes: Vec<(f64, f64)> = text
            .split(';')
            .map(|part| {
                let v: Vec<f64> = part
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                match v.as_slice() {
                    [a, b] => Ok((*a, *b)),
                    _ => Err(bad()),
                }
            })
            .collect::<Result<_>>()?;
        let axes = if axes.len() == 1 { vec![axes[0]; k] } else { axes };
        if axes.len() != k {
            return Err(QpmcError::param(
                "box",
                format!("has {} axes, metric has k = {k}", axes.len()),
            ));
        }
        SweepBox::new(axes.iter().map(|a| a.0).collect(), axes.iter().map(|a| a.1).collect())
    }

    pub fn k(&self) -> usize {
        self.lo.len()
    }

    /// Number of lattice points along each axis.
    pub fn counts(&self, dz: f64) -> Vec<usize> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| ((b - a) / dz + 1e-9).floor() as usize + 1)
            .collect()
    }

    pub fn point(&self, idx: &[usize], dz: f64) -> Vec<f64> {
        idx.iter().zip(&self.lo).map(|(&i, lo)| lo + i as f64 * dz).collect()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.k() && z.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a <= *v && v <= b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dz: f64,
    pub grid: FiberGrid,
    pub solver: SolverConfig,
    /// Length scale of the size diagnostics.
    pub r_bar: f64,
}

impl SweepConfig {
    pub fn new(dz: f64, grid: FiberGrid) -> Self {
        SweepConfig {
            dz,
            grid,
            solver: SolverConfig::default(),
            r_bar: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoliationLeaf {
    pub index: Vec<usize>,
    pub z: Vec<f64>,
    pub solution: LeafSolution,
    pub delta: DeltaVerticalReport,
    /// Lattice index of the leaf used as initial guess.
    pub warm_start: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepFailure {
    pub index: Vec<usize>,
    pub z: Vec<f64>,
    pub error: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Foliation {
    pub schema_version: u32,
    pub metric: String,
    pub bounds: SweepBox,
    pub config: SweepConfig,
    /// Sorted by lattice index, hence lexicographically in `z`.
    pub leaves: Vec<FoliationLeaf>,
    pub failures: Vec<SweepFailure>,
}

fn lattice(counts: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &c in counts {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..c).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

fn manhattan(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).sum()
}

/// Solves one leaf per lattice point, breadth-first from the lattice point
/// nearest the box center, each warm-started from a solved neighbor one
/// frontier closer to the center.
pub fn sweep(m: &MetricField, bounds: &SweepBox, cfg: &SweepConfig) -> Result<Foliation> {
    if !(cfg.dz > 0.0 && cfg.dz.is_finite()) {
        return Err(QpmcError::param("dz", "must be positive"));
    }
    if bounds.k() != m.k() {
        return Err(QpmcError::param(
            "box",
            format!("has {} axes, metric has k = {}", bounds.k(), m.k()),
        ));
    }
    cfg.solver.validate()?;
    let counts = bounds.counts(cfg.dz);
    let center: Vec<usize> = bounds
        .lo
        .iter()
        .zip(&bounds.hi)
        .zip(&counts)
        .map(|((lo, hi), &c)| (((0.5 * (lo + hi) - lo) / cfg.dz).round() as usize).min(c - 1))
        .collect();
    let points = lattice(&counts);
    let max_d = points.iter().map(|p| manhattan(p, &center)).max().unwrap_or(0);
    let mut frontiers = vec![Vec::new(); max_d + 1];
    for p in points {
        frontiers[manhattan(&p, &center)].push(p);
    }

    let solve = |idx: &[usize], warm: Option<(&Vec<usize>, &FoliationLeaf)>| -> Result<FoliationLeaf> {
        let z = bounds.point(idx, cfg.dz);
        let init = warm.map(|(_, l)| l.solution.leaf.u.as_slice());
        let solution = newton_solve(m, &z, cfg.grid, &cfg.solver, init)?;
        let delta = delta_vertical_report(m, &solution.leaf, cfg.r_bar)?;
        Ok(FoliationLeaf {
            index: idx.to_vec(),
            z,
            solution,
            delta,
            warm_start: warm.map(|(i, _)| i.clone()),
        })
    };

    let mut solved: BTreeMap<Vec<usize>, FoliationLeaf> = BTreeMap::new();
    let mut failures = Vec::new();
    let total = frontiers.iter().map(Vec::len).sum::<usize>();
    solved.insert(center.clone(), solve(&center, None)?);

    for frontier in frontiers.iter().skip(1) {
        let results: Vec<(Vec<usize>, Result<FoliationLeaf>)> = frontier
            .par_iter()
            .map(|idx| {
                // neighbors toward the center, in axis order
                let warm = (0..idx.len()).find_map(|a| {
                    let mut q = idx.clone();
                    if idx[a] > center[a] {
                        q[a] -= 1;
                    } else if idx[a] < center[a] {
                        q[a] += 1;
                    } else {
                        return None;
                    }
                    solved.get_key_value(&q)
                });
                (idx.clone(), solve(idx, warm))
            })
            .collect();
        for (idx, r) in results {
            match r {
                Ok(leaf) => {
                    solved.insert(idx, leaf);
                }
                Err(e) => failures.push(SweepFailure {
                    z: bounds.point(&idx, cfg.dz),
                    index: idx,
                    error: e.to_string(),
                }),
            }
        }
        if failures.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
            return Err(QpmcError::SweepAborted {
                failed: failures.len(),
                total,
            });
        }
    }
    failures.sort_by(|a, b| a.index.cmp(&b.index));
    Ok(Foliation {
        schema_version: FOLIATION_SCHEMA,
        metric: m.provenance().to_string(),
        bounds: bounds.clone(),
        config: cfg.clone(),
        leaves: solved.into_values().collect(),
        failures,
    })
}

impl Foliation {
    pub fn k(&self) -> usize {
        self.bounds.k()
    }

    pub fn leaf_at(&self, index: &[usize]) -> Option<&FoliationLeaf> {
        self.leaves
            .binary_search_by(|l| l.index.as_slice().cmp(index))
            .ok()
            .map(|i| &self.leaves[i])
    }

    /// Largest `|u|` over all leaves.
    pub fn max_sup_norm(&self) -> f64 {
        self.leaves.iter().map(|l| l.solution.sup_norm).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffeoReport {
    /// Smallest advance `(z' + u'(x_i)) - (z + u(x_i))` along the axis of
    /// adjacent lattice neighbors `z' = z + dz e_a`.
    pub margin: f64,
    pub required_margin: f64,
    /// Smallest distance in `R^k` between two stored leaves at a common
    /// fiber node.
    pub min_separation: f64,
    /// `sup|u| + sup|du/dx| + sup|du/dz|`, the last by lattice differences.
    pub c1_deviation: f64,
    pub pairs_checked: usize,
    pub pass: bool,
}

/// Sampled injectivity check of `(z, x) -> (z + u(z)(x), x)`.
pub fn diffeo_check(f: &Foliation) -> Result<DiffeoReport> {
    if f.leaves.is_empty() {
        return Err(QpmcError::InvalidInput("foliation has no leaves".into()));
    }
    let k = f.k();
    let dz = f.config.dz;
    let nn = f.config.grid.n;
    let positions: Vec<Vec<f64>> = f
        .leaves
        .iter()
        .map(|l| {
            let leaf = &l.solution.leaf;
            (0..nn).flat_map(|i| leaf.position(i)).collect()
        })
        .collect();

    let mut margin = f64::INFINITY;
    let mut dudz = 0.0f64;
    let mut pairs = 0;
    for (li, l) in f.leaves.iter().enumerate() {
        for a in 0..k {
            let mut q = l.index.clone();
            q[a] += 1;
            let Ok(lj) = f.leaves.binary_search_by(|o| o.index.as_slice().cmp(&q)) else {
                continue;
            };
            pairs += 1;
            for i in 0..nn {
                let adv = positions[lj][i * k + a] - positions[li][i * k + a];
                margin = margin.min(adv);
                for b in 0..k {
                    let du = f.leaves[lj].solution.leaf.u[i * k + b] - l.solution.leaf.u[i * k + b];
                    dudz = dudz.max((du / dz).abs());
                }
            }
        }
    }

    let mut sep = f64::INFINITY;
    for a in 0..positions.len() {
        for b in a + 1..positions.len() {
            for i in 0..nn {
                let d2: f64 = (0..k)
                    .map(|c| (positions[a][i * k + c] - positions[b][i * k + c]).powi(2))
                    .sum();
                sep = sep.min(d2.sqrt());
            }
        }
    }

    let c0 = f.leaves.iter().map(|l| l.solution.sup_norm).fold(0.0, f64::max);
    let c1 = f
        .leaves
        .iter()
        .map(|l| l.solution.leaf.sup_gradient())
        .fold(0.0, f64::max);
    let required = 0.5 * dz;
    Ok(DiffeoReport {
        margin,
        required_margin: required,
        min_separation: sep,
        c1_deviation: c0 + c1 + dudz,
        pairs_checked: pairs,
        pass: margin >= required && sep > 0.0,
    })
}

/// Solves for the leaf through `p = (z_p, x_p)` by the fixed-point iteration
/// `z <- z_p - u_z(x_p)`, starting from the nearest lattice leaf.
pub fn leaf_through_point(m: &MetricField, f: &Foliation, p: &[f64]) -> Result<LeafSolution> {
    let k = f.k();
    if p.len() != k + 1 {
        return Err(QpmcError::InvalidInput(format!(
            "point needs {} coordinates, got {}",
            k + 1,
            p.len()
        )));
    }
    let (pz, xp) = (&p[..k], p[k]);
    if !f.bounds.contains(pz) {
        return Err(QpmcError::OutOfBox(p.to_vec()));
    }
    let dz = f.config.dz;
    let counts = f.bounds.counts(dz);
    let nearest: Vec<usize> = (0..k)
        .map(|a| (((pz[a] - f.bounds.lo[a]) / dz).round().max(0.0) as usize).min(counts[a] - 1))
        .collect();
    let start = f
        .leaf_at(&nearest)
        .or_else(|| {
            f.leaves
                .iter()
                .min_by_key(|l| manhattan(&l.index, &nearest))
        })
        .ok_or_else(|| QpmcError::InvalidInput("foliation has no leaves".into()))?;

    let grid = f.config.grid;
    let ops = grid.ops();
    let mut sol = start.solution.clone();
    for _ in 0..50 {
        let u = ops.interpolate(&sol.leaf.u, k, xp);
        let z: Vec<f64> = (0..k).map(|a| pz[a] - u[a]).collect();
        let step = z.iter().zip(&sol.z).fold(0.0f64, |s, (a, b)| s.max((a - b).abs()));
        if step <= 1e-13 * (1.0 + z.iter().fold(0.0f64, |s, v| s.max(v.abs()))) {
            return Ok(sol);
        }
        sol = newton_solve(m, &z, grid, &f.config.solver, Some(&sol.leaf.u))?;
    }
    Err(QpmcError::InvalidInput(
        "leaf through the point did not settle in 50 fixed-point steps".into(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreSample {
    pub z: Vec<f64>,
    /// Volume-weighted centroid of the leaf's coordinates `(z + u, x)`.
    pub centroid: Vec<f64>,
}

/// Centroid of every leaf, weighted by the induced length element.
pub fn center_of_mass_core(m: &MetricField, f: &Foliation) -> Result<Vec<CoreSample>> {
    f.leaves
        .par_iter()
        .map(|l| {
            let leaf = &l.solution.leaf;
            let k = leaf.k();
            let geom = compute_geometry(m, leaf)?;
            let mut c = vec![0.0; k + 1];
            let mut mass = 0.0;
            for i in 0..leaf.grid.n {
                let w = geom.density[i];
                mass += w;
                for (a, v) in leaf.position(i).into_iter().enumerate() {
                    c[a] += w * v;
                }
                c[k] += w * leaf.grid.node(i);
            }
            c.iter_mut().for_each(|v| *v /= mass);
            Ok(CoreSample {
                z: l.z.clone(),
                centroid: c,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DiffMode;

    fn cfg(dz: f64) -> SweepConfig {
        SweepConfig::new(dz, FiberGrid::new(32, DiffMode::Trig).unwrap())
    }

    #[test]
    fn box_parsing() {
        let b = SweepBox::parse("-1,1", 2).unwrap();
        assert_eq!(b.lo, vec![-1.0, -1.0]);
        let b = SweepBox::parse("-1,1;0,2", 2).unwrap();
        assert_eq!(b.hi, vec![1.0, 2.0]);
        assert!(SweepBox::parse("1,-1", 1).is_err());
        assert!(SweepBox::parse("-1,1;0,2", 3).is_err());
        assert_eq!(b.counts(0.25), vec![9, 9]);
    }

    #[test]
    fn flat_sweep_is_the_product_foliation() {
        let m = MetricField::product(2).unwrap();
        let f = sweep(&m, &SweepBox::cube(-1.0, 1.0, 2).unwrap(), &cfg(0.25)).unwrap();
        assert_eq!(f.leaves.len(), 81);
        assert!(f.failures.is_empty());
        assert_eq!(f.max_sup_norm(), 0.0);
        assert!(f.leaves.windows(2).all(|w| w[0].z < w[1].z));
        let r = diffeo_check(&f).unwrap();
        assert_eq!(r.margin, 0.25);
        assert!(r.pass);
        assert_eq!(r.pairs_checked, 2 * 8 * 9);
        for s in center_of_mass_core(&m, &f).unwrap() {
            assert_eq!(&s.centroid[..2], &s.z[..]);
        }
    }

    #[test]
    fn swapped_leaves_fail_the_check() {
        let m = MetricField::product(1).unwrap();
        let mut f = sweep(&m, &SweepBox::cube(-1.0, 1.0, 1).unwrap(), &cfg(0.5)).unwrap();
        let (a, b) = (f.leaves[1].solution.clone(), f.leaves[2].solution.clone());
        f.leaves[1].solution = b;
        f.leaves[2].solution = a;
        assert!(!diffeo_check(&f).unwrap().pass);
    }

    #[test]
    fn point_lookup_on_flat_cylinder() {
        let m = MetricField::product(2).unwrap();
        let f = sweep(&m, &SweepBox::cube(-1.0, 1.0, 2).unwrap(), &cfg(0.5)).unwrap();
        let sol = leaf_through_point(&m, &f, &[0.3, 0.7, 1.0]).unwrap();
        assert_eq!(sol.z, vec![0.3, 0.7]);
        assert_eq!(sol.sup_norm, 0.0);
        assert!(matches!(
            leaf_through_point(&m, &f, &[3.0, 0.0, 0.0]),
            Err(QpmcError::OutOfBox(_))
        ));
    }
}
