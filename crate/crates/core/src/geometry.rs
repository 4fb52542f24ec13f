//! Extrinsic geometry of closed curves `x -> (z + d_z(x), x + d_x(x))`:
//! tangent, induced metric, normal frames and mean curvature.
//!
//! Graph leaves are the curves with `d_x = 0`; variation families also
//! move the fiber coordinate.

use crate::error::{QpmcError, Result};
use crate::grid::FiberGrid;
use crate::jet::MAX_DIM;
use crate::leaf::GraphLeaf;
use crate::linalg::{axpy, Mat4, Vec4};
use crate::metric::{Christoffel, MetricField};

/// Frames with `det(q) <= FRAME_DET_MIN` are rejected.
pub const FRAME_DET_MIN: f64 = 1e-8;

/// A periodic curve given by its displacement from the slice `{z} x S^1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub z: Vec<f64>,
    /// Node-major displacement with `k + 1` components per node; the last
    /// component moves the fiber coordinate.
    pub disp: Vec<f64>,
    pub grid: FiberGrid,
}

impl Curve {
    pub fn from_leaf(leaf: &GraphLeaf) -> Self {
        let k = leaf.k();
        let n = k + 1;
        let mut disp = vec![0.0; leaf.grid.n * n];
        for i in 0..leaf.grid.n {
            disp[i * n..i * n + k].copy_from_slice(&leaf.u[i * k..(i + 1) * k]);
        }
        Curve {
            z: leaf.z.clone(),
            disp,
            grid: leaf.grid,
        }
    }

    pub fn k(&self) -> usize {
        self.z.len()
    }

    pub fn point(&self, i: usize) -> Vec4 {
        let k = self.k();
        let n = k + 1;
        let mut p = [0.0; MAX_DIM];
        for a in 0..k {
            p[a] = self.z[a] + self.disp[i * n + a];
        }
        p[k] = self.grid.node(i) + self.disp[i * n + k];
        p
    }

    /// The curve moved by `s * v` where `v` holds node-major coordinate
    /// vectors with `k + 1` components.
    pub fn displaced(&self, v: &[f64], s: f64) -> Curve {
        let mut out = self.clone();
        for (d, w) in out.disp.iter_mut().zip(v) {
            *d += s * w;
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct NormalGeometry {
    pub k: usize,
    pub grid: FiberGrid,
    pub points: Vec<Vec4>,
    /// Coordinate velocity `X = dF/dx`.
    pub tangent: Vec<Vec4>,
    /// `h = g(X, X)`.
    pub h: Vec<f64>,
    pub metric: Vec<Mat4>,
    pub christoffel: Vec<Christoffel>,
    /// `N_a = (d_{z^a})^perp`, index `i * k + a`.
    pub coord_normals: Vec<Vec4>,
    /// Orthonormal frame from modified Gram-Schmidt on `N_1, .., N_k`.
    pub frame: Vec<Vec4>,
    /// `q_ab = g(N_a, N_b)`, index `i * k * k + a * k + b`.
    pub gram: Vec<f64>,
    pub gram_det: Vec<f64>,
    /// `nabla_X X` as a coordinate vector.
    pub accel: Vec<Vec4>,
    /// Frame components of `A(X, X) = (nabla_X X)^perp`.
    pub a_xx: Vec<f64>,
    /// Frame components of `H = A(X, X) / h`.
    pub mean_curvature: Vec<f64>,
    /// Volume density `f = sqrt(h)`.
    pub density: Vec<f64>,
}

pub fn compute_geometry(m: &MetricField, leaf: &GraphLeaf) -> Result<NormalGeometry> {
    curve_geometry(m, &Curve::from_leaf(leaf))
}

pub fn curve_geometry(m: &MetricField, curve: &Curve) -> Result<NormalGeometry> {
    let k = curve.k();
    let n = k + 1;
    if m.k() != k {
        return Err(QpmcError::InvalidInput(format!(
            "metric has k = {}, leaf has k = {k}",
            m.k()
        )));
    }
    let grid = curve.grid;
    let nn = grid.n;
    let ops = grid.ops();

    let mut xdot = ops.derivative(&curve.disp, n);
    for i in 0..nn {
        xdot[i * n + k] += 1.0;
    }
    let xddot = ops.derivative(&xdot, n);

    let mut geom = NormalGeometry {
        k,
        grid,
        points: Vec::with_capacity(nn),
        tangent: Vec::with_capacity(nn),
        h: Vec::with_capacity(nn),
        metric: Vec::with_capacity(nn),
        christoffel: Vec::with_capacity(nn),
        coord_normals: Vec::with_capacity(nn * k),
        frame: Vec::with_capacity(nn * k),
        gram: Vec::with_capacity(nn * k * k),
        gram_det: Vec::with_capacity(nn),
        accel: Vec::with_capacity(nn),
        a_xx: Vec::with_capacity(nn * k),
        mean_curvature: Vec::with_capacity(nn * k),
        density: Vec::with_capacity(nn),
    };

    for i in 0..nn {
        let p = curve.point(i);
        let jet = m.jet(&p[..n])?;
        let g = jet.g;
        let gam = jet.christoffel();
        let mut x = [0.0; MAX_DIM];
        let mut xd = [0.0; MAX_DIM];
        x[..n].copy_from_slice(&xdot[i * n..(i + 1) * n]);
        xd[..n].copy_from_slice(&xddot[i * n..(i + 1) * n]);
        let h = g.form(&x, &x);
        let gx = g.mul_vec(&x);

        let mut normals = Vec::with_capacity(k);
        for a in 0..k {
            let mut na = [0.0; MAX_DIM];
            na[a] = 1.0;
            axpy(-gx[a] / h, &x, &mut na);
            normals.push(na);
        }
        let mut q = Mat4::zeros(k);
        for a in 0..k {
            for b in 0..k {
                q.a[a][b] = g.form(&normals[a], &normals[b]);
            }
        }
        let det = q.det();

        let mut frame: Vec<Vec4> = Vec::with_capacity(k);
        for na in &normals {
            let mut e = *na;
            for prev in &frame {
                let c = g.form(&e, prev);
                axpy(-c, prev, &mut e);
            }
            let len = g.form(&e, &e).sqrt();
            frame.push(e.map(|v| v / len));
        }

        let mut acc = xd;
        let gxx = gam.contract(&x, &x);
        axpy(1.0, &gxx, &mut acc);

        geom.points.push(p);
        geom.tangent.push(x);
        geom.h.push(h);
        geom.metric.push(g);
        geom.christoffel.push(gam);
        geom.coord_normals.extend(&normals);
        for a in 0..k {
            let v = g.form(&acc, &frame[a]);
            geom.a_xx.push(v);
            geom.mean_curvature.push(v / h);
            for b in 0..k {
                geom.gram.push(q.a[a][b]);
            }
        }
        geom.frame.extend(&frame);
        geom.gram_det.push(det);
        geom.accel.push(acc);
        geom.density.push(h.sqrt());
    }

    let (worst, det) = geom
        .gram_det
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bd), (i, &d)| if d < bd { (i, d) } else { (bi, bd) });
    if !(det > FRAME_DET_MIN) {
        return Err(QpmcError::FrameDegeneracy { node: worst, det });
    }
    Ok(geom)
}

impl NormalGeometry {
    pub fn n(&self) -> usize {
        self.grid.n
    }

    /// `sum_a c_a e_a` at node `i`.
    pub fn to_ambient(&self, i: usize, comps: &[f64]) -> Vec4 {
        let mut out = [0.0; MAX_DIM];
        for (a, c) in comps.iter().enumerate().take(self.k) {
            axpy(*c, &self.frame[i * self.k + a], &mut out);
        }
        out
    }

    /// Frame components `g(y, e_a)` of the normal part of `y` at node `i`.
    pub fn normal_components(&self, i: usize, y: &Vec4) -> Vec<f64> {
        let g = &self.metric[i];
        (0..self.k)
            .map(|a| g.form(y, &self.frame[i * self.k + a]))
            .collect()
    }

    /// Normal projection of a coordinate vector at node `i`.
    pub fn project(&self, i: usize, y: &Vec4) -> Vec4 {
        let c = self.normal_components(i, y);
        self.to_ambient(i, &c)
    }

    /// Node-major frame components of a sampled section given by coordinate
    /// vectors.
    pub fn sample_components(&self, ys: &[Vec4]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n() * self.k);
        for (i, y) in ys.iter().enumerate() {
            out.extend(self.normal_components(i, y));
        }
        out
    }

    /// Coordinate normals `N_a` at every node, as frame components.
    pub fn coord_normal_components(&self, a: usize) -> Vec<f64> {
        let ys: Vec<Vec4> = (0..self.n()).map(|i| self.coord_normals[i * self.k + a]).collect();
        self.sample_components(&ys)
    }

    /// Length of the curve.
    pub fn length(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.grid.dx()
    }

    /// Largest `|g(e_a, e_b) - delta_ab|` and `|g(e_a, X)| / sqrt(h)`.
    pub fn frame_residual(&self) -> f64 {
        let k = self.k;
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            let g = &self.metric[i];
            for a in 0..k {
                let ea = &self.frame[i * k + a];
                worst = worst.max((g.form(ea, &self.tangent[i]) / self.density[i]).abs());
                for b in 0..k {
                    let d = if a == b { 1.0 } else { 0.0 };
                    worst = worst.max((g.form(ea, &self.frame[i * k + b]) - d).abs());
                }
            }
        }
        worst
    }

    pub fn min_gram_det(&self) -> f64 {
        self.gram_det.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}
