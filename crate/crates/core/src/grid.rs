//! Uniform periodic grids on the fiber circle and their differentiation,
//! interpolation and quadrature operators.
//!
//! Sampled vector-valued functions are stored node-major: component `a` at
//! node `i` lives at index `i * k + a`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{QpmcError, Result};

pub const DEFAULT_NODES: usize = 256;
pub const MIN_NODES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffMode {
    /// Fourth-order centered periodic differences.
    Fd4,
    /// Differentiation of the trigonometric interpolant.
    #[default]
    Trig,
}

impl std::str::FromStr for DiffMode {
    type Err = QpmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fd4" => Ok(DiffMode::Fd4),
            "trig" => Ok(DiffMode::Trig),
            _ => Err(QpmcError::param("diff_mode", format!("expected fd4 or trig, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for DiffMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DiffMode::Fd4 => "fd4",
            DiffMode::Trig => "trig",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberGrid {
    pub n: usize,
    pub mode: DiffMode,
}

impl FiberGrid {
    pub fn new(n: usize, mode: DiffMode) -> Result<Self> {
        if n < MIN_NODES || !n.is_power_of_two() {
            return Err(QpmcError::param(
                "n",
                format!("node count must be a power of two >= {MIN_NODES}, got {n}"),
            ));
        }
        Ok(FiberGrid { n, mode })
    }

    pub fn validate(&self) -> Result<()> {
        FiberGrid::new(self.n, self.mode).map(|_| ())
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Shared operator tables for this grid.
    pub fn ops(&self) -> Arc<GridOps> {
        static CACHE: OnceLock<Mutex<HashMap<FiberGrid, Arc<GridOps>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(ops) = cache.lock().unwrap().get(self) {
            return ops.clone();
        }
        let ops = Arc::new(GridOps::build(*self));
        cache.lock().unwrap().entry(*self).or_insert(ops).clone()
    }
}

/// Dense operator tables. Circulant operators are stored as kernels `c`
/// with `(C f)_i = sum_j c[j] f_{(i + j) mod n}`.
#[derive(Debug)]
pub struct GridOps {
    pub grid: FiberGrid,
    d1: Vec<f64>,
    d2: Vec<f64>,
    lap_inv: Vec<f64>,
    /// Number of quadrature points used by Galerkin assembly.
    pub nq: usize,
    /// Row-major `nq x n` interpolation and derivative matrices onto the
    /// quadrature points.
    pub interp_q: Vec<f64>,
    pub deriv_q: Vec<f64>,
    /// Quadrature weight of every quadrature point.
    pub wq: f64,
}

/// Periodic cardinal function of the `n`-point trigonometric interpolant,
/// including the symmetric half-weight Nyquist term, and its derivative.
fn cardinal(n: usize, t: f64) -> (f64, f64) {
    let half = n / 2;
    let mut v = 1.0;
    let mut d = 0.0;
    for m in 1..half {
        let mf = m as f64;
        v += 2.0 * (mf * t).cos();
        d -= 2.0 * mf * (mf * t).sin();
    }
    let hf = half as f64;
    v += (hf * t).cos();
    d -= hf * (hf * t).sin();
    (v / n as f64, d / n as f64)
}

impl GridOps {
    fn build(grid: FiberGrid) -> Self {
        let n = grid.n;
        let dx = grid.dx();
        let half = n / 2;
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        let mut lap_inv = vec![0.0; n];
        for (j, lj) in lap_inv.iter_mut().enumerate() {
            let t = grid.node(j);
            let mut s = 0.0;
            for m in 1..half {
                let mf = m as f64;
                s -= 2.0 * (mf * t).cos() / (mf * mf);
            }
            let hf = half as f64;
            s -= (hf * t).cos() / (hf * hf);
            *lj = s / n as f64;
        }
        let (nq, interp_q, deriv_q);
        match grid.mode {
            DiffMode::Trig => {
                for j in 0..n {
                    let t = grid.node(j);
                    // c[j] multiplies f_{i+j}; the cardinal function centred
                    // at x_{i+j} is differentiated at x_i
                    d1[j] = cardinal(n, -t).1;
                    let mut s = 0.0;
                    for m in 1..half {
                        let mf = m as f64;
                        s -= 2.0 * mf * mf * (mf * t).cos();
                    }
                    let hf = half as f64;
                    s -= hf * hf * (hf * t).cos();
                    d2[j] = s / n as f64;
                }
                nq = 2 * n;
                let mut iq = vec![0.0; nq * n];
                let mut dq = vec![0.0; nq * n];
                for q in 0..nq {
                    let xq = PI * q as f64 / n as f64;
                    for i in 0..n {
                        let (v, d) = cardinal(n, xq - grid.node(i));
                        iq[q * n + i] = v;
                        dq[q * n + i] = d;
                    }
                }
                interp_q = iq;
                deriv_q = dq;
            }
            DiffMode::Fd4 => {
                let c = 1.0 / (12.0 * dx);
                d1[1] = 8.0 * c;
                d1[n - 1] = -8.0 * c;
                d1[2] = -c;
                d1[n - 2] = c;
                let c2 = 1.0 / (12.0 * dx * dx);
                d2[0] = -30.0 * c2;
                d2[1] = 16.0 * c2;
                d2[n - 1] = 16.0 * c2;
                d2[2] = -c2;
                d2[n - 2] = -c2;
                // staggered stencils at the midpoints x_{q + 1/2}
                nq = n;
                let mut iq = vec![0.0; nq * n];
                let mut dq = vec![0.0; nq * n];
                let iw = [-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0];
                let dw = [1.0, -27.0, 27.0, -1.0].map(|w| w / (24.0 * dx));
                for q in 0..nq {
                    for (o, (a, b)) in iw.iter().zip(dw).enumerate() {
                        let i = (q + n + o - 1) % n;
                        iq[q * n + i] += a;
                        dq[q * n + i] += b;
                    }
                }
                interp_q = iq;
                deriv_q = dq;
            }
        }
        GridOps {
            grid,
            d1,
            d2,
            lap_inv,
            nq,
            interp_q,
            deriv_q,
            wq: 2.0 * PI / nq as f64,
        }
    }

    fn circulant(&self, kernel: &[f64], f: &[f64], k: usize) -> Vec<f64> {
        let n = self.grid.n;
        debug_assert_eq!(f.len(), n * k);
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            for (j, c) in kernel.iter().enumerate() {
                if *c == 0.0 {
                    continue;
                }
                let src = ((i + j) % n) * k;
                for a in 0..k {
                    out[i * k + a] += c * f[src + a];
                }
            }
        }
        out
    }

    /// First derivative of a `k`-component sampled function.
    pub fn derivative(&self, f: &[f64], k: usize) -> Vec<f64> {
        self.circulant(&self.d1, f, k)
    }

    /// Second derivative (trigonometric mode keeps the Nyquist mode).
    pub fn second_derivative(&self, f: &[f64], k: usize) -> Vec<f64> {
        self.circulant(&self.d2, f, k)
    }

    /// Mean-zero solution of `phi'' = f` for mean-zero `f`, by dividing
    /// Fourier modes by `-m^2`; the mean of `f` is ignored.
    pub fn inverse_laplacian(&self, f: &[f64], k: usize) -> Vec<f64> {
        self.circulant(&self.lap_inv, f, k)
    }

    /// Values of the trigonometric interpolant at an arbitrary angle.
    pub fn interpolate(&self, f: &[f64], k: usize, x: f64) -> Vec<f64> {
        let n = self.grid.n;
        let mut out = vec![0.0; k];
        for i in 0..n {
            let (w, _) = cardinal(n, x - self.grid.node(i));
            for a in 0..k {
                out[a] += w * f[i * k + a];
            }
        }
        out
    }

    /// Apply an `nq x n` matrix to a `k`-component function.
    pub fn to_quadrature(&self, mat: &[f64], f: &[f64], k: usize) -> Vec<f64> {
        let n = self.grid.n;
        let mut out = vec![0.0; self.nq * k];
        for q in 0..self.nq {
            let row = &mat[q * n..(q + 1) * n];
            for (i, w) in row.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                for a in 0..k {
                    out[q * k + a] += w * f[i * k + a];
                }
            }
        }
        out
    }
}

/// Componentwise means of a node-major sampled function.
pub fn means(f: &[f64], k: usize) -> Vec<f64> {
    let n = f.len() / k;
    let mut m = vec![0.0; k];
    for i in 0..n {
        for a in 0..k {
            m[a] += f[i * k + a];
        }
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    m
}

pub fn subtract_means(f: &mut [f64], k: usize) {
    let m = means(f, k);
    for (i, v) in f.iter_mut().enumerate() {
        *v -= m[i % k];
    }
}

pub fn sup_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |a, b| a.max(b.abs()))
}
