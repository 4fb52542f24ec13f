//! Normal connection, the normal Laplacian as a mass-weighted symmetric
//! eigenproblem, and the projector onto its low eigensections.
//!
//! Sections of the normal bundle are node-major arrays of frame components
//! (`v[i * k + a]` is the `e_a` component at node `i`).

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{QpmcError, Result};
use crate::geometry::NormalGeometry;
use crate::jet::MAX_DIM;
use crate::linalg::{axpy, Vec4};

pub const DEFAULT_GAP_TOL: f64 = 1e-6;

/// Default cutoff of the threshold rule, `(n - k) / 2` for circle fibers.
pub const THRESHOLD_CUTOFF: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CutoffRule {
    /// Eigenvalues below `1/2`.
    #[default]
    Threshold,
    /// The lowest `k` eigenvalues, below `lambda_{k+1}`.
    Order,
}

impl std::str::FromStr for CutoffRule {
    type Err = QpmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(CutoffRule::Threshold),
            "order" => Ok(CutoffRule::Order),
            _ => Err(QpmcError::param(
                "rule",
                format!("expected threshold or order, got `{s}`"),
            )),
        }
    }
}

/// Connection coefficients with `(nabla_x V)^a = d_x V^a + omega_ab V^b`.
#[derive(Clone, Debug)]
pub struct NormalConnection {
    pub k: usize,
    /// Index `i * k * k + a * k + b`.
    pub omega: Vec<f64>,
    /// Size of the symmetric part removed from the sampled coefficients.
    pub skew_defect: f64,
}

pub fn normal_connection(geom: &NormalGeometry) -> NormalConnection {
    let k = geom.k;
    let n = k + 1;
    let nn = geom.n();
    let ops = geom.grid.ops();
    let mut omega = vec![0.0; nn * k * k];
    for b in 0..k {
        let mut coords = vec![0.0; nn * n];
        for i in 0..nn {
            coords[i * n..(i + 1) * n].copy_from_slice(&geom.frame[i * k + b][..n]);
        }
        let de = ops.derivative(&coords, n);
        for i in 0..nn {
            let mut v: Vec4 = [0.0; MAX_DIM];
            v[..n].copy_from_slice(&de[i * n..(i + 1) * n]);
            let gam = geom.christoffel[i].contract(&geom.tangent[i], &geom.frame[i * k + b]);
            axpy(1.0, &gam, &mut v);
            for a in 0..k {
                omega[i * k * k + a * k + b] = geom.metric[i].form(&v, &geom.frame[i * k + a]);
            }
        }
    }
    let mut defect = 0.0f64;
    for i in 0..nn {
        let w = &mut omega[i * k * k..(i + 1) * k * k];
        for a in 0..k {
            for b in a..k {
                let sym = 0.5 * (w[a * k + b] + w[b * k + a]);
                defect = defect.max(sym.abs());
                w[a * k + b] -= sym;
                w[b * k + a] -= sym;
            }
        }
    }
    NormalConnection {
        k,
        omega,
        skew_defect: defect,
    }
}

impl NormalConnection {
    /// `nabla_x V` by collocation.
    pub fn covariant_derivative(&self, geom: &NormalGeometry, v: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut out = geom.grid.ops().derivative(v, k);
        for i in 0..geom.n() {
            for a in 0..k {
                for b in 0..k {
                    out[i * k + a] += self.omega[i * k * k + a * k + b] * v[i * k + b];
                }
            }
        }
        out
    }

    /// Unit-speed covariant derivative `h^{-1/2} nabla_x V`.
    pub fn unit_derivative(&self, geom: &NormalGeometry, v: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut out = self.covariant_derivative(geom, v);
        for (i, c) in out.chunks_mut(k).enumerate() {
            let s = 1.0 / geom.density[i];
            c.iter_mut().for_each(|x| *x *= s);
        }
        out
    }

    /// Rough Laplacian `D D V` with `D` the unit-speed derivative.
    pub fn laplacian(&self, geom: &NormalGeometry, v: &[f64]) -> Vec<f64> {
        let d = self.unit_derivative(geom, v);
        self.unit_derivative(geom, &d)
    }
}

/// Mass weights `w_i = sqrt(h_i) * 2 pi / N`.
pub fn mass_weights(geom: &NormalGeometry) -> Vec<f64> {
    let dx = geom.grid.dx();
    geom.density.iter().map(|f| f * dx).collect()
}

/// `<v, w> = sum_i w_i g(v_i, w_i)` on frame components.
pub fn weighted_inner(weights: &[f64], k: usize, v: &[f64], w: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, wi) in weights.iter().enumerate() {
        let mut t = 0.0;
        for a in 0..k {
            t += v[i * k + a] * w[i * k + a];
        }
        s += wi * t;
    }
    s
}

pub fn weighted_norm(weights: &[f64], k: usize, v: &[f64]) -> f64 {
    weighted_inner(weights, k, v, v).max(0.0).sqrt()
}

/// Galerkin stiffness and diagonal mass of `-Delta^perp`.
#[derive(Clone, Debug)]
pub struct Laplacian {
    pub k: usize,
    /// Node weights `w_i`.
    pub weights: Vec<f64>,
    pub stiffness: Mat<f64>,
    /// Covariant derivative onto quadrature points and the quadrature
    /// weights including `h^{-1/2}`.
    cov_q: Mat<f64>,
    wq: Vec<f64>,
}

pub fn assemble_laplacian(geom: &NormalGeometry, conn: &NormalConnection) -> Laplacian {
    let k = geom.k;
    let nn = geom.n();
    let ops = geom.grid.ops();
    let nq = ops.nq;
    let hq = ops.to_quadrature(&ops.interp_q, &geom.h, 1);
    let omega_q = ops.to_quadrature(&ops.interp_q, &conn.omega, k * k);
    let mut cov = Mat::<f64>::zeros(nq * k, nn * k);
    for q in 0..nq {
        for i in 0..nn {
            let d = ops.deriv_q[q * nn + i];
            let s = ops.interp_q[q * nn + i];
            if d == 0.0 && s == 0.0 {
                continue;
            }
            for c in 0..k {
                cov[(q * k + c, i * k + c)] += d;
                for a in 0..k {
                    cov[(q * k + c, i * k + a)] += s * omega_q[q * k * k + c * k + a];
                }
            }
        }
    }
    let mut wq = Vec::with_capacity(nq * k);
    for h in &hq {
        for _ in 0..k {
            wq.push(ops.wq / h.sqrt());
        }
    }
    let mut wc = cov.clone();
    for r in 0..nq * k {
        for c in 0..nn * k {
            wc[(r, c)] *= wq[r];
        }
    }
    let mut stiff = cov.transpose() * &wc;
    let dim = nn * k;
    for r in 0..dim {
        for c in r + 1..dim {
            let v = 0.5 * (stiff[(r, c)] + stiff[(c, r)]);
            stiff[(r, c)] = v;
            stiff[(c, r)] = v;
        }
    }
    Laplacian {
        k,
        weights: mass_weights(geom),
        stiffness: stiff,
        cov_q: cov,
        wq,
    }
}

impl Laplacian {
    pub fn dim(&self) -> usize {
        self.weights.len() * self.k
    }

    /// `int |nabla^perp v|^2 h^{-1} dvol` by the assembly quadrature.
    pub fn energy(&self, v: &[f64]) -> f64 {
        let dim = self.dim();
        let mut s = 0.0;
        for r in 0..self.wq.len() {
            let mut t = 0.0;
            for c in 0..dim {
                t += self.cov_q[(r, c)] * v[c];
            }
            s += self.wq[r] * t * t;
        }
        s
    }

    /// `Delta^perp v = -M^{-1} K v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let mut out = vec![0.0; dim];
        for c in 0..dim {
            if v[c] == 0.0 {
                continue;
            }
            for r in 0..dim {
                out[r] -= self.stiffness[(r, c)] * v[c];
            }
        }
        for (r, o) in out.iter_mut().enumerate() {
            *o /= self.weights[r / self.k];
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub lambda_k: f64,
    pub lambda_k1: f64,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub k: usize,
    pub weights: Vec<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `vectors[m]` is the `m`-th eigensection, orthonormal for the
    /// weighted inner product.
    pub vectors: Vec<Vec<f64>>,
}

/// The lowest `count` generalized eigenpairs of `(K, M)`.
pub fn eigendecompose(lap: &Laplacian, count: Option<usize>) -> Result<SpectralDecomposition> {
    let k = lap.k;
    let dim = lap.dim();
    let count = count.unwrap_or(dim).min(dim);
    let inv_sqrt: Vec<f64> = (0..dim).map(|r| lap.weights[r / k].powf(-0.5)).collect();
    let b = Mat::<f64>::from_fn(dim, dim, |r, c| lap.stiffness[(r, c)] * inv_sqrt[r] * inv_sqrt[c]);
    let evd = b.self_adjoint_eigen(Side::Lower).map_err(|e| {
        let (wmin, wmax) = lap
            .weights
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), w| (a.min(*w), b.max(*w)));
        QpmcError::EigenFailure(format!(
            "{e:?} (dimension {dim}, mass condition number {:.3e})",
            wmax / wmin
        ))
    })?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let mut eigenvalues = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    for &m in order.iter().take(count) {
        eigenvalues.push(s[m]);
        let mut v: Vec<f64> = (0..dim).map(|r| u[(r, m)] * inv_sqrt[r]).collect();
        let big = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * big) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        vectors.push(v);
    }
    Ok(SpectralDecomposition {
        k,
        weights: lap.weights.clone(),
        eigenvalues,
        vectors,
    })
}

impl SpectralDecomposition {
    pub fn inner(&self, v: &[f64], w: &[f64]) -> f64 {
        weighted_inner(&self.weights, self.k, v, w)
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        weighted_norm(&self.weights, self.k, v)
    }

    pub fn gap(&self) -> GapReport {
        let k = self.k;
        let lk = self.eigenvalues[k - 1];
        let lk1 = self.eigenvalues.get(k).copied().unwrap_or(f64::INFINITY);
        GapReport {
            lambda_k: lk,
            lambda_k1: lk1,
            gap: lk1 - lk,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QProjector {
    pub k: usize,
    pub rank: usize,
    pub rule: CutoffRule,
    pub cutoff: f64,
    pub weights: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
}

pub fn q_projector(
    spec: &SpectralDecomposition,
    rule: CutoffRule,
    gap_tol: f64,
) -> Result<QProjector> {
    let k = spec.k;
    let gap = spec.gap();
    let collapse = |rank: usize| QpmcError::GapCollapse {
        rank,
        expected: k,
        lambda_k: gap.lambda_k,
        lambda_k1: gap.lambda_k1,
    };
    let (rank, cutoff) = match rule {
        CutoffRule::Order => {
            if !(gap.gap > gap_tol) {
                let below = spec
                    .eigenvalues
                    .iter()
                    .filter(|l| **l < gap.lambda_k1 - gap_tol)
                    .count();
                return Err(collapse(below));
            }
            (k, gap.lambda_k1)
        }
        CutoffRule::Threshold => {
            let c = THRESHOLD_CUTOFF;
            let rank = spec.eigenvalues.iter().filter(|l| **l < c).count();
            if spec.eigenvalues.iter().any(|l| (l - c).abs() <= gap_tol) || rank != k {
                return Err(collapse(rank));
            }
            (rank, c)
        }
    };
    Ok(QProjector {
        k,
        rank,
        rule,
        cutoff,
        weights: spec.weights.clone(),
        basis: spec.vectors[..rank].to_vec(),
    })
}

impl QProjector {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for u in &self.basis {
            let c = weighted_inner(&self.weights, self.k, v, u);
            for (o, x) in out.iter_mut().zip(u) {
                *o += c * x;
            }
        }
        out
    }

    /// `(1 - Q) v`.
    pub fn complement(&self, v: &[f64]) -> Vec<f64> {
        let q = self.apply(v);
        v.iter().zip(q).map(|(a, b)| a - b).collect()
    }
}

/// `E_a = Q(N_a)` as frame components, checked pointwise independent.
pub fn quasi_parallel_frame(geom: &NormalGeometry, q: &QProjector) -> Result<Vec<Vec<f64>>> {
    let k = geom.k;
    if q.rank != k {
        return Err(QpmcError::GapCollapse {
            rank: q.rank,
            expected: k,
            lambda_k: f64::NAN,
            lambda_k1: f64::NAN,
        });
    }
    let e: Vec<Vec<f64>> = (0..k)
        .map(|a| q.apply(&geom.coord_normal_components(a)))
        .collect();
    let (node, det) = frame_gram_min(&e, k, geom.n());
    if !(det > crate::geometry::FRAME_DET_MIN) {
        return Err(QpmcError::FrameDegeneracy { node, det });
    }
    Ok(e)
}

/// Node and value of the smallest Gram determinant of sampled sections.
pub fn frame_gram_min(e: &[Vec<f64>], k: usize, nn: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for i in 0..nn {
        let mut m = crate::linalg::Mat4::zeros(k);
        for a in 0..k {
            for b in 0..k {
                m.a[a][b] = (0..k).map(|c| e[a][i * k + c] * e[b][i * k + c]).sum();
            }
        }
        let d = m.det();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// `||D H||` in the weighted norm, with `D` the unit-speed derivative.
pub fn pmc_defect(geom: &NormalGeometry, conn: &NormalConnection) -> f64 {
    let dh = conn.unit_derivative(geom, &geom.mean_curvature);
    weighted_norm(&mass_weights(geom), geom.k, &dh)
}

/// Everything spectral about one leaf.
#[derive(Clone, Debug)]
pub struct LeafSpectrum {
    pub connection: NormalConnection,
    pub laplacian: Laplacian,
    pub spectrum: SpectralDecomposition,
}

pub fn leaf_spectrum(geom: &NormalGeometry) -> Result<LeafSpectrum> {
    let connection = normal_connection(geom);
    let laplacian = assemble_laplacian(geom, &connection);
    let spectrum = eigendecompose(&laplacian, None)?;
    Ok(LeafSpectrum {
        connection,
        laplacian,
        spectrum,
    })
}
