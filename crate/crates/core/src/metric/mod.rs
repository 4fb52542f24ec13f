//! Riemannian metrics on `R^k x S^1` in the global chart `(z^1, .., z^k, x)`.
//!
//! Points are coordinate slices of length `n = k + 1`; the last entry is the
//! periodic fiber coordinate `x`.

pub mod berger;
mod curvature;
mod families;
pub mod spec;
mod user;

use serde::{Deserialize, Serialize};

pub use curvature::{Christoffel, Curvature};
pub use families::{BumpPerturbation, MetricKind, BUMP_MODES};
pub use user::{Trig, UserMetric, UserTerm, USER_METRIC_SCHEMA};

use crate::error::{QpmcError, Result};
use crate::jet::{Jet, MAX_DIM};
use crate::linalg::Mat4;

pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Step for the finite differences of exact Hessians used by the third and
/// fourth order deviation norms.
const DEVIATION_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Exact partials from forward-mode differentiation of the family.
    #[default]
    Closed,
    /// Centered second-order differences with step `fd_step`.
    Fd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricField {
    k: usize,
    kind: MetricKind,
    fd_step: f64,
    derivatives: DerivativeMode,
    provenance: String,
}

/// Metric matrix and its first two coordinate partials at a point.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub g: Mat4,
    pub ginv: Mat4,
    /// `dg[c]` is `d_c g`.
    pub dg: [Mat4; MAX_DIM],
    /// `d2g[c][e]` is `d_c d_e g`.
    pub d2g: [[Mat4; MAX_DIM]; MAX_DIM],
}

/// Sampled sup-norms of `g - g0` and its partials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    /// `by_order[j]` is the largest `|d^j (g - g0)_{ab}|` over samples,
    /// entries and multi-indices of length `j`, for `j = 0..=4`.
    pub by_order: [f64; 5],
    /// Largest `by_order[j]` for `j <= 4`.
    pub c4: f64,
    pub samples: usize,
}

impl MetricField {
    pub fn new(k: usize, kind: MetricKind, provenance: impl Into<String>) -> Result<Self> {
        if k == 0 || k + 1 > MAX_DIM {
            return Err(QpmcError::param("k", format!("must be in 1..={}", MAX_DIM - 1)));
        }
        Ok(MetricField {
            k,
            kind,
            fd_step: DEFAULT_FD_STEP,
            derivatives: DerivativeMode::Closed,
            provenance: provenance.into(),
        })
    }

    /// Parses a `name:key=value,...` specification; see [`spec`].
    pub fn parse(text: &str) -> Result<Self> {
        spec::parse_metric(text)
    }

    pub fn product(k: usize) -> Result<Self> {
        MetricField::new(k, MetricKind::Product, format!("product:k={k}"))
    }

    pub fn with_derivatives(mut self, mode: DerivativeMode, fd_step: f64) -> Result<Self> {
        if !(fd_step > 0.0 && fd_step.is_finite()) {
            return Err(QpmcError::param("fd_step", "must be positive"));
        }
        self.derivatives = mode;
        self.fd_step = fd_step;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.k + 1
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        self.derivatives
    }

    fn raw(&self, p: &[f64]) -> Mat4 {
        let n = self.dim();
        let v = self.kind.eval::<f64>(self.k, &p[..n]);
        let mut m = Mat4::zeros(n);
        for a in 0..n {
            for b in 0..n {
                m.a[a][b] = v[a * n + b];
            }
        }
        m
    }

    fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() || p.iter().any(|v| !v.is_finite()) {
            return Err(QpmcError::InvalidInput(format!(
                "expected a finite point with {} coordinates, got {:?}",
                self.dim(),
                p
            )));
        }
        Ok(())
    }

    fn check_definite(&self, g: &Mat4, p: &[f64]) -> Result<Mat4> {
        if g.cholesky().is_none() {
            return Err(QpmcError::DegenerateMetric {
                point: p.to_vec(),
                detail: "not positive definite".into(),
            });
        }
        g.inverse().ok_or_else(|| QpmcError::DegenerateMetric {
            point: p.to_vec(),
            detail: "singular".into(),
        })
    }

    /// Metric matrix at `p`, checked positive definite.
    pub fn eval(&self, p: &[f64]) -> Result<Mat4> {
        self.check_point(p)?;
        let g = self.raw(p);
        self.check_definite(&g, p)?;
        Ok(g)
    }

    pub fn jet(&self, p: &[f64]) -> Result<MetricJet> {
        self.check_point(p)?;
        let (g, dg, d2g) = match self.derivatives {
            DerivativeMode::Closed => self.closed_partials(p),
            DerivativeMode::Fd => self.fd_partials(p),
        };
        let ginv = self.check_definite(&g, p)?;
        Ok(MetricJet { g, ginv, dg, d2g })
    }

    fn jet_entries(&self, p: &[f64]) -> Vec<Jet> {
        let n = self.dim();
        let vars: Vec<Jet> = (0..n).map(|i| Jet::variable(p[i], i)).collect();
        self.kind.eval::<Jet>(self.k, &vars)
    }

    #[allow(clippy::type_complexity)]
    fn closed_partials(&self, p: &[f64]) -> (Mat4, [Mat4; MAX_DIM], [[Mat4; MAX_DIM]; MAX_DIM]) {
        let n = self.dim();
        let e = self.jet_entries(p);
        let mut g = Mat4::zeros(n);
        let mut dg = [Mat4::zeros(n); MAX_DIM];
        let mut d2g = [[Mat4::zeros(n); MAX_DIM]; MAX_DIM];
        for a in 0..n {
            for b in 0..n {
                let j = &e[a * n + b];
                g.a[a][b] = j.v;
                for c in 0..n {
                    dg[c].a[a][b] = j.d[c];
                    for d in 0..n {
                        d2g[c][d].a[a][b] = j.h[c][d];
                    }
                }
            }
        }
        (g, dg, d2g)
    }

    #[allow(clippy::type_complexity)]
    fn fd_partials(&self, p: &[f64]) -> (Mat4, [Mat4; MAX_DIM], [[Mat4; MAX_DIM]; MAX_DIM]) {
        let n = self.dim();
        let h = self.fd_step;
        let at = |offs: &[(usize, f64)]| {
            let mut q = p.to_vec();
            for &(i, s) in offs {
                q[i] += s * h;
            }
            self.raw(&q)
        };
        let g = self.raw(p);
        let mut dg = [Mat4::zeros(n); MAX_DIM];
        let mut d2g = [[Mat4::zeros(n); MAX_DIM]; MAX_DIM];
        for c in 0..n {
            let (gp, gm) = (at(&[(c, 1.0)]), at(&[(c, -1.0)]));
            for a in 0..n {
                for b in 0..n {
                    dg[c].a[a][b] = (gp.a[a][b] - gm.a[a][b]) / (2.0 * h);
                    d2g[c][c].a[a][b] = (gp.a[a][b] - 2.0 * g.a[a][b] + gm.a[a][b]) / (h * h);
                }
            }
            for d in c + 1..n {
                let pp = at(&[(c, 1.0), (d, 1.0)]);
                let pm = at(&[(c, 1.0), (d, -1.0)]);
                let mp = at(&[(c, -1.0), (d, 1.0)]);
                let mm = at(&[(c, -1.0), (d, -1.0)]);
                for a in 0..n {
                    for b in 0..n {
                        let v = (pp.a[a][b] - pm.a[a][b] - mp.a[a][b] + mm.a[a][b]) / (4.0 * h * h);
                        d2g[c][d].a[a][b] = v;
                        d2g[d][c].a[a][b] = v;
                    }
                }
            }
        }
        (g, dg, d2g)
    }

    pub fn christoffel(&self, p: &[f64]) -> Result<Christoffel> {
        Ok(self.jet(p)?.christoffel())
    }

    pub fn riemann(&self, p: &[f64]) -> Result<Curvature> {
        Ok(self.jet(p)?.curvature())
    }

    /// Sectional curvature of the plane spanned by `u` and `v` at `p`.
    pub fn sectional_curvature(&self, p: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
        let n = self.dim();
        if u.len() != n || v.len() != n {
            return Err(QpmcError::InvalidInput("plane vectors have the wrong length".into()));
        }
        let mut uu = [0.0; MAX_DIM];
        let mut vv = [0.0; MAX_DIM];
        uu[..n].copy_from_slice(u);
        vv[..n].copy_from_slice(v);
        self.riemann(p)?.sectional(&uu, &vv)
    }

    /// The metric `(z, x) -> m(z + z0, x)`.
    pub fn translate_pullback(&self, z0: &[f64]) -> MetricField {
        assert_eq!(z0.len(), self.k, "translation has the wrong dimension");
        let mut offset = vec![0.0; self.dim()];
        offset[..self.k].copy_from_slice(z0);
        let kind = match &self.kind {
            MetricKind::Product => MetricKind::Product,
            MetricKind::Translated { base, offset: o } => {
                for (a, b) in offset.iter_mut().zip(o) {
                    *a += *b;
                }
                MetricKind::Translated {
                    base: base.clone(),
                    offset,
                }
            }
            other => MetricKind::Translated {
                base: Box::new(other.clone()),
                offset,
            },
        };
        MetricField {
            kind,
            ..self.clone()
        }
    }

    /// Sup-norms of `g - g0` and its partials up to order four over the
    /// given sample points. Orders 0..=2 are exact; orders 3 and 4 are
    /// centered differences of exact Hessians.
    pub fn deviation(&self, samples: &[Vec<f64>]) -> Result<DeviationReport> {
        let n = self.dim();
        let mut by_order = [0.0f64; 5];
        let hess = |q: &[f64]| -> [[Mat4; MAX_DIM]; MAX_DIM] { self.closed_partials(q).2 };
        for p in samples {
            self.check_point(p)?;
            let (g, dg, d2g) = self.closed_partials(p);
            for a in 0..n {
                for b in 0..n {
                    let id = if a == b { 1.0 } else { 0.0 };
                    by_order[0] = by_order[0].max((g.a[a][b] - id).abs());
                    for c in 0..n {
                        by_order[1] = by_order[1].max(dg[c].a[a][b].abs());
                        for d in 0..n {
                            by_order[2] = by_order[2].max(d2g[c][d].a[a][b].abs());
                        }
                    }
                }
            }
            let s = DEVIATION_STEP;
            let shifted = |e: usize, t: f64| {
                let mut q = p.clone();
                q[e] += t;
                hess(&q)
            };
            for e in 0..n {
                let (hp, hm) = (shifted(e, s), shifted(e, -s));
                for c in 0..n {
                    for d in 0..n {
                        for a in 0..n {
                            for b in 0..n {
                                let v3 = (hp[c][d].a[a][b] - hm[c][d].a[a][b]) / (2.0 * s);
                                let v4 = (hp[c][d].a[a][b] - 2.0 * d2g[c][d].a[a][b]
                                    + hm[c][d].a[a][b])
                                    / (s * s);
                                by_order[3] = by_order[3].max(v3.abs());
                                by_order[4] = by_order[4].max(v4.abs());
                            }
                        }
                    }
                }
            }
        }
        let c4 = by_order.iter().cloned().fold(0.0, f64::max);
        Ok(DeviationReport {
            by_order,
            c4,
            samples: samples.len(),
        })
    }

    /// Sample points on the lattice `lo + i*spacing` inside `[lo, hi]^k`
    /// times `nx` uniform fiber nodes.
    pub fn box_samples(&self, lo: f64, hi: f64, spacing: f64, nx: usize) -> Vec<Vec<f64>> {
        let steps = ((hi - lo) / spacing).round().max(0.0) as usize;
        let mut out = Vec::new();
        let total = (steps + 1).pow(self.k as u32);
        for flat in 0..total {
            let mut z = Vec::with_capacity(self.dim());
            let mut r = flat;
            for _ in 0..self.k {
                z.push(lo + (r % (steps + 1)) as f64 * spacing);
                r /= steps + 1;
            }
            for i in 0..nx {
                let mut p = z.clone();
                p.push(2.0 * std::f64::consts::PI * i as f64 / nx as f64);
                out.push(p);
            }
        }
        out
    }
}
