//! Christoffel symbols and the Riemann tensor from a [`MetricJet`].

use super::MetricJet;
use crate::error::{QpmcError, Result};
use crate::jet::MAX_DIM;
use crate::linalg::{Mat4, Vec4};

type T3 = [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM];
type T4 = [[[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];

/// `gamma[c][a][b]` is `Gamma^c_{ab}`.
#[derive(Clone, Debug)]
pub struct Christoffel {
    pub n: usize,
    pub gamma: T3,
}

impl Christoffel {
    /// `Gamma(u, v)^c = Gamma^c_{ab} u^a v^b`.
    pub fn contract(&self, u: &Vec4, v: &Vec4) -> Vec4 {
        let n = self.n;
        let mut out = [0.0; MAX_DIM];
        for (c, o) in out.iter_mut().enumerate().take(n) {
            for a in 0..n {
                for b in 0..n {
                    *o += self.gamma[c][a][b] * u[a] * v[b];
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        let n = self.n;
        let mut m = 0.0f64;
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    m = m.max(self.gamma[c][a][b].abs());
                }
            }
        }
        m
    }
}

/// Riemann tensor with `R(U, V)W = nabla_U nabla_V W - nabla_V nabla_U W - nabla_[U,V] W`.
#[derive(Clone, Debug)]
pub struct Curvature {
    pub n: usize,
    pub g: Mat4,
    /// `up[d][c][a][b]` is the `d`-component of `R(d_a, d_b) d_c`.
    pub up: T4,
    /// `low[a][b][c][d] = g(R(d_a, d_b) d_c, d_d)`.
    pub low: T4,
}

impl Curvature {
    /// `R(u, v) w`.
    pub fn apply(&self, u: &Vec4, v: &Vec4, w: &Vec4) -> Vec4 {
        let n = self.n;
        let mut out = [0.0; MAX_DIM];
        for (d, o) in out.iter_mut().enumerate().take(n) {
            for c in 0..n {
                if w[c] == 0.0 {
                    continue;
                }
                for a in 0..n {
                    for b in 0..n {
                        *o += self.up[d][c][a][b] * u[a] * v[b] * w[c];
                    }
                }
            }
        }
        out
    }

    pub fn sectional(&self, u: &Vec4, v: &Vec4) -> Result<f64> {
        let uu = self.g.form(u, u);
        let vv = self.g.form(v, v);
        let uv = self.g.form(u, v);
        let area = uu * vv - uv * uv;
        if !(area > 1e-14 * uu * vv) {
            return Err(QpmcError::InvalidInput(
                "sectional curvature needs two independent vectors".into(),
            ));
        }
        let r = self.apply(u, v, v);
        Ok(self.g.form(&r, u) / area)
    }

    /// Largest violation of the pair antisymmetries and the first Bianchi
    /// identity, relative to the largest component.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n;
        let r = &self.low;
        let mut scale = 0.0f64;
        let mut err = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        scale = scale.max(r[a][b][c][d].abs());
                        err = err.max((r[a][b][c][d] + r[b][a][c][d]).abs());
                        err = err.max((r[a][b][c][d] + r[a][b][d][c]).abs());
                        err = err.max((r[a][b][c][d] + r[b][c][a][d] + r[c][a][b][d]).abs());
                    }
                }
            }
        }
        if scale == 0.0 {
            err
        } else {
            err / scale
        }
    }
}

impl MetricJet {
    fn n(&self) -> usize {
        self.g.n
    }

    /// Lowered symbols `Gamma_{d a b}` and their partials `d_e Gamma_{d a b}`.
    fn lowered(&self) -> (T3, T4) {
        let n = self.n();
        let mut low = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        let mut dlow = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for d in 0..n {
            for a in 0..n {
                for b in 0..n {
                    low[d][a][b] =
                        0.5 * (self.dg[a].a[d][b] + self.dg[b].a[d][a] - self.dg[d].a[a][b]);
                    for e in 0..n {
                        dlow[e][d][a][b] = 0.5
                            * (self.d2g[e][a].a[d][b] + self.d2g[e][b].a[d][a]
                                - self.d2g[e][d].a[a][b]);
                    }
                }
            }
        }
        (low, dlow)
    }

    pub fn christoffel(&self) -> Christoffel {
        let n = self.n();
        let (low, _) = self.lowered();
        let mut gamma = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let mut s = 0.0;
                    for d in 0..n {
                        s += self.ginv.a[c][d] * low[d][a][b];
                    }
                    gamma[c][a][b] = s;
                }
            }
        }
        Christoffel { n, gamma }
    }

    pub fn curvature(&self) -> Curvature {
        let n = self.n();
        let gi = &self.ginv;
        let (low, dlow) = self.lowered();
        let gamma = self.christoffel().gamma;
        // d_e g^{cd} = -g^{cp} (d_e g_{pq}) g^{qd}
        let mut dginv = [Mat4::zeros(n); MAX_DIM];
        for (e, dgi) in dginv.iter_mut().enumerate().take(n) {
            *dgi = gi.mul(&self.dg[e]).mul(gi);
            for row in dgi.a.iter_mut() {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
        }
        // dgamma[e][c][a][b] = d_e Gamma^c_{ab}
        let mut dgamma = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for e in 0..n {
            for c in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let mut s = 0.0;
                        for d in 0..n {
                            s += dginv[e].a[c][d] * low[d][a][b] + gi.a[c][d] * dlow[e][d][a][b];
                        }
                        dgamma[e][c][a][b] = s;
                    }
                }
            }
        }
        let mut up = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for d in 0..n {
            for c in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let mut s = dgamma[a][d][b][c] - dgamma[b][d][a][c];
                        for e in 0..n {
                            s += gamma[d][a][e] * gamma[e][b][c] - gamma[d][b][e] * gamma[e][a][c];
                        }
                        up[d][c][a][b] = s;
                    }
                }
            }
        }
        let mut lowr = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let mut s = 0.0;
                        for e in 0..n {
                            s += self.g.a[d][e] * up[e][c][a][b];
                        }
                        lowr[a][b][c][d] = s;
                    }
                }
            }
        }
        Curvature {
            n,
            g: self.g,
            up,
            low: lowr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{DerivativeMode, MetricField, MetricKind};

    #[test]
    fn flat_metrics_have_no_christoffels_or_curvature() {
        let m = MetricField::product(3).unwrap();
        let p = [0.1, 0.2, -0.3, 4.0];
        assert!(m.christoffel(&p).unwrap().max_abs() < 1e-12);
        let r = m.riemann(&p).unwrap();
        assert!(r.low.iter().flatten().flatten().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn warped_christoffels_match_symbolic_values() {
        let m = MetricField::new(1, MetricKind::Warped { scale: 1.0 }, "warped").unwrap();
        for &z in &[-1.3, 0.0, 0.5, 2.0] {
            let c = m.christoffel(&[z, 0.7]).unwrap().gamma;
            assert!((c[1][0][1] - z.tanh()).abs() < 1e-14);
            assert!((c[1][1][0] - z.tanh()).abs() < 1e-14);
            assert!((c[0][1][1] + z.cosh() * z.sinh()).abs() < 1e-12 * z.cosh().powi(2));
            assert_eq!(c[0][0][0], 0.0);
            assert_eq!(c[0][0][1], 0.0);
            assert_eq!(c[1][1][1], 0.0);
            assert_eq!(c[1][0][0], 0.0);
        }
    }

    #[test]
    fn warped_sectional_curvature_is_minus_scale_squared() {
        for &a in &[1.0, 0.6] {
            let m = MetricField::new(1, MetricKind::Warped { scale: a }, "warped").unwrap();
            let k = m
                .sectional_curvature(&[0.8, 2.0], &[1.0, 0.0], &[0.3, 1.0])
                .unwrap();
            assert!((k + a * a).abs() < 1e-12, "{k}");
        }
    }

    #[test]
    fn twisted_metric_is_flat() {
        let m = MetricField::parse("twisted:alpha=0.4,wobble=0.3").unwrap();
        for p in [[0.0, 0.0, 1.0], [0.5, -0.2, 3.0], [1.5, 1.0, 0.1]] {
            let r = m.riemann(&p).unwrap();
            let worst = r.low.iter().flatten().flatten().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
            assert!(worst < 1e-12, "{worst}");
        }
    }

    #[test]
    fn bump_curvature_has_riemann_symmetries() {
        let m = MetricField::parse("bump:eps=0.2,width=1.5,seed=11,center=0.1;0.3").unwrap();
        let r = m.riemann(&[0.3, 0.1, 1.1]).unwrap();
        assert!(r.symmetry_defect() < 1e-8);
        let worst = r.low.iter().flatten().flatten().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(worst > 1e-3);
    }

    /// Observed order of centered FD partials against exact partials.
    #[test]
    fn finite_difference_partials_converge_at_second_order() {
        let exact = MetricField::parse("bump:eps=0.3,width=1.5,seed=5,center=0.2;0").unwrap();
        let p = [0.4, -0.3, 0.9];
        let j = exact.jet(&p).unwrap();
        let errs: Vec<(f64, f64)> = [4e-2, 2e-2, 1e-2]
            .iter()
            .map(|&h| {
                let fd = exact
                    .clone()
                    .with_derivatives(DerivativeMode::Fd, h)
                    .unwrap()
                    .jet(&p)
                    .unwrap();
                let (mut e1, mut e2) = (0.0f64, 0.0f64);
                for c in 0..3 {
                    for a in 0..3 {
                        for b in 0..3 {
                            e1 = e1.max((fd.dg[c].a[a][b] - j.dg[c].a[a][b]).abs());
                            for d in 0..3 {
                                e2 = e2.max((fd.d2g[c][d].a[a][b] - j.d2g[c][d].a[a][b]).abs());
                            }
                        }
                    }
                }
                (e1, e2)
            })
            .collect();
        for w in errs.windows(2) {
            let o1 = (w[0].0 / w[1].0).log2();
            let o2 = (w[0].1 / w[1].1).log2();
            assert!((1.8..=2.2).contains(&o1), "first partials order {o1}");
            assert!((1.8..=2.2).contains(&o2), "second partials order {o2}");
        }
    }
}
