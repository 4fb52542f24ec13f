//! Left-invariant Berger metrics on `SU(2)`.
//!
//! Vectors are components in a left-invariant frame `E_1, E_2, E_3` that is
//! orthonormal for the unit round metric, so `[E_i, E_j] = 2 eps_{ijk} E_k`.
//! `g_kappa` has `g(E_1, E_1) = g(E_2, E_2) = kappa^-2` and `g(E_3, E_3) = 1`.
//! Curvature is evaluated algebraically from the Koszul formula; no chart on
//! the group is involved.

use crate::error::{QpmcError, Result};

pub type V3 = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct BergerMetric {
    pub kappa: f64,
    diag: V3,
    /// `gamma[i][j][k]`: `nabla_{E_i} E_j = gamma[i][j][k] E_k`.
    gamma: [[V3; 3]; 3],
}

/// `[E_i, E_j]^k`.
fn bracket_coeff(i: usize, j: usize, k: usize) -> f64 {
    let eps = match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (1, 0, 2) | (2, 1, 0) | (0, 2, 1) => -1.0,
        _ => 0.0,
    };
    2.0 * eps
}

impl BergerMetric {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(QpmcError::param("kappa", "must be positive"));
        }
        let s = kappa.powi(-2);
        let diag = [s, s, 1.0];
        // Koszul: g(nabla_X Y, Z) = (g([X,Y],Z) - g([Y,Z],X) + g([Z,X],Y)) / 2
        let mut gamma = [[[0.0; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let lowered = 0.5
                        * (bracket_coeff(i, j, k) * diag[k] - bracket_coeff(j, k, i) * diag[i]
                            + bracket_coeff(k, i, j) * diag[j]);
                    gamma[i][j][k] = lowered / diag[k];
                }
            }
        }
        Ok(BergerMetric { kappa, diag, gamma })
    }

    pub fn inner(&self, u: &V3, v: &V3) -> f64 {
        (0..3).map(|i| self.diag[i] * u[i] * v[i]).sum()
    }

    fn nabla(&self, u: &V3, v: &V3) -> V3 {
        let mut out = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (k, o) in out.iter_mut().enumerate() {
                    *o += u[i] * v[j] * self.gamma[i][j][k];
                }
            }
        }
        out
    }

    fn bracket(u: &V3, v: &V3) -> V3 {
        let mut out = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (k, o) in out.iter_mut().enumerate() {
                    *o += u[i] * v[j] * bracket_coeff(i, j, k);
                }
            }
        }
        out
    }

    /// `R(U, V)W` for left-invariant fields with constant components.
    pub fn curvature(&self, u: &V3, v: &V3, w: &V3) -> V3 {
        let a = self.nabla(u, &self.nabla(v, w));
        let b = self.nabla(v, &self.nabla(u, w));
        let c = self.nabla(&Self::bracket(u, v), w);
        [a[0] - b[0] - c[0], a[1] - b[1] - c[1], a[2] - b[2] - c[2]]
    }

    pub fn sectional_curvature(&self, u: &V3, v: &V3) -> Result<f64> {
        let (uu, vv, uv) = (self.inner(u, u), self.inner(v, v), self.inner(u, v));
        let area = uu * vv - uv * uv;
        if !(area > 1e-14 * uu * vv) {
            return Err(QpmcError::InvalidInput(
                "sectional curvature needs two independent vectors".into(),
            ));
        }
        Ok(self.inner(&self.curvature(u, v, v), u) / area)
    }

    /// Sectional curvatures of the three coordinate planes
    /// `(E_1, E_2)`, `(E_1, E_3)`, `(E_2, E_3)`.
    pub fn frame_curvatures(&self) -> [f64; 3] {
        let e = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let k = |i: usize, j: usize| self.sectional_curvature(&e[i], &e[j]).unwrap();
        [k(0, 1), k(0, 2), k(1, 2)]
    }
}
