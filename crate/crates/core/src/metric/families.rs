//! Closed-form metric families on R^k x S^1, written generically over
//! [`Scalar`] so that one definition yields values and exact partials.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::user::UserMetric;
use crate::jet::Scalar;

/// Highest Fourier mode in the bump perturbation's fiber dependence.
pub const BUMP_MODES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MetricKind {
    /// `dz.dz + dx^2`.
    Product,
    /// `dz^2 + cosh(a z)^2 dx^2` on R x S^1.
    Warped { scale: f64 },
    /// `g0 + eps * psi(|z - c|^2 / w^2) * S(x)`.
    Bump(BumpPerturbation),
    /// Pullback of `g0` under `(z, x) -> (R(rho(x)) z, x)` on R^2 x S^1.
    Twisted { alpha: f64, wobble: f64 },
    /// `g0 + sum_i (g_i - g0)`.
    Sum(Vec<MetricKind>),
    /// `(z, x) -> base(z + offset, x)`.
    Translated {
        base: Box<MetricKind>,
        offset: Vec<f64>,
    },
    /// Coefficient tables loaded from JSON.
    User(UserMetric),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpPerturbation {
    pub eps: f64,
    pub center: Vec<f64>,
    pub width: f64,
    pub seed: u64,
    /// `coeffs[alpha][beta]` holds `[a_0, a_1, b_1, a_2, b_2, ...]` for
    /// `sum_m a_m cos(m x) + b_m sin(m x)`; only `alpha <= beta` is used.
    pub coeffs: Vec<Vec<Vec<f64>>>,
}

impl BumpPerturbation {
    /// Seeded trigonometric coefficients. Diagonal entries carry a unit
    /// mean so the perturbation changes fiber lengths at first order.
    pub fn new(k: usize, eps: f64, center: Vec<f64>, width: f64, seed: u64) -> Self {
        let n = k + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coeffs = vec![vec![Vec::new(); n]; n];
        for a in 0..n {
            for b in a..n {
                let mut c = Vec::with_capacity(2 * BUMP_MODES + 1);
                for _ in 0..(2 * BUMP_MODES + 1) {
                    c.push(rng.random_range(-1.0..1.0));
                }
                if a == b {
                    c[0] = 1.0;
                } else {
                    c[0] *= 0.5;
                }
                coeffs[a][b] = c.clone();
                coeffs[b][a] = c;
            }
        }
        BumpPerturbation {
            eps,
            center,
            width,
            seed,
            coeffs,
        }
    }

    /// Smooth radial cutoff `exp(1 - 1/(1 - r^2))` supported in `r < 1`.
    fn profile<S: Scalar>(&self, z: &[S]) -> Option<S> {
        let mut r2 = S::cst(0.0);
        let mut r2v = 0.0;
        for (za, ca) in z.iter().zip(&self.center) {
            let d = (*za + (-*ca)) * (1.0 / self.width);
            r2v += d.value() * d.value();
            r2 += d * d;
        }
        // exp(1 - 1/(1 - r^2)) < exp(-1e6) past this point
        if r2v >= 1.0 - 1e-6 {
            return None;
        }
        let t = (-r2 + 1.0).recip();
        Some((-t + 1.0).exp())
    }

    fn add_to<S: Scalar>(&self, n: usize, p: &[S], g: &mut [S]) {
        let k = n - 1;
        let Some(psi) = self.profile(&p[..k]) else {
            return;
        };
        let x = p[k];
        let mut cs = Vec::with_capacity(BUMP_MODES);
        for m in 1..=BUMP_MODES {
            let mx = x * m as f64;
            cs.push((mx.cos(), mx.sin()));
        }
        let amp = psi * self.eps;
        for a in 0..n {
            for b in 0..n {
                let c = &self.coeffs[a][b];
                let mut s = S::cst(c[0]);
                for (m, (cm, sm)) in cs.iter().enumerate() {
                    s += *cm * c[2 * m + 1] + *sm * c[2 * m + 2];
                }
                g[a * n + b] += amp * s;
            }
        }
    }
}

impl MetricKind {
    /// Full metric matrix (row-major `n x n`, `n = k + 1`) at coordinates `p`.
    pub fn eval<S: Scalar>(&self, k: usize, p: &[S]) -> Vec<S> {
        let n = k + 1;
        let mut g = vec![S::cst(0.0); n * n];
        for a in 0..n {
            g[a * n + a] = S::cst(1.0);
        }
        self.add_deviation(k, p, &mut g);
        g
    }

    /// Adds `g - g0` into `g`.
    fn add_deviation<S: Scalar>(&self, k: usize, p: &[S], g: &mut [S]) {
        let n = k + 1;
        match self {
            MetricKind::Product => {}
            MetricKind::Warped { scale } => {
                let phi = (p[0] * *scale).cosh();
                g[n * n - 1] += phi * phi + (-1.0);
            }
            MetricKind::Bump(b) => b.add_to(n, p, g),
            MetricKind::Twisted { alpha, wobble } => {
                let rho = (p[2].cos() * *wobble) + alpha / (2.0 * PI);
                let (z1, z2) = (p[0], p[1]);
                // J z = (-z2, z1)
                g[2] += -(rho * z2);
                g[2 * n] += -(rho * z2);
                g[n + 2] += rho * z1;
                g[2 * n + 1] += rho * z1;
                g[2 * n + 2] += rho * rho * (z1 * z1 + z2 * z2);
            }
            MetricKind::Sum(parts) => {
                for part in parts {
                    part.add_deviation(k, p, g);
                }
            }
            MetricKind::Translated { base, offset } => {
                let mut q = p.to_vec();
                for (qa, oa) in q.iter_mut().zip(offset) {
                    *qa = *qa + *oa;
                }
                base.add_deviation(k, &q, g);
            }
            MetricKind::User(u) => u.add_to(p, g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_is_compactly_supported() {
        let b = BumpPerturbation::new(2, 0.01, vec![0.0, 0.0], 1.0, 3);
        let mut g = vec![0.0; 9];
        b.add_to(3, &[0.8, 0.7, 1.0], &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
        b.add_to(3, &[0.1, 0.2, 1.0], &mut g);
        assert!(g.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn bump_coefficients_are_seeded() {
        let a = BumpPerturbation::new(2, 0.01, vec![0.0; 2], 1.0, 7);
        let b = BumpPerturbation::new(2, 0.01, vec![0.0; 2], 1.0, 7);
        let c = BumpPerturbation::new(2, 0.01, vec![0.0; 2], 1.0, 8);
        assert_eq!(a.coeffs, b.coeffs);
        assert_ne!(a.coeffs, c.coeffs);
    }
}
