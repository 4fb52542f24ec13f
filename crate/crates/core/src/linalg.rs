//! Fixed-capacity vectors and matrices for ambient tensors (dimension <= 4).

use crate::jet::MAX_DIM;

pub type Vec4 = [f64; MAX_DIM];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat4 {
    pub n: usize,
    pub a: [[f64; MAX_DIM]; MAX_DIM],
}

impl Mat4 {
    pub fn zeros(n: usize) -> Self {
        Mat4 {
            n,
            a: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat4::zeros(n);
        for i in 0..n {
            m.a[i][i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn mul_vec(&self, v: &Vec4) -> Vec4 {
        let mut out = [0.0; MAX_DIM];
        for i in 0..self.n {
            for j in 0..self.n {
                out[i] += self.a[i][j] * v[j];
            }
        }
        out
    }

    /// Bilinear form `u^T A v`.
    pub fn form(&self, u: &Vec4, v: &Vec4) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for j in 0..self.n {
                row += self.a[i][j] * v[j];
            }
            s += u[i] * row;
        }
        s
    }

    pub fn mul(&self, o: &Mat4) -> Mat4 {
        let mut out = Mat4::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                for l in 0..self.n {
                    out.a[i][j] += self.a[i][l] * o.a[l][j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat4 {
        let mut out = Mat4::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.a[i][j] = self.a[j][i];
            }
        }
        out
    }

    /// Cholesky factor `L` with `A = L L^T`, or `None` when `A` is not
    /// positive definite.
    pub fn cholesky(&self) -> Option<Mat4> {
        let n = self.n;
        let mut l = Mat4::zeros(n);
        for j in 0..n {
            let mut d = self.a[j][j];
            for p in 0..j {
                d -= l.a[j][p] * l.a[j][p];
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            l.a[j][j] = d;
            for i in j + 1..n {
                let mut s = self.a[i][j];
                for p in 0..j {
                    s -= l.a[i][p] * l.a[j][p];
                }
                l.a[i][j] = s / d;
            }
        }
        Some(l)
    }

    pub fn det(&self) -> f64 {
        let (lu, _, sign) = match self.lu() {
            Some(t) => t,
            None => return 0.0,
        };
        (0..self.n).map(|i| lu.a[i][i]).product::<f64>() * sign
    }

    pub fn inverse(&self) -> Option<Mat4> {
        let n = self.n;
        let (lu, perm, _) = self.lu()?;
        let mut inv = Mat4::zeros(n);
        for col in 0..n {
            let mut b = [0.0; MAX_DIM];
            for i in 0..n {
                b[i] = if perm[i] == col { 1.0 } else { 0.0 };
            }
            for i in 0..n {
                for p in 0..i {
                    b[i] -= lu.a[i][p] * b[p];
                }
            }
            for i in (0..n).rev() {
                for p in i + 1..n {
                    b[i] -= lu.a[i][p] * b[p];
                }
                b[i] /= lu.a[i][i];
            }
            for i in 0..n {
                inv.a[i][col] = b[i];
            }
        }
        Some(inv)
    }

    fn lu(&self) -> Option<(Mat4, [usize; MAX_DIM], f64)> {
        let n = self.n;
        let mut lu = *self;
        let mut perm = [0usize, 1, 2, 3];
        let mut sign = 1.0;
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| lu.a[i][c].abs().total_cmp(&lu.a[j][c].abs()))?;
            if lu.a[piv][c] == 0.0 {
                return None;
            }
            if piv != c {
                lu.a.swap(piv, c);
                perm.swap(piv, c);
                sign = -sign;
            }
            for i in c + 1..n {
                let f = lu.a[i][c] / lu.a[c][c];
                lu.a[i][c] = f;
                for j in c + 1..n {
                    lu.a[i][j] -= f * lu.a[c][j];
                }
            }
        }
        Some((lu, perm, sign))
    }
}

pub fn dot(u: &Vec4, v: &Vec4) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn axpy(alpha: f64, x: &Vec4, y: &mut Vec4) {
    for i in 0..MAX_DIM {
        y[i] += alpha * x[i];
    }
}

pub fn scale(alpha: f64, x: &Vec4) -> Vec4 {
    let mut out = *x;
    for v in out.iter_mut() {
        *v *= alpha;
    }
    out
}

pub fn sub(a: &Vec4, b: &Vec4) -> Vec4 {
    let mut out = *a;
    for i in 0..MAX_DIM {
        out[i] -= b[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_det_of_spd_matrix() {
        let mut m = Mat4::zeros(3);
        m.a[0] = [4.0, 1.0, 0.5, 0.0];
        m.a[1] = [1.0, 3.0, 0.2, 0.0];
        m.a[2] = [0.5, 0.2, 2.0, 0.0];
        let inv = m.inverse().unwrap();
        let id = m.mul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id.a[i][j] - e).abs() < 1e-14);
            }
        }
        let l = m.cholesky().unwrap();
        let d: f64 = (0..3).map(|i| l.a[i][i]).product();
        assert!((m.det() - d * d).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = Mat4::identity(2);
        m.a[0][1] = 2.0;
        m.a[1][0] = 2.0;
        assert!(m.cholesky().is_none());
    }
}
