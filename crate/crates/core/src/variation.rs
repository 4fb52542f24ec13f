//! First-variation formulas for curves moving normally through a family
//! `F(x, s) = F(x) + s V(x)`, each checked against centered differences in
//! `s` of the same discrete geometry.
//!
//! Normal sections are node-major frame components on the base curve.
//! Vector-valued quantities on a family member are compared at `s = 0`
//! after one step of the ambient connection along `V`:
//! `nabla_s Y ~ (Y(s) - Y(-s)) / 2s + Gamma(V, (Y(s) + Y(-s)) / 2)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QpmcError, Result};
use crate::geometry::{curve_geometry, Curve, NormalGeometry};
use crate::grid::FiberGrid;
use crate::jet::MAX_DIM;
use crate::leaf::GraphLeaf;
use crate::linalg::{axpy, Vec4};
use crate::metric::{Curvature, MetricField};
use crate::spectrum::{
    leaf_spectrum, normal_connection, q_projector, weighted_inner, weighted_norm,
    CutoffRule, NormalConnection, QProjector, SpectralDecomposition, DEFAULT_GAP_TOL,
};

pub const DEFAULT_STEPS: [f64; 2] = [1e-3, 5e-4];
/// Sup norm of seeded velocity fields.
pub const DEFAULT_AMPLITUDE: f64 = 1.0;
pub const MIN_ORDER: f64 = 1.8;
pub const MAX_REL_ERROR: f64 = 1e-5;
/// Relative errors below this are treated as exact agreement.
pub const NOISE_FLOOR: f64 = 1e-11;
/// Largest `||(1 - Q) H||` accepted as a QPMC base leaf.
pub const QPMC_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    /// `nabla_s H = Lap V + g(A, V) A + (R(V, X) X)^perp / h`.
    FirstVariationH,
    /// `[nabla_s, nabla_x] W`.
    GradientCommutator,
    /// `Lambda(V, W) = [nabla_s, Lap] W`.
    LaplacianCommutator,
    /// `nabla_s Q(W)`.
    QVariation,
    /// `nabla_s (1 - Q)(H)` on a QPMC leaf.
    QpmcVariation,
}

impl Formula {
    pub const ALL: [Formula; 5] = [
        Formula::FirstVariationH,
        Formula::GradientCommutator,
        Formula::LaplacianCommutator,
        Formula::QVariation,
        Formula::QpmcVariation,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Formula::FirstVariationH => "first_variation_h",
            Formula::GradientCommutator => "gradient_commutator",
            Formula::LaplacianCommutator => "laplacian_commutator",
            Formula::QVariation => "q_variation",
            Formula::QpmcVariation => "qpmc_variation",
        }
    }
}

impl std::str::FromStr for Formula {
    type Err = QpmcError;
    fn from_str(s: &str) -> Result<Self> {
        Formula::ALL
            .into_iter()
            .find(|f| f.id() == s)
            .ok_or_else(|| QpmcError::param("formulas", format!("unknown formula `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulaCheckReport {
    pub formula: Formula,
    pub analytic: Vec<f64>,
    pub fd: [Vec<f64>; 2],
    pub steps: [f64; 2],
    /// `||fd - analytic||_inf / scale` at each step.
    pub errors: [f64; 2],
    /// Sup norm of the largest term entering the comparison.
    pub scale: f64,
    /// `log2(errors[0] / errors[1])`; absent when both are at the noise floor.
    pub order: Option<f64>,
    pub rel_error: f64,
    /// Relative disagreement of the finite-difference values computed from
    /// a second extension of the section.
    pub extension_defect: Option<f64>,
    pub pass: bool,
}

impl FormulaCheckReport {
    fn new(
        formula: Formula,
        analytic: Vec<f64>,
        fd: [Vec<f64>; 2],
        steps: [f64; 2],
        term_scale: f64,
        extension_defect: Option<f64>,
    ) -> Self {
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let scale = sup(&analytic).max(term_scale).max(f64::MIN_POSITIVE);
        let err = |f: &[f64]| {
            f.iter()
                .zip(&analytic)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                / scale
        };
        let errors = [err(&fd[0]), err(&fd[1])];
        let order = if errors[1] <= NOISE_FLOOR && errors[0] <= NOISE_FLOOR {
            None
        } else {
            Some((errors[0] / errors[1]).log2())
        };
        let rel_error = errors[1];
        let order_ok = match order {
            None => true,
            Some(o) => o >= MIN_ORDER || errors[0] <= NOISE_FLOOR,
        };
        let ext_ok = extension_defect.is_none_or(|d| d <= steps[1]);
        FormulaCheckReport {
            formula,
            analytic,
            fd,
            steps,
            errors,
            scale,
            order,
            rel_error,
            extension_defect,
            pass: rel_error <= MAX_REL_ERROR && order_ok && ext_ok,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationConfig {
    pub steps: [f64; 2],
    pub rule: CutoffRule,
    pub gap_tol: f64,
}

impl Default for VariationConfig {
    fn default() -> Self {
        VariationConfig {
            steps: DEFAULT_STEPS,
            rule: CutoffRule::default(),
            gap_tol: DEFAULT_GAP_TOL,
        }
    }
}

/// Geometry of one curve with the data every formula needs.
#[derive(Clone, Debug)]
pub struct CurveData {
    pub geom: NormalGeometry,
    pub conn: NormalConnection,
    pub curvature: Vec<Curvature>,
}

impl CurveData {
    pub fn new(m: &MetricField, curve: &Curve) -> Result<Self> {
        let geom = curve_geometry(m, curve)?;
        let conn = normal_connection(&geom);
        let curvature = geom
            .points
            .iter()
            .map(|p| Ok(m.jet(&p[..m.dim()])?.curvature()))
            .collect::<Result<_>>()?;
        Ok(CurveData {
            geom,
            conn,
            curvature,
        })
    }

    fn k(&self) -> usize {
        self.geom.k
    }

    fn n(&self) -> usize {
        self.geom.n()
    }

    fn ambient(&self, v: &[f64]) -> Vec<Vec4> {
        let k = self.k();
        (0..self.n()).map(|i| self.geom.to_ambient(i, &v[i * k..(i + 1) * k])).collect()
    }

    fn d(&self, v: &[f64]) -> Vec<f64> {
        self.conn.unit_derivative(&self.geom, v)
    }

    pub fn laplacian(&self, v: &[f64]) -> Vec<f64> {
        self.conn.laplacian(&self.geom, v)
    }

    /// Frame components of `(R(V, Y) W)^perp` with `Y = c_i X_i` at node `i`.
    fn curvature_term(&self, v: &[f64], w: &[f64], c: impl Fn(usize) -> f64) -> Vec<f64> {
        let k = self.k();
        let mut out = Vec::with_capacity(v.len());
        for i in 0..self.n() {
            let va = self.geom.to_ambient(i, &v[i * k..(i + 1) * k]);
            let wa = self.geom.to_ambient(i, &w[i * k..(i + 1) * k]);
            let mut y = self.geom.tangent[i];
            y.iter_mut().for_each(|t| *t *= c(i));
            out.extend(self.geom.normal_components(i, &self.curvature[i].apply(&va, &y, &wa)));
        }
        out
    }

    /// `Lap V + g(H, V) H + (R(V, X) X)^perp / h`.
    pub fn first_variation_h(&self, v: &[f64]) -> Vec<f64> {
        let k = self.k();
        let hv = &self.geom.mean_curvature;
        let mut out = self.laplacian(v);
        let mut rxx = Vec::with_capacity(v.len());
        for i in 0..self.n() {
            let va = self.geom.to_ambient(i, &v[i * k..(i + 1) * k]);
            let x = &self.geom.tangent[i];
            let r = self.curvature[i].apply(&va, x, x);
            rxx.extend(self.geom.normal_components(i, &r).into_iter().map(|c| c / self.geom.h[i]));
        }
        for i in 0..self.n() {
            let s = dot_at(hv, v, i, k);
            for a in 0..k {
                out[i * k + a] += s * hv[i * k + a] + rxx[i * k + a];
            }
        }
        out
    }

    /// `g(W, H) nabla_x V - g(W, nabla_x V) H + (R(V, X) W)^perp`.
    pub fn gradient_commutator(&self, v: &[f64], w: &[f64]) -> Vec<f64> {
        let k = self.k();
        let hv = &self.geom.mean_curvature;
        let dv = self.conn.covariant_derivative(&self.geom, v);
        let mut out = self.curvature_term(v, w, |_| 1.0);
        for i in 0..self.n() {
            let (wh, wdv) = (dot_at(w, hv, i, k), dot_at(w, &dv, i, k));
            for a in 0..k {
                out[i * k + a] += wh * dv[i * k + a] - wdv * hv[i * k + a];
            }
        }
        out
    }

    /// `Lambda(V, W)` with unit tangent `T` and `D = nabla_T`:
    /// `2 g(V, H) D D W + D(g(W, H) D V - g(W, D V) H + (R(V, T) W)^perp)
    ///  + g(D W, H) D V - g(D W, D V) H + (R(V, T) D W)^perp
    ///  + (g(D H, V) + g(H, D V)) D W`.
    pub fn laplacian_commutator(&self, v: &[f64], w: &[f64]) -> Vec<f64> {
        let k = self.k();
        let nn = self.n();
        let hv = &self.geom.mean_curvature;
        let unit = |i: usize| 1.0 / self.geom.density[i];
        let dv = self.d(v);
        let dw = self.d(w);
        let ddw = self.d(&dw);
        let dh = self.d(hv);

        let mut inner = self.curvature_term(v, w, unit);
        for i in 0..nn {
            let (wh, wdv) = (dot_at(w, hv, i, k), dot_at(w, &dv, i, k));
            for a in 0..k {
                inner[i * k + a] += wh * dv[i * k + a] - wdv * hv[i * k + a];
            }
        }
        let mut out = self.d(&inner);
        let rdw = self.curvature_term(v, &dw, unit);
        for i in 0..nn {
            let vh = dot_at(v, hv, i, k);
            let (dwh, dwdv) = (dot_at(&dw, hv, i, k), dot_at(&dw, &dv, i, k));
            let dvh = dot_at(&dh, v, i, k) + dot_at(hv, &dv, i, k);
            for a in 0..k {
                let j = i * k + a;
                out[j] += 2.0 * vh * ddw[j] + dwh * dv[j] - dwdv * hv[j] + rdw[j] + dvh * dw[j];
            }
        }
        out
    }
}

fn dot_at(a: &[f64], b: &[f64], i: usize, k: usize) -> f64 {
    (0..k).map(|c| a[i * k + c] * b[i * k + c]).sum()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// A normal section extended to the family by fixed coordinate components
/// `W0 + s Z`, re-projected onto each member's normal bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Extension {
    pub base: Vec<Vec4>,
    pub drift: Option<Vec<Vec4>>,
}

impl Extension {
    /// Constant coordinate components of a normal section of the base.
    pub fn of_section(base: &CurveData, w: &[f64]) -> Self {
        Extension {
            base: base.ambient(w),
            drift: None,
        }
    }

    /// `(d_{z^a})^perp` on every member, i.e. the coordinate normal `N_a`.
    pub fn coordinate_normal(nn: usize, a: usize) -> Self {
        let mut e = [0.0; MAX_DIM];
        e[a] = 1.0;
        Extension {
            base: vec![e; nn],
            drift: None,
        }
    }

    pub fn with_drift(mut self, z: Vec<Vec4>) -> Self {
        self.drift = Some(z);
        self
    }

    fn at(&self, s: f64) -> Vec<Vec4> {
        match &self.drift {
            None => self.base.clone(),
            Some(z) => self
                .base
                .iter()
                .zip(z)
                .map(|(w, d)| {
                    let mut o = *w;
                    axpy(s, d, &mut o);
                    o
                })
                .collect(),
        }
    }

    /// Frame components of the extension on a member.
    pub fn components(&self, member: &CurveData, s: f64) -> Vec<f64> {
        member.geom.sample_components(&self.at(s))
    }
}

/// Centered differences at both ladder steps, with the sup norm of the
/// differentiated section.
#[derive(Clone, Debug)]
pub struct FdDerivative {
    pub values: [Vec<f64>; 2],
    pub magnitude: f64,
}

/// A normal variation of a curve.
#[derive(Clone, Debug)]
pub struct VariationFamily {
    pub base_curve: Curve,
    /// Frame components of `V` on the base.
    pub velocity: Vec<f64>,
    /// Node-major coordinate components of `V`, `k + 1` per node.
    pub velocity_coords: Vec<f64>,
    pub base: CurveData,
    pub config: VariationConfig,
}

impl VariationFamily {
    pub fn new(m: &MetricField, leaf: &GraphLeaf, velocity: Vec<f64>, config: VariationConfig) -> Result<Self> {
        let base_curve = Curve::from_leaf(leaf);
        let base = CurveData::new(m, &base_curve)?;
        let k = base.k();
        if velocity.len() != k * base.n() {
            return Err(QpmcError::InvalidInput(format!(
                "velocity has {} values, expected {}",
                velocity.len(),
                k * base.n()
            )));
        }
        if !config.steps.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(QpmcError::param("steps", "must be positive"));
        }
        let n = k + 1;
        let mut velocity_coords = Vec::with_capacity(base.n() * n);
        for y in base.ambient(&velocity) {
            velocity_coords.extend_from_slice(&y[..n]);
        }
        let fam = VariationFamily {
            base_curve,
            velocity,
            velocity_coords,
            base,
            config,
        };
        let t = fam.tangential_residual();
        if t > 1e-10 {
            return Err(QpmcError::InvalidInput(format!(
                "velocity is not normal (tangential part {t:e})"
            )));
        }
        Ok(fam)
    }

    /// Seeded smooth velocity with Fourier modes up to 2 and sup norm at
    /// most `amplitude`.
    pub fn seeded(m: &MetricField, leaf: &GraphLeaf, seed: u64, amplitude: f64, config: VariationConfig) -> Result<Self> {
        let v = random_section(leaf.k(), leaf.grid, seed, 0, amplitude);
        VariationFamily::new(m, leaf, v, config)
    }

    /// Largest `|g(V, X)| / sqrt(h)`.
    pub fn tangential_residual(&self) -> f64 {
        let g = &self.base.geom;
        let n = g.k + 1;
        (0..g.n())
            .map(|i| {
                let mut y = [0.0; MAX_DIM];
                y[..n].copy_from_slice(&self.velocity_coords[i * n..(i + 1) * n]);
                (g.metric[i].form(&y, &g.tangent[i]) / g.density[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn k(&self) -> usize {
        self.base.k()
    }

    pub fn member(&self, m: &MetricField, s: f64) -> Result<CurveData> {
        CurveData::new(m, &self.base_curve.displaced(&self.velocity_coords, s))
    }

    fn velocity_ambient(&self, i: usize) -> Vec4 {
        let n = self.k() + 1;
        let mut y = [0.0; MAX_DIM];
        y[..n].copy_from_slice(&self.velocity_coords[i * n..(i + 1) * n]);
        y
    }

    /// `(nabla_s Y)^perp` at `s = 0` from samples at `+s` and `-s`.
    fn transported_difference(&self, plus: &[Vec4], minus: &[Vec4], s: f64) -> Vec<f64> {
        let g = &self.base.geom;
        let mut out = Vec::with_capacity(g.n() * g.k);
        for i in 0..g.n() {
            let mut d = [0.0; MAX_DIM];
            axpy(0.5 / s, &plus[i], &mut d);
            axpy(-0.5 / s, &minus[i], &mut d);
            let mut mid = [0.0; MAX_DIM];
            axpy(0.5, &plus[i], &mut mid);
            axpy(0.5, &minus[i], &mut mid);
            axpy(1.0, &g.christoffel[i].contract(&self.velocity_ambient(i), &mid), &mut d);
            out.extend(g.normal_components(i, &d));
        }
        out
    }

    /// Finite-difference `nabla_s^perp` of a normal section defined on every
    /// member, at both ladder steps.
    pub fn fd_normal_derivative<F>(&self, m: &MetricField, section: F) -> Result<FdDerivative>
    where
        F: Fn(&CurveData, f64) -> Result<Vec<f64>> + Sync,
    {
        let signed: Vec<f64> = self
            .config
            .steps
            .iter()
            .flat_map(|&s| [s, -s])
            .collect();
        let samples: Vec<(Vec<Vec4>, f64)> = signed
            .par_iter()
            .map(|&s| {
                let mem = self.member(m, s)?;
                let v = section(&mem, s)?;
                Ok((mem.ambient(&v), sup(&v)))
            })
            .collect::<Result<_>>()?;
        let [s0, s1] = self.config.steps;
        Ok(FdDerivative {
            values: [
                self.transported_difference(&samples[0].0, &samples[1].0, s0),
                self.transported_difference(&samples[2].0, &samples[3].0, s1),
            ],
            magnitude: samples.iter().map(|x| x.1).fold(0.0, f64::max),
        })
    }

    /// `nabla_s^perp` at `s = 0` of an extension:
    /// `(Gamma(V, W0) + Z)^perp - g(W0, X) / h nabla_x V`.
    pub fn extension_derivative(&self, ext: &Extension) -> Vec<f64> {
        let g = &self.base.geom;
        let k = g.k;
        let dv = self.base.conn.covariant_derivative(g, &self.velocity);
        let mut out = Vec::with_capacity(g.n() * k);
        for i in 0..g.n() {
            let w0 = &ext.base[i];
            let mut y = g.christoffel[i].contract(&self.velocity_ambient(i), w0);
            if let Some(z) = &ext.drift {
                axpy(1.0, &z[i], &mut y);
            }
            let c = g.metric[i].form(w0, &g.tangent[i]) / g.h[i];
            for (a, v) in g.normal_components(i, &y).into_iter().enumerate() {
                out.push(v - c * dv[i * k + a]);
            }
        }
        out
    }

    fn spectrum_and_q(&self, data: &CurveData) -> Result<(SpectralDecomposition, QProjector)> {
        let spec = leaf_spectrum(&data.geom)?.spectrum;
        let q = q_projector(&spec, self.config.rule, self.config.gap_tol)?;
        Ok((spec, q))
    }
}

/// Seeded trigonometric section with Fourier modes `0..=2`, scaled to sup
/// norm `amplitude`.
pub fn random_section(k: usize, grid: FiberGrid, seed: u64, stream: u64, amplitude: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let coef: Vec<f64> = (0..k * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut v = Vec::with_capacity(grid.n * k);
    for x in grid.nodes() {
        for a in 0..k {
            let c = &coef[a * 5..a * 5 + 5];
            v.push(c[0] + c[1] * x.cos() + c[2] * x.sin() + c[3] * (2.0 * x).cos() + c[4] * (2.0 * x).sin());
        }
    }
    let s = sup(&v).max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x *= amplitude / s);
    v
}

/// Drift field used for the second extension: `cos(x) d_{z^1} + sin(x) / 2 d_x`.
pub fn default_drift(base: &CurveData) -> Vec<Vec4> {
    let k = base.k();
    base.geom
        .points
        .iter()
        .map(|p| {
            let mut z = [0.0; MAX_DIM];
            z[0] = p[k].cos();
            z[k] = 0.5 * p[k].sin();
            z
        })
        .collect()
}

pub fn first_variation_h(m: &MetricField, fam: &VariationFamily) -> Result<FormulaCheckReport> {
    let analytic = fam.base.first_variation_h(&fam.velocity);
    let fd = fam.fd_normal_derivative(m, |mem, _| Ok(mem.geom.mean_curvature.clone()))?;
    let scale = sup(&fam.base.laplacian(&fam.velocity)).max(fd.magnitude);
    Ok(FormulaCheckReport::new(
        Formula::FirstVariationH,
        analytic,
        fd.values,
        fam.config.steps,
        scale,
        None,
    ))
}

/// `nabla_s^perp nabla_x W - nabla_x nabla_s^perp W` for the
/// constant-coordinate extension of `w`.
pub fn gradient_commutator(m: &MetricField, fam: &VariationFamily, w: &[f64]) -> Result<FormulaCheckReport> {
    let ext = Extension::of_section(&fam.base, w);
    let analytic = fam.base.gradient_commutator(&fam.velocity, w);
    let outer = fam.fd_normal_derivative(m, |mem, s| {
        let ws = ext.components(mem, s);
        Ok(mem.conn.covariant_derivative(&mem.geom, &ws))
    })?;
    let inner = fam.fd_normal_derivative(m, |mem, s| Ok(ext.components(mem, s)))?;
    let g = &fam.base;
    let fd = [0, 1].map(|j| {
        let d = g.conn.covariant_derivative(&g.geom, &inner.values[j]);
        outer.values[j].iter().zip(d).map(|(a, b)| a - b).collect::<Vec<f64>>()
    });
    let scale = sup(&outer.values[1]).max(outer.magnitude);
    Ok(FormulaCheckReport::new(
        Formula::GradientCommutator,
        analytic,
        fd,
        fam.config.steps,
        scale,
        None,
    ))
}

fn commutator_fd(m: &MetricField, fam: &VariationFamily, ext: &Extension) -> Result<([Vec<f64>; 2], f64)> {
    let outer = fam.fd_normal_derivative(m, |mem, s| Ok(mem.laplacian(&ext.components(mem, s))))?;
    let inner = fam.fd_normal_derivative(m, |mem, s| Ok(ext.components(mem, s)))?;
    let fd = [0, 1].map(|j| {
        let l = fam.base.laplacian(&inner.values[j]);
        outer.values[j].iter().zip(l).map(|(a, b)| a - b).collect::<Vec<f64>>()
    });
    Ok((fd, sup(&outer.values[1]).max(outer.magnitude)))
}

/// `Lambda(V, W) = nabla_s^perp Lap W - Lap nabla_s^perp W`, also evaluated
/// through a second extension of `w` to check independence of the choice.
pub fn lambda_commutator(m: &MetricField, fam: &VariationFamily, w: &[f64]) -> Result<FormulaCheckReport> {
    let analytic = fam.base.laplacian_commutator(&fam.velocity, w);
    let ext = Extension::of_section(&fam.base, w);
    let drifted = ext.clone().with_drift(default_drift(&fam.base));
    let ((fd, scale), (fd2, scale2)) = (commutator_fd(m, fam, &ext)?, commutator_fd(m, fam, &drifted)?);
    let s = scale.max(scale2).max(sup(&analytic)).max(f64::MIN_POSITIVE);
    let defect = fd[1].iter().zip(&fd2[1]).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / s;
    Ok(FormulaCheckReport::new(
        Formula::LaplacianCommutator,
        analytic,
        fd,
        fam.config.steps,
        scale,
        Some(defect),
    ))
}

/// The eigen-sums of the projector variation at the base leaf:
/// `sum_{p>k} sum_{m<=k} <Lambda(V, U_m), U_p> / (lambda_p - lambda_m)
///  (<a, U_p> U_m + <b, U_m> U_p)`.
fn projector_sums(fam: &VariationFamily, spec: &SpectralDecomposition, rank: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let k = fam.k();
    let w = &spec.weights;
    let mut out = vec![0.0; a.len()];
    for mi in 0..rank {
        let um = &spec.vectors[mi];
        let lam = fam.base.laplacian_commutator(&fam.velocity, um);
        let bm = weighted_inner(w, k, b, um);
        let mut coef_m = 0.0;
        for p in rank..spec.vectors.len() {
            let up = &spec.vectors[p];
            let c = weighted_inner(w, k, &lam, up) / (spec.eigenvalues[p] - spec.eigenvalues[mi]);
            coef_m += c * weighted_inner(w, k, a, up);
            let cp = c * bm;
            for (o, x) in out.iter_mut().zip(up) {
                *o += cp * x;
            }
        }
        for (o, x) in out.iter_mut().zip(um) {
            *o += coef_m * x;
        }
    }
    out
}

/// Analytic `nabla_s^perp Q(W)` at the base for an extension `ext`.
pub fn q_variation_analytic(fam: &VariationFamily, ext: &Extension) -> Result<Vec<f64>> {
    let k = fam.k();
    let (spec, q) = fam.spectrum_and_q(&fam.base)?;
    let w0 = ext.components(&fam.base, 0.0);
    let qw = q.apply(&w0);
    let pw = q.complement(&w0);
    let mut out = q.apply(&fam.extension_derivative(ext));
    let sums = projector_sums(fam, &spec, q.rank, &pw, &qw);
    let hv = &fam.base.geom.mean_curvature;
    let pw_ref = &pw;
    let weighted: Vec<f64> = (0..fam.base.n())
        .flat_map(|i| {
            let c = dot_at(hv, &fam.velocity, i, k);
            (0..k).map(move |a| c * pw_ref[i * k + a])
        })
        .collect();
    let last = q.apply(&weighted);
    for ((o, s), l) in out.iter_mut().zip(sums).zip(last) {
        *o += s - l;
    }
    Ok(out)
}

fn q_variation_ext(m: &MetricField, fam: &VariationFamily, ext: &Extension) -> Result<FormulaCheckReport> {
    let analytic = q_variation_analytic(fam, ext)?;
    let fd = fam.fd_normal_derivative(m, |mem, s| {
        let (_, q) = fam.spectrum_and_q(mem)?;
        Ok(q.apply(&ext.components(mem, s)))
    })?;
    let (_, q) = fam.spectrum_and_q(&fam.base)?;
    let scale = sup(&q.apply(&fam.extension_derivative(ext))).max(fd.magnitude);
    Ok(FormulaCheckReport::new(
        Formula::QVariation,
        analytic,
        fd.values,
        fam.config.steps,
        scale,
        None,
    ))
}

/// `nabla_s^perp Q(W)` for the constant-coordinate extension of `w`.
pub fn q_variation(m: &MetricField, fam: &VariationFamily, w: &[f64]) -> Result<FormulaCheckReport> {
    q_variation_ext(m, fam, &Extension::of_section(&fam.base, w))
}

/// `nabla_s^perp E_a` for the quasi-parallel frame `E_a = Q(N_a)`.
pub fn frame_variation(m: &MetricField, fam: &VariationFamily, a: usize) -> Result<FormulaCheckReport> {
    if a >= fam.k() {
        return Err(QpmcError::param("a", "exceeds the codimension"));
    }
    q_variation_ext(m, fam, &Extension::coordinate_normal(fam.base.n(), a))
}

/// `nabla_s^perp (1 - Q)(H)` on a QPMC leaf:
/// `(1 - Q)(first variation of H) - sum <Q H, U_m> <Lambda(V, U_m), U_p> / (lambda_p - lambda_m) U_p`.
pub fn qpmc_variation(m: &MetricField, fam: &VariationFamily) -> Result<FormulaCheckReport> {
    let k = fam.k();
    let (spec, q) = fam.spectrum_and_q(&fam.base)?;
    let hv = &fam.base.geom.mean_curvature;
    let defect = weighted_norm(&spec.weights, k, &q.complement(hv));
    if defect > QPMC_TOL {
        return Err(QpmcError::NotQpmc { residual: defect });
    }
    let l1 = fam.base.first_variation_h(&fam.velocity);
    let zero = vec![0.0; hv.len()];
    let sums = projector_sums(fam, &spec, q.rank, &zero, &q.apply(hv));
    let analytic: Vec<f64> = q.complement(&l1).iter().zip(sums).map(|(a, b)| a - b).collect();
    let fd = fam.fd_normal_derivative(m, |mem, _| {
        let (_, qs) = fam.spectrum_and_q(mem)?;
        Ok(qs.complement(&mem.geom.mean_curvature))
    })?;
    let scale = sup(&fam.base.laplacian(&fam.velocity)).max(fd.magnitude);
    Ok(FormulaCheckReport::new(
        Formula::QpmcVariation,
        analytic,
        fd.values,
        fam.config.steps,
        scale,
        None,
    ))
}

/// Runs the selected formulas on one family with a seeded section `W`.
pub fn check_formulas(
    m: &MetricField,
    fam: &VariationFamily,
    formulas: &[Formula],
    seed: u64,
) -> Result<Vec<FormulaCheckReport>> {
    let w = random_section(fam.k(), fam.base.geom.grid, seed, 1, 1.0);
    formulas
        .par_iter()
        .map(|f| match f {
            Formula::FirstVariationH => first_variation_h(m, fam),
            Formula::GradientCommutator => gradient_commutator(m, fam, &w),
            Formula::LaplacianCommutator => lambda_commutator(m, fam, &w),
            Formula::QVariation => q_variation(m, fam, &w),
            Formula::QpmcVariation => qpmc_variation(m, fam),
        })
        .collect()
}
