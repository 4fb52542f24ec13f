//! The QPMC residual `J` and the mean-zero Newton solve for graph leaves.

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QpmcError, Result};
use crate::geometry::{compute_geometry, NormalGeometry};
use crate::grid::{self, FiberGrid};
use crate::leaf::GraphLeaf;
use crate::metric::MetricField;
use crate::spectrum::{
    leaf_spectrum, q_projector, quasi_parallel_frame, CutoffRule, GapReport, LeafSpectrum,
    QProjector, DEFAULT_GAP_TOL,
};

pub const SOLUTION_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// The frozen circle Laplacian.
    #[default]
    LaplacianPreconditioner,
    /// Dense finite-difference Jacobian on the mean-zero subspace.
    FdJacobian,
}

impl std::str::FromStr for JacobianMode {
    type Err = QpmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplacian_preconditioner" | "laplacian" => Ok(JacobianMode::LaplacianPreconditioner),
            "fd_jacobian" | "fd" => Ok(JacobianMode::FdJacobian),
            _ => Err(QpmcError::param(
                "jacobian",
                format!("expected laplacian_preconditioner or fd_jacobian, got `{s}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol_residual: f64,
    pub max_iters: usize,
    /// Initial step length of every Newton step; halved on residual
    /// increase down to `MIN_DAMPING`.
    pub damping: f64,
    pub jacobian: JacobianMode,
    pub fd_jacobian_step: f64,
    pub rule: CutoffRule,
    pub gap_tol: f64,
}

pub const MIN_DAMPING: f64 = 1.0 / 64.0;

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_residual: 1e-10,
            max_iters: 50,
            damping: 1.0,
            jacobian: JacobianMode::LaplacianPreconditioner,
            fd_jacobian_step: 1e-6,
            rule: CutoffRule::Threshold,
            gap_tol: DEFAULT_GAP_TOL,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(QpmcError::param(name, "must be positive"))
            }
        };
        pos("tol_residual", self.tol_residual)?;
        pos("fd_jacobian_step", self.fd_jacobian_step)?;
        pos("gap_tol", self.gap_tol)?;
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(QpmcError::param("damping", "must lie in (0, 1]"));
        }
        if self.max_iters == 0 {
            return Err(QpmcError::param("max_iters", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Node-major `J^a_i`.
    pub j: Vec<f64>,
    /// L2 norm on the circle, `(sum_i |J_i|^2 2pi/N)^(1/2)`.
    pub l2: f64,
    pub sup: f64,
    pub means: Vec<f64>,
    pub rank_q: usize,
    pub gap: GapReport,
    /// `||(1 - Q) H||` in the mass-weighted norm.
    pub qpmc_defect: f64,
}

/// Residual together with the intermediate objects it was built from.
pub struct ResidualParts {
    pub report: ResidualReport,
    pub geometry: NormalGeometry,
    pub spectrum: LeafSpectrum,
    pub projector: QProjector,
    pub frame: Vec<Vec<f64>>,
}

pub fn residual_parts(m: &MetricField, leaf: &GraphLeaf, cfg: &SolverConfig) -> Result<ResidualParts> {
    let geometry = compute_geometry(m, leaf)?;
    let spectrum = leaf_spectrum(&geometry)?;
    let projector = q_projector(&spectrum.spectrum, cfg.rule, cfg.gap_tol)?;
    let frame = quasi_parallel_frame(&geometry, &projector)?;
    let k = geometry.k;
    let nn = geometry.n();
    let r = projector.complement(&geometry.mean_curvature);
    let mut j = vec![0.0; nn * k];
    for i in 0..nn {
        for a in 0..k {
            let mut s = 0.0;
            for c in 0..k {
                s += r[i * k + c] * frame[a][i * k + c];
            }
            j[i * k + a] = s * geometry.density[i];
        }
    }
    let dx = geometry.grid.dx();
    let l2 = (j.iter().map(|v| v * v).sum::<f64>() * dx).sqrt();
    let report = ResidualReport {
        sup: grid::sup_norm(&j),
        means: grid::means(&j, k),
        l2,
        rank_q: projector.rank,
        gap: spectrum.spectrum.gap(),
        qpmc_defect: spectrum.spectrum.norm(&r),
        j,
    };
    Ok(ResidualParts {
        report,
        geometry,
        spectrum,
        projector,
        frame,
    })
}

pub fn residual(m: &MetricField, leaf: &GraphLeaf, cfg: &SolverConfig) -> Result<ResidualReport> {
    Ok(residual_parts(m, leaf, cfg)?.report)
}

/// Mean-zero `phi` with `phi'' = J` componentwise.
pub fn linearized_update(j: &[f64], k: usize, grid: FiberGrid) -> Vec<f64> {
    grid.ops().inverse_laplacian(j, k)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeafSolution {
    pub schema_version: u32,
    pub z: Vec<f64>,
    /// The solved leaf `z + u` with mean-zero `u`.
    pub leaf: GraphLeaf,
    /// `||J||` before each step, ending with the accepted residual.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub sup_norm: f64,
    /// `sup |u| + sup |u'|`.
    pub c1_norm: f64,
    pub gap: GapReport,
    pub rank_q: usize,
}

impl LeafSolution {
    pub fn residual(&self) -> f64 {
        *self.residual_history.last().unwrap()
    }
}

fn mean_zero_basis_step(u: &[f64], k: usize, idx: usize, h: f64) -> Vec<f64> {
    // b = e_(i,a) - e_(0,a), independent for i = 1..N-1
    let mut out = u.to_vec();
    let a = idx % k;
    out[idx] += h;
    out[a] -= h;
    out
}

fn fd_newton_step(
    m: &MetricField,
    leaf: &GraphLeaf,
    j0: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let k = leaf.k();
    let dim = leaf.u.len();
    let h = cfg.fd_jacobian_step;
    let cols: Vec<Result<Vec<f64>>> = (k..dim)
        .into_par_iter()
        .map(|idx| {
            let mut l = leaf.clone();
            l.u = mean_zero_basis_step(&leaf.u, k, idx, h);
            let r = residual(m, &l, cfg)?;
            Ok(r.j.iter().zip(j0).map(|(a, b)| (a - b) / h).collect())
        })
        .collect();
    let mut jac = Mat::<f64>::zeros(dim, dim - k);
    for (c, col) in cols.into_iter().enumerate() {
        let col = col?;
        for r in 0..dim {
            jac[(r, c)] = col[r];
        }
    }
    let rhs = Mat::<f64>::from_fn(dim, 1, |r, _| j0[r]);
    let coef = jac.qr().solve_lstsq(&rhs);
    let mut step = vec![0.0; dim];
    for c in 0..dim - k {
        let idx = c + k;
        step[idx] += coef[(c, 0)];
        step[idx % k] -= coef[(c, 0)];
    }
    Ok(step)
}

/// Damped Newton iteration for the QPMC leaf over `z`.
///
/// The iteration runs on the translated metric `m(. + z, .)` with the leaf
/// over the origin and returns the leaf over `z` in original coordinates.
pub fn newton_solve(
    m: &MetricField,
    z: &[f64],
    grid: FiberGrid,
    cfg: &SolverConfig,
    u_init: Option<&[f64]>,
) -> Result<LeafSolution> {
    cfg.validate()?;
    let k = m.k();
    if z.len() != k {
        return Err(QpmcError::InvalidInput(format!(
            "z has {} components, metric has k = {k}",
            z.len()
        )));
    }
    let mt = m.translate_pullback(z);
    let mut leaf = GraphLeaf::slice(vec![0.0; k], grid);
    if let Some(u0) = u_init {
        if u0.len() != leaf.u.len() {
            return Err(QpmcError::InvalidInput("initial guess has the wrong size".into()));
        }
        leaf.u.copy_from_slice(u0);
        grid::subtract_means(&mut leaf.u, k);
    }
    let mut rep = residual(&mt, &leaf, cfg)?;
    let mut history = vec![rep.l2];
    let mut iterations = 0;
    let finish = |leaf: &GraphLeaf, rep: &ResidualReport, history: Vec<f64>, iterations| {
        let out = GraphLeaf {
            z: z.to_vec(),
            u: leaf.u.clone(),
            grid,
        };
        LeafSolution {
            schema_version: SOLUTION_SCHEMA,
            z: z.to_vec(),
            sup_norm: out.sup_norm(),
            c1_norm: out.sup_norm() + out.sup_gradient(),
            leaf: out,
            residual_history: history,
            iterations,
            gap: rep.gap.clone(),
            rank_q: rep.rank_q,
        }
    };
    let failure = |leaf: &GraphLeaf| {
        Box::new(GraphLeaf {
            z: z.to_vec(),
            u: leaf.u.clone(),
            grid,
        })
    };
    while rep.l2 > cfg.tol_residual {
        if iterations == cfg.max_iters {
            return Err(QpmcError::MaxIterations {
                iterations,
                residual: rep.l2,
                iterate: failure(&leaf),
            });
        }
        let step = match cfg.jacobian {
            JacobianMode::LaplacianPreconditioner => linearized_update(&rep.j, k, grid),
            JacobianMode::FdJacobian => fd_newton_step(&mt, &leaf, &rep.j, cfg)?,
        };
        let mut t = cfg.damping;
        loop {
            let mut trial = leaf.clone();
            for (u, s) in trial.u.iter_mut().zip(&step) {
                *u -= t * s;
            }
            grid::subtract_means(&mut trial.u, k);
            match residual(&mt, &trial, cfg) {
                Ok(r) if r.l2 < rep.l2 => {
                    leaf = trial;
                    rep = r;
                    break;
                }
                _ => {
                    t *= 0.5;
                    if t < MIN_DAMPING {
                        return Err(QpmcError::Divergence {
                            iterations,
                            residual: rep.l2,
                            iterate: failure(&leaf),
                        });
                    }
                }
            }
        }
        iterations += 1;
        history.push(rep.l2);
    }
    Ok(finish(&leaf, &rep, history, iterations))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeTrial {
    pub start_sup: f64,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
    /// Sup distance to the solution from the zero start.
    pub distance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub radius: f64,
    pub seed: u64,
    pub trials: Vec<ProbeTrial>,
    /// Largest pairwise sup distance among converged solutions, including
    /// the solution from zero.
    pub spread: f64,
    pub failures: usize,
}

/// Seeded random mean-zero trigonometric polynomial with sup norm in
/// `[radius / 2, radius]`.
pub fn random_start(k: usize, grid: FiberGrid, radius: f64, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let modes = 4;
    let mut coeffs = Vec::with_capacity(k * modes * 2);
    for _ in 0..k * modes * 2 {
        coeffs.push(rng.random_range(-1.0..1.0));
    }
    let target = radius * rng.random_range(0.5..1.0);
    let mut u = vec![0.0; grid.n * k];
    for (i, x) in grid.nodes().into_iter().enumerate() {
        for a in 0..k {
            let mut s = 0.0;
            for m in 0..modes {
                let mf = (m + 1) as f64;
                let c = &coeffs[(a * modes + m) * 2..];
                s += (c[0] * (mf * x).cos() + c[1] * (mf * x).sin()) / mf;
            }
            u[i * k + a] = s;
        }
    }
    grid::subtract_means(&mut u, k);
    let sup = grid::sup_norm(&u);
    u.iter_mut().for_each(|v| *v *= target / sup);
    u
}

pub fn uniqueness_probe(
    m: &MetricField,
    z: &[f64],
    grid: FiberGrid,
    cfg: &SolverConfig,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<UniquenessReport> {
    let base = newton_solve(m, z, grid, cfg, None)?;
    let k = m.k();
    let outcomes: Vec<(ProbeTrial, Option<Vec<f64>>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let start = random_start(k, grid, radius, seed, t as u64);
            let start_sup = grid::sup_norm(&start);
            match newton_solve(m, z, grid, cfg, Some(&start)) {
                Ok(sol) => {
                    let d = sol
                        .leaf
                        .u
                        .iter()
                        .zip(&base.leaf.u)
                        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                    (
                        ProbeTrial {
                            start_sup,
                            converged: true,
                            iterations: sol.iterations,
                            error: None,
                            distance: d,
                        },
                        Some(sol.leaf.u),
                    )
                }
                Err(e) => (
                    ProbeTrial {
                        start_sup,
                        converged: false,
                        iterations: 0,
                        error: Some(e.to_string()),
                        distance: f64::NAN,
                    },
                    None,
                ),
            }
        })
        .collect();
    let mut sols = vec![base.leaf.u.clone()];
    let mut report_trials = Vec::with_capacity(trials);
    for (t, s) in outcomes {
        report_trials.push(t);
        sols.extend(s);
    }
    let mut spread = 0.0f64;
    for a in 0..sols.len() {
        for b in a + 1..sols.len() {
            let d = sols[a]
                .iter()
                .zip(&sols[b])
                .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
            spread = spread.max(d);
        }
    }
    let failures = report_trials.iter().filter(|t| !t.converged).count();
    Ok(UniquenessReport {
        radius,
        seed,
        trials: report_trials,
        spread,
        failures,
    })
}
