use proptest::prelude::*;

use qpmc_core::diagnostics::{delta_vertical_report, graph_gradient_bound};
use qpmc_core::solver::{newton_solve, residual, JacobianMode, LeafSolution, SolverConfig};
use qpmc_core::spectrum::{leaf_spectrum, q_projector};
use qpmc_core::variation::random_section;
use qpmc_core::{compute_geometry, CutoffRule, DiffMode, FiberGrid, GraphLeaf, MetricField};

fn grid(n: usize) -> FiberGrid {
    FiberGrid::new(n, DiffMode::Trig).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn smooth_leaf(z: Vec<f64>, g: FiberGrid, seed: u64, amp: f64) -> GraphLeaf {
    let k = z.len();
    GraphLeaf::new(z, random_section(k, g, seed, 7, amp), g)
        .map(|l| l.normalized())
        .unwrap()
}

const CORPUS: [&str; 4] = [
    "product:k=2",
    "bump:eps=0.01,seed=7,k=2",
    "twisted:alpha=0.2",
    "twisted:alpha=0.2+bump:eps=0.01,seed=7,k=2",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn residual_components_are_mean_zero(seed in 0u64..10_000, which in 0usize..4, z1 in -0.5f64..0.5) {
        let m = MetricField::parse(CORPUS[which]).unwrap();
        let leaf = smooth_leaf(vec![z1, 0.1], grid(64), seed, 0.05);
        let r = residual(&m, &leaf, &SolverConfig::default()).unwrap();
        prop_assert!(r.means.iter().all(|v| v.abs() < 1e-12), "{:?}", r.means);
    }

    #[test]
    fn q_is_an_orthogonal_projector(seed in 0u64..10_000, which in 0usize..4) {
        let m = MetricField::parse(CORPUS[which]).unwrap();
        let leaf = smooth_leaf(vec![0.0, 0.0], grid(64), seed, 0.03);
        let geom = compute_geometry(&m, &leaf).unwrap();
        let spec = leaf_spectrum(&geom).unwrap().spectrum;
        let q = q_projector(&spec, CutoffRule::Threshold, 1e-6).unwrap();
        prop_assert_eq!(q.rank, 2);
        let v = random_section(2, leaf.grid, seed, 1, 1.0);
        let w = random_section(2, leaf.grid, seed, 2, 1.0);
        let qv = q.apply(&v);
        prop_assert!(max_diff(&q.apply(&qv), &qv) < 1e-10);
        let lhs = spec.inner(&qv, &w);
        let rhs = spec.inner(&v, &q.apply(&w));
        prop_assert!((lhs - rhs).abs() < 1e-10);
        // images of Q and 1 - Q are orthogonal
        prop_assert!(spec.inner(&qv, &q.complement(&w)).abs() < 1e-10);
    }

    #[test]
    fn spectrum_is_psd_with_small_kernel(seed in 0u64..10_000, which in 0usize..4) {
        let m = MetricField::parse(CORPUS[which]).unwrap();
        let leaf = smooth_leaf(vec![0.2, -0.3], grid(64), seed, 0.03);
        let ev = leaf_spectrum(&compute_geometry(&m, &leaf).unwrap()).unwrap().spectrum.eigenvalues;
        prop_assert!(ev[0] >= -1e-10);
        prop_assert!(ev.iter().filter(|l| **l < 1e-8).count() <= 2);
    }

    #[test]
    fn spectrum_is_invariant_under_fiber_rotation(seed in 0u64..10_000, shift in 1usize..64) {
        let m = MetricField::product(2).unwrap();
        let g = grid(64);
        let leaf = smooth_leaf(vec![0.0, 0.0], g, seed, 0.2);
        let mut rotated = leaf.clone();
        rotated.u.rotate_left(2 * shift);
        let ev = |l: &GraphLeaf| leaf_spectrum(&compute_geometry(&m, l).unwrap()).unwrap().spectrum.eigenvalues;
        let (a, b) = (ev(&leaf), ev(&rotated));
        prop_assert!(max_diff(&a[..12], &b[..12]) < 1e-10);
    }

    #[test]
    fn translation_is_a_group_action(z1 in -2.0f64..2.0, z2 in -2.0f64..2.0, w1 in -2.0f64..2.0, w2 in -2.0f64..2.0, x in 0.0f64..std::f64::consts::TAU) {
        let m = MetricField::parse("twisted:alpha=0.2+bump:eps=0.01,seed=7,k=2").unwrap();
        let twice = m.translate_pullback(&[z1, z2]).translate_pullback(&[w1, w2]);
        let once = m.translate_pullback(&[z1 + w1, z2 + w2]);
        let (a, b) = (twice.eval(&[0.1, -0.2, x]).unwrap(), once.eval(&[0.1, -0.2, x]).unwrap());
        for i in 0..3 {
            prop_assert!(max_diff(&a.a[i][..3], &b.a[i][..3]) < 1e-13);
        }
    }
}

#[test]
fn solve_is_translation_equivariant() {
    let m = MetricField::parse("bump:eps=0.01,seed=7,k=2").unwrap();
    let cfg = SolverConfig::default();
    let z = [0.3, -0.2];
    let direct = newton_solve(&m, &z, grid(64), &cfg, None).unwrap();
    let moved = newton_solve(&m.translate_pullback(&z), &[0.0, 0.0], grid(64), &cfg, None).unwrap();
    assert!(max_diff(&direct.leaf.u, &moved.leaf.u) < 1e-10);
}

#[test]
fn newton_iterates_stay_mean_zero_and_reload() {
    let m = MetricField::parse("twisted:alpha=0.2+bump:eps=0.01,seed=7,k=2").unwrap();
    let cfg = SolverConfig::default();
    let s = newton_solve(&m, &[0.0, 0.0], grid(128), &cfg, None).unwrap();
    assert!(s.leaf.means().iter().all(|v| v.abs() < 1e-12));
    let back: LeafSolution = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back.leaf.u, s.leaf.u);
    assert!(residual(&m, &back.leaf, &cfg).unwrap().l2 <= cfg.tol_residual);
}

#[test]
fn fd_jacobian_converges_quadratically() {
    let m = MetricField::parse("bump:eps=0.05,seed=7,k=2").unwrap();
    let cfg = SolverConfig {
        jacobian: JacobianMode::FdJacobian,
        tol_residual: 1e-12,
        ..SolverConfig::default()
    };
    let s = newton_solve(&m, &[0.0, 0.0], grid(32), &cfg, None).unwrap();
    let h = &s.residual_history;
    for w in h.windows(2) {
        if w[0] < 1e-4 && w[1] > 1e-13 {
            assert!(w[1] / (w[0] * w[0]) <= 1e3, "{h:?}");
        }
    }
    let lap = newton_solve(&m, &[0.0, 0.0], grid(32), &SolverConfig::default(), None).unwrap();
    assert!(max_diff(&lap.leaf.u, &s.leaf.u) < 1e-9);
}

#[test]
fn size_diagnostics_scale_with_the_perturbation() {
    let cfg = SolverConfig::default();
    let mut scores = vec![];
    for eps in [1e-2, 5e-3] {
        let m = MetricField::parse(&format!("bump:eps={eps},seed=7,k=2")).unwrap();
        let s = newton_solve(&m, &[0.0, 0.0], grid(128), &cfg, None).unwrap();
        let d = delta_vertical_report(&m, &s.leaf, 1.0).unwrap();
        assert!(d.diameter_ok);
        scores.push(d.delta_score);
        let gb = graph_gradient_bound(&m, &s.leaf).unwrap();
        assert!(gb.constant < 10.0, "{}", gb.constant);
    }
    assert!(scores[1] < scores[0] && scores[0] < 1.0, "{scores:?}");
}

#[test]
fn twisted_leaf_has_no_parallel_sections() {
    let alpha: f64 = 0.2;
    let m = MetricField::parse("twisted:alpha=0.2").unwrap();
    let leaf = GraphLeaf::slice(vec![0.0, 0.0], grid(64));
    let geom = compute_geometry(&m, &leaf).unwrap();
    let ls = leaf_spectrum(&geom).unwrap();
    let nu = (alpha / std::f64::consts::TAU).powi(2);
    assert!(ls.spectrum.eigenvalues[0] >= nu / 2.0);
    let d = delta_vertical_report(&m, &leaf, 1.0).unwrap();
    assert!(d.sup_grad_a.is_finite());
}
