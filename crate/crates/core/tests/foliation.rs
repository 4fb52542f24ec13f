use qpmc_core::foliation::{
    center_of_mass_core, diffeo_check, leaf_through_point, sweep, Foliation, SweepBox, SweepConfig,
};
use qpmc_core::solver::newton_solve;
use qpmc_core::{CutoffRule, DiffMode, FiberGrid, MetricField, QpmcError};

fn grid(n: usize) -> FiberGrid {
    FiberGrid::new(n, DiffMode::Trig).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const BUMP: &str = "bump:eps=0.01,seed=7,k=2";

fn bump_sweep(n: usize, lo: f64, hi: f64) -> (MetricField, Foliation) {
    let m = MetricField::parse(BUMP).unwrap();
    let f = sweep(&m, &SweepBox::cube(lo, hi, 2).unwrap(), &SweepConfig::new(0.5, grid(n))).unwrap();
    (m, f)
}

#[test]
fn flat_foliation_is_exact() {
    let m = MetricField::product(2).unwrap();
    let f = sweep(&m, &SweepBox::cube(-1.0, 1.0, 2).unwrap(), &SweepConfig::new(0.25, grid(32))).unwrap();
    assert_eq!(f.leaves.len(), 81);
    assert_eq!(f.max_sup_norm(), 0.0);
    let d = diffeo_check(&f).unwrap();
    assert!(d.pass);
    assert!((d.margin - 0.25).abs() < 1e-15);
}

#[test]
fn warped_leaves_are_slices() {
    // beyond |z| ~ 0.88 the second eigenvalue of a warped slice drops
    // below the threshold cutoff, so this sweep selects by order
    let m = MetricField::parse("warped").unwrap();
    let mut cfg = SweepConfig::new(0.1, grid(64));
    cfg.solver.rule = CutoffRule::Order;
    let f = sweep(&m, &SweepBox::cube(-2.0, 2.0, 1).unwrap(), &cfg).unwrap();
    assert_eq!(f.leaves.len(), 41);
    assert!(f.failures.is_empty());
    assert!(f.max_sup_norm() < 1e-8);
    for s in center_of_mass_core(&m, &f).unwrap() {
        assert!((s.centroid[0] - s.z[0]).abs() < 1e-12);
    }
}

#[test]
fn bump_foliation_properties() {
    let (m, f) = bump_sweep(64, -2.0, 2.0);
    assert_eq!(f.leaves.len(), 81);
    assert!(f.failures.is_empty());
    let eps = 1e-2;
    assert!(f.max_sup_norm() <= 5.0 * eps, "{}", f.max_sup_norm());
    // far from the bump the metric is flat and the leaves are slices
    let far = f.leaf_at(&[0, 0]).unwrap();
    assert!(far.solution.sup_norm < 1e-6);

    let d = diffeo_check(&f).unwrap();
    assert!(d.pass && d.min_separation > 0.0);
    assert!(d.margin >= 0.5 * (1.0 - 5.0 * eps), "{}", d.margin);

    for s in center_of_mass_core(&m, &f).unwrap() {
        assert!(max_diff(&s.centroid[..2], &s.z) <= 5.0 * eps);
    }
}

#[test]
fn warm_and_cold_starts_agree() {
    let (m, f) = bump_sweep(64, -1.0, 1.0);
    for l in f.leaves.iter().filter(|l| l.warm_start.is_some()) {
        let cold = newton_solve(&m, &l.z, f.config.grid, &f.config.solver, None).unwrap();
        let d = max_diff(&cold.leaf.u, &l.solution.leaf.u);
        assert!(d <= 1e-9, "{:?}: {d:e}", l.index);
    }
}

#[test]
fn sweeps_are_deterministic() {
    let (_, a) = bump_sweep(32, -1.0, 1.0);
    let (_, b) = bump_sweep(32, -1.0, 1.0);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn overlapping_boxes_agree() {
    let (_, a) = bump_sweep(64, -1.0, 0.0);
    let (_, b) = bump_sweep(64, -0.5, 0.5);
    let mut shared = 0;
    for la in &a.leaves {
        if let Some(lb) = b.leaves.iter().find(|l| l.z == la.z) {
            shared += 1;
            assert!(max_diff(&la.solution.leaf.u, &lb.solution.leaf.u) <= 1e-9);
        }
    }
    assert_eq!(shared, 4);
}

#[test]
fn point_on_a_stored_leaf_finds_it() {
    let (m, f) = bump_sweep(64, -1.0, 1.0);
    let l = f.leaf_at(&[2, 2]).unwrap();
    let i = 5;
    let mut p = l.solution.leaf.position(i);
    p.push(f.config.grid.node(i));
    let found = leaf_through_point(&m, &f, &p).unwrap();
    assert!(max_diff(&found.z, &l.z) <= 1e-8);
    assert!(max_diff(&found.leaf.u, &l.solution.leaf.u) <= 1e-8);

    assert!(matches!(leaf_through_point(&m, &f, &[5.0, 0.0, 0.0]), Err(QpmcError::OutOfBox(_))));
}

#[test]
fn swapped_bump_leaves_fail() {
    let (_, mut f) = bump_sweep(32, -1.0, 1.0);
    assert!(diffeo_check(&f).unwrap().pass);
    let (i, j) = (
        f.leaves.iter().position(|l| l.index == [1, 1]).unwrap(),
        f.leaves.iter().position(|l| l.index == [1, 2]).unwrap(),
    );
    let (a, b) = (f.leaves[i].solution.clone(), f.leaves[j].solution.clone());
    f.leaves[i].solution = b;
    f.leaves[j].solution = a;
    assert!(!diffeo_check(&f).unwrap().pass);
}
