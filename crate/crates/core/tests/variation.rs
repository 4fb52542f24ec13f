use proptest::prelude::*;

use qpmc_core::solver::{newton_solve, SolverConfig};
use qpmc_core::variation::{
    check_formulas, first_variation_h, frame_variation, gradient_commutator, lambda_commutator,
    q_variation, qpmc_variation, random_section, CurveData, Extension, Formula, VariationConfig,
    VariationFamily,
};
use qpmc_core::{Curve, DiffMode, FiberGrid, GraphLeaf, MetricField};

fn grid(n: usize) -> FiberGrid {
    FiberGrid::new(n, DiffMode::Trig).unwrap()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

const EXHIBIT: &str = "twisted:alpha=0.2+bump:eps=0.01,center=0.5;0,width=1.5,seed=7,k=2";

fn solved(spec: &str, n: usize) -> (MetricField, GraphLeaf) {
    let m = MetricField::parse(spec).unwrap();
    let leaf = newton_solve(&m, &[0.0, 0.0], grid(n), &SolverConfig::default(), None)
        .unwrap()
        .leaf;
    (m, leaf)
}

/// `V = (cos 2x, sin x)` on the flat slice; frame components are the
/// coordinate components there.
fn flat_velocity(g: FiberGrid) -> Vec<f64> {
    g.nodes().into_iter().flat_map(|x| [(2.0 * x).cos(), x.sin()]).collect()
}

#[test]
fn flat_first_variation_is_second_derivative() {
    let g = grid(64);
    let m = MetricField::product(2).unwrap();
    let leaf = GraphLeaf::slice(vec![0.0, 0.0], g);
    let fam = VariationFamily::new(&m, &leaf, flat_velocity(g), VariationConfig::default()).unwrap();
    let want: Vec<f64> = g.nodes().into_iter().flat_map(|x| [-4.0 * (2.0 * x).cos(), -x.sin()]).collect();
    let got = fam.base.first_variation_h(&fam.velocity);
    let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-11, "{err:e}");

    let r = first_variation_h(&m, &fam).unwrap();
    assert!(r.pass, "{:?}", (r.errors, r.order));
    // the reduced QPMC variation is the same discrete operator
    let q = qpmc_variation(&m, &fam).unwrap();
    let lap = fam.base.laplacian(&fam.velocity);
    let diff = q.analytic.iter().zip(&lap).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff:e}");
    assert!(q.pass);
}

#[test]
fn flat_commutators_vanish() {
    let g = grid(64);
    let m = MetricField::product(2).unwrap();
    let leaf = GraphLeaf::slice(vec![0.4, -0.1], g);
    let fam = VariationFamily::seeded(&m, &leaf, 3, 1.0, VariationConfig::default()).unwrap();
    let w = random_section(2, g, 11, 1, 1.0);
    assert_eq!(sup(&fam.base.laplacian_commutator(&fam.velocity, &w)), 0.0);
    assert_eq!(sup(&fam.base.gradient_commutator(&fam.velocity, &w)), 0.0);
    for r in [lambda_commutator(&m, &fam, &w).unwrap(), q_variation(&m, &fam, &w).unwrap()] {
        assert!(r.pass);
        assert!(sup(&r.analytic) < 1e-12, "{:?}", r.formula);
    }
}

#[test]
fn warped_slice_passes_every_check() {
    let g = grid(128);
    let m = MetricField::parse("warped").unwrap();
    let leaf = GraphLeaf::slice(vec![0.5], g);
    let fam = VariationFamily::seeded(&m, &leaf, 3, 1.0, VariationConfig::default()).unwrap();
    for r in check_formulas(&m, &fam, &Formula::ALL, 11).unwrap() {
        assert!(r.pass, "{}: {:?} {:?}", r.formula.id(), r.errors, r.order);
        assert!(r.order.is_some_and(|o| o >= 1.8), "{}", r.formula.id());
    }
}

#[test]
fn exhibit_leaf_passes_every_check() {
    let (m, leaf) = solved(EXHIBIT, 128);
    let fam = VariationFamily::seeded(&m, &leaf, 5, 1.0, VariationConfig::default()).unwrap();
    let reports = check_formulas(&m, &fam, &Formula::ALL, 13).unwrap();
    for r in &reports {
        assert!(r.pass, "{}: {:?} {:?}", r.formula.id(), r.errors, r.order);
        assert!(r.rel_error <= 1e-5);
    }
    let lambda = reports.iter().find(|r| r.formula == Formula::LaplacianCommutator).unwrap();
    // a second extension of W gives the same derivative
    assert!(lambda.extension_defect.unwrap() <= 5e-4);
}

#[test]
fn q_variation_on_bump_leaf() {
    let (m, leaf) = solved("bump:eps=0.01,seed=7,k=2", 128);
    let fam = VariationFamily::seeded(&m, &leaf, 3, 1.0, VariationConfig::default()).unwrap();
    let w = random_section(2, leaf.grid, 11, 1, 1.0);
    let r = q_variation(&m, &fam, &w).unwrap();
    assert!(r.pass, "{:?} {:?}", r.errors, r.order);
}

#[test]
fn frame_variation_matches_projected_normals() {
    let (m, leaf) = solved(EXHIBIT, 128);
    let fam = VariationFamily::seeded(&m, &leaf, 3, 1.0, VariationConfig::default()).unwrap();
    for a in 0..2 {
        let r = frame_variation(&m, &fam, a).unwrap();
        assert!(r.pass, "frame {a}: {:?} {:?}", r.errors, r.order);
    }
}

#[test]
fn extension_derivative_matches_finite_differences() {
    let g = grid(128);
    let m = MetricField::parse("warped").unwrap();
    let leaf = GraphLeaf::from_fn(vec![0.3], g, |x| vec![0.05 * x.cos()]);
    let fam = VariationFamily::seeded(&m, &leaf, 3, 1.0, VariationConfig::default()).unwrap();
    let w = random_section(1, g, 9, 1, 1.0);
    let ext = Extension::of_section(&fam.base, &w);
    let analytic = fam.extension_derivative(&ext);
    let fd = fam.fd_normal_derivative(&m, |mem, s| Ok(ext.components(mem, s))).unwrap();
    let err: Vec<f64> = fd
        .values
        .iter()
        .map(|v| v.iter().zip(&analytic).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    let order = (err[0] / err[1]).log2();
    assert!(err[1] / fd.magnitude.max(1.0) < 1e-6, "{err:?}");
    assert!((1.8..2.3).contains(&order), "{order}");
}

#[test]
fn non_qpmc_leaf_is_rejected() {
    let g = grid(64);
    let m = MetricField::parse("bump:eps=0.01,seed=7,k=2").unwrap();
    let leaf = GraphLeaf::from_fn(vec![0.0, 0.0], g, |x| vec![0.1 * x.cos(), 0.05 * (2.0 * x).sin()]);
    let fam = VariationFamily::seeded(&m, &leaf, 3, 1.0, VariationConfig::default()).unwrap();
    assert!(qpmc_variation(&m, &fam).is_err());
}

#[test]
fn tangential_velocity_is_rejected() {
    let g = grid(32);
    let m = MetricField::product(1).unwrap();
    let leaf = GraphLeaf::slice(vec![0.0], g);
    // the flat slice has a single normal; a wrong-length vector is refused
    assert!(VariationFamily::new(&m, &leaf, vec![0.0; 64], VariationConfig::default()).is_err());
    let cfg = VariationConfig { steps: [0.0, 1e-3], ..VariationConfig::default() };
    assert!(VariationFamily::new(&m, &leaf, vec![0.0; 32], cfg).is_err());
}

#[test]
fn gradient_commutator_on_warped_graph() {
    let g = grid(128);
    let m = MetricField::parse("warped").unwrap();
    let leaf = GraphLeaf::from_fn(vec![0.2], g, |x| vec![0.03 * (2.0 * x).sin()]);
    let fam = VariationFamily::seeded(&m, &leaf, 4, 1.0, VariationConfig::default()).unwrap();
    let w = random_section(1, g, 4, 1, 1.0);
    let r = gradient_commutator(&m, &fam, &w).unwrap();
    assert!(r.pass, "{:?} {:?}", r.errors, r.order);
}

fn bilinear_fixture() -> CurveData {
    let m = MetricField::parse(EXHIBIT).unwrap();
    let leaf = GraphLeaf::from_fn(vec![0.1, -0.2], grid(64), |x| vec![0.02 * x.cos(), 0.01 * (2.0 * x).sin()]);
    CurveData::new(&m, &Curve::from_leaf(&leaf)).unwrap()
}

fn combine(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lambda_is_bilinear(a in -2.0f64..2.0, b in -2.0f64..2.0, s1 in 0u64..1000, s2 in 0u64..1000) {
        let c = bilinear_fixture();
        let g = c.geom.grid;
        let (v1, v2, w) = (random_section(2, g, s1, 0, 1.0), random_section(2, g, s2, 0, 1.0), random_section(2, g, s1 ^ s2, 1, 1.0));
        let lhs = c.laplacian_commutator(&combine(a, &v1, b, &v2), &w);
        let rhs = combine(a, &c.laplacian_commutator(&v1, &w), b, &c.laplacian_commutator(&v2, &w));
        let scale = sup(&rhs).max(1.0);
        prop_assert!(lhs.iter().zip(&rhs).all(|(x, y)| (x - y).abs() <= 1e-10 * scale));

        let lhs = c.laplacian_commutator(&w, &combine(a, &v1, b, &v2));
        let rhs = combine(a, &c.laplacian_commutator(&w, &v1), b, &c.laplacian_commutator(&w, &v2));
        let scale = sup(&rhs).max(1.0);
        prop_assert!(lhs.iter().zip(&rhs).all(|(x, y)| (x - y).abs() <= 1e-10 * scale));
    }
}
