//! Size diagnostics of a leaf: curvature and its covariant derivatives
//! against a length scale, and the slope of the graph.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{QpmcError, Result};
use crate::geometry::{compute_geometry, NormalGeometry};
use crate::leaf::GraphLeaf;
use crate::metric::MetricField;
use crate::spectrum::{normal_connection, NormalConnection};

/// Diameter bound in units of the length scale.
pub const DIAMETER_RATIO_MAX: f64 = 10.0 * PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaVerticalReport {
    pub r_bar: f64,
    /// `sup |A|`; for a curve `|A| = |H|`.
    pub sup_a: f64,
    pub sup_grad_a: f64,
    pub sup_hess_a: f64,
    /// `r sup|A| + r^2 sup|grad A| + r^3 sup|grad grad A|`.
    pub delta_score: f64,
    pub length: f64,
    /// Intrinsic diameter, half the length of the closed curve.
    pub diameter: f64,
    pub diameter_ratio: f64,
    pub diameter_ok: bool,
}

fn sup_pointwise(v: &[f64], k: usize) -> f64 {
    v.chunks(k)
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

pub fn delta_vertical_from(
    geom: &NormalGeometry,
    conn: &NormalConnection,
    r_bar: f64,
) -> DeltaVerticalReport {
    let k = geom.k;
    let h = &geom.mean_curvature;
    let dh = conn.unit_derivative(geom, h);
    let d2h = conn.unit_derivative(geom, &dh);
    let (a0, a1, a2) = (
        sup_pointwise(h, k),
        sup_pointwise(&dh, k),
        sup_pointwise(&d2h, k),
    );
    let length = geom.length();
    let diameter = 0.5 * length;
    DeltaVerticalReport {
        r_bar,
        sup_a: a0,
        sup_grad_a: a1,
        sup_hess_a: a2,
        delta_score: r_bar * a0 + r_bar.powi(2) * a1 + r_bar.powi(3) * a2,
        length,
        diameter,
        diameter_ratio: diameter / r_bar,
        diameter_ok: diameter / r_bar <= DIAMETER_RATIO_MAX,
    }
}

pub fn delta_vertical_report(
    m: &MetricField,
    leaf: &GraphLeaf,
    r_bar: f64,
) -> Result<DeltaVerticalReport> {
    if !(r_bar > 0.0 && r_bar.is_finite()) {
        return Err(QpmcError::param("r_bar", "must be positive"));
    }
    let geom = compute_geometry(m, leaf)?;
    let conn = normal_connection(&geom);
    Ok(delta_vertical_from(&geom, &conn, r_bar))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoundReport {
    /// `sup |u'|`.
    pub sup_du: f64,
    /// Sampled `max(|g - g0|, |dg|)` along the leaf.
    pub metric_c1: f64,
    pub sup_a: f64,
    /// `sup|du| / (metric_c1 + sup_a)`, zero when both sides vanish.
    pub constant: f64,
}

pub fn graph_gradient_bound(m: &MetricField, leaf: &GraphLeaf) -> Result<GradientBoundReport> {
    let geom = compute_geometry(m, leaf)?;
    let samples: Vec<Vec<f64>> = geom.points.iter().map(|p| p[..m.dim()].to_vec()).collect();
    let dev = m.deviation(&samples)?;
    let metric_c1 = dev.by_order[0].max(dev.by_order[1]);
    let sup_a = sup_pointwise(&geom.mean_curvature, geom.k);
    let sup_du = leaf.sup_gradient();
    let denom = metric_c1 + sup_a;
    Ok(GradientBoundReport {
        sup_du,
        metric_c1,
        sup_a,
        constant: if sup_du == 0.0 { 0.0 } else { sup_du / denom },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DiffMode, FiberGrid};

    fn grid() -> FiberGrid {
        FiberGrid::new(64, DiffMode::Trig).unwrap()
    }

    #[test]
    fn flat_slice_is_delta_vertical() {
        let m = MetricField::product(2).unwrap();
        let r = delta_vertical_report(&m, &GraphLeaf::slice(vec![0.0, 0.0], grid()), 1.0).unwrap();
        assert_eq!(r.delta_score, 0.0);
        assert!((r.diameter - PI).abs() < 1e-12);
        assert!(r.diameter_ok);
        assert!(delta_vertical_report(&m, &GraphLeaf::slice(vec![0.0, 0.0], grid()), 0.0).is_err());
    }

    #[test]
    fn warped_slice_has_parallel_curvature() {
        let m = MetricField::parse("warped").unwrap();
        let r = delta_vertical_report(&m, &GraphLeaf::slice(vec![0.5], grid()), 1.0).unwrap();
        assert!((r.sup_a - 0.5f64.tanh()).abs() < 1e-12);
        assert!(r.sup_grad_a < 1e-12);
        assert!((r.length - 2.0 * PI * 0.5f64.cosh()).abs() < 1e-12);
    }

    #[test]
    fn slope_of_sine_graph() {
        let m = MetricField::product(1).unwrap();
        let leaf = GraphLeaf::from_fn(vec![0.0], grid(), |x| vec![0.05 * x.sin()]);
        let r = graph_gradient_bound(&m, &leaf).unwrap();
        assert!((r.sup_du - 0.05).abs() < 1e-8);
        let flat = graph_gradient_bound(&m, &GraphLeaf::slice(vec![0.0], grid())).unwrap();
        assert_eq!(flat.sup_du, 0.0);
        assert_eq!(flat.constant, 0.0);
    }
}
