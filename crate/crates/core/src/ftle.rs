//! FTLE fields from sampled flow maps, and threshold ridge masks.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::flowfield::VelocityField;
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::math;
use crate::odeint::{flow_map_grid, StepSpec};
use crate::vec2::{Mat2, Vec2};

/// Fraction of invalid nodes above which a field gets a quality warning.
pub const INVALID_WARNING_FRACTION: f64 = 0.1;

const NAN_MAT: Mat2 = Mat2 { a: f64::NAN, b: f64::NAN, c: f64::NAN, d: f64::NAN };

/// Flow-map Jacobians on a grid; invalid nodes hold NaN entries.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    pub grid: GridSpec,
    pub values: Vec<Mat2>,
}

impl JacobianField {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Mat2 {
        self.values[self.grid.index(i, j)]
    }
}

/// Neighbour indices and coordinate span along one axis: central in the
/// interior, one-sided first order at the ends.
#[inline]
fn stencil(i: usize, n: usize) -> (usize, usize) {
    if i == 0 {
        (0, 1)
    } else if i + 1 == n {
        (n - 2, n - 1)
    } else {
        (i - 1, i + 1)
    }
}

/// Finite-difference Jacobian of a gridded flow map.
///
/// Each column is the difference of neighbouring final positions over the
/// difference of their initial coordinates. A node is invalid if it or any
/// stencil neighbour failed to integrate.
pub fn flow_map_jacobian(final_positions: &VectorField, grid: &GridSpec) -> Result<JacobianField> {
    if final_positions.grid != *grid {
        return Err(Error::GridMismatch);
    }
    if grid.nx < 3 || grid.ny < 3 || !(grid.dx() > 0.0 && grid.dy() > 0.0) {
        return Err(Error::Config("degenerate grid spacing for flow-map differences"));
    }
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        let (jl, jh) = stencil(j, grid.ny);
        let span_y = grid.y(jh) - grid.y(jl);
        for i in 0..grid.nx {
            let (il, ih) = stencil(i, grid.nx);
            let span_x = grid.x(ih) - grid.x(il);
            let xl = final_positions.get(il, j);
            let xh = final_positions.get(ih, j);
            let yl = final_positions.get(i, jl);
            let yh = final_positions.get(i, jh);
            let center = final_positions.get(i, j);
            if !(xl.is_finite() && xh.is_finite() && yl.is_finite() && yh.is_finite() && center.is_finite()) {
                values.push(NAN_MAT);
                continue;
            }
            let dcol_x: Vec2 = xh - xl;
            let dcol_y: Vec2 = yh - yl;
            values.push(Mat2::new(
                dcol_x.x / span_x,
                dcol_y.x / span_y,
                dcol_x.y / span_x,
                dcol_y.y / span_y,
            ));
        }
    }
    Ok(JacobianField { grid: *grid, values })
}

/// `σ = ln(s_max) / |t_a|` with `s_max` the largest singular value of `jac`.
///
/// A rank-zero map gives `-inf`; a non-finite Jacobian gives NaN. Both mark
/// the node invalid.
pub fn sigma_from_jacobian(jac: &Mat2, t_a: f64) -> f64 {
    debug_assert!(t_a != 0.0);
    if !jac.is_finite() {
        return f64::NAN;
    }
    let (s_max, _) = jac.singular_values();
    if s_max == 0.0 {
        return f64::NEG_INFINITY;
    }
    math::ln(s_max) / t_a.abs()
}

/// σ at every node of a Jacobian field.
pub fn sigma_field(jacobians: &JacobianField, t_a: f64) -> Result<ScalarField> {
    if t_a == 0.0 || !t_a.is_finite() {
        return Err(Error::Config("advection time must be nonzero"));
    }
    let values = jacobians.values.iter().map(|j| sigma_from_jacobian(j, t_a)).collect();
    ScalarField::new(jacobians.grid, values)
}

/// FTLE field of `field` advected from `t0` over signed time `t_a`.
/// Negative `t_a` gives the attracting (backward-time) field.
pub fn ftle_field<F, E>(field: &F, grid: &GridSpec, t0: f64, t_a: f64, spec: &StepSpec, exec: &E) -> Result<ScalarField>
where
    F: VelocityField + ?Sized,
    E: Executor,
{
    let map = flow_map_grid(field, grid, t0, t_a, spec, exec)?;
    let jac = flow_map_jacobian(&map, grid)?;
    sigma_field(&jac, t_a)
}

/// `true` if more than 10% of the nodes are invalid.
pub fn quality_warning(field: &ScalarField) -> bool {
    field.invalid_fraction() > INVALID_WARNING_FRACTION
}

/// Empirical quantile (linear interpolation between order statistics) of
/// the valid values of `values`.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Err(Error::NoValidNodes);
    }
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = math::floor(pos) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - lo as f64;
    Ok(v[lo] + frac * (v[hi] - v[lo]))
}

/// Nodes whose σ is at or above the `percentile` quantile of valid σ.
pub fn extract_ridges(sigma: &ScalarField, percentile: f64) -> Result<Vec<bool>> {
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::Config("ridge percentile must lie strictly between 0 and 1"));
    }
    let threshold = quantile(&sigma.values, percentile)?;
    Ok(sigma.values.iter().map(|&v| v.is_finite() && v >= threshold).collect())
}

/// σ-weighted centroid of the masked nodes, if the mask selects any node
/// with positive total weight.
pub fn ridge_centroid(sigma: &ScalarField, mask: &[bool]) -> Option<Vec2> {
    let (mut w, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (k, (&v, &m)) in sigma.values.iter().zip(mask).enumerate() {
        if m && v.is_finite() {
            let p = sigma.grid.node_at(k);
            w += v;
            sx += v * p.x;
            sy += v * p.y;
        }
    }
    (w > 0.0).then(|| Vec2::new(sx / w, sy / w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::flowfield::{AnalyticFlow, DomainBox, DoubleGyreParams};
    use crate::math::{cos, exp, sin};
    use proptest::prelude::*;

    fn square(n: usize) -> GridSpec {
        GridSpec::new(DomainBox::new(-1.0, 1.0, -1.0, 1.0).unwrap(), n, n).unwrap()
    }

    fn mapped(grid: &GridSpec, f: impl Fn(Vec2) -> Vec2) -> VectorField {
        VectorField::new(*grid, (0..grid.len()).map(|k| f(grid.node_at(k))).collect()).unwrap()
    }

    /// Oracle: σ through the largest eigenvalue of the Cauchy-Green tensor.
    fn sigma_via_cauchy_green(j: &Mat2, t_a: f64) -> f64 {
        let (p, q, r) = (j.a * j.a + j.c * j.c, j.a * j.b + j.c * j.d, j.b * j.b + j.d * j.d);
        let mean = 0.5 * (p + r);
        let lambda_max = mean + ((0.5 * (p - r)).powi(2) + q * q).sqrt();
        lambda_max.sqrt().ln() / t_a.abs()
    }

    #[test]
    fn identity_map_has_identity_jacobian() {
        let g = square(5);
        let jac = flow_map_jacobian(&mapped(&g, |p| p), &g).unwrap();
        for m in &jac.values {
            assert!((m.a - 1.0).abs() < 1e-15 && m.b.abs() < 1e-15 && m.c.abs() < 1e-15 && (m.d - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn translation_has_identity_jacobian() {
        let g = square(6);
        let jac = flow_map_jacobian(&mapped(&g, |p| p + Vec2::new(0.3, -2.0)), &g).unwrap();
        for m in &jac.values {
            assert!((m.a - 1.0).abs() < 1e-14 && m.b.abs() < 1e-14 && m.c.abs() < 1e-14 && (m.d - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn saddle_flow_map_jacobian() {
        let g = square(11);
        let map = flow_map_grid(&AnalyticFlow::Saddle { lambda: 1.0 }, &g, 0.0, 1.0, &StepSpec::rk4(0.001), &Sequential).unwrap();
        let jac = flow_map_jacobian(&map, &g).unwrap();
        for j in 1..10 {
            for i in 1..10 {
                let m = jac.get(i, j);
                assert!((m.a - exp(1.0)).abs() < 1e-4 && (m.d - exp(-1.0)).abs() < 1e-4);
                assert!(m.b.abs() < 1e-4 && m.c.abs() < 1e-4);
            }
        }
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_from_jacobian(&Mat2::IDENTITY, 3.0), 0.0);
        let s = sigma_from_jacobian(&Mat2::new(exp(1.0), 0.0, 0.0, exp(-1.0)), 1.0);
        assert!((s - 1.0).abs() < 1e-15);
        let th: f64 = 0.7;
        let rot = Mat2::new(cos(th), -sin(th), sin(th), cos(th));
        assert!(sigma_from_jacobian(&rot, 10.0).abs() < 1e-15);
        assert_eq!(sigma_from_jacobian(&Mat2::ZERO, 1.0), f64::NEG_INFINITY);
        assert!(sigma_from_jacobian(&Mat2::new(f64::NAN, 0.0, 0.0, 1.0), 1.0).is_nan());
    }

    #[test]
    fn invalid_neighbours_propagate() {
        let g = square(5);
        let mut map = mapped(&g, |p| p);
        map.values[g.index(2, 2)] = Vec2::new(f64::NAN, f64::NAN);
        let jac = flow_map_jacobian(&map, &g).unwrap();
        for (i, j) in [(2, 2), (1, 2), (3, 2), (2, 1), (2, 3)] {
            assert!(!jac.get(i, j).is_finite(), "({i},{j}) should be invalid");
        }
        assert!(jac.get(1, 1).is_finite());
    }

    #[test]
    fn saddle_ftle_is_one() {
        let g = square(21);
        let s = ftle_field(&AnalyticFlow::Saddle { lambda: 1.0 }, &g, 0.0, 1.0, &StepSpec::rk4(0.001), &Sequential).unwrap();
        for v in &s.values {
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn rotation_ftle_vanishes() {
        let g = square(21);
        let s = ftle_field(&AnalyticFlow::Rotation { omega: 1.0 }, &g, 0.0, 10.0, &StepSpec::default(), &Sequential).unwrap();
        assert!(s.values.iter().all(|v| *v <= 1e-2));
    }

    #[test]
    fn steady_gyre_ftle_mirror_symmetric() {
        let flow = AnalyticFlow::DoubleGyre(DoubleGyreParams::steady());
        let g = GridSpec::new(DomainBox::double_gyre(), 41, 21).unwrap();
        let s = ftle_field(&flow, &g, 0.0, 15.0, &StepSpec::default(), &Sequential).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert!((s.get(i, j) - s.get(g.nx - 1 - i, j)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ridge_masks() {
        let g = square(4);
        let constant = ScalarField::new(g, alloc::vec![0.7; 16]).unwrap();
        assert!(extract_ridges(&constant, 0.95).unwrap().iter().all(|&m| m));

        let mut values: Vec<f64> = (0..16).map(|k| k as f64 * 0.01).collect();
        values[5] = 9.0;
        let n = values.len() as f64;
        let field = ScalarField::new(g, values).unwrap();
        let mask = extract_ridges(&field, (n - 1.0) / n).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 1);
        assert!(mask[5]);

        let empty = ScalarField::new(g, alloc::vec![f64::NAN; 16]).unwrap();
        assert_eq!(extract_ridges(&empty, 0.5), Err(Error::NoValidNodes));
        assert!(extract_ridges(&field, 1.0).is_err());
    }

    #[test]
    fn invalid_nodes_never_in_mask() {
        let g = square(3);
        let mut v = alloc::vec![1.0; 9];
        v[4] = f64::NAN;
        let mask = extract_ridges(&ScalarField::new(g, v).unwrap(), 0.5).unwrap();
        assert!(!mask[4]);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 8);
    }

    proptest! {
        #[test]
        fn svd_sigma_equals_cauchy_green_sigma(
            a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, d in -3.0..3.0f64, t in 0.5..20.0f64
        ) {
            let j = Mat2::new(a, b, c, d);
            let (smax, smin) = j.singular_values();
            prop_assume!(smin > 1e-3 * smax && smax > 1e-3);
            let s1 = sigma_from_jacobian(&j, t);
            let s2 = sigma_via_cauchy_green(&j, t);
            prop_assert!((s1 - s2).abs() < 1e-10, "{} vs {}", s1, s2);
        }
    }
}
