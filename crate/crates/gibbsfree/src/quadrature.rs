//! Element-wise Gauss–Legendre quadrature, interface-skeleton integration,
//! and layer-graded rules for integrands with sharp straight layers.

use crate::error::{Error, Result};
use crate::spline_space::{AxisSides, Point, Side, SplineSpace};
use crate::target::Layer;

/// Half-width of the graded band around a layer, in multiples of its width.
/// Outside the band a `tanh` profile is flat to double precision.
const LAYER_BAND: f64 = 40.0;
/// Width of the innermost graded cells, in multiples of the layer width.
/// One width per cell keeps each dyadic piece within a single octave of the
/// profile, so a fixed Gauss order resolves it to near machine precision.
const LAYER_CORE: f64 = 1.0;

/// Gauss–Legendre rule on the reference interval `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Nodes as the roots of the Legendre polynomial `P_q`, found by Newton
    /// iteration from the Chebyshev initial guess; converges to ~1e-15.
    pub fn gauss_legendre(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidQuadOrder);
        }
        let mut points = vec![0.0; q];
        let mut weights = vec![0.0; q];
        let n = q as f64;
        for i in 0..q {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_and_derivative(q, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_and_derivative(q, x);
            points[q - 1 - i] = x;
            weights[q - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Affine image of the rule on `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        let c = 0.5 * (lo + hi);
        let s = 0.5 * (hi - lo);
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (c + s * x, s * w))
            .collect()
    }
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// One quadrature point in physical coordinates with its weight.
pub type WeightedPoint = (Point, f64);

/// Split `[lo, hi]` into segments graded geometrically toward `center`, so a
/// feature of scale `width` at `center` is resolved by a fixed Gauss order
/// per segment. Returns `None` when the feature cannot influence the
/// interval.
fn graded_breaks(lo: f64, hi: f64, center: f64, width: f64) -> Option<Vec<f64>> {
    let band = LAYER_BAND * width;
    if center < lo - band || center > hi + band {
        return None;
    }
    let mut breaks = vec![lo, hi];
    let mut r = LAYER_CORE * width;
    if center > lo && center < hi {
        breaks.push(center);
    }
    let span = hi - lo;
    while r < span {
        for s in [-1.0, 1.0] {
            let x = center + s * r;
            if x > lo && x < hi {
                breaks.push(x);
            }
        }
        r *= 2.0;
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-300);
    Some(breaks)
}

/// Position and width of a one-dimensional layer along the x axis.
pub fn layer_position_1d(layer: &Layer) -> (f64, f64) {
    let c = if layer.normal[0] >= 0.0 {
        layer.offset
    } else {
        -layer.offset
    };
    (c, layer.width)
}

/// Gauss rule on `[lo, hi]`, graded toward `center` when a layer of scale
/// `width` centered there touches the interval.
pub fn interval_rule(
    rule: &QuadratureRule,
    lo: f64,
    hi: f64,
    layer_at: Option<(f64, f64)>,
) -> Vec<(f64, f64)> {
    if let Some((center, width)) = layer_at {
        if let Some(breaks) = graded_breaks(lo, hi, center, width) {
            let mut out = Vec::new();
            for w in breaks.windows(2) {
                if w[1] - w[0] > 1e-15 * (hi - lo).abs().max(1.0) {
                    out.extend(rule.mapped(w[0], w[1]));
                }
            }
            return out;
        }
    }
    rule.mapped(lo, hi)
}

/// Tensor-product Gauss rule over element `e`, graded around the target's
/// layer when one is supplied. In 2D with a skew layer the rule is built in
/// rotated coordinates (normal x tangent) so the grading follows the layer.
pub fn element_rule(
    space: &SplineSpace,
    e: usize,
    rule: &QuadratureRule,
    layer: Option<&Layer>,
) -> Vec<WeightedPoint> {
    let info = space.element(e);
    match space.dim() {
        1 => {
            let (lo, hi) = info.bounds[0];
            let layer_at = layer.map(layer_position_1d);
            interval_rule(rule, lo, hi, layer_at)
                .into_iter()
                .map(|(x, w)| ([x, 0.0], w))
                .collect()
        }
        _ => {
            let (x0, x1) = info.bounds[0];
            let (y0, y1) = info.bounds[1];
            if let Some(l) = layer {
                let corners = [[x0, y0], [x1, y0], [x0, y1], [x1, y1]];
                let us: Vec<f64> = corners.iter().map(|&c| l.coordinate(c)).collect();
                let umin = us.iter().cloned().fold(f64::INFINITY, f64::min);
                let umax = us.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if umin < LAYER_BAND * l.width && umax > -LAYER_BAND * l.width {
                    return sheared_box_rule(info.bounds, l, rule);
                }
            }
            let mut out = Vec::new();
            for (x, wx) in rule.mapped(x0, x1) {
                for (y, wy) in rule.mapped(y0, y1) {
                    out.push(([x, y], wx * wy));
                }
            }
            out
        }
    }
}

/// Quadrature over an axis-aligned box in rotated coordinates
/// `(u, t) = (n·x - offset, t·x)` with `t = (-n_y, n_x)`: graded Gauss in
/// `u` across the layer, plain Gauss along each chord. The rotation is
/// orthonormal, so the area element is `du dt`.
fn sheared_box_rule(
    bounds: [(f64, f64); 2],
    layer: &Layer,
    rule: &QuadratureRule,
) -> Vec<WeightedPoint> {
    let n = layer.normal;
    let t = [-n[1], n[0]];
    let (x0, x1) = bounds[0];
    let (y0, y1) = bounds[1];
    let corners = [[x0, y0], [x1, y0], [x0, y1], [x1, y1]];
    let umin = corners
        .iter()
        .map(|&c| layer.coordinate(c))
        .fold(f64::INFINITY, f64::min);
    let umax = corners
        .iter()
        .map(|&c| layer.coordinate(c))
        .fold(f64::NEG_INFINITY, f64::max);
    let u_nodes = interval_rule(rule, umin, umax, Some((0.0, layer.width)));
    let mut out = Vec::new();
    for (u, wu) in u_nodes {
        // Chord {n·x = u + offset} ∩ box, parametrized x = base + s t.
        let base = [(u + layer.offset) * n[0], (u + layer.offset) * n[1]];
        let mut s_lo = f64::NEG_INFINITY;
        let mut s_hi = f64::INFINITY;
        for (axis, (lo, hi)) in [(0usize, (x0, x1)), (1, (y0, y1))] {
            let d = t[axis];
            let b = base[axis];
            if d.abs() < 1e-14 {
                if b < lo - 1e-12 || b > hi + 1e-12 {
                    s_lo = f64::INFINITY;
                }
            } else {
                let (a, bb) = ((lo - b) / d, (hi - b) / d);
                s_lo = s_lo.max(a.min(bb));
                s_hi = s_hi.min(a.max(bb));
            }
        }
        if s_hi <= s_lo {
            continue;
        }
        for (s, ws) in rule.mapped(s_lo, s_hi) {
            out.push(([base[0] + s * t[0], base[1] + s * t[1]], wu * ws));
        }
    }
    out
}

/// Integrate a callback over one element with a plain tensor Gauss rule.
pub fn integrate_element<F: Fn(Point) -> f64>(
    space: &SplineSpace,
    e: usize,
    q: usize,
    f: F,
) -> Result<f64> {
    let rule = QuadratureRule::gauss_legendre(q)?;
    Ok(element_rule(space, e, &rule, None)
        .into_iter()
        .map(|(x, w)| w * f(x))
        .sum())
}

/// Interior interface between two elements, oriented from the plus element
/// into the minus element.
#[derive(Clone, Copy, Debug)]
pub struct SkeletonFacet {
    pub plus_elem: usize,
    pub minus_elem: usize,
    /// Unit normal pointing out of the plus element.
    pub normal: [f64; 2],
    /// Axis the facet is orthogonal to (0 in one dimension).
    pub axis: usize,
    /// Coordinate of the facet along `axis`.
    pub coord: f64,
    /// Extent of the facet along the other axis (degenerate in 1D).
    pub range: (f64, f64),
}

impl SkeletonFacet {
    /// Side hints that evaluate traces inside the plus element.
    pub fn plus_sides(&self) -> AxisSides {
        let mut s = [Side::Right, Side::Right];
        s[self.axis] = Side::Left;
        s
    }

    /// Side hints that evaluate traces inside the minus element.
    pub fn minus_sides(&self) -> AxisSides {
        [Side::Right, Side::Right]
    }

    pub fn measure(&self) -> f64 {
        self.range.1 - self.range.0
    }

    pub fn point_at(&self, s: f64) -> Point {
        match self.axis {
            0 => [self.coord, s],
            _ => [s, self.coord],
        }
    }
}

/// All interior facets of the mesh, each exactly once. The plus element is
/// the one with the smaller index, so normals point along +x or +y.
pub fn skeleton(space: &SplineSpace) -> Vec<SkeletonFacet> {
    let mut out = Vec::new();
    match space.dim() {
        1 => {
            let breaks = space.axis(0).breakpoints();
            for e in 1..space.n_elements() {
                out.push(SkeletonFacet {
                    plus_elem: e - 1,
                    minus_elem: e,
                    normal: [1.0, 0.0],
                    axis: 0,
                    coord: breaks[e],
                    range: (0.0, 0.0),
                });
            }
        }
        _ => {
            let [nel0, nel1] = space.n_elements_per_axis();
            let bx = space.axis(0).breakpoints();
            let by = space.axis(1).breakpoints();
            for e1 in 0..nel1 {
                for e0 in 1..nel0 {
                    out.push(SkeletonFacet {
                        plus_elem: space.element_index([e0 - 1, e1]),
                        minus_elem: space.element_index([e0, e1]),
                        normal: [1.0, 0.0],
                        axis: 0,
                        coord: bx[e0],
                        range: (by[e1], by[e1 + 1]),
                    });
                }
            }
            for e1 in 1..nel1 {
                for e0 in 0..nel0 {
                    out.push(SkeletonFacet {
                        plus_elem: space.element_index([e0, e1 - 1]),
                        minus_elem: space.element_index([e0, e1]),
                        normal: [0.0, 1.0],
                        axis: 1,
                        coord: by[e1],
                        range: (bx[e0], bx[e0 + 1]),
                    });
                }
            }
        }
    }
    out
}

/// Quadrature points along a facet; a single unit-weight point in 1D, a 1D
/// Gauss rule (graded where a layer crosses) along the edge in 2D.
pub fn facet_rule(
    facet: &SkeletonFacet,
    rule: &QuadratureRule,
    layer: Option<&Layer>,
) -> Vec<WeightedPoint> {
    if facet.measure() == 0.0 {
        return vec![(facet.point_at(facet.range.0), 1.0)];
    }
    let tangent_axis = 1 - facet.axis;
    let layer_at = layer.and_then(|l| {
        let d = l.normal[tangent_axis];
        if d.abs() < 1e-12 {
            return None;
        }
        // Solve n·x(s) = offset for the tangential coordinate s.
        let fixed = l.normal[facet.axis] * facet.coord;
        Some(((l.offset - fixed) / d, l.width / d.abs()))
    });
    interval_rule(rule, facet.range.0, facet.range.1, layer_at)
        .into_iter()
        .map(|(s, w)| (facet.point_at(s), w))
        .collect()
}

/// Integrate a callback over one facet. The callback receives the physical
/// point; trace access goes through the facet's side hints.
pub fn integrate_facet<F: Fn(Point) -> f64>(
    facet: &SkeletonFacet,
    q: usize,
    f: F,
) -> Result<f64> {
    let rule = QuadratureRule::gauss_legendre(q)?;
    Ok(facet_rule(facet, &rule, None)
        .into_iter()
        .map(|(x, w)| w * f(x))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline_space::{DofFunction, SplineSpace, SIDES_DEFAULT};
    use crate::target::TanhStep1d;
    use crate::target::TargetFn;
    use std::sync::Arc;

    /// Adaptive Simpson oracle, test-only.
    fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn rec<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            whole: f64,
            tol: f64,
            depth: usize,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, right, tol / 2.0, depth - 1)
            }
        }
        let whole = simpson(&f, a, b);
        rec(&f, a, b, whole, tol, 60)
    }

    #[test]
    fn weights_sum_to_two_and_exactness() {
        for q in 1..=24usize {
            let r = QuadratureRule::gauss_legendre(q).unwrap();
            let sum: f64 = r.weights().iter().sum();
            assert!((sum - 2.0).abs() < 1e-13, "q={q}");
            // Exact for polynomials of degree <= 2q - 1.
            for k in (0..=(2 * q - 1)).step_by(2) {
                let integral: f64 = r
                    .points()
                    .iter()
                    .zip(r.weights())
                    .map(|(&x, &w)| w * x.powi(k as i32))
                    .sum();
                let exact = 2.0 / (k as f64 + 1.0);
                assert!((integral - exact).abs() < 1e-12, "q={q} k={k}");
            }
        }
    }

    #[test]
    fn zero_order_rejected() {
        assert!(QuadratureRule::gauss_legendre(0).is_err());
    }

    #[test]
    fn element_integrals() {
        let s = SplineSpace::new_1d(1, 0, 8, (0.0, 1.0)).unwrap();
        let total: f64 = (0..8)
            .map(|e| integrate_element(&s, e, 4, |_| 1.0).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-14);
        let x2: f64 = (0..8)
            .map(|e| integrate_element(&s, e, 4, |x| x[0] * x[0]).unwrap())
            .sum();
        assert!((x2 - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn mapped_rule_jacobian_scaling() {
        let s = SplineSpace::new_2d(1, 0, (4, 3), ((-1.0, 3.0), (0.0, 2.0))).unwrap();
        let total: f64 = (0..s.n_elements())
            .map(|e| integrate_element(&s, e, 3, |_| 1.0).unwrap())
            .sum();
        assert!((total - 8.0).abs() < 1e-13);
        for e in 0..s.n_elements() {
            let info = s.element(e);
            let m = integrate_element(&s, e, 2, |_| 1.0).unwrap();
            assert!((m - info.measure(2)).abs() < 1e-14);
        }
    }

    #[test]
    fn moderate_layer_against_adaptive_simpson() {
        let s = SplineSpace::new_1d(1, 0, 8, (0.0, 1.0)).unwrap();
        let f = |x: f64| ((x - 0.5) / 0.01).tanh();
        let ours: f64 = (0..8)
            .map(|e| integrate_element(&s, e, 10, |x| f(x[0])).unwrap())
            .sum();
        let oracle = adaptive_simpson(f, 0.0, 1.0, 1e-12);
        assert!((ours - oracle).abs() < 1e-8, "{ours} vs {oracle}");
    }

    #[test]
    fn graded_rule_handles_sharp_layer() {
        let s = SplineSpace::new_1d(1, 0, 4, (0.0, 1.0)).unwrap();
        let t = TanhStep1d { a: 0.3, eps: 1e-4 };
        let rule = QuadratureRule::gauss_legendre(10).unwrap();
        let mut total = 0.0;
        for e in 0..4 {
            for (x, w) in element_rule(&s, e, &rule, t.layer().as_ref()) {
                total += w * t.value(x);
            }
        }
        // Antiderivative of tanh((x-a)/eps) is eps ln cosh((x-a)/eps);
        // ln cosh(z) = |z| + ln(1 + exp(-2|z|)) - ln 2 avoids overflow.
        let eps = 1e-4;
        let lnch = |x: f64| {
            let z: f64 = (x - 0.3) / eps;
            z.abs() + (-2.0 * z.abs()).exp().ln_1p() - std::f64::consts::LN_2
        };
        let exact = eps * (lnch(1.0) - lnch(0.0));
        assert!((total - exact).abs() < 1e-12, "{total} vs {exact}");
    }

    #[test]
    fn sheared_rule_integrates_skew_layer() {
        let s = SplineSpace::new_2d(1, 0, (2, 2), ((-1.0, 1.0), (-1.0, 1.0))).unwrap();
        let eps = 1e-3;
        let t = crate::target::TanhSkewStep2d { c: 0.0, eps };
        let rule = QuadratureRule::gauss_legendre(10).unwrap();
        let mut total = 0.0;
        for e in 0..s.n_elements() {
            for (x, w) in element_rule(&s, e, &rule, t.layer().as_ref()) {
                total += w * t.value(x);
            }
        }
        // Odd under (x, y) -> (y, x).
        assert!(total.abs() < 1e-10, "{total}");
        // The derivative mass along the layer: ∫ |grad phi| dA ≈ 2 * diagonal
        // length for a sharp profile.
        let mut mass = 0.0;
        for e in 0..s.n_elements() {
            for (x, w) in element_rule(&s, e, &rule, t.layer().as_ref()) {
                let g = t.gradient(x);
                mass += w * (g[0] * g[0] + g[1] * g[1]).sqrt();
            }
        }
        let expect = 2.0 * (2.0 * std::f64::consts::SQRT_2);
        assert!((mass - expect).abs() < 1e-3 * expect, "{mass} vs {expect}");
    }

    #[test]
    fn skeleton_enumeration() {
        let s1 = SplineSpace::new_1d(2, 0, 8, (0.0, 1.0)).unwrap();
        assert_eq!(skeleton(&s1).len(), 7);
        let s2 = SplineSpace::new_2d(1, -1, (8, 8), ((-1.0, 1.0), (-1.0, 1.0))).unwrap();
        let facets = skeleton(&s2);
        assert_eq!(facets.len(), 2 * 7 * 8);
        for f in &facets {
            let n = (f.normal[0] * f.normal[0] + f.normal[1] * f.normal[1]).sqrt();
            assert!((n - 1.0).abs() < 1e-15);
            assert_ne!(f.plus_elem, f.minus_elem);
        }
    }

    #[test]
    fn jump_of_continuous_function_vanishes() {
        let s = Arc::new(SplineSpace::new_1d(2, 0, 4, (0.0, 1.0)).unwrap());
        let f = s.greville_interpolate(&|x| (2.0 * x[0]).sin()).unwrap();
        for facet in skeleton(&s) {
            let x = facet.point_at(facet.range.0);
            let plus = f.value(x, facet.plus_sides()).unwrap();
            let minus = f.value(x, facet.minus_sides()).unwrap();
            assert!((plus - minus).abs() < 1e-13);
            let avg = 0.5 * (plus + minus);
            assert!((avg - f.value(x, SIDES_DEFAULT).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn discontinuous_jump_is_seen_by_traces() {
        let s = Arc::new(SplineSpace::new_1d(0, -1, 2, (0.0, 1.0)).unwrap());
        let f = DofFunction::new(s.clone(), vec![-1.0, 1.0]).unwrap();
        let facet = &skeleton(&s)[0];
        let x = facet.point_at(0.0);
        let jump = f.value(x, facet.minus_sides()).unwrap() - f.value(x, facet.plus_sides()).unwrap();
        assert!((jump - 2.0).abs() < 1e-15);
    }

    #[test]
    fn edge_integral_of_coordinate() {
        // Vertical unit edge x = 0, y in (0,1): ∫ y dy = 1/2.
        let s = SplineSpace::new_2d(1, 0, (2, 1), ((-1.0, 1.0), (0.0, 1.0))).unwrap();
        let facets = skeleton(&s);
        assert_eq!(facets.len(), 1);
        let v = integrate_facet(&facets[0], 4, |x| x[1]).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
        let l = integrate_facet(&facets[0], 4, |_| 1.0).unwrap();
        assert!((l - 1.0).abs() < 1e-14);
    }
}
