//! Unconstrained best approximation: L², H¹₀ (with boundary lift) and the
//! interior penalty projector for discontinuous spaces, all through one
//! dense symmetric Gram system that the constrained solver reuses.
//!
//! Boundary conditions are enforced by fixing the boundary layer of dofs to
//! interpolate the target's trace: in 1D the two endpoint dofs, in 2D the
//! four edge rows via univariate Greville collocation along each edge.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadrature::{element_rule, facet_rule, skeleton, QuadratureRule};
use crate::spline_space::{AxisSides, DofFunction, Point, SplineSpace, SIDES_DEFAULT};
use crate::target::{Layer, TargetFn};

/// Inner product defining the best approximation problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InnerProduct {
    L2,
    H01,
    Ip { eta: f64 },
}

impl InnerProduct {
    pub fn label(&self) -> &'static str {
        match self {
            InnerProduct::L2 => "L2",
            InnerProduct::H01 => "H01",
            InnerProduct::Ip { .. } => "IP",
        }
    }
}

/// Penalty parameter for the interior penalty projector: `6 (p+1)^2 / h` in
/// one dimension, `2 (2p+1)(2p+2) / h` in two.
pub fn penalty_default(p: usize, h: f64, d: usize) -> f64 {
    let p = p as f64;
    match d {
        1 => 6.0 * (p + 1.0) * (p + 1.0) / h,
        _ => 2.0 * (2.0 * p + 1.0) * (2.0 * p + 2.0) / h,
    }
}

/// A best approximation problem: space, target, inner product, quadrature.
#[derive(Clone)]
pub struct ProjectionProblem {
    pub space: Arc<SplineSpace>,
    pub target: Arc<dyn TargetFn>,
    pub inner: InnerProduct,
    pub quad_order: usize,
}

impl ProjectionProblem {
    pub fn new(
        space: Arc<SplineSpace>,
        target: Arc<dyn TargetFn>,
        inner: InnerProduct,
        quad_order: usize,
    ) -> Result<Self> {
        if quad_order == 0 {
            return Err(Error::InvalidQuadOrder);
        }
        match inner {
            InnerProduct::H01 if space.regularity() < 0 => {
                return Err(Error::UnsuitableInnerProduct {
                    kind: "H01".into(),
                    requirement: "a continuous space (alpha >= 0)".into(),
                });
            }
            InnerProduct::Ip { eta } => {
                if space.regularity() != -1 {
                    return Err(Error::UnsuitableInnerProduct {
                        kind: "IP".into(),
                        requirement: "a discontinuous space (alpha = -1)".into(),
                    });
                }
                if eta <= 0.0 {
                    return Err(Error::UnsuitableInnerProduct {
                        kind: "IP".into(),
                        requirement: "a positive penalty parameter".into(),
                    });
                }
            }
            _ => {}
        }
        Ok(Self {
            space,
            target,
            inner,
            quad_order,
        })
    }
}

/// Dense Gram system over the free dofs, with the boundary lift folded into
/// the right-hand side. The full (unreduced) operator and load are kept for
/// energy evaluations.
pub struct GramMatrix {
    pub free: Vec<usize>,
    pub fixed: Vec<(usize, f64)>,
    /// Reduced symmetric positive definite matrix over free dofs.
    pub matrix: DMatrix<f64>,
    /// Reduced right-hand side (target load minus boundary coupling).
    pub rhs: DVector<f64>,
    pub full_matrix: DMatrix<f64>,
    pub full_load: DVector<f64>,
}

impl GramMatrix {
    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Cholesky solve of the reduced system.
    pub fn solve_free(&self) -> Result<DVector<f64>> {
        let chol = nalgebra::Cholesky::new(self.matrix.clone()).ok_or_else(|| {
            Error::IndefiniteGram {
                hint: " (for IP projections, try a larger penalty eta)".into(),
            }
        })?;
        Ok(chol.solve(&self.rhs))
    }

    /// Full coefficient vector from free values plus the fixed boundary lift.
    pub fn scatter(&self, free_vals: &DVector<f64>) -> Vec<f64> {
        let n = self.full_matrix.nrows();
        let mut coeffs = vec![0.0; n];
        for (&a, &v) in self.free.iter().zip(free_vals.iter()) {
            coeffs[a] = v;
        }
        for &(a, v) in &self.fixed {
            coeffs[a] = v;
        }
        coeffs
    }

    pub fn restrict(&self, full: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&a| full[a]))
    }

    /// `c^T M c - 2 L^T c`: the squared error norm up to the target-only
    /// constant, comparable across candidates of the same problem.
    pub fn energy(&self, full_coeffs: &[f64]) -> f64 {
        let c = DVector::from_column_slice(full_coeffs);
        let mc = &self.full_matrix * &c;
        c.dot(&mc) - 2.0 * self.full_load.dot(&c)
    }

    /// One half of [`Self::energy`]; the objective reported by solvers.
    pub fn objective(&self, full_coeffs: &[f64]) -> f64 {
        0.5 * self.energy(full_coeffs)
    }

    /// Gradient of [`Self::objective`] restricted to free dofs. Coupling of
    /// free rows with fixed columns is already inside `rhs`.
    pub fn objective_gradient(&self, full_coeffs: &[f64]) -> DVector<f64> {
        let c = self.restrict(full_coeffs);
        &self.matrix * c - &self.rhs
    }
}

/// Boundary dofs fixed to interpolate the target trace.
pub fn boundary_lift(space: &SplineSpace, target: &dyn TargetFn) -> Result<Vec<(usize, f64)>> {
    match space.dim() {
        1 => {
            let (lo, hi) = space.axis(0).interval();
            let n = space.n_dof();
            Ok(vec![
                (0, target.value([lo, 0.0])),
                (n - 1, target.value([hi, 0.0])),
            ])
        }
        _ => {
            let [n0, n1] = space.n_basis_per_axis();
            let (lo0, hi0) = space.axis(0).interval();
            let (lo1, hi1) = space.axis(1).interval();
            let mut fixed = BTreeMap::new();
            for (i0, x) in [(0usize, lo0), (n0 - 1, hi0)] {
                let c = space.axis(1).interpolate(&|y| target.value([x, y]))?;
                for (j, &v) in c.iter().enumerate() {
                    fixed.insert(space.dof_index([i0, j]), v);
                }
            }
            for (j, y) in [(0usize, lo1), (n1 - 1, hi1)] {
                let c = space.axis(0).interpolate(&|x| target.value([x, y]))?;
                for (i, &v) in c.iter().enumerate() {
                    fixed.insert(space.dof_index([i, j]), v);
                }
            }
            Ok(fixed.into_iter().collect())
        }
    }
}

/// Assemble the Gram system of a projection problem.
pub fn assemble(problem: &ProjectionProblem) -> Result<GramMatrix> {
    let space = problem.space.as_ref();
    let target = problem.target.as_ref();
    let n = space.n_dof();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut load = DVector::<f64>::zeros(n);
    let rule = QuadratureRule::gauss_legendre(problem.quad_order)?;
    let layer = target.layer();

    let use_gradients = !matches!(problem.inner, InnerProduct::L2);
    for e in 0..space.n_elements() {
        // Operator entries are products of polynomials, so the plain rule is
        // exact; only the load sees the target and gets the graded rule.
        for (x, w) in element_rule(space, e, &rule, None) {
            if use_gradients {
                let vals = space.basis_values_and_grads(x, SIDES_DEFAULT)?;
                for &(a, _, ga) in &vals {
                    for &(b, _, gb) in &vals {
                        m[(a, b)] += w * (ga[0] * gb[0] + ga[1] * gb[1]);
                    }
                }
            } else {
                let vals = space.basis_values(x, SIDES_DEFAULT)?;
                for &(a, va) in &vals {
                    for &(b, vb) in &vals {
                        m[(a, b)] += w * va * vb;
                    }
                }
            }
        }
        for (x, w) in element_rule(space, e, &rule, layer.as_ref()) {
            if use_gradients {
                let g = target.gradient(x);
                for (a, _, ga) in space.basis_values_and_grads(x, SIDES_DEFAULT)? {
                    load[a] += w * (g[0] * ga[0] + g[1] * ga[1]);
                }
            } else {
                let v = target.value(x);
                for (a, va) in space.basis_values(x, SIDES_DEFAULT)? {
                    load[a] += w * v * va;
                }
            }
        }
    }

    if let InnerProduct::Ip { eta } = problem.inner {
        assemble_ip_facets(space, target, eta, &rule, layer.as_ref(), &mut m, &mut load)?;
    }

    let fixed = boundary_lift(space, target)?;
    let fixed_ids: Vec<usize> = fixed.iter().map(|&(a, _)| a).collect();
    let free: Vec<usize> = (0..n).filter(|a| !fixed_ids.contains(a)).collect();
    let nf = free.len();
    let mut mr = DMatrix::<f64>::zeros(nf, nf);
    let mut rhs = DVector::<f64>::zeros(nf);
    for (i, &a) in free.iter().enumerate() {
        rhs[i] = load[a];
        for (j, &b) in free.iter().enumerate() {
            mr[(i, j)] = m[(a, b)];
        }
        for &(b, vb) in &fixed {
            rhs[i] -= m[(a, b)] * vb;
        }
    }

    Ok(GramMatrix {
        free,
        fixed,
        matrix: mr,
        rhs,
        full_matrix: m,
        full_load: load,
    })
}

/// Interface terms of the interior penalty form. The load uses one-sided
/// target traces so broken targets (space members) reproduce exactly; for a
/// smooth target the jump terms vanish and only `-<grad(phi), [w]>` remains.
fn assemble_ip_facets(
    space: &SplineSpace,
    target: &dyn TargetFn,
    eta: f64,
    rule: &QuadratureRule,
    layer: Option<&Layer>,
    m: &mut DMatrix<f64>,
    load: &mut DVector<f64>,
) -> Result<()> {
    for facet in skeleton(space) {
        let nrm = facet.normal;
        for (x, w) in facet_rule(&facet, rule, layer) {
            // Per-dof scalar jump and normal-average trace pairs.
            let mut traces: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            for (a, v, g) in space.basis_values_and_grads(x, facet.plus_sides())? {
                let e = traces.entry(a).or_insert((0.0, 0.0));
                e.0 += v;
                e.1 += 0.5 * (g[0] * nrm[0] + g[1] * nrm[1]);
            }
            for (a, v, g) in space.basis_values_and_grads(x, facet.minus_sides())? {
                let e = traces.entry(a).or_insert((0.0, 0.0));
                e.0 -= v;
                e.1 += 0.5 * (g[0] * nrm[0] + g[1] * nrm[1]);
            }
            let jphi = target.value_traced(x, facet.plus_sides())
                - target.value_traced(x, facet.minus_sides());
            let gp = target.gradient_traced(x, facet.plus_sides());
            let gm = target.gradient_traced(x, facet.minus_sides());
            let gphi_n =
                0.5 * ((gp[0] + gm[0]) * nrm[0] + (gp[1] + gm[1]) * nrm[1]);
            for (&a, &(ja, ga)) in &traces {
                load[a] += w * (eta * jphi * ja - jphi * ga - gphi_n * ja);
                for (&b, &(jb, gb)) in &traces {
                    m[(a, b)] += w * (eta * ja * jb - ja * gb - ga * jb);
                }
            }
        }
    }
    Ok(())
}

/// Solve a projection problem.
pub fn project(problem: &ProjectionProblem) -> Result<DofFunction> {
    let gram = assemble(problem)?;
    let free_vals = gram.solve_free()?;
    DofFunction::new(problem.space.clone(), gram.scatter(&free_vals))
}

/// L²-best approximation (any regularity).
pub fn project_l2(problem: &ProjectionProblem) -> Result<DofFunction> {
    match problem.inner {
        InnerProduct::L2 => project(problem),
        _ => Err(Error::UnsuitableInnerProduct {
            kind: problem.inner.label().into(),
            requirement: "the L2 entry point".into(),
        }),
    }
}

/// H¹₀-best approximation with boundary lift (continuous spaces only).
pub fn project_h01(problem: &ProjectionProblem) -> Result<DofFunction> {
    match problem.inner {
        InnerProduct::H01 => project(problem),
        _ => Err(Error::UnsuitableInnerProduct {
            kind: problem.inner.label().into(),
            requirement: "the H01 entry point".into(),
        }),
    }
}

/// Interior penalty best approximation (discontinuous spaces only).
pub fn project_ip(problem: &ProjectionProblem) -> Result<DofFunction> {
    match problem.inner {
        InnerProduct::Ip { .. } => project(problem),
        _ => Err(Error::UnsuitableInnerProduct {
            kind: problem.inner.label().into(),
            requirement: "the IP entry point".into(),
        }),
    }
}

/// Function with side-aware traces; what the broken norms integrate.
pub trait BrokenFn {
    fn val(&self, x: Point, sides: AxisSides) -> f64;
    fn grd(&self, x: Point, sides: AxisSides) -> [f64; 2];
}

impl BrokenFn for DofFunction {
    fn val(&self, x: Point, sides: AxisSides) -> f64 {
        self.value(x, sides).unwrap()
    }

    fn grd(&self, x: Point, sides: AxisSides) -> [f64; 2] {
        self.gradient(x, sides).unwrap()
    }
}

/// A smooth (single-valued) function viewed as a broken one.
pub struct SmoothFn<'a>(pub &'a dyn TargetFn);

impl BrokenFn for SmoothFn<'_> {
    fn val(&self, x: Point, _sides: AxisSides) -> f64 {
        self.0.value(x)
    }

    fn grd(&self, x: Point, _sides: AxisSides) -> [f64; 2] {
        self.0.gradient(x)
    }
}

/// Difference `a - b` of two broken functions.
pub struct DiffFn<'a, A: BrokenFn, B: BrokenFn>(pub &'a A, pub &'a B);

impl<A: BrokenFn, B: BrokenFn> BrokenFn for DiffFn<'_, A, B> {
    fn val(&self, x: Point, sides: AxisSides) -> f64 {
        self.0.val(x, sides) - self.1.val(x, sides)
    }

    fn grd(&self, x: Point, sides: AxisSides) -> [f64; 2] {
        let a = self.0.grd(x, sides);
        let b = self.1.grd(x, sides);
        [a[0] - b[0], a[1] - b[1]]
    }
}

/// Squared interior penalty norm: broken H¹₀ seminorm
/// `- 2 <{grad v}, [v]> + <eta [v], [v]>` over the interior skeleton.
/// Negative values signal a penalty below the coercivity threshold.
pub fn ip_norm_sq(
    space: &SplineSpace,
    v: &dyn BrokenFn,
    eta: f64,
    quad_order: usize,
    layer: Option<&Layer>,
) -> Result<f64> {
    let rule = QuadratureRule::gauss_legendre(quad_order)?;
    let mut total = 0.0;
    for e in 0..space.n_elements() {
        for (x, w) in element_rule(space, e, &rule, layer) {
            let g = v.grd(x, SIDES_DEFAULT);
            total += w * (g[0] * g[0] + g[1] * g[1]);
        }
    }
    for facet in skeleton(space) {
        let nrm = facet.normal;
        for (x, w) in facet_rule(&facet, &rule, layer) {
            let vp = v.val(x, facet.plus_sides());
            let vm = v.val(x, facet.minus_sides());
            let gp = v.grd(x, facet.plus_sides());
            let gm = v.grd(x, facet.minus_sides());
            let jump = vp - vm;
            let avg_n = 0.5 * ((gp[0] + gm[0]) * nrm[0] + (gp[1] + gm[1]) * nrm[1]);
            total += w * (eta * jump * jump - 2.0 * avg_n * jump);
        }
    }
    Ok(total)
}

/// Interior penalty norm; square root of [`ip_norm_sq`] clamped at zero.
pub fn ip_norm(
    space: &SplineSpace,
    v: &dyn BrokenFn,
    eta: f64,
    quad_order: usize,
    layer: Option<&Layer>,
) -> Result<f64> {
    Ok(ip_norm_sq(space, v, eta, quad_order, layer)?.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline_space::Side;
    use crate::target::{CallableTarget, TanhStep1d};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn space_1d(p: usize, alpha: i64, n_el: usize) -> Arc<SplineSpace> {
        Arc::new(SplineSpace::new_1d(p, alpha, n_el, (0.0, 1.0)).unwrap())
    }

    fn poly_target(k: i32) -> Arc<dyn TargetFn> {
        Arc::new(CallableTarget {
            f: move |x: Point| x[0].powi(k),
            grad: move |x: Point| [k as f64 * x[0].powi(k - 1), 0.0],
            layer: None,
        })
    }

    fn const_target(c: f64) -> Arc<dyn TargetFn> {
        Arc::new(CallableTarget {
            f: move |_| c,
            grad: |_| [0.0, 0.0],
            layer: None,
        })
    }

    fn sampled_overshoot_1d(f: &DofFunction, lo: f64, hi: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..=20_000 {
            let x = i as f64 / 20_000.0;
            let v = f.value_1d(x);
            worst = worst.max((v - hi).max(lo - v));
        }
        worst.max(0.0)
    }

    #[test]
    fn penalty_default_values() {
        assert_eq!(penalty_default(1, 1.0 / 8.0, 1), 192.0);
        assert_eq!(penalty_default(2, 1.0 / 8.0, 2), 480.0);
        assert_eq!(penalty_default(0, 1.0, 1), 6.0);
    }

    #[test]
    fn l2_constant_gives_constant_coefficients() {
        let s = space_1d(2, 1, 6);
        let pr = ProjectionProblem::new(s, const_target(3.5), InnerProduct::L2, 8).unwrap();
        let f = project_l2(&pr).unwrap();
        for &c in f.coeffs() {
            assert!((c - 3.5).abs() < 1e-10);
        }
    }

    #[test]
    fn l2_reproduces_linear() {
        let s = space_1d(1, 0, 7);
        let pr = ProjectionProblem::new(s, poly_target(1), InnerProduct::L2, 8).unwrap();
        let f = project_l2(&pr).unwrap();
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert!((f.value_1d(x) - x).abs() < 1e-10);
        }
    }

    #[test]
    fn inner_product_space_compatibility() {
        let disc = space_1d(2, -1, 4);
        assert!(
            ProjectionProblem::new(disc.clone(), poly_target(1), InnerProduct::H01, 8).is_err()
        );
        let cont = space_1d(2, 0, 4);
        assert!(ProjectionProblem::new(
            cont,
            poly_target(1),
            InnerProduct::Ip { eta: 100.0 },
            8
        )
        .is_err());
        assert!(ProjectionProblem::new(
            disc,
            poly_target(1),
            InnerProduct::Ip { eta: -1.0 },
            8
        )
        .is_err());
    }

    #[test]
    fn h01_is_nodally_exact_for_linears() {
        for a in [0.5, 0.58] {
            let s = space_1d(1, 0, 8);
            let t = Arc::new(TanhStep1d { a, eps: 1e-4 });
            let pr = ProjectionProblem::new(s, t.clone(), InnerProduct::H01, 10).unwrap();
            let f = project_h01(&pr).unwrap();
            for i in 0..=8 {
                let x = i as f64 / 8.0;
                assert!(
                    (f.value_1d(x) - t.value([x, 0.0])).abs() < 1e-10,
                    "a={a} node {x}"
                );
            }
            assert!(sampled_overshoot_1d(&f, -1.0, 1.0) < 1e-8, "a={a}");
        }
    }

    #[test]
    fn h01_idempotent_on_space_members() {
        let s = space_1d(2, 0, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coeffs: Vec<f64> = (0..s.n_dof()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let member = DofFunction::new(s.clone(), coeffs.clone()).unwrap();
        let pr = ProjectionProblem::new(s, Arc::new(member), InnerProduct::H01, 10).unwrap();
        let f = project_h01(&pr).unwrap();
        for (c, c0) in f.coeffs().iter().zip(&coeffs) {
            assert!((c - c0).abs() < 1e-10);
        }
    }

    #[test]
    fn h01_quadratics_exhibit_overshoot() {
        for alpha in [0i64, 1] {
            let s = space_1d(2, alpha, 8);
            let t = Arc::new(TanhStep1d { a: 0.5, eps: 1e-4 });
            let pr = ProjectionProblem::new(s, t, InnerProduct::H01, 12).unwrap();
            let f = project_h01(&pr).unwrap();
            assert!(sampled_overshoot_1d(&f, -1.0, 1.0) > 0.01, "alpha={alpha}");
        }
    }

    #[test]
    fn ip_average_error_vanishes_on_facets() {
        for p in [1usize, 2] {
            let s = space_1d(p, -1, 8);
            let eta = penalty_default(p, s.h(0), 1);
            let t = Arc::new(TanhStep1d { a: 0.5, eps: 1e-4 });
            let pr =
                ProjectionProblem::new(s.clone(), t.clone(), InnerProduct::Ip { eta }, 10)
                    .unwrap();
            let f = project_ip(&pr).unwrap();
            for facet in skeleton(&s) {
                let x = facet.point_at(facet.range.0);
                let avg = 0.5
                    * (f.value(x, facet.plus_sides()).unwrap()
                        + f.value(x, facet.minus_sides()).unwrap());
                assert!((avg - t.value(x)).abs() < 1e-9, "p={p} facet at {}", x[0]);
            }
        }
    }

    #[test]
    fn ip_reproduces_space_members() {
        let s = space_1d(2, -1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let coeffs: Vec<f64> = (0..s.n_dof()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let member = DofFunction::new(s.clone(), coeffs.clone()).unwrap();
        let eta = penalty_default(2, s.h(0), 1);
        let pr =
            ProjectionProblem::new(s, Arc::new(member), InnerProduct::Ip { eta }, 10).unwrap();
        let f = project_ip(&pr).unwrap();
        for (c, c0) in f.coeffs().iter().zip(&coeffs) {
            assert!((c - c0).abs() < 1e-9);
        }
    }

    #[test]
    fn ip_linears_overshoot_without_constraints() {
        let s = space_1d(1, -1, 8);
        let eta = penalty_default(1, s.h(0), 1);
        let t = Arc::new(TanhStep1d { a: 0.5, eps: 1e-4 });
        let pr = ProjectionProblem::new(s, t, InnerProduct::Ip { eta }, 10).unwrap();
        let f = project_ip(&pr).unwrap();
        assert!(sampled_overshoot_1d(&f, -1.0, 1.0) > 0.01);
    }

    #[test]
    fn l2_linear_overshoot_constant() {
        // Per-unit-jump overshoot of the sharp-step L2 approximation tends
        // to 1 - sqrt(3)/2 ~ 0.134.
        let s = space_1d(1, 0, 64);
        let t = Arc::new(TanhStep1d { a: 0.5, eps: 1e-4 });
        let pr = ProjectionProblem::new(s, t, InnerProduct::L2, 10).unwrap();
        let f = project_l2(&pr).unwrap();
        let normalized = sampled_overshoot_1d(&f, -1.0, 1.0) / 2.0;
        assert!(
            (normalized - (1.0 - 3.0f64.sqrt() / 2.0)).abs() < 0.01,
            "normalized overshoot {normalized}"
        );
    }

    #[test]
    fn gram_matrix_symmetric_positive_definite() {
        let configs: Vec<ProjectionProblem> = vec![
            ProjectionProblem::new(space_1d(1, 0, 8), poly_target(1), InnerProduct::L2, 8)
                .unwrap(),
            ProjectionProblem::new(space_1d(2, 1, 8), poly_target(2), InnerProduct::H01, 8)
                .unwrap(),
            ProjectionProblem::new(
                space_1d(2, -1, 8),
                poly_target(2),
                InnerProduct::Ip {
                    eta: penalty_default(2, 0.125, 1),
                },
                8,
            )
            .unwrap(),
        ];
        for pr in &configs {
            let g = assemble(pr).unwrap();
            for i in 0..g.n_free() {
                for j in 0..g.n_free() {
                    assert!((g.matrix[(i, j)] - g.matrix[(j, i)]).abs() < 1e-12);
                }
            }
            assert!(g.solve_free().is_ok(), "{}", pr.inner.label());
        }
    }

    #[test]
    fn orthogonality_residuals_by_independent_quadrature() {
        use crate::quadrature::integrate_element;
        let t: Arc<dyn TargetFn> = Arc::new(TanhStep1d { a: 0.4, eps: 0.05 });

        let s = space_1d(2, 0, 8);
        let pr = ProjectionProblem::new(s.clone(), t.clone(), InnerProduct::L2, 12).unwrap();
        let f = project_l2(&pr).unwrap();
        let gram = assemble(&pr).unwrap();
        for &a in &gram.free {
            let mut r = 0.0;
            for e in 0..s.n_elements() {
                r += integrate_element(&s, e, 20, |x| {
                    let basis = s.basis_values(x, SIDES_DEFAULT).unwrap();
                    let na = basis.iter().find(|&&(i, _)| i == a).map_or(0.0, |&(_, v)| v);
                    (f.value(x, SIDES_DEFAULT).unwrap() - t.value(x)) * na
                })
                .unwrap();
            }
            assert!(r.abs() < 1e-9, "L2 dof {a}: residual {r}");
        }

        let pr = ProjectionProblem::new(s.clone(), t.clone(), InnerProduct::H01, 12).unwrap();
        let f = project_h01(&pr).unwrap();
        let gram = assemble(&pr).unwrap();
        for &a in &gram.free {
            let mut r = 0.0;
            for e in 0..s.n_elements() {
                r += integrate_element(&s, e, 20, |x| {
                    let basis = s.basis_values_and_grads(x, SIDES_DEFAULT).unwrap();
                    let ga = basis
                        .iter()
                        .find(|&&(i, _, _)| i == a)
                        .map_or(0.0, |&(_, _, g)| g[0]);
                    (f.gradient(x, SIDES_DEFAULT).unwrap()[0] - t.gradient(x)[0]) * ga
                })
                .unwrap();
            }
            assert!(r.abs() < 1e-9, "H01 dof {a}: residual {r}");
        }
    }

    #[test]
    fn perturbing_solution_increases_error_norm() {
        let t: Arc<dyn TargetFn> = Arc::new(TanhStep1d { a: 0.4, eps: 0.05 });
        for inner in [InnerProduct::L2, InnerProduct::H01] {
            let s = space_1d(2, 0, 6);
            let pr = ProjectionProblem::new(s, t.clone(), inner, 12).unwrap();
            let f = project(&pr).unwrap();
            let gram = assemble(&pr).unwrap();
            let base = gram.energy(f.coeffs());
            for &a in &gram.free {
                for delta in [-1e-3, 1e-3] {
                    let mut c = f.coeffs().to_vec();
                    c[a] += delta;
                    assert!(
                        gram.energy(&c) > base,
                        "{} dof {a} delta {delta}",
                        pr.inner.label()
                    );
                }
            }
        }
    }

    #[test]
    fn ip_norm_of_zero_and_continuous() {
        let s = space_1d(2, -1, 4);
        let zero = DofFunction::constant(s.clone(), 0.0);
        let eta = penalty_default(2, s.h(0), 1);
        assert_eq!(ip_norm_sq(&s, &zero, eta, 8, None).unwrap(), 0.0);

        // A globally continuous member of the discontinuous space: jumps
        // vanish, so the squared norm equals the broken seminorm.
        let cont = s.greville_interpolate(&|x| x[0] * x[0]).unwrap();
        let v = ip_norm_sq(&s, &cont, eta, 8, None).unwrap();
        let mut semi = 0.0;
        for e in 0..s.n_elements() {
            semi += crate::quadrature::integrate_element(&s, e, 8, |x| {
                let g = cont.gradient(x, SIDES_DEFAULT).unwrap();
                g[0] * g[0]
            })
            .unwrap();
        }
        assert!((v - semi).abs() < 1e-10);
    }

    #[test]
    fn ip_norm_matches_hand_assembled_oracle() {
        // Two linear pieces with a jump at 0.5; assemble the three norm
        // terms by hand from traces and exact integrals.
        let s = space_1d(1, -1, 2);
        let f = DofFunction::new(s.clone(), vec![0.0, 1.0, 2.5, 3.0]).unwrap();
        let eta = 7.0;
        let ours = ip_norm_sq(&s, &f, eta, 8, None).unwrap();
        // Slopes: (1 - 0)/0.5 = 2 and (3 - 2.5)/0.5 = 1.
        let grad_term = 2.0f64.powi(2) * 0.5 + 1.0f64.powi(2) * 0.5;
        let jump = 1.0 - 2.5;
        let avg = 0.5 * (2.0 + 1.0);
        let oracle = grad_term - 2.0 * avg * jump + eta * jump * jump;
        assert!((ours - oracle).abs() < 1e-12, "{ours} vs {oracle}");
    }

    #[test]
    fn boundary_lift_2d_matches_trace() {
        let s =
            Arc::new(SplineSpace::new_2d(2, 0, (4, 4), ((-1.0, 1.0), (-1.0, 1.0))).unwrap());
        let t = CallableTarget {
            f: |x: Point| x[0] + 2.0 * x[1],
            grad: |_| [1.0, 2.0],
            layer: None,
        };
        let fixed = boundary_lift(&s, &t).unwrap();
        assert_eq!(fixed.len(), s.boundary_dofs().len());
        let mut coeffs = vec![0.0; s.n_dof()];
        for &(a, v) in &fixed {
            coeffs[a] = v;
        }
        let f = DofFunction::new(s.clone(), coeffs).unwrap();
        for i in 0..=20 {
            let y = -1.0 + 2.0 * i as f64 / 20.0;
            let v = f.value([-1.0, y], SIDES_DEFAULT).unwrap();
            assert!((v - (-1.0 + 2.0 * y)).abs() < 1e-10);
        }
    }

    #[test]
    fn discontinuous_traces_have_correct_sides() {
        let s = space_1d(1, -1, 2);
        let f = DofFunction::new(s.clone(), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let facet = &skeleton(&s)[0];
        assert_eq!(f.value(facet.point_at(0.0), facet.plus_sides()).unwrap(), 1.0);
        assert_eq!(
            f.value(facet.point_at(0.0), facet.minus_sides()).unwrap(),
            2.0
        );
        assert_eq!(facet.plus_sides()[0], Side::Left);
    }
}
