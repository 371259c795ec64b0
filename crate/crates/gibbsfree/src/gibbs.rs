//! Oscillation functionals: total variation, the exact and regularized
//! Gibbs functionals (one-dimensional and gradient-aligned in 2D), their
//! Gateaux derivatives, and the subdomain partitions the constraints act on.
//!
//! One-dimensional exact functionals split every element at the roots of the
//! spline derivative, so each piece has a single derivative sign; the
//! absolute-value integral is then a plain polynomial quadrature and the
//! target term telescopes through trace values, which stays exact even for
//! targets with layers far below the quadrature resolution.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::{element_rule, QuadratureRule};
use crate::spline_space::{DofFunction, Side, SplineSpace, SIDES_DEFAULT};
use crate::target::TargetFn;

/// Regularized absolute value `sqrt(r^2 + eps^2)`.
pub fn abs_reg(r: f64, eps: f64) -> f64 {
    (r * r + eps * eps).sqrt()
}

/// Regularized sign `r / |r|_eps`; the derivative of [`abs_reg`] in `r`.
pub fn sgn_reg(r: f64, eps: f64) -> f64 {
    r / abs_reg(r, eps)
}

/// Positive regularization parameter for the smoothed functionals. Distinct
/// from any layer width of the target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizationParams {
    eps_reg: f64,
}

impl RegularizationParams {
    pub fn new(eps_reg: f64) -> Result<Self> {
        if eps_reg > 0.0 && eps_reg.is_finite() {
            Ok(Self { eps_reg })
        } else {
            Err(Error::InvalidRegularization(eps_reg))
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps_reg
    }
}

/// How the domain is split into constraint subdomains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PartitionMode {
    /// One subdomain per element.
    Elementwise,
    /// Blocks of `alpha + 1` consecutive elements (1D only); `shift` picks
    /// the size of the first block (`shift + 1` elements).
    Grouped { shift: usize },
}

/// Disjoint element groups covering the mesh.
#[derive(Clone, Debug)]
pub struct SubdomainPartition {
    pub subdomains: Vec<Vec<usize>>,
    pub mode: PartitionMode,
    /// Set when the requested combination is known to admit no feasible
    /// solution in general (element-wise constraints with alpha >= 1).
    pub infeasibility_expected: bool,
}

impl SubdomainPartition {
    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }
}

/// Build the constraint partition for a space.
pub fn build_partition(space: &SplineSpace, mode: PartitionMode) -> Result<SubdomainPartition> {
    let alpha = space.regularity();
    let n_el = space.n_elements();
    match mode {
        PartitionMode::Elementwise => {
            if space.dim() == 2 && alpha >= 0 {
                return Err(Error::InvalidPartition(
                    "element-wise constraints in 2D need a discontinuous space (alpha = -1)"
                        .into(),
                ));
            }
            Ok(SubdomainPartition {
                subdomains: (0..n_el).map(|e| vec![e]).collect(),
                mode,
                infeasibility_expected: space.dim() == 1 && alpha >= 1,
            })
        }
        PartitionMode::Grouped { shift } => {
            if space.dim() != 1 {
                return Err(Error::InvalidPartition(
                    "grouped partitions are one-dimensional".into(),
                ));
            }
            if alpha < 1 {
                return Err(Error::InvalidPartition(format!(
                    "grouped partitions need alpha >= 1 (got {alpha})"
                )));
            }
            let alpha = alpha as usize;
            if shift > alpha {
                return Err(Error::InvalidPartition(format!(
                    "shift must satisfy 0 <= shift <= alpha (= {alpha})"
                )));
            }
            let mut subdomains = Vec::new();
            let mut start = 0usize;
            let mut block = shift + 1;
            while start < n_el {
                let end = (start + block).min(n_el);
                subdomains.push((start..end).collect());
                start = end;
                block = alpha + 1;
            }
            Ok(SubdomainPartition {
                subdomains,
                mode,
                infeasibility_expected: false,
            })
        }
    }
}

/// Derivative-sign piece of one element: `(a, b, sign)` with constant
/// `sign(D phi*)` on `(a, b)`; `sign = 0` marks a flat piece.
pub(crate) fn sign_pieces(f: &DofFunction, e: usize) -> Vec<(f64, f64, f64)> {
    let space = f.space();
    let info = space.element(e);
    let (xl, xr) = info.bounds[0];
    let mut cuts = derivative_roots(f, xl, xr);
    cuts.insert(0, xl);
    cuts.push(xr);
    let scale = f.coeffs().iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
    let flat_tol = 1e-12 * scale / space.h(0);
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < 1e-14 * (xr - xl) {
            continue;
        }
        let d = f.deriv_1d(0.5 * (a + b), Side::Right);
        let s = if d.abs() <= flat_tol {
            0.0
        } else {
            d.signum()
        };
        out.push((a, b, s));
    }
    out
}

/// Roots of the spline derivative inside `(xl, xr)`, paired with the local
/// slope magnitude `|D'|` there: closed form for the linear/quadratic
/// derivative polynomials of `p <= 3`, a 64-point sign grid with bisection
/// above that.
fn derivative_roots_with_slopes(f: &DofFunction, xl: f64, xr: f64) -> Vec<(f64, f64)> {
    let h = xr - xl;
    derivative_roots(f, xl, xr)
        .into_iter()
        .map(|x| {
            let d = 1e-3 * h;
            let lo = (x - d).max(xl);
            let hi = (x + d).min(xr);
            let slope = (f.deriv_1d(hi, Side::Left) - f.deriv_1d(lo, Side::Right))
                / (hi - lo);
            (x, slope.abs())
        })
        .collect()
}

/// Roots of the spline derivative inside `(xl, xr)`: closed form for the
/// linear/quadratic derivative polynomials of `p <= 3`, a 64-point sign grid
/// with bisection above that.
fn derivative_roots(f: &DofFunction, xl: f64, xr: f64) -> Vec<f64> {
    let p = f.space().degree();
    let h = xr - xl;
    // Evaluate from inside the element: right limit in the left half, left
    // limit in the right half.
    let d_at = |t: f64| {
        let side = if t < 0.5 { Side::Right } else { Side::Left };
        f.deriv_1d(xl + t * h, side)
    };
    let mut roots: Vec<f64> = Vec::new();
    match p {
        0 | 1 => {}
        2 | 3 => {
            // Fit D in local coordinates through three samples.
            let d0 = d_at(0.0);
            let dm = d_at(0.5);
            let d1 = d_at(1.0);
            let a = d0;
            let b = -3.0 * d0 + 4.0 * dm - d1;
            let c = 2.0 * d0 - 4.0 * dm + 2.0 * d1;
            let scale = a.abs().max(b.abs()).max(c.abs()).max(1e-300);
            if c.abs() <= 1e-12 * scale {
                if b.abs() > 1e-12 * scale {
                    roots.push(-a / b);
                }
            } else {
                let disc = b * b - 4.0 * a * c;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    // Stable quadratic formula.
                    let q = -0.5 * (b + b.signum() * sq);
                    if q != 0.0 {
                        roots.push(a / q);
                    }
                    if c != 0.0 {
                        roots.push(q / c);
                    }
                }
            }
        }
        _ => {
            const GRID: usize = 64;
            let mut prev_t = 0.5 / GRID as f64;
            let mut prev = d_at(prev_t);
            for i in 1..GRID {
                let t = (i as f64 + 0.5) / GRID as f64;
                let cur = d_at(t);
                if prev != 0.0 && cur != 0.0 && prev.signum() != cur.signum() {
                    let (mut lo, mut hi) = (prev_t, t);
                    let mut flo = prev;
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        let fm = d_at(mid);
                        if fm == 0.0 {
                            lo = mid;
                            hi = mid;
                            break;
                        }
                        if flo.signum() == fm.signum() {
                            lo = mid;
                            flo = fm;
                        } else {
                            hi = mid;
                        }
                    }
                    roots.push(0.5 * (lo + hi));
                }
                prev_t = t;
                prev = cur;
            }
        }
    }
    let margin = 1e-12;
    let mut out: Vec<f64> = roots
        .into_iter()
        .filter(|t| *t > margin && *t < 1.0 - margin)
        .map(|t| xl + t * h)
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-13 * h);
    out
}

/// Dyadic ladder of break points toward `center`, innermost cells of size
/// `width`; a zero width degenerates to a single cut at the center.
fn push_ladder(breaks: &mut Vec<f64>, lo: f64, hi: f64, center: f64, width: f64) {
    if center > lo && center < hi {
        breaks.push(center);
    }
    if width <= 0.0 {
        return;
    }
    if center < lo - 40.0 * width || center > hi + 40.0 * width {
        return;
    }
    let span = hi - lo;
    let mut r = width;
    while r < span {
        for s in [-1.0, 1.0] {
            let x = center + s * r;
            if x > lo && x < hi {
                breaks.push(x);
            }
        }
        r *= 2.0;
    }
}

/// Quadrature points over one element for the standalone functionals: in 1D
/// the element is split and graded at the current derivative roots (the
/// integrand develops `sqrt(kappa^2 s^2 + eps^2)` transitions of width
/// `eps / kappa` there) on top of the target's layer grading; in 2D it
/// keeps the plain or sheared element rule. The solver's [`GibbsEngine`]
/// deliberately keeps fixed rules so its surrogate stays smooth in the
/// coefficients.
fn candidate_rule(
    f: &DofFunction,
    e: usize,
    rule: &QuadratureRule,
    layer: Option<&crate::target::Layer>,
    eps: f64,
) -> Vec<(crate::spline_space::Point, f64)> {
    let space = f.space();
    if space.dim() == 2 {
        return element_rule(space, e, rule, layer);
    }
    let (xl, xr) = space.element(e).bounds[0];
    let h = xr - xl;
    let mut breaks = vec![xl, xr];
    for (root, kappa) in derivative_roots_with_slopes(f, xl, xr) {
        let width = if eps > 0.0 {
            (eps / kappa.max(1e-12)).min(h)
        } else {
            0.0
        };
        push_ladder(&mut breaks, xl, xr, root, width);
    }
    if let Some(l) = layer {
        let (c, w) = crate::quadrature::layer_position_1d(l);
        push_ladder(&mut breaks, xl, xr, c, w);
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * h);
    let mut out = Vec::new();
    for w in breaks.windows(2) {
        if w[1] - w[0] < 1e-15 * h {
            continue;
        }
        for (x, wt) in rule.mapped(w[0], w[1]) {
            out.push(([x, 0.0], wt));
        }
    }
    out
}

fn check_omega(space: &SplineSpace, omega: &[usize]) -> Result<()> {
    if omega.iter().any(|&e| e >= space.n_elements()) {
        return Err(Error::InvalidPartition(format!(
            "element index out of range (mesh has {} elements)",
            space.n_elements()
        )));
    }
    Ok(())
}

/// Total variation of a spline over a union of elements: per-piece trace
/// increments plus interface jump magnitudes between adjacent elements of
/// `omega` (1D); in 2D the integral of the gradient norm per element.
pub fn total_variation(f: &DofFunction, omega: &[usize]) -> Result<f64> {
    let space = f.space().clone();
    check_omega(&space, omega)?;
    if space.dim() == 2 {
        let rule = QuadratureRule::gauss_legendre(10)?;
        let mut tv = 0.0;
        for &e in omega {
            for (x, w) in element_rule(&space, e, &rule, None) {
                let g = f.gradient(x, SIDES_DEFAULT)?;
                tv += w * (g[0] * g[0] + g[1] * g[1]).sqrt();
            }
        }
        return Ok(tv);
    }
    let mut tv = 0.0;
    for &e in omega {
        let (xl, xr) = space.element(e).bounds[0];
        for (a, b, _) in sign_pieces(f, e) {
            let va = f.value([a.max(xl), 0.0], [Side::Right, Side::Right])?;
            let vb = f.value([b.min(xr), 0.0], [Side::Left, Side::Right])?;
            tv += (vb - va).abs();
        }
    }
    // Jump contributions at interfaces interior to omega.
    let mut sorted: Vec<usize> = omega.to_vec();
    sorted.sort_unstable();
    for w in sorted.windows(2) {
        if w[1] == w[0] + 1 {
            let x = space.element(w[1]).bounds[0].0;
            let left = f.value([x, 0.0], [Side::Left, Side::Right])?;
            let right = f.value([x, 0.0], [Side::Right, Side::Right])?;
            tv += (right - left).abs();
        }
    }
    Ok(tv)
}

/// Total variation of a target over a union of elements. In 1D elements are
/// split at derivative sign changes located on a sample grid; exact for
/// piecewise monotone targets such as the layered steps. In 2D this is the
/// quadrature of the gradient norm with the target's graded rule.
pub fn total_variation_target(
    space: &SplineSpace,
    target: &dyn TargetFn,
    omega: &[usize],
    quad_order: usize,
) -> Result<f64> {
    check_omega(space, omega)?;
    if space.dim() == 2 {
        let rule = QuadratureRule::gauss_legendre(quad_order)?;
        let layer = target.layer();
        let mut tv = 0.0;
        for &e in omega {
            for (x, w) in element_rule(space, e, &rule, layer.as_ref()) {
                let g = target.gradient(x);
                tv += w * (g[0] * g[0] + g[1] * g[1]).sqrt();
            }
        }
        return Ok(tv);
    }
    let mut tv = 0.0;
    for &e in omega {
        let (xl, xr) = space.element(e).bounds[0];
        let mut cuts = vec![xl];
        const GRID: usize = 128;
        let mut prev = target.gradient([xl + 0.5 * (xr - xl) / GRID as f64, 0.0])[0];
        for i in 1..GRID {
            let x = xl + (i as f64 + 0.5) * (xr - xl) / GRID as f64;
            let cur = target.gradient([x, 0.0])[0];
            if prev != 0.0 && cur != 0.0 && prev.signum() != cur.signum() {
                let (mut lo, mut hi) = (x - (xr - xl) / GRID as f64, x);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if target.gradient([mid, 0.0])[0].signum() == prev.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                cuts.push(0.5 * (lo + hi));
            }
            prev = cur;
        }
        cuts.push(xr);
        for w in cuts.windows(2) {
            tv += (target.value([w[1], 0.0]) - target.value([w[0], 0.0])).abs();
        }
    }
    Ok(tv)
}

/// Exact one-dimensional Gibbs functional over a union of whole elements:
/// `integral of |D phi*| - sgn(D phi*) D phi`, with `sgn(0) = 0`. The target
/// term uses trace differences per sign piece (fundamental theorem), so
/// arbitrarily sharp targets are handled exactly.
pub fn gibbs_1d(
    target: &dyn TargetFn,
    f: &DofFunction,
    omega: &[usize],
    quad_order: usize,
) -> Result<f64> {
    let space = f.space().clone();
    if space.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: space.dim(),
        });
    }
    check_omega(&space, omega)?;
    let rule = QuadratureRule::gauss_legendre(quad_order.max(space.degree()))?;
    let mut total = 0.0;
    for &e in omega {
        for (a, b, s) in sign_pieces(f, e) {
            if s == 0.0 {
                continue;
            }
            let mut abs_part = 0.0;
            for (x, w) in rule.mapped(a, b) {
                abs_part += w * f.deriv_1d(x, Side::Right).abs();
            }
            let phi_inc = target.value([b, 0.0]) - target.value([a, 0.0]);
            total += abs_part - s * phi_inc;
        }
    }
    Ok(total)
}

/// Exact gradient-aligned Gibbs functional (dimension 1 or 2), by
/// quadrature of `||grad phi*|| - grad phi* . grad phi / ||grad phi*||`
/// with the zero-gradient branch, using the target's graded rule.
pub fn gibbs_nd(
    target: &dyn TargetFn,
    f: &DofFunction,
    omega: &[usize],
    quad_order: usize,
) -> Result<f64> {
    let space = f.space().clone();
    check_omega(&space, omega)?;
    let rule = QuadratureRule::gauss_legendre(quad_order)?;
    let layer = target.layer();
    let mut total = 0.0;
    for &e in omega {
        for (x, w) in candidate_rule(f, e, &rule, layer.as_ref(), 0.0) {
            let d = f.gradient(x, SIDES_DEFAULT)?;
            let nd = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if nd <= 1e-14 {
                continue;
            }
            let t = target.gradient(x);
            total += w * (nd - (d[0] * t[0] + d[1] * t[1]) / nd);
        }
    }
    Ok(total)
}

/// Directional Gibbs functional for a fixed unit direction `e`.
pub fn gibbs_directional(
    target: &dyn TargetFn,
    f: &DofFunction,
    omega: &[usize],
    e_dir: [f64; 2],
    quad_order: usize,
) -> Result<f64> {
    let norm = (e_dir[0] * e_dir[0] + e_dir[1] * e_dir[1]).sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::NonUnitDirection(norm));
    }
    let space = f.space().clone();
    check_omega(&space, omega)?;
    let rule = QuadratureRule::gauss_legendre(quad_order)?;
    let layer = target.layer();
    let mut total = 0.0;
    for &e in omega {
        for (x, w) in candidate_rule(f, e, &rule, layer.as_ref(), 0.0) {
            let d = f.gradient(x, SIDES_DEFAULT)?;
            let ds = e_dir[0] * d[0] + e_dir[1] * d[1];
            if ds == 0.0 {
                continue;
            }
            let t = target.gradient(x);
            let dt = e_dir[0] * t[0] + e_dir[1] * t[1];
            total += w * (ds.abs() - ds.signum() * dt);
        }
    }
    Ok(total)
}

/// Regularized Gibbs functional `integral of |D phi*|_eps - sgn_eps(D phi*)
/// D phi` (gradient-aligned form in 2D).
pub fn gibbs_regularized(
    target: &dyn TargetFn,
    f: &DofFunction,
    omega: &[usize],
    reg: RegularizationParams,
    quad_order: usize,
) -> Result<f64> {
    let space = f.space().clone();
    check_omega(&space, omega)?;
    let eps = reg.eps();
    let rule = QuadratureRule::gauss_legendre(quad_order)?;
    let layer = target.layer();
    let mut total = 0.0;
    for &e in omega {
        for (x, w) in candidate_rule(f, e, &rule, layer.as_ref(), eps) {
            let d = f.gradient(x, SIDES_DEFAULT)?;
            let t = target.gradient(x);
            let nd = (d[0] * d[0] + d[1] * d[1] + eps * eps).sqrt();
            total += w * (nd - (d[0] * t[0] + d[1] * t[1]) / nd);
        }
    }
    Ok(total)
}

/// Gateaux derivative of the regularized Gibbs functional in direction `w`.
pub fn gibbs_gradient(
    target: &dyn TargetFn,
    f: &DofFunction,
    omega: &[usize],
    reg: RegularizationParams,
    w_dir: &DofFunction,
    quad_order: usize,
) -> Result<f64> {
    let row = gibbs_gradient_row(target, f, omega, reg, quad_order)?;
    Ok(row
        .iter()
        .zip(w_dir.coeffs())
        .map(|(g, c)| g * c)
        .sum())
}

/// Gateaux derivative of the regularized Gibbs functional against every
/// basis function: one constraint-Jacobian row.
pub fn gibbs_gradient_row(
    target: &dyn TargetFn,
    f: &DofFunction,
    omega: &[usize],
    reg: RegularizationParams,
    quad_order: usize,
) -> Result<Vec<f64>> {
    let space = f.space().clone();
    check_omega(&space, omega)?;
    let eps = reg.eps();
    let rule = QuadratureRule::gauss_legendre(quad_order)?;
    let layer = target.layer();
    let mut row = vec![0.0; space.n_dof()];
    for &e in omega {
        for (x, w) in candidate_rule(f, e, &rule, layer.as_ref(), eps) {
            let d = f.gradient(x, SIDES_DEFAULT)?;
            let t = target.gradient(x);
            let nd = (d[0] * d[0] + d[1] * d[1] + eps * eps).sqrt();
            let dt = d[0] * t[0] + d[1] * t[1];
            for (b, _, gb) in space.basis_values_and_grads(x, SIDES_DEFAULT)? {
                let dgb = d[0] * gb[0] + d[1] * gb[1];
                let tgb = t[0] * gb[0] + t[1] * gb[1];
                row[b] += w * (dgb / nd - tgb / nd + dt * dgb / (nd * nd * nd));
            }
        }
    }
    Ok(row)
}

/// Per-subdomain report: exact Gibbs values, the variation gap
/// `V(phi*) - V(phi)`, and the total variation of the candidate.
#[derive(Clone, Debug)]
pub struct GibbsEvaluation {
    pub gibbs: Vec<f64>,
    pub variation_gap: Vec<f64>,
    pub total_variation: Vec<f64>,
    /// Regularization used for `gibbs` (0 marks the exact functional).
    pub eps_reg: f64,
}

/// Evaluate the exact functionals on every subdomain of a partition.
pub fn evaluate_partition(
    target: &dyn TargetFn,
    f: &DofFunction,
    partition: &SubdomainPartition,
    quad_order: usize,
) -> Result<GibbsEvaluation> {
    let space = f.space().clone();
    let per: Vec<(f64, f64, f64)> = partition
        .subdomains
        .par_iter()
        .map(|omega| -> Result<(f64, f64, f64)> {
            let g = if space.dim() == 1 {
                gibbs_1d(target, f, omega, quad_order)?
            } else {
                gibbs_nd(target, f, omega, quad_order)?
            };
            let tv = total_variation(f, omega)?;
            let tv_t = total_variation_target(&space, target, omega, quad_order)?;
            Ok((g, tv - tv_t, tv))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GibbsEvaluation {
        gibbs: per.iter().map(|x| x.0).collect(),
        variation_gap: per.iter().map(|x| x.1).collect(),
        total_variation: per.iter().map(|x| x.2).collect(),
        eps_reg: 0.0,
    })
}

/// Cached quadrature data for fast repeated constraint evaluation during
/// constrained solves: per element, the physical weights, local dof ids,
/// basis gradients and target gradients at every point.
pub struct GibbsEngine {
    space: Arc<SplineSpace>,
    partition: SubdomainPartition,
    elems: Vec<ElementCache>,
}

struct ElementCache {
    dofs: Vec<usize>,
    weights: Vec<f64>,
    /// `basis_grads[point][local]`.
    basis_grads: Vec<Vec<[f64; 2]>>,
    target_grads: Vec<[f64; 2]>,
}

impl GibbsEngine {
    pub fn new(
        space: Arc<SplineSpace>,
        target: &dyn TargetFn,
        partition: SubdomainPartition,
        quad_order: usize,
    ) -> Result<Self> {
        let rule = QuadratureRule::gauss_legendre(quad_order)?;
        let layer = target.layer();
        let mut elems = Vec::with_capacity(space.n_elements());
        for e in 0..space.n_elements() {
            let dofs = space.element_dofs(e);
            let pts = element_rule(&space, e, &rule, layer.as_ref());
            let mut weights = Vec::with_capacity(pts.len());
            let mut basis_grads = Vec::with_capacity(pts.len());
            let mut target_grads = Vec::with_capacity(pts.len());
            for (x, w) in pts {
                let vals = space.basis_values_and_grads(x, SIDES_DEFAULT)?;
                let mut local = vec![[0.0; 2]; dofs.len()];
                for (a, _, g) in vals {
                    if let Some(i) = dofs.iter().position(|&d| d == a) {
                        local[i] = g;
                    }
                }
                weights.push(w);
                basis_grads.push(local);
                target_grads.push(target.gradient(x));
            }
            elems.push(ElementCache {
                dofs,
                weights,
                basis_grads,
                target_grads,
            });
        }
        Ok(Self {
            space,
            partition,
            elems,
        })
    }

    pub fn partition(&self) -> &SubdomainPartition {
        &self.partition
    }

    pub fn n_constraints(&self) -> usize {
        self.partition.len()
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        &self.space
    }

    fn spline_grad(&self, cache: &ElementCache, pt: usize, coeffs: &[f64]) -> [f64; 2] {
        let mut d = [0.0; 2];
        for (i, &dof) in cache.dofs.iter().enumerate() {
            let g = cache.basis_grads[pt][i];
            let c = coeffs[dof];
            d[0] += c * g[0];
            d[1] += c * g[1];
        }
        d
    }

    /// Constraint values `G^eps_j(coeffs)`; `eps = 0` gives the exact
    /// quadrature form with the `sgn(0) = 0` branch.
    pub fn constraint_values(&self, coeffs: &[f64], eps: f64) -> Vec<f64> {
        self.partition
            .subdomains
            .par_iter()
            .map(|omega| {
                let mut total = 0.0;
                for &e in omega {
                    let cache = &self.elems[e];
                    for pt in 0..cache.weights.len() {
                        let d = self.spline_grad(cache, pt, coeffs);
                        let t = cache.target_grads[pt];
                        let w = cache.weights[pt];
                        if eps == 0.0 {
                            let nd = (d[0] * d[0] + d[1] * d[1]).sqrt();
                            if nd > 1e-14 {
                                total += w * (nd - (d[0] * t[0] + d[1] * t[1]) / nd);
                            }
                        } else {
                            let nd = (d[0] * d[0] + d[1] * d[1] + eps * eps).sqrt();
                            total += w * (nd - (d[0] * t[0] + d[1] * t[1]) / nd);
                        }
                    }
                }
                total
            })
            .collect()
    }

    /// Constraint values and the Jacobian `G` (rows: subdomains, columns:
    /// all dofs) of the regularized functionals.
    pub fn constraints_with_jacobian(
        &self,
        coeffs: &[f64],
        eps: f64,
    ) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.space.n_dof();
        let rows: Vec<(f64, Vec<(usize, f64)>)> = self
            .partition
            .subdomains
            .par_iter()
            .map(|omega| {
                let mut value = 0.0;
                let mut entries: Vec<(usize, f64)> = Vec::new();
                for &e in omega {
                    let cache = &self.elems[e];
                    let base = entries.len();
                    entries.extend(cache.dofs.iter().map(|&d| (d, 0.0)));
                    for pt in 0..cache.weights.len() {
                        let d = self.spline_grad(cache, pt, coeffs);
                        let t = cache.target_grads[pt];
                        let w = cache.weights[pt];
                        let nd = (d[0] * d[0] + d[1] * d[1] + eps * eps).sqrt();
                        let dt = d[0] * t[0] + d[1] * t[1];
                        value += w * (nd - dt / nd);
                        let nd3 = nd * nd * nd;
                        for (i, _) in cache.dofs.iter().enumerate() {
                            let gb = cache.basis_grads[pt][i];
                            let dgb = d[0] * gb[0] + d[1] * gb[1];
                            let tgb = t[0] * gb[0] + t[1] * gb[1];
                            entries[base + i].1 += w * (dgb / nd - tgb / nd + dt * dgb / nd3);
                        }
                    }
                }
                (value, entries)
            })
            .collect();
        let mut jac = DMatrix::<f64>::zeros(self.partition.len(), n);
        let mut values = Vec::with_capacity(rows.len());
        for (j, (v, entries)) in rows.into_iter().enumerate() {
            values.push(v);
            for (dof, g) in entries {
                jac[(j, dof)] += g;
            }
        }
        (values, jac)
    }

    /// Exact per-subdomain values: the trace-based split form in 1D, the
    /// `eps = 0` quadrature in 2D.
    pub fn exact_values(&self, target: &dyn TargetFn, f: &DofFunction, quad_order: usize) -> Result<Vec<f64>> {
        if self.space.dim() == 1 {
            self.partition
                .subdomains
                .iter()
                .map(|omega| gibbs_1d(target, f, omega, quad_order))
                .collect()
        } else {
            Ok(self.constraint_values(f.coeffs(), 0.0))
        }
    }
}
