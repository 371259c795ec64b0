//! Univariate and tensor-product B-spline spaces on affine boxes.
//!
//! Spaces are built from open uniform knot vectors of degree `p` with a
//! uniform interior regularity `alpha` (interior knot multiplicity
//! `p - alpha`). The geometric map is a per-axis affine scaling, so basis
//! functions live on the parametric interval `[0, 1]` per axis and physical
//! derivatives pick up constant Jacobian factors.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Physical point. One-dimensional spaces use index 0 and ignore index 1.
pub type Point = [f64; 2];

/// Which one-sided limit to take when evaluating exactly on a breakpoint.
///
/// The default is the right limit; the right domain endpoint always resolves
/// to the left limit since no element lies beyond it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Side {
    Left,
    #[default]
    Right,
}

/// Per-axis side hints.
pub type AxisSides = [Side; 2];

pub const SIDES_DEFAULT: AxisSides = [Side::Right, Side::Right];

fn comparable(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

/// Open knot vector of a single parametric direction on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    /// Open uniform knot vector with `n_el` elements and interior knot
    /// multiplicity `p - alpha`.
    pub fn open_uniform(degree: usize, alpha: i64, n_el: usize) -> Result<Self> {
        if alpha < -1 || alpha > degree as i64 - 1 {
            return Err(Error::InvalidRegularity { p: degree, alpha });
        }
        if n_el == 0 {
            return Err(Error::ZeroElements);
        }
        let mult = (degree as i64 - alpha) as usize;
        let mut knots = Vec::with_capacity(2 * (degree + 1) + (n_el - 1) * mult);
        knots.extend(std::iter::repeat(0.0).take(degree + 1));
        for i in 1..n_el {
            let z = i as f64 / n_el as f64;
            knots.extend(std::iter::repeat(z).take(mult));
        }
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        Ok(Self { knots, degree })
    }

    /// Wrap an existing open knot vector.
    pub fn from_knots(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::InvalidKnots(format!(
                "need at least {} knots for degree {}",
                2 * (degree + 1),
                degree
            )));
        }
        if knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidKnots("knots must be non-decreasing".into()));
        }
        let first = knots[0];
        let last = *knots.last().unwrap();
        let head = knots.iter().take_while(|&&k| k == first).count();
        let tail = knots.iter().rev().take_while(|&&k| k == last).count();
        if head != degree + 1 || tail != degree + 1 {
            return Err(Error::InvalidKnots(format!(
                "open vector needs end multiplicity {} (got {head} and {tail})",
                degree + 1
            )));
        }
        Ok(Self { knots, degree })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions: `len - p - 1`.
    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Distinct knot values with multiplicities and regularities `p - k_i`.
    pub fn unique_knots(&self) -> UniqueKnots {
        let mut zeta = Vec::new();
        let mut mult = Vec::new();
        for &k in &self.knots {
            match zeta.last() {
                Some(&z) if comparable(z) == comparable(k) => {
                    *mult.last_mut().unwrap() += 1;
                }
                _ => {
                    zeta.push(k);
                    mult.push(1usize);
                }
            }
        }
        let regularities = mult
            .iter()
            .map(|&m| self.degree as i64 - m as i64)
            .collect();
        UniqueKnots {
            zeta,
            multiplicities: mult,
            regularities,
        }
    }
}

/// Distinct knots of a [`KnotVector`] with per-knot multiplicity and
/// regularity. End regularities are `-1` for open vectors.
#[derive(Clone, Debug)]
pub struct UniqueKnots {
    pub zeta: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub regularities: Vec<i64>,
}

impl UniqueKnots {
    pub fn n_elements(&self) -> usize {
        self.zeta.len() - 1
    }
}

/// One parametric direction together with its affine map into physical space.
#[derive(Clone, Debug)]
pub struct AxisSpace {
    knots: KnotVector,
    zeta: Vec<f64>,
    span_of_element: Vec<usize>,
    n_el: usize,
    lo: f64,
    hi: f64,
}

impl AxisSpace {
    fn new(knots: KnotVector, lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidKnots(format!(
                "degenerate physical interval [{lo}, {hi}]"
            )));
        }
        let unique = knots.unique_knots();
        let zeta = unique.zeta.clone();
        let n_el = unique.n_elements();
        // span_of_element[e] = largest knot index k with knots[k] == zeta[e].
        let mut span_of_element = Vec::with_capacity(n_el);
        let ks = knots.knots();
        for e in 0..n_el {
            let z = zeta[e];
            let mut k = 0;
            while k + 1 < ks.len() && ks[k + 1] <= z {
                k += 1;
            }
            span_of_element.push(k);
        }
        Ok(Self {
            knots,
            zeta,
            span_of_element,
            n_el,
            lo,
            hi,
        })
    }

    pub fn degree(&self) -> usize {
        self.knots.degree()
    }

    pub fn n_basis(&self) -> usize {
        self.knots.n_basis()
    }

    pub fn n_elements(&self) -> usize {
        self.n_el
    }

    pub fn knot_vector(&self) -> &KnotVector {
        &self.knots
    }

    /// Physical interval covered by this axis.
    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Jacobian of the affine map (physical length of the parametric unit).
    pub fn scale(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn to_param(&self, x: f64) -> f64 {
        (x - self.lo) / self.scale()
    }

    pub fn to_phys(&self, u: f64) -> f64 {
        self.lo + u * self.scale()
    }

    /// Physical breakpoints (element boundaries).
    pub fn breakpoints(&self) -> Vec<f64> {
        self.zeta.iter().map(|&z| self.to_phys(z)).collect()
    }

    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        (self.to_phys(self.zeta[e]), self.to_phys(self.zeta[e + 1]))
    }

    fn contains(&self, x: f64) -> bool {
        let tol = 1e-12 * self.scale().abs().max(1.0);
        x >= self.lo - tol && x <= self.hi + tol
    }

    /// Element index holding the physical point `x`, honoring the side hint
    /// at breakpoints (within a relative tolerance, so points computed with
    /// roundoff still hit the intended side). The ends clamp to the first
    /// and last element.
    pub fn element_of(&self, x: f64, side: Side) -> Result<usize> {
        if !self.contains(x) {
            return Err(Error::PointOutsideDomain { x, y: 0.0 });
        }
        let u = self.to_param(x).clamp(0.0, 1.0);
        let m = self.zeta.len();
        let tol = 1e-12;
        // Breakpoint hit: side decides between the two adjacent elements.
        let hit = match self.zeta.binary_search_by(|z| z.partial_cmp(&u).unwrap()) {
            Ok(i) => Some(i),
            Err(i) => {
                if u - self.zeta[i - 1] <= tol {
                    Some(i - 1)
                } else if i < m && self.zeta[i] - u <= tol {
                    Some(i)
                } else {
                    None
                }
            }
        };
        let e = match hit {
            Some(k) => match side {
                Side::Right => k.min(m - 2),
                Side::Left => k.saturating_sub(1).min(m - 2),
            },
            None => {
                let i = self
                    .zeta
                    .binary_search_by(|z| z.partial_cmp(&u).unwrap())
                    .unwrap_err();
                (i - 1).min(m - 2)
            }
        };
        Ok(e)
    }

    /// Nonzero basis values and derivatives up to `max_der` at physical `x`.
    ///
    /// Returns `(first_dof, ders)` where `ders[r][j]` is the r-th physical
    /// derivative of basis function `first_dof + j`.
    pub fn eval(&self, x: f64, side: Side, max_der: usize) -> Result<(usize, Vec<Vec<f64>>)> {
        let e = self.element_of(x, side)?;
        let span = self.span_of_element[e];
        let u = self.to_param(x).clamp(0.0, 1.0);
        let mut ders = self.ders_basis_funs(span, u, max_der);
        // Chain rule for the affine map.
        let inv = 1.0 / self.scale();
        let mut factor = 1.0;
        for row in ders.iter_mut().skip(1) {
            factor *= inv;
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        Ok((span - self.degree(), ders))
    }

    /// Triangular-scheme basis derivatives on a valid span (no zero
    /// denominators can occur there; the zero-fraction convention only
    /// matters for naive recursion over all indices).
    fn ders_basis_funs(&self, span: usize, u: f64, max_der: usize) -> Vec<Vec<f64>> {
        let p = self.degree();
        let n = max_der;
        let ks = self.knots.knots();
        let mut ndu = vec![vec![0.0f64; p + 1]; p + 1];
        let mut left = vec![0.0f64; p + 1];
        let mut right = vec![0.0f64; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - ks[span + 1 - j];
            right[j] = ks[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0f64; p + 1]; n + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        if n == 0 {
            return ders;
        }
        let mut a = vec![vec![0.0f64; p + 1]; 2];
        for r in 0..=p {
            let mut s1 = 0usize;
            let mut s2 = 1usize;
            a[0][0] = 1.0;
            for k in 1..=n.min(p) {
                let mut d = 0.0;
                let rk = r as i64 - k as i64;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as i64 - 1 <= pk as i64 {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    a[s2][j] =
                        (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as i64) as usize];
                    d += a[s2][j] * ndu[(rk + j as i64) as usize][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=n.min(p) {
            for j in 0..=p {
                ders[k][j] *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Greville collocation of a univariate function on this axis.
    pub fn interpolate(&self, f: &dyn Fn(f64) -> f64) -> Result<Vec<f64>> {
        let g = self.greville_with_sides();
        let vals: Vec<f64> = g.iter().map(|&(x, _)| f(x)).collect();
        univariate_collocation_solve(self, &g, &vals)
    }

    /// Greville abscissae in physical coordinates, each with the evaluation
    /// side that keeps collocation of discontinuous spaces non-singular:
    /// a point sitting at the right end of its basis function's support is
    /// evaluated from the left.
    pub fn greville_with_sides(&self) -> Vec<(f64, Side)> {
        let p = self.degree();
        let ks = self.knots.knots();
        let n = self.n_basis();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let u = if p == 0 {
                0.5 * (ks[i] + ks[i + 1])
            } else {
                ks[i + 1..i + 1 + p].iter().sum::<f64>() / p as f64
            };
            let support_end = ks[i + p + 1];
            let side = if (support_end - u).abs() <= 1e-12 {
                Side::Left
            } else {
                Side::Right
            };
            out.push((self.to_phys(u), side));
        }
        out
    }
}

/// Box element of the physical mesh.
#[derive(Clone, Copy, Debug)]
pub struct ElementInfo {
    pub index: usize,
    /// Per-axis element indices; index 1 is zero in one dimension.
    pub axis_index: [usize; 2],
    /// Per-axis physical bounds; axis 1 is `(0, 1)` placeholder in 1D.
    pub bounds: [(f64, f64); 2],
}

impl ElementInfo {
    pub fn measure(&self, dim: usize) -> f64 {
        (0..dim)
            .map(|l| self.bounds[l].1 - self.bounds[l].0)
            .product()
    }

    pub fn center(&self) -> Point {
        [
            0.5 * (self.bounds[0].0 + self.bounds[0].1),
            0.5 * (self.bounds[1].0 + self.bounds[1].1),
        ]
    }
}

/// Tensor-product B-spline space on an axis-aligned box, `d` in {1, 2}.
///
/// Dof and element indices are row-major with direction 0 fastest:
/// `A = i0 + i1 * n0`, `e = e0 + e1 * nel0`.
#[derive(Clone, Debug)]
pub struct SplineSpace {
    dim: usize,
    axes: Vec<AxisSpace>,
}

impl SplineSpace {
    pub fn new_1d(degree: usize, alpha: i64, n_el: usize, interval: (f64, f64)) -> Result<Self> {
        let knots = KnotVector::open_uniform(degree, alpha, n_el)?;
        Ok(Self {
            dim: 1,
            axes: vec![AxisSpace::new(knots, interval.0, interval.1)?],
        })
    }

    pub fn new_2d(
        degree: usize,
        alpha: i64,
        n_el: (usize, usize),
        bounds: ((f64, f64), (f64, f64)),
    ) -> Result<Self> {
        let kx = KnotVector::open_uniform(degree, alpha, n_el.0)?;
        let ky = KnotVector::open_uniform(degree, alpha, n_el.1)?;
        Ok(Self {
            dim: 2,
            axes: vec![
                AxisSpace::new(kx, bounds.0 .0, bounds.0 .1)?,
                AxisSpace::new(ky, bounds.1 .0, bounds.1 .1)?,
            ],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axis(&self, l: usize) -> &AxisSpace {
        &self.axes[l]
    }

    pub fn degree(&self) -> usize {
        self.axes[0].degree()
    }

    pub fn regularity(&self) -> i64 {
        let u = self.axes[0].knot_vector().unique_knots();
        if u.zeta.len() > 2 {
            u.regularities[1]
        } else {
            // Single element: interior regularity is vacuous; report max.
            self.degree() as i64 - 1
        }
    }

    pub fn n_dof(&self) -> usize {
        self.axes.iter().map(|a| a.n_basis()).product()
    }

    pub fn n_elements(&self) -> usize {
        self.axes.iter().map(|a| a.n_elements()).product()
    }

    pub fn n_elements_per_axis(&self) -> [usize; 2] {
        let mut out = [1; 2];
        for (l, a) in self.axes.iter().enumerate() {
            out[l] = a.n_elements();
        }
        out
    }

    pub fn n_basis_per_axis(&self) -> [usize; 2] {
        let mut out = [1; 2];
        for (l, a) in self.axes.iter().enumerate() {
            out[l] = a.n_basis();
        }
        out
    }

    /// Uniform element width of axis `l`.
    pub fn h(&self, l: usize) -> f64 {
        self.axes[l].scale() / self.axes[l].n_elements() as f64
    }

    pub fn dof_index(&self, ij: [usize; 2]) -> usize {
        ij[0] + ij[1] * self.axes[0].n_basis()
    }

    pub fn dof_multi_index(&self, dof: usize) -> [usize; 2] {
        let n0 = self.axes[0].n_basis();
        [dof % n0, dof / n0]
    }

    pub fn element_index(&self, e_axis: [usize; 2]) -> usize {
        e_axis[0] + e_axis[1] * self.axes[0].n_elements()
    }

    pub fn element(&self, e: usize) -> ElementInfo {
        let nel0 = self.axes[0].n_elements();
        let ax = [e % nel0, e / nel0];
        let mut bounds = [(0.0, 1.0); 2];
        for l in 0..self.dim {
            bounds[l] = self.axes[l].element_bounds(ax[l]);
        }
        ElementInfo {
            index: e,
            axis_index: ax,
            bounds,
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = ElementInfo> + '_ {
        (0..self.n_elements()).map(move |e| self.element(e))
    }

    /// Global dof indices with support on element `e`.
    pub fn element_dofs(&self, e: usize) -> Vec<usize> {
        let info = self.element(e);
        let p = self.degree();
        let mut firsts = [0usize; 2];
        for l in 0..self.dim {
            firsts[l] = self.axes[l].span_of_element[info.axis_index[l]] - p;
        }
        match self.dim {
            1 => (firsts[0]..firsts[0] + p + 1).collect(),
            _ => {
                let mut out = Vec::with_capacity((p + 1) * (p + 1));
                for j in 0..p + 1 {
                    for i in 0..p + 1 {
                        out.push(self.dof_index([firsts[0] + i, firsts[1] + j]));
                    }
                }
                out
            }
        }
    }

    /// Dofs whose basis functions carry the trace on the domain boundary.
    pub fn boundary_dofs(&self) -> Vec<usize> {
        let n0 = self.axes[0].n_basis();
        match self.dim {
            1 => vec![0, n0 - 1],
            _ => {
                let n1 = self.axes[1].n_basis();
                let mut out = Vec::new();
                for j in 0..n1 {
                    for i in 0..n0 {
                        if i == 0 || i == n0 - 1 || j == 0 || j == n1 - 1 {
                            out.push(self.dof_index([i, j]));
                        }
                    }
                }
                out
            }
        }
    }

    pub fn domain_contains(&self, x: Point) -> bool {
        (0..self.dim).all(|l| self.axes[l].contains(x[l]))
    }

    /// Nonzero basis values at `x`. Returns `(dof, value)` pairs.
    pub fn basis_values(&self, x: Point, sides: AxisSides) -> Result<Vec<(usize, f64)>> {
        self.check_point(x)?;
        let p = self.degree();
        match self.dim {
            1 => {
                let (first, ders) = self.axes[0].eval(x[0], sides[0], 0)?;
                Ok(ders[0]
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| (first + j, v))
                    .collect())
            }
            _ => {
                let (f0, d0) = self.axes[0].eval(x[0], sides[0], 0)?;
                let (f1, d1) = self.axes[1].eval(x[1], sides[1], 0)?;
                let mut out = Vec::with_capacity((p + 1) * (p + 1));
                for (j, &vj) in d1[0].iter().enumerate() {
                    for (i, &vi) in d0[0].iter().enumerate() {
                        out.push((self.dof_index([f0 + i, f1 + j]), vi * vj));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Nonzero basis values and gradients at `x`: `(dof, value, grad)`.
    pub fn basis_values_and_grads(
        &self,
        x: Point,
        sides: AxisSides,
    ) -> Result<Vec<(usize, f64, [f64; 2])>> {
        self.check_point(x)?;
        let p = self.degree();
        match self.dim {
            1 => {
                let (first, ders) = self.axes[0].eval(x[0], sides[0], 1)?;
                Ok((0..p + 1)
                    .map(|j| (first + j, ders[0][j], [ders[1][j], 0.0]))
                    .collect())
            }
            _ => {
                let (f0, d0) = self.axes[0].eval(x[0], sides[0], 1)?;
                let (f1, d1) = self.axes[1].eval(x[1], sides[1], 1)?;
                let mut out = Vec::with_capacity((p + 1) * (p + 1));
                for j in 0..p + 1 {
                    for i in 0..p + 1 {
                        out.push((
                            self.dof_index([f0 + i, f1 + j]),
                            d0[0][i] * d1[0][j],
                            [d0[1][i] * d1[0][j], d0[0][i] * d1[1][j]],
                        ));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Nonzero values of the `r`-th basis derivative at `x`, `r` in {0, 1}.
    /// First derivatives are scalar only in one dimension; use
    /// [`Self::basis_values_and_grads`] for gradients in 2D.
    pub fn eval_basis(
        &self,
        x: Point,
        sides: AxisSides,
        r: usize,
    ) -> Result<Vec<(usize, f64)>> {
        match (self.dim, r) {
            (_, 0) => self.basis_values(x, sides),
            (1, 1) => {
                self.check_point(x)?;
                let (first, ders) = self.axes[0].eval(x[0], sides[0], 1)?;
                Ok(ders[1]
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| (first + j, v))
                    .collect())
            }
            _ => Err(Error::UnsupportedDerivative {
                requested: r,
                max: if self.dim == 1 { 1 } else { 0 },
            }),
        }
    }

    fn check_point(&self, x: Point) -> Result<()> {
        if self.domain_contains(x) {
            Ok(())
        } else {
            Err(Error::PointOutsideDomain { x: x[0], y: x[1] })
        }
    }

    /// Greville interpolation of `f`, solved per axis (tensor collocation).
    pub fn greville_interpolate(
        self: &Arc<Self>,
        f: &dyn Fn(Point) -> f64,
    ) -> Result<DofFunction> {
        let g0 = self.axes[0].greville_with_sides();
        match self.dim {
            1 => {
                let vals: Vec<f64> = g0.iter().map(|&(x, _)| f([x, 0.0])).collect();
                let coeffs = univariate_collocation_solve(&self.axes[0], &g0, &vals)?;
                DofFunction::new(self.clone(), coeffs)
            }
            _ => {
                let g1 = self.axes[1].greville_with_sides();
                let n0 = self.axes[0].n_basis();
                let n1 = self.axes[1].n_basis();
                // Interpolate along axis 0 for each Greville line of axis 1,
                // then along axis 1.
                let mut temp = vec![0.0; n0 * n1];
                for (j, &(y, _)) in g1.iter().enumerate() {
                    let vals: Vec<f64> = g0.iter().map(|&(x, _)| f([x, y])).collect();
                    let row = univariate_collocation_solve(&self.axes[0], &g0, &vals)?;
                    for i in 0..n0 {
                        temp[i + j * n0] = row[i];
                    }
                }
                let mut coeffs = vec![0.0; n0 * n1];
                for i in 0..n0 {
                    let vals: Vec<f64> = (0..n1).map(|j| temp[i + j * n0]).collect();
                    let col = univariate_collocation_solve(&self.axes[1], &g1, &vals)?;
                    for j in 0..n1 {
                        coeffs[i + j * n0] = col[j];
                    }
                }
                DofFunction::new(self.clone(), coeffs)
            }
        }
    }
}

fn univariate_collocation_solve(
    axis: &AxisSpace,
    points: &[(f64, Side)],
    values: &[f64],
) -> Result<Vec<f64>> {
    let n = axis.n_basis();
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for (row, &(x, side)) in points.iter().enumerate() {
        let (first, ders) = axis.eval(x, side, 0)?;
        for (j, &v) in ders[0].iter().enumerate() {
            m[(row, first + j)] = v;
        }
    }
    let rhs = nalgebra::DVector::from_column_slice(values);
    let lu = m.lu();
    lu.solve(&rhs)
        .map(|c| c.as_slice().to_vec())
        .ok_or(Error::SingularInterpolation)
}

/// A member of a spline space: coefficient vector over the space's dofs.
#[derive(Clone, Debug)]
pub struct DofFunction {
    space: Arc<SplineSpace>,
    coeffs: Vec<f64>,
}

impl DofFunction {
    pub fn new(space: Arc<SplineSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dof() {
            return Err(Error::CoefficientLength {
                expected: space.n_dof(),
                got: coeffs.len(),
            });
        }
        Ok(Self { space, coeffs })
    }

    pub fn constant(space: Arc<SplineSpace>, c: f64) -> Self {
        let n = space.n_dof();
        Self {
            space,
            coeffs: vec![c; n],
        }
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn value(&self, x: Point, sides: AxisSides) -> Result<f64> {
        Ok(self
            .space
            .basis_values(x, sides)?
            .iter()
            .map(|&(a, v)| self.coeffs[a] * v)
            .sum())
    }

    pub fn gradient(&self, x: Point, sides: AxisSides) -> Result<[f64; 2]> {
        let mut g = [0.0; 2];
        for (a, _, ga) in self.space.basis_values_and_grads(x, sides)? {
            g[0] += self.coeffs[a] * ga[0];
            g[1] += self.coeffs[a] * ga[1];
        }
        Ok(g)
    }

    /// Convenience for one-dimensional spaces.
    pub fn value_1d(&self, x: f64) -> f64 {
        self.value([x, 0.0], SIDES_DEFAULT).unwrap()
    }

    pub fn deriv_1d(&self, x: f64, side: Side) -> f64 {
        self.gradient([x, 0.0], [side, Side::Right]).unwrap()[0]
    }
}
