//! Dense BFGS with a strong-Wolfe line search, sized for the dof counts of
//! the constrained projection problems (hundreds of unknowns).

use nalgebra::{DMatrix, DVector};

pub struct BfgsOptions {
    pub max_iter: usize,
    pub gtol: f64,
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            gtol: 1e-9,
            ftol: 1e-14,
        }
    }
}

pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Minimize `f` starting from `x0`. The callback returns the value and
/// writes the gradient.
pub fn minimize<F>(mut fg: F, x0: DVector<f64>, opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = DVector::zeros(n);
    let mut f = fg(&x, &mut g);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        let gnorm = g.amax();
        if gnorm <= opts.gtol {
            break;
        }
        iterations += 1;
        let mut d = -(&h * &g);
        let mut dg = d.dot(&g);
        if dg >= 0.0 {
            // Stale curvature; restart from steepest descent.
            h = DMatrix::identity(n, n);
            d = -g.clone();
            dg = d.dot(&g);
        }

        let mut g_new = DVector::zeros(n);
        let (alpha, f_new) = strong_wolfe(
            |a, grad_out: &mut DVector<f64>| {
                let xt = &x + a * &d;
                let v = fg(&xt, grad_out);
                (v, grad_out.dot(&d))
            },
            f,
            dg,
            &mut g_new,
        );
        if alpha == 0.0 {
            break;
        }
        let s = alpha * &d;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let x_new = &x + &s;

        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                let scale = sy / y.dot(&y);
                h = DMatrix::identity(n, n) * scale;
                first = false;
            }
            // Inverse BFGS update.
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            let rho = 1.0 / sy;
            // H += (1 + yHy/sy) rho s s^T - rho (H y s^T + s y^T H).
            let c1 = (1.0 + yhy * rho) * rho;
            h.ger(c1, &s, &s, 1.0);
            h.ger(-rho, &hy, &s, 1.0);
            h.ger(-rho, &s, &hy, 1.0);
        }

        let f_drop = (f - f_new).abs();
        x = x_new;
        g = g_new;
        let stalled = f_drop <= opts.ftol * (1.0 + f.abs());
        f = f_new;
        if stalled {
            break;
        }
    }

    BfgsResult {
        grad_norm: g.amax(),
        x,
        f,
        iterations,
    }
}

/// Strong-Wolfe line search (bracket and zoom). `phi` returns the value and
/// directional derivative at step `a` and writes the full gradient, so the
/// accepted gradient is reused by the caller.
fn strong_wolfe<F>(mut phi: F, f0: f64, dphi0: f64, g_out: &mut DVector<f64>) -> (f64, f64)
where
    F: FnMut(f64, &mut DVector<f64>) -> (f64, f64),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    const MAX_ALPHA: f64 = 1e6;

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut dphi_prev = dphi0;
    let mut alpha = 1.0;
    let mut best = (0.0, f0);

    for iter in 0..30 {
        let (fa, da) = phi(alpha, g_out);
        if fa.is_finite() && fa < best.1 {
            best = (alpha, fa);
        }
        if fa > f0 + C1 * alpha * dphi0 || (iter > 0 && fa >= f_prev) || !fa.is_finite() {
            return zoom(
                &mut phi, f0, dphi0, alpha_prev, f_prev, dphi_prev, alpha, g_out, best,
            );
        }
        if da.abs() <= -C2 * dphi0 {
            return (alpha, fa);
        }
        if da >= 0.0 {
            return zoom(&mut phi, f0, dphi0, alpha, fa, da, alpha_prev, g_out, best);
        }
        alpha_prev = alpha;
        f_prev = fa;
        dphi_prev = da;
        alpha = (2.0 * alpha).min(MAX_ALPHA);
        let _ = dphi_prev;
    }
    // Re-evaluate at the best point so the caller's gradient is consistent.
    let (fb, _) = phi(best.0, g_out);
    (best.0, fb)
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    phi: &mut F,
    f0: f64,
    dphi0: f64,
    mut lo: f64,
    mut f_lo: f64,
    mut d_lo: f64,
    mut hi: f64,
    g_out: &mut DVector<f64>,
    mut best: (f64, f64),
) -> (f64, f64)
where
    F: FnMut(f64, &mut DVector<f64>) -> (f64, f64),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    for _ in 0..40 {
        // Bisection with a safeguarded quadratic guess.
        let mut a = 0.5 * (lo + hi);
        if d_lo.is_finite() && (hi - lo).abs() > 1e-16 {
            let quad = lo - 0.5 * d_lo * (hi - lo).powi(2)
                / (f_lo - f0 - d_lo * (hi - lo)).max(1e-300);
            if quad.is_finite() && quad > lo.min(hi) && quad < lo.max(hi) {
                a = quad;
            }
        }
        let (fa, da) = phi(a, g_out);
        if fa.is_finite() && fa < best.1 {
            best = (a, fa);
        }
        if fa > f0 + C1 * a * dphi0 || fa >= f_lo || !fa.is_finite() {
            hi = a;
        } else {
            if da.abs() <= -C2 * dphi0 {
                return (a, fa);
            }
            if da * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = a;
            f_lo = fa;
            d_lo = da;
        }
        if (hi - lo).abs() < 1e-14 * lo.abs().max(1.0) {
            break;
        }
    }
    let (fb, _) = phi(best.0, g_out);
    (best.0, fb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        // f(x) = 0.5 x^T A x - b^T x with SPD A.
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let b = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let res = minimize(
            |x, g| {
                let ax = &a * x;
                *g = &ax - &b;
                0.5 * x.dot(&ax) - b.dot(x)
            },
            DVector::zeros(3),
            &BfgsOptions::default(),
        );
        let exact = a.clone().lu().solve(&b).unwrap();
        assert!((res.x - exact).amax() < 1e-7);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let res = minimize(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            DVector::from_column_slice(&[-1.2, 1.0]),
            &BfgsOptions {
                max_iter: 500,
                gtol: 1e-10,
                ftol: 1e-16,
            },
        );
        assert!((res.x[0] - 1.0).abs() < 1e-6 && (res.x[1] - 1.0).abs() < 1e-6);
    }
}
