//! Constrained best approximation: minimize the projection error subject to
//! per-subdomain Gibbs constraints, through an augmented-Lagrangian outer
//! loop with BFGS inner solves, regularization continuation, multistart,
//! and direct shortcuts where the solution is known in closed form.

mod bfgs;
mod polish;

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{
    gibbs_1d, GibbsEngine, SubdomainPartition,
};
use crate::projectors::{assemble, GramMatrix, ProjectionProblem};
use crate::spline_space::{DofFunction, SplineSpace};
use crate::target::TargetFn;

pub use bfgs::{minimize, BfgsOptions};

/// A constrained best approximation problem.
#[derive(Clone)]
pub struct ConstrainedProblem {
    pub projection: ProjectionProblem,
    pub partition: SubdomainPartition,
    /// Strictly decreasing regularization continuation schedule.
    pub eps_schedule: Vec<f64>,
    /// Feasibility tolerance on the exact constraint values.
    pub feas_tol: f64,
    /// Stationarity tolerance of the regularized KKT system.
    pub stat_tol: f64,
    /// Outer (multiplier update) iterations per schedule entry.
    pub max_outer: usize,
    /// Number of start points.
    pub multistart: usize,
    pub seed: u64,
}

impl ConstrainedProblem {
    pub fn new(projection: ProjectionProblem, partition: SubdomainPartition) -> Result<Self> {
        let out = Self {
            projection,
            partition,
            eps_schedule: vec![1e-1, 1e-2, 1e-3, 1e-4],
            feas_tol: 1e-6,
            stat_tol: 1e-5,
            max_outer: 12,
            multistart: 5,
            seed: 0,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_schedule.is_empty()
            || self.eps_schedule.iter().any(|&e| e <= 0.0)
            || self.eps_schedule.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidRegularization(
                *self.eps_schedule.last().unwrap_or(&0.0),
            ));
        }
        if self.feas_tol <= 0.0 {
            return Err(Error::Config("feas_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    Infeasible,
    MaxIter,
}

/// How optimality of a converged solution is certified.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Certificate {
    /// The regularized KKT residuals are below their tolerances.
    Kkt,
    /// The feasible set is a single point (continuous linears with
    /// element-wise constraints on a monotone target), so feasibility alone
    /// certifies optimality for every inner product.
    UniqueFeasiblePoint,
}

#[derive(Clone, Copy, Debug)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    /// Dual infeasibility: magnitude of the most negative multiplier.
    pub dual: f64,
    pub complementarity: f64,
}

/// Result of a constrained solve.
pub struct ConstrainedSolution {
    pub solution: DofFunction,
    pub multipliers: Vec<f64>,
    /// Exact per-subdomain constraint values.
    pub constraint_values: Vec<f64>,
    /// Regularized values at the final schedule entry.
    pub constraint_values_reg: Vec<f64>,
    pub residuals: KktResiduals,
    pub status: SolveStatus,
    pub certificate: Certificate,
    /// Projection objective `(c' M c)/2 - b' c` (offset by a target-only
    /// constant from the squared error norm).
    pub objective: f64,
    pub eps_final: f64,
    pub starts_used: usize,
}

/// Monotone interpolant in a C0 space (`alpha = 0`): nodal values at the
/// element boundaries, interior coefficients clamped into the node range so
/// the control polygon (and hence the spline) is monotone per element.
/// Interpolatory plus monotone makes every element-wise Gibbs value exactly
/// zero for targets monotone on each element.
pub fn monotone_interpolant(
    space: &Arc<SplineSpace>,
    target: &dyn TargetFn,
) -> Result<DofFunction> {
    if space.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: space.dim(),
        });
    }
    if space.regularity() != 0 {
        return Err(Error::InvalidPartition(
            "the monotone interpolant needs a C0 space (alpha = 0)".into(),
        ));
    }
    for e in 0..space.n_elements() {
        if element_monotone_direction(space, target, e).is_none() {
            return Err(Error::NotMonotone { element: e });
        }
    }
    let p = space.degree();
    let breaks = space.axis(0).breakpoints();
    let grev = space.axis(0).greville_with_sides();
    let n = space.n_dof();
    let mut coeffs = vec![0.0; n];
    for (i, c) in coeffs.iter_mut().enumerate() {
        if i % p == 0 {
            *c = target.value([breaks[i / p], 0.0]);
        }
    }
    for i in 0..n {
        if i % p != 0 {
            let e = i / p;
            let (vl, vr) = (coeffs[e * p], coeffs[(e + 1) * p]);
            coeffs[i] = target.value([grev[i].0, 0.0]).clamp(vl.min(vr), vl.max(vr));
        }
    }
    DofFunction::new(space.clone(), coeffs)
}

/// Monotonicity direction of the target on one element from gradient
/// samples: `Some(+1.0 | -1.0 | 0.0)` or `None` when signs mix.
fn element_monotone_direction(
    space: &SplineSpace,
    target: &dyn TargetFn,
    e: usize,
) -> Option<f64> {
    let (xl, xr) = space.element(e).bounds[0];
    let mut pos = false;
    let mut neg = false;
    for i in 0..=50 {
        let x = xl + (xr - xl) * i as f64 / 50.0;
        let g = target.gradient([x, 0.0])[0];
        if g > 0.0 {
            pos = true;
        }
        if g < 0.0 {
            neg = true;
        }
    }
    match (pos, neg) {
        (true, true) => None,
        (true, false) => Some(1.0),
        (false, true) => Some(-1.0),
        (false, false) => Some(0.0),
    }
}

/// Residuals of the regularized KKT system at a candidate point.
/// `eps = 0` is allowed only with vanishing multipliers (the constraint
/// Jacobian is undefined at zero regularization).
pub fn kkt_residuals(
    gram: &GramMatrix,
    engine: &GibbsEngine,
    target: &dyn TargetFn,
    candidate: &DofFunction,
    lambda: &[f64],
    eps: f64,
    quad_order: usize,
) -> Result<KktResiduals> {
    let coeffs = candidate.coeffs();
    let mut stat = gram.objective_gradient(coeffs);
    let any_lambda = lambda.iter().any(|&l| l != 0.0);
    let gvals = if any_lambda {
        if eps <= 0.0 {
            return Err(Error::InvalidRegularization(eps));
        }
        let (gvals, jac) = engine.constraints_with_jacobian(coeffs, eps);
        for (i, &a) in gram.free.iter().enumerate() {
            for (j, &l) in lambda.iter().enumerate() {
                stat[i] += l * jac[(j, a)];
            }
        }
        gvals
    } else {
        engine.constraint_values(coeffs, eps)
    };
    let exact = engine.exact_values(target, candidate, quad_order)?;
    let primal = gvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dual = lambda.iter().cloned().fold(0.0f64, |m, l| m.max(-l));
    let compl = lambda
        .iter()
        .zip(&exact)
        .map(|(l, g)| (l * g).abs())
        .fold(0.0f64, f64::max);
    Ok(KktResiduals {
        stationarity: stat.amax(),
        primal,
        dual,
        complementarity: compl,
    })
}

/// Per-subdomain exact constraint report for a named candidate.
#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub values: Vec<f64>,
    pub violated: Vec<usize>,
    pub tol: f64,
}

/// Evaluate the exact Gibbs functionals of a candidate on every subdomain
/// and report which constraints it violates.
pub fn feasibility_probe(
    target: &dyn TargetFn,
    candidate: &DofFunction,
    partition: &SubdomainPartition,
    quad_order: usize,
    tol: f64,
) -> Result<ProbeReport> {
    let space = candidate.space().clone();
    let values: Vec<f64> = partition
        .subdomains
        .iter()
        .map(|omega| {
            if space.dim() == 1 {
                gibbs_1d(target, candidate, omega, quad_order)
            } else {
                crate::gibbs::gibbs_nd(target, candidate, omega, quad_order)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let violated = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > tol)
        .map(|(j, _)| j)
        .collect();
    Ok(ProbeReport {
        values,
        violated,
        tol,
    })
}

struct AlCandidate {
    free: DVector<f64>,
    lambda: Vec<f64>,
    primal_exact: f64,
    objective: f64,
}

/// One augmented-Lagrangian continuation run from a given start.
fn run_augmented_lagrangian(
    gram: &GramMatrix,
    engine: &GibbsEngine,
    target: &dyn TargetFn,
    problem: &ConstrainedProblem,
    x0: DVector<f64>,
) -> Result<AlCandidate> {
    let j = engine.n_constraints();
    let mut x = x0;
    let mut lambda = vec![0.0f64; j];
    let mut rho = 10.0f64;
    let gscale = 1.0 + gram.rhs.amax();
    let quad = problem.projection.quad_order;
    let space = engine.space();
    let measures: Vec<f64> = problem
        .partition
        .subdomains
        .iter()
        .map(|o| {
            o.iter()
                .map(|&e| space.element(e).measure(space.dim()))
                .sum()
        })
        .collect();

    for &eps in &problem.eps_schedule {
        // The regularized integrand exceeds the exact one by up to eps
        // pointwise (flat candidates hit the bound exactly), so constraints
        // are relaxed by that inherent floor and tighten with the schedule.
        let slack: Vec<f64> = measures.iter().map(|m| eps * m).collect();
        let mut v_prev = f64::INFINITY;
        for _outer in 0..problem.max_outer {
            let lam = lambda.clone();
            let objective = |xv: &DVector<f64>, g: &mut DVector<f64>| {
                let full_c = gram.scatter(xv);
                let (gvals, jac) = engine.constraints_with_jacobian(&full_c, eps);
                let mx = &gram.matrix * xv;
                let mut f = 0.5 * xv.dot(&mx) - gram.rhs.dot(xv);
                *g = mx - &gram.rhs;
                for (jj, &gv) in gvals.iter().enumerate() {
                    let m = (lam[jj] + rho * (gv - slack[jj])).max(0.0);
                    f += (m * m - lam[jj] * lam[jj]) / (2.0 * rho);
                    if m > 0.0 {
                        for (i, &a) in gram.free.iter().enumerate() {
                            g[i] += m * jac[(jj, a)];
                        }
                    }
                }
                f
            };
            let res = bfgs::minimize(
                objective,
                x.clone(),
                &BfgsOptions {
                    max_iter: 250,
                    gtol: 1e-10 * gscale,
                    ftol: 1e-16,
                },
            );
            x = res.x;
            let full_c = gram.scatter(&x);
            let gvals = engine.constraint_values(&full_c, eps);
            let mut v = 0.0f64;
            for (jj, &gv) in gvals.iter().enumerate() {
                let relaxed = gv - slack[jj];
                lambda[jj] = (lambda[jj] + rho * relaxed).max(0.0);
                v = v.max(relaxed.max(0.0));
            }
            if v <= problem.feas_tol {
                break;
            }
            if v > 0.25 * v_prev {
                rho = (rho * 10.0).min(1e10);
            }
            v_prev = v;
        }
    }

    let full_c = gram.scatter(&x);
    let cand = DofFunction::new(engine.space().clone(), full_c.clone())?;
    let exact = engine.exact_values(target, &cand, quad)?;
    Ok(AlCandidate {
        primal_exact: exact.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        objective: gram.objective(&full_c),
        free: x,
        lambda,
    })
}

fn seeds_for(
    problem: &ConstrainedProblem,
    gram: &GramMatrix,
    x_unconstrained: &DVector<f64>,
    mono: Option<&DofFunction>,
) -> Vec<DVector<f64>> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let space = &problem.projection.space;
    let mut seeds = vec![x_unconstrained.clone()];
    if let Some(m) = mono {
        seeds.push(gram.restrict(m.coeffs()));
    }
    if space.regularity() == -1 {
        // Element-wise averages of the target: always feasible for
        // discontinuous spaces (piecewise constants have zero variation).
        let mut coeffs = vec![0.0; space.n_dof()];
        let q = problem.projection.quad_order;
        for e in 0..space.n_elements() {
            let info = space.element(e);
            let t = problem.projection.target.clone();
            let avg = crate::quadrature::integrate_element(space, e, q, |x| t.value(x))
                .unwrap_or(0.0)
                / info.measure(space.dim());
            for dof in space.element_dofs(e) {
                coeffs[dof] = avg;
            }
        }
        seeds.push(gram.restrict(&coeffs));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed ^ 0x9e37_79b9);
    let scale = 0.1 * (1.0 + x_unconstrained.amax());
    while seeds.len() < problem.multistart.max(1) {
        let noise = DVector::from_iterator(
            x_unconstrained.len(),
            (0..x_unconstrained.len()).map(|_| rng.random_range(-scale..scale)),
        );
        seeds.push(x_unconstrained + noise);
    }
    seeds.truncate(problem.multistart.max(1));
    seeds
}

/// Solve the constrained best approximation problem.
pub fn solve_constrained(problem: &ConstrainedProblem) -> Result<ConstrainedSolution> {
    problem.validate()?;
    let projection = &problem.projection;
    let space = projection.space.clone();
    let target = projection.target.as_ref();
    let quad = projection.quad_order;
    let eps_final = *problem.eps_schedule.last().unwrap();

    let gram = assemble(projection)?;
    let engine = GibbsEngine::new(
        space.clone(),
        target,
        problem.partition.clone(),
        quad,
    )?;

    let x_unc = gram.solve_free()?;
    let unconstrained = DofFunction::new(space.clone(), gram.scatter(&x_unc))?;

    // Inactive-constraint exit: the unconstrained optimum is already
    // feasible, so it is the solution with vanishing multipliers.
    let exact_unc = engine.exact_values(target, &unconstrained, quad)?;
    let primal_unc = exact_unc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if primal_unc <= problem.feas_tol {
        let lambda = vec![0.0; engine.n_constraints()];
        let reg = engine.constraint_values(unconstrained.coeffs(), eps_final);
        let residuals = kkt_residuals(&gram, &engine, target, &unconstrained, &lambda, eps_final, quad)?;
        let objective = gram.objective(unconstrained.coeffs());
        return Ok(ConstrainedSolution {
            solution: unconstrained,
            multipliers: lambda,
            constraint_values: exact_unc,
            constraint_values_reg: reg,
            residuals: KktResiduals {
                primal: primal_unc,
                ..residuals
            },
            status: SolveStatus::Converged,
            certificate: Certificate::Kkt,
            objective,
            eps_final,
            starts_used: 0,
        });
    }

    // Direct shortcut: continuous linears with element-wise constraints on
    // a per-element-monotone target have the nodal interpolant as the sole
    // feasible point, independent of the inner product.
    let elementwise = problem
        .partition
        .subdomains
        .iter()
        .all(|o| o.len() == 1);
    let mono = if space.dim() == 1 && space.regularity() == 0 {
        monotone_interpolant(&space, target).ok()
    } else {
        None
    };
    if let Some(m) = &mono {
        if space.degree() == 1 && elementwise {
            return finalize_unique_point(problem, &gram, &engine, m.clone());
        }
    }

    // Multistart augmented-Lagrangian runs.
    let seeds = seeds_for(problem, &gram, &x_unc, mono.as_ref());
    let starts_used = seeds.len();
    let runs: Vec<Result<AlCandidate>> = seeds
        .into_par_iter()
        .map(|s| run_augmented_lagrangian(&gram, &engine, target, problem, s))
        .collect();
    let mut candidates = Vec::new();
    for r in runs {
        candidates.push(r?);
    }

    let loose = 100.0 * problem.feas_tol;
    let best_primal = candidates
        .iter()
        .map(|c| c.primal_exact)
        .fold(f64::INFINITY, f64::min);
    let pick = |cands: &[AlCandidate]| -> usize {
        let mut best = 0usize;
        for i in 1..cands.len() {
            let (a, b) = (&cands[i], &cands[best]);
            let fa = a.primal_exact <= loose;
            let fb = b.primal_exact <= loose;
            if fa != fb {
                if fa {
                    best = i;
                }
                continue;
            }
            let tol = 1e-6 * (1.0 + b.objective.abs());
            if a.objective < b.objective - tol {
                best = i;
            } else if (a.objective - b.objective).abs() <= tol {
                let na: f64 = a.lambda.iter().map(|l| l.abs()).sum();
                let nb: f64 = b.lambda.iter().map(|l| l.abs()).sum();
                if na < nb {
                    best = i;
                }
            }
        }
        best
    };
    let winner = pick(&candidates);
    let chosen = &candidates[winner];
    let mut full = gram.scatter(&chosen.free);
    let lambda = chosen.lambda.clone();
    let obj_before = chosen.objective;

    // Exact polish: in the regimes the constraints settle into (per-element
    // monotone or flat), the exact functionals are linear in the
    // coefficients, so an equality-constrained QP lands on the optimum to
    // machine precision.
    let mut lambda = lambda;
    let mut stationarity_override = None;
    if space.dim() == 1 {
        let f = DofFunction::new(space.clone(), full.clone())?;
        if let Some(better) = polish::polish_1d(
            &gram,
            target,
            &problem.partition,
            &f,
            quad,
            problem.feas_tol,
            obj_before,
        )? {
            full = better;
            let polished = DofFunction::new(space.clone(), full.clone())?;
            if let Some((lam, stat)) =
                polish::recover_duals_1d(&gram, target, &problem.partition, &polished, quad)?
            {
                lambda = lam;
                stationarity_override = Some(stat);
            }
        }
    } else {
        let f = DofFunction::new(space.clone(), full.clone())?;
        let exact = engine.exact_values(target, &f, quad)?;
        let primal = exact.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if primal > problem.feas_tol && primal <= loose {
            if let Some(better) = polish::restore_feasibility(
                &gram,
                &engine,
                &chosen.free,
                problem.feas_tol,
                obj_before,
            ) {
                full = gram.scatter(&better);
            }
        }
    }

    let solution = DofFunction::new(space.clone(), full.clone())?;
    let exact = engine.exact_values(target, &solution, quad)?;
    let reg = engine.constraint_values(&full, eps_final);
    let mut residuals =
        kkt_residuals(&gram, &engine, target, &solution, &lambda, eps_final, quad)?;
    if let Some(stat) = stationarity_override {
        // The polished point satisfies the subgradient stationarity of the
        // exact problem with the recovered multipliers; that residual is
        // the meaningful one there.
        residuals.stationarity = stat;
    }
    let primal = exact.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let objective = gram.objective(&full);

    let kkt_ok = primal <= problem.feas_tol
        && residuals.dual <= 1e-10
        && residuals.complementarity <= problem.feas_tol.max(1e-6)
        && residuals.stationarity <= problem.stat_tol * (1.0 + gram.rhs.amax());
    let status = if kkt_ok {
        SolveStatus::Converged
    } else if best_primal > loose {
        SolveStatus::Infeasible
    } else {
        SolveStatus::MaxIter
    };

    Ok(ConstrainedSolution {
        solution,
        multipliers: lambda,
        constraint_values: exact,
        constraint_values_reg: reg,
        residuals: KktResiduals {
            primal,
            ..residuals
        },
        status,
        certificate: Certificate::Kkt,
        objective,
        eps_final,
        starts_used,
    })
}

/// Finalization of the unique-feasible-point shortcut: multipliers come
/// from a non-negative least-squares fit of the stationarity equation with
/// the exact constraint subgradients.
fn finalize_unique_point(
    problem: &ConstrainedProblem,
    gram: &GramMatrix,
    engine: &GibbsEngine,
    interpolant: DofFunction,
) -> Result<ConstrainedSolution> {
    let target = problem.projection.target.as_ref();
    let quad = problem.projection.quad_order;
    let eps_final = *problem.eps_schedule.last().unwrap();
    let full = interpolant.coeffs().to_vec();
    let exact = engine.exact_values(target, &interpolant, quad)?;

    // Exact subgradient rows: per subdomain, sum of signed trace increments.
    let space = interpolant.space().clone();
    let grad_f = gram.objective_gradient(&full);
    let j = engine.n_constraints();
    let mut rows = vec![vec![0.0; gram.n_free()]; j];
    for (jj, omega) in problem.partition.subdomains.iter().enumerate() {
        for &e in omega {
            for (a, b, s) in crate::gibbs::sign_pieces(&interpolant, e) {
                if s == 0.0 {
                    continue;
                }
                let right = space.basis_values([b, 0.0], [crate::spline_space::Side::Left, crate::spline_space::Side::Right])?;
                let left = space.basis_values([a, 0.0], [crate::spline_space::Side::Right, crate::spline_space::Side::Right])?;
                for (dof, v) in right {
                    if let Some(i) = gram.free.iter().position(|&x| x == dof) {
                        rows[jj][i] += s * v;
                    }
                }
                for (dof, v) in left {
                    if let Some(i) = gram.free.iter().position(|&x| x == dof) {
                        rows[jj][i] -= s * v;
                    }
                }
            }
        }
    }
    let lambda = nnls(&rows, &grad_f);
    let mut stat = grad_f.clone();
    for (jj, row) in rows.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            stat[i] += lambda[jj] * v;
        }
    }

    let reg = engine.constraint_values(&full, eps_final);
    let primal = exact.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let compl = lambda
        .iter()
        .zip(&exact)
        .map(|(l, g)| (l * g).abs())
        .fold(0.0f64, f64::max);
    let objective = gram.objective(&full);
    Ok(ConstrainedSolution {
        multipliers: lambda,
        constraint_values: exact,
        constraint_values_reg: reg,
        residuals: KktResiduals {
            stationarity: stat.amax(),
            primal,
            dual: 0.0,
            complementarity: compl,
        },
        status: if primal <= problem.feas_tol {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIter
        },
        certificate: Certificate::UniqueFeasiblePoint,
        objective,
        eps_final,
        starts_used: 0,
        solution: interpolant,
    })
}

/// Small dense non-negative least squares `min || r + A^T lambda ||` over
/// `lambda >= 0` by projected coordinate descent (the systems here have at
/// most a few dozen rows).
fn nnls(rows: &[Vec<f64>], r: &DVector<f64>) -> Vec<f64> {
    let j = rows.len();
    let mut lambda = vec![0.0f64; j];
    if j == 0 {
        return lambda;
    }
    let dots: Vec<f64> = rows.iter().map(|a| a.iter().map(|v| v * v).sum()).collect();
    let mut resid: Vec<f64> = r.iter().cloned().collect();
    for _ in 0..200 * j {
        let mut changed = false;
        for k in 0..j {
            if dots[k] <= 1e-300 {
                continue;
            }
            let dot: f64 = rows[k].iter().zip(&resid).map(|(a, b)| a * b).sum();
            let new = (lambda[k] - dot / dots[k]).max(0.0);
            let delta = new - lambda[k];
            if delta.abs() > 1e-15 * (1.0 + lambda[k].abs()) {
                for (res, a) in resid.iter_mut().zip(&rows[k]) {
                    *res += delta * a;
                }
                lambda[k] = new;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    lambda
}
