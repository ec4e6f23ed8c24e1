//! Dense convex quadratic programs and an operator-splitting solver.
//!
//! Problems are stated as
//!
//! ```text
//! minimize  zᵀ H z + gᵀ z
//! s.t.      A_in z ≤ b_in,   lb ≤ z ≤ ub
//! ```
//!
//! and solved in the two-sided form `½ zᵀ P z + qᵀ z`, `l ≤ C z ≤ u` with
//! `P = 2H`. The solver runs ADMM iterations on a cached factorization and
//! then refines the active set it identifies with exact equality-constrained
//! solves, which brings the KKT residuals down to rounding level.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{DdkError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric positive semidefinite, `d x d`.
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// `r x d` (may have zero rows).
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// A problem with box constraints only.
    pub fn boxed(h: DMatrix<f64>, g: DVector<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        let d = g.len();
        QpProblem {
            h,
            g,
            a_in: DMatrix::zeros(0, d),
            b_in: DVector::zeros(0),
            lb,
            ub,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        (z.transpose() * &self.h * z)[(0, 0)] + self.g.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let check = |what: &'static str, expected: usize, actual: usize| {
            if expected != actual {
                Err(DdkError::Dimension {
                    context: what,
                    expected,
                    actual,
                })
            } else {
                Ok(())
            }
        };
        check("qp hessian rows", d, self.h.nrows())?;
        check("qp hessian cols", d, self.h.ncols())?;
        check("qp inequality cols", d, self.a_in.ncols())?;
        check("qp inequality rhs", self.a_in.nrows(), self.b_in.len())?;
        check("qp lower bound", d, self.lb.len())?;
        check("qp upper bound", d, self.ub.len())?;
        for i in 0..d {
            if self.lb[i] > self.ub[i] {
                return Err(DdkError::InvalidInput(format!(
                    "infeasible box on variable {i}: {} > {}",
                    self.lb[i], self.ub[i]
                )));
            }
        }
        let finite = self
            .h
            .iter()
            .chain(self.g.iter())
            .chain(self.a_in.iter())
            .all(|v| v.is_finite())
            && self.b_in.iter().all(|v| !v.is_nan())
            && self.lb.iter().chain(self.ub.iter()).all(|v| !v.is_nan());
        if !finite {
            return Err(DdkError::NumericDomain("qp data".into()));
        }
        Ok(())
    }

    /// Two-sided form: rows of `A_in` first, then one row per variable.
    fn stacked(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let (r, d) = (self.a_in.nrows(), self.dim());
        let mut c = DMatrix::zeros(r + d, d);
        c.rows_mut(0, r).copy_from(&self.a_in);
        c.view_mut((r, 0), (d, d)).fill_with_identity();
        let mut l = DVector::from_element(r + d, f64::NEG_INFINITY);
        let mut u = DVector::zeros(r + d);
        u.rows_mut(0, r).copy_from(&self.b_in);
        l.rows_mut(r, d).copy_from(&self.lb);
        u.rows_mut(r, d).copy_from(&self.ub);
        (c, l, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub max_iter: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Residual check (and adaptive step) period.
    pub check_every: usize,
    /// Active-set refinement rounds after the ADMM phase.
    pub polish_rounds: usize,
    /// Target for the final KKT residuals.
    pub kkt_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            max_iter: 4000,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            check_every: 10,
            polish_rounds: 30,
            kkt_tol: 1e-6,
        }
    }
}

/// Stationarity, primal feasibility, dual feasibility and complementarity,
/// each as a max-norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multipliers of the two-sided rows (`A_in` rows, then variable bounds);
    /// positive at an active upper side, negative at an active lower side.
    pub y: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub polished: bool,
    pub residuals: KktResiduals,
}

/// KKT residuals of `(z, y)` for `problem` in the two-sided convention.
pub fn kkt_residuals(problem: &QpProblem, z: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
    let (c, l, u) = problem.stacked();
    residuals_two_sided(&(&problem.h * 2.0), &problem.g, &c, &l, &u, z, y)
}

fn residuals_two_sided(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    c: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
) -> KktResiduals {
    let cz = c * z;
    let stationarity = (p * z + q + c.transpose() * y).amax();
    let mut primal = 0.0f64;
    let mut dual = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..cz.len() {
        primal = primal.max(cz[i] - u[i]).max(l[i] - cz[i]);
        let (yp, ym) = (y[i].max(0.0), (-y[i]).max(0.0));
        // A positive multiplier needs a finite upper side, a negative one a
        // finite lower side.
        if u[i].is_infinite() {
            dual = dual.max(yp);
        } else {
            comp = comp.max(yp * (u[i] - cz[i]).abs());
        }
        if l[i].is_infinite() {
            dual = dual.max(ym);
        } else {
            comp = comp.max(ym * (cz[i] - l[i]).abs());
        }
    }
    KktResiduals {
        stationarity,
        primal: primal.max(0.0),
        dual,
        complementarity: comp,
    }
}

/// Reusable solver state for problems sharing `H` and the constraint
/// matrices (the receding-horizon case); only `g` and bounds may change
/// between calls to [`QpSolver::solve`].
#[derive(Debug, Clone)]
pub struct QpSolver {
    settings: SolverSettings,
    p: DMatrix<f64>,
    c: DMatrix<f64>,
    rho: DVector<f64>,
    rho_scalar: f64,
    factor: Option<Cholesky<f64, Dyn>>,
}

fn row_rho(l: f64, u: f64, rho: f64) -> f64 {
    if l == u {
        rho * 1e3
    } else if l.is_infinite() && u.is_infinite() {
        1e-6
    } else {
        rho
    }
}

impl QpSolver {
    pub fn new(problem: &QpProblem, settings: SolverSettings) -> Result<Self> {
        problem.validate()?;
        let (c, _, _) = problem.stacked();
        Ok(QpSolver {
            settings,
            p: &problem.h * 2.0,
            c,
            rho: DVector::zeros(0),
            rho_scalar: settings.rho,
            factor: None,
        })
    }

    fn refactor(&mut self, l: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
        self.rho = DVector::from_fn(l.len(), |i, _| row_rho(l[i], u[i], self.rho_scalar));
        let mut k = self.p.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += self.settings.sigma;
        }
        let mut rc = self.c.clone();
        for (i, mut row) in rc.row_iter_mut().enumerate() {
            row *= self.rho[i];
        }
        k += self.c.transpose() * rc;
        self.factor =
            Some(Cholesky::new(k).ok_or_else(|| DdkError::NumericDomain("qp system not positive definite".into()))?);
        Ok(())
    }

    /// Solves `problem` (which must share `H` and constraint matrices with
    /// the one this solver was built from), optionally warm started from a
    /// primal/dual pair.
    pub fn solve(&mut self, problem: &QpProblem, warm: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<QpSolution> {
        problem.validate()?;
        let (_, l, u) = problem.stacked();
        let q = &problem.g;
        let (d, m) = (problem.dim(), l.len());
        let s = self.settings;
        if self.factor.is_none() || self.rho.len() != m {
            self.refactor(&l, &u)?;
        }

        let (mut x, mut y) = match warm {
            Some((x0, y0)) if x0.len() == d && y0.len() == m => (x0.clone(), y0.clone()),
            _ => (DVector::zeros(d), DVector::zeros(m)),
        };
        let mut z = project(&(&self.c * &x), &l, &u);
        let mut iterations = 0;
        let mut converged = false;

        while iterations < s.max_iter {
            iterations += 1;
            let rhs = &x * s.sigma - q + self.c.transpose() * (self.rho.component_mul(&z) - &y);
            let x_tilde = self.factor.as_ref().unwrap().solve(&rhs);
            let z_tilde = &self.c * &x_tilde;
            let x_next = &x_tilde * s.alpha + &x * (1.0 - s.alpha);
            let z_relaxed = &z_tilde * s.alpha + &z * (1.0 - s.alpha);
            let z_next = project(&(&z_relaxed + y.component_div(&self.rho)), &l, &u);
            y += self.rho.component_mul(&(&z_relaxed - &z_next));
            x = x_next;
            z = z_next;

            if iterations % s.check_every == 0 {
                let cx = &self.c * &x;
                let px = &self.p * &x;
                let cty = self.c.transpose() * &y;
                let r_prim = (&cx - &z).amax();
                let r_dual = (&px + q + &cty).amax();
                let prim_scale = cx.amax().max(z.amax());
                let dual_scale = px.amax().max(cty.amax()).max(q.amax());
                if r_prim <= s.eps_abs + s.eps_rel * prim_scale && r_dual <= s.eps_abs + s.eps_rel * dual_scale {
                    converged = true;
                    break;
                }
                let ratio = ((r_prim / prim_scale.max(1e-12)) / (r_dual / dual_scale.max(1e-12)).max(1e-30)).sqrt();
                let new_rho = (self.rho_scalar * ratio).clamp(1e-6, 1e6);
                if new_rho > 5.0 * self.rho_scalar || new_rho < 0.2 * self.rho_scalar {
                    self.rho_scalar = new_rho;
                    self.refactor(&l, &u)?;
                }
            }
        }

        let mut sol = QpSolution {
            objective: 0.0,
            residuals: residuals_two_sided(&self.p, q, &self.c, &l, &u, &x, &y),
            z: x,
            y,
            iterations,
            converged,
            polished: false,
        };
        if let Some((xp, yp)) = self.polish(q, &l, &u, &sol.z, &sol.y) {
            let r = residuals_two_sided(&self.p, q, &self.c, &l, &u, &xp, &yp);
            if r.max() <= sol.residuals.max() {
                sol.z = xp;
                sol.y = yp;
                sol.residuals = r;
                sol.polished = true;
            }
        }
        sol.converged = sol.residuals.max() < s.kkt_tol;
        sol.objective = problem.objective(&sol.z);
        Ok(sol)
    }

    /// Active-set refinement seeded from the ADMM iterate: solve the
    /// equality-constrained problem on the guessed active rows, then drop
    /// rows with wrong-signed multipliers and add violated rows until the
    /// guess is consistent.
    fn polish(
        &self,
        q: &DVector<f64>,
        l: &DVector<f64>,
        u: &DVector<f64>,
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let m = l.len();
        let cx = &self.c * x;
        // +1 upper active, -1 lower active, 0 inactive.
        let mut side: Vec<i8> = (0..m)
            .map(|i| {
                let tol = 1e-7 * (1.0 + l[i].abs().min(u[i].abs()).min(1e12));
                if l[i] == u[i] {
                    1
                } else if y[i] > 1e-9 || (u[i].is_finite() && cx[i] >= u[i] - tol && y[i] >= 0.0) {
                    if u[i].is_finite() {
                        1
                    } else {
                        0
                    }
                } else if y[i] < -1e-9 || (l[i].is_finite() && cx[i] <= l[i] + tol && y[i] <= 0.0) {
                    if l[i].is_finite() {
                        -1
                    } else {
                        0
                    }
                } else {
                    0
                }
            })
            .collect();

        let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
        for _ in 0..self.settings.polish_rounds {
            let (xp, yp) = self.solve_active(q, l, u, &side)?;
            let r = residuals_two_sided(&self.p, q, &self.c, l, u, &xp, &yp);
            let score = r.max();
            if best.as_ref().is_none_or(|b| score < b.2) {
                best = Some((xp.clone(), yp.clone(), score));
            }
            if score < 1e-9 * (1.0 + q.amax()) {
                break;
            }
            // Most violated inactive row joins; the worst wrong-signed
            // multiplier leaves.
            let cxp = &self.c * &xp;
            let mut changed = false;
            let mut worst_dual = (0.0, usize::MAX);
            for i in 0..m {
                let wrong = match side[i] {
                    1 if l[i] != u[i] => (-yp[i]).max(0.0),
                    -1 => yp[i].max(0.0),
                    _ => 0.0,
                };
                if wrong > worst_dual.0 {
                    worst_dual = (wrong, i);
                }
            }
            let mut worst_primal = (0.0, usize::MAX, 0i8);
            for i in 0..m {
                if side[i] != 0 {
                    continue;
                }
                let over = cxp[i] - u[i];
                let under = l[i] - cxp[i];
                if over > worst_primal.0 {
                    worst_primal = (over, i, 1);
                }
                if under > worst_primal.0 {
                    worst_primal = (under, i, -1);
                }
            }
            if worst_primal.1 != usize::MAX && worst_primal.0 > 1e-12 {
                side[worst_primal.1] = worst_primal.2;
                changed = true;
            }
            if worst_dual.1 != usize::MAX && worst_dual.0 > 1e-12 {
                side[worst_dual.1] = 0;
                changed = true;
            }
            if !changed {
                break;
            }
        }
        best.map(|b| (b.0, b.1))
    }

    /// Equality-constrained solve on the rows marked in `side`, with a small
    /// regularization removed by iterative refinement.
    fn solve_active(
        &self,
        q: &DVector<f64>,
        l: &DVector<f64>,
        u: &DVector<f64>,
        side: &[i8],
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let d = self.p.nrows();
        let active: Vec<usize> = (0..side.len()).filter(|&i| side[i] != 0).collect();
        let na = active.len();
        let delta = 1e-10 * (1.0 + self.p.amax());
        let n = d + na;
        let mut kkt = DMatrix::zeros(n, n);
        kkt.view_mut((0, 0), (d, d)).copy_from(&self.p);
        let mut rhs = DVector::zeros(n);
        rhs.rows_mut(0, d).copy_from(&(-q));
        for (k, &i) in active.iter().enumerate() {
            let row = self.c.row(i);
            kkt.view_mut((d + k, 0), (1, d)).copy_from(&row);
            kkt.view_mut((0, d + k), (d, 1)).copy_from(&row.transpose());
            rhs[d + k] = if side[i] > 0 { u[i] } else { l[i] };
        }
        let mut reg = kkt.clone();
        for i in 0..d {
            reg[(i, i)] += delta;
        }
        for i in d..n {
            reg[(i, i)] -= delta;
        }
        let lu = reg.lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..5 {
            let res = &rhs - &kkt * &sol;
            if res.amax() < 1e-14 * (1.0 + rhs.amax()) {
                break;
            }
            sol += lu.solve(&res)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x = sol.rows(0, d).into_owned();
        let mut y = DVector::zeros(side.len());
        for (k, &i) in active.iter().enumerate() {
            y[i] = sol[d + k];
        }
        Some((x, y))
    }
}

fn project(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].max(l[i]).min(u[i]))
}

/// One-shot solve.
pub fn solve_qp(problem: &QpProblem, warm: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<QpSolution> {
    QpSolver::new(problem, SolverSettings::default())?.solve(problem, warm)
}
