//! Condensed QP construction and the receding-horizon controller.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::config::MpcConfig;
use super::prediction::{build_prediction, AugmentedModel, PredictionMatrices};
use super::qp::{QpProblem, QpSolution, QpSolver, SolverSettings};
use crate::error::{DdkError, Result};
use crate::koopman::model::LatentModel;
use crate::sim::vehicle::{Control, VehicleState, CONTROL_DIM, STATE_DIM};
use crate::train::transform::se2_transform;

/// Block-diagonal repetition of `w`.
fn repeat_diag(w: &DMatrix<f64>, times: usize) -> DMatrix<f64> {
    let k = w.nrows();
    let mut out = DMatrix::zeros(k * times, k * times);
    for i in 0..times {
        out.view_mut((i * k, i * k), (k, k)).copy_from(w);
    }
    out
}

/// Constraint rows for `z = [ΔU; ε]`, shared by every step:
/// `Δu_i − ε ≤ Δu_max`, `−Δu_i − ε ≤ −Δu_min`, then the cumulative sums
/// `Σ_{j≤i} Δu_j ≤ u_max − u_prev` and `−Σ_{j≤i} Δu_j ≤ u_prev − u_min`.
fn constraint_matrix(n: usize, nc: usize) -> DMatrix<f64> {
    let nu = n * nc;
    let mut a = DMatrix::zeros(4 * nu, nu + 1);
    for i in 0..nu {
        a[(i, i)] = 1.0;
        a[(i, nu)] = -1.0;
        a[(nu + i, i)] = -1.0;
        a[(nu + i, nu)] = -1.0;
    }
    for blk in 0..nc {
        for j in 0..=blk {
            for c in 0..n {
                a[(2 * nu + blk * n + c, j * n + c)] = 1.0;
                a[(3 * nu + blk * n + c, j * n + c)] = -1.0;
            }
        }
    }
    a
}

/// Quadratic and linear cost of the condensed problem and the constraint
/// data for one step.
pub fn build_qp(
    phi: &DVector<f64>,
    y_ref: &DVector<f64>,
    pred: &PredictionMatrices,
    cfg: &MpcConfig,
    u_prev: &[f64; CONTROL_DIM],
) -> Result<QpProblem> {
    cfg.validate()?;
    let m = cfg.q.nrows();
    if y_ref.len() != m * pred.np {
        return Err(DdkError::Dimension {
            context: "reference stack",
            expected: m * pred.np,
            actual: y_ref.len(),
        });
    }
    let n = CONTROL_DIM;
    let nu = n * pred.nc;
    let qq = repeat_diag(&cfg.q, pred.np);
    let rr = repeat_diag(&cfg.r, pred.nc);
    let btq = pred.b.transpose() * &qq;
    let mut h = DMatrix::zeros(nu + 1, nu + 1);
    h.view_mut((0, 0), (nu, nu)).copy_from(&(&btq * &pred.b + rr));
    h[(nu, nu)] = cfg.rho;
    let e = &pred.a * phi - y_ref;
    let mut g = DVector::zeros(nu + 1);
    g.rows_mut(0, nu).copy_from(&(&btq * e * 2.0));
    Ok(QpProblem {
        h,
        g,
        a_in: constraint_matrix(n, pred.nc),
        b_in: constraint_rhs(cfg, pred.nc, u_prev),
        lb: lower_bounds(cfg, nu),
        ub: upper_bounds(cfg, nu),
    })
}

fn constraint_rhs(cfg: &MpcConfig, nc: usize, u_prev: &[f64; CONTROL_DIM]) -> DVector<f64> {
    let n = CONTROL_DIM;
    let nu = n * nc;
    DVector::from_fn(4 * nu, |r, _| {
        let c = r % n;
        match r / nu {
            0 => cfg.du_max[c],
            1 => -cfg.du_min[c],
            2 => cfg.u_max[c] - u_prev[c],
            _ => u_prev[c] - cfg.u_min[c],
        }
    })
}

fn lower_bounds(cfg: &MpcConfig, nu: usize) -> DVector<f64> {
    let mut lb = DVector::from_element(nu + 1, f64::NEG_INFINITY);
    lb[nu] = cfg.eps_min;
    lb
}

fn upper_bounds(cfg: &MpcConfig, nu: usize) -> DVector<f64> {
    let mut ub = DVector::from_element(nu + 1, f64::INFINITY);
    ub[nu] = cfg.eps_max;
    ub
}

/// Outcome of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Applied plant command.
    pub control: Control,
    /// Applied control in normalized units (becomes the next `u_prev`).
    pub u_norm: [f64; CONTROL_DIM],
    pub du: DVector<f64>,
    pub eps: f64,
    pub iterations: usize,
    pub converged: bool,
    pub solve_ms: f64,
}

/// Receding-horizon controller with the model-dependent matrices cached.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub model: LatentModel,
    pub cfg: MpcConfig,
    pub pred: PredictionMatrices,
    btq2: DMatrix<f64>,
    template: QpProblem,
    solver: QpSolver,
    warm: Option<(DVector<f64>, DVector<f64>)>,
}

impl MpcController {
    pub fn new(model: LatentModel, cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        if model.state_dim() != STATE_DIM || model.control_dim() != CONTROL_DIM {
            return Err(DdkError::InvalidInput(
                "controller needs a 6-state, 2-input model".into(),
            ));
        }
        let am = AugmentedModel::from_parts(&model.a(), &model.b, model.state_dim());
        let pred = build_prediction(&am, cfg.np, cfg.nc)?;
        let phi = DVector::zeros(am.state_dim());
        let y_ref = DVector::zeros(STATE_DIM * cfg.np);
        let template = build_qp(&phi, &y_ref, &pred, &cfg, &[0.0; CONTROL_DIM])?;
        let btq2 = pred.b.transpose() * repeat_diag(&cfg.q, cfg.np) * 2.0;
        let solver = QpSolver::new(&template, SolverSettings::default())?;
        Ok(MpcController {
            model,
            cfg,
            pred,
            btq2,
            template,
            solver,
            warm: None,
        })
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// Ego-frame normalized stack of `N_p` reference states, padded by
    /// holding the last point.
    pub fn reference_stack(&self, state: &VehicleState, refs: &[VehicleState]) -> Result<DVector<f64>> {
        if refs.is_empty() {
            return Err(DdkError::InvalidInput("empty reference window".into()));
        }
        let origin = [state.x, state.y, state.psi];
        let np = self.cfg.np;
        let mut y = DVector::zeros(STATE_DIM * np);
        for i in 0..np {
            let r = &refs[i.min(refs.len() - 1)];
            let pose = se2_transform(&[r.x, r.y, r.psi], &origin);
            let z = self
                .model
                .norm
                .normalize_state(&[pose[0], pose[1], pose[2], r.vx, r.vy, r.r]);
            y.rows_mut(i * STATE_DIM, STATE_DIM).copy_from_slice(&z);
        }
        Ok(y)
    }

    /// Normalized lift input for the current state (and earlier states when
    /// the model stacks frames), expressed in the current ego frame.
    pub fn lift_input(&self, history: &[VehicleState]) -> Result<Vec<f64>> {
        let c = self.model.shape.frames;
        if history.is_empty() {
            return Err(DdkError::InvalidInput("no current state".into()));
        }
        let cur = history.last().unwrap();
        let origin = [cur.x, cur.y, cur.psi];
        let mut out = Vec::with_capacity(STATE_DIM * c);
        for f in 0..c {
            // Hold the oldest available state when history is short.
            let idx = (history.len() + f).saturating_sub(c).min(history.len() - 1);
            let s = &history[idx];
            let pose = se2_transform(&[s.x, s.y, s.psi], &origin);
            out.extend(
                self.model
                    .norm
                    .normalize_state(&[pose[0], pose[1], pose[2], s.vx, s.vy, s.r]),
            );
        }
        Ok(out)
    }

    /// One control step from the recent state history (current state last),
    /// the next `N_p` reference states and the previously applied normalized
    /// control.
    pub fn step(
        &mut self,
        history: &[VehicleState],
        refs: &[VehicleState],
        u_prev: &[f64; CONTROL_DIM],
    ) -> Result<StepOutput> {
        let started = Instant::now();
        let state = history
            .last()
            .ok_or_else(|| DdkError::InvalidInput("no current state".into()))?;
        if !state.is_finite() {
            return Err(DdkError::NumericDomain("controller state".into()));
        }
        let y_ref = self.reference_stack(state, refs)?;
        let phi = self.model.lift(&self.lift_input(history)?)?;
        let (k, n) = (self.model.latent_dim(), CONTROL_DIM);
        let mut big = DVector::zeros(k + n);
        big.rows_mut(0, k).copy_from(&phi);
        big.rows_mut(k, n).copy_from_slice(u_prev);

        let nu = n * self.cfg.nc;
        let mut qp = self.template.clone();
        let e = &self.pred.a * &big - &y_ref;
        qp.g.rows_mut(0, nu).copy_from(&(&self.btq2 * e));
        qp.b_in = constraint_rhs(&self.cfg, self.cfg.nc, u_prev);

        let warm = self.warm.as_ref().map(|(z, y)| (z, y));
        let sol = self.solver.solve(&qp, warm)?;
        self.warm = Some(shifted_warm_start(&sol, n, self.cfg.nc));

        let du = sol.z.rows(0, nu).into_owned();
        let eps = sol.z[nu];
        let u_norm: [f64; CONTROL_DIM] =
            std::array::from_fn(|c| (u_prev[c] + du[c]).clamp(self.cfg.u_min[c], self.cfg.u_max[c]));
        let phys = self.model.norm.denormalize_control(&u_norm);
        let control = Control::from_physical(phys[0], phys[1]).clamped();
        if !sol.converged {
            log::debug!("qp not converged: {:?}", sol.residuals);
        }
        Ok(StepOutput {
            control,
            u_norm,
            du,
            eps,
            iterations: sol.iterations,
            converged: sol.converged,
            solve_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Shift the primal increments one block forward, zero-filling the tail;
/// multipliers are reused as they are.
fn shifted_warm_start(sol: &QpSolution, n: usize, nc: usize) -> (DVector<f64>, DVector<f64>) {
    let nu = n * nc;
    let mut z = DVector::zeros(nu + 1);
    if nc > 1 {
        z.rows_mut(0, nu - n).copy_from(&sol.z.rows(n, nu - n));
    }
    z[nu] = sol.z[nu];
    (z, sol.y.clone())
}

/// Single control step with a freshly built controller.
pub fn mpc_step(
    model: &LatentModel,
    state: &VehicleState,
    refs: &[VehicleState],
    u_prev: &[f64; CONTROL_DIM],
    cfg: &MpcConfig,
) -> Result<StepOutput> {
    MpcController::new(model.clone(), cfg.clone())?.step(std::slice::from_ref(state), refs, u_prev)
}
