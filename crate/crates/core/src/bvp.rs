//! Single shooting for the two-point boundary-value problem, in either the
//! costate-free unknowns `(u(t0), u̇(t0))` or the costate unknowns
//! `(Λ₁(t0), Λ₂(t0))`.
//!
//! Only a fully specified terminal state is supported (`p = 2n`); partially
//! constrained endpoints would need transversality conditions on `u`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::control_ode::{integrate, ExtendedState, Trajectory};
use crate::costate_oracle::{integrate_costate, CostateState, CostateTrajectory};
use crate::error::{ensure_finite_slice, ensure_len, Error, Result};
use crate::model::MechanicalSystem;

pub type TerminalFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_MAX_HALVINGS: usize = 30;
/// Forward-difference Jacobian step, scaled by `1 + |x|`.
pub const JACOBIAN_STEP: f64 = 1e-7;

/// Initial state and terminal constraints `F(q(tf), q̇(tf)) = 0`.
#[derive(Clone)]
pub struct BoundarySpec {
    pub t0: f64,
    pub tf: f64,
    pub q0: DVector<f64>,
    pub qdot0: DVector<f64>,
    constraints: Arc<TerminalFn>,
    p: usize,
}

impl fmt::Debug for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundarySpec")
            .field("t0", &self.t0)
            .field("tf", &self.tf)
            .field("q0", &self.q0)
            .field("qdot0", &self.qdot0)
            .field("p", &self.p)
            .finish()
    }
}

impl BoundarySpec {
    pub fn new(
        t0: f64,
        tf: f64,
        q0: DVector<f64>,
        qdot0: DVector<f64>,
        p: usize,
        constraints: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        ensure_len("qdot0", q0.len(), qdot0.len())?;
        ensure_finite_slice("initial state", q0.as_slice())?;
        ensure_finite_slice("initial state", qdot0.as_slice())?;
        if !(t0.is_finite() && tf.is_finite() && tf > t0) {
            return Err(Error::InvalidParams(format!("need tf > t0, got [{t0}, {tf}]")));
        }
        Ok(Self {
            t0,
            tf,
            q0,
            qdot0,
            constraints: Arc::new(constraints),
            p,
        })
    }

    /// Terminal state fully fixed: `F = (q − q_f, q̇ − q̇_f)`.
    pub fn full_state(
        t0: f64,
        tf: f64,
        q0: DVector<f64>,
        qdot0: DVector<f64>,
        qf: DVector<f64>,
        qdotf: DVector<f64>,
    ) -> Result<Self> {
        let n = q0.len();
        ensure_len("qf", n, qf.len())?;
        ensure_len("qdotf", n, qdotf.len())?;
        ensure_finite_slice("terminal state", qf.as_slice())?;
        ensure_finite_slice("terminal state", qdotf.as_slice())?;
        Self::new(t0, tf, q0, qdot0, 2 * n, move |q, qd| {
            let mut out = DVector::zeros(2 * n);
            out.rows_mut(0, n).copy_from(&(q - &qf));
            out.rows_mut(n, n).copy_from(&(qd - &qdotf));
            out
        })
    }

    pub fn constraint_count(&self) -> usize {
        self.p
    }

    pub fn residual(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
        let r = (self.constraints)(q, qdot);
        ensure_len("terminal constraints", self.p, r.len())?;
        ensure_finite_slice("terminal constraints", r.as_slice())?;
        Ok(r)
    }

    fn check(&self, sys: &MechanicalSystem, guess: &DVector<f64>) -> Result<()> {
        let n = sys.dof();
        ensure_len("q0", n, self.q0.len())?;
        ensure_len("guess", 2 * n, guess.len())?;
        ensure_finite_slice("guess", guess.as_slice())?;
        if self.p != 2 * n {
            return Err(Error::InvalidParams(format!(
                "{} terminal constraints for {} shooting unknowns; only full terminal states are supported",
                self.p,
                2 * n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions {
    pub h: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl ShootingOptions {
    pub fn with_step(h: f64) -> Self {
        Self {
            h,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            max_halvings: DEFAULT_MAX_HALVINGS,
        }
    }
}

/// Outcome of a damped Newton iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub residual: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton on `F(x) = 0` with a forward-difference Jacobian.
///
/// A trial step is halved while it fails to evaluate or does not decrease
/// `‖F‖∞`. Fails only if `F(x0)` itself cannot be evaluated; otherwise the
/// best iterate is returned with `converged = false` when the iteration stalls.
pub fn newton_solve<F>(mut residual: F, x0: &DVector<f64>, tol: f64, max_iter: usize, max_halvings: usize) -> Result<NewtonOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut x = x0.clone();
    let mut r = residual(&x)?;
    let mut norm = r.amax();
    let mut iterations = 0;
    while norm > tol && iterations < max_iter {
        let Some(jac) = forward_jacobian(&mut residual, &x, &r) else { break };
        let Some(dx) = newton_step(jac, &r) else { break };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=max_halvings {
            let trial = &x - &dx * lambda;
            if let Ok(rt) = residual(&trial) {
                let nt = rt.amax();
                if nt < norm {
                    accepted = Some((trial, rt, nt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((xn, rn, nn)) = accepted else { break };
        x = xn;
        r = rn;
        norm = nn;
        iterations += 1;
    }
    Ok(NewtonOutcome {
        converged: norm <= tol,
        x,
        residual: r,
        iterations,
    })
}

fn forward_jacobian<F>(residual: &mut F, x: &DVector<f64>, r0: &DVector<f64>) -> Option<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let h = JACOBIAN_STEP * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let rp = residual(&xp).ok()?;
        xp[j] = x[j];
        jac.set_column(j, &((rp - r0) / h));
    }
    Some(jac)
}

fn newton_step(jac: DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    if jac.is_square() {
        if let Some(dx) = jac.clone().lu().solve(r) {
            if dx.iter().all(|v| v.is_finite()) {
                return Some(dx);
            }
        }
    }
    jac.svd(true, true).solve(r, 1e-14).ok().filter(|dx| dx.iter().all(|v| v.is_finite()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingResult {
    /// `(u(t0), u̇(t0))` or `(Λ₁(t0), Λ₂(t0))`.
    pub unknowns: DVector<f64>,
    /// Costate-free trajectory (mapped from the costates for the oracle).
    pub trajectory: Trajectory,
    /// Costate trajectory, for the costate solver only.
    pub costate: Option<CostateTrajectory>,
    pub constraint_residual: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ShootingResult {
    pub fn cost(&self) -> f64 {
        control_cost(&self.trajectory)
    }
}

fn split_unknowns(n: usize, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (x.rows(0, n).into_owned(), x.rows(n, n).into_owned())
}

fn shoot_costate_free(
    sys: &MechanicalSystem,
    spec: &BoundarySpec,
    x: &DVector<f64>,
    h: f64,
) -> Result<Trajectory> {
    let (u0, ud0) = split_unknowns(sys.dof(), x);
    let s0 = ExtendedState::new(spec.q0.clone(), spec.qdot0.clone(), u0, ud0, spec.t0)?;
    integrate(sys, &s0, spec.tf, h)
}

fn shoot_costate(
    sys: &MechanicalSystem,
    spec: &BoundarySpec,
    x: &DVector<f64>,
    h: f64,
) -> Result<CostateTrajectory> {
    let (l1, l2) = split_unknowns(sys.dof(), x);
    let s0 = CostateState::new(spec.q0.clone(), spec.qdot0.clone(), l1, l2, spec.t0)?;
    integrate_costate(sys, &s0, spec.tf, h)
}

/// Shooting on `(u(t0), u̇(t0))` through the control ODE.
pub fn solve_costate_free(
    sys: &MechanicalSystem,
    spec: &BoundarySpec,
    guess: &DVector<f64>,
    opts: &ShootingOptions,
) -> Result<ShootingResult> {
    spec.check(sys, guess)?;
    let out = newton_solve(
        |x| {
            let traj = shoot_costate_free(sys, spec, x, opts.h)?;
            let end = traj.last();
            spec.residual(&end.q, &end.qdot)
        },
        guess,
        opts.tol,
        opts.max_iter,
        opts.max_halvings,
    )?;
    let trajectory = shoot_costate_free(sys, spec, &out.x, opts.h)?;
    Ok(ShootingResult {
        unknowns: out.x,
        trajectory,
        costate: None,
        constraint_residual: out.residual,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Shooting on `(Λ₁(t0), Λ₂(t0))` through the state/costate equations.
pub fn solve_costate(
    sys: &MechanicalSystem,
    spec: &BoundarySpec,
    guess: &DVector<f64>,
    opts: &ShootingOptions,
) -> Result<ShootingResult> {
    spec.check(sys, guess)?;
    let out = newton_solve(
        |x| {
            let traj = shoot_costate(sys, spec, x, opts.h)?;
            let end = traj.last();
            spec.residual(&end.q, &end.qdot)
        },
        guess,
        opts.tol,
        opts.max_iter,
        opts.max_halvings,
    )?;
    let costate = shoot_costate(sys, spec, &out.x, opts.h)?;
    Ok(ShootingResult {
        unknowns: out.x,
        trajectory: costate.to_extended(sys)?,
        costate: Some(costate),
        constraint_residual: out.residual,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// `½∫uᵀu dt` by the trapezoid rule with endpoint derivative correction
/// `h²/12·(g′_k − g′_{k+1})`, `g′ = uᵀu̇`, which makes it fourth order.
pub fn control_cost(traj: &Trajectory) -> f64 {
    let g = |s: &ExtendedState| 0.5 * s.u.dot(&s.u);
    let dg = |s: &ExtendedState| s.u.dot(&s.udot);
    traj.grid()
        .windows(2)
        .zip(traj.states().windows(2))
        .map(|(t, s)| {
            let h = t[1] - t[0];
            0.5 * h * (g(&s[0]) + g(&s[1])) + h * h / 12.0 * (dg(&s[0]) - dg(&s[1]))
        })
        .sum()
}

/// Plain composite trapezoid of `½uᵀu`.
pub fn control_cost_trapezoid(traj: &Trajectory) -> f64 {
    traj.grid()
        .windows(2)
        .zip(traj.states().windows(2))
        .map(|(t, s)| 0.25 * (t[1] - t[0]) * (s[0].u.dot(&s[0].u) + s[1].u.dot(&s[1].u)))
        .sum()
}
