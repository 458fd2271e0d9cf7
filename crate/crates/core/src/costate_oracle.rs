//! Classical indirect method: Hamiltonian `H = ½uᵀu + Λ₁ᵀq̇ + Λ₂ᵀ(f + u)`,
//! costate equations `Λ̇₁ = −(∂f/∂q)ᵀΛ₂`, `Λ̇₂ = −Λ₁ − (∂f/∂q̇)ᵀΛ₂` and
//! stationarity `u = −Λ₂`.
//!
//! The costate-free variables follow from `u = −Λ₂`,
//! `u̇ = Λ₁ + (∂f/∂q̇)ᵀΛ₂`.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::control_ode::{csv_header, fmt_num, rk4, ExtendedState, Trajectory};
use crate::error::{ensure_finite_slice, ensure_len, Error, Result};
use crate::model::MechanicalSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct CostateState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub lam1: DVector<f64>,
    pub lam2: DVector<f64>,
    pub t: f64,
}

impl CostateState {
    pub fn new(
        q: DVector<f64>,
        qdot: DVector<f64>,
        lam1: DVector<f64>,
        lam2: DVector<f64>,
        t: f64,
    ) -> Result<Self> {
        let n = q.len();
        ensure_len("qdot", n, qdot.len())?;
        ensure_len("lam1", n, lam1.len())?;
        ensure_len("lam2", n, lam2.len())?;
        for v in [&q, &qdot, &lam1, &lam2] {
            ensure_finite_slice("costate state", v.as_slice())?;
        }
        Ok(Self { q, qdot, lam1, lam2, t })
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// Optimal control `u = −Λ₂`.
    pub fn control(&self) -> DVector<f64> {
        -&self.lam2
    }

    pub fn pack(&self) -> DVector<f64> {
        let n = self.dof();
        let mut x = DVector::zeros(4 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.qdot);
        x.rows_mut(2 * n, n).copy_from(&self.lam1);
        x.rows_mut(3 * n, n).copy_from(&self.lam2);
        x
    }

    pub fn unpack(n: usize, x: &DVector<f64>, t: f64) -> Result<Self> {
        ensure_len("packed costate state", 4 * n, x.len())?;
        Ok(Self {
            q: x.rows(0, n).into_owned(),
            qdot: x.rows(n, n).into_owned(),
            lam1: x.rows(2 * n, n).into_owned(),
            lam2: x.rows(3 * n, n).into_owned(),
            t,
        })
    }
}

/// `(q̇, q̈, Λ̇₁, Λ̇₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateDerivative {
    pub qdot: DVector<f64>,
    pub qddot: DVector<f64>,
    pub lam1dot: DVector<f64>,
    pub lam2dot: DVector<f64>,
}

pub fn hamiltonian(sys: &MechanicalSystem, s: &CostateState) -> Result<f64> {
    let f = sys.eval_f(&s.q, &s.qdot, s.t)?;
    let u = s.control();
    Ok(0.5 * u.dot(&u) + s.lam1.dot(&s.qdot) + s.lam2.dot(&(f + &u)))
}

pub fn costate_rhs(sys: &MechanicalSystem, s: &CostateState) -> Result<CostateDerivative> {
    ensure_len("q", sys.dof(), s.dof())?;
    let f = sys.eval_f(&s.q, &s.qdot, s.t)?;
    let p = sys.eval_partials(&s.q, &s.qdot, s.t)?;
    Ok(CostateDerivative {
        qdot: s.qdot.clone(),
        qddot: f - &s.lam2,
        lam1dot: -(p.df_dq.transpose() * &s.lam2),
        lam2dot: -&s.lam1 - p.df_dqdot.transpose() * &s.lam2,
    })
}

/// Maps costates to `(u, u̇)`.
pub fn to_extended(sys: &MechanicalSystem, s: &CostateState) -> Result<ExtendedState> {
    let b = sys.eval_partials(&s.q, &s.qdot, s.t)?.df_dqdot;
    Ok(ExtendedState {
        q: s.q.clone(),
        qdot: s.qdot.clone(),
        u: s.control(),
        udot: &s.lam1 + b.transpose() * &s.lam2,
        t: s.t,
    })
}

/// Inverse of [`to_extended`]: `Λ₂ = −u`, `Λ₁ = u̇ + (∂f/∂q̇)ᵀu`.
pub fn costate_from_extended(sys: &MechanicalSystem, s: &ExtendedState) -> Result<CostateState> {
    let b = sys.eval_partials(&s.q, &s.qdot, s.t)?.df_dqdot;
    Ok(CostateState {
        q: s.q.clone(),
        qdot: s.qdot.clone(),
        lam1: &s.udot + b.transpose() * &s.u,
        lam2: -&s.u,
        t: s.t,
    })
}

/// Costate solution on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    grid: Vec<f64>,
    states: Vec<CostateState>,
    step: f64,
}

impl CostateTrajectory {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn states(&self) -> &[CostateState] {
        &self.states
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn last(&self) -> &CostateState {
        &self.states[self.states.len() - 1]
    }

    /// Same grid in costate-free variables.
    pub fn to_extended(&self, sys: &MechanicalSystem) -> Result<Trajectory> {
        let states = self
            .states
            .iter()
            .map(|s| to_extended(sys, s))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(self.grid.clone(), states, self.step)
    }

    /// Control-ODE columns followed by `lam1_i`, `lam2_i`.
    pub fn write_csv<W: Write>(&self, sys: &MechanicalSystem, mut w: W) -> io::Result<()> {
        let n = sys.dof();
        writeln!(w, "{}", csv_header(n, true))?;
        for s in &self.states {
            let e = to_extended(sys, s).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            let mut row = vec![fmt_num(s.t)];
            for v in [&e.q, &e.qdot, &e.u, &e.udot, &s.lam1, &s.lam2] {
                row.extend(v.iter().map(|&x| fmt_num(x)));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// RK4 on the state/costate system, same grid rule as the control ODE.
pub fn integrate_costate(
    sys: &MechanicalSystem,
    s0: &CostateState,
    t_final: f64,
    h: f64,
) -> Result<CostateTrajectory> {
    let n = sys.dof();
    ensure_len("initial state", n, s0.dof())?;
    let (grid, xs) = rk4(
        |t, x| {
            let s = CostateState::unpack(n, x, t)?;
            let d = costate_rhs(sys, &s)?;
            let mut out = DVector::zeros(4 * n);
            out.rows_mut(0, n).copy_from(&d.qdot);
            out.rows_mut(n, n).copy_from(&d.qddot);
            out.rows_mut(2 * n, n).copy_from(&d.lam1dot);
            out.rows_mut(3 * n, n).copy_from(&d.lam2dot);
            Ok(out)
        },
        s0.t,
        t_final,
        &s0.pack(),
        h,
    )?;
    let states = grid
        .iter()
        .zip(&xs)
        .map(|(&t, x)| CostateState::unpack(n, x, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(CostateTrajectory { grid, states, step: h })
}

/// Discrepancy between two trajectories on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// RMS over nodes of `‖(q, q̇)_a − (q, q̇)_b‖₂`.
    pub state_rms: f64,
    pub state_max: f64,
    /// RMS over nodes of `‖u_a − u_b‖₂`.
    pub control_rms: f64,
    pub control_max: f64,
    /// Per-node `‖Δ(q, q̇)‖₂`.
    pub error_series: Vec<f64>,
    /// State error averaged over the last quarter of the grid exceeds twice
    /// the first quarter and `1e-6`.
    pub diverging: bool,
}

/// Compares a costate solution with a costate-free one.
pub fn equivalence_check(
    sys: &MechanicalSystem,
    costate: &CostateTrajectory,
    costate_free: &Trajectory,
) -> Result<EquivalenceReport> {
    compare_trajectories(&costate.to_extended(sys)?, costate_free)
}

/// Compares two costate-free trajectories node by node.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory) -> Result<EquivalenceReport> {
    if a.len() != b.len()
        || a.grid().iter().zip(b.grid()).any(|(x, y)| (x - y).abs() > 1e-12 * x.abs().max(1.0))
    {
        return Err(Error::GridMismatch);
    }
    ensure_len("trajectory dof", a.dof(), b.dof())?;
    let mut state_sq = 0.0;
    let mut control_sq = 0.0;
    let mut state_max: f64 = 0.0;
    let mut control_max: f64 = 0.0;
    let mut series = Vec::with_capacity(a.len());
    for (x, y) in a.states().iter().zip(b.states()) {
        let ds = (&x.q - &y.q).norm_squared() + (&x.qdot - &y.qdot).norm_squared();
        let du = (&x.u - &y.u).norm_squared();
        state_sq += ds;
        control_sq += du;
        state_max = state_max.max(ds.sqrt());
        control_max = control_max.max(du.sqrt());
        series.push(ds.sqrt());
    }
    let n = a.len() as f64;
    let quarter = (series.len() / 4).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let head = mean(&series[..quarter]);
    let tail = mean(&series[series.len() - quarter..]);
    Ok(EquivalenceReport {
        state_rms: (state_sq / n).sqrt(),
        state_max,
        control_rms: (control_sq / n).sqrt(),
        control_max,
        diverging: tail > 2.0 * head && tail > 1e-6,
        error_series: series,
    })
}
