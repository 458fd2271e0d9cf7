//! The optimal-control Lagrangian `L(q, q̇, u, u̇)` and discrete
//! Euler–Lagrange residuals.
//!
//! Three algebraically equal forms are provided:
//!
//! * split: `u̇ᵀq̇ + uᵀ(∂f/∂q̇)q̇ − uᵀg + uᵀh + ½uᵀu`, needs a conservative
//!   autonomous system;
//! * JLM: `u̇ᵀq̇ + uᵀ(q̈ − α⁻¹ψ(𝓛)) + ½uᵀu`, needs the classical Lagrangian;
//! * reduced: `u̇ᵀq̇ + uᵀf + ½uᵀu`, valid for any `f`.
//!
//! Adding a total time derivative to `L` yields the same Euler–Lagrange
//! equations; no attempt is made to enumerate such gauge variants.

use nalgebra::DVector;

use crate::control_ode::{ExtendedState, Trajectory};
use crate::error::{ensure_len, Error, Result};
use crate::fd;
use crate::model::MechanicalSystem;

/// `ψ(𝓛) = d/dt(∂𝓛/∂q̇) − ∂𝓛/∂q` with the chain rule
/// `d/dt(∂𝓛/∂q̇) = (∂²𝓛/∂q̇∂q)q̇ + α q̈`.
pub fn eval_psi(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
) -> Result<DVector<f64>> {
    ensure_len("qddot", sys.dof(), qddot.len())?;
    let alpha = sys.eval_jlm(q, qdot)?;
    let mixed = sys.lagrangian_mixed(q, qdot)?;
    let (dl_dq, _) = sys.lagrangian_gradient(q, qdot)?;
    let psi = alpha * qddot + mixed * qdot - dl_dq;
    crate::error::ensure_finite_slice("psi", psi.as_slice())?;
    Ok(psi)
}

pub fn eval_l_split(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    u: &DVector<f64>,
    udot: &DVector<f64>,
    t: f64,
) -> Result<f64> {
    let split = sys.split_gh(q, qdot, t)?;
    let b = sys.eval_partials(q, qdot, t)?.df_dqdot;
    Ok(udot.dot(qdot) + u.dot(&(b * qdot)) - u.dot(&split.g) + u.dot(&split.h) + 0.5 * u.dot(u))
}

pub fn eval_l_jlm(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
    u: &DVector<f64>,
    udot: &DVector<f64>,
) -> Result<f64> {
    let alpha = sys.eval_jlm(q, qdot)?;
    let psi = eval_psi(sys, q, qdot, qddot)?;
    let corr = alpha
        .lu()
        .solve(&psi)
        .ok_or_else(|| Error::Singular("jlm is not invertible".into()))?;
    Ok(udot.dot(qdot) + u.dot(&(qddot - corr)) + 0.5 * u.dot(u))
}

pub fn eval_l_reduced(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    u: &DVector<f64>,
    udot: &DVector<f64>,
    t: f64,
) -> Result<f64> {
    let f = sys.eval_f(q, qdot, t)?;
    Ok(udot.dot(qdot) + u.dot(&f) + 0.5 * u.dot(u))
}

/// Partials of an extended Lagrangian at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianPartials {
    pub dq: DVector<f64>,
    pub dqdot: DVector<f64>,
    pub du: DVector<f64>,
    pub dudot: DVector<f64>,
    pub dt: f64,
}

/// A Lagrangian over the extended coordinates `(q, u)`.
pub trait ExtendedLagrangian: Send + Sync {
    fn value(&self, s: &ExtendedState) -> Result<f64>;

    /// Central-difference partials unless overridden.
    fn partials(&self, s: &ExtendedState) -> Result<LagrangianPartials> {
        fd_partials(self, s)
    }
}

/// Central-difference partials of any extended Lagrangian.
pub fn fd_partials<L: ExtendedLagrangian + ?Sized>(
    lag: &L,
    s: &ExtendedState,
) -> Result<LagrangianPartials> {
    let dq = fd::gradient(|x| lag.value(&ExtendedState { q: x.clone(), ..s.clone() }), &s.q)?;
    let dqdot = fd::gradient(|x| lag.value(&ExtendedState { qdot: x.clone(), ..s.clone() }), &s.qdot)?;
    let du = fd::gradient(|x| lag.value(&ExtendedState { u: x.clone(), ..s.clone() }), &s.u)?;
    let dudot = fd::gradient(|x| lag.value(&ExtendedState { udot: x.clone(), ..s.clone() }), &s.udot)?;
    let dt = fd::derivative(
        |t| lag.value(&ExtendedState { t, ..s.clone() }),
        s.t,
        fd::step_for(s.t),
    )?;
    Ok(LagrangianPartials { dq, dqdot, du, dudot, dt })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagrangianForm {
    Split,
    Jlm,
    Reduced,
}

/// The optimal-control Lagrangian of a system in a chosen form.
#[derive(Debug, Clone, Copy)]
pub struct OCLagrangian<'a> {
    pub system: &'a MechanicalSystem,
    pub form: LagrangianForm,
}

impl<'a> OCLagrangian<'a> {
    pub fn new(system: &'a MechanicalSystem, form: LagrangianForm) -> Result<Self> {
        match form {
            LagrangianForm::Split if !system.is_conservative_autonomous() => {
                return Err(Error::NotConservative("split-form Lagrangian"))
            }
            LagrangianForm::Jlm if system.classical_lagrangian().is_none() => {
                return Err(Error::Missing("classical Lagrangian"))
            }
            _ => {}
        }
        Ok(Self { system, form })
    }

    /// JLM form if a classical Lagrangian exists, reduced form otherwise.
    pub fn default_for(system: &'a MechanicalSystem) -> Self {
        let form = if system.classical_lagrangian().is_some() {
            LagrangianForm::Jlm
        } else {
            LagrangianForm::Reduced
        };
        Self { system, form }
    }
}

impl ExtendedLagrangian for OCLagrangian<'_> {
    fn value(&self, s: &ExtendedState) -> Result<f64> {
        let sys = self.system;
        match self.form {
            LagrangianForm::Split => eval_l_split(sys, &s.q, &s.qdot, &s.u, &s.udot, s.t),
            LagrangianForm::Jlm => {
                let qddot = sys.eval_f(&s.q, &s.qdot, s.t)? + &s.u;
                eval_l_jlm(sys, &s.q, &s.qdot, &qddot, &s.u, &s.udot)
            }
            LagrangianForm::Reduced => eval_l_reduced(sys, &s.q, &s.qdot, &s.u, &s.udot, s.t),
        }
    }

    /// All forms coincide with `u̇ᵀq̇ + uᵀf + ½uᵀu` as functions, so their
    /// partials are `∂L/∂q = (∂f/∂q)ᵀu`, `∂L/∂q̇ = u̇ + (∂f/∂q̇)ᵀu`,
    /// `∂L/∂u = f + u` and `∂L/∂u̇ = q̇`.
    fn partials(&self, s: &ExtendedState) -> Result<LagrangianPartials> {
        let sys = self.system;
        let f = sys.eval_f(&s.q, &s.qdot, s.t)?;
        let p = sys.eval_partials(&s.q, &s.qdot, s.t)?;
        let dt = if sys.is_time_invariant() {
            0.0
        } else {
            fd::derivative(
                |t| eval_l_reduced(sys, &s.q, &s.qdot, &s.u, &s.udot, t),
                s.t,
                fd::step_for(s.t),
            )?
        };
        Ok(LagrangianPartials {
            dq: p.df_dq.transpose() * &s.u,
            dqdot: &s.udot + p.df_dqdot.transpose() * &s.u,
            du: f + &s.u,
            dudot: s.qdot.clone(),
            dt,
        })
    }
}

/// Which coordinate block the Euler–Lagrange residual is taken in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    Q,
    U,
}

/// `D_h(∂L/∂ẏ)(t_k) − (∂L/∂y)(t_k)` at interior nodes, `y` being `q` or `u`
/// and `D_h` the central difference.
pub fn discrete_el_residual<L: ExtendedLagrangian + ?Sized>(
    lag: &L,
    traj: &Trajectory,
    wrt: Wrt,
) -> Result<Vec<DVector<f64>>> {
    if traj.len() < 3 {
        return Err(Error::TooShort { needed: 3, have: traj.len() });
    }
    if !traj.is_uniform() {
        return Err(Error::NonUniformGrid);
    }
    let partials = traj
        .states()
        .iter()
        .map(|s| lag.partials(s))
        .collect::<Result<Vec<_>>>()?;
    let h = traj.step();
    type Pick = fn(&LagrangianPartials) -> &DVector<f64>;
    let (momentum, force): (Pick, Pick) = match wrt {
        Wrt::Q => (|p| &p.dqdot, |p| &p.dq),
        Wrt::U => (|p| &p.dudot, |p| &p.du),
    };
    Ok((1..traj.len() - 1)
        .map(|k| {
            (momentum(&partials[k + 1]) - momentum(&partials[k - 1])) / (2.0 * h)
                - force(&partials[k])
        })
        .collect())
}

/// Largest component over all residual vectors.
pub fn max_residual(residuals: &[DVector<f64>]) -> f64 {
    residuals.iter().map(|r| r.amax()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::{self, MsdParams, TwoBodyParams};
    use crate::control_ode::integrate;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn psi_vanishes_on_uncontrolled_motion() {
        let sys = cases::make_two_body(TwoBodyParams::canonical()).unwrap();
        let (q, qd) = (v(&[1.3, 0.4]), v(&[0.2, 0.9]));
        let f = sys.eval_f(&q, &qd, 0.0).unwrap();
        assert!(eval_psi(&sys, &q, &qd, &f).unwrap().amax() < 1e-14);
    }

    #[test]
    fn psi_of_controlled_two_body() {
        let sys = cases::make_two_body(TwoBodyParams::canonical()).unwrap();
        let (q, qd, u) = (v(&[1.7, 0.4]), v(&[0.2, 0.9]), v(&[0.3, -0.1]));
        let qdd = sys.eval_f(&q, &qd, 0.0).unwrap() + &u;
        let psi = eval_psi(&sys, &q, &qd, &qdd).unwrap();
        assert!((psi - v(&[0.3, -0.1 * 1.7 * 1.7])).amax() < 1e-14);
    }

    #[test]
    fn psi_of_controlled_mass_spring() {
        let sys = cases::make_mass_spring(2.5, 4.0).unwrap();
        let (q, qd, u) = (v(&[0.3]), v(&[-0.7]), v(&[1.1]));
        let qdd = sys.eval_f(&q, &qd, 0.0).unwrap() + &u;
        let psi = eval_psi(&sys, &q, &qd, &qdd).unwrap();
        assert!((psi[0] - 2.5 * 1.1).abs() < 1e-14);
    }

    #[test]
    fn split_form_hand_value() {
        let sys = cases::make_mass_spring(1.0, 1.0).unwrap();
        let l = eval_l_split(&sys, &v(&[1.0]), &v(&[0.0]), &v(&[1.0]), &v(&[0.0]), 0.0).unwrap();
        assert_eq!(l, -0.5);
    }

    #[test]
    fn zero_control_gives_zero_lagrangian() {
        let sys = cases::make_two_body(TwoBodyParams::canonical()).unwrap();
        let (q, qd, z) = (v(&[1.1, 0.0]), v(&[0.1, 1.0]), v(&[0.0, 0.0]));
        let qdd = sys.eval_f(&q, &qd, 0.0).unwrap();
        assert_eq!(eval_l_split(&sys, &q, &qd, &z, &z, 0.0).unwrap(), 0.0);
        assert_eq!(eval_l_jlm(&sys, &q, &qd, &qdd, &z, &z).unwrap(), 0.0);
    }

    #[test]
    fn forms_agree_on_two_body() {
        let sys = cases::make_two_body(TwoBodyParams::canonical()).unwrap();
        let s = ExtendedState::new(v(&[1.4, 2.0]), v(&[-0.3, 0.6]), v(&[0.2, 0.5]), v(&[-1.0, 0.4]), 0.0)
            .unwrap();
        let forms = [LagrangianForm::Split, LagrangianForm::Jlm, LagrangianForm::Reduced];
        let values: Vec<f64> = forms
            .iter()
            .map(|&f| OCLagrangian::new(&sys, f).unwrap().value(&s).unwrap())
            .collect();
        for w in values.windows(2) {
            assert!((w[0] - w[1]).abs() <= 1e-12 * (1.0 + w[0].abs()));
        }
    }

    #[test]
    fn split_form_requires_conservative_system() {
        let sys = cases::make_msd(MsdParams { m: 1.0, c: 0.2, k: 1.0 }).unwrap();
        assert!(OCLagrangian::new(&sys, LagrangianForm::Split).is_err());
        assert_eq!(OCLagrangian::default_for(&sys).form, LagrangianForm::Reduced);
    }

    #[test]
    fn analytic_partials_match_fd() {
        let sys = cases::make_two_body(TwoBodyParams::canonical()).unwrap();
        let s = ExtendedState::new(v(&[1.4, 2.0]), v(&[-0.3, 0.6]), v(&[0.2, 0.5]), v(&[-1.0, 0.4]), 0.0)
            .unwrap();
        for form in [LagrangianForm::Split, LagrangianForm::Jlm, LagrangianForm::Reduced] {
            let lag = OCLagrangian::new(&sys, form).unwrap();
            let a = lag.partials(&s).unwrap();
            let b = fd_partials(&lag, &s).unwrap();
            for (x, y) in [(&a.dq, &b.dq), (&a.dqdot, &b.dqdot), (&a.du, &b.du), (&a.dudot, &b.dudot)] {
                assert!((x - y).amax() < 1e-7, "{form:?}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn el_residual_needs_three_nodes() {
        let sys = cases::make_mass_spring(1.0, 1.0).unwrap();
        let s0 = ExtendedState::new(v(&[1.0]), v(&[0.0]), v(&[0.1]), v(&[0.0]), 0.0).unwrap();
        let traj = integrate(&sys, &s0, 0.1, 0.1).unwrap();
        let lag = OCLagrangian::default_for(&sys);
        assert_eq!(
            discrete_el_residual(&lag, &traj, Wrt::Q).unwrap_err(),
            Error::TooShort { needed: 3, have: 2 }
        );
    }

    #[test]
    fn el_residual_in_u_is_second_order() {
        let sys = cases::make_msd(MsdParams { m: 1.0, c: 0.2, k: 1.0 }).unwrap();
        let lag = OCLagrangian::default_for(&sys);
        let s0 = ExtendedState::new(v(&[0.0]), v(&[0.0]), v(&[2.0]), v(&[-1.0]), 0.0).unwrap();
        let r = |h: f64| {
            let traj = integrate(&sys, &s0, 1.0, h).unwrap();
            max_residual(&discrete_el_residual(&lag, &traj, Wrt::U).unwrap())
        };
        let ratio = r(1e-2) / r(5e-3);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }
}
