//! Controlled second-order mechanical systems `q̈ = f(q, q̇, t) + u`.
//!
//! A [`MechanicalSystem`] bundles the uncontrolled acceleration `f`, its
//! partials (analytic when the case supplies them, central differences
//! otherwise), the classical Lagrangian `𝓛 = T − V` and its velocity Hessian
//! `α`, the Jacobi Last Multiplier.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{ensure_finite_slice, ensure_len, Error, Result};
use crate::fd;
use crate::lagrangian::ExtendedLagrangian;

pub type AccelFn = dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync;
pub type PartialsFn = dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> Partials + Send + Sync;
pub type SecondPartialsFn =
    dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> SecondPartials + Send + Sync;
pub type GuardFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<()> + Send + Sync;
pub type ScalarFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;
pub type GradientFn =
    dyn Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync;
pub type MatrixFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Symmetry tolerance for a multiplier matrix evaluated analytically.
pub const JLM_SYMMETRY_TOL: f64 = 1e-10;
/// Symmetry tolerance for a finite-difference Hessian.
pub const JLM_FD_SYMMETRY_TOL: f64 = 1e-8;
/// Largest acceptable condition number of `α`.
pub const JLM_MAX_CONDITION: f64 = 1e8;
/// Tolerance for `(∂g/∂q̇)·q̇ = 2g`.
pub const QUADRATIC_VELOCITY_TOL: f64 = 1e-8;
/// Tolerance for the absence of explicit time dependence.
pub const TIME_INVARIANCE_TOL: f64 = 1e-12;

/// First partials of `f`, stored as `J_ij = ∂f_i/∂x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partials {
    pub df_dq: DMatrix<f64>,
    pub df_dqdot: DMatrix<f64>,
}

/// Partials of `∂f/∂q̇`: entry `k` of `wrt_q` is `∂(∂f/∂q̇)/∂q_k`, entry `k`
/// of `wrt_qdot` is `∂(∂f/∂q̇)/∂q̇_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondPartials {
    pub wrt_q: Vec<DMatrix<f64>>,
    pub wrt_qdot: Vec<DMatrix<f64>>,
}

/// Velocity-dependent part `g` and position-dependent part `h` of `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct GHSplit {
    pub g: DVector<f64>,
    pub h: DVector<f64>,
}

impl GHSplit {
    pub fn recombine(&self) -> DVector<f64> {
        &self.g + &self.h
    }
}

/// Classical Lagrangian `𝓛(q, q̇)` with optional analytic derivatives.
#[derive(Clone)]
pub struct ClassicalLagrangian {
    value: Arc<ScalarFn>,
    gradient: Option<Arc<GradientFn>>,
    mixed: Option<Arc<MatrixFn>>,
    jlm: Option<Arc<MatrixFn>>,
}

impl ClassicalLagrangian {
    pub fn new(value: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            gradient: None,
            mixed: None,
            jlm: None,
        }
    }

    /// Analytic `(∂𝓛/∂q, ∂𝓛/∂q̇)`.
    pub fn with_gradient(
        mut self,
        g: impl Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    /// Analytic mixed Hessian, entry `(i, j)` = `∂²𝓛/∂q̇_i∂q_j`.
    pub fn with_mixed(
        mut self,
        m: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.mixed = Some(Arc::new(m));
        self
    }

    /// Analytic `α = ∂²𝓛/∂q̇²`.
    pub fn with_jlm(
        mut self,
        a: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jlm = Some(Arc::new(a));
        self
    }

    pub fn value(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
        (self.value)(q, qdot)
    }
}

/// A controlled second-order system `q̈ = f(q, q̇, t) + u`.
///
/// Immutable after construction; all evaluators are pure and the type is
/// `Send + Sync`.
#[derive(Clone)]
pub struct MechanicalSystem {
    name: String,
    dof: usize,
    accel: Arc<AccelFn>,
    partials: Option<Arc<PartialsFn>>,
    second_partials: Option<Arc<SecondPartialsFn>>,
    lagrangian: Option<ClassicalLagrangian>,
    conservative_autonomous: bool,
    time_invariant: bool,
    guard: Option<Arc<GuardFn>>,
    control_scale: f64,
    nonstandard: Option<Arc<dyn ExtendedLagrangian>>,
}

impl fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalSystem")
            .field("name", &self.name)
            .field("dof", &self.dof)
            .field("analytic_partials", &self.partials.is_some())
            .field("analytic_second_partials", &self.second_partials.is_some())
            .field("has_lagrangian", &self.lagrangian.is_some())
            .field("conservative_autonomous", &self.conservative_autonomous)
            .finish()
    }
}

pub struct SystemBuilder {
    sys: MechanicalSystem,
}

impl SystemBuilder {
    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.sys.name = name.into();
        self
    }

    pub fn partials(
        mut self,
        p: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> Partials + Send + Sync + 'static,
    ) -> Self {
        self.sys.partials = Some(Arc::new(p));
        self
    }

    pub fn second_partials(
        mut self,
        p: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> SecondPartials + Send + Sync + 'static,
    ) -> Self {
        self.sys.second_partials = Some(Arc::new(p));
        self
    }

    pub fn lagrangian(mut self, l: ClassicalLagrangian) -> Self {
        self.sys.lagrangian = Some(l);
        self
    }

    /// Asserts that `f = g(q, q̇) + h(q)` with `g` quadratic in `q̇` and no
    /// explicit time dependence. Implies [`time_invariant`](Self::time_invariant).
    pub fn conservative_autonomous(mut self, flag: bool) -> Self {
        self.sys.conservative_autonomous = flag;
        if flag {
            self.sys.time_invariant = true;
        }
        self
    }

    /// `f` has no explicit time dependence (not necessarily conservative).
    pub fn time_invariant(mut self, flag: bool) -> Self {
        self.sys.time_invariant = flag;
        self
    }

    pub fn guard(
        mut self,
        g: impl Fn(&DVector<f64>, &DVector<f64>) -> Result<()> + Send + Sync + 'static,
    ) -> Self {
        self.sys.guard = Some(Arc::new(g));
        self
    }

    /// Ratio of the physical actuation to the normalized control `u`
    /// (the mass for the mass-spring-damper, 1 otherwise).
    pub fn control_scale(mut self, s: f64) -> Self {
        self.sys.control_scale = s;
        self
    }

    /// A nonstandard Lagrangian in `(q, u)` whose control slot is in
    /// physical units (see [`MechanicalSystem::control_scale`]).
    pub fn nonstandard(mut self, l: Arc<dyn ExtendedLagrangian>) -> Self {
        self.sys.nonstandard = Some(l);
        self
    }

    pub fn build(self) -> Result<MechanicalSystem> {
        if self.sys.dof == 0 {
            return Err(Error::InvalidParams("dof must be positive".into()));
        }
        if !(self.sys.control_scale.is_finite() && self.sys.control_scale > 0.0) {
            return Err(Error::InvalidParams("control scale must be positive".into()));
        }
        Ok(self.sys)
    }
}

impl MechanicalSystem {
    pub fn builder(
        dof: usize,
        accel: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> SystemBuilder {
        SystemBuilder {
            sys: MechanicalSystem {
                name: String::from("custom"),
                dof,
                accel: Arc::new(accel),
                partials: None,
                second_partials: None,
                lagrangian: None,
                conservative_autonomous: false,
                time_invariant: false,
                guard: None,
                control_scale: 1.0,
                nonstandard: None,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn is_conservative_autonomous(&self) -> bool {
        self.conservative_autonomous
    }

    pub fn is_time_invariant(&self) -> bool {
        self.time_invariant
    }

    pub fn has_analytic_partials(&self) -> bool {
        self.partials.is_some()
    }

    pub fn has_analytic_second_partials(&self) -> bool {
        self.second_partials.is_some()
    }

    pub fn control_scale(&self) -> f64 {
        self.control_scale
    }

    pub fn classical_lagrangian(&self) -> Option<&ClassicalLagrangian> {
        self.lagrangian.as_ref()
    }

    pub fn nonstandard_lagrangian(&self) -> Option<&Arc<dyn ExtendedLagrangian>> {
        self.nonstandard.as_ref()
    }

    fn check_point(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<()> {
        ensure_len("q", self.dof, q.len())?;
        ensure_len("qdot", self.dof, qdot.len())?;
        ensure_finite_slice("state", q.as_slice())?;
        ensure_finite_slice("state", qdot.as_slice())?;
        if let Some(guard) = &self.guard {
            guard(q, qdot)?;
        }
        Ok(())
    }

    fn raw_f(&self, q: &DVector<f64>, qdot: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.check_point(q, qdot)?;
        let f = (self.accel)(q, qdot, t);
        ensure_len("f", self.dof, f.len())?;
        ensure_finite_slice("f", f.as_slice())?;
        Ok(f)
    }

    /// Uncontrolled acceleration `f(q, q̇, t)`.
    pub fn eval_f(&self, q: &DVector<f64>, qdot: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.raw_f(q, qdot, t)
    }

    /// `∂f/∂q` and `∂f/∂q̇`: analytic when supplied, central differences otherwise.
    pub fn eval_partials(&self, q: &DVector<f64>, qdot: &DVector<f64>, t: f64) -> Result<Partials> {
        self.check_point(q, qdot)?;
        match &self.partials {
            Some(p) => {
                let out = p(q, qdot, t);
                ensure_finite_slice("df/dq", out.df_dq.as_slice())?;
                ensure_finite_slice("df/dqdot", out.df_dqdot.as_slice())?;
                Ok(out)
            }
            None => self.fd_partials(q, qdot, t),
        }
    }

    /// Central finite-difference partials, regardless of analytic availability.
    pub fn fd_partials(&self, q: &DVector<f64>, qdot: &DVector<f64>, t: f64) -> Result<Partials> {
        let df_dq = fd::jacobian(|x| self.raw_f(x, qdot, t), q)?;
        let df_dqdot = fd::jacobian(|v| self.raw_f(q, v, t), qdot)?;
        ensure_finite_slice("df/dq", df_dq.as_slice())?;
        ensure_finite_slice("df/dqdot", df_dqdot.as_slice())?;
        Ok(Partials { df_dq, df_dqdot })
    }

    /// Partials of `∂f/∂q̇`: analytic when supplied, otherwise central
    /// differences (step [`fd::SECOND_STEP`]) of the first partials.
    pub fn eval_second_partials(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        t: f64,
    ) -> Result<SecondPartials> {
        self.check_point(q, qdot)?;
        if let Some(p) = &self.second_partials {
            return Ok(p(q, qdot, t));
        }
        self.fd_second_partials(q, qdot, t)
    }

    pub fn fd_second_partials(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        t: f64,
    ) -> Result<SecondPartials> {
        let n = self.dof;
        let h = fd::SECOND_STEP;
        let mut wrt_q = Vec::with_capacity(n);
        let mut wrt_qdot = Vec::with_capacity(n);
        for k in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let dp = self.eval_partials(&qp, qdot, t)?.df_dqdot;
            let dm = self.eval_partials(&qm, qdot, t)?.df_dqdot;
            wrt_q.push((dp - dm) / (2.0 * h));

            let mut vp = qdot.clone();
            let mut vm = qdot.clone();
            vp[k] += h;
            vm[k] -= h;
            let dp = self.eval_partials(q, &vp, t)?.df_dqdot;
            let dm = self.eval_partials(q, &vm, t)?.df_dqdot;
            wrt_qdot.push((dp - dm) / (2.0 * h));
        }
        Ok(SecondPartials { wrt_q, wrt_qdot })
    }

    /// `∂(∂f/∂q̇)/∂t`, zero for time-invariant systems.
    pub fn dfdqdot_time_rate(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        t: f64,
    ) -> Result<DMatrix<f64>> {
        if self.time_invariant {
            return Ok(DMatrix::zeros(self.dof, self.dof));
        }
        let h = fd::SECOND_STEP.max(fd::SECOND_STEP * t.abs());
        let dp = self.eval_partials(q, qdot, t + h)?.df_dqdot;
        let dm = self.eval_partials(q, qdot, t - h)?.df_dqdot;
        Ok((dp - dm) / (2.0 * h))
    }

    /// Splits `f` into `g` (velocity dependent) and `h = f(q, 0, t)`.
    pub fn split_gh(&self, q: &DVector<f64>, qdot: &DVector<f64>, t: f64) -> Result<GHSplit> {
        if !self.conservative_autonomous {
            return Err(Error::NotConservative("split_gh"));
        }
        let f = self.raw_f(q, qdot, t)?;
        let h = self.raw_f(q, &DVector::zeros(self.dof), t)?;
        let g = f - &h;
        Ok(GHSplit { g, h })
    }

    /// Max over samples of `‖(∂g/∂q̇)q̇ − 2g‖∞`.
    pub fn check_quadratic_velocity(&self, samples: &[SamplePoint]) -> Result<QuadraticVelocityReport> {
        if !self.conservative_autonomous {
            return Err(Error::NotConservative("check_quadratic_velocity"));
        }
        let mut max_residual: f64 = 0.0;
        for s in samples {
            let split = self.split_gh(&s.q, &s.qdot, s.t)?;
            // h does not depend on q̇, so ∂g/∂q̇ = ∂f/∂q̇.
            let dg = self.eval_partials(&s.q, &s.qdot, s.t)?.df_dqdot;
            let r = &dg * &s.qdot - 2.0 * &split.g;
            max_residual = max_residual.max(r.amax());
        }
        Ok(QuadraticVelocityReport {
            max_residual,
            samples: samples.len(),
            pass: max_residual <= QUADRATIC_VELOCITY_TOL,
        })
    }

    /// Jacobi Last Multiplier `α = ∂²𝓛/∂q̇²`, analytic if supplied, otherwise a
    /// nested central-difference Hessian.
    pub fn eval_jlm(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(q, qdot)?;
        let lag = self.lagrangian.as_ref().ok_or(Error::Missing("classical Lagrangian"))?;
        let (alpha, tol) = match &lag.jlm {
            Some(a) => (a(q, qdot), JLM_SYMMETRY_TOL),
            None => (self.fd_jlm(q, qdot)?, JLM_FD_SYMMETRY_TOL),
        };
        ensure_finite_slice("jlm", alpha.as_slice())?;
        let asym = asymmetry(&alpha);
        if asym > tol * alpha.amax().max(1.0) {
            return Err(Error::Asymmetric(asym));
        }
        Ok(alpha)
    }

    pub fn fd_jlm(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DMatrix<f64>> {
        let lag = self.lagrangian.as_ref().ok_or(Error::Missing("classical Lagrangian"))?;
        fd::hessian(|v| Ok(lag.value(q, v)), qdot)
    }

    /// Symmetry defect and condition number of `α`; ill-conditioning is an error.
    pub fn jlm_diagnostics(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<JlmDiagnostics> {
        let alpha = self.eval_jlm(q, qdot)?;
        let condition = condition_number(&alpha);
        // Also rejects NaN from a singular decomposition.
        if condition.is_nan() || condition >= JLM_MAX_CONDITION {
            return Err(Error::Singular(format!("jlm condition number {condition:e}")));
        }
        Ok(JlmDiagnostics {
            asymmetry: asymmetry(&alpha),
            condition,
        })
    }

    /// `(∂𝓛/∂q, ∂𝓛/∂q̇)`.
    pub fn lagrangian_gradient(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_point(q, qdot)?;
        let lag = self.lagrangian.as_ref().ok_or(Error::Missing("classical Lagrangian"))?;
        match &lag.gradient {
            Some(g) => Ok(g(q, qdot)),
            None => Ok((
                fd::gradient(|x| Ok(lag.value(x, qdot)), q)?,
                fd::gradient(|v| Ok(lag.value(q, v)), qdot)?,
            )),
        }
    }

    /// Mixed Hessian, entry `(i, j)` = `∂²𝓛/∂q̇_i∂q_j`.
    pub fn lagrangian_mixed(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(q, qdot)?;
        let lag = self.lagrangian.as_ref().ok_or(Error::Missing("classical Lagrangian"))?;
        if let Some(m) = &lag.mixed {
            return Ok(m(q, qdot));
        }
        let n = self.dof;
        let h = fd::SECOND_STEP;
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += h;
            qm[j] -= h;
            let gp = fd::gradient(|v| Ok(lag.value(&qp, v)), qdot)?;
            let gm = fd::gradient(|v| Ok(lag.value(&qm, v)), qdot)?;
            out.set_column(j, &((gp - gm) / (2.0 * h)));
        }
        Ok(out)
    }

    /// Checks the model invariants at the given samples.
    pub fn validate(&self, samples: &[SamplePoint]) -> Result<ValidationReport> {
        let mut report = ValidationReport::default();
        for s in samples {
            if self.lagrangian.is_some() {
                let d = self.jlm_diagnostics(&s.q, &s.qdot)?;
                report.max_jlm_asymmetry = report.max_jlm_asymmetry.max(d.asymmetry);
                report.max_jlm_condition = report.max_jlm_condition.max(d.condition);
            }
            if self.time_invariant {
                let a = self.eval_f(&s.q, &s.qdot, s.t)?;
                let b = self.eval_f(&s.q, &s.qdot, s.t + 1.2345)?;
                let d = (a - b).amax();
                report.max_time_dependence = report.max_time_dependence.max(d);
                if d > TIME_INVARIANCE_TOL {
                    return Err(Error::InvalidParams(format!(
                        "{} is flagged autonomous but f depends on t ({d:e})",
                        self.name
                    )));
                }
            }
        }
        if self.conservative_autonomous {
            let qv = self.check_quadratic_velocity(samples)?;
            report.quadratic_velocity_residual = Some(qv.max_residual);
            if !qv.pass {
                return Err(Error::InvalidParams(format!(
                    "{}: (∂g/∂q̇)q̇ ≠ 2g (residual {:e})",
                    self.name, qv.max_residual
                )));
            }
        }
        report.samples = samples.len();
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticVelocityReport {
    pub max_residual: f64,
    pub samples: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JlmDiagnostics {
    pub asymmetry: f64,
    pub condition: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    pub max_jlm_asymmetry: f64,
    pub max_jlm_condition: f64,
    pub max_time_dependence: f64,
    pub quadratic_velocity_residual: Option<f64>,
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// An evaluation point `(q, q̇, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub t: f64,
}

/// Axis-aligned box of evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub q_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
    pub qdot_lo: Vec<f64>,
    pub qdot_hi: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl SampleBox {
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<SamplePoint> {
        let draw = |rng: &mut R, lo: &[f64], hi: &[f64]| {
            DVector::from_iterator(
                lo.len(),
                lo.iter().zip(hi).map(|(&a, &b)| if b > a { rng.random_range(a..b) } else { a }),
            )
        };
        (0..count)
            .map(|_| {
                let q = draw(rng, &self.q_lo, &self.q_hi);
                let qdot = draw(rng, &self.qdot_lo, &self.qdot_hi);
                let t = if self.t_hi > self.t_lo {
                    rng.random_range(self.t_lo..self.t_hi)
                } else {
                    self.t_lo
                };
                SamplePoint { q, qdot, t }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::{self, MsdParams, TwoBodyParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn two_body() -> MechanicalSystem {
        cases::make_two_body(TwoBodyParams::canonical()).unwrap()
    }

    fn two_body_box() -> SampleBox {
        SampleBox {
            q_lo: vec![0.5, 0.0],
            q_hi: vec![3.0, std::f64::consts::TAU],
            qdot_lo: vec![-1.0, -1.0],
            qdot_hi: vec![1.0, 1.0],
            t_lo: 0.0,
            t_hi: 0.0,
        }
    }

    #[test]
    fn circular_orbit_balance() {
        let f = two_body().eval_f(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), 0.0).unwrap();
        assert_eq!(f, v(&[0.0, 0.0]));
    }

    #[test]
    fn msd_at_rest() {
        let sys = cases::make_msd(MsdParams { m: 1.0, c: 0.2, k: 1.0 }).unwrap();
        let f = sys.eval_f(&v(&[1.0]), &v(&[0.0]), 0.0).unwrap();
        assert_eq!(f, v(&[-1.0]));
    }

    #[test]
    fn two_body_hand_evaluation() {
        let (r, rd, td, mu) = (2.0, 0.1, 0.3, 1.0);
        let expected = v(&[r * td * td - mu / (r * r), -2.0 * rd * td / r]);
        let f = two_body().eval_f(&v(&[r, 0.5]), &v(&[rd, td]), 0.0).unwrap();
        assert!((f - expected).amax() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = two_body().eval_f(&v(&[1.0]), &v(&[0.0, 1.0]), 0.0).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn two_body_guard_rejects_origin() {
        let err = two_body().eval_f(&v(&[0.0, 0.0]), &v(&[0.0, 1.0]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let sys = MechanicalSystem::builder(1, |q, _, _| v(&[1.0 / q[0]])).build().unwrap();
        let err = sys.eval_f(&v(&[0.0]), &v(&[0.0]), 0.0).unwrap_err();
        assert_eq!(err, Error::NonFinite("f"));
    }

    #[test]
    fn msd_partials_are_constant() {
        let sys = cases::make_msd(MsdParams { m: 2.0, c: 0.4, k: 3.0 }).unwrap();
        let p = sys.eval_partials(&v(&[0.3]), &v(&[-1.2]), 0.7).unwrap();
        assert_eq!(p.df_dq[(0, 0)], -1.5);
        assert_eq!(p.df_dqdot[(0, 0)], -0.2);
    }

    #[test]
    fn two_body_velocity_partials_on_circular_orbit() {
        let p = two_body().eval_partials(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), 0.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        assert!((p.df_dqdot - expected).amax() < 1e-15);
    }

    #[test]
    fn analytic_and_fd_partials_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sys = two_body();
        for s in two_body_box().sample(100, &mut rng) {
            let a = sys.eval_partials(&s.q, &s.qdot, 0.0).unwrap();
            let b = sys.fd_partials(&s.q, &s.qdot, 0.0).unwrap();
            assert!(fd::relative_diff(&b.df_dq, &a.df_dq) < 1e-6);
            assert!(fd::relative_diff(&b.df_dqdot, &a.df_dqdot) < 1e-6);
        }
    }

    #[test]
    fn split_of_two_body() {
        let sys = two_body();
        let (r, th, rd, td) = (1.7, 0.2, 0.4, -0.6);
        let s = sys.split_gh(&v(&[r, th]), &v(&[rd, td]), 0.0).unwrap();
        assert!((s.h.clone() - v(&[-1.0 / (r * r), 0.0])).amax() < 1e-15);
        assert!((s.g.clone() - v(&[r * td * td, -2.0 * rd * td / r])).amax() < 1e-15);
    }

    #[test]
    fn split_at_zero_velocity_has_no_g() {
        let s = two_body().split_gh(&v(&[1.3, 0.0]), &v(&[0.0, 0.0]), 0.0).unwrap();
        assert_eq!(s.g, v(&[0.0, 0.0]));
    }

    #[test]
    fn split_of_mass_spring() {
        let sys = cases::make_mass_spring(2.0, 8.0).unwrap();
        let s = sys.split_gh(&v(&[0.5]), &v(&[3.0]), 0.0).unwrap();
        assert_eq!(s.g, v(&[0.0]));
        assert_eq!(s.h, v(&[-2.0]));
    }

    #[test]
    fn split_rejects_damped_system() {
        let sys = cases::make_msd(MsdParams { m: 1.0, c: 0.2, k: 1.0 }).unwrap();
        assert_eq!(
            sys.split_gh(&v(&[0.0]), &v(&[1.0]), 0.0).unwrap_err(),
            Error::NotConservative("split_gh")
        );
    }

    #[test]
    fn quadratic_velocity_holds_for_two_body() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let report = two_body()
            .check_quadratic_velocity(&two_body_box().sample(100, &mut rng))
            .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn quadratic_velocity_exact_for_mass_spring() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bx = SampleBox {
            q_lo: vec![-2.0],
            q_hi: vec![2.0],
            qdot_lo: vec![-2.0],
            qdot_hi: vec![2.0],
            t_lo: 0.0,
            t_hi: 0.0,
        };
        let sys = cases::make_mass_spring(1.0, 1.0).unwrap();
        let report = sys.check_quadratic_velocity(&bx.sample(20, &mut rng)).unwrap();
        assert_eq!(report.max_residual, 0.0);
    }

    #[test]
    fn cubic_velocity_term_is_flagged() {
        // g = q̇³ gives (∂g/∂q̇)q̇ = 3g.
        let sys = MechanicalSystem::builder(1, |q, qd, _| v(&[qd[0].powi(3) - q[0]]))
            .conservative_autonomous(true)
            .build()
            .unwrap();
        let pts = vec![SamplePoint { q: v(&[0.1]), qdot: v(&[0.5]), t: 0.0 }];
        let report = sys.check_quadratic_velocity(&pts).unwrap();
        assert!(!report.pass);
        assert!((report.max_residual - 0.125).abs() < 1e-8);
    }

    #[test]
    fn jlm_of_two_body() {
        let a = two_body().eval_jlm(&v(&[2.0, 0.0]), &v(&[0.3, 0.1])).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]));
    }

    #[test]
    fn jlm_of_mass_spring_is_mass() {
        let sys = cases::make_mass_spring(3.0, 1.0).unwrap();
        let a = sys.eval_jlm(&v(&[0.2]), &v(&[0.1])).unwrap();
        assert_eq!(a[(0, 0)], 3.0);
        assert!((sys.fd_jlm(&v(&[0.2]), &v(&[0.1])).unwrap()[(0, 0)] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn fd_hessian_matches_analytic_jlm() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sys = two_body();
        for s in two_body_box().sample(50, &mut rng) {
            let a = sys.eval_jlm(&s.q, &s.qdot).unwrap();
            let b = sys.fd_jlm(&s.q, &s.qdot).unwrap();
            assert!(fd::relative_diff(&b, &a) < 1e-5);
        }
    }

    #[test]
    fn asymmetric_multiplier_is_rejected() {
        let lag = ClassicalLagrangian::new(|_, qd| 0.5 * qd.dot(qd))
            .with_jlm(|_, _| DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]));
        let sys = MechanicalSystem::builder(2, |q, _, _| -q.clone())
            .lagrangian(lag)
            .build()
            .unwrap();
        assert!(matches!(
            sys.eval_jlm(&v(&[0.0, 0.0]), &v(&[0.0, 0.0])),
            Err(Error::Asymmetric(_))
        ));
    }

    #[test]
    fn singular_multiplier_is_rejected() {
        let lag = ClassicalLagrangian::new(|_, qd| 0.5 * qd[0] * qd[0]);
        let sys = MechanicalSystem::builder(2, |q, _, _| -q.clone())
            .lagrangian(lag)
            .build()
            .unwrap();
        assert!(matches!(
            sys.jlm_diagnostics(&v(&[0.0, 0.0]), &v(&[1.0, 1.0])),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn builtin_cases_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pts = two_body_box().sample(100, &mut rng);
        let report = two_body().validate(&pts).unwrap();
        assert!(report.max_jlm_asymmetry <= 1e-10);
        assert!(report.max_jlm_condition < 1e8);
        assert_eq!(report.max_time_dependence, 0.0);
    }

    #[test]
    fn time_dependent_system_flagged_autonomous_fails_validation() {
        let sys = MechanicalSystem::builder(1, |q, _, t| v(&[-q[0] + t.sin()]))
            .time_invariant(true)
            .build()
            .unwrap();
        let pts = vec![SamplePoint { q: v(&[0.0]), qdot: v(&[0.0]), t: 0.3 }];
        assert!(sys.validate(&pts).is_err());
    }

    #[test]
    fn fd_mixed_matches_analytic() {
        let sys = two_body();
        let q = v(&[1.4, 0.3]);
        let qd = v(&[0.2, 0.7]);
        let analytic = sys.lagrangian_mixed(&q, &qd).unwrap();
        let lag = ClassicalLagrangian::new(|q, qd| {
            0.5 * (qd[0] * qd[0] + q[0] * q[0] * qd[1] * qd[1]) + 1.0 / q[0]
        });
        let fd_sys = MechanicalSystem::builder(2, |q, _, _| q.clone())
            .lagrangian(lag)
            .build()
            .unwrap();
        let numeric = fd_sys.lagrangian_mixed(&q, &qd).unwrap();
        assert!(fd::relative_diff(&numeric, &analytic) < 1e-6);
    }
}
