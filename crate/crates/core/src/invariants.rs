//! Noether invariants in divergence form,
//! `Φ = (∂L/∂q̂̇)·(ξq̂̇ − η) − ξL + φ`, over the extended coordinates
//! `q̂ = (q, u)`, and the costate-free Hamiltonian.
//!
//! A generator `(ξ, η, φ)` is a symmetry when
//! `E{L} + ξ̇L − φ̇ = 0` with
//! `E{L} = ξ∂L/∂t + η·∂L/∂q̂ + (η̇ − ξ̇q̂̇)·∂L/∂q̂̇`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::control_ode::{ExtendedState, Trajectory};
use crate::error::{Error, Result};
use crate::lagrangian::ExtendedLagrangian;
use crate::model::MechanicalSystem;
use crate::cases::MsdNonstandardLagrangian;

pub type ScalarField = dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync;
pub type VectorField = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
pub type Evaluator = dyn Fn(&ExtendedState) -> Result<f64> + Send + Sync;

/// `H = ½uᵀu + [u̇ + (∂f/∂q̇)ᵀu]ᵀq̇ − uᵀ(f + u)`.
pub fn hamiltonian_costate_free(sys: &MechanicalSystem, s: &ExtendedState) -> Result<f64> {
    let f = sys.eval_f(&s.q, &s.qdot, s.t)?;
    let b = sys.eval_partials(&s.q, &s.qdot, s.t)?.df_dqdot;
    let lam1 = &s.udot + b.transpose() * &s.u;
    Ok(0.5 * s.u.dot(&s.u) + lam1.dot(&s.qdot) - s.u.dot(&(f + &s.u)))
}

/// `(q, u)` stacked.
pub fn extended_coordinates(s: &ExtendedState) -> DVector<f64> {
    let n = s.dof();
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&s.q);
    out.rows_mut(n, n).copy_from(&s.u);
    out
}

/// `(q̇, u̇)` stacked.
pub fn extended_velocities(s: &ExtendedState) -> DVector<f64> {
    let n = s.dof();
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&s.qdot);
    out.rows_mut(n, n).copy_from(&s.udot);
    out
}

/// Point symmetry `ξ∂_t + η·∂_q̂` with divergence term `φ`, all functions of
/// `(t, q̂)` only.
#[derive(Clone)]
pub struct GeneratorSpec {
    pub name: String,
    pub xi: Arc<ScalarField>,
    pub eta: Arc<VectorField>,
    pub phi: Arc<ScalarField>,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec").field("name", &self.name).finish()
    }
}

impl GeneratorSpec {
    pub fn new(
        name: impl Into<String>,
        xi: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
        eta: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        phi: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            xi: Arc::new(xi),
            eta: Arc::new(eta),
            phi: Arc::new(phi),
        }
    }

    /// Same `(ξ, η)` with a different divergence term.
    pub fn with_phi(&self, phi: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            phi: Arc::new(phi),
            ..self.clone()
        }
    }
}

/// A named function of the extended state.
#[derive(Clone)]
pub struct ConservedQuantity {
    pub name: String,
    evaluator: Arc<Evaluator>,
}

impl fmt::Debug for ConservedQuantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConservedQuantity").field("name", &self.name).finish()
    }
}

impl ConservedQuantity {
    pub fn new(
        name: impl Into<String>,
        evaluator: impl Fn(&ExtendedState) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            evaluator: Arc::new(evaluator),
        }
    }

    /// Noether charge of `gen` for `lag`.
    pub fn from_generator(name: impl Into<String>, lag: Arc<dyn ExtendedLagrangian>, gen: GeneratorSpec) -> Self {
        Self::new(name, move |s| noether_charge(lag.as_ref(), &gen, s))
    }

    pub fn value(&self, s: &ExtendedState) -> Result<f64> {
        (self.evaluator)(s)
    }
}

/// `(∂L/∂q̂̇)·(ξq̂̇ − η) − ξL + φ`.
pub fn noether_charge<L: ExtendedLagrangian + ?Sized>(lag: &L, gen: &GeneratorSpec, s: &ExtendedState) -> Result<f64> {
    let qh = extended_coordinates(s);
    let vh = extended_velocities(s);
    let p = lag.partials(s)?;
    let mom = stack(&p.dqdot, &p.dudot);
    let xi = (gen.xi)(s.t, &qh);
    let eta = (gen.eta)(s.t, &qh);
    Ok(mom.dot(&(&vh * xi - eta)) - xi * lag.value(s)? + (gen.phi)(s.t, &qh))
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Step for total time derivatives of generator fields.
const RATE_STEP: f64 = 1e-5;

/// `∂g/∂t + ∇g·q̂̇` by a central difference along `(1, q̂̇)`.
fn total_rate<G, T>(g: G, t: f64, qh: &DVector<f64>, vh: &DVector<f64>) -> T
where
    G: Fn(f64, &DVector<f64>) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
{
    let e = RATE_STEP / vh.amax().max(1.0);
    (g(t + e, &(qh + vh * e)) - g(t - e, &(qh - vh * e))) / (2.0 * e)
}

/// `E{L} + ξ̇L − φ̇` at one point.
pub fn invariance_residual<L: ExtendedLagrangian + ?Sized>(lag: &L, gen: &GeneratorSpec, s: &ExtendedState) -> Result<f64> {
    Ok(identity_without_phi(lag, gen, s)? - total_rate(|t, q| (gen.phi)(t, q), s.t, &extended_coordinates(s), &extended_velocities(s)))
}

fn identity_without_phi<L: ExtendedLagrangian + ?Sized>(lag: &L, gen: &GeneratorSpec, s: &ExtendedState) -> Result<f64> {
    let qh = extended_coordinates(s);
    let vh = extended_velocities(s);
    let p = lag.partials(s)?;
    let force = stack(&p.dq, &p.du);
    let mom = stack(&p.dqdot, &p.dudot);
    let xi = (gen.xi)(s.t, &qh);
    let eta = (gen.eta)(s.t, &qh);
    let xi_dot = total_rate(|t, q| (gen.xi)(t, q), s.t, &qh, &vh);
    let eta_dot = total_rate(|t, q| (gen.eta)(t, q), s.t, &qh, &vh);
    let e_l = xi * p.dt + eta.dot(&force) + (eta_dot - &vh * xi_dot).dot(&mom);
    Ok(e_l + xi_dot * lag.value(s)?)
}

/// Max-abs invariance residual over samples.
pub fn check_invariance_identity<L: ExtendedLagrangian + ?Sized>(
    lag: &L,
    gen: &GeneratorSpec,
    samples: &[ExtendedState],
) -> Result<f64> {
    samples
        .iter()
        .map(|s| invariance_residual(lag, gen, s).map(f64::abs))
        .try_fold(0.0_f64, |acc, r| r.map(|r| acc.max(r)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceFit {
    pub coefficients: Vec<f64>,
    pub max_residual: f64,
}

/// Least-squares `φ = Σ c_j b_j(t, q̂)` making the invariance identity hold
/// for the `(ξ, η)` of `gen` (its own `φ` is ignored).
pub fn fit_divergence_term<L: ExtendedLagrangian + ?Sized>(
    lag: &L,
    gen: &GeneratorSpec,
    basis: &[Arc<ScalarField>],
    samples: &[ExtendedState],
) -> Result<DivergenceFit> {
    if samples.len() < basis.len() {
        return Err(Error::TooShort { needed: basis.len(), have: samples.len() });
    }
    let mut a = DMatrix::zeros(samples.len(), basis.len());
    let mut rhs = DVector::zeros(samples.len());
    for (row, s) in samples.iter().enumerate() {
        let qh = extended_coordinates(s);
        let vh = extended_velocities(s);
        rhs[row] = identity_without_phi(lag, gen, s)?;
        for (col, b) in basis.iter().enumerate() {
            a[(row, col)] = total_rate(|t, q| b(t, q), s.t, &qh, &vh);
        }
    }
    let c = a
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let max_residual = (a * &c - rhs).amax();
    Ok(DivergenceFit {
        coefficients: c.iter().copied().collect(),
        max_residual,
    })
}

/// Generators `G1..G5` of the mass-spring Lagrangian
/// `m ẋu̇ − kxu + ½u²` (physical control), `ω = √(k/m)`.
///
/// `G1`, `G2` are written for general `m`; at `m = 1` the `x` components
/// reduce to `(cos ωt + 2ωt sin ωt)/(4ω²)` and `(sin ωt − 2ωt cos ωt)/(4ω²)`.
pub fn mass_spring_generators(m: f64, k: f64) -> Vec<GeneratorSpec> {
    let w = (k / m).sqrt();
    let two = |a: f64, b: f64| DVector::from_column_slice(&[a, b]);
    vec![
        GeneratorSpec::new(
            "G1",
            |_, _| 0.0,
            move |t, _| {
                let (s, c) = (w * t).sin_cos();
                two((c + 2.0 * w * t * s) / (4.0 * k), c)
            },
            move |t, q| {
                let (s, c) = (w * t).sin_cos();
                let (x, u) = (q[0], q[1]);
                (u / (4.0 * w) - m * w * x) * s + 0.5 * u * t * c
            },
        ),
        GeneratorSpec::new(
            "G2",
            |_, _| 0.0,
            move |t, _| {
                let (s, c) = (w * t).sin_cos();
                two((s - 2.0 * w * t * c) / (4.0 * k), s)
            },
            move |t, q| {
                let (s, c) = (w * t).sin_cos();
                let (x, u) = (q[0], q[1]);
                (m * w * x - u / (4.0 * w)) * c + 0.5 * u * t * s
            },
        ),
        GeneratorSpec::new(
            "G3",
            |_, _| 0.0,
            move |t, _| two((w * t).cos(), 0.0),
            move |t, q| -k * q[1] / w * (w * t).sin(),
        ),
        GeneratorSpec::new(
            "G4",
            |_, _| 0.0,
            move |t, _| two(-(w * t).sin(), 0.0),
            move |t, q| -k * q[1] / w * (w * t).cos(),
        ),
        GeneratorSpec::new("G5", |_, _| 1.0, |_, _| DVector::zeros(2), |_, _| 0.0),
    ]
}

/// `G1` with the coefficients as originally printed, exact only at `m = 1`:
/// `η1 = (cos ωt + 2ωt sin ωt)/(4ω²)`,
/// `φ = ((u − kx)/ω − 3ku/(4ω³)) sin ωt + ku t cos ωt/(2ω²)`.
pub fn printed_g1(m: f64, k: f64) -> GeneratorSpec {
    let w = (k / m).sqrt();
    GeneratorSpec::new(
        "G1 printed",
        |_, _| 0.0,
        move |t, _| {
            let (s, c) = (w * t).sin_cos();
            DVector::from_column_slice(&[(c + 2.0 * w * t * s) / (4.0 * w * w), c])
        },
        move |t, q| {
            let (s, c) = (w * t).sin_cos();
            let (x, u) = (q[0], q[1]);
            ((u - k * x) / w - 3.0 * k * u / (4.0 * w.powi(3))) * s + k * u * t * c / (2.0 * w * w)
        },
    )
}

/// The printed closed form of `Φ1`, whose `3ku/ω³` term disagrees with the
/// charge of [`printed_g1`] (`3ku/(4ω³)`).
pub fn printed_phi1(m: f64, k: f64) -> ConservedQuantity {
    let w = (k / m).sqrt();
    ConservedQuantity::new("Phi1 printed", move |s| {
        let (x, xd, u, ud, t) = (s.q[0], s.qdot[0], s.u[0], s.udot[0], s.t);
        let (sn, cs) = (w * t).sin_cos();
        Ok(((u - k * x) / w - 3.0 * k * u / w.powi(3) - m * ud * t / (2.0 * w)) * sn
            + (k * u * t / (2.0 * w * w) - m * ud / (4.0 * w * w) - m * xd) * cs)
    })
}

/// `Φ1..Φ5` for the mass-spring system plus the printed `Φ1`. Evaluators
/// take states whose control is the physical force (`m·u` for a normalized
/// trajectory, see [`Trajectory::scale_control`]).
///
/// `Φ3 = −u√(mk) sin ωt − m u̇ cos ωt` and `Φ5 = m ẋu̇ + kxu − ½u²` are the
/// closed forms; the others are charges of [`mass_spring_generators`].
pub fn mass_spring_invariant_set(m: f64, k: f64) -> Result<Vec<ConservedQuantity>> {
    if !(m > 0.0 && k > 0.0 && m.is_finite() && k.is_finite()) {
        return Err(Error::InvalidParams(format!("need m, k > 0, got m = {m}, k = {k}")));
    }
    let lag: Arc<dyn ExtendedLagrangian> = Arc::new(MsdNonstandardLagrangian { m, c: 0.0, k });
    let w = (k / m).sqrt();
    let mut gens = mass_spring_generators(m, k).into_iter();
    let mut next = |name: &str| ConservedQuantity::from_generator(name, lag.clone(), gens.next().unwrap());
    let phi1 = next("Phi1");
    let phi2 = next("Phi2");
    let _ = next("Phi3 charge");
    let phi4 = next("Phi4");
    let phi3 = ConservedQuantity::new("Phi3", move |s| {
        let (sn, cs) = (w * s.t).sin_cos();
        Ok(-s.u[0] * (m * k).sqrt() * sn - m * s.udot[0] * cs)
    });
    let phi5 = ConservedQuantity::new("Phi5", move |s| {
        Ok(m * s.qdot[0] * s.udot[0] + k * s.q[0] * s.u[0] - 0.5 * s.u[0] * s.u[0])
    });
    Ok(vec![phi1, phi2, phi3, phi4, phi5, printed_phi1(m, k)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftReport {
    pub initial: f64,
    pub max_drift_abs: f64,
    /// Absolute drift over `max(1, |Φ(t0)|)`.
    pub max_drift_rel: f64,
}

/// Drift of `quantity` along `traj` relative to its value at `t0`.
pub fn drift_report(traj: &Trajectory, quantity: &ConservedQuantity) -> Result<DriftReport> {
    if traj.len() < 2 {
        return Err(Error::TooShort { needed: 2, have: traj.len() });
    }
    let initial = quantity.value(traj.first())?;
    let mut max_drift_abs: f64 = 0.0;
    for s in traj.states() {
        max_drift_abs = max_drift_abs.max((quantity.value(s)? - initial).abs());
    }
    Ok(DriftReport {
        initial,
        max_drift_abs,
        max_drift_rel: max_drift_abs / initial.abs().max(1.0),
    })
}
