//! Numerical Helmholtz conditions for a multiplier `α` and equations of
//! motion `q̈ = f`, written as `α q̈ + β = 0` with `β = −α f`:
//!
//! 1. `α_ij = α_ji`
//! 2. `∂α_ij/∂q̇_k = ∂α_ik/∂q̇_j`
//! 3. `∂β_i/∂q̇_j + ∂β_j/∂q̇_i = 2 D(α_ij)`
//! 4. `∂β_i/∂q_j − ∂β_j/∂q_i = ½ D(∂β_i/∂q̇_j − ∂β_j/∂q̇_i)`
//!
//! with `D = ∂_t + q̇_k ∂/∂q_k`. [`ConditionForm::AsPrinted`] instead uses
//! a symmetric left side in condition 4 and the on-shell derivative
//! `D + f_k ∂/∂q̇_k`; under that reading even the two-body multiplier
//! `diag(1, r²)` is rejected, so it is kept for comparison only.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cases::{make_msd, MsdNonstandardLagrangian, MsdParams};
use crate::control_ode::{integrate, ExtendedState};
use crate::error::{ensure_len, Result};
use crate::fd;
use crate::lagrangian::{discrete_el_residual, max_residual, ExtendedLagrangian, Wrt};
use crate::model::{MechanicalSystem, SamplePoint};

pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionForm {
    Standard,
    AsPrinted,
}

/// Which multiplier [`check_system`] tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplier {
    /// The system's own `∂²𝓛/∂q̇²`.
    Jlm,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HelmholtzReport {
    pub cond1_sym: f64,
    pub cond2_dqdot: f64,
    pub cond3_beta: f64,
    pub cond4_mixed: f64,
    pub pass: bool,
    pub samples: usize,
    pub tol: f64,
    pub form: ConditionForm,
}

/// `β = −α f`.
pub fn beta<A, F>(alpha_fn: &A, f_fn: &F, q: &DVector<f64>, qdot: &DVector<f64>, t: f64) -> Result<DVector<f64>>
where
    A: Fn(&DVector<f64>, &DVector<f64>, f64) -> Result<DMatrix<f64>>,
    F: Fn(&DVector<f64>, &DVector<f64>, f64) -> Result<DVector<f64>>,
{
    let a = alpha_fn(q, qdot, t)?;
    let f = f_fn(q, qdot, t)?;
    ensure_len("f", a.ncols(), f.len())?;
    Ok(-(a * f))
}

/// Central difference of `g` along `(dq, dqdot, dt)` in `(q, q̇, t)`.
fn directional<G>(
    g: &G,
    p: &SamplePoint,
    dq: &DVector<f64>,
    dqdot: &DVector<f64>,
    dt: f64,
) -> Result<DMatrix<f64>>
where
    G: Fn(&DVector<f64>, &DVector<f64>, f64) -> Result<DMatrix<f64>>,
{
    let scale = dq.amax().max(dqdot.amax()).max(dt.abs()).max(1.0);
    let e = fd::SECOND_STEP / scale;
    let plus = g(&(&p.q + dq * e), &(&p.qdot + dqdot * e), p.t + dt * e)?;
    let minus = g(&(&p.q - dq * e), &(&p.qdot - dqdot * e), p.t - dt * e)?;
    Ok((plus - minus) / (2.0 * e))
}

fn nested_step(x: f64) -> f64 {
    fd::SECOND_STEP.max(fd::SECOND_STEP * x.abs())
}

/// Evaluates all four conditions at every sample; residuals are max-abs over
/// samples and index combinations.
pub fn check<A, F>(
    alpha_fn: A,
    f_fn: F,
    samples: &[SamplePoint],
    tol: f64,
    form: ConditionForm,
) -> Result<HelmholtzReport>
where
    A: Fn(&DVector<f64>, &DVector<f64>, f64) -> Result<DMatrix<f64>>,
    F: Fn(&DVector<f64>, &DVector<f64>, f64) -> Result<DVector<f64>>,
{
    let beta_at = |q: &DVector<f64>, qd: &DVector<f64>, t: f64| beta(&alpha_fn, &f_fn, q, qd, t);
    // ∂β/∂q̇ with the wider step, for use inside a second difference.
    let dbeta_dqdot_nested = |q: &DVector<f64>, qd: &DVector<f64>, t: f64| {
        fd::jacobian_with(|v| beta_at(q, v, t), qd, nested_step)
    };
    let alpha_mat = |q: &DVector<f64>, qd: &DVector<f64>, t: f64| alpha_fn(q, qd, t);

    let (mut r1, mut r2, mut r3, mut r4) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for p in samples {
        let alpha = alpha_fn(&p.q, &p.qdot, p.t)?;
        let n = alpha.nrows();
        ensure_len("sample q", n, p.q.len())?;
        r1 = r1.max(crate::model::asymmetry(&alpha));

        let mut dalpha = Vec::with_capacity(n);
        for k in 0..n {
            let h = fd::step_for(p.qdot[k]);
            let mut vp = p.qdot.clone();
            let mut vm = p.qdot.clone();
            vp[k] += h;
            vm[k] -= h;
            dalpha.push((alpha_fn(&p.q, &vp, p.t)? - alpha_fn(&p.q, &vm, p.t)?) / (2.0 * h));
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    r2 = r2.max((dalpha[k][(i, j)] - dalpha[j][(i, k)]).abs());
                }
            }
        }

        let bq = fd::jacobian(|x| beta_at(x, &p.qdot, p.t), &p.q)?;
        let bv = fd::jacobian(|v| beta_at(&p.q, v, p.t), &p.qdot)?;
        let dir_qdot = match form {
            ConditionForm::Standard => DVector::zeros(n),
            ConditionForm::AsPrinted => f_fn(&p.q, &p.qdot, p.t)?,
        };
        let d_alpha = directional(&alpha_mat, p, &p.qdot, &dir_qdot, 1.0)?;
        let d_bv = directional(&dbeta_dqdot_nested, p, &p.qdot, &dir_qdot, 1.0)?;
        let d_k = &d_bv - d_bv.transpose();

        let c3 = &bv + bv.transpose() - d_alpha * 2.0;
        r3 = r3.max(c3.amax());
        let lhs4 = match form {
            ConditionForm::Standard => &bq - bq.transpose(),
            ConditionForm::AsPrinted => &bq + bq.transpose(),
        };
        r4 = r4.max((lhs4 - d_k * 0.5).amax());
    }
    Ok(HelmholtzReport {
        cond1_sym: r1,
        cond2_dqdot: r2,
        cond3_beta: r3,
        cond4_mixed: r4,
        pass: r1 <= tol && r2 <= tol && r3 <= tol && r4 <= tol,
        samples: samples.len(),
        tol,
        form,
    })
}

/// [`check`] with the system's own `f` and either its JLM or the identity.
pub fn check_system(
    sys: &MechanicalSystem,
    multiplier: Multiplier,
    samples: &[SamplePoint],
    tol: f64,
    form: ConditionForm,
) -> Result<HelmholtzReport> {
    let n = sys.dof();
    let f = |q: &DVector<f64>, qd: &DVector<f64>, t: f64| sys.eval_f(q, qd, t);
    match multiplier {
        Multiplier::Jlm => check(|q, qd, _| sys.eval_jlm(q, qd), f, samples, tol, form),
        Multiplier::Identity => check(|_, _, _| Ok(DMatrix::identity(n, n)), f, samples, tol, form),
    }
}

/// Residuals of the mass-spring-damper construction through complex
/// coordinates `y1 = e^{−ct/m}x + i e^{ct/m}u`, `y2 = −i e^{−ct/m}x − e^{ct/m}u`
/// (`u` the physical force).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsdConstructionReport {
    /// Largest relative residual of the printed transformed equations
    /// `ÿ1 = iz²ẏ2 + (ω² − i/2m)y1 − y2/2m`, `ÿ2 = −iz²ẏ1 − y1/2m + (ω² + i/2m)y2`.
    pub printed_transform_residual: f64,
    /// Same for the equations that follow from the transformation,
    /// `ÿ1 = −3iz²ẏ2 − (ω² + 2z⁴)y1 − e^{−2z²t}(iy1 + y2)/2m` and
    /// `ÿ2 = 3iz²ẏ1 − (ω² + 2z⁴)y2 − e^{−2z²t}(y1 − iy2)/2m`.
    pub rederived_transform_residual: f64,
    pub printed_transform_consistent: bool,
    pub transform_pass: bool,
    /// Euler–Lagrange residuals of the real Lagrangian at `h` and `h/2`.
    pub el_residual_x: [f64; 2],
    pub el_residual_u: [f64; 2],
    pub el_step: f64,
    pub el_pass: bool,
    /// FD Hessian of the real Lagrangian over `(ẋ, u̇)`.
    pub jlm: [[f64; 2]; 2],
    pub jlm_error: f64,
    pub jlm_pass: bool,
}

pub const MSD_TRANSFORM_TOL: f64 = 1e-10;
pub const MSD_EL_TOL: f64 = 1e-4;
pub const MSD_JLM_TOL: f64 = 1e-6;

pub fn verify_msd_construction(p: MsdParams, seed: u64) -> Result<MsdConstructionReport> {
    let MsdParams { m, c, k } = p;
    let sys = make_msd(p)?;
    let lag = MsdNonstandardLagrangian { m, c, k };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let i = Complex64::i();
    let (z2, w2) = (c / m, k / m);

    let mut printed: f64 = 0.0;
    let mut rederived: f64 = 0.0;
    for _ in 0..200 {
        let t = rng.random_range(0.0..2.0);
        let [x, xd, u, ud]: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let xdd = (u - c * xd - k * x) / m;
        let udd = (c * ud - k * u) / m;
        // e^{s·z²t}·v and its first two time derivatives.
        let lift = |s: f64, v: f64, vd: f64, vdd: f64| {
            let e = (s * z2 * t).exp();
            (e * v, e * (vd + s * z2 * v), e * (vdd + 2.0 * s * z2 * vd + z2 * z2 * v))
        };
        let (a0, a1, a2) = lift(-1.0, x, xd, xdd);
        let (b0, b1, b2) = lift(1.0, u, ud, udd);
        let (y1, y1d, y1dd) = (a0 + i * b0, a1 + i * b1, a2 + i * b2);
        let (y2, y2d, y2dd) = (-i * a0 - b0, -i * a1 - b1, -i * a2 - b2);

        let scale = 1.0 + y1dd.norm().max(y2dd.norm());
        let p1 = i * z2 * y2d + (w2 - i / (2.0 * m)) * y1 - y2 / (2.0 * m);
        let p2 = -i * z2 * y1d - y1 / (2.0 * m) + (w2 + i / (2.0 * m)) * y2;
        printed = printed.max((y1dd - p1).norm().max((y2dd - p2).norm()) / scale);

        let e2 = (-2.0 * z2 * t).exp();
        let r1 = -3.0 * i * z2 * y2d - (w2 + 2.0 * z2 * z2) * y1 - e2 * (i * y1 + y2) / (2.0 * m);
        let r2 = 3.0 * i * z2 * y1d - (w2 + 2.0 * z2 * z2) * y2 - e2 * (y1 - i * y2) / (2.0 * m);
        rederived = rederived.max((y1dd - r1).norm().max((y2dd - r2).norm()) / scale);
    }

    // Compliant trajectory in normalized control, scaled to physical force.
    let h = 1e-3;
    let s0 = ExtendedState::new(
        DVector::from_element(1, 0.3),
        DVector::from_element(1, -0.2),
        DVector::from_element(1, 0.8),
        DVector::from_element(1, 0.5),
        0.0,
    )?;
    let mut el_x = [0.0; 2];
    let mut el_u = [0.0; 2];
    for (slot, step) in [h, h / 2.0].into_iter().enumerate() {
        let traj = integrate(&sys, &s0, 1.0, step)?.scale_control(m);
        el_x[slot] = max_residual(&discrete_el_residual(&lag, &traj, Wrt::Q)?);
        el_u[slot] = max_residual(&discrete_el_residual(&lag, &traj, Wrt::U)?);
    }

    let s = ExtendedState::new(
        DVector::from_element(1, rng.random_range(-1.0..1.0)),
        DVector::from_element(1, 0.0),
        DVector::from_element(1, rng.random_range(-1.0..1.0)),
        DVector::from_element(1, 0.0),
        0.0,
    )?;
    let v0 = DVector::from_column_slice(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
    let hess = fd::hessian(
        |w| {
            lag.value(&ExtendedState {
                qdot: DVector::from_element(1, w[0]),
                udot: DVector::from_element(1, w[1]),
                ..s.clone()
            })
        },
        &v0,
    )?;
    let jlm_error = (&hess - lag.jlm()).amax();

    Ok(MsdConstructionReport {
        printed_transform_residual: printed,
        rederived_transform_residual: rederived,
        printed_transform_consistent: printed <= MSD_TRANSFORM_TOL,
        transform_pass: rederived <= MSD_TRANSFORM_TOL,
        el_residual_x: el_x,
        el_residual_u: el_u,
        el_step: h,
        el_pass: el_x[0] <= MSD_EL_TOL && el_u[0] <= MSD_EL_TOL,
        jlm: [[hess[(0, 0)], hess[(0, 1)]], [hess[(1, 0)], hess[(1, 1)]]],
        jlm_error,
        jlm_pass: jlm_error <= MSD_JLM_TOL,
    })
}
