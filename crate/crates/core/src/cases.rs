//! Built-in systems: planar two-body motion in polar coordinates and the
//! mass-spring-damper.
//!
//! Two-body uses canonical units (`μ = 1`, reference radius 1). The
//! mass-spring-damper is normalized to `ẍ = −(cẋ + kx)/m + u`, so the
//! physical force is `m·u`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control_ode::ExtendedState;
use crate::error::{Error, Result};
use crate::lagrangian::{ExtendedLagrangian, LagrangianPartials};
use crate::model::{ClassicalLagrangian, MechanicalSystem, Partials, SecondPartials};

pub const DEFAULT_R_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoBodyParams {
    pub mu: f64,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
}

fn default_r_min() -> f64 {
    DEFAULT_R_MIN
}

impl TwoBodyParams {
    pub fn canonical() -> Self {
        Self { mu: 1.0, r_min: DEFAULT_R_MIN }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsdParams {
    pub m: f64,
    pub c: f64,
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassSpringParams {
    pub m: f64,
    pub k: f64,
}

/// `{"case": ..., "params": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", content = "params", rename_all = "snake_case")]
pub enum CaseConfig {
    TwoBody(TwoBodyParams),
    Msd(MsdParams),
    MassSpring(MassSpringParams),
}

impl CaseConfig {
    pub fn name(&self) -> &'static str {
        match self {
            CaseConfig::TwoBody(_) => "two_body",
            CaseConfig::Msd(_) => "msd",
            CaseConfig::MassSpring(_) => "mass_spring",
        }
    }
}

pub fn from_config(cfg: &CaseConfig) -> Result<MechanicalSystem> {
    match *cfg {
        CaseConfig::TwoBody(p) => make_two_body(p),
        CaseConfig::Msd(p) => make_msd(p),
        CaseConfig::MassSpring(p) => make_mass_spring(p.m, p.k),
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{name} must be positive, got {x}")))
    }
}

pub fn make_two_body(p: TwoBodyParams) -> Result<MechanicalSystem> {
    positive("mu", p.mu)?;
    positive("r_min", p.r_min)?;
    let TwoBodyParams { mu, r_min } = p;

    let accel = move |q: &DVector<f64>, qd: &DVector<f64>, _t: f64| {
        let (r, rd, td) = (q[0], qd[0], qd[1]);
        DVector::from_column_slice(&[r * td * td - mu / (r * r), -2.0 * rd * td / r])
    };
    let partials = move |q: &DVector<f64>, qd: &DVector<f64>, _t: f64| {
        let (r, rd, td) = (q[0], qd[0], qd[1]);
        Partials {
            df_dq: DMatrix::from_row_slice(
                2,
                2,
                &[td * td + 2.0 * mu / r.powi(3), 0.0, 2.0 * rd * td / (r * r), 0.0],
            ),
            df_dqdot: DMatrix::from_row_slice(
                2,
                2,
                &[0.0, 2.0 * r * td, -2.0 * td / r, -2.0 * rd / r],
            ),
        }
    };
    let second = |q: &DVector<f64>, qd: &DVector<f64>, _t: f64| {
        let (r, rd, td) = (q[0], qd[0], qd[1]);
        let r2 = r * r;
        SecondPartials {
            wrt_q: vec![
                DMatrix::from_row_slice(2, 2, &[0.0, 2.0 * td, 2.0 * td / r2, 2.0 * rd / r2]),
                DMatrix::zeros(2, 2),
            ],
            wrt_qdot: vec![
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -2.0 / r]),
                DMatrix::from_row_slice(2, 2, &[0.0, 2.0 * r, -2.0 / r, 0.0]),
            ],
        }
    };
    let lagrangian = ClassicalLagrangian::new(move |q, qd| {
        0.5 * (qd[0] * qd[0] + q[0] * q[0] * qd[1] * qd[1]) + mu / q[0]
    })
    .with_gradient(move |q, qd| {
        let (r, rd, td) = (q[0], qd[0], qd[1]);
        (
            DVector::from_column_slice(&[r * td * td - mu / (r * r), 0.0]),
            DVector::from_column_slice(&[rd, r * r * td]),
        )
    })
    .with_mixed(|q, qd| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0 * q[0] * qd[1], 0.0]))
    .with_jlm(|q, _| DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, q[0] * q[0]])));

    MechanicalSystem::builder(2, accel)
        .name("two_body")
        .partials(partials)
        .second_partials(second)
        .lagrangian(lagrangian)
        .conservative_autonomous(true)
        .guard(move |q, _| {
            if q[0] >= r_min {
                Ok(())
            } else {
                Err(Error::Domain(format!("r = {} below r_min = {r_min}", q[0])))
            }
        })
        .build()
}

pub fn make_msd(p: MsdParams) -> Result<MechanicalSystem> {
    positive("m", p.m)?;
    positive("k", p.k)?;
    if !(p.c.is_finite() && p.c >= 0.0) {
        return Err(Error::InvalidParams(format!("c must be non-negative, got {}", p.c)));
    }
    let MsdParams { m, c, k } = p;
    let conservative = c == 0.0;

    let mut b = MechanicalSystem::builder(1, move |q, qd, _| {
        DVector::from_element(1, -(c * qd[0] + k * q[0]) / m)
    })
    .name(if conservative { "mass_spring" } else { "msd" })
    .partials(move |_, _, _| Partials {
        df_dq: DMatrix::from_element(1, 1, -k / m),
        df_dqdot: DMatrix::from_element(1, 1, -c / m),
    })
    .second_partials(|_, _, _| SecondPartials {
        wrt_q: vec![DMatrix::zeros(1, 1)],
        wrt_qdot: vec![DMatrix::zeros(1, 1)],
    })
    .time_invariant(true)
    .control_scale(m)
    .nonstandard(Arc::new(MsdNonstandardLagrangian { m, c, k }));

    if conservative {
        let lagrangian = ClassicalLagrangian::new(move |q, qd| 0.5 * m * qd[0] * qd[0] - 0.5 * k * q[0] * q[0])
            .with_gradient(move |q, qd| {
                (DVector::from_element(1, -k * q[0]), DVector::from_element(1, m * qd[0]))
            })
            .with_mixed(|_, _| DMatrix::zeros(1, 1))
            .with_jlm(move |_, _| DMatrix::from_element(1, 1, m));
        b = b.lagrangian(lagrangian).conservative_autonomous(true);
    }
    b.build()
}

pub fn make_mass_spring(m: f64, k: f64) -> Result<MechanicalSystem> {
    make_msd(MsdParams { m, c: 0.0, k })
}

/// `L = m ẋu̇ − ½cẋu + ½cxu̇ − kxu + ½u²` over `(x, u)` with `u` the physical
/// force. Its Euler–Lagrange equations are `m ẍ + cẋ + kx = u` (in `u`) and
/// `m ü − cu̇ + ku = 0` (in `x`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsdNonstandardLagrangian {
    pub m: f64,
    pub c: f64,
    pub k: f64,
}

impl MsdNonstandardLagrangian {
    /// Velocity Hessian over `(ẋ, u̇)`.
    pub fn jlm(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, self.m, self.m, 0.0])
    }
}

impl ExtendedLagrangian for MsdNonstandardLagrangian {
    fn value(&self, s: &ExtendedState) -> Result<f64> {
        let Self { m, c, k } = *self;
        let (x, xd, u, ud) = (s.q[0], s.qdot[0], s.u[0], s.udot[0]);
        Ok(m * xd * ud - 0.5 * c * xd * u + 0.5 * c * x * ud - k * x * u + 0.5 * u * u)
    }

    fn partials(&self, s: &ExtendedState) -> Result<LagrangianPartials> {
        let Self { m, c, k } = *self;
        let (x, xd, u, ud) = (s.q[0], s.qdot[0], s.u[0], s.udot[0]);
        let one = |v: f64| DVector::from_element(1, v);
        Ok(LagrangianPartials {
            dq: one(0.5 * c * ud - k * u),
            dqdot: one(m * ud - 0.5 * c * u),
            du: one(-0.5 * c * xd - k * x + u),
            dudot: one(m * xd + 0.5 * c * x),
            dt: 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_ode::rhs;
    use crate::fd;
    use crate::lagrangian::fd_partials;
    use crate::model::SampleBox;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(make_two_body(TwoBodyParams { mu: 0.0, r_min: 1e-3 }).is_err());
        assert!(make_two_body(TwoBodyParams { mu: 1.0, r_min: -1.0 }).is_err());
        assert!(make_msd(MsdParams { m: 0.0, c: 0.0, k: 1.0 }).is_err());
        assert!(make_msd(MsdParams { m: 1.0, c: -0.1, k: 1.0 }).is_err());
        assert!(make_msd(MsdParams { m: 1.0, c: 0.1, k: f64::NAN }).is_err());
    }

    #[test]
    fn two_body_multiplier_at_r_two() {
        let sys = make_two_body(TwoBodyParams::canonical()).unwrap();
        let a = sys.eval_jlm(&v(&[2.0, 1.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]));
    }

    #[test]
    fn msd_flags() {
        let damped = make_msd(MsdParams { m: 1.0, c: 0.2, k: 1.0 }).unwrap();
        assert!(!damped.is_conservative_autonomous());
        assert!(damped.classical_lagrangian().is_none());
        assert!(damped.nonstandard_lagrangian().is_some());
        let undamped = make_msd(MsdParams { m: 4.0, c: 0.0, k: 1.0 }).unwrap();
        assert!(undamped.is_conservative_autonomous());
        assert_eq!(undamped.name(), "mass_spring");
        assert_eq!(undamped.control_scale(), 4.0);
    }

    #[test]
    fn config_roundtrip() {
        let text = r#"{"case":"msd","params":{"m":1.0,"c":0.2,"k":1.0}}"#;
        let cfg: CaseConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg, CaseConfig::Msd(MsdParams { m: 1.0, c: 0.2, k: 1.0 }));
        let cfg: CaseConfig = serde_json::from_str(r#"{"case":"two_body","params":{"mu":1.0}}"#).unwrap();
        assert_eq!(cfg, CaseConfig::TwoBody(TwoBodyParams::canonical()));
        assert!(serde_json::from_str::<CaseConfig>(r#"{"case":"msd","params":{"m":1,"c":0,"k":1,"x":2}}"#).is_err());
        assert!(serde_json::from_str::<CaseConfig>(r#"{"case":"pendulum","params":{}}"#).is_err());
        let sys = from_config(&CaseConfig::MassSpring(MassSpringParams { m: 1.0, k: 2.0 })).unwrap();
        assert_eq!(sys.dof(), 1);
    }

    #[test]
    fn second_partials_match_fd() {
        let sys = make_two_body(TwoBodyParams::canonical()).unwrap();
        let bx = SampleBox {
            q_lo: vec![0.5, 0.0],
            q_hi: vec![3.0, 6.0],
            qdot_lo: vec![-1.0, -1.0],
            qdot_hi: vec![1.0, 1.0],
            t_lo: 0.0,
            t_hi: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in bx.sample(100, &mut rng) {
            let a = sys.eval_second_partials(&s.q, &s.qdot, 0.0).unwrap();
            let b = sys.fd_second_partials(&s.q, &s.qdot, 0.0).unwrap();
            for k in 0..2 {
                assert!(fd::relative_diff(&b.wrt_q[k], &a.wrt_q[k]) < 1e-6);
                assert!(fd::relative_diff(&b.wrt_qdot[k], &a.wrt_qdot[k]) < 1e-6);
            }
        }
    }

    /// The two-body control equations written out by hand, with r̈ and θ̈
    /// taken from the controlled equations of motion.
    fn printed_two_body_uddot(s: &ExtendedState, mu: f64) -> [f64; 2] {
        let (r, rd, td) = (s.q[0], s.qdot[0], s.qdot[1]);
        let (ur, ut, urd, utd) = (s.u[0], s.u[1], s.udot[0], s.udot[1]);
        let rdd = r * td * td - mu / (r * r) + ur;
        let tdd = -2.0 * rd * td / r + ut;
        let urdd = (td * td + 2.0 * mu / r.powi(3)) * ur + 2.0 * tdd / r * ut + 2.0 * td / r * utd;
        let utdd = -(2.0 * rd * td + 2.0 * r * tdd) * ur
            + (2.0 * rdd / r - 2.0 * rd * rd / (r * r)) * ut
            - 2.0 * r * td * urd
            + 2.0 * rd / r * utd;
        [urdd, utdd]
    }

    #[test]
    fn two_body_control_equation_matches_hand_expansion() {
        let sys = make_two_body(TwoBodyParams::canonical()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        use rand::Rng;
        for _ in 0..50 {
            let s = ExtendedState::new(
                v(&[rng.random_range(0.5..3.0), rng.random_range(0.0..6.0)]),
                v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                0.0,
            )
            .unwrap();
            let d = rhs(&sys, &s).unwrap();
            let expect = printed_two_body_uddot(&s, 1.0);
            assert!((d.uddot[0] - expect[0]).abs() < 1e-12, "{} vs {}", d.uddot[0], expect[0]);
            assert!((d.uddot[1] - expect[1]).abs() < 1e-12, "{} vs {}", d.uddot[1], expect[1]);
        }
    }

    #[test]
    fn nonstandard_lagrangian_partials_and_multiplier() {
        let lag = MsdNonstandardLagrangian { m: 2.0, c: 0.3, k: 1.5 };
        let s = ExtendedState::new(v(&[0.4]), v(&[-0.2]), v(&[1.1]), v(&[0.7]), 0.3).unwrap();
        let a = lag.partials(&s).unwrap();
        let b = fd_partials(&lag, &s).unwrap();
        assert!((a.dq - b.dq).amax() < 1e-9);
        assert!((a.dqdot - b.dqdot).amax() < 1e-9);
        assert!((a.du - b.du).amax() < 1e-9);
        assert!((a.dudot - b.dudot).amax() < 1e-9);
        let h = fd::hessian(
            |w| lag.value(&ExtendedState { qdot: v(&[w[0]]), udot: v(&[w[1]]), ..s.clone() }),
            &v(&[-0.2, 0.7]),
        )
        .unwrap();
        assert!(fd::relative_diff(&h, &lag.jlm()) < 1e-6);
    }
}
