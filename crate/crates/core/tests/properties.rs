use std::f64::consts::PI;

use nalgebra::DVector;
use ocvar_core::bvp::{solve_costate_free, BoundarySpec, ShootingOptions};
use ocvar_core::cases::{make_mass_spring, make_msd, make_two_body, MsdParams, TwoBodyParams};
use ocvar_core::control_ode::{rhs, ExtendedState, Trajectory};
use ocvar_core::costate_oracle::{costate_from_extended, costate_rhs, hamiltonian, to_extended};
use ocvar_core::helmholtz::{check_system, ConditionForm, Multiplier};
use ocvar_core::invariants::hamiltonian_costate_free;
use ocvar_core::lagrangian::{eval_l_jlm, eval_l_split};
use ocvar_core::model::{asymmetry, MechanicalSystem, SamplePoint};
use proptest::prelude::*;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn two_body() -> MechanicalSystem {
    make_two_body(TwoBodyParams::canonical()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

prop_compose! {
    fn two_body_point()(r in 0.5f64..2.0, th in -PI..PI, rd in -1.0f64..1.0, thd in -1.5f64..1.5)
        -> (DVector<f64>, DVector<f64>) {
        (v(&[r, th]), v(&[rd, thd]))
    }
}

prop_compose! {
    fn control()(a in -1.0f64..1.0, b in -1.0f64..1.0) -> DVector<f64> {
        v(&[a, b])
    }
}

prop_compose! {
    fn msd_params()(m in 0.3f64..3.0, c in 0.0f64..1.0, k in 0.3f64..3.0) -> MsdParams {
        MsdParams { m, c, k }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn control_block_is_linear_in_control_for_msd(
        p in msd_params(), x in -2.0f64..2.0, xd in -2.0f64..2.0,
        u in -2.0f64..2.0, ud in -2.0f64..2.0, lambda in -3.0f64..3.0,
    ) {
        let sys = make_msd(p).unwrap();
        let at = |l: f64| rhs(&sys, &ExtendedState::new(v(&[x]), v(&[xd]), v(&[l * u]), v(&[l * ud]), 0.0).unwrap()).unwrap();
        let (base, scaled) = (at(1.0), at(lambda));
        let expect = &base.uddot * lambda;
        let err = (&scaled.uddot - &expect).amax() / (1.0 + expect.amax());
        prop_assert!(err <= 1e-10, "{err}");
        prop_assert!((&scaled.udot - &base.udot * lambda).amax() <= 1e-12);
    }

    /// With `∂f/∂q̇` depending on `q̇`, `d/dt(∂f/∂q̇)` carries `q̈ = f + u`, so
    /// the control acceleration is quadratic in the control.
    #[test]
    fn control_block_is_quadratic_for_two_body(
        (q, qd) in two_body_point(), u in control(), ud in control(), lambda in -3.0f64..3.0,
    ) {
        let sys = two_body();
        let at = |l: f64| {
            rhs(&sys, &ExtendedState::new(q.clone(), qd.clone(), &u * l, &ud * l, 0.0).unwrap()).unwrap().uddot
        };
        let (plus, minus) = (at(1.0), at(-1.0));
        let linear = (&plus - &minus) / 2.0;
        let quadratic = (&plus + &minus) / 2.0;
        let expect = &linear * lambda + &quadratic * (lambda * lambda);
        let err = (at(lambda) - &expect).amax() / (1.0 + expect.amax());
        prop_assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn split_recombines_to_dynamics((q, qd) in two_body_point()) {
        let sys = two_body();
        let f = sys.eval_f(&q, &qd, 0.0).unwrap();
        let split = sys.split_gh(&q, &qd, 0.0).unwrap();
        let diff = (split.recombine() - &f).amax();
        prop_assert!(diff <= 4.0 * f64::EPSILON * f.amax().max(1.0), "{diff}");
    }

    #[test]
    fn analytic_partials_match_differences((q, qd) in two_body_point(), p in msd_params(), x in -2.0f64..2.0, xd in -2.0f64..2.0) {
        let cases = [(two_body(), q, qd), (make_msd(p).unwrap(), v(&[x]), v(&[xd]))];
        for (sys, q, qd) in &cases {
            let a = sys.eval_partials(q, qd, 0.0).unwrap();
            let b = sys.fd_partials(q, qd, 0.0).unwrap();
            let scale = 1.0 + a.df_dq.amax().max(a.df_dqdot.amax());
            prop_assert!((&a.df_dq - &b.df_dq).amax() / scale <= 1e-6);
            prop_assert!((&a.df_dqdot - &b.df_dqdot).amax() / scale <= 1e-6);
        }
    }

    #[test]
    fn jlm_symmetric_and_well_conditioned((q, qd) in two_body_point()) {
        let sys = two_body();
        prop_assert!(asymmetry(&sys.eval_jlm(&q, &qd).unwrap()) <= 1e-10);
        prop_assert!(asymmetry(&sys.fd_jlm(&q, &qd).unwrap()) <= 1e-8);
        prop_assert!(sys.jlm_diagnostics(&q, &qd).is_ok());
    }

    #[test]
    fn lagrangian_forms_agree_on_shell((q, qd) in two_body_point(), u in control(), ud in control()) {
        let sys = two_body();
        let qdd = sys.eval_f(&q, &qd, 0.0).unwrap() + &u;
        let split = eval_l_split(&sys, &q, &qd, &u, &ud, 0.0).unwrap();
        let jlm = eval_l_jlm(&sys, &q, &qd, &qdd, &u, &ud).unwrap();
        prop_assert!(rel(jlm, split) <= 1e-9);
    }

    #[test]
    fn costate_mapping_round_trips((q, qd) in two_body_point(), u in control(), ud in control()) {
        let sys = two_body();
        let s = ExtendedState::new(q, qd, u, ud, 0.0).unwrap();
        let c = costate_from_extended(&sys, &s).unwrap();
        let back = to_extended(&sys, &c).unwrap();
        prop_assert!((&back.u - &s.u).amax() <= 1e-14);
        prop_assert!((&back.udot - &s.udot).amax() <= 1e-12);
        prop_assert!(rel(hamiltonian_costate_free(&sys, &s).unwrap(), hamiltonian(&sys, &c).unwrap()) <= 1e-9);
        // u̇ = −Λ̇₂ and the control ODE agree pointwise.
        let dc = costate_rhs(&sys, &c).unwrap();
        let de = rhs(&sys, &s).unwrap();
        prop_assert!((&de.udot + &dc.lam2dot).amax() <= 1e-12);
    }

    #[test]
    fn helmholtz_ignores_sample_order(points in prop::collection::vec(two_body_point(), 4..8), seed in any::<u64>()) {
        let sys = two_body();
        let samples: Vec<SamplePoint> = points.into_iter().map(|(q, qdot)| SamplePoint { q, qdot, t: 0.0 }).collect();
        let mut shuffled = samples.clone();
        let n = shuffled.len();
        // Fisher–Yates driven by the drawn seed.
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        for m in [Multiplier::Jlm, Multiplier::Identity] {
            let a = check_system(&sys, m, &samples, 1e-6, ConditionForm::Standard).unwrap();
            let b = check_system(&sys, m, &shuffled, 1e-6, ConditionForm::Standard).unwrap();
            prop_assert_eq!(a.pass, b.pass);
            prop_assert_eq!(a.cond3_beta, b.cond3_beta);
        }
    }
}

/// Steps for the probe integrator and quadrature.
const PROBE_STEPS: usize = 1000;

/// State at `t = 1` of `ẍ = f(x, ẋ) + u(t)` from `(x0, ẋ0)`, RK4.
fn endpoint(sys: &MechanicalSystem, x0: [f64; 2], u: &dyn Fn(f64) -> f64) -> [f64; 2] {
    let h = 1.0 / PROBE_STEPS as f64;
    let acc = |t: f64, z: [f64; 2]| {
        let f = sys.eval_f(&v(&[z[0]]), &v(&[z[1]]), t).unwrap()[0];
        [z[1], f + u(t)]
    };
    let mut z = x0;
    for i in 0..PROBE_STEPS {
        let t = i as f64 * h;
        let add = |z: [f64; 2], k: [f64; 2], s: f64| [z[0] + s * k[0], z[1] + s * k[1]];
        let k1 = acc(t, z);
        let k2 = acc(t + h / 2.0, add(z, k1, h / 2.0));
        let k3 = acc(t + h / 2.0, add(z, k2, h / 2.0));
        let k4 = acc(t + h, add(z, k3, h));
        z = [
            z[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            z[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
    }
    z
}

/// `½∫₀¹u²` by Simpson's rule.
fn cost(u: &dyn Fn(f64) -> f64) -> f64 {
    let h = 1.0 / PROBE_STEPS as f64;
    let g = |t: f64| 0.5 * u(t) * u(t);
    let mut s = g(0.0) + g(1.0);
    for i in 1..PROBE_STEPS {
        s += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn optimal_msd() -> (MechanicalSystem, Trajectory) {
    let sys = make_msd(MsdParams { m: 1.0, c: 0.2, k: 1.0 }).unwrap();
    let spec = BoundarySpec::full_state(0.0, 1.0, v(&[0.0]), v(&[0.0]), v(&[1.0]), v(&[0.0])).unwrap();
    let res = solve_costate_free(&sys, &spec, &DVector::zeros(2), &ShootingOptions::with_step(1e-3)).unwrap();
    assert!(res.converged);
    (sys, res.trajectory)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Feasible perturbations of the optimal MSD control never lower the cost.
    #[test]
    fn msd_optimal_control_is_a_minimum(a in prop::collection::vec(-1.0f64..1.0, 3)) {
        let (sys, traj) = optimal_msd();
        let ustar = |t: f64| traj.interpolate(t).unwrap().u[0];
        let bump = move |t: f64| {
            a.iter().enumerate().map(|(j, c)| c * ((j as f64 + 1.0) * PI * t).sin() * t).sum::<f64>()
        };
        // Restore the endpoints with span{1, t}; the map is linear from rest.
        let e_b = endpoint(&sys, [0.0, 0.0], &bump);
        let e1 = endpoint(&sys, [0.0, 0.0], &|_| 1.0);
        let e2 = endpoint(&sys, [0.0, 0.0], &|t| t);
        let det = e1[0] * e2[1] - e2[0] * e1[1];
        let b1 = (-e_b[0] * e2[1] + e2[0] * e_b[1]) / det;
        let b2 = (-e1[0] * e_b[1] + e_b[0] * e1[1]) / det;
        let perturbed = |t: f64| ustar(t) + bump(t) + b1 + b2 * t;

        let end = endpoint(&sys, [0.0, 0.0], &perturbed);
        prop_assert!((end[0] - 1.0).abs() <= 1e-8 && end[1].abs() <= 1e-8, "{end:?}");
        let j_star = cost(&ustar);
        prop_assert!(cost(&perturbed) >= j_star - 1e-9, "{} < {j_star}", cost(&perturbed));
    }
}

#[test]
fn mass_spring_quadratic_velocity() {
    let sys = make_mass_spring(1.3, 0.7).unwrap();
    let samples: Vec<SamplePoint> = (0..20)
        .map(|i| SamplePoint { q: v(&[i as f64 * 0.1 - 1.0]), qdot: v(&[1.0 - i as f64 * 0.07]), t: 0.0 })
        .collect();
    assert!(sys.check_quadratic_velocity(&samples).unwrap().pass);
}
