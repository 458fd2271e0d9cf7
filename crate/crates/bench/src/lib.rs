//! Shared fixtures for benchmarks.

use nalgebra::DVector;
use ocvar_core::bvp::BoundarySpec;
use ocvar_core::cases::{make_msd, make_two_body, MsdParams, TwoBodyParams};
use ocvar_core::control_ode::ExtendedState;
use ocvar_core::model::{MechanicalSystem, SampleBox, SamplePoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn two_body() -> MechanicalSystem {
    make_two_body(TwoBodyParams::canonical()).expect("canonical two-body")
}

/// Circular orbit with a small control, one period.
pub fn two_body_start() -> ExtendedState {
    ExtendedState::new(v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.01, 0.0]), v(&[0.0, 0.01]), 0.0).expect("finite")
}

pub fn msd() -> MechanicalSystem {
    make_msd(MsdParams { m: 1.0, c: 0.2, k: 1.0 }).expect("valid msd")
}

/// `x: 0 → 1` at rest on `[0, 1]`.
pub fn msd_rest_to_rest() -> BoundarySpec {
    BoundarySpec::full_state(0.0, 1.0, v(&[0.0]), v(&[0.0]), v(&[1.0]), v(&[0.0])).expect("valid spec")
}

pub fn two_body_samples(count: usize, seed: u64) -> Vec<SamplePoint> {
    let bx = SampleBox {
        q_lo: vec![0.5, -std::f64::consts::PI],
        q_hi: vec![2.0, std::f64::consts::PI],
        qdot_lo: vec![-1.0, -1.0],
        qdot_hi: vec![1.0, 1.0],
        t_lo: 0.0,
        t_hi: 1.0,
    };
    bx.sample(count, &mut ChaCha8Rng::seed_from_u64(seed))
}
