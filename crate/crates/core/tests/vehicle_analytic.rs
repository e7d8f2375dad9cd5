//! Euler discretization against the closed-form constant-turn solution.

use bimab_core::vehicle::{derivative, rollout, step, ControlInput, VehicleParams, VehicleState};
use bimab_core::wrap_angle;
use proptest::prelude::*;

/// Exact state after `t` seconds at constant speed and steering (a = 0).
fn constant_turn(s: &VehicleState<f64>, delta: f64, l: f64, t: f64) -> VehicleState<f64> {
    let omega = 2.0 * s.v * delta.sin() / l;
    let c0 = s.psi + delta;
    if omega.abs() < 1e-12 {
        return VehicleState::new(s.x + s.v * t * c0.cos(), s.y + s.v * t * c0.sin(), s.v, s.psi);
    }
    let r = s.v / omega;
    VehicleState::new(
        s.x + r * ((c0 + omega * t).sin() - c0.sin()),
        s.y - r * ((c0 + omega * t).cos() - c0.cos()),
        s.v,
        wrap_angle(s.psi + omega * t),
    )
}

fn position_error(a: &VehicleState<f64>, b: &VehicleState<f64>) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

#[test]
fn hundred_steps_follow_the_circle() {
    let p = VehicleParams::default();
    let dt = 0.01;
    for &(v, delta, psi) in &[(2.0, 0.1, 0.0), (5.0, 0.3, 1.0), (8.0, -0.45, -2.5), (3.0, 0.6, 3.0)] {
        let s0 = VehicleState::new(1.0, -2.0, v, psi);
        let u = ControlInput::new(0.0, delta);
        let states = rollout(&s0, &vec![u; 100], &p, dt);
        let exact = constant_turn(&s0, delta, p.wheelbase, 1.0);
        let end = states.last().unwrap();
        // 1 % of the distance driven
        assert!(position_error(end, &exact) < 0.01 * v, "v={v} delta={delta}: {}", position_error(end, &exact));
        assert!(wrap_angle(end.psi - exact.psi).abs() < 1e-9);

        // chord check: radius implied by the chord and the heading swept
        let radius = p.wheelbase / (2.0 * delta.sin().abs());
        let chord = position_error(end, &s0);
        let swept = wrap_angle(end.psi - s0.psi).abs();
        let implied = chord / (2.0 * (swept / 2.0).sin());
        assert!((implied - radius).abs() < 0.01 * radius, "radius {implied} vs {radius}");
    }
}

#[test]
fn one_step_is_the_hand_computed_euler_update() {
    let p = VehicleParams::default();
    let s = VehicleState::new(1.5, -0.5, 4.0, 0.7);
    let u = ControlInput::new(1.25, -0.2);
    let dt = 0.1;
    let n = step(&s, &u, &p, dt);
    let course = 0.7f64 + -0.2;
    assert_eq!(n.x, 1.5 + 4.0 * course.cos() * dt);
    assert_eq!(n.y, -0.5 + 4.0 * course.sin() * dt);
    assert_eq!(n.v, 4.0 + 1.25 * dt);
    assert_eq!(n.psi, 0.7 + 2.0 * 4.0 / 2.875 * (-0.2f64).sin() * dt);
    let r = derivative(&s, &u, &p);
    assert_eq!((r.x, r.y, r.v), (4.0 * course.cos(), 4.0 * course.sin(), 1.25));
}

proptest! {
    #[test]
    fn halving_dt_shrinks_local_error_quadratically(
        v in 1.0..9.0f64, delta in 0.05..0.6f64, psi in -3.0..3.0f64, left in proptest::bool::ANY,
    ) {
        let p = VehicleParams::default();
        let delta = if left { delta } else { -delta };
        let s = VehicleState::new(0.0, 0.0, v, psi);
        let u = ControlInput::new(0.0, delta);
        let err = |dt: f64| position_error(&step(&s, &u, &p, dt), &constant_turn(&s, delta, p.wheelbase, dt));
        let (e1, e2) = (err(0.1), err(0.05));
        prop_assert!(e1 / e2 >= 3.5, "ratio {}", e1 / e2);
    }
}
