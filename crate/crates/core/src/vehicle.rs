//! Kinematic bicycle model.
//!
//! State is `[x, y, v, psi]` and input `[a, delta]`. The continuous rates are
//!
//! ```text
//! x'   = v cos(psi + delta)
//! y'   = v sin(psi + delta)
//! v'   = a
//! psi' = (2 v / L) sin(delta)
//! ```
//!
//! Rates are reported in the same order as the state fields, so the heading
//! rate comes last even though it is usually written third.

use serde::{Deserialize, Serialize};

use crate::{wrap_angle, Real};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState<T> {
    pub x: T,
    pub y: T,
    pub v: T,
    pub psi: T,
}

impl<T: Real> VehicleState<T> {
    pub fn new(x: T, y: T, v: T, psi: T) -> Self {
        Self { x, y, v, psi }
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x, self.y, self.v, self.psi]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.v.is_finite() && self.psi.is_finite()
    }

    pub fn distance_to(&self, x: T, y: T) -> T {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput<T> {
    /// Longitudinal acceleration, m/s^2.
    pub a: T,
    /// Steering angle, rad.
    pub delta: T,
}

impl<T: Real> ControlInput<T> {
    pub fn new(a: T, delta: T) -> Self {
        Self { a, delta }
    }

    pub fn zero() -> Self {
        Self { a: T::zero(), delta: T::zero() }
    }
}

/// Time derivative of a [`VehicleState`], field for field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRate<T> {
    pub x: T,
    pub y: T,
    pub v: T,
    pub psi: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams<T> {
    /// Inter-axle distance, m.
    pub wheelbase: T,
    pub a_min: T,
    pub a_max: T,
    pub delta_max: T,
    pub v_min: T,
    pub v_max: T,
}

impl<T: Real> Default for VehicleParams<T> {
    fn default() -> Self {
        Self {
            wheelbase: T::lit(2.875),
            a_min: T::lit(-4.0),
            a_max: T::lit(3.0),
            delta_max: T::lit(0.6),
            v_min: T::zero(),
            v_max: T::lit(10.0),
        }
    }
}

impl<T: Real> VehicleParams<T> {
    pub fn is_valid(&self) -> bool {
        self.wheelbase > T::zero()
            && self.a_min < T::zero()
            && self.a_max > T::zero()
            && self.delta_max > T::zero()
            && self.v_min >= T::zero()
            && self.v_min < self.v_max
    }

    /// Projects a control onto the input box.
    pub fn clamp_control(&self, u: ControlInput<T>) -> ControlInput<T> {
        ControlInput {
            a: u.a.max(self.a_min).min(self.a_max),
            delta: u.delta.max(-self.delta_max).min(self.delta_max),
        }
    }

    pub fn control_in_bounds(&self, u: &ControlInput<T>) -> bool {
        u.a >= self.a_min && u.a <= self.a_max && u.delta.abs() <= self.delta_max
    }
}

pub fn derivative<T: Real>(
    state: &VehicleState<T>,
    input: &ControlInput<T>,
    params: &VehicleParams<T>,
) -> StateRate<T> {
    let course = state.psi + input.delta;
    let two = T::lit(2.0);
    StateRate {
        x: state.v * course.cos(),
        y: state.v * course.sin(),
        v: input.a,
        psi: two * state.v / params.wheelbase * input.delta.sin(),
    }
}

/// One explicit Euler step followed by the speed clamp and heading wrap.
pub fn step<T: Real>(
    state: &VehicleState<T>,
    input: &ControlInput<T>,
    params: &VehicleParams<T>,
    dt: T,
) -> VehicleState<T> {
    let rate = derivative(state, input, params);
    VehicleState {
        x: state.x + rate.x * dt,
        y: state.y + rate.y * dt,
        v: (state.v + rate.v * dt).max(params.v_min).min(params.v_max),
        psi: wrap_angle(state.psi + rate.psi * dt),
    }
}

/// Rolls a control sequence forward from `x0`, returning the `N` successor states.
pub fn rollout<T: Real>(
    x0: &VehicleState<T>,
    controls: &[ControlInput<T>],
    params: &VehicleParams<T>,
    dt: T,
) -> Vec<VehicleState<T>> {
    let mut out = Vec::with_capacity(controls.len());
    let mut x = *x0;
    for u in controls {
        x = step(&x, u, params, dt);
        out.push(x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> VehicleParams<f64> {
        VehicleParams::default()
    }

    #[test]
    fn straight_motion_rate() {
        let s = VehicleState::new(0.0, 0.0, 2.0, 0.0);
        let r = derivative(&s, &ControlInput::zero(), &params());
        assert_eq!((r.x, r.y, r.v, r.psi), (2.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn stationary_rate_is_only_acceleration() {
        let s = VehicleState::new(3.0, -1.0, 0.0, 1.2);
        let r = derivative(&s, &ControlInput::new(1.5, 0.4), &params());
        assert_eq!(r.x, 0.0);
        assert_eq!(r.y, 0.0);
        assert_eq!(r.psi, 0.0);
        assert_eq!(r.v, 1.5);
    }

    #[test]
    fn steered_rate_matches_formula() {
        let s = VehicleState::new(0.0, 0.0, 2.0, 0.0);
        let r = derivative(&s, &ControlInput::new(0.0, 0.1), &params());
        assert_eq!(r.x, 2.0 * 0.1f64.cos());
        assert_eq!(r.y, 2.0 * 0.1f64.sin());
        assert_eq!(r.psi, 2.0 * 2.0 / 2.875 * 0.1f64.sin());
    }

    #[test]
    fn euler_step_examples() {
        let p = params();
        let s = VehicleState::new(0.0, 0.0, 2.0, 0.0);
        let n = step(&s, &ControlInput::zero(), &p, 0.1);
        assert_eq!(n, VehicleState::new(0.2, 0.0, 2.0, 0.0));
        let n = step(&s, &ControlInput::new(1.0, 0.0), &p, 0.1);
        assert_eq!(n.v, 2.0 + 0.1);
    }

    #[test]
    fn speed_is_clamped() {
        let p = params();
        let s = VehicleState::new(0.0, 0.0, 0.1, 0.0);
        assert_eq!(step(&s, &ControlInput::new(-4.0, 0.0), &p, 0.1).v, 0.0);
        let s = VehicleState::new(0.0, 0.0, 9.9, 0.0);
        assert_eq!(step(&s, &ControlInput::new(3.0, 0.0), &p, 0.1).v, 10.0);
    }

    #[test]
    fn f32_step_agrees_with_f64() {
        let p32 = VehicleParams::<f32>::default();
        let s = VehicleState::<f32>::new(1.0, 2.0, 3.0, 0.3);
        let n = step(&s, &ControlInput::new(0.5, -0.2), &p32, 0.1);
        let n64 = step(
            &VehicleState::<f64>::new(1.0, 2.0, 3.0, 0.3),
            &ControlInput::new(0.5, -0.2),
            &params(),
            0.1,
        );
        assert!((n.x as f64 - n64.x).abs() < 1e-5);
        assert!((n.psi as f64 - n64.psi).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn step_keeps_heading_and_speed_in_range(
            x in -100.0..100.0f64, y in -100.0..100.0f64, v in 0.0..10.0f64,
            psi in -10.0..10.0f64, a in -4.0..3.0f64, d in -0.6..0.6f64, dt in 0.001..1.0f64,
        ) {
            let p = params();
            let n = step(&VehicleState::new(x, y, v, psi), &ControlInput::new(a, d), &p, dt);
            prop_assert!(n.psi > -std::f64::consts::PI && n.psi <= std::f64::consts::PI);
            prop_assert!(n.v >= p.v_min && n.v <= p.v_max);
        }
    }
}
