//! Curriculum-scheduled hierarchical driving at unsignalized intersections.
//!
//! The crate is organised bottom-up:
//!
//! * [`vehicle`]: kinematic bicycle model and its explicit Euler discretization.
//! * [`mpc`]: single-shooting tracking MPC that follows an intermediate reference.
//! * [`env`]: a 2D intersection world with scripted surrounding vehicles.
//! * [`ppo`]: actor-critic networks with three categorical heads, GAE and clipped PPO.
//! * [`bandit`]: the two-level Exp3.S-style bandit that schedules training curricula.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`). The aliases at the
//! bottom of this file fix the scalar to `f64`, which is what the simulator and the
//! training harness use.

pub mod bandit;
pub mod env;
pub mod mpc;
pub mod ppo;
pub mod vehicle;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar used throughout the numeric core.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Sum
    + for<'a> Sum<&'a Self>
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only for values the type cannot hold.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn pi() -> Self {
        Self::lit(std::f64::consts::PI)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle<T: Real>(angle: T) -> T {
    let pi = T::pi();
    let two_pi = pi + pi;
    let mut a = angle % two_pi;
    if a <= -pi {
        a += two_pi;
    } else if a > pi {
        a -= two_pi;
    }
    a
}

pub type VehicleState = vehicle::VehicleState<f64>;
pub type ControlInput = vehicle::ControlInput<f64>;
pub type VehicleParams = vehicle::VehicleParams<f64>;
pub type MpcConfig = mpc::MpcConfig<f64>;
pub type MpcSolution = mpc::MpcSolution<f64>;
pub type TrackingMpc = mpc::TrackingMpc<f64>;
pub type IntermediateReference = mpc::IntermediateReference<f64>;
pub type BanditConfig = bandit::BanditConfig<f64>;
pub type BilevelBandit = bandit::BilevelBandit<f64>;
pub type ActorCritic = ppo::ActorCritic<f64>;
pub type PpoConfig = ppo::PpoConfig<f64>;
pub type PpoLearner = ppo::PpoLearner<f64>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        let pi = std::f64::consts::PI;
        assert_eq!(wrap_angle(pi), pi);
        assert_eq!(wrap_angle(-pi), pi);
        assert!((wrap_angle(3.0 * pi) - pi).abs() < 1e-12);
        assert!((wrap_angle(0.5f64) - 0.5).abs() < 1e-15);
        assert!((wrap_angle(-2.5 * pi) + 0.5 * pi).abs() < 1e-12);
        assert!((wrap_angle(2.0f32 * std::f32::consts::PI)).abs() < 1e-5);
    }
}
