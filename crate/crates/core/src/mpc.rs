//! Receding-horizon tracking of an intermediate reference state.
//!
//! The problem is parameterised by the control sequence only (single shooting):
//! states come from rolling out [`vehicle::step`], so the speed bound is honoured
//! by the same clamp the simulator applies. The solver is a spectral projected
//! gradient method with a monotone Armijo backtracking line search; gradients
//! are obtained by reverse accumulation through the Euler rollout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{self, ControlInput, VehicleParams, VehicleState};
use crate::{wrap_angle, Real};

/// Pose-and-speed target handed to the controller by the decision layer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntermediateReference<T> {
    pub x: T,
    pub y: T,
    pub v: T,
    pub psi: T,
}

impl<T: Real> IntermediateReference<T> {
    pub fn new(x: T, y: T, v: T, psi: T) -> Self {
        Self { x, y, v, psi }
    }

    /// Reference sitting on `state` with the given target speed.
    pub fn hold(state: &VehicleState<T>, v: T) -> Self {
        Self { x: state.x, y: state.y, v, psi: state.psi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig<T> {
    pub horizon: usize,
    pub dt: T,
    /// Diagonal state weights for `[x, y, v, psi]`.
    pub q_x: [T; 4],
    /// Diagonal input weights for `[a, delta]`.
    pub q_u: [T; 2],
    /// Diagonal input-rate weights for `[a, delta]`.
    pub q_du: [T; 2],
    pub max_iterations: usize,
    pub improvement_tol: T,
    pub vehicle: VehicleParams<T>,
}

impl<T: Real> Default for MpcConfig<T> {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: T::lit(0.1),
            q_x: [T::lit(100.0), T::lit(100.0), T::lit(100.0), T::lit(20.0)],
            q_u: [T::lit(10.0), T::lit(10.0)],
            q_du: [T::lit(1.0), T::lit(1.0)],
            max_iterations: 100,
            improvement_tol: T::lit(1e-6),
            vehicle: VehicleParams::default(),
        }
    }
}

impl<T: Real> MpcConfig<T> {
    pub fn validate(&self) -> Result<(), MpcError> {
        let nonneg = |w: &[T]| w.iter().all(|&q| q >= T::zero() && q.is_finite());
        if self.horizon == 0 {
            return Err(MpcError::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.dt > T::zero()) {
            return Err(MpcError::InvalidConfig("dt must be positive".into()));
        }
        if !nonneg(&self.q_x) || !nonneg(&self.q_u) || !nonneg(&self.q_du) {
            return Err(MpcError::InvalidConfig("weights must be finite and non-negative".into()));
        }
        if !(self.improvement_tol > T::zero()) {
            return Err(MpcError::InvalidConfig("improvement_tol must be positive".into()));
        }
        if !self.vehicle.is_valid() {
            return Err(MpcError::InvalidConfig("vehicle parameters out of range".into()));
        }
        Ok(())
    }

    fn scaled(&self, k: T) -> Self {
        let mut c = self.clone();
        c.q_x.iter_mut().for_each(|q| *q *= k);
        c.q_u.iter_mut().for_each(|q| *q *= k);
        c.q_du.iter_mut().for_each(|q| *q *= k);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution<T> {
    pub controls: Vec<ControlInput<T>>,
    pub predicted_states: Vec<VehicleState<T>>,
    pub cost: T,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("non-finite cost {cost} at iteration {iteration}; check weight scaling")]
    NonFiniteCost { iteration: usize, cost: f64 },
    #[error("initial state is not finite")]
    NonFiniteState,
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(String),
}

fn tracking_error<T: Real>(x: &VehicleState<T>, r: &IntermediateReference<T>) -> [T; 4] {
    [x.x - r.x, x.y - r.y, x.v - r.v, wrap_angle(x.psi - r.psi)]
}

fn quad<T: Real, const N: usize>(e: &[T; N], q: &[T; N]) -> T {
    e.iter().zip(q).fold(T::zero(), |acc, (&ei, &qi)| acc + qi * ei * ei)
}

/// Cost of a control sequence and the states it produces.
///
/// `u_prev` is the control applied on the previous closed-loop step; the first
/// rate penalty is taken against it.
pub fn evaluate_cost<T: Real>(
    controls: &[ControlInput<T>],
    x0: &VehicleState<T>,
    reference: &IntermediateReference<T>,
    u_prev: &ControlInput<T>,
    config: &MpcConfig<T>,
) -> (T, Vec<VehicleState<T>>) {
    let states = vehicle::rollout(x0, controls, &config.vehicle, config.dt);
    let mut cost = quad(&tracking_error(x0, reference), &config.q_x);
    let mut prev = *u_prev;
    for (k, u) in controls.iter().enumerate() {
        let e = tracking_error(&states[k], reference);
        cost += quad(&e, &config.q_x);
        cost += quad(&[u.a, u.delta], &config.q_u);
        cost += quad(&[u.a - prev.a, u.delta - prev.delta], &config.q_du);
        prev = *u;
    }
    (cost, states)
}

/// Cost and its gradient with respect to every control, by reverse accumulation.
pub fn cost_gradient<T: Real>(
    controls: &[ControlInput<T>],
    x0: &VehicleState<T>,
    reference: &IntermediateReference<T>,
    u_prev: &ControlInput<T>,
    config: &MpcConfig<T>,
) -> (T, Vec<VehicleState<T>>, Vec<[T; 2]>) {
    let n = controls.len();
    let p = &config.vehicle;
    let dt = config.dt;
    let two = T::lit(2.0);
    let (cost, states) = evaluate_cost(controls, x0, reference, u_prev, config);

    let mut grad = vec![[T::zero(); 2]; n];
    // adjoint of x_{k+1}
    let mut lam = [T::zero(); 4];
    for k in (0..n).rev() {
        let e = tracking_error(&states[k], reference);
        for i in 0..4 {
            lam[i] += two * config.q_x[i] * e[i];
        }
        let xk = if k == 0 { *x0 } else { states[k - 1] };
        let u = controls[k];
        let course = xk.psi + u.delta;
        let (sc, cc) = course.sin_cos();
        let v_free = xk.v + u.a * dt;
        let v_active = v_free >= p.v_min && v_free <= p.v_max;
        let lam_v = if v_active { lam[2] } else { T::zero() };

        // d x_{k+1} / d u_k
        let ga = lam_v * dt;
        let gd = lam[0] * (-xk.v * sc * dt)
            + lam[1] * (xk.v * cc * dt)
            + lam[3] * (two * xk.v / p.wheelbase * u.delta.cos() * dt);

        let prev = if k == 0 { *u_prev } else { controls[k - 1] };
        let mut g = [
            ga + two * config.q_u[0] * u.a + two * config.q_du[0] * (u.a - prev.a),
            gd + two * config.q_u[1] * u.delta + two * config.q_du[1] * (u.delta - prev.delta),
        ];
        if k + 1 < n {
            let next = controls[k + 1];
            g[0] -= two * config.q_du[0] * (next.a - u.a);
            g[1] -= two * config.q_du[1] * (next.delta - u.delta);
        }
        grad[k] = g;

        // propagate adjoint to x_k: lam_k = (d x_{k+1} / d x_k)^T lam_{k+1}
        let new = [
            lam[0],
            lam[1],
            lam[0] * cc * dt + lam[1] * sc * dt + lam_v + lam[3] * two / p.wheelbase * u.delta.sin() * dt,
            lam[0] * (-xk.v * sc * dt) + lam[1] * (xk.v * cc * dt) + lam[3],
        ];
        lam = new;
    }
    (cost, states, grad)
}

fn project<T: Real>(u: &mut [ControlInput<T>], p: &VehicleParams<T>) {
    for c in u.iter_mut() {
        *c = p.clamp_control(*c);
    }
}

/// Solves the tracking problem from `x0`.
///
/// The search starts from the cheaper of the zero sequence and the projected
/// warm start, so the result never costs more than either.
pub fn solve<T: Real>(
    x0: &VehicleState<T>,
    reference: &IntermediateReference<T>,
    warm_start: Option<&MpcSolution<T>>,
    u_prev: &ControlInput<T>,
    config: &MpcConfig<T>,
) -> Result<MpcSolution<T>, MpcError> {
    if !x0.is_finite() {
        return Err(MpcError::NonFiniteState);
    }
    let n = config.horizon;
    let p = &config.vehicle;

    let mut u = vec![ControlInput::zero(); n];
    let (mut f, _) = evaluate_cost(&u, x0, reference, u_prev, config);
    if let Some(ws) = warm_start {
        let mut w: Vec<_> = ws.controls.iter().copied().take(n).collect();
        while w.len() < n {
            w.push(w.last().copied().unwrap_or_else(ControlInput::zero));
        }
        project(&mut w, p);
        let (fw, _) = evaluate_cost(&w, x0, reference, u_prev, config);
        if fw < f {
            u = w;
            f = fw;
        }
    }
    if !f.is_finite() {
        return Err(MpcError::NonFiniteCost { iteration: 0, cost: f.as_f64() });
    }

    let (_, _, mut g) = cost_gradient(&u, x0, reference, u_prev, config);
    let gmax = g.iter().flat_map(|gi| gi.iter()).fold(T::zero(), |m, &x| m.max(x.abs()));
    let alpha_min = T::lit(1e-10);
    let alpha_max = T::lit(1e3);
    let mut alpha = (T::one() / gmax.max(T::lit(1e-12))).min(alpha_max);
    let armijo = T::lit(1e-4);

    let mut iterations = 0;
    let mut converged = false;
    let mut cand = u.clone();
    while iterations < config.max_iterations {
        iterations += 1;
        let mut accepted = None;
        let mut step = alpha;
        for _ in 0..40 {
            for k in 0..n {
                cand[k] = p.clamp_control(ControlInput::new(
                    u[k].a - step * g[k][0],
                    u[k].delta - step * g[k][1],
                ));
            }
            let mut dir = T::zero();
            let mut moved = T::zero();
            for k in 0..n {
                let da = cand[k].a - u[k].a;
                let dd = cand[k].delta - u[k].delta;
                dir += g[k][0] * da + g[k][1] * dd;
                moved += da * da + dd * dd;
            }
            if moved == T::zero() {
                break;
            }
            let (fc, _) = evaluate_cost(&cand, x0, reference, u_prev, config);
            if !fc.is_finite() {
                return Err(MpcError::NonFiniteCost { iteration: iterations, cost: fc.as_f64() });
            }
            if fc <= f + armijo * dir {
                accepted = Some(fc);
                break;
            }
            step *= T::lit(0.5);
        }
        let Some(fc) = accepted else {
            converged = true;
            break;
        };
        let improvement = f - fc;
        let (_, _, g_new) = cost_gradient(&cand, x0, reference, u_prev, config);
        let mut ss = T::zero();
        let mut sy = T::zero();
        for k in 0..n {
            for i in 0..2 {
                let s = if i == 0 { cand[k].a - u[k].a } else { cand[k].delta - u[k].delta };
                let y = g_new[k][i] - g[k][i];
                ss += s * s;
                sy += s * y;
            }
        }
        alpha = if sy > T::zero() { (ss / sy).max(alpha_min).min(alpha_max) } else { alpha_max };
        std::mem::swap(&mut u, &mut cand);
        g = g_new;
        f = fc;
        // the first step has no curvature estimate yet, so a small gain there
        // says little about convergence
        if improvement < config.improvement_tol && iterations > 1 {
            converged = true;
            break;
        }
    }

    let (cost, predicted_states) = evaluate_cost(&u, x0, reference, u_prev, config);
    Ok(MpcSolution { controls: u, predicted_states, cost, iterations, converged })
}

/// Closed-loop controller: solves, applies the first input, and keeps the
/// shifted solution as the next warm start.
#[derive(Debug, Clone)]
pub struct TrackingMpc<T> {
    pub config: MpcConfig<T>,
    warm_start: Option<MpcSolution<T>>,
    last_applied: ControlInput<T>,
}

impl<T: Real> TrackingMpc<T> {
    pub fn new(config: MpcConfig<T>) -> Result<Self, MpcError> {
        config.validate()?;
        Ok(Self { config, warm_start: None, last_applied: ControlInput::zero() })
    }

    pub fn reset(&mut self) {
        self.warm_start = None;
        self.last_applied = ControlInput::zero();
    }

    pub fn last_applied(&self) -> ControlInput<T> {
        self.last_applied
    }

    pub fn warm_start(&self) -> Option<&MpcSolution<T>> {
        self.warm_start.as_ref()
    }

    pub fn step(
        &mut self,
        state: &VehicleState<T>,
        reference: &IntermediateReference<T>,
    ) -> Result<(ControlInput<T>, MpcSolution<T>), MpcError> {
        let sol = solve(state, reference, self.warm_start.as_ref(), &self.last_applied, &self.config)?;
        let first = sol.controls[0];
        let mut shifted = sol.clone();
        shifted.controls.remove(0);
        let last = *sol.controls.last().expect("horizon >= 1");
        shifted.controls.push(last);
        self.warm_start = Some(shifted);
        self.last_applied = first;
        Ok((first, sol))
    }
}

/// Cost scales linearly in the weights; exposed for tests of that property.
#[doc(hidden)]
pub fn scaled_config<T: Real>(config: &MpcConfig<T>, k: T) -> MpcConfig<T> {
    config.scaled(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MpcConfig<f64> {
        MpcConfig::default()
    }

    #[test]
    fn stationary_fixed_point_costs_zero() {
        let mut c = cfg();
        c.q_u = [0.0; 2];
        c.q_du = [0.0; 2];
        let x0 = VehicleState::new(1.0, 2.0, 0.0, 0.3);
        let r = IntermediateReference::hold(&x0, 0.0);
        let (cost, _) = evaluate_cost(&vec![ControlInput::zero(); 10], &x0, &r, &ControlInput::zero(), &c);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn single_input_term() {
        let mut c = cfg();
        c.horizon = 1;
        c.q_x = [0.0; 4];
        c.q_u = [10.0, 10.0];
        c.q_du = [0.0; 2];
        let x0 = VehicleState::new(0.0, 0.0, 1.0, 0.0);
        let r = IntermediateReference::new(5.0, 5.0, 3.0, 1.0);
        let (cost, _) = evaluate_cost(&[ControlInput::new(1.0, 0.0)], &x0, &r, &ControlInput::zero(), &c);
        assert_eq!(cost, 10.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let c = cfg();
        let x0 = VehicleState::new(0.3, -0.2, 3.0, 0.4);
        let r = IntermediateReference::new(6.0, 3.0, 5.0, 0.9);
        let u_prev = ControlInput::new(0.5, -0.1);
        let controls: Vec<_> = (0..10)
            .map(|k| ControlInput::new(0.3 * (k as f64).sin(), 0.05 * (k as f64 - 4.0)))
            .collect();
        let (_, _, g) = cost_gradient(&controls, &x0, &r, &u_prev, &c);
        let h = 1e-6;
        for k in 0..10 {
            for i in 0..2 {
                let mut up = controls.clone();
                let mut dn = controls.clone();
                if i == 0 {
                    up[k].a += h;
                    dn[k].a -= h;
                } else {
                    up[k].delta += h;
                    dn[k].delta -= h;
                }
                let fu = evaluate_cost(&up, &x0, &r, &u_prev, &c).0;
                let fd = evaluate_cost(&dn, &x0, &r, &u_prev, &c).0;
                let fdg = (fu - fd) / (2.0 * h);
                let rel = (fdg - g[k][i]).abs() / fdg.abs().max(1.0);
                assert!(rel < 1e-5, "k={k} i={i} fd={fdg} an={}", g[k][i]);
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = cfg();
        c.horizon = 0;
        assert!(TrackingMpc::new(c).is_err());
        let mut c = cfg();
        c.q_u[0] = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn non_finite_state_is_an_error() {
        let x0 = VehicleState::new(f64::NAN, 0.0, 0.0, 0.0);
        let r = IntermediateReference::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(
            solve(&x0, &r, None, &ControlInput::zero(), &cfg()),
            Err(MpcError::NonFiniteState)
        );
    }

    #[test]
    fn overflowing_weights_abort() {
        let mut c = cfg();
        c.q_x = [f64::MAX; 4];
        let x0 = VehicleState::new(0.0, 0.0, 5.0, 0.0);
        let r = IntermediateReference::new(1e10, 0.0, 0.0, 0.0);
        assert!(matches!(
            solve(&x0, &r, None, &ControlInput::zero(), &c),
            Err(MpcError::NonFiniteCost { .. })
        ));
    }
}
