//! Observation matrix, multi-discrete action and its decoding into an
//! intermediate reference for the tracking controller.

use serde::{Deserialize, Serialize};

use super::map::{RoadMap, Route, Waypoint};
use crate::mpc::IntermediateReference;
use crate::vehicle::VehicleState;
use crate::wrap_angle;

pub const WINDOW: usize = 5;
pub const FEATURES: usize = 4;
/// Reference speeds selectable by the speed sub-action, m/s.
pub const SPEED_LEVELS: [f64; 5] = [0.0, 2.0, 4.0, 6.0, 8.0];
/// Clip bound for relative SV distances, m.
pub const DISTANCE_CLIP: f64 = 7.5;

/// Row 0 describes the ego vehicle relative to its goal, the remaining rows the
/// surrounding vehicles relative to the ego vehicle, by spawn index.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    rows: Vec<[f64; FEATURES]>,
}

impl ObservationMatrix {
    pub fn zeros(n_sv_max: usize) -> Self {
        Self { rows: vec![[0.0; FEATURES]; n_sv_max + 1] }
    }

    /// `svs` holds one entry per spawned SV; `None` marks a vehicle that has left.
    pub fn build(ev: &VehicleState<f64>, goal: &Waypoint, svs: &[Option<VehicleState<f64>>], n_sv_max: usize) -> Self {
        let mut m = Self::zeros(n_sv_max);
        m.rows[0] = [(goal.x - ev.x).abs(), (goal.y - ev.y).abs(), ev.v, wrap_angle(goal.psi - ev.psi)];
        for (row, sv) in m.rows[1..].iter_mut().zip(svs) {
            if let Some(sv) = sv {
                *row = [
                    (sv.x - ev.x).abs().clamp(0.0, DISTANCE_CLIP),
                    (sv.y - ev.y).abs().clamp(0.0, DISTANCE_CLIP),
                    ev.v - sv.v,
                    wrap_angle(ev.psi - sv.psi),
                ];
            }
        }
        m
    }

    pub fn rows(&self) -> &[[f64; FEATURES]] {
        &self.rows
    }

    /// Row-major flattening, ego row first.
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len() * FEATURES
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiDiscreteAction {
    pub wp_index: usize,
    pub speed_index: usize,
    /// -1 left, 0 keep, +1 right.
    pub lane_change: i8,
}

impl MultiDiscreteAction {
    pub const HEAD_SIZES: [usize; 3] = [WINDOW, SPEED_LEVELS.len(), 3];

    pub fn new(wp_index: usize, speed_index: usize, lane_change: i8) -> Option<Self> {
        let a = Self { wp_index, speed_index, lane_change };
        a.is_valid().then_some(a)
    }

    pub fn is_valid(&self) -> bool {
        self.wp_index < WINDOW && self.speed_index < SPEED_LEVELS.len() && (-1..=1).contains(&self.lane_change)
    }

    /// Per-head category indices; the lane head is ordered left, keep, right.
    pub fn to_indices(&self) -> [usize; 3] {
        [self.wp_index, self.speed_index, (self.lane_change + 1) as usize]
    }

    pub fn from_indices(idx: [usize; 3]) -> Option<Self> {
        if idx[2] > 2 {
            return None;
        }
        Self::new(idx[0], idx[1], idx[2] as i8 - 1)
    }
}

/// Monotone position along the ego route.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RouteCursor {
    /// Index of the first waypoint not yet passed.
    pub next: usize,
    /// Largest projected arc length seen so far.
    pub s: f64,
    hint: usize,
}

impl RouteCursor {
    /// Drops waypoints whose arc length lies behind the vehicle's projection.
    /// The final waypoint is never dropped.
    pub fn advance(&mut self, route: &Route, x: f64, y: f64) {
        if route.is_empty() {
            return;
        }
        if let Some(p) = route.project(x, y, Some(self.hint)) {
            self.hint = p.segment;
            self.s = self.s.max(p.s);
        }
        let last = route.len() - 1;
        while self.next < last && route.s[self.next] < self.s {
            self.next += 1;
        }
    }
}

/// The next five waypoints from the cursor, padded with the final waypoint.
pub fn waypoint_window(route: &Route, cursor: &RouteCursor) -> [Waypoint; WINDOW] {
    let wps = &route.waypoints;
    let last = wps.len() - 1;
    std::array::from_fn(|k| wps[(cursor.next + k).min(last)])
}

/// Decoded action: the reference handed to the controller and whether a lane
/// change actually took place.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedAction {
    pub reference: IntermediateReference<f64>,
    pub lane_changed: bool,
}

pub fn decode_action(action: &MultiDiscreteAction, window: &[Waypoint; WINDOW], map: &RoadMap) -> DecodedAction {
    let base = window[action.wp_index.min(WINDOW - 1)];
    let (wp, lane_changed) = match action.lane_change {
        0 => (base, false),
        side => match map.adjacent_waypoint(&base, side) {
            Some(w) => (w, true),
            None => (base, false),
        },
    };
    let v = SPEED_LEVELS[action.speed_index.min(SPEED_LEVELS.len() - 1)];
    DecodedAction { reference: IntermediateReference::new(wp.x, wp.y, v, wp.psi), lane_changed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::map::{LaneDirection, LanePosition, MapConfig, Region};

    fn setup() -> (RoadMap, Route) {
        let m = RoadMap::new(MapConfig::default()).unwrap();
        let r = m
            .plan_route(
                &LanePosition { region: Region::Lower, direction: LaneDirection::Incoming, lane: 0, offset: 20.0 },
                &LanePosition { region: Region::Upper, direction: LaneDirection::Outgoing, lane: 0, offset: 10.0 },
            )
            .unwrap();
        (m, r)
    }

    #[test]
    fn distances_are_clipped() {
        let ev = VehicleState::new(0.0, 0.0, 3.0, 0.0);
        let sv = VehicleState::new(10.0, -2.0, 1.0, 0.5);
        let goal = Waypoint { x: 0.0, y: 0.0, psi: 0.0 };
        let m = ObservationMatrix::build(&ev, &goal, &[Some(sv)], 3);
        assert_eq!(m.rows()[1], [7.5, 2.0, 2.0, -0.5]);
        assert_eq!(m.rows()[0], [0.0, 0.0, 3.0, 0.0]);
        assert_eq!(m.rows()[2], [0.0; 4]);
        assert_eq!(m.rows()[3], [0.0; 4]);
        assert_eq!(m.flatten().len(), 16);
    }

    #[test]
    fn window_at_start_and_after_progress() {
        let (_, r) = setup();
        let mut c = RouteCursor::default();
        let w0 = r.waypoints[0];
        c.advance(&r, w0.x, w0.y);
        assert_eq!(waypoint_window(&r, &c), [r.waypoints[0], r.waypoints[1], r.waypoints[2], r.waypoints[3], r.waypoints[4]]);
        // just past waypoint 3
        let w3 = r.waypoints[3];
        c.advance(&r, w3.x, w3.y + 0.1);
        assert_eq!(waypoint_window(&r, &c)[0], r.waypoints[4]);
    }

    #[test]
    fn window_pads_with_final_waypoint() {
        let (_, r) = setup();
        let n = r.len();
        let mut c = RouteCursor::default();
        let w = r.waypoints[n - 2];
        c.advance(&r, w.x, w.y - 0.1);
        let win = waypoint_window(&r, &c);
        assert_eq!(win[0], r.waypoints[n - 2]);
        for k in 1..WINDOW {
            assert_eq!(win[k], r.waypoints[n - 1]);
        }
        // driving past the end keeps the goal in view
        let g = r.waypoints[n - 1];
        c.advance(&r, g.x, g.y + 5.0);
        assert!(waypoint_window(&r, &c).iter().all(|w| *w == g));
    }

    #[test]
    fn decode_examples() {
        let (m, r) = setup();
        let c = RouteCursor::default();
        let win = waypoint_window(&r, &c);
        let d = decode_action(&MultiDiscreteAction::new(0, 0, 0).unwrap(), &win, &m);
        assert_eq!(d.reference, IntermediateReference::new(win[0].x, win[0].y, 0.0, win[0].psi));
        assert!(!d.lane_changed);
        // lane 0 is the innermost: no lane to its left
        let d = decode_action(&MultiDiscreteAction::new(2, 4, -1).unwrap(), &win, &m);
        assert_eq!((d.reference.x, d.reference.y, d.reference.v), (win[2].x, win[2].y, 8.0));
        assert!(!d.lane_changed);
        let d = decode_action(&MultiDiscreteAction::new(2, 1, 1).unwrap(), &win, &m);
        assert!(d.lane_changed);
        assert!((d.reference.x - (win[2].x + 3.5)).abs() < 1e-9);
    }

    #[test]
    fn action_index_round_trip() {
        for a in 0..5 {
            for s in 0..5 {
                for l in -1..=1 {
                    let act = MultiDiscreteAction::new(a, s, l).unwrap();
                    assert_eq!(MultiDiscreteAction::from_indices(act.to_indices()), Some(act));
                }
            }
        }
        assert!(MultiDiscreteAction::new(5, 0, 0).is_none());
        assert!(MultiDiscreteAction::new(0, 0, 2).is_none());
    }
}
