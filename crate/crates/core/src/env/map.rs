//! Four-arm intersection geometry and lane-graph routing.
//!
//! Everything is built in a canonical frame, the lower arm with traffic
//! approaching northbound, and rotated into the other arms. Right-hand
//! traffic: incoming lanes lie right of the arm's centre line, lane 0 is the
//! one nearest to it.

use std::f64::consts::{FRAC_PI_2, PI};

use petgraph::algo::astar;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geometry::{arc_lengths, project_onto, Projection};
use crate::wrap_angle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("invalid map description: {0}")]
    Invalid(String),
    #[error("no route from {from:?} to {to:?}")]
    Unreachable { from: LanePosition, to: LanePosition },
}

/// Arms of the intersection, listed counter-clockwise from the ego arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Lower,
    Right,
    Upper,
    Left,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Lower, Region::Right, Region::Upper, Region::Left];
    /// Arms surrounding vehicles spawn in.
    pub const SV_ORIGINS: [Region; 3] = [Region::Upper, Region::Left, Region::Right];

    fn index(self) -> usize {
        match self {
            Region::Lower => 0,
            Region::Right => 1,
            Region::Upper => 2,
            Region::Left => 3,
        }
    }

    fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    /// Rotation from the canonical lower-arm frame into this arm.
    pub fn rotation(self) -> f64 {
        self.index() as f64 * FRAC_PI_2
    }

    /// Arm reached when a vehicle from this arm performs `task`.
    pub fn target_of(self, task: TaskType) -> Region {
        let turn = match task {
            TaskType::RightTurn => 1,
            TaskType::GoStraight => 2,
            TaskType::LeftTurn => 3,
        };
        Self::from_index(self.index() + turn)
    }
}

/// Ego task, also the arm index of a curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    LeftTurn = 0,
    GoStraight = 1,
    RightTurn = 2,
}

impl TaskType {
    pub const ALL: [TaskType; 3] = [TaskType::LeftTurn, TaskType::GoStraight, TaskType::RightTurn];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskType::LeftTurn => "left_turn",
            TaskType::GoStraight => "go_straight",
            TaskType::RightTurn => "right_turn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDirection {
    /// Driving towards the intersection core.
    Incoming,
    /// Driving away from the core.
    Outgoing,
}

/// A point on a lane centre line, given by arm, lane and distance from the core edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePosition {
    pub region: Region,
    pub direction: LaneDirection,
    pub lane: usize,
    /// Distance from the core boundary along the arm, m.
    pub offset: f64,
}

/// Reference pose on a route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

/// Declarative map description, loadable from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub lanes_per_direction: usize,
    pub lane_width: f64,
    pub arm_length: f64,
    /// Corner radius added around the lanes to size the square core.
    pub corner_radius: f64,
    pub waypoint_spacing: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            lanes_per_direction: 2,
            lane_width: 3.5,
            arm_length: 40.0,
            corner_radius: 5.0,
            waypoint_spacing: 2.0,
        }
    }
}

impl MapConfig {
    pub fn single_lane() -> Self {
        Self { lanes_per_direction: 1, ..Self::default() }
    }
}

fn rotate(p: (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * p.0 - s * p.1, s * p.0 + c * p.1)
}

/// A route resampled at the waypoint spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub waypoints: Vec<Waypoint>,
    /// Arc length of each waypoint from the route start.
    pub s: Vec<f64>,
    points: Vec<(f64, f64)>,
}

impl Route {
    fn from_dense(dense: &[(f64, f64)], spacing: f64) -> Self {
        let dense_s = arc_lengths(dense);
        let total = *dense_s.last().unwrap_or(&0.0);
        let mut waypoints = Vec::new();
        let mut s = Vec::new();
        if dense.len() < 2 || total <= 0.0 {
            return Self { waypoints, s, points: Vec::new() };
        }
        let n = (total / spacing).floor() as usize;
        let mut j = 0;
        let mut push = |target: f64, waypoints: &mut Vec<Waypoint>, s: &mut Vec<f64>| {
            while j + 2 < dense.len() && dense_s[j + 1] < target {
                j += 1;
            }
            let seg = (dense_s[j + 1] - dense_s[j]).max(1e-12);
            let t = ((target - dense_s[j]) / seg).clamp(0.0, 1.0);
            let (x0, y0) = dense[j];
            let (x1, y1) = dense[j + 1];
            waypoints.push(Waypoint {
                x: x0 + t * (x1 - x0),
                y: y0 + t * (y1 - y0),
                psi: (y1 - y0).atan2(x1 - x0),
            });
            s.push(target);
        };
        for i in 0..=n {
            push(i as f64 * spacing, &mut waypoints, &mut s);
        }
        if total - s.last().copied().unwrap_or(0.0) > 1e-6 {
            push(total, &mut waypoints, &mut s);
        }
        let points = waypoints.iter().map(|w| (w.x, w.y)).collect();
        Self { waypoints, s, points }
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn length(&self) -> f64 {
        self.s.last().copied().unwrap_or(0.0)
    }

    pub fn goal(&self) -> Option<Waypoint> {
        self.waypoints.last().copied()
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Projection onto segments near `hint`, widened to the whole route when
    /// the point is far from that neighbourhood.
    pub fn project(&self, x: f64, y: f64, hint: Option<usize>) -> Option<Projection> {
        let full = || project_onto(&self.points, &self.s, x, y, 0, usize::MAX);
        match hint {
            Some(h) => match project_onto(&self.points, &self.s, x, y, h.saturating_sub(2), h + 8) {
                Some(p) if p.distance < 5.0 => Some(p),
                _ => full(),
            },
            None => full(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadMap {
    pub config: MapConfig,
    /// Half-size of the square core.
    pub core_half: f64,
}

#[derive(Debug, Clone)]
enum Geometry {
    Line((f64, f64), (f64, f64)),
    Arc { center: (f64, f64), radius: f64, from: f64, to: f64 },
}

impl Geometry {
    fn length(&self) -> f64 {
        match self {
            Geometry::Line(a, b) => (b.0 - a.0).hypot(b.1 - a.1),
            Geometry::Arc { radius, from, to, .. } => radius * (to - from).abs(),
        }
    }

    fn densify(&self, step: f64, out: &mut Vec<(f64, f64)>) {
        let n = (self.length() / step).ceil().max(1.0) as usize;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let p = match self {
                Geometry::Line(a, b) => (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)),
                Geometry::Arc { center, radius, from, to } => {
                    let th = from + t * (to - from);
                    (center.0 + radius * th.cos(), center.1 + radius * th.sin())
                }
            };
            if out.last().map_or(true, |q: &(f64, f64)| (q.0 - p.0).hypot(q.1 - p.1) > 1e-9) {
                out.push(p);
            }
        }
    }

    fn rotated(&self, angle: f64) -> Self {
        match self {
            Geometry::Line(a, b) => Geometry::Line(rotate(*a, angle), rotate(*b, angle)),
            Geometry::Arc { center, radius, from, to } => Geometry::Arc {
                center: rotate(*center, angle),
                radius: *radius,
                from: from + angle,
                to: to + angle,
            },
        }
    }
}

impl RoadMap {
    pub fn new(config: MapConfig) -> Result<Self, MapError> {
        if config.lanes_per_direction == 0 || config.lanes_per_direction > 2 {
            return Err(MapError::Invalid("lanes_per_direction must be 1 or 2".into()));
        }
        let positive = [config.lane_width, config.arm_length, config.waypoint_spacing];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || !(config.corner_radius >= 0.0) {
            return Err(MapError::Invalid("lengths must be positive and finite".into()));
        }
        let core_half = config.lanes_per_direction as f64 * config.lane_width + config.corner_radius;
        Ok(Self { config, core_half })
    }

    pub fn lanes(&self) -> usize {
        self.config.lanes_per_direction
    }

    fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.config.lane_width
    }

    /// Pose of a lane position in world coordinates.
    pub fn pose(&self, pos: &LanePosition) -> Waypoint {
        let c = self.lane_center(pos.lane);
        let h = self.core_half;
        // canonical: incoming at x = +c heading north, outgoing at x = -c heading south
        let (p, psi) = match pos.direction {
            LaneDirection::Incoming => ((c, -h - pos.offset), FRAC_PI_2),
            LaneDirection::Outgoing => ((-c, -h - pos.offset), -FRAC_PI_2),
        };
        let rot = pos.region.rotation();
        let (x, y) = rotate(p, rot);
        Waypoint { x, y, psi: wrap_angle(psi + rot) }
    }

    /// Lanes a vehicle may use for `task` under right-hand rules: left turns
    /// from the innermost lane, right turns from the outermost, straight from any.
    pub fn legal_lanes(&self, task: TaskType) -> Vec<usize> {
        let n = self.lanes();
        match task {
            TaskType::LeftTurn => vec![0],
            TaskType::RightTurn => vec![n - 1],
            TaskType::GoStraight => (0..n).collect(),
        }
    }

    /// Connector through the core from incoming `lane` of `from` performing `task`.
    fn connector(&self, from: Region, lane: usize, task: TaskType) -> Option<(Geometry, usize)> {
        if !self.legal_lanes(task).contains(&lane) {
            return None;
        }
        let c = self.lane_center(lane);
        let h = self.core_half;
        let g = match task {
            TaskType::GoStraight => Geometry::Line((c, -h), (c, h)),
            TaskType::RightTurn => Geometry::Arc { center: (h, -h), radius: h - c, from: PI, to: FRAC_PI_2 },
            TaskType::LeftTurn => Geometry::Arc { center: (-h, -h), radius: h + c, from: 0.0, to: FRAC_PI_2 },
        };
        Some((g.rotated(from.rotation()), lane))
    }

    fn arm_segment(&self, pos: &LanePosition, to_offset: f64) -> Geometry {
        let a = self.pose(pos);
        let b = self.pose(&LanePosition { offset: to_offset, ..*pos });
        Geometry::Line((a.x, a.y), (b.x, b.y))
    }

    /// Shortest route between two lane positions over the lane graph, sampled
    /// at the waypoint spacing with tangent headings.
    pub fn plan_route(&self, start: &LanePosition, goal: &LanePosition) -> Result<Route, MapError> {
        let n = self.lanes();
        let unreachable = || MapError::Unreachable { from: *start, to: *goal };
        if start.lane >= n || goal.lane >= n {
            return Err(unreachable());
        }
        let same_lane = start.region == goal.region && start.direction == goal.direction && start.lane == goal.lane;
        if same_lane && (start.offset - goal.offset).abs() < 1e-9 {
            return Ok(Route::from_dense(&[], self.config.waypoint_spacing));
        }

        // nodes: start, goal, per (region, lane) a stop line and a core exit
        let mut g: DiGraph<(f64, f64), Geometry> = DiGraph::new();
        let sp = self.pose(start);
        let gp = self.pose(goal);
        let s_node = g.add_node((sp.x, sp.y));
        let g_node = g.add_node((gp.x, gp.y));
        let mut stop = [[NodeIndex::end(); 2]; 4];
        let mut exit = [[NodeIndex::end(); 2]; 4];
        for r in Region::ALL {
            for l in 0..n {
                let p = self.pose(&LanePosition { region: r, direction: LaneDirection::Incoming, lane: l, offset: 0.0 });
                stop[r.index()][l] = g.add_node((p.x, p.y));
                let p = self.pose(&LanePosition { region: r, direction: LaneDirection::Outgoing, lane: l, offset: 0.0 });
                exit[r.index()][l] = g.add_node((p.x, p.y));
            }
        }
        for r in Region::ALL {
            for l in 0..n {
                for task in TaskType::ALL {
                    if let Some((geom, out_lane)) = self.connector(r, l, task) {
                        let to = r.target_of(task);
                        g.add_edge(stop[r.index()][l], exit[to.index()][out_lane], geom);
                    }
                }
            }
        }
        match start.direction {
            LaneDirection::Incoming => {
                let seg = self.arm_segment(start, 0.0);
                g.add_edge(s_node, stop[start.region.index()][start.lane], seg);
            }
            LaneDirection::Outgoing => {
                if same_lane && goal.offset > start.offset {
                    g.add_edge(s_node, g_node, self.arm_segment(start, goal.offset));
                }
            }
        }
        match goal.direction {
            LaneDirection::Outgoing => {
                let from = LanePosition { offset: 0.0, ..*goal };
                g.add_edge(exit[goal.region.index()][goal.lane], g_node, self.arm_segment(&from, goal.offset));
            }
            LaneDirection::Incoming => {
                if same_lane && goal.offset < start.offset {
                    g.add_edge(s_node, g_node, self.arm_segment(start, goal.offset));
                }
            }
        }

        let target = (gp.x, gp.y);
        let (_, path) = astar(
            &g,
            s_node,
            |node| node == g_node,
            |e| e.weight().length(),
            |node| {
                let p = g[node];
                (p.0 - target.0).hypot(p.1 - target.1)
            },
        )
        .ok_or_else(unreachable)?;

        let mut dense = Vec::new();
        for pair in path.windows(2) {
            let e = g.find_edge(pair[0], pair[1]).expect("edge on path");
            g[e].densify(0.25, &mut dense);
        }
        Ok(Route::from_dense(&dense, self.config.waypoint_spacing))
    }

    /// Whether a point lies on the paved area: the core square or an arm.
    pub fn is_drivable(&self, x: f64, y: f64) -> bool {
        let h = self.core_half;
        if x.abs() <= h && y.abs() <= h {
            return true;
        }
        let half_road = self.lanes() as f64 * self.config.lane_width;
        let far = h + self.config.arm_length;
        (x.abs() <= half_road && y.abs() <= far) || (y.abs() <= half_road && x.abs() <= far)
    }

    pub fn in_core(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.core_half && y.abs() <= self.core_half
    }

    /// Lane containing `(x, y)` on an arm, with travel direction compatible
    /// with `psi`. Points inside the core belong to no lane.
    pub fn lane_at(&self, x: f64, y: f64, psi: f64) -> Option<LanePosition> {
        let w = self.config.lane_width;
        for r in Region::ALL {
            let (cx, cy) = rotate((x, y), -r.rotation());
            let offset = -self.core_half - cy;
            if offset < 0.0 || offset > self.config.arm_length {
                continue;
            }
            let local_psi = wrap_angle(psi - r.rotation());
            let (direction, lateral) = if (local_psi - FRAC_PI_2).abs() < 0.5 {
                (LaneDirection::Incoming, cx)
            } else if (local_psi + FRAC_PI_2).abs() < 0.5 {
                (LaneDirection::Outgoing, -cx)
            } else {
                continue;
            };
            if lateral <= 0.0 {
                continue;
            }
            let lane = (lateral / w).floor() as usize;
            if lane < self.lanes() {
                return Some(LanePosition { region: r, direction, lane, offset });
            }
        }
        None
    }

    /// The waypoint shifted one lane to the left (`side = -1`) or right
    /// (`side = +1`), if a same-direction lane exists there.
    pub fn adjacent_waypoint(&self, wp: &Waypoint, side: i8) -> Option<Waypoint> {
        if side == 0 {
            return Some(*wp);
        }
        let here = self.lane_at(wp.x, wp.y, wp.psi)?;
        let lane = here.lane as i64 + side as i64;
        if lane < 0 || lane >= self.lanes() as i64 {
            return None;
        }
        let w = self.config.lane_width;
        // right-hand normal of the heading
        let (s, c) = wp.psi.sin_cos();
        let k = side as f64 * w;
        Some(Waypoint { x: wp.x + k * s, y: wp.y - k * c, psi: wp.psi })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> RoadMap {
        RoadMap::new(MapConfig::default()).unwrap()
    }

    fn incoming(region: Region, lane: usize, offset: f64) -> LanePosition {
        LanePosition { region, direction: LaneDirection::Incoming, lane, offset }
    }

    fn outgoing(region: Region, lane: usize, offset: f64) -> LanePosition {
        LanePosition { region, direction: LaneDirection::Outgoing, lane, offset }
    }

    #[test]
    fn right_hand_traffic_poses() {
        let m = map();
        let p = m.pose(&incoming(Region::Lower, 0, 10.0));
        assert!(p.x > 0.0 && p.y < -m.core_half);
        assert!((p.psi - FRAC_PI_2).abs() < 1e-12);
        // eastbound traffic leaving to the right arm is south of the centre line
        let p = m.pose(&outgoing(Region::Right, 1, 5.0));
        assert!(p.y < 0.0 && p.x > m.core_half);
        assert!(p.psi.abs() < 1e-12);
        // traffic arriving from the left arm drives east, also south of the line
        let p = m.pose(&incoming(Region::Left, 0, 5.0));
        assert!(p.y < 0.0 && p.x < -m.core_half);
        assert!(p.psi.abs() < 1e-12);
    }

    #[test]
    fn target_regions() {
        assert_eq!(Region::Lower.target_of(TaskType::LeftTurn), Region::Left);
        assert_eq!(Region::Lower.target_of(TaskType::GoStraight), Region::Upper);
        assert_eq!(Region::Lower.target_of(TaskType::RightTurn), Region::Right);
        assert_eq!(Region::Upper.target_of(TaskType::LeftTurn), Region::Right);
        assert_eq!(Region::Left.target_of(TaskType::RightTurn), Region::Lower);
    }

    #[test]
    fn straight_route_is_a_line() {
        let m = map();
        let r = m.plan_route(&incoming(Region::Lower, 1, 20.0), &outgoing(Region::Upper, 1, 15.0)).unwrap();
        let x0 = r.waypoints[0].x;
        for w in &r.waypoints {
            assert!((w.x - x0).abs() < 1e-9);
            assert!((w.psi - FRAC_PI_2).abs() < 1e-9);
        }
        let expected = 20.0 + 2.0 * m.core_half + 15.0;
        assert!((r.length() - expected).abs() < 1e-6);
        for pair in r.s.windows(2) {
            assert!(pair[1] - pair[0] <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn right_turn_shorter_than_left() {
        let m = map();
        let right = m.plan_route(&incoming(Region::Lower, 1, 20.0), &outgoing(Region::Right, 1, 15.0)).unwrap();
        let left = m.plan_route(&incoming(Region::Lower, 0, 20.0), &outgoing(Region::Left, 0, 15.0)).unwrap();
        assert!(right.length() < left.length());
        let end = right.goal().unwrap();
        assert!(end.psi.abs() < 0.05);
        let end = left.goal().unwrap();
        assert!((end.psi.abs() - PI).abs() < 0.05);
    }

    #[test]
    fn route_from_goal_is_empty() {
        let m = map();
        let g = outgoing(Region::Left, 0, 12.0);
        assert!(m.plan_route(&g, &g).unwrap().is_empty());
    }

    #[test]
    fn illegal_route_unreachable() {
        let m = map();
        // left turn from the outer lane has no connector
        let err = m.plan_route(&incoming(Region::Lower, 1, 20.0), &outgoing(Region::Left, 1, 15.0));
        assert!(matches!(err, Err(MapError::Unreachable { .. })));
        assert!(m.plan_route(&incoming(Region::Lower, 5, 20.0), &outgoing(Region::Left, 0, 15.0)).is_err());
    }

    #[test]
    fn adjacency_and_fallback() {
        let m = map();
        let inner = m.pose(&incoming(Region::Lower, 0, 10.0));
        assert!(m.adjacent_waypoint(&inner, -1).is_none());
        let right = m.adjacent_waypoint(&inner, 1).unwrap();
        assert!((right.x - m.pose(&incoming(Region::Lower, 1, 10.0)).x).abs() < 1e-9);
        assert!(m.adjacent_waypoint(&right, 1).is_none());
        // inside the core there is no lane
        assert!(m.adjacent_waypoint(&Waypoint { x: 1.75, y: 0.0, psi: FRAC_PI_2 }, 1).is_none());
        let single = RoadMap::new(MapConfig::single_lane()).unwrap();
        let wp = single.pose(&incoming(Region::Lower, 0, 10.0));
        assert!(single.adjacent_waypoint(&wp, 1).is_none());
        assert!(single.adjacent_waypoint(&wp, -1).is_none());
    }

    #[test]
    fn drivable_area() {
        let m = map();
        assert!(m.is_drivable(0.0, 0.0));
        assert!(m.is_drivable(3.0, -30.0));
        assert!(!m.is_drivable(20.0, -30.0));
        assert!(!m.is_drivable(3.0, -(m.core_half + 41.0)));
    }

    #[test]
    fn invalid_maps_rejected() {
        assert!(RoadMap::new(MapConfig { lanes_per_direction: 3, ..MapConfig::default() }).is_err());
        assert!(RoadMap::new(MapConfig { lane_width: -1.0, ..MapConfig::default() }).is_err());
    }
}
