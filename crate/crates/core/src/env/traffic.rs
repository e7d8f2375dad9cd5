//! Scripted surrounding vehicles: pure-pursuit steering, IDM car following and
//! style-gated yielding at route conflicts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::point_at;
use super::map::{LaneDirection, LanePosition, Region, RoadMap, Route, TaskType};
use crate::vehicle::{step, ControlInput, VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Aggressive,
    Moderate,
    Conservative,
}

impl Style {
    pub const ALL: [Style; 3] = [Style::Aggressive, Style::Moderate, Style::Conservative];

    /// Time separation at a conflict below which the vehicle gives way, s.
    pub fn gap_threshold(self) -> f64 {
        match self {
            Style::Aggressive => 1.0,
            Style::Moderate => 2.5,
            Style::Conservative => 4.0,
        }
    }

    fn headway(self) -> f64 {
        match self {
            Style::Aggressive => 0.8,
            Style::Moderate => 1.2,
            Style::Conservative => 1.6,
        }
    }

    fn desired_speed(self) -> f64 {
        match self {
            Style::Aggressive => 8.0,
            Style::Moderate => 6.5,
            Style::Conservative => 5.0,
        }
    }
}

/// Identity of a vehicle in the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleId {
    Ev,
    Sv(usize),
}

/// First crossing of this vehicle's route with another vehicle's route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conflict {
    pub other: VehicleId,
    /// Arc length of the crossing along this route.
    pub s_self: f64,
    /// Arc length of the crossing along the other route.
    pub s_other: f64,
}

/// Where a vehicle is and how far it has progressed along its route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSnapshot {
    pub id: VehicleId,
    pub state: VehicleState<f64>,
    pub progress: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvAgent {
    pub state: VehicleState<f64>,
    pub route: Route,
    pub style: Style,
    pub intent: TaskType,
    pub origin: Region,
    pub yielding: bool,
    /// Arc length of the vehicle's projection onto its route.
    pub progress: f64,
    /// Removed from the world once it reaches the end of its route.
    pub active: bool,
    pub conflicts: Vec<Conflict>,
    last_delta: f64,
    hint: usize,
}

/// Tuning of the scripted driver, shared by all styles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    pub spawn_offset_min: f64,
    pub spawn_offset_max: f64,
    pub spawn_speed_min: f64,
    pub spawn_speed_max: f64,
    pub min_spacing: f64,
    pub idm_accel: f64,
    pub idm_decel: f64,
    pub idm_min_gap: f64,
    pub lateral_accel: f64,
    /// Distance before a conflict where a yielding vehicle stops.
    pub stop_margin: f64,
    /// Routes closer than this inside the core are in conflict.
    pub conflict_radius: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            spawn_offset_min: 3.0,
            spawn_offset_max: 30.0,
            spawn_speed_min: 2.0,
            spawn_speed_max: 6.0,
            min_spacing: 8.0,
            idm_accel: 2.0,
            idm_decel: 3.0,
            idm_min_gap: 2.5,
            lateral_accel: 3.0,
            stop_margin: 4.0,
            conflict_radius: 2.5,
        }
    }
}

const VEHICLE_LENGTH: f64 = 4.7;
const SPAWN_RETRIES: usize = 100;

impl SvAgent {
    pub fn new(
        map: &RoadMap,
        origin: Region,
        intent: TaskType,
        lane: usize,
        offset: f64,
        speed: f64,
        style: Style,
    ) -> Result<Self, super::map::MapError> {
        let start = LanePosition { region: origin, direction: LaneDirection::Incoming, lane, offset };
        let goal = LanePosition {
            region: origin.target_of(intent),
            direction: LaneDirection::Outgoing,
            lane,
            offset: map.config.arm_length,
        };
        let route = map.plan_route(&start, &goal)?;
        let p = map.pose(&start);
        Ok(Self {
            state: VehicleState::new(p.x, p.y, speed, p.psi),
            route,
            style,
            intent,
            origin,
            yielding: false,
            progress: 0.0,
            active: true,
            conflicts: Vec::new(),
            last_delta: 0.0,
            hint: 0,
        })
    }

    pub fn snapshot(&self, index: usize) -> VehicleSnapshot {
        VehicleSnapshot { id: VehicleId::Sv(index), state: self.state, progress: self.progress, active: self.active }
    }

    fn update_progress(&mut self) {
        if let Some(p) = self.route.project(self.state.x, self.state.y, Some(self.hint)) {
            self.hint = p.segment;
            self.progress = self.progress.max(p.s);
        }
    }

    /// Smallest turning radius on the next `horizon` metres of route.
    fn min_radius_ahead(&self, horizon: f64) -> f64 {
        let wps = &self.route.waypoints;
        let mut r = f64::INFINITY;
        for i in self.hint..wps.len().saturating_sub(1) {
            if self.route.s[i] > self.progress + horizon {
                break;
            }
            let ds = self.route.s[i + 1] - self.route.s[i];
            let dpsi = crate::wrap_angle(wps[i + 1].psi - wps[i].psi).abs();
            if dpsi > 1e-6 && ds > 1e-6 {
                r = r.min(ds / dpsi);
            }
        }
        r
    }
}

/// Route crossings between `route` and `other` inside the core, as the first
/// pair of points closer than `radius`.
pub fn find_conflict(map: &RoadMap, route: &Route, other: &Route, radius: f64) -> Option<(f64, f64)> {
    let a = route.points();
    let b = other.points();
    for (i, p) in a.iter().enumerate() {
        if !map.in_core(p.0, p.1) {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (j, q) in b.iter().enumerate() {
            if !map.in_core(q.0, q.1) {
                continue;
            }
            let d = (p.0 - q.0).hypot(p.1 - q.1);
            if d < radius && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        if let Some((_, j)) = best {
            return Some((route.s[i], other.s[j]));
        }
    }
    None
}

/// Whether two routes start in the same lane of the same arm; such vehicles
/// interact through car following, not through a crossing.
fn same_entry(a: &Route, b: &Route) -> bool {
    match (a.waypoints.first(), b.waypoints.first()) {
        (Some(p), Some(q)) => {
            let dpsi = crate::wrap_angle(p.psi - q.psi).abs();
            let lateral = (-(q.x - p.x) * p.psi.sin() + (q.y - p.y) * p.psi.cos()).abs();
            dpsi < 0.1 && lateral < 1.0
        }
        _ => false,
    }
}

/// Precomputes the conflicts of every SV with the ego route and with each other.
pub fn assign_conflicts(map: &RoadMap, svs: &mut [SvAgent], ev_route: &Route, radius: f64) {
    let routes: Vec<Route> = svs.iter().map(|s| s.route.clone()).collect();
    for (i, sv) in svs.iter_mut().enumerate() {
        sv.conflicts.clear();
        if !same_entry(&sv.route, ev_route) {
            if let Some((a, b)) = find_conflict(map, &sv.route, ev_route, radius) {
                sv.conflicts.push(Conflict { other: VehicleId::Ev, s_self: a, s_other: b });
            }
        }
        for (j, r) in routes.iter().enumerate() {
            if i == j || same_entry(&sv.route, r) {
                continue;
            }
            if let Some((a, b)) = find_conflict(map, &sv.route, r, radius) {
                sv.conflicts.push(Conflict { other: VehicleId::Sv(j), s_self: a, s_other: b });
            }
        }
    }
}

/// Point `ahead` metres past the vehicle's route progress, extrapolated along
/// the final heading beyond the end of the route.
fn lookahead_point(route: &Route, s: f64) -> (f64, f64) {
    let total = route.length();
    if s <= total {
        return point_at(route.points(), &route.s, s);
    }
    let end = route.goal().expect("non-empty route");
    let extra = s - total;
    (end.x + extra * end.psi.cos(), end.y + extra * end.psi.sin())
}

/// Pure-pursuit steering. The velocity of this model points along `psi + delta`,
/// so the pursuit angle is measured from that course: the steering solves
/// `sin(delta) = (L / Ld) sin(beta - delta)`, which is monotone in `delta` and
/// is bracketed by bisection.
fn pursuit_steer(agent: &SvAgent, params: &VehicleParams<f64>) -> f64 {
    let st = &agent.state;
    let lookahead = (0.5 * st.v).max(2.5);
    let (tx, ty) = lookahead_point(&agent.route, agent.progress + lookahead);
    let dx = tx - st.x;
    let dy = ty - st.y;
    let dist = dx.hypot(dy).max(1e-3);
    let beta = crate::wrap_angle(dy.atan2(dx) - st.psi);
    let k = params.wheelbase / dist;
    let f = |d: f64| d.sin() - k * (beta - d).sin();
    let (mut lo, mut hi) = (-params.delta_max, params.delta_max);
    if f(lo) >= 0.0 {
        return lo;
    }
    if f(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn idm(v: f64, v0: f64, gap: Option<(f64, f64)>, style: Style, cfg: &TrafficConfig) -> f64 {
    let v0 = v0.max(0.1);
    let mut a = cfg.idm_accel * (1.0 - (v / v0).powi(4));
    if let Some((s, v_lead)) = gap {
        let s = s.max(0.1);
        let dv = v - v_lead;
        let s_star = cfg.idm_min_gap + (v * style.headway() + v * dv / (2.0 * (cfg.idm_accel * cfg.idm_decel).sqrt())).max(0.0);
        a -= cfg.idm_accel * (s_star / s).powi(2);
    }
    a
}

fn arrival_time(distance: f64, v: f64) -> f64 {
    distance.max(0.0) / v.max(0.5)
}

/// Longitudinal and lateral control of one surrounding vehicle.
pub fn sv_policy_step(
    agent: &mut SvAgent,
    index: usize,
    others: &[VehicleSnapshot],
    params: &VehicleParams<f64>,
    cfg: &TrafficConfig,
) -> ControlInput<f64> {
    let delta = pursuit_steer(agent, params);
    let st = agent.state;
    let v0 = agent.style.desired_speed().min((cfg.lateral_accel * agent.min_radius_ahead(12.0)).sqrt());

    // nearest vehicle ahead on the own path
    let mut leader: Option<(f64, f64)> = None;
    for o in others {
        if !o.active || o.id == VehicleId::Sv(index) {
            continue;
        }
        if let Some(p) = agent.route.project(o.state.x, o.state.y, Some(agent.hint)) {
            let ds = p.s - agent.progress;
            let heading_gap = crate::wrap_angle(o.state.psi - st.psi).abs();
            if p.distance < 1.6 && ds > 0.0 && ds < 30.0 && heading_gap < 1.2 {
                let gap = ds - VEHICLE_LENGTH;
                if leader.map_or(true, |(g, _)| gap < g) {
                    leader = Some((gap, o.state.v * heading_gap.cos()));
                }
            }
        }
    }

    // gap acceptance at route crossings
    agent.yielding = false;
    let braking = st.v * st.v / (2.0 * cfg.idm_decel);
    for c in &agent.conflicts {
        let Some(o) = others.iter().find(|o| o.id == c.other) else { continue };
        if !o.active {
            continue;
        }
        let stop_at = c.s_self - cfg.stop_margin;
        let to_stop = stop_at - agent.progress;
        if agent.progress > c.s_self || o.progress > c.s_other + VEHICLE_LENGTH {
            continue;
        }
        // too close to stop comfortably: carry on through
        if to_stop < braking && to_stop < 0.5 * cfg.stop_margin {
            continue;
        }
        if to_stop < -0.5 {
            continue;
        }
        let t_self = arrival_time(c.s_self - agent.progress, st.v);
        let t_other = arrival_time(c.s_other - o.progress, o.state.v);
        let gap = (t_other - t_self).abs();
        let must_yield = match c.other {
            VehicleId::Ev => gap < agent.style.gap_threshold(),
            // between scripted vehicles only the later arrival gives way
            VehicleId::Sv(_) => gap < agent.style.gap_threshold() && t_other < t_self,
        };
        if must_yield {
            agent.yielding = true;
            let virtual_gap = to_stop.max(0.0) + 0.1;
            if leader.map_or(true, |(g, _)| virtual_gap < g) {
                leader = Some((virtual_gap, 0.0));
            }
        }
    }

    let a = idm(st.v, v0, leader, agent.style, cfg);
    let u = params.clamp_control(ControlInput::new(a, delta));
    agent.last_delta = u.delta;
    u
}

/// Advances one SV, deactivating it at the end of its route.
pub fn advance_sv(agent: &mut SvAgent, u: &ControlInput<f64>, params: &VehicleParams<f64>, dt: f64) {
    if !agent.active {
        return;
    }
    agent.state = step(&agent.state, u, params, dt);
    agent.update_progress();
    if agent.progress >= agent.route.length() - 0.5 {
        agent.active = false;
    }
}

/// Spawns `count` SVs among the three non-ego arms with random style, intent
/// and offsets, keeping `min_spacing` from each other and from `keep_clear`.
pub fn spawn_svs<R: Rng + ?Sized>(
    map: &RoadMap,
    count: usize,
    keep_clear: &[(f64, f64)],
    cfg: &TrafficConfig,
    rng: &mut R,
) -> Vec<SvAgent> {
    let hi = cfg.spawn_offset_max.min(map.config.arm_length - 1.0).max(cfg.spawn_offset_min);
    let picks: Vec<(Region, TaskType, Style, usize)> = (0..count)
        .map(|_| {
            let origin = Region::SV_ORIGINS[rng.gen_range(0..3)];
            let intent = TaskType::ALL[rng.gen_range(0..3)];
            let style = Style::ALL[rng.gen_range(0..3)];
            let lanes = map.legal_lanes(intent);
            (origin, intent, style, lanes[rng.gen_range(0..lanes.len())])
        })
        .collect();
    // a vehicle that cannot be placed after the retries restarts the placement
    // of every vehicle, since earlier offsets may have filled its lane
    'restart: loop {
        let mut placed: Vec<(f64, f64, (f64, f64))> = Vec::with_capacity(count);
        for &(origin, _, _, lane) in &picks {
            let mut ok = false;
            for _ in 0..SPAWN_RETRIES {
                let offset = rng.gen_range(cfg.spawn_offset_min..=hi);
                let speed = rng.gen_range(cfg.spawn_speed_min..=cfg.spawn_speed_max);
                let p = map.pose(&LanePosition { region: origin, direction: LaneDirection::Incoming, lane, offset });
                let clear = keep_clear
                    .iter()
                    .chain(placed.iter().map(|(_, _, xy)| xy))
                    .all(|&(x, y)| (x - p.x).hypot(y - p.y) >= cfg.min_spacing);
                if clear {
                    placed.push((offset, speed, (p.x, p.y)));
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue 'restart;
            }
        }
        return picks
            .iter()
            .zip(placed)
            .map(|(&(origin, intent, style, lane), (offset, speed, _))| {
                SvAgent::new(map, origin, intent, lane, offset, speed, style).expect("legal lanes always have a route")
            })
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::map::MapConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map() -> RoadMap {
        RoadMap::new(MapConfig::default()).unwrap()
    }

    fn run_alone(mut sv: SvAgent) -> f64 {
        let params = VehicleParams::default();
        let cfg = TrafficConfig::default();
        let mut worst: f64 = 0.0;
        for _ in 0..600 {
            if !sv.active {
                break;
            }
            let snap = [sv.snapshot(0)];
            let u = sv_policy_step(&mut sv, 0, &snap, &params, &cfg);
            advance_sv(&mut sv, &u, &params, 0.1);
            if sv.active {
                let p = sv.route.project(sv.state.x, sv.state.y, None).unwrap();
                worst = worst.max(p.distance);
            }
        }
        assert!(!sv.active, "vehicle should finish its route");
        worst
    }

    #[test]
    fn tracks_route_on_empty_road() {
        let m = map();
        for origin in Region::SV_ORIGINS {
            for intent in TaskType::ALL {
                for &lane in &m.legal_lanes(intent) {
                    for style in Style::ALL {
                        let sv = SvAgent::new(&m, origin, intent, lane, 20.0, 5.0, style).unwrap();
                        let err = run_alone(sv);
                        assert!(err < 0.3, "{origin:?} {intent:?} lane {lane} {style:?}: {err}");
                    }
                }
            }
        }
    }

    fn crossing_pair(style: Style, ev_lead: f64) -> (SvAgent, VehicleSnapshot) {
        let m = map();
        // SV from the left arm going straight crosses the ego's straight route
        let mut sv = SvAgent::new(&m, Region::Left, TaskType::GoStraight, 0, 20.0, 5.0, style).unwrap();
        let ev_route = m
            .plan_route(
                &LanePosition { region: Region::Lower, direction: LaneDirection::Incoming, lane: 0, offset: 20.0 },
                &LanePosition { region: Region::Upper, direction: LaneDirection::Outgoing, lane: 0, offset: 20.0 },
            )
            .unwrap();
        let mut svs = vec![sv.clone()];
        assign_conflicts(&m, &mut svs, &ev_route, 2.5);
        sv.conflicts = svs[0].conflicts.clone();
        let c = sv.conflicts[0];
        // place the EV so it reaches the crossing `ev_lead` seconds before the SV
        let t_sv = (c.s_self - sv.progress) / sv.state.v;
        let ev_v = 5.0;
        let ev_s = c.s_other - ev_v * (t_sv - ev_lead);
        let (x, y) = point_at(ev_route.points(), &ev_route.s, ev_s);
        let ev = VehicleSnapshot {
            id: VehicleId::Ev,
            state: VehicleState::new(x, y, ev_v, std::f64::consts::FRAC_PI_2),
            progress: ev_s,
            active: true,
        };
        (sv, ev)
    }

    #[test]
    fn conservative_yields_and_aggressive_does_not() {
        let params = VehicleParams::default();
        let cfg = TrafficConfig::default();
        let (mut sv, ev) = crossing_pair(Style::Conservative, 2.0);
        let snaps = [ev, sv.snapshot(0)];
        let u = sv_policy_step(&mut sv, 0, &snaps, &params, &cfg);
        assert!(sv.yielding);
        assert!(u.a < 0.0);

        let (mut sv, ev) = crossing_pair(Style::Aggressive, 2.0);
        let snaps = [ev, sv.snapshot(0)];
        sv_policy_step(&mut sv, 0, &snaps, &params, &cfg);
        assert!(!sv.yielding);
    }

    #[test]
    fn spawn_respects_spacing_and_legality() {
        let m = map();
        let cfg = TrafficConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let svs = spawn_svs(&m, 3, &[(0.0, -30.0)], &cfg, &mut rng);
            assert_eq!(svs.len(), 3);
            for (i, a) in svs.iter().enumerate() {
                assert_ne!(a.origin, Region::Lower);
                assert!(m.legal_lanes(a.intent).contains(&m.lane_at(a.state.x, a.state.y, a.state.psi).unwrap().lane));
                for b in &svs[i + 1..] {
                    assert!(a.state.distance_to(b.state.x, b.state.y) >= cfg.min_spacing);
                }
            }
        }
    }
}
