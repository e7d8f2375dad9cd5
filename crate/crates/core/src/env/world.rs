//! Episode state, the physical step and the decision-level environment loop.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geometry::{rects_overlap, OrientedRect};
use super::map::{LaneDirection, LanePosition, MapConfig, MapError, Region, RoadMap, Route, TaskType, Waypoint};
use super::observation::{decode_action, waypoint_window, MultiDiscreteAction, ObservationMatrix, RouteCursor, WINDOW};
use super::reward::{n_pcp, reward, RewardConfig, RewardContext, StepEvents};
use super::traffic::{advance_sv, assign_conflicts, spawn_svs, sv_policy_step, SvAgent, TrafficConfig, VehicleId, VehicleSnapshot};
use crate::bandit::CurriculumIndex;
use crate::mpc::{IntermediateReference, MpcConfig, MpcError, TrackingMpc};
use crate::vehicle::{step, ControlInput, VehicleParams, VehicleState};
use crate::wrap_angle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Controller(#[from] MpcError),
    #[error("curriculum ({cluster}, {arm}) outside {max_sv} vehicles x 3 tasks")]
    InvalidCurriculum { cluster: usize, arm: usize, max_sv: usize },
    #[error("step called after the episode ended")]
    EpisodeOver,
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub map: MapConfig,
    pub traffic: TrafficConfig,
    pub reward: RewardConfig,
    pub vehicle: VehicleParams<f64>,
    pub dt: f64,
    /// Simulation steps before a timeout.
    pub max_steps: usize,
    /// Simulation steps per policy decision.
    pub decision_interval: usize,
    pub n_sv_max: usize,
    pub goal_tolerance: f64,
    pub heading_tolerance: f64,
    pub ev_length: f64,
    pub ev_width: f64,
    pub ev_offset_min: f64,
    pub ev_offset_max: f64,
    pub goal_offset_min: f64,
    pub goal_offset_max: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            map: MapConfig::default(),
            traffic: TrafficConfig::default(),
            reward: RewardConfig::default(),
            vehicle: VehicleParams::default(),
            dt: 0.1,
            max_steps: 300,
            decision_interval: 5,
            n_sv_max: 3,
            goal_tolerance: 2.0,
            heading_tolerance: 0.3,
            ev_length: 4.7,
            ev_width: 1.85,
            ev_offset_min: 8.0,
            ev_offset_max: 25.0,
            goal_offset_min: 8.0,
            goal_offset_max: 20.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.into()));
        if !(self.dt > 0.0) || self.max_steps == 0 || self.decision_interval == 0 {
            return bad("dt, max_steps and decision_interval must be positive");
        }
        if !(self.ev_offset_min <= self.ev_offset_max && self.goal_offset_min <= self.goal_offset_max) {
            return bad("offset ranges are empty");
        }
        if self.ev_offset_max > self.map.arm_length || self.goal_offset_max > self.map.arm_length {
            return bad("offsets exceed the arm length");
        }
        if !self.vehicle.is_valid() {
            return bad("vehicle parameters out of range");
        }
        RoadMap::new(self.map.clone())?;
        Ok(())
    }
}

/// Ego start, task and goal of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub ev_start: LanePosition,
    pub task: TaskType,
    pub goal_lane: LanePosition,
    pub goal: Waypoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    Success,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub terminal_kind: TerminalKind,
    /// Simulation steps executed.
    pub steps: usize,
    pub total_reward: f64,
    pub final_goal_distance: f64,
    /// The collision-class failure came from leaving the road.
    pub offroad: bool,
}

impl EpisodeOutcome {
    pub fn from_events(events: &StepEvents, steps: usize, total_reward: f64, final_goal_distance: f64) -> Option<Self> {
        let terminal_kind = if events.collision || events.offroad {
            TerminalKind::Collision
        } else if events.success {
            TerminalKind::Success
        } else if events.timeout {
            TerminalKind::Timeout
        } else {
            return None;
        };
        Some(Self { terminal_kind, steps, total_reward, final_goal_distance, offroad: events.offroad })
    }
}

/// Physical state of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub map: RoadMap,
    pub curriculum: CurriculumIndex,
    pub spec: TaskSpec,
    pub ev: VehicleState<f64>,
    pub route: Route,
    pub cursor: RouteCursor,
    pub svs: Vec<SvAgent>,
    pub n_pcp: u32,
    pub steps: usize,
    pub done: bool,
}

impl World {
    pub fn reset<R: Rng + ?Sized>(config: &EnvConfig, curriculum: CurriculumIndex, rng: &mut R) -> Result<Self, EnvError> {
        let map = RoadMap::new(config.map.clone())?;
        let task = TaskType::from_index(curriculum.arm);
        let (Some(task), true) = (task, curriculum.cluster <= config.n_sv_max) else {
            return Err(EnvError::InvalidCurriculum {
                cluster: curriculum.cluster,
                arm: curriculum.arm,
                max_sv: config.n_sv_max,
            });
        };
        let lanes = map.legal_lanes(task);
        let lane = lanes[rng.gen_range(0..lanes.len())];
        let ev_start = LanePosition {
            region: Region::Lower,
            direction: LaneDirection::Incoming,
            lane,
            offset: rng.gen_range(config.ev_offset_min..=config.ev_offset_max),
        };
        let goal_lane = LanePosition {
            region: Region::Lower.target_of(task),
            direction: LaneDirection::Outgoing,
            lane,
            offset: rng.gen_range(config.goal_offset_min..=config.goal_offset_max),
        };
        let route = map.plan_route(&ev_start, &goal_lane)?;
        let goal = map.pose(&goal_lane);
        let p = map.pose(&ev_start);
        let ev = VehicleState::new(p.x, p.y, 0.0, p.psi);

        let mut svs = spawn_svs(&map, curriculum.cluster, &[(ev.x, ev.y)], &config.traffic, rng);
        assign_conflicts(&map, &mut svs, &route, config.traffic.conflict_radius);
        let origins: Vec<Region> = svs.iter().map(|s| s.origin).collect();
        let n_pcp = n_pcp(task, &origins).expect("surrounding vehicles never spawn on the ego arm");

        let mut cursor = RouteCursor::default();
        cursor.advance(&route, ev.x, ev.y);
        Ok(Self {
            map,
            curriculum,
            spec: TaskSpec { ev_start, task, goal_lane, goal },
            ev,
            route,
            cursor,
            svs,
            n_pcp,
            steps: 0,
            done: false,
        })
    }

    pub fn ev_footprint(&self, config: &EnvConfig) -> OrientedRect {
        OrientedRect { x: self.ev.x, y: self.ev.y, psi: self.ev.psi, length: config.ev_length, width: config.ev_width }
    }

    pub fn goal_distance(&self) -> f64 {
        self.ev.distance_to(self.spec.goal.x, self.spec.goal.y)
    }

    pub fn window(&self) -> [Waypoint; WINDOW] {
        waypoint_window(&self.route, &self.cursor)
    }

    pub fn observe(&self, n_sv_max: usize) -> ObservationMatrix {
        let svs: Vec<Option<VehicleState<f64>>> = self.svs.iter().map(|s| s.active.then_some(s.state)).collect();
        ObservationMatrix::build(&self.ev, &self.spec.goal, &svs, n_sv_max)
    }

    fn snapshots(&self) -> Vec<VehicleSnapshot> {
        let mut v = Vec::with_capacity(self.svs.len() + 1);
        v.push(VehicleSnapshot { id: VehicleId::Ev, state: self.ev, progress: self.cursor.s, active: true });
        v.extend(self.svs.iter().enumerate().map(|(i, s)| s.snapshot(i)));
        v
    }

    /// Terminal events of the current state, keeping only the highest-priority one.
    pub fn detect_events(&self, config: &EnvConfig) -> StepEvents {
        let ev_rect = self.ev_footprint(config);
        let collision = self.svs.iter().filter(|s| s.active).any(|s| {
            let r = OrientedRect { x: s.state.x, y: s.state.y, psi: s.state.psi, length: config.ev_length, width: config.ev_width };
            rects_overlap(&ev_rect, &r)
        });
        let mut e = StepEvents::default();
        if collision {
            e.collision = true;
        } else if !self.map.is_drivable(self.ev.x, self.ev.y) {
            e.offroad = true;
        } else if self.goal_distance() <= config.goal_tolerance
            && wrap_angle(self.ev.psi - self.spec.goal.psi).abs() <= config.heading_tolerance
        {
            e.success = true;
        } else if self.steps >= config.max_steps {
            e.timeout = true;
        }
        e
    }

    /// Advances the ego vehicle under `u` and all surrounding vehicles under
    /// their scripted policies by one simulation step.
    pub fn step(&mut self, config: &EnvConfig, u: &ControlInput<f64>) -> Result<StepEvents, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let snaps = self.snapshots();
        let controls: Vec<ControlInput<f64>> = (0..self.svs.len())
            .map(|i| {
                if self.svs[i].active {
                    sv_policy_step(&mut self.svs[i], i, &snaps, &config.vehicle, &config.traffic)
                } else {
                    ControlInput::zero()
                }
            })
            .collect();
        let u = config.vehicle.clamp_control(*u);
        self.ev = step(&self.ev, &u, &config.vehicle, config.dt);
        for (sv, c) in self.svs.iter_mut().zip(&controls) {
            advance_sv(sv, c, &config.vehicle, config.dt);
        }
        self.cursor.advance(&self.route, self.ev.x, self.ev.y);
        self.steps += 1;
        let events = self.detect_events(config);
        self.done = events.terminal();
        Ok(events)
    }
}

/// Result of one policy decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: ObservationMatrix,
    pub reward: f64,
    pub events: StepEvents,
    pub done: bool,
    pub reference: IntermediateReference<f64>,
    pub outcome: Option<EpisodeOutcome>,
}

/// Decision-level environment: each action is decoded into a reference that
/// the tracking controller follows for `decision_interval` simulation steps.
#[derive(Debug, Clone)]
pub struct IntersectionEnv {
    pub config: EnvConfig,
    mpc: TrackingMpc<f64>,
    world: Option<World>,
    total_reward: f64,
}

impl IntersectionEnv {
    pub fn new(config: EnvConfig, mut mpc: MpcConfig<f64>) -> Result<Self, EnvError> {
        config.validate()?;
        mpc.dt = config.dt;
        mpc.vehicle = config.vehicle;
        Ok(Self { config, mpc: TrackingMpc::new(mpc)?, world: None, total_reward: 0.0 })
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, curriculum: CurriculumIndex, rng: &mut R) -> Result<ObservationMatrix, EnvError> {
        let world = World::reset(&self.config, curriculum, rng)?;
        let obs = world.observe(self.config.n_sv_max);
        self.world = Some(world);
        self.mpc.reset();
        self.total_reward = 0.0;
        Ok(obs)
    }

    pub fn world(&self) -> Option<&World> {
        self.world.as_ref()
    }

    pub fn observation_len(&self) -> usize {
        (self.config.n_sv_max + 1) * super::observation::FEATURES
    }

    pub fn step(&mut self, action: &MultiDiscreteAction) -> Result<Transition, EnvError> {
        let world = self.world.as_mut().ok_or(EnvError::EpisodeOver)?;
        if world.done {
            return Err(EnvError::EpisodeOver);
        }
        let decoded = decode_action(action, &world.window(), &world.map);
        let mut events = StepEvents::default();
        for _ in 0..self.config.decision_interval {
            let (u, _) = self.mpc.step(&world.ev, &decoded.reference)?;
            events = world.step(&self.config, &u)?;
            if events.terminal() {
                break;
            }
        }
        let ctx = RewardContext {
            n_sv: world.curriculum.cluster,
            n_pcp: world.n_pcp,
            goal_distance: world.goal_distance(),
            ev_speed: world.ev.v,
            lane_changed: decoded.lane_changed,
        };
        let r = reward(&self.config.reward, &events, &ctx);
        self.total_reward += r;
        let outcome = EpisodeOutcome::from_events(&events, world.steps, self.total_reward, world.goal_distance());
        Ok(Transition {
            observation: world.observe(self.config.n_sv_max),
            reward: r,
            events,
            done: events.terminal(),
            reference: decoded.reference,
            outcome,
        })
    }
}
