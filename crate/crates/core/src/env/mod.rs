//! Unsignalized four-arm intersection with scripted traffic.
//!
//! The ego vehicle always starts on the lower arm; its task (left turn, go
//! straight, right turn) and the number of surrounding vehicles are set by the
//! curriculum passed to [`World::reset`].

pub mod geometry;
pub mod map;
pub mod observation;
pub mod reward;
pub mod traffic;
pub mod world;

pub use map::{LaneDirection, LanePosition, MapConfig, MapError, Region, RoadMap, Route, TaskType, Waypoint};
pub use observation::{decode_action, waypoint_window, DecodedAction, MultiDiscreteAction, ObservationMatrix, RouteCursor};
pub use reward::{n_pcp, RewardConfig, StepEvents};
pub use traffic::{Style, SvAgent, TrafficConfig};
pub use world::{EnvConfig, EnvError, EpisodeOutcome, IntersectionEnv, TaskSpec, TerminalKind, Transition, World};
