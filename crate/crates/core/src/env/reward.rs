//! Per-decision reward and the potential-collision-point table.

use serde::{Deserialize, Serialize};

use super::map::{Region, TaskType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Success reward per surrounding vehicle.
    pub alpha1: f64,
    /// Success reward per potential collision point.
    pub alpha2: f64,
    /// Numerator of the inverse-distance failure reward.
    pub alpha3: f64,
    pub r_f_max: f64,
    /// Collision penalty per vehicle and unit speed.
    pub alpha4: f64,
    pub r_timeout: f64,
    pub r_lane_change: f64,
    pub r_live: f64,
    /// Floor on the goal distance in the failure reward, m.
    pub epsilon_d: f64,
    /// Extra penalty for leaving the drivable area.
    pub r_offroad: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 0.5,
            alpha3: 10.0,
            r_f_max: 5.0,
            alpha4: -0.5,
            r_timeout: -5.0,
            r_lane_change: -1.0,
            r_live: -0.1,
            epsilon_d: 0.5,
            r_offroad: -10.0,
        }
    }
}

/// Potential collision points between the ego task and one SV arriving from `origin`.
pub fn collision_points(task: TaskType, origin: Region) -> Option<u32> {
    let row = match origin {
        Region::Upper => [2, 1, 1],
        Region::Left => [2, 2, 1],
        Region::Right => [2, 3, 0],
        Region::Lower => return None,
    };
    Some(row[task.index()])
}

/// Sum of table entries over the SV origins; `None` for an origin outside the table.
pub fn n_pcp(task: TaskType, origins: &[Region]) -> Option<u32> {
    origins.iter().map(|&o| collision_points(task, o)).sum()
}

/// Terminal events of one decision step, in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepEvents {
    pub collision: bool,
    pub offroad: bool,
    pub success: bool,
    pub timeout: bool,
}

impl StepEvents {
    pub fn terminal(&self) -> bool {
        self.collision || self.offroad || self.success || self.timeout
    }
}

/// Inputs of the reward beyond the events themselves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardContext {
    pub n_sv: usize,
    pub n_pcp: u32,
    pub goal_distance: f64,
    pub ev_speed: f64,
    pub lane_changed: bool,
}

/// Reward of one decision step. The failure term is paid once, when the
/// episode ends without success.
pub fn reward(cfg: &RewardConfig, ev: &StepEvents, ctx: &RewardContext) -> f64 {
    let mut r = cfg.r_live;
    if ev.success {
        r += cfg.alpha1 * ctx.n_sv as f64 + cfg.alpha2 * ctx.n_pcp as f64;
    } else if ev.terminal() {
        let d = if ctx.goal_distance > 0.0 { ctx.goal_distance } else { cfg.epsilon_d };
        r += cfg.r_f_max.min(cfg.alpha3 / d.max(cfg.epsilon_d));
    }
    if ev.collision {
        r += cfg.alpha4 * ctx.n_sv as f64 * ctx.ev_speed;
    }
    if ev.offroad {
        r += cfg.r_offroad;
    }
    if ev.timeout {
        r += cfg.r_timeout;
    }
    if ctx.lane_changed {
        r += cfg.r_lane_change;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(n_sv: usize, n_pcp: u32, d: f64, v: f64) -> RewardContext {
        RewardContext { n_sv, n_pcp, goal_distance: d, ev_speed: v, lane_changed: false }
    }

    #[test]
    fn table_entries() {
        assert_eq!(n_pcp(TaskType::LeftTurn, &[Region::Upper]), Some(2));
        assert_eq!(n_pcp(TaskType::GoStraight, &[Region::Right]), Some(3));
        assert_eq!(n_pcp(TaskType::RightTurn, &[Region::Right]), Some(0));
        assert_eq!(n_pcp(TaskType::GoStraight, &[]), Some(0));
        assert_eq!(n_pcp(TaskType::GoStraight, &[Region::Lower]), None);
        let all: u32 = Region::SV_ORIGINS
            .iter()
            .flat_map(|&o| TaskType::ALL.iter().map(move |&t| collision_points(t, o).unwrap()))
            .sum();
        assert_eq!(all, 2 + 1 + 1 + 2 + 2 + 1 + 2 + 3);
    }

    #[test]
    fn success_reward_from_table() {
        let cfg = RewardConfig::default();
        let origins = [Region::Upper; 3];
        let pcp = n_pcp(TaskType::LeftTurn, &origins).unwrap();
        let ev = StepEvents { success: true, ..Default::default() };
        let r = reward(&cfg, &ev, &ctx(3, pcp, 0.0, 5.0));
        assert!((r - cfg.r_live - 6.0).abs() < 1e-12);
    }

    #[test]
    fn collision_at_rest_costs_only_failure_terms() {
        let cfg = RewardConfig::default();
        let ev = StepEvents { collision: true, ..Default::default() };
        let r = reward(&cfg, &ev, &ctx(2, 0, 20.0, 0.0));
        assert!((r - (cfg.r_live + 10.0 / 20.0)).abs() < 1e-12);
        let fast = reward(&cfg, &ev, &ctx(2, 0, 20.0, 6.0));
        assert!((fast - r - (-0.5 * 2.0 * 6.0)).abs() < 1e-12);
    }

    #[test]
    fn failure_reward_is_capped_and_floored() {
        let cfg = RewardConfig::default();
        let ev = StepEvents { timeout: true, ..Default::default() };
        let at_goal = reward(&cfg, &ev, &ctx(0, 0, 0.0, 0.0));
        assert!((at_goal - (cfg.r_live + cfg.r_f_max + cfg.r_timeout)).abs() < 1e-12);
        let far = reward(&cfg, &ev, &ctx(0, 0, 40.0, 0.0));
        assert!((far - (cfg.r_live + 0.25 + cfg.r_timeout)).abs() < 1e-12);
    }

    #[test]
    fn non_terminal_step() {
        let cfg = RewardConfig::default();
        let mut c = ctx(1, 1, 10.0, 3.0);
        assert_eq!(reward(&cfg, &StepEvents::default(), &c), cfg.r_live);
        c.lane_changed = true;
        assert_eq!(reward(&cfg, &StepEvents::default(), &c), cfg.r_live + cfg.r_lane_change);
    }
}
